//! Finite sublinear-expectation spaces and coherent risk measures.
//!
//! A scenario space is a finite outcome set together with a set of candidate
//! probability vectors Q. It induces the robust (sublinear) expectation
//!
//! ```text
//! E^[X] = max_{q in Q} sum_i q_i X_i
//! ```
//!
//! which is monotone, constant preserving, subadditive and positively
//! homogeneous. The associated coherent risk measure is rho(X) = E^[-X].
//! `represent` goes the other way: given black-box access to a sublinear
//! functional it recovers a representing measure set by linear programming.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PortableRng;

/// Tolerance for validating probability vectors.
pub const MEASURE_TOL: f64 = 1e-12;

/// A finite-outcome sublinear expectation: max over explicit probability vectors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioSpace {
    pub n_outcomes: usize,
    pub measures: Vec<Vec<f64>>,
}

/// A random variable on the space: one value per outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomVariable(pub Vec<f64>);

impl RandomVariable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("random variable".into()));
        }
        Ok(Self(values))
    }

    pub fn constant(c: f64, n: usize) -> Self {
        Self(vec![c; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Output of [`risk_measure`]: required capital and acceptability.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RiskReport {
    /// Minimal capital m making X + m acceptable: rho(X) = E^[-X].
    pub rho: f64,
    /// Whether the position is acceptable as is (rho <= 0).
    pub acceptable: bool,
}

/// Worst violation found per sublinear-expectation axiom.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct AxiomReport {
    pub monotonicity: f64,
    pub constant_preserving: f64,
    pub subadditivity: f64,
    pub positive_homogeneity: f64,
    pub convexity: f64,
    pub cash_translatability: f64,
}

impl AxiomReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.monotonicity,
            self.constant_preserving,
            self.subadditivity,
            self.positive_homogeneity,
            self.convexity,
            self.cash_translatability,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl ScenarioSpace {
    /// Validated constructor: every measure must be a probability vector.
    pub fn new(n_outcomes: usize, measures: Vec<Vec<f64>>) -> Result<Self> {
        let space = Self::new_unchecked(n_outcomes, measures);
        space.validate()?;
        Ok(space)
    }

    /// Constructor without validation, for deliberately corrupted inputs in
    /// diagnostics and tests.
    pub fn new_unchecked(n_outcomes: usize, measures: Vec<Vec<f64>>) -> Self {
        Self {
            n_outcomes,
            measures,
        }
    }

    /// Single linear expectation.
    pub fn single(q: Vec<f64>) -> Result<Self> {
        Self::new(q.len(), vec![q])
    }

    pub fn validate(&self) -> Result<()> {
        if self.measures.is_empty() {
            return Err(Error::EmptyMeasureSet);
        }
        if self.n_outcomes == 0 {
            return Err(Error::InvalidParameter("n_outcomes must be positive".into()));
        }
        for (k, q) in self.measures.iter().enumerate() {
            if q.len() != self.n_outcomes {
                return Err(Error::DimensionMismatch {
                    expected: self.n_outcomes,
                    got: q.len(),
                });
            }
            if q.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite(format!("measure {k}")));
            }
            if let Some(p) = q.iter().find(|p| **p < -MEASURE_TOL) {
                return Err(Error::InvalidMeasure(format!(
                    "measure {k} has negative entry {p}"
                )));
            }
            let total: f64 = q.iter().sum();
            if (total - 1.0).abs() > MEASURE_TOL * self.n_outcomes.max(1) as f64 {
                return Err(Error::InvalidMeasure(format!(
                    "measure {k} sums to {total}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parse and validate from the `{"n_outcomes": .., "measures": [[..]]}` schema.
    pub fn from_json(s: &str) -> Result<Self> {
        let space: Self = serde_json::from_str(s)?;
        space.validate()?;
        Ok(space)
    }
}

/// The robust expectation `E^[X] = max_q E_q[X]`.
pub fn evaluate(space: &ScenarioSpace, x: &RandomVariable) -> Result<f64> {
    Ok(evaluate_with_witness(space, x)?.0)
}

/// As [`evaluate`], also returning the lowest-index maximizing measure.
pub fn evaluate_with_witness(space: &ScenarioSpace, x: &RandomVariable) -> Result<(f64, usize)> {
    if space.measures.is_empty() {
        return Err(Error::EmptyMeasureSet);
    }
    if x.len() != space.n_outcomes {
        return Err(Error::DimensionMismatch {
            expected: space.n_outcomes,
            got: x.len(),
        });
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (k, q) in space.measures.iter().enumerate() {
        let v: f64 = q.iter().zip(&x.0).map(|(p, xi)| p * xi).sum();
        if v > best {
            best = v;
            arg = k;
        }
    }
    Ok((best, arg))
}

/// Coherent risk measure rho(X) = E^[-X]; the position is acceptable iff rho <= 0.
pub fn risk_measure(space: &ScenarioSpace, x: &RandomVariable) -> Result<RiskReport> {
    let neg = RandomVariable(x.0.iter().map(|v| -v).collect());
    let rho = evaluate(space, &neg)?;
    Ok(RiskReport {
        rho,
        acceptable: rho <= 0.0,
    })
}

/// Sample-based check of the sublinear-expectation axioms (a)-(d) plus the
/// derived convexity and cash-translatability properties.
///
/// Besides random pairs, the monotonicity probe includes the signed unit
/// vectors, which pin down measures with negative entries deterministically.
pub fn check_axioms(space: &ScenarioSpace, sample_count: usize, rng_seed: u64) -> Result<AxiomReport> {
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    let n = space.n_outcomes;
    let mut rng = PortableRng::new(rng_seed);
    let mut report = AxiomReport::default();

    let ev = |vals: &[f64]| -> Result<f64> { evaluate(space, &RandomVariable(vals.to_vec())) };

    // Deterministic monotonicity probes: 0 >= -e_i and e_i >= 0.
    for i in 0..n {
        let mut down = vec![0.0; n];
        down[i] = -1.0;
        let e_down = ev(&down)?;
        report.monotonicity = report.monotonicity.max(e_down - ev(&vec![0.0; n])?);
        let mut up = vec![0.0; n];
        up[i] = 1.0;
        report.monotonicity = report.monotonicity.max(ev(&vec![0.0; n])? - ev(&up)?);
    }

    for _ in 0..sample_count {
        let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
        let lambda = rng.uniform_in(0.0, 3.0);
        let c = rng.uniform_in(-2.0, 2.0);
        let alpha = rng.uniform();

        let ex = ev(&x)?;
        let ey = ev(&y)?;

        // (a) X >= Y pointwise => E^[X] >= E^[Y]; force X >= Y with a shift.
        let gap: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 1.0)).collect();
        let above: Vec<f64> = x.iter().zip(&gap).map(|(a, g)| a + g).collect();
        report.monotonicity = report.monotonicity.max(ex - ev(&above)?);

        // (b) E^[c] = c.
        report.constant_preserving = report
            .constant_preserving
            .max((ev(&vec![c; n])? - c).abs());

        // (c) E^[X + Y] <= E^[X] + E^[Y].
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        report.subadditivity = report.subadditivity.max(ev(&sum)? - ex - ey);

        // (d) E^[lambda X] = lambda E^[X], lambda >= 0.
        let scaled: Vec<f64> = x.iter().map(|a| lambda * a).collect();
        report.positive_homogeneity = report
            .positive_homogeneity
            .max((ev(&scaled)? - lambda * ex).abs());

        // (e) convexity in alpha.
        let mix: Vec<f64> = x
            .iter()
            .zip(&y)
            .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
            .collect();
        report.convexity = report
            .convexity
            .max(ev(&mix)? - alpha * ex - (1.0 - alpha) * ey);

        // (f) E^[X + c] = E^[X] + c.
        let shifted: Vec<f64> = x.iter().map(|a| a + c).collect();
        report.cash_translatability = report
            .cash_translatability
            .max((ev(&shifted)? - ex - c).abs());
    }
    Ok(report)
}

/// Recover a representing measure set for a sublinear functional given as a
/// black box on R^n.
///
/// Two mechanisms per sampled direction X:
///
/// * the LP  max q.X  over the simplex subject to q.X_j <= oracle(X_j) for
///   every sampled X_j certifies sublinearity (for a sublinear oracle its
///   optimum equals oracle(X); a strictly smaller optimum or an infeasible
///   program exposes a violated axiom);
/// * the supporting measure itself is the gradient of the positively
///   homogeneous oracle at X, estimated by central differences. At smooth
///   points of a max-of-linear functional the difference quotient is exact,
///   and Euler's identity q.X = oracle(X) is used to reject directions that
///   straddle a kink.
///
/// The returned space reproduces the oracle on the sampled directions and
/// never exceeds it elsewhere (every recovered measure lies in the true
/// representing set).
pub fn represent<F: Fn(&[f64]) -> f64>(
    oracle: F,
    n: usize,
    direction_count: usize,
    rng_seed: u64,
) -> Result<ScenarioSpace> {
    if n == 0 || direction_count == 0 {
        return Err(Error::InvalidParameter(
            "need n >= 1 and direction_count >= 1".into(),
        ));
    }
    let mut rng = PortableRng::new(rng_seed);

    // Signed unit vectors first (they pin the coordinate ranges), then random
    // Gaussian directions.
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(direction_count + 2 * n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        directions.push(e.clone());
        e[i] = -1.0;
        directions.push(e);
    }
    for _ in 0..direction_count {
        directions.push((0..n).map(|_| rng.standard_normal()).collect());
    }

    let values: Vec<f64> = directions.iter().map(|d| oracle(d)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("oracle value".into()));
    }

    let mut measures: Vec<Vec<f64>> = Vec::new();
    for (dir, &val) in directions.iter().zip(&values) {
        let (_, lp_val) = support_lp(dir, &directions, &values)?;
        if lp_val < val - 1e-7 {
            return Err(Error::NotSublinear(format!(
                "supporting LP reaches {lp_val}, oracle says {val}"
            )));
        }
        let Some(q) = supporting_gradient(&oracle, dir, val, n) else {
            continue; // kink direction; neighbours recover its vertices
        };
        if !measures
            .iter()
            .any(|m: &Vec<f64>| m.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-9))
        {
            measures.push(q);
        }
    }
    if measures.is_empty() {
        return Err(Error::NotSublinear(
            "no supporting measure could be extracted".into(),
        ));
    }
    let space = ScenarioSpace::new(n, measures)?;

    // The recovered set must reproduce the oracle on every sampled direction.
    for (dir, &val) in directions.iter().zip(&values) {
        let got = evaluate(&space, &RandomVariable(dir.clone()))?;
        if (got - val).abs() > 1e-8 * (1.0 + val.abs()) {
            return Err(Error::NotSublinear(format!(
                "recovered space evaluates {got} against oracle {val} on a sampled direction"
            )));
        }
    }
    Ok(space)
}

/// Central-difference gradient of the oracle at `dir`, validated as a
/// probability vector supporting the oracle value; `None` when the direction
/// straddles a kink.
fn supporting_gradient<F: Fn(&[f64]) -> f64>(
    oracle: &F,
    dir: &[f64],
    val: f64,
    n: usize,
) -> Option<Vec<f64>> {
    let scale = dir.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let eps = 1e-6 * scale;
    let mut probe = dir.to_vec();
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        probe[i] = dir[i] + eps;
        let up = oracle(&probe);
        probe[i] = dir[i] - eps;
        let down = oracle(&probe);
        probe[i] = dir[i];
        q.push((up - down) / (2.0 * eps));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || q.iter().any(|p| *p < -1e-6 || !p.is_finite()) {
        return None;
    }
    let support: f64 = q.iter().zip(dir).map(|(p, x)| p * x).sum();
    if (support - val).abs() > 1e-6 * (1.0 + val.abs()) {
        return None;
    }
    // Clean round-off so the result validates strictly.
    let mut q: Vec<f64> = q.iter().map(|p| p.max(0.0)).collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|p| *p /= s);
    Some(q)
}

/// max q.objective s.t. q in simplex, q.dir_j <= val_j for all j.
fn support_lp(
    objective: &[f64],
    directions: &[Vec<f64>],
    values: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = objective
        .iter()
        .map(|&c| problem.add_var(c, (0.0, f64::INFINITY)))
        .collect();
    problem.add_constraint(
        vars.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
        ComparisonOp::Eq,
        1.0,
    );
    for (dir, &val) in directions.iter().zip(values) {
        problem.add_constraint(
            vars.iter().zip(dir).map(|(&v, &c)| (v, c)).collect::<Vec<_>>(),
            ComparisonOp::Le,
            val,
        );
    }
    match problem.solve() {
        Ok(solution) => {
            let q: Vec<f64> = vars.iter().map(|&v| solution[v]).collect();
            Ok((q, solution.objective()))
        }
        Err(e) => Err(Error::NotSublinear(format!("LP has no solution: {e}"))),
    }
}

/// Product of two scenario spaces with the second factor independent of the
/// first: the functional is the nested evaluation E^1[x -> E^2[phi(x, .)]].
///
/// The product is kept as a composite evaluator; flattening to a single
/// measure set would lose the x-dependent choice of inner measure.
#[derive(Clone, Debug)]
pub struct ProductSpace {
    pub first: ScenarioSpace,
    pub second: ScenarioSpace,
}

pub fn product_space(first: &ScenarioSpace, second: &ScenarioSpace) -> Result<ProductSpace> {
    first.validate()?;
    second.validate()?;
    Ok(ProductSpace {
        first: first.clone(),
        second: second.clone(),
    })
}

impl ProductSpace {
    /// E^[phi(X, Y)] with phi given pointwise on Omega_1 x Omega_2.
    pub fn evaluate<F: Fn(usize, usize) -> f64>(&self, phi: F) -> Result<f64> {
        let n1 = self.first.n_outcomes;
        let n2 = self.second.n_outcomes;
        let mut inner = Vec::with_capacity(n1);
        for i in 0..n1 {
            let row: Vec<f64> = (0..n2).map(|j| phi(i, j)).collect();
            inner.push(evaluate(&self.second, &RandomVariable(row))?);
        }
        evaluate(&self.first, &RandomVariable(inner))
    }
}

/// The ball-drawing example space: outcomes {-1, 0, 1} with measures
/// (p/2, 1-p, p/2) for p on a uniform grid over [p_lo, p_hi].
pub fn ball_example_space(p_lo: f64, p_hi: f64, count: usize) -> Result<ScenarioSpace> {
    if count < 1 || !(0.0..=1.0).contains(&p_lo) || !(0.0..=1.0).contains(&p_hi) || p_lo > p_hi {
        return Err(Error::InvalidParameter("bad ball-example parameters".into()));
    }
    let measures = (0..count)
        .map(|k| {
            let p = if count == 1 {
                p_lo
            } else {
                p_lo + (p_hi - p_lo) * k as f64 / (count - 1) as f64
            };
            vec![p / 2.0, 1.0 - p, p / 2.0]
        })
        .collect();
    ScenarioSpace::new(3, measures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ball() -> ScenarioSpace {
        ball_example_space(0.4, 0.5, 11).unwrap()
    }

    #[test]
    fn constant_is_preserved() {
        let space = ball();
        let x = RandomVariable::constant(2.5, 3);
        assert_abs_diff_eq!(evaluate(&space, &x).unwrap(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn ball_example_values() {
        let space = ball();
        // xi^2 = (1, 0, 1): E^ = sup_p p = 0.5.
        let sq = RandomVariable(vec![1.0, 0.0, 1.0]);
        assert_abs_diff_eq!(evaluate(&space, &sq).unwrap(), 0.5, epsilon = 1e-15);
        // xi = (-1, 0, 1): zero mean both ways.
        let xi = RandomVariable(vec![-1.0, 0.0, 1.0]);
        let neg = RandomVariable(vec![1.0, 0.0, -1.0]);
        assert_abs_diff_eq!(evaluate(&space, &xi).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(evaluate(&space, &neg).unwrap(), 0.0, epsilon = 1e-15);
        // -E^[-xi^2] = inf_p p = 0.4.
        let nsq = RandomVariable(vec![-1.0, 0.0, -1.0]);
        assert_abs_diff_eq!(-evaluate(&space, &nsq).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn witness_is_lowest_index_maximizer() {
        let space =
            ScenarioSpace::new(2, vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let x = RandomVariable(vec![1.0, 1.0]);
        let (v, k) = evaluate_with_witness(&space, &x).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        assert_eq!(k, 0);
    }

    #[test]
    fn errors_on_bad_input() {
        let space = ball();
        let short = RandomVariable(vec![1.0]);
        assert!(matches!(
            evaluate(&space, &short),
            Err(Error::DimensionMismatch { .. })
        ));
        let empty = ScenarioSpace::new_unchecked(3, vec![]);
        assert!(matches!(
            evaluate(&empty, &RandomVariable(vec![0.0; 3])),
            Err(Error::EmptyMeasureSet)
        ));
        assert!(ScenarioSpace::new(2, vec![vec![0.7, 0.7]]).is_err());
        assert!(ScenarioSpace::new(2, vec![vec![1.2, -0.2]]).is_err());
    }

    #[test]
    fn risk_measure_values() {
        let space = ball();
        let one = RandomVariable::constant(1.0, 3);
        let report = risk_measure(&space, &one).unwrap();
        assert_abs_diff_eq!(report.rho, -1.0, epsilon = 1e-15);
        assert!(report.acceptable);

        let zero = RandomVariable::constant(0.0, 3);
        assert_abs_diff_eq!(risk_measure(&space, &zero).unwrap().rho, 0.0, epsilon = 1e-15);

        // Position xi^2: loss -xi^2 is acceptable, rho = -0.4.
        let sq = RandomVariable(vec![1.0, 0.0, 1.0]);
        let report = risk_measure(&space, &sq).unwrap();
        assert_abs_diff_eq!(report.rho, -0.4, epsilon = 1e-15);
        assert!(report.acceptable);
    }

    #[test]
    fn risk_measure_is_coherent() {
        // Monotone decreasing, subadditive, positively homogeneous.
        let space = ball();
        let mut rng = PortableRng::new(21);
        for _ in 0..200 {
            let x = RandomVariable((0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
            let y = RandomVariable((0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
            let lambda = rng.uniform_in(0.0, 3.0);
            let rx = risk_measure(&space, &x).unwrap().rho;
            let ry = risk_measure(&space, &y).unwrap().rho;

            let above = RandomVariable(x.0.iter().map(|v| v + 0.5).collect());
            assert!(risk_measure(&space, &above).unwrap().rho <= rx + 1e-12);

            let sum = RandomVariable(x.0.iter().zip(&y.0).map(|(a, b)| a + b).collect());
            assert!(risk_measure(&space, &sum).unwrap().rho <= rx + ry + 1e-12);

            let scaled = RandomVariable(x.0.iter().map(|v| lambda * v).collect());
            assert_abs_diff_eq!(
                risk_measure(&space, &scaled).unwrap().rho,
                lambda * rx,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rho_of_x_plus_rho_is_zero() {
        let space = ball();
        let mut rng = PortableRng::new(9);
        for _ in 0..100 {
            let x = RandomVariable((0..3).map(|_| rng.uniform_in(-3.0, 3.0)).collect());
            let rho = risk_measure(&space, &x).unwrap().rho;
            let shifted = RandomVariable(x.0.iter().map(|v| v + rho).collect());
            assert!(risk_measure(&space, &shifted).unwrap().rho.abs() <= 1e-10);
        }
    }

    #[test]
    fn axioms_hold_on_valid_space() {
        let report = check_axioms(&ball(), 1000, 7).unwrap();
        assert!(report.max_violation() <= 1e-10, "{report:?}");
    }

    #[test]
    fn corrupted_measure_is_detected() {
        let space = ScenarioSpace::new_unchecked(3, vec![vec![0.6, 0.6, -0.2]]);
        let report = check_axioms(&space, 200, 3).unwrap();
        assert!(report.monotonicity > 0.0, "{report:?}");
    }

    #[test]
    fn single_measure_space_is_additive() {
        let space = ScenarioSpace::single(vec![0.25, 0.25, 0.5]).unwrap();
        let mut rng = PortableRng::new(11);
        for _ in 0..200 {
            let x = RandomVariable((0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
            let y = RandomVariable((0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
            let sum = RandomVariable(x.0.iter().zip(&y.0).map(|(a, b)| a + b).collect());
            let lhs = evaluate(&space, &sum).unwrap();
            let rhs = evaluate(&space, &x).unwrap() + evaluate(&space, &y).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_certain_summand_is_additive() {
        // E^[X + Y] = E^[X] + E^[Y] whenever E^[Y] = -E^[-Y].
        let space = ball();
        let y = RandomVariable(vec![-1.0, 0.0, 1.0]); // mean-certain: both sides 0
        let mut rng = PortableRng::new(13);
        for _ in 0..200 {
            let x = RandomVariable((0..3).map(|_| rng.uniform_in(-2.0, 2.0)).collect());
            let sum = RandomVariable(x.0.iter().zip(&y.0).map(|(a, b)| a + b).collect());
            let lhs = evaluate(&space, &sum).unwrap();
            let rhs = evaluate(&space, &x).unwrap() + evaluate(&space, &y).unwrap();
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn represent_round_trips_known_space() {
        let known = ScenarioSpace::new(
            3,
            vec![vec![0.2, 0.3, 0.5], vec![0.6, 0.1, 0.3]],
        )
        .unwrap();
        let oracle = |x: &[f64]| evaluate(&known, &RandomVariable(x.to_vec())).unwrap();
        let recovered = represent(oracle, 3, 200, 17).unwrap();
        let mut rng = PortableRng::new(23);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let a = oracle(&x);
            let b = evaluate(&recovered, &RandomVariable(x.clone())).unwrap();
            assert!((a - b).abs() <= 1e-8, "gap {} on {:?}", a - b, x);
        }
    }

    #[test]
    fn represent_recovers_strongest_expectation_vertices() {
        // oracle(X) = max_i X_i is represented by the unit measures.
        let n = 4;
        let oracle = |x: &[f64]| x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let recovered = represent(oracle, n, 100, 5).unwrap();
        assert_eq!(recovered.measures.len(), n);
        for q in &recovered.measures {
            let ones = q.iter().filter(|p| (**p - 1.0).abs() < 1e-7).count();
            let zeros = q.iter().filter(|p| p.abs() < 1e-7).count();
            assert_eq!((ones, zeros), (1, n - 1), "{q:?}");
        }
    }

    #[test]
    fn represent_linear_oracle_gives_single_measure() {
        let q = vec![0.1, 0.2, 0.3, 0.4];
        let oracle = move |x: &[f64]| x.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        let recovered = represent(oracle, 4, 60, 2).unwrap();
        for m in &recovered.measures {
            for (a, b) in m.iter().zip([0.1, 0.2, 0.3, 0.4]) {
                assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn represent_rejects_non_sublinear_oracle() {
        // Violates constant preservation / monotonicity badly.
        let oracle = |x: &[f64]| x[0] - 1.0;
        assert!(matches!(
            represent(oracle, 3, 40, 1),
            Err(Error::NotSublinear(_))
        ));
    }

    #[test]
    fn product_space_nested_evaluation() {
        let space = ball();
        let product = product_space(&space, &space).unwrap();

        // phi(x, y) = x + y with both factors mean-certain at zero.
        let outcomes = [-1.0, 0.0, 1.0];
        let v = product.evaluate(|i, j| outcomes[i] + outcomes[j]).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);

        // E^[X Y^2] with Y independent of X: (0.5 - 0.4) * E^[X+] = 0.025.
        let v = product
            .evaluate(|i, j| outcomes[i] * outcomes[j] * outcomes[j])
            .unwrap();
        assert_abs_diff_eq!(v, 0.025, epsilon = 1e-12);

        // Reversed independence order: E^[Y X^2] evaluated as outer-Y = 0.
        let v = product
            .evaluate(|i, j| outcomes[j] * outcomes[i] * outcomes[i])
            .unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);

        // Marginal consistency: phi(x, y) = y^2.
        let v = product.evaluate(|_, j| outcomes[j] * outcomes[j]).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn scenario_space_json_round_trip() {
        let space = ball();
        let json = space.to_json().unwrap();
        let back = ScenarioSpace::from_json(&json).unwrap();
        assert_eq!(back.n_outcomes, 3);
        assert_eq!(back.measures, space.measures);
        assert!(ScenarioSpace::from_json("{\"n_outcomes\":2,\"measures\":[[2.0,-1.0]]}").is_err());
    }

    proptest! {
        #[test]
        fn sublinearity_properties_random(
            xs in proptest::collection::vec(-5.0..5.0f64, 4),
            ys in proptest::collection::vec(-5.0..5.0f64, 4),
            lambda in 0.0..4.0f64,
            c in -3.0..3.0f64,
        ) {
            let space = ScenarioSpace::new(4, vec![
                vec![0.1, 0.2, 0.3, 0.4],
                vec![0.4, 0.3, 0.2, 0.1],
                vec![0.25, 0.25, 0.25, 0.25],
            ]).unwrap();
            let x = RandomVariable(xs.clone());
            let y = RandomVariable(ys.clone());
            let ex = evaluate(&space, &x).unwrap();
            let ey = evaluate(&space, &y).unwrap();

            let sum = RandomVariable(xs.iter().zip(&ys).map(|(a, b)| a + b).collect());
            prop_assert!(evaluate(&space, &sum).unwrap() <= ex + ey + 1e-10);

            let scaled = RandomVariable(xs.iter().map(|a| lambda * a).collect());
            prop_assert!((evaluate(&space, &scaled).unwrap() - lambda * ex).abs() <= 1e-10);

            let shifted = RandomVariable(xs.iter().map(|a| a + c).collect());
            prop_assert!((evaluate(&space, &shifted).unwrap() - ex - c).abs() <= 1e-10);

            let above = RandomVariable(xs.iter().map(|a| a + 0.5).collect());
            prop_assert!(evaluate(&space, &above).unwrap() >= ex - 1e-10);
        }
    }
}
