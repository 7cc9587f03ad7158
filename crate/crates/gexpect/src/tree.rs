//! Exact discrete-time worst-case expectations by dynamic programming.
//!
//! A tree is built from a family of candidate one-step laws, all mean zero.
//! The worst-case expectation of a terminal functional is the backward
//! recursion
//!
//! ```text
//! V_j(node) = max over laws L of  sum_k p_k V_{j+1}(node + jump_k)
//! ```
//!
//! which realizes the nested (independent-increment) structure of the
//! continuous theory one step at a time. The enumerate backend keeps the
//! full observation tree and is exact; the grid backend runs the same
//! recursion on the running-sum state with linear interpolation, snapping to
//! the lattice spacing whenever all jumps are commensurable (in which case it
//! is exact as well).
//!
//! On the two-point binomial family the one-step identities
//! E^[xi dB | H] = 0 and E^[xi (dB)^2 | H] = (xi+ shi^2 - xi- slo^2) dt hold
//! exactly, which makes the discrete stochastic-integral, isometry and
//! martingale diagnostics below exact up to rounding.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::band::VolBand;
use crate::error::{Error, Result};
use crate::gnormal::{self, GNormalLaw};
use crate::grid::interp_linear;
use crate::payoff::{Payoff, ShapeHint};

/// Hard bound on enumerated observation states.
pub const ENUMERATE_BOUND: u128 = 10_000_000;

/// One candidate one-step law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Law {
    pub points: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Law {
    pub fn new(points: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        let law = Self { points, probs };
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.points.len() != self.probs.len() {
            return Err(Error::InvalidMeasure(
                "law needs matching nonempty points/probs".into(),
            ));
        }
        if self
            .points
            .iter()
            .chain(self.probs.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("law entry".into()));
        }
        if self.probs.iter().any(|p| *p < -1e-12) {
            return Err(Error::InvalidMeasure("negative probability".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 * self.probs.len() as f64 {
            return Err(Error::InvalidMeasure(format!(
                "probabilities sum to {total}"
            )));
        }
        let scale = self.points.iter().fold(1.0_f64, |m, p| m.max(p.abs()));
        let mean: f64 = self.points.iter().zip(&self.probs).map(|(x, p)| x * p).sum();
        if mean.abs() > 1e-12 * scale {
            return Err(Error::InvalidMeasure(format!(
                "law has mean {mean}; increments must be mean-certain at zero"
            )));
        }
        Ok(())
    }

    fn second_moment(&self) -> f64 {
        self.points
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| x * x * p)
            .sum()
    }
}

/// Family of candidate one-step laws.
///
/// `Atoms` laws carry absolute jump sizes; `Binomial` laws are the two-point
/// laws +-sigma sqrt(dt), materialized once the tree step is known.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IncrementFamily {
    Atoms { laws: Vec<Law> },
    Binomial { sigmas: Vec<f64> },
}

impl IncrementFamily {
    /// Two-point laws at the band edges plus `extra_mid` interior volatilities.
    pub fn binomial_from_band(band: &VolBand, extra_mid: usize) -> Self {
        let mut sigmas = vec![band.sigma_lo];
        for k in 1..=extra_mid {
            let w = k as f64 / (extra_mid + 1) as f64;
            sigmas.push(band.sigma_lo + w * (band.sigma_hi - band.sigma_lo));
        }
        sigmas.push(band.sigma_hi);
        sigmas.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        IncrementFamily::Binomial { sigmas }
    }

    /// The ball-drawing family: laws (p/2, 1-p, p/2) on {-1, 0, 1} for p on
    /// a uniform grid.
    pub fn ball(p_lo: f64, p_hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(0.0..=1.0).contains(&p_lo) || !(0.0..=1.0).contains(&p_hi) {
            return Err(Error::InvalidParameter("bad ball family parameters".into()));
        }
        let mut laws = Vec::with_capacity(count);
        for k in 0..count {
            let p = if count == 1 {
                p_lo
            } else {
                p_lo + (p_hi - p_lo) * k as f64 / (count - 1) as f64
            };
            laws.push(Law::new(vec![-1.0, 0.0, 1.0], vec![p / 2.0, 1.0 - p, p / 2.0])?);
        }
        Ok(IncrementFamily::Atoms { laws })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IncrementFamily::Atoms { laws } => {
                if laws.is_empty() {
                    return Err(Error::InvalidParameter("family has no laws".into()));
                }
                laws.iter().try_for_each(|l| l.validate())
            }
            IncrementFamily::Binomial { sigmas } => {
                if sigmas.is_empty() {
                    return Err(Error::InvalidParameter("family has no sigmas".into()));
                }
                if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return Err(Error::InvalidParameter("sigmas must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Concrete laws for a tree step of length `dt`.
    pub fn materialize(&self, dt: f64) -> Result<Vec<Law>> {
        self.validate()?;
        match self {
            IncrementFamily::Atoms { laws } => Ok(laws.clone()),
            IncrementFamily::Binomial { sigmas } => sigmas
                .iter()
                .map(|&s| {
                    let jump = s * dt.sqrt();
                    if jump == 0.0 {
                        Law::new(vec![0.0], vec![1.0])
                    } else {
                        Law::new(vec![-jump, jump], vec![0.5, 0.5])
                    }
                })
                .collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let family: Self = serde_json::from_str(s)?;
        family.validate()?;
        Ok(family)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Backend selection for the backward recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeBackend {
    /// Full observation tree; exact, bounded by [`ENUMERATE_BOUND`] states.
    Enumerate,
    /// Running-sum state on a spatial grid (`dx = 0` picks the spacing
    /// automatically, snapping to the jump lattice when possible).
    GridDp { dx: f64 },
}

/// Discrete-time worst-case expectation tree.
#[derive(Clone, Debug)]
pub struct GTree {
    pub n_steps: usize,
    pub dt: f64,
    pub family: IncrementFamily,
    pub backend: TreeBackend,
}

impl GTree {
    pub fn new(n_steps: usize, dt: f64, family: IncrementFamily, backend: TreeBackend) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("need n_steps >= 1".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("need dt > 0, got {dt}")));
        }
        family.validate()?;
        Ok(Self {
            n_steps,
            dt,
            family,
            backend,
        })
    }

    /// Volatility band implied by the family: the per-unit-time second
    /// moments of the extreme laws.
    pub fn implied_band(&self) -> Result<VolBand> {
        let laws = self.family.materialize(self.dt)?;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for law in &laws {
            let v = law.second_moment() / self.dt;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        VolBand::from_variance(lo, hi)
    }

    /// The enumerate-backend view of this tree.
    pub fn enumerated(&self) -> Result<EnumTree> {
        match self.backend {
            TreeBackend::Enumerate => EnumTree::build(self),
            TreeBackend::GridDp { .. } => Err(Error::InvalidParameter(
                "operation needs the enumerate backend".into(),
            )),
        }
    }
}

/// Fully enumerated observation tree: nodes at depth j are indexed by the
/// base-|points| encoding of the observed increment sequence.
pub struct EnumTree {
    pub n_steps: usize,
    pub dt: f64,
    /// Union of the supports of all laws, sorted.
    pub points: Vec<f64>,
    /// Per law: probability attached to each union point index.
    law_weights: Vec<Vec<(usize, f64)>>,
    band: VolBand,
}

impl EnumTree {
    fn build(tree: &GTree) -> Result<Self> {
        let laws = tree.family.materialize(tree.dt)?;
        let mut points: Vec<f64> = laws.iter().flat_map(|l| l.points.iter().copied()).collect();
        points.sort_by(f64::total_cmp);
        points.dedup_by(|a, b| {
            let scale = a.abs().max(b.abs()).max(1e-300);
            (*a - *b).abs() <= 1e-14 * scale
        });
        let states = (points.len() as u128)
            .checked_pow(tree.n_steps as u32)
            .unwrap_or(u128::MAX);
        if states > ENUMERATE_BOUND {
            return Err(Error::StateExplosion {
                states,
                bound: ENUMERATE_BOUND,
            });
        }
        let law_weights = laws
            .iter()
            .map(|law| {
                law.points
                    .iter()
                    .zip(&law.probs)
                    .map(|(x, &p)| {
                        let idx = points
                            .iter()
                            .position(|q| {
                                let scale = q.abs().max(x.abs()).max(1e-300);
                                (q - x).abs() <= 1e-14 * scale
                            })
                            .expect("law point present in union support");
                        (idx, p)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            n_steps: tree.n_steps,
            dt: tree.dt,
            points,
            law_weights,
            band: tree.implied_band()?,
        })
    }

    pub fn node_count(&self, step: usize) -> usize {
        self.points.len().pow(step as u32)
    }

    pub fn implied_band(&self) -> VolBand {
        self.band
    }

    /// Evaluate a path functional at every leaf; the callback sees the
    /// increment sequence.
    pub fn eval_paths<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> Vec<f64> {
        let np = self.points.len();
        let n = self.n_steps;
        let mut out = vec![0.0; self.node_count(n)];
        let mut path = vec![0.0; n];
        // Iterative odometer over base-np digits, depth-first order.
        for (idx, slot) in out.iter_mut().enumerate() {
            let mut rem = idx;
            for d in (0..n).rev() {
                path[d] = self.points[rem % np];
                rem /= np;
            }
            *slot = f(&path);
        }
        out
    }

    /// One backward step of the worst-case recursion.
    pub fn backward_step(&self, values: &[f64]) -> Vec<f64> {
        let np = self.points.len();
        debug_assert_eq!(values.len() % np, 0);
        let mut out = vec![0.0; values.len() / np];
        for (node, slot) in out.iter_mut().enumerate() {
            let children = &values[node * np..(node + 1) * np];
            let mut best = f64::NEG_INFINITY;
            for weights in &self.law_weights {
                let mut acc = 0.0;
                for &(idx, p) in weights {
                    acc += p * children[idx];
                }
                best = best.max(acc);
            }
            *slot = best;
        }
        out
    }

    /// Conditional worst-case expectation: carry values measurable at step
    /// `t` down to step `s`.
    pub fn conditional(&self, values_at_t: Vec<f64>, t: usize, s: usize) -> Result<Vec<f64>> {
        if t > self.n_steps || s > t {
            return Err(Error::StepOutOfRange {
                index: t.max(s),
                max: self.n_steps,
            });
        }
        if values_at_t.len() != self.node_count(t) {
            return Err(Error::DimensionMismatch {
                expected: self.node_count(t),
                got: values_at_t.len(),
            });
        }
        let mut values = values_at_t;
        for _ in s..t {
            values = self.backward_step(&values);
        }
        Ok(values)
    }

    /// Worst-case expectation of a terminal path functional.
    pub fn expectation<F: FnMut(&[f64]) -> f64>(&self, f: F) -> f64 {
        let leaves = self.eval_paths(f);
        self.conditional(leaves, self.n_steps, 0).expect("valid steps")[0]
    }
}

/// Adapted integrand: (interval index, increments observed so far) -> value.
pub type AdaptedIntegrand = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

/// Adapted simple process on the tree's partition: constant on each knot
/// interval, with values supplied by a callback that only sees the path
/// prefix up to the interval's left endpoint.
#[derive(Clone)]
pub struct SimpleProcess {
    /// Strictly increasing step indices, starting at 0 and ending at the
    /// tree's step count.
    pub knots: Vec<usize>,
    pub integrand: AdaptedIntegrand,
}

impl SimpleProcess {
    pub fn new<F: Fn(usize, &[f64]) -> f64 + Send + Sync + 'static>(
        knots: Vec<usize>,
        integrand: F,
    ) -> Self {
        Self {
            knots,
            integrand: Arc::new(integrand),
        }
    }

    /// Process constant on every tree step.
    pub fn per_step<F: Fn(usize, &[f64]) -> f64 + Send + Sync + 'static>(
        n_steps: usize,
        integrand: F,
    ) -> Self {
        Self::new((0..=n_steps).collect(), integrand)
    }

    fn validate(&self, n_steps: usize) -> Result<()> {
        let ok = self.knots.first() == Some(&0)
            && self.knots.last() == Some(&n_steps)
            && self.knots.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::PartitionMismatch(format!(
                "knots {:?} must increase from 0 to {n_steps}",
                self.knots
            )));
        }
        Ok(())
    }

    /// Value of the integrand in force at tree step `s`, given the prefix.
    fn value_at_step(&self, s: usize, prefix: &[f64]) -> f64 {
        let interval = match self.knots.binary_search(&s) {
            Ok(k) => k.min(self.knots.len() - 2),
            Err(k) => k - 1,
        };
        (self.integrand)(interval, &prefix[..self.knots[interval]])
    }
}

/// Pathwise left-point stochastic integral sum xi_j dB_j at every leaf.
pub fn discrete_ito(tree: &GTree, eta: &SimpleProcess) -> Result<Vec<f64>> {
    let enumerated = tree.enumerated()?;
    eta.validate(tree.n_steps)?;
    Ok(enumerated.eval_paths(|path| {
        let mut acc = 0.0;
        for (s, &db) in path.iter().enumerate() {
            acc += eta.value_at_step(s, path) * db;
        }
        acc
    }))
}

/// Worst-case expectation of a terminal functional of the path sum.
pub fn dp_gexpectation<F: Fn(f64) -> f64>(tree: &GTree, phi: F) -> Result<f64> {
    match tree.backend {
        TreeBackend::Enumerate => {
            let enumerated = tree.enumerated()?;
            Ok(enumerated.expectation(|path| phi(path.iter().sum())))
        }
        TreeBackend::GridDp { dx } => grid_dp_value(tree, dx, phi),
    }
}

/// Conditional worst-case expectation of a path functional at step `j`:
/// one value per observed prefix (enumerate backend).
pub fn conditional_gexp(
    tree: &GTree,
    phi: &dyn Fn(&[f64]) -> f64,
    j: usize,
) -> Result<Vec<f64>> {
    let enumerated = tree.enumerated()?;
    if j > tree.n_steps {
        return Err(Error::StepOutOfRange {
            index: j,
            max: tree.n_steps,
        });
    }
    let leaves = enumerated.eval_paths(|path| phi(path));
    enumerated.conditional(leaves, tree.n_steps, j)
}

fn lattice_spacing(jumps: &[f64]) -> Option<f64> {
    let mut base = f64::INFINITY;
    for &j in jumps {
        if j.abs() > 1e-14 {
            base = base.min(j.abs());
        }
    }
    if !base.is_finite() {
        return None;
    }
    for &j in jumps {
        let ratio = j / base;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return None;
        }
    }
    Some(base)
}

/// Backward recursion on the running-sum state.
fn grid_dp_value<F: Fn(f64) -> f64>(tree: &GTree, dx: f64, phi: F) -> Result<f64> {
    let laws = tree.family.materialize(tree.dt)?;
    let band = tree.implied_band()?;
    let jumps: Vec<f64> = laws.iter().flat_map(|l| l.points.iter().copied()).collect();
    let half_width = 8.0 * band.sigma_hi * (tree.n_steps as f64 * tree.dt).sqrt();

    let lattice = lattice_spacing(&jumps);
    let spacing = if dx > 0.0 {
        dx
    } else {
        match lattice {
            // Snap to the jump lattice when it stays affordable; then the
            // recursion needs no interpolation and is exact.
            Some(base) if half_width / base <= 2e6 => base,
            _ => {
                let min_jump = lattice.unwrap_or(band.sigma_hi * tree.dt.sqrt());
                (min_jump / 8.0).max(half_width / 2e6)
            }
        }
    };
    let on_lattice = match lattice {
        Some(base) => {
            let ratio = base / spacing;
            (ratio - ratio.round()).abs() <= 1e-9 && ratio.round() >= 1.0
        }
        None => false,
    };

    let m = (half_width / spacing).ceil() as usize;
    let n_nodes = 2 * m + 1;
    let xs: Vec<f64> = (0..n_nodes)
        .map(|i| (i as i64 - m as i64) as f64 * spacing)
        .collect();

    let mut values: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("terminal values on dp grid".into()));
    }
    let mut next = vec![0.0; n_nodes];

    // Value lookup with linear extension beyond the grid.
    let fetch = |values: &[f64], i: i64| -> f64 {
        let last = (n_nodes - 1) as i64;
        if i < 0 {
            values[0] + (values[1] - values[0]) * i as f64
        } else if i > last {
            values[n_nodes - 1] + (values[n_nodes - 1] - values[n_nodes - 2]) * (i - last) as f64
        } else {
            values[i as usize]
        }
    };

    let offsets: Vec<Vec<i64>> = laws
        .iter()
        .map(|law| {
            law.points
                .iter()
                .map(|&p| (p / spacing).round() as i64)
                .collect()
        })
        .collect();

    for _ in 0..tree.n_steps {
        for (i, slot) in next.iter_mut().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (law, offs) in laws.iter().zip(&offsets) {
                let mut acc = 0.0;
                if on_lattice {
                    for (&off, &p) in offs.iter().zip(&law.probs) {
                        acc += p * fetch(&values, i as i64 + off);
                    }
                } else {
                    for (&jump, &p) in law.points.iter().zip(&law.probs) {
                        acc += p * interp_extrap(&xs, &values, xs[i] + jump);
                    }
                }
                best = best.max(acc);
            }
            *slot = best;
        }
        std::mem::swap(&mut values, &mut next);
    }
    Ok(values[m])
}

fn interp_extrap(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    interp_linear(xs, ys, x)
}

/// Row of the central-limit convergence table.
#[derive(Clone, Debug, Serialize)]
pub struct CltRow {
    pub n: usize,
    pub value: f64,
    pub abs_error: f64,
}

/// Worst-case expectations of phi(S_n / sqrt(n)) against the band-normal
/// limit value, for each n in `n_list`.
pub fn clt_table<F: Fn(f64) -> f64 + Clone + Send + Sync + 'static>(
    family: &IncrementFamily,
    phi: F,
    n_list: &[usize],
) -> Result<Vec<CltRow>> {
    if n_list.is_empty() {
        return Err(Error::InvalidParameter("empty n list".into()));
    }
    let probe = GTree::new(1, 1.0, family.clone(), TreeBackend::Enumerate)?;
    let band = probe.implied_band()?;
    let law = GNormalLaw::new(band, 1.0)?;
    let reference = gnormal::gnormal_expect(
        &Payoff::new({
            let phi = phi.clone();
            move |x| phi(x)
        }),
        ShapeHint::General,
        &law,
        None,
    )?
    .value;

    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let tree = GTree::new(n, 1.0, family.clone(), TreeBackend::GridDp { dx: 0.0 })?;
        let scale = 1.0 / (n as f64).sqrt();
        let phi_n = phi.clone();
        let value = dp_gexpectation(&tree, move |s| phi_n(s * scale))?;
        rows.push(CltRow {
            n,
            value,
            abs_error: (value - reference).abs(),
        });
    }
    Ok(rows)
}

/// Write a CLT table as CSV with header `n,value,abs_error`.
pub fn write_clt_csv<W: Write>(rows: &[CltRow], mut out: W) -> Result<()> {
    writeln!(out, "n,value,abs_error")?;
    for row in rows {
        writeln!(out, "{},{},{}", row.n, row.value, row.abs_error)?;
    }
    Ok(())
}

/// Both sides of the stochastic-integral isometry on the tree.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct IsometryReport {
    /// E^[(integral of eta dB)^2].
    pub lhs: f64,
    /// `E^[sum of eta^2 (dB)^2]` (the `d<B>` integral on the tree).
    pub rhs: f64,
    pub gap: f64,
}

pub fn isometry_check(tree: &GTree, eta: &SimpleProcess) -> Result<IsometryReport> {
    let enumerated = tree.enumerated()?;
    eta.validate(tree.n_steps)?;
    let integral = discrete_ito(tree, eta)?;
    let lhs_leaves: Vec<f64> = integral.iter().map(|v| v * v).collect();
    let lhs = enumerated.conditional(lhs_leaves, tree.n_steps, 0)?[0];
    let rhs = enumerated.expectation(|path| {
        let mut acc = 0.0;
        for (s, &db) in path.iter().enumerate() {
            let xi = eta.value_at_step(s, path);
            acc += xi * xi * db * db;
        }
        acc
    });
    Ok(IsometryReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
    })
}

/// Maximum conditional-martingale deviation of
/// M_t = x0 + sum Z dB + sum eta (dB)^2 - sum 2 G(eta) dt over all pairs
/// s <= t of tree steps: max |E^[M_t | H_s] - M_s|.
pub fn gmartingale_check(
    tree: &GTree,
    z: &SimpleProcess,
    eta: &SimpleProcess,
    x0: f64,
) -> Result<f64> {
    let enumerated = tree.enumerated()?;
    z.validate(tree.n_steps)?;
    eta.validate(tree.n_steps)?;
    let band = enumerated.implied_band();
    let dt = tree.dt;

    // M_t per prefix at step t.
    let m_at = |t: usize| -> Vec<f64> {
        let np = enumerated.points.len();
        let mut values = vec![x0; enumerated.node_count(t)];
        if t == 0 {
            return values;
        }
        let mut prefix = vec![0.0; t];
        for (idx, slot) in values.iter_mut().enumerate() {
            let mut rem = idx;
            for d in (0..t).rev() {
                prefix[d] = enumerated.points[rem % np];
                rem /= np;
            }
            let mut m = x0;
            for s in 0..t {
                let zs = z.value_at_step(s, &prefix);
                let es = eta.value_at_step(s, &prefix);
                let db = prefix[s];
                m += zs * db + es * db * db - 2.0 * band.g(es) * dt;
            }
            *slot = m;
        }
        values
    };

    let mut worst = 0.0_f64;
    for t in 0..=tree.n_steps {
        let mt = m_at(t);
        for s in 0..=t {
            let cond = enumerated.conditional(mt.clone(), t, s)?;
            let ms = m_at(s);
            for (a, b) in cond.iter().zip(&ms) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Residual of the change-of-variable formula on the tree for the process
/// `X_t = x0 + alpha t + eta <B>_t + beta B_t` (constant coefficients):
/// max over paths of |Phi(X_T) - Phi(X_0) - left-point integral sums|.
#[allow(clippy::too_many_arguments)]
pub fn ito_formula_residual(
    tree: &GTree,
    map: &dyn Fn(f64) -> f64,
    d_map: &dyn Fn(f64) -> f64,
    d2_map: &dyn Fn(f64) -> f64,
    x0: f64,
    alpha: f64,
    eta: f64,
    beta: f64,
) -> Result<f64> {
    let enumerated = tree.enumerated()?;
    let dt = tree.dt;
    let leaves = enumerated.eval_paths(|path| {
        let mut x = x0;
        let mut rhs = 0.0;
        for &db in path {
            rhs += d_map(x) * beta * db
                + d_map(x) * alpha * dt
                + (d_map(x) * eta + 0.5 * d2_map(x) * beta * beta) * db * db;
            x += alpha * dt + eta * db * db + beta * db;
        }
        let lhs = map(x) - map(x0);
        (lhs - rhs).abs()
    });
    Ok(leaves.iter().fold(0.0, |m, v| m.max(*v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;
    use approx::assert_abs_diff_eq;

    fn binomial_tree(n: usize) -> GTree {
        let family = IncrementFamily::Binomial {
            sigmas: vec![0.5, 1.0],
        };
        GTree::new(n, 1.0 / n as f64, family, TreeBackend::Enumerate).unwrap()
    }

    #[test]
    fn family_validation() {
        assert!(Law::new(vec![-1.0, 1.0], vec![0.5, 0.5]).is_ok());
        assert!(Law::new(vec![-1.0, 1.0], vec![0.7, 0.3]).is_err()); // mean != 0
        assert!(Law::new(vec![-1.0, 1.0], vec![0.6, 0.6]).is_err());
        assert!(IncrementFamily::Binomial { sigmas: vec![] }.validate().is_err());
    }

    #[test]
    fn implied_band_of_binomial_family() {
        let tree = binomial_tree(4);
        let band = tree.implied_band().unwrap();
        assert_abs_diff_eq!(band.sigma_lo, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(band.sigma_hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_payoff_has_zero_expectation() {
        let tree = binomial_tree(5);
        let v = dp_gexpectation(&tree, |s| 3.0 * s).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn one_step_ball_second_moment() {
        let family = IncrementFamily::ball(0.4, 0.5, 11).unwrap();
        let tree = GTree::new(1, 1.0, family, TreeBackend::Enumerate).unwrap();
        let v = dp_gexpectation(&tree, |s| s * s).unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn two_step_binomial_variance_adds() {
        // sigma in {0.5, 1}, dt = 1, phi = s^2: worst case is 2 sigma_hi^2.
        let family = IncrementFamily::Binomial {
            sigmas: vec![0.5, 1.0],
        };
        let tree = GTree::new(2, 1.0, family, TreeBackend::Enumerate).unwrap();
        let v = dp_gexpectation(&tree, |s| s * s).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn enumerate_bound_suggests_grid_backend() {
        let family = IncrementFamily::ball(0.4, 0.5, 11).unwrap();
        let tree = GTree::new(64, 1.0, family, TreeBackend::Enumerate).unwrap();
        assert!(matches!(
            dp_gexpectation(&tree, |s| s),
            Err(Error::StateExplosion { .. })
        ));
    }

    #[test]
    fn grid_dp_matches_enumeration_on_lattice_family() {
        let family = IncrementFamily::ball(0.4, 0.5, 11).unwrap();
        let phi = |s: f64| (s / 3.0).tanh() + 0.2 * s.abs().min(2.0);
        for n in [1usize, 2, 5, 9] {
            let exact = dp_gexpectation(
                &GTree::new(n, 1.0, family.clone(), TreeBackend::Enumerate).unwrap(),
                phi,
            )
            .unwrap();
            let grid = dp_gexpectation(
                &GTree::new(n, 1.0, family.clone(), TreeBackend::GridDp { dx: 0.0 }).unwrap(),
                phi,
            )
            .unwrap();
            assert_abs_diff_eq!(exact, grid, epsilon = 1e-12);
        }
    }

    #[test]
    fn dp_is_a_sublinear_functional() {
        let tree = binomial_tree(4);
        let mut rng = PortableRng::new(41);
        for _ in 0..25 {
            let (a1, b1, c1) = (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
            let (a2, b2, c2) = (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
            let f = move |s: f64| a1 * s + b1 * (s - c1).abs();
            let g = move |s: f64| a2 * (s * s) + b2 * (s + c2).max(0.0);
            let lambda = rng.uniform_in(0.0, 2.0);
            let c = rng.uniform_in(-1.0, 1.0);

            let ef = dp_gexpectation(&tree, f).unwrap();
            let eg = dp_gexpectation(&tree, g).unwrap();
            let esum = dp_gexpectation(&tree, move |s| f(s) + g(s)).unwrap();
            assert!(esum <= ef + eg + 1e-12);

            let escaled = dp_gexpectation(&tree, move |s| lambda * f(s)).unwrap();
            assert_abs_diff_eq!(escaled, lambda * ef, epsilon = 1e-12);

            let eshift = dp_gexpectation(&tree, move |s| f(s) + c).unwrap();
            assert_abs_diff_eq!(eshift, ef + c, epsilon = 1e-12);

            let eabove = dp_gexpectation(&tree, move |s| f(s) + 0.3).unwrap();
            assert!(eabove >= ef - 1e-12);
        }
        let econst = dp_gexpectation(&tree, |_| 2.25).unwrap();
        assert_abs_diff_eq!(econst, 2.25, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_family_gives_sign_symmetry() {
        let tree = binomial_tree(5);
        let phi = |s: f64| (s - 0.3).max(0.0) + 0.1 * s.sin();
        let a = dp_gexpectation(&tree, phi).unwrap();
        let b = dp_gexpectation(&tree, move |s| phi(-s)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn conditional_endpoints() {
        let tree = binomial_tree(4);
        let phi = |path: &[f64]| {
            let s: f64 = path.iter().sum();
            s * s
        };
        // j = n: the payoff itself per leaf.
        let at_n = conditional_gexp(&tree, &phi, 4).unwrap();
        let enumerated = tree.enumerated().unwrap();
        let direct = enumerated.eval_paths(|p| phi(p));
        assert_eq!(at_n, direct);
        // j = 0: the scalar dp value.
        let at_0 = conditional_gexp(&tree, &phi, 0).unwrap();
        let scalar = dp_gexpectation(&tree, |s| s * s).unwrap();
        assert_eq!(at_0.len(), 1);
        assert_abs_diff_eq!(at_0[0], scalar, epsilon = 1e-12);
    }

    #[test]
    fn tower_property_is_exact() {
        let tree = binomial_tree(6);
        let enumerated = tree.enumerated().unwrap();
        let phi = |path: &[f64]| {
            let s: f64 = path.iter().sum();
            (s * 1.3).tanh() + path[0] * 0.2
        };
        let at_t = conditional_gexp(&tree, &phi, 4).unwrap();
        // E^[E^[X | H_4] | H_2] must equal E^[X | H_2].
        let nested = enumerated.conditional(at_t, 4, 2).unwrap();
        let direct = conditional_gexp(&tree, &phi, 2).unwrap();
        for (a, b) in nested.iter().zip(&direct) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn future_payoffs_have_constant_conditionals() {
        // A payoff of the increments after step j only: its conditional at j
        // is the same at every node.
        let tree = binomial_tree(5);
        let phi = |path: &[f64]| {
            let tail: f64 = path[2..].iter().sum();
            (tail - 0.2).max(0.0)
        };
        let cond = conditional_gexp(&tree, &phi, 2).unwrap();
        let spread = cond
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        assert!(spread.1 - spread.0 <= 1e-12, "spread {spread:?}");
    }

    #[test]
    fn conditional_hmeasurable_factorization() {
        // E^[eta X | H_t] = eta+ E^[X | H_t] + eta- E^[-X | H_t].
        let tree = binomial_tree(4);
        let j = 2;
        let eta = |prefix: &[f64]| prefix[0] - 0.5 * prefix[1]; // H_2-measurable
        let x = |path: &[f64]| {
            let tail: f64 = path[j..].iter().sum();
            tail.max(-0.4)
        };
        let lhs = conditional_gexp(&tree, &move |p: &[f64]| eta(&p[..j]) * x(p), j).unwrap();
        let ex = conditional_gexp(&tree, &x, j).unwrap();
        let enx = conditional_gexp(&tree, &move |p: &[f64]| -x(p), j).unwrap();
        let enumerated = tree.enumerated().unwrap();
        let np = enumerated.points.len();
        for (idx, &v) in lhs.iter().enumerate() {
            let mut rem = idx;
            let mut prefix = vec![0.0; j];
            for d in (0..j).rev() {
                prefix[d] = enumerated.points[rem % np];
                rem /= np;
            }
            let e = eta(&prefix);
            let expect = e.max(0.0) * ex[idx] + (-e).max(0.0) * enx[idx];
            assert_abs_diff_eq!(v, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn ito_integral_of_one_is_terminal_value() {
        let tree = binomial_tree(5);
        let eta = SimpleProcess::per_step(5, |_, _| 1.0);
        let integral = discrete_ito(&tree, &eta).unwrap();
        let enumerated = tree.enumerated().unwrap();
        let b_t = enumerated.eval_paths(|p| p.iter().sum());
        assert_eq!(integral, b_t);
        let expectation = enumerated.conditional(integral, 5, 0).unwrap()[0];
        assert_abs_diff_eq!(expectation, 0.0, epsilon = 1e-12);
    }

    fn random_adapted_processes(n: usize, count: usize, seed: u64) -> Vec<SimpleProcess> {
        (0..count)
            .map(|k| {
                let mut rng = PortableRng::new(seed + k as u64);
                let weights: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.5, 1.5)).collect();
                let bias = rng.uniform_in(-0.5, 0.5);
                SimpleProcess::per_step(n, move |j, prefix| {
                    let s: f64 = prefix.iter().sum();
                    (weights[j] * s + bias).tanh() + 0.2
                })
            })
            .collect()
    }

    #[test]
    fn adapted_integrals_have_zero_expectation_and_isometry() {
        let n = 6;
        let tree = binomial_tree(n);
        let enumerated = tree.enumerated().unwrap();
        for eta in random_adapted_processes(n, 5, 97) {
            let integral = discrete_ito(&tree, &eta).unwrap();
            let upper = enumerated.conditional(integral.clone(), n, 0).unwrap()[0];
            let lower = -enumerated
                .conditional(integral.iter().map(|v| -v).collect(), n, 0)
                .unwrap()[0];
            assert!(upper.abs() <= 1e-12, "E^[I] = {upper}");
            assert!(lower.abs() <= 1e-12, "-E^[-I] = {lower}");

            let report = isometry_check(&tree, &eta).unwrap();
            assert!(report.gap <= 1e-12, "isometry gap {}", report.gap);

            // Second-moment bound: E^[I^2] <= sum E^[xi^2] dt.
            let mut bound = 0.0;
            for s in 0..n {
                let eta_ref = &eta;
                let sq = conditional_gexp(
                    &tree,
                    &move |p: &[f64]| {
                        let v = eta_ref.value_at_step(s, p);
                        v * v
                    },
                    0,
                )
                .unwrap()[0];
                bound += sq * tree.dt;
            }
            assert!(report.lhs <= bound + 1e-12);
        }
    }

    #[test]
    fn isometry_for_unit_integrand_is_upper_variance() {
        let tree = binomial_tree(6);
        let eta = SimpleProcess::per_step(6, |_, _| 1.0);
        let report = isometry_check(&tree, &eta).unwrap();
        // E^[B_T^2] = sigma_hi^2 T = 1.
        assert_abs_diff_eq!(report.lhs, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rhs, 1.0, epsilon = 1e-12);
        assert!(report.gap <= 1e-12);
    }

    #[test]
    fn martingale_deviation_vanishes() {
        let n = 6;
        let tree = binomial_tree(n);

        // Z = eta = 0: constant process.
        let zero = SimpleProcess::per_step(n, |_, _| 0.0);
        let dev = gmartingale_check(&tree, &zero, &zero, 1.5).unwrap();
        assert_eq!(dev, 0.0);

        // Z = 1, eta = 0: M = x + B_t.
        let one = SimpleProcess::per_step(n, |_, _| 1.0);
        let dev = gmartingale_check(&tree, &one, &zero, 0.3).unwrap();
        assert!(dev <= 1e-12, "deviation {dev}");

        // Z = 0, eta = 1: M = <B>_t - sigma_hi^2 t.
        let dev = gmartingale_check(&tree, &zero, &one, 0.0).unwrap();
        assert!(dev <= 1e-12, "deviation {dev}");

        // Random adapted Z and eta.
        let procs = random_adapted_processes(n, 4, 11);
        for pair in procs.chunks(2) {
            let dev = gmartingale_check(&tree, &pair[0], &pair[1], -0.7).unwrap();
            assert!(dev <= 1e-12, "deviation {dev}");
        }
    }

    #[test]
    fn squared_process_is_a_submartingale_with_band_gap() {
        // E^[B_t^2 | H_s] - B_s^2 = sigma_hi^2 (t - s) on the tree.
        let n = 6;
        let tree = binomial_tree(n);
        let enumerated = tree.enumerated().unwrap();
        let b2 = enumerated.eval_paths(|p| {
            let s: f64 = p.iter().sum();
            s * s
        });
        let s_step = 2;
        let cond = enumerated.conditional(b2, n, s_step).unwrap();
        let np = enumerated.points.len();
        for (idx, &v) in cond.iter().enumerate() {
            let mut rem = idx;
            let mut bs = 0.0;
            for _ in 0..s_step {
                bs += enumerated.points[rem % np];
                rem /= np;
            }
            let expected = bs * bs + (n - s_step) as f64 * tree.dt; // sigma_hi = 1
            assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn ito_formula_identity_and_telescoping() {
        let tree = binomial_tree(6);
        // Phi(x) = x telescopes exactly.
        let r = ito_formula_residual(&tree, &|x| x, &|_| 1.0, &|_| 0.0, 0.3, 0.2, 0.4, 1.0)
            .unwrap();
        assert!(r <= 1e-12, "residual {r}");
        // Phi(x) = x^2 with X = B: B^2 = 2 int B dB + <B> is algebraic.
        let r = ito_formula_residual(&tree, &|x| x * x, &|x| 2.0 * x, &|_| 2.0, 0.0, 0.0, 0.0, 1.0)
            .unwrap();
        assert!(r <= 1e-12, "residual {r}");
    }

    #[test]
    fn ito_formula_residual_decays_for_cubic() {
        let residual = |n: usize| {
            let tree = binomial_tree(n);
            ito_formula_residual(
                &tree,
                &|x| x * x * x,
                &|x| 3.0 * x * x,
                &|x| 6.0 * x,
                0.1,
                0.3,
                0.2,
                1.0,
            )
            .unwrap()
        };
        let (r8, r32, r128) = (residual(2), residual(5), residual(9));
        assert!(r8 > r32 && r32 > r128, "{r8} {r32} {r128}");
    }

    #[test]
    fn partition_must_match_tree_grid() {
        let tree = binomial_tree(4);
        let bad = SimpleProcess::new(vec![0, 2, 3], |_, _| 1.0);
        assert!(matches!(
            discrete_ito(&tree, &bad),
            Err(Error::PartitionMismatch(_))
        ));
        let coarse = SimpleProcess::new(vec![0, 2, 4], |_, _| 1.0);
        assert!(discrete_ito(&tree, &coarse).is_ok());
    }

    #[test]
    fn clt_errors_shrink_for_ball_family() {
        let family = IncrementFamily::ball(0.4, 0.5, 11).unwrap();
        let rows = clt_table(&family, |x: f64| x.abs().min(2.0), &[4, 16, 64]).unwrap();
        assert!(rows[2].abs_error < rows[0].abs_error, "{rows:?}");
    }

    #[test]
    fn clt_linear_payoff_is_zero_column() {
        let family = IncrementFamily::ball(0.4, 0.5, 5).unwrap();
        let rows = clt_table(&family, |x: f64| x, &[2, 8]).unwrap();
        for row in rows {
            assert!(row.value.abs() <= 1e-10);
        }
    }

    #[test]
    fn grid_dp_approximates_enumeration_off_lattice() {
        // Incommensurable jumps force the interpolating grid path.
        let r = std::f64::consts::SQRT_2 * 0.7;
        let family = IncrementFamily::Atoms {
            laws: vec![
                Law::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap(),
                Law::new(vec![-r, r], vec![0.5, 0.5]).unwrap(),
            ],
        };
        let phi = |s: f64| (0.8 * s).cos() + 0.3 * s;
        let exact = dp_gexpectation(
            &GTree::new(6, 1.0, family.clone(), TreeBackend::Enumerate).unwrap(),
            phi,
        )
        .unwrap();
        let grid = dp_gexpectation(
            &GTree::new(6, 1.0, family, TreeBackend::GridDp { dx: 0.0 }).unwrap(),
            phi,
        )
        .unwrap();
        assert!((exact - grid).abs() <= 0.02, "{exact} vs {grid}");
    }

    #[test]
    fn family_json_round_trip() {
        let family = IncrementFamily::Binomial {
            sigmas: vec![0.5, 0.75, 1.0],
        };
        let json = family.to_json().unwrap();
        let back = IncrementFamily::from_json(&json).unwrap();
        match back {
            IncrementFamily::Binomial { sigmas } => assert_eq!(sigmas, vec![0.5, 0.75, 1.0]),
            _ => panic!("wrong variant"),
        }
        assert!(IncrementFamily::from_json("{\"kind\":\"atoms\",\"laws\":[]}").is_err());
    }

    proptest::proptest! {
        /// The backward recursion equals a brute-force supremum over every
        /// adaptive law-selection strategy on a two-step tree.
        #[test]
        fn dp_matches_bruteforce_strategy_sup(
            a1 in -2.0..-0.1f64, b1 in 0.1..2.0f64,
            a2 in -2.0..-0.1f64, b2 in 0.1..2.0f64,
            w in -1.5..1.5f64, k in -1.0..1.0f64,
        ) {
            let two_point = |a: f64, b: f64| {
                Law::new(vec![a, b], vec![b / (b - a), -a / (b - a)]).unwrap()
            };
            let laws = [two_point(a1, b1), two_point(a2, b2)];
            let family = IncrementFamily::Atoms { laws: laws.to_vec() };
            let tree = GTree::new(2, 1.0, family, TreeBackend::Enumerate).unwrap();
            let phi = move |s: f64| (w * s).sin() + k * s.abs();
            let dp = dp_gexpectation(&tree, phi).unwrap();

            // Adversary: a root law plus one law per observable first jump.
            let points = tree.enumerated().unwrap().points;
            let mut best = f64::NEG_INFINITY;
            for root in &laws {
                for assign in 0..laws.len().pow(points.len() as u32) {
                    let mut total = 0.0;
                    for (&x1, &p1) in root.points.iter().zip(&root.probs) {
                        let obs = points
                            .iter()
                            .position(|v| (v - x1).abs() <= 1e-12 * x1.abs().max(1.0))
                            .unwrap();
                        let child = &laws[(assign / laws.len().pow(obs as u32)) % laws.len()];
                        let inner: f64 = child
                            .points
                            .iter()
                            .zip(&child.probs)
                            .map(|(x2, p2)| p2 * phi(x1 + x2))
                            .sum();
                        total += p1 * inner;
                    }
                    best = best.max(total);
                }
            }
            proptest::prop_assert!((dp - best).abs() <= 1e-10, "dp {} vs brute force {}", dp, best);
        }
    }
}
