//! Scenario-based path simulation under volatility controls.
//!
//! Each control is one admissible scenario: a volatility process taking
//! values inside the band. Sampling under a control uses classical Gaussian
//! increments dB = theta sqrt(dt) z, so per-control statistics are ordinary
//! Monte Carlo; the worst case over a finite control family is a lower bound
//! of the robust expectation (the family is a subset of the full scenario
//! set), tight for convex and concave payoffs where the optimal control sits
//! at a band edge.
//!
//! Paths are generated from per-path RNG substreams, so parallel generation
//! is bit-identical to sequential generation.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::band::VolBand;
use crate::error::{Error, Result};
use crate::quad;
use crate::rng::PortableRng;

/// Feedback volatility rule: (time, path prefix of B) -> theta.
pub type FeedbackRule = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A volatility scenario on [0, T].
#[derive(Clone)]
pub enum VolControl {
    /// Piecewise-constant volatility on a knot partition.
    Deterministic {
        id: String,
        /// Times 0 = t_0 < ... < t_N = T.
        knots: Vec<f64>,
        /// Value on each knot interval.
        theta: Vec<f64>,
    },
    /// State-feedback volatility: callback on (t, path prefix of B).
    Feedback {
        id: String,
        t_horizon: f64,
        theta: FeedbackRule,
    },
}

impl VolControl {
    /// Constant volatility on [0, T].
    pub fn constant(id: &str, theta: f64, t_horizon: f64) -> Self {
        VolControl::Deterministic {
            id: id.into(),
            knots: vec![0.0, t_horizon],
            theta: vec![theta],
        }
    }

    /// Bang-bang control on a uniform partition: `pattern[k]` picks the top
    /// of the band on interval k, otherwise the bottom.
    pub fn bang_bang(id: &str, pattern: &[bool], band: &VolBand, t_horizon: f64) -> Self {
        let n = pattern.len().max(1);
        let knots = (0..=n).map(|k| t_horizon * k as f64 / n as f64).collect();
        let theta = pattern
            .iter()
            .map(|&hi| if hi { band.sigma_hi } else { band.sigma_lo })
            .collect();
        VolControl::Deterministic {
            id: id.into(),
            knots,
            theta,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            VolControl::Deterministic { id, .. } => id,
            VolControl::Feedback { id, .. } => id,
        }
    }

    pub fn t_horizon(&self) -> f64 {
        match self {
            VolControl::Deterministic { knots, .. } => *knots.last().unwrap_or(&0.0),
            VolControl::Feedback { t_horizon, .. } => *t_horizon,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, VolControl::Deterministic { .. })
    }

    fn validate(&self, band: &VolBand) -> Result<()> {
        match self {
            VolControl::Deterministic { knots, theta, .. } => {
                if knots.len() < 2 || theta.len() + 1 != knots.len() {
                    return Err(Error::InvalidParameter(
                        "control needs knots t_0 < ... < t_N with one theta per interval".into(),
                    ));
                }
                if knots[0] != 0.0 || knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidParameter(
                        "control knots must increase from 0".into(),
                    ));
                }
                for &th in theta {
                    check_in_band(th, band)?;
                }
                Ok(())
            }
            VolControl::Feedback { t_horizon, .. } => {
                if *t_horizon <= 0.0 {
                    return Err(Error::InvalidParameter("feedback horizon must be > 0".into()));
                }
                Ok(())
            }
        }
    }

    fn theta_at(&self, t: f64, prefix: &[f64]) -> f64 {
        match self {
            VolControl::Deterministic { knots, theta, .. } => {
                let k = match knots.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
                    Ok(k) => k.min(theta.len() - 1),
                    Err(k) => (k - 1).min(theta.len() - 1),
                };
                theta[k]
            }
            VolControl::Feedback { theta, .. } => theta(t, prefix),
        }
    }

    /// Integrated variance of a deterministic control (the terminal law is
    /// N(0, integral of theta^2 dt)).
    pub fn integrated_variance(&self) -> Result<f64> {
        match self {
            VolControl::Deterministic { knots, theta, .. } => Ok(knots
                .windows(2)
                .zip(theta)
                .map(|(w, th)| th * th * (w[1] - w[0]))
                .sum()),
            VolControl::Feedback { .. } => Err(Error::InvalidParameter(
                "integrated variance needs a deterministic control".into(),
            )),
        }
    }
}

fn check_in_band(theta: f64, band: &VolBand) -> Result<()> {
    if theta < band.sigma_lo - 1e-12 || theta > band.sigma_hi + 1e-12 {
        return Err(Error::ControlOutOfBand {
            theta,
            lo: band.sigma_lo,
            hi: band.sigma_hi,
        });
    }
    Ok(())
}

/// Simulated paths of B and its running quadratic variation.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub times: Vec<f64>,
    /// b[path][time index].
    pub b: Vec<Vec<f64>>,
    /// Running sum of squared increments, same layout.
    pub qv: Vec<Vec<f64>>,
    pub seed: u64,
    pub control_id: String,
    pub band: VolBand,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.b.len()
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn terminal_values(&self) -> Vec<f64> {
        self.b.iter().map(|p| *p.last().unwrap()).collect()
    }

    /// Long-format CSV `path_id,t,B,QV`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "path_id,t,B,QV")?;
        for (p, (bp, qp)) in self.b.iter().zip(&self.qv).enumerate() {
            for ((t, b), q) in self.times.iter().zip(bp).zip(qp) {
                writeln!(out, "{p},{t},{b},{q}")?;
            }
        }
        Ok(())
    }
}

/// Sample `n_paths` paths of n_steps Gaussian increments under the control.
pub fn sample_paths(
    control: &VolControl,
    band: &VolBand,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBundle> {
    control.validate(band)?;
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::InvalidParameter("need n_paths, n_steps >= 1".into()));
    }
    if let VolControl::Deterministic { knots, .. } = control {
        // Respect the control resolution so no interval is skipped over.
        if n_steps + 1 < knots.len() {
            return Err(Error::InvalidParameter(format!(
                "n_steps = {n_steps} cannot resolve {} control intervals",
                knots.len() - 1
            )));
        }
    }
    let t_horizon = control.t_horizon();
    let dt = t_horizon / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();

    let paths: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PortableRng::substream(seed, p as u64);
            let mut b = Vec::with_capacity(n_steps + 1);
            let mut qv = Vec::with_capacity(n_steps + 1);
            b.push(0.0);
            qv.push(0.0);
            for k in 0..n_steps {
                let theta = control.theta_at(times[k], &b);
                check_in_band(theta, band)?;
                let db = theta * dt.sqrt() * rng.standard_normal();
                b.push(b[k] + db);
                qv.push(qv[k] + db * db);
            }
            Ok((b, qv))
        })
        .collect();
    let paths = paths?;
    let (b, qv) = paths.into_iter().unzip();
    Ok(PathBundle {
        times,
        b,
        qv,
        seed,
        control_id: control.id().to_string(),
        band: *band,
    })
}

/// Estimator for the per-control expectation.
#[derive(Clone, Copy, Debug)]
pub enum Estimator {
    /// Terminal Gaussian quadrature; deterministic controls only.
    ExactGauss,
    /// Monte Carlo over sampled paths.
    Mc { n_paths: usize, n_steps: usize },
}

/// Largest per-control expectation of `phi(B_T)` over the supplied scenario
/// family, a lower bound of the robust expectation. Returns the bound and
/// the id of the (lowest-index) maximizing control.
pub fn scenario_sup<F: Fn(f64) -> f64 + Sync>(
    phi: F,
    controls: &[VolControl],
    band: &VolBand,
    estimator: Estimator,
    seed: u64,
) -> Result<(f64, String)> {
    if controls.is_empty() {
        return Err(Error::EmptyControls);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_id = String::new();
    for (k, control) in controls.iter().enumerate() {
        control.validate(band)?;
        let value = match estimator {
            Estimator::ExactGauss => {
                let variance = control.integrated_variance()?;
                quad::gauss_expect_default(&phi, variance)
            }
            Estimator::Mc { n_paths, n_steps } => {
                let bundle = sample_paths(
                    control,
                    band,
                    n_paths,
                    n_steps,
                    derive_seed(seed, k as u64),
                )?;
                let sum: f64 = bundle.terminal_values().iter().map(|&x| phi(x)).sum();
                sum / n_paths as f64
            }
        };
        if value > best {
            best = value;
            best_id = control.id().to_string();
        }
    }
    Ok((best, best_id))
}

/// Stable per-control seed derivation (splitmix64 of seed xor index).
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Quadratic-variation band diagnostics for a bundle.
#[derive(Clone, Debug, Serialize)]
pub struct QvReport {
    /// Fraction of (path, time) points outside the tolerant band.
    pub violation_fraction: f64,
    /// Fluctuation allowance used at the horizon.
    pub tol_at_horizon: f64,
    pub qv_terminal_mean: f64,
    pub qv_terminal_sd: f64,
    pub qv_terminal_min: f64,
    pub qv_terminal_max: f64,
}

/// Check sigma_lo^2 t <= QV_t <= sigma_hi^2 t up to the discrete-sum
/// fluctuation allowance 6 sigma_hi^2 sqrt(dt t).
pub fn quadratic_variation_stats(bundle: &PathBundle) -> QvReport {
    let band = &bundle.band;
    let dt = bundle.dt();
    let (vlo, vhi) = band.variance_band();
    let mut checks = 0usize;
    let mut violations = 0usize;
    for path in &bundle.qv {
        for (k, &q) in path.iter().enumerate().skip(1) {
            let t = bundle.times[k];
            let tol = 6.0 * vhi * (dt * t).sqrt();
            checks += 1;
            if q < vlo * t - tol || q > vhi * t + tol {
                violations += 1;
            }
        }
    }
    let terminal: Vec<f64> = bundle.qv.iter().map(|p| *p.last().unwrap()).collect();
    let n = terminal.len() as f64;
    let mean = terminal.iter().sum::<f64>() / n;
    let var = terminal.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let t_final = *bundle.times.last().unwrap();
    QvReport {
        violation_fraction: violations as f64 / checks as f64,
        tol_at_horizon: 6.0 * vhi * (dt * t_final).sqrt(),
        qv_terminal_mean: mean,
        qv_terminal_sd: var.sqrt(),
        qv_terminal_min: terminal.iter().cloned().fold(f64::INFINITY, f64::min),
        qv_terminal_max: terminal.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Left-point pathwise stochastic integral of an adapted integrand
/// (step index, path prefix) for every path in the bundle.
pub fn pathwise_ito<F: Fn(usize, &[f64]) -> f64 + Sync>(bundle: &PathBundle, eta: F) -> Vec<f64> {
    bundle
        .b
        .par_iter()
        .map(|path| {
            let mut acc = 0.0;
            for k in 0..path.len() - 1 {
                acc += eta(k, &path[..=k]) * (path[k + 1] - path[k]);
            }
            acc
        })
        .collect()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < xa.len() && j < xb.len() {
        if xa[i] <= xb[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / xa.len() as f64;
        let fb = j as f64 / xb.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}
