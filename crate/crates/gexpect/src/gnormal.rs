//! Band-normal and interval-maximal law evaluators.
//!
//! The band-normal law N(0; [sigma_lo^2 t, sigma_hi^2 t]) prices convex
//! payoffs at the upper volatility and concave payoffs at the lower one, so
//! those cases reduce to classical Gaussian quadrature; everything else goes
//! through the generating PDE. The interval-maximal law U_[a, b] (the law of
//! the quadratic variation and of drift uncertainty) evaluates as a running
//! maximum over the interval.

use std::io::Write;

use serde::Serialize;

use crate::band::{g_diag, MeanBand, VolBand};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::{Payoff, ShapeHint};
use crate::pde;
use crate::quad;
use crate::rng::PortableRng;

/// Band-normal law with variance horizon t: N(0; [sigma_lo^2 t, sigma_hi^2 t]).
#[derive(Clone, Copy, Debug)]
pub struct GNormalLaw {
    pub band: VolBand,
    pub t: f64,
}

impl GNormalLaw {
    pub fn new(band: VolBand, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("need t > 0, got {t}")));
        }
        Ok(Self { band, t })
    }
}

/// Interval-maximal law U_[mu_lo t, mu_hi t].
#[derive(Clone, Copy, Debug)]
pub struct ULaw {
    pub mean: MeanBand,
    pub t: f64,
}

impl ULaw {
    pub fn new(mean: MeanBand, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("need t > 0, got {t}")));
        }
        Ok(Self { mean, t })
    }

    /// The support interval [mu_lo t, mu_hi t].
    pub fn interval(&self) -> (f64, f64) {
        (self.mean.mu_lo * self.t, self.mean.mu_hi * self.t)
    }
}

/// Which evaluation route produced a value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EvalRoute {
    ConvexQuadrature,
    ConcaveQuadrature,
    Pde,
}

/// Result of [`gnormal_expect`]: value, route taken, and any hint downgrade.
#[derive(Clone, Debug)]
pub struct GExpectation {
    pub value: f64,
    pub route: EvalRoute,
    pub warnings: Vec<String>,
}

/// Spot-check a declared shape on grid samples: second differences must be
/// single-signed within tolerance.
fn shape_holds_on_samples(phi: &Payoff, hint: ShapeHint, half_width: f64) -> bool {
    const N: usize = 257;
    let h = 2.0 * half_width / (N - 1) as f64;
    let mut scale = 1.0_f64;
    let mut values = [0.0; N];
    for (i, v) in values.iter_mut().enumerate() {
        *v = phi.eval(-half_width + i as f64 * h);
        scale = scale.max(v.abs());
    }
    let tol = 1e-9 * scale;
    values.windows(3).all(|w| {
        let d2 = w[2] - 2.0 * w[1] + w[0];
        match hint {
            ShapeHint::Convex => d2 >= -tol,
            ShapeHint::Concave => d2 <= tol,
            ShapeHint::General => true,
        }
    })
}

/// E[phi(X)] for X distributed by the band-normal law.
///
/// Declared convex/concave hints are trusted after a spot-check; a failed
/// check downgrades to the PDE route with a warning. The PDE grid defaults
/// to eight standard deviations around the origin when `grid` is `None`.
pub fn gnormal_expect(
    phi: &Payoff,
    hint: ShapeHint,
    law: &GNormalLaw,
    grid: Option<&GridSpec>,
) -> Result<GExpectation> {
    let mut warnings = Vec::new();
    let sd_hi = law.band.sigma_hi * law.t.sqrt();
    let mut effective = hint;
    if hint != ShapeHint::General && !shape_holds_on_samples(phi, hint, 5.0 * sd_hi) {
        warnings.push(format!(
            "declared {hint:?} hint fails the sample spot-check; using the PDE route"
        ));
        effective = ShapeHint::General;
    }
    let (vlo, vhi) = law.band.variance_band();
    match effective {
        ShapeHint::Convex => Ok(GExpectation {
            value: quad::gauss_expect_default(|x| phi.eval(x), vhi * law.t),
            route: EvalRoute::ConvexQuadrature,
            warnings,
        }),
        ShapeHint::Concave => Ok(GExpectation {
            value: quad::gauss_expect_default(|x| phi.eval(x), vlo * law.t),
            route: EvalRoute::ConcaveQuadrature,
            warnings,
        }),
        ShapeHint::General => {
            let owned;
            let grid = match grid {
                Some(g) => {
                    if (g.t_horizon - law.t).abs() > 1e-12 * law.t.max(1.0) {
                        return Err(Error::InvalidParameter(format!(
                            "grid horizon {} does not match law horizon {}",
                            g.t_horizon, law.t
                        )));
                    }
                    g
                }
                None => {
                    owned = GridSpec::auto_domain(0.0, law.band.sigma_hi, law.t, 801)?;
                    &owned
                }
            };
            let solve = pde::solve_gheat(phi, &law.band, grid)?;
            Ok(GExpectation {
                value: solve.value_at(0.0),
                route: EvalRoute::Pde,
                warnings,
            })
        }
    }
}

/// sup over the law's interval of phi: the interval-maximal expectation.
pub fn u_expect<F: Fn(f64) -> f64>(phi: F, law: &ULaw) -> f64 {
    let (lo, hi) = law.interval();
    quad::max_on_interval(phi, lo, hi).0
}

/// Generator value G(alpha) for a volatility band.
pub fn g_eval(alpha: f64, band: &VolBand) -> f64 {
    band.g(alpha)
}

/// Generator value for a diagonal matrix under per-axis bands.
pub fn g_eval_diag(diag: &[f64], bands: &[VolBand]) -> Result<f64> {
    g_diag(diag, bands)
}

/// One row of the increment moment table.
#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    /// Moment order n.
    pub order: u32,
    /// Human-readable moment label.
    pub label: String,
    /// Upper moment E^[|dB|^n] (equals E^[(dB)^n] for even n).
    pub upper: f64,
    /// Lower moment -E^[-|dB|^n] = sigma_lo^n * upper.
    pub lower: f64,
}

/// Moment table of a band-normal increment over a step `dt`, for a band
/// normalized to sigma_hi = 1.
///
/// Even orders are the classical Gaussian moments (2k-1)!! dt^k; odd absolute
/// orders carry the sqrt(2/pi) factor; the lower moments scale by
/// sigma_lo^n.
pub fn increment_moment_table(band: &VolBand, dt: f64) -> Result<Vec<MomentRow>> {
    if (band.sigma_hi - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "moment table expects sigma_hi normalized to 1, got {}",
            band.sigma_hi
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("need dt > 0, got {dt}")));
    }
    let sqrt_2_over_pi = (2.0 / std::f64::consts::PI).sqrt();
    let rows = [
        (1, "E^[|dB|]", sqrt_2_over_pi * dt.sqrt()),
        (2, "E^[(dB)^2]", dt),
        (3, "E^[|dB|^3]", 2.0 * sqrt_2_over_pi * dt.powf(1.5)),
        (4, "E^[(dB)^4]", 3.0 * dt * dt),
        (5, "E^[|dB|^5]", 8.0 * sqrt_2_over_pi * dt.powf(2.5)),
        (6, "E^[(dB)^6]", 15.0 * dt.powi(3)),
        (8, "E^[(dB)^8]", 105.0 * dt.powi(4)),
    ];
    Ok(rows
        .into_iter()
        .map(|(order, label, upper)| MomentRow {
            order,
            label: label.to_string(),
            upper,
            lower: band.sigma_lo.powi(order as i32) * upper,
        })
        .collect())
}

/// Render the moment table as aligned text.
pub fn format_moment_table(rows: &[MomentRow]) -> String {
    let mut out = format!("{:<12} {:>24} {:>24}\n", "moment", "upper", "lower");
    for row in rows {
        out.push_str(&format!(
            "{:<12} {:>24.16e} {:>24.16e}\n",
            row.label, row.upper, row.lower
        ));
    }
    out
}

/// Write the moment table as CSV with header `order,label,upper,lower`.
pub fn write_moment_table_csv<W: Write>(rows: &[MomentRow], mut out: W) -> Result<()> {
    writeln!(out, "order,label,upper,lower")?;
    for row in rows {
        writeln!(out, "{},{},{},{}", row.order, row.label, row.upper, row.lower)?;
    }
    Ok(())
}

/// A scalar function with first and second derivatives, analytic or by
/// central differences (step 1e-5).
pub struct ScalarC2 {
    pub h: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub dh: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    pub d2h: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl ScalarC2 {
    pub fn numeric<F: Fn(f64) -> f64 + Send + Sync + 'static>(h: F) -> Self {
        Self {
            h: Box::new(h),
            dh: None,
            d2h: None,
        }
    }

    fn dh(&self, y: f64) -> f64 {
        match &self.dh {
            Some(f) => f(y),
            None => {
                let e = 1e-5;
                ((self.h)(y + e) - (self.h)(y - e)) / (2.0 * e)
            }
        }
    }

    fn d2h(&self, y: f64) -> f64 {
        match &self.d2h {
            Some(f) => f(y),
            None => {
                let e = 1e-5;
                ((self.h)(y + e) - 2.0 * (self.h)(y) + (self.h)(y - e)) / (e * e)
            }
        }
    }
}

/// Sampling box for the G-convexity scan.
#[derive(Clone, Copy, Debug)]
pub struct ConvexityScan {
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub a_range: (f64, f64),
    /// Grid points per axis in one dimension; sample count in higher
    /// dimensions.
    pub count: usize,
    pub rng_seed: u64,
}

impl Default for ConvexityScan {
    fn default() -> Self {
        Self {
            y_range: (-2.0, 2.0),
            z_range: (-2.0, 2.0),
            a_range: (-2.0, 2.0),
            count: 41,
            rng_seed: 0,
        }
    }
}

/// Outcome of the G-convexity scan: the minimal value of
/// G(h'(y) A + h''(y) z z^T) - h'(y) G(A) over the sampled box and a witness
/// if it is negative. A pass means "no violation found on the sampled box",
/// never a global certificate.
#[derive(Clone, Debug)]
pub struct ConvexityReport {
    pub min_lhs: f64,
    pub witness: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub no_violation_found: bool,
}

/// Scan the G-convexity inequality for a scalar function `h` under per-axis
/// bands (diagonal uncertainty set, diagonal test matrices A). Only the
/// diagonal of h''(y) z z^T enters a diagonal-set generator, so the scan
/// works per axis.
pub fn g_convexity_check(h: &ScalarC2, bands: &[VolBand], scan: &ConvexityScan) -> ConvexityReport {
    let d = bands.len();
    let lhs = |y: f64, z: &[f64], a: &[f64]| -> f64 {
        let dh = h.dh(y);
        let d2h = h.d2h(y);
        let mut value = 0.0;
        for i in 0..d {
            value += bands[i].g(dh * a[i] + d2h * z[i] * z[i]);
            value -= dh * bands[i].g(a[i]);
        }
        value
    };

    let mut min_lhs = f64::INFINITY;
    let mut witness: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut consider = |y: f64, z: Vec<f64>, a: Vec<f64>| {
        let v = lhs(y, &z, &a);
        if v < min_lhs {
            min_lhs = v;
            witness = Some((y, z, a));
        }
    };

    let grid = |range: (f64, f64), k: usize, n: usize| -> f64 {
        range.0 + (range.1 - range.0) * k as f64 / (n - 1).max(1) as f64
    };

    if d == 1 {
        let n = scan.count.max(2);
        for iy in 0..n {
            let y = grid(scan.y_range, iy, n);
            for iz in 0..n {
                let z = grid(scan.z_range, iz, n);
                for ia in 0..n {
                    let a = grid(scan.a_range, ia, n);
                    consider(y, vec![z], vec![a]);
                }
            }
        }
    } else {
        let mut rng = PortableRng::new(scan.rng_seed);
        let n = scan.count.max(2);
        for iy in 0..n {
            let y = grid(scan.y_range, iy, n);
            for _ in 0..n * n {
                let z: Vec<f64> = (0..d)
                    .map(|_| rng.uniform_in(scan.z_range.0, scan.z_range.1))
                    .collect();
                let a: Vec<f64> = (0..d)
                    .map(|_| rng.uniform_in(scan.a_range.0, scan.a_range.1))
                    .collect();
                consider(y, z, a);
            }
            // Corner probes of the (z, a) box.
            for corner in 0..(1usize << (2 * d).min(16)) {
                let z: Vec<f64> = (0..d)
                    .map(|i| {
                        if corner >> i & 1 == 1 {
                            scan.z_range.1
                        } else {
                            scan.z_range.0
                        }
                    })
                    .collect();
                let a: Vec<f64> = (0..d)
                    .map(|i| {
                        if corner >> (d + i) & 1 == 1 {
                            scan.a_range.1
                        } else {
                            scan.a_range.0
                        }
                    })
                    .collect();
                consider(y, z, a);
            }
        }
    }

    let no_violation_found = min_lhs >= -1e-9;
    ConvexityReport {
        min_lhs,
        witness: if no_violation_found { None } else { witness },
        no_violation_found,
    }
}
