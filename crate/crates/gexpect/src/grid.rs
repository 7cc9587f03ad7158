//! Space-time grids and solver output containers.

use serde::Serialize;
use std::io::Write;

use crate::error::{Error, Result};

/// Fraction of the stability limit used when the step count is chosen
/// automatically.
pub const CFL_SAFETY: f64 = 0.9;

/// Hard caps keeping hostile grid requests from exhausting memory or time.
pub const MAX_NODES: usize = 10_000_000;
pub const MAX_STEPS: usize = 50_000_000;

/// Spatial-temporal grid for the one-dimensional solvers.
///
/// `nt = 0` lets the solver pick the step count from its CFL bound.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub t_horizon: f64,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t_horizon: f64, nt: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && t_horizon.is_finite()) {
            return Err(Error::NonFinite("grid bounds".into()));
        }
        if x_min >= x_max {
            return Err(Error::InvalidParameter(format!(
                "need x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if !(3..=MAX_NODES).contains(&nx) {
            return Err(Error::InvalidParameter(format!(
                "need 3 <= nx <= {MAX_NODES}, got {nx}"
            )));
        }
        if t_horizon <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "need t_horizon > 0, got {t_horizon}"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            nx,
            t_horizon,
            nt,
        })
    }

    /// Default domain for a diffusion started near `center`: eight standard
    /// deviations of the widest scenario on each side.
    pub fn auto_domain(center: f64, sigma_hi: f64, t_horizon: f64, nx: usize) -> Result<Self> {
        let half = 8.0 * sigma_hi * t_horizon.sqrt();
        Self::new(center - half, center + half, nx, t_horizon, 0)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.nx).map(|i| self.x_min + i as f64 * dx).collect()
    }

    /// Resolve the time step against a stability limit: automatic `nt`
    /// saturates `safety * dt_limit`; a user-forced `nt` must respect it.
    pub fn resolve_nt_with(&self, dt_limit: f64, safety: f64) -> Result<(usize, f64)> {
        let cap = safety * dt_limit;
        if self.nt == 0 {
            let nt = (self.t_horizon / cap).ceil().max(1.0) as usize;
            if nt > MAX_STEPS {
                return Err(Error::InvalidParameter(format!(
                    "stability requires {nt} time steps (cap {MAX_STEPS}); coarsen the grid or shorten the horizon"
                )));
            }
            Ok((nt, self.t_horizon / nt as f64))
        } else {
            let dt = self.t_horizon / self.nt as f64;
            if dt > cap * (1.0 + 1e-12) {
                return Err(Error::CflViolation { dt, limit: cap });
            }
            Ok((self.nt, dt))
        }
    }

    /// [`GridSpec::resolve_nt_with`] at the default safety factor.
    pub fn resolve_nt(&self, dt_limit: f64) -> Result<(usize, f64)> {
        self.resolve_nt_with(dt_limit, CFL_SAFETY)
    }
}

/// Tensor grid for the two-dimensional solver.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridSpec2d {
    pub x: GridSpec,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl GridSpec2d {
    pub fn new(x: GridSpec, y_min: f64, y_max: f64, ny: usize) -> Result<Self> {
        if y_min >= y_max || ny < 3 {
            return Err(Error::InvalidParameter("bad y grid".into()));
        }
        Ok(Self { x, y_min, y_max, ny })
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.ny - 1) as f64
    }

    pub fn ys(&self) -> Vec<f64> {
        let dy = self.dy();
        (0..self.ny).map(|j| self.y_min + j as f64 * dy).collect()
    }
}

/// Scheme metadata carried with every solve, exported as a JSON sidecar.
#[derive(Clone, Debug, Serialize)]
pub struct SolveMeta {
    pub scheme: String,
    pub boundary: String,
    pub dt: f64,
    pub dx: f64,
    pub nt: usize,
    pub warnings: Vec<String>,
}

/// Value surface of a one-dimensional solve.
///
/// `slices` holds the initial slice, every `store_every`-th intermediate
/// slice, and the final slice; `times` gives their time stamps.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    pub meta: SolveMeta,
}

impl SolveResult {
    pub fn final_slice(&self) -> &[f64] {
        self.slices.last().expect("solve stores at least one slice")
    }

    /// Linear interpolation of the final slice at `x`.
    pub fn value_at(&self, x: f64) -> f64 {
        interp_linear(&self.xs, self.final_slice(), x)
    }

    /// Value at the spatial origin (or the nearest grid point pair).
    pub fn value_at_origin(&self) -> f64 {
        self.value_at(0.0)
    }

    /// CSV export, header `t,x,u`, one row per stored (t, x).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,u")?;
        for (t, slice) in self.times.iter().zip(&self.slices) {
            for (x, u) in self.xs.iter().zip(slice) {
                writeln!(out, "{t},{x},{u}")?;
            }
        }
        Ok(())
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }
}

/// Value surface of the two-dimensional solve; slices are row-major over y
/// then x.
#[derive(Clone, Debug)]
pub struct SolveResult2d {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub times: Vec<f64>,
    pub slices: Vec<Vec<f64>>,
    pub meta: SolveMeta,
}

impl SolveResult2d {
    pub fn final_slice(&self) -> &[f64] {
        self.slices.last().expect("solve stores at least one slice")
    }

    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let nx = self.xs.len();
        let slice = self.final_slice();
        let row = |j: usize| &slice[j * nx..(j + 1) * nx];
        let j = lower_index(&self.ys, y);
        let j1 = (j + 1).min(self.ys.len() - 1);
        let vy0 = interp_linear(&self.xs, row(j), x);
        let vy1 = interp_linear(&self.xs, row(j1), x);
        if j1 == j {
            return vy0;
        }
        let w = (y - self.ys[j]) / (self.ys[j1] - self.ys[j]);
        vy0 + w * (vy1 - vy0)
    }

    /// CSV export, header `t,x,y,u`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,y,u")?;
        let nx = self.xs.len();
        for (t, slice) in self.times.iter().zip(&self.slices) {
            for (j, y) in self.ys.iter().enumerate() {
                for (i, x) in self.xs.iter().enumerate() {
                    writeln!(out, "{t},{x},{y},{}", slice[j * nx + i])?;
                }
            }
        }
        Ok(())
    }
}

/// Index of the grid interval containing `x` (clamped).
pub fn lower_index(xs: &[f64], x: f64) -> usize {
    if x <= xs[0] {
        return 0;
    }
    if x >= xs[xs.len() - 1] {
        return xs.len() - 2;
    }
    let dx = xs[1] - xs[0];
    (((x - xs[0]) / dx).floor() as usize).min(xs.len() - 2)
}

/// Piecewise-linear interpolation on a uniform grid, linear extrapolation
/// beyond the ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = lower_index(xs, x);
    let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
    ys[i] + w * (ys[i + 1] - ys[i])
}
