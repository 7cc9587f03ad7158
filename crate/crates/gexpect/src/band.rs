//! Volatility and mean bands and their sublinear generator functions.
//!
//! A band [lo, hi] induces the generator G(a) = (hi^2 a+ - lo^2 a-) / 2 for
//! volatility, or G(a) = (hi a+ - lo a-) / 2 for means. Every nonlinearity in
//! the crate (the heat-type PDEs, the drift equation, worst-case tree steps)
//! reduces to these two functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volatility band [sigma_lo, sigma_hi], 0 <= sigma_lo <= sigma_hi, sigma_hi > 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolBand {
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl VolBand {
    pub fn new(sigma_lo: f64, sigma_hi: f64) -> Result<Self> {
        if !sigma_lo.is_finite() || !sigma_hi.is_finite() {
            return Err(Error::NonFinite("volatility band".into()));
        }
        if sigma_lo < 0.0 || sigma_hi <= 0.0 || sigma_lo > sigma_hi {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= sigma_lo <= sigma_hi and sigma_hi > 0, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        Ok(Self { sigma_lo, sigma_hi })
    }

    /// Degenerate band (classical volatility).
    pub fn degenerate(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma)
    }

    /// Generator G(a) = (sigma_hi^2 a+ - sigma_lo^2 a-) / 2.
    #[inline]
    pub fn g(&self, a: f64) -> f64 {
        0.5 * if a >= 0.0 {
            self.sigma_hi * self.sigma_hi * a
        } else {
            self.sigma_lo * self.sigma_lo * a
        }
    }

    /// Variance band [sigma_lo^2, sigma_hi^2].
    pub fn variance_band(&self) -> (f64, f64) {
        (
            self.sigma_lo * self.sigma_lo,
            self.sigma_hi * self.sigma_hi,
        )
    }

    /// Band from a variance interval.
    pub fn from_variance(var_lo: f64, var_hi: f64) -> Result<Self> {
        if var_lo < 0.0 || var_hi < var_lo {
            return Err(Error::InvalidParameter(format!(
                "invalid variance band [{var_lo}, {var_hi}]"
            )));
        }
        Self::new(var_lo.sqrt(), var_hi.sqrt())
    }

    /// Does this band contain `other`? (Wider band dominates: G >= G_other.)
    pub fn contains(&self, other: &VolBand) -> bool {
        self.sigma_lo <= other.sigma_lo && self.sigma_hi >= other.sigma_hi
    }
}

/// Mean band [mu_lo, mu_hi], mu_lo <= mu_hi.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanBand {
    pub mu_lo: f64,
    pub mu_hi: f64,
}

impl MeanBand {
    pub fn new(mu_lo: f64, mu_hi: f64) -> Result<Self> {
        if !mu_lo.is_finite() || !mu_hi.is_finite() {
            return Err(Error::NonFinite("mean band".into()));
        }
        if mu_lo > mu_hi {
            return Err(Error::InvalidParameter(format!(
                "need mu_lo <= mu_hi, got [{mu_lo}, {mu_hi}]"
            )));
        }
        Ok(Self { mu_lo, mu_hi })
    }

    /// Generator G(a) = (mu_hi a+ - mu_lo a-) / 2.
    #[inline]
    pub fn g(&self, a: f64) -> f64 {
        0.5 * if a >= 0.0 { self.mu_hi * a } else { self.mu_lo * a }
    }

    /// max over v in [mu_lo, mu_hi] of v * p, which is 2 G(p).
    #[inline]
    pub fn sup_velocity(&self, p: f64) -> f64 {
        if p >= 0.0 {
            self.mu_hi * p
        } else {
            self.mu_lo * p
        }
    }
}

/// G for a diagonal matrix argument under per-axis bands: sum of axis generators.
pub fn g_diag(diag: &[f64], bands: &[VolBand]) -> Result<f64> {
    if diag.len() != bands.len() {
        return Err(Error::DimensionMismatch {
            expected: bands.len(),
            got: diag.len(),
        });
    }
    Ok(diag.iter().zip(bands).map(|(a, b)| b.g(*a)).sum())
}
