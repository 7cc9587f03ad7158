//! Payoff functions: named builtins, custom tables, and growth declarations.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Shape declaration used to dispatch between the Gaussian fast paths and the
/// PDE fallback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeHint {
    Convex,
    Concave,
    General,
}

/// A scalar payoff: callback plus the polynomial growth exponent the caller
/// vouches for (used by the truncated-domain boundary policy) and an optional
/// shape declaration.
#[derive(Clone)]
pub struct Payoff {
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub growth: u32,
    pub hint: ShapeHint,
    pub name: String,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff")
            .field("name", &self.name)
            .field("growth", &self.growth)
            .field("hint", &self.hint)
            .finish()
    }
}

impl Payoff {
    pub fn new<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            f: Arc::new(f),
            growth: 2,
            hint: ShapeHint::General,
            name: "custom".into(),
        }
    }

    pub fn with_growth(mut self, m: u32) -> Self {
        self.growth = m;
        self
    }

    pub fn with_hint(mut self, hint: ShapeHint) -> Self {
        self.hint = hint;
        self
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// Sample onto a grid, rejecting NaN/infinite payoff values.
    pub fn sample(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let values: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("payoff '{}' on grid", self.name)));
        }
        Ok(values)
    }

    /// Call option (x - strike)+.
    pub fn call(strike: f64) -> Self {
        Self::new(move |x| (x - strike).max(0.0))
            .with_growth(1)
            .with_hint(ShapeHint::Convex)
            .named("call")
    }

    /// Put option (strike - x)+.
    pub fn put(strike: f64) -> Self {
        Self::new(move |x| (strike - x).max(0.0))
            .with_growth(1)
            .with_hint(ShapeHint::Convex)
            .named("put")
    }

    /// Monomial x^p.
    pub fn power(p: u32) -> Self {
        let hint = if p.is_multiple_of(2) && p > 0 {
            ShapeHint::Convex
        } else {
            ShapeHint::General
        };
        Self::new(move |x| x.powi(p as i32))
            .with_growth(p)
            .with_hint(hint)
            .named(&format!("power{p}"))
    }

    /// Capped absolute value min(|x|, cap).
    pub fn abs_cap(cap: f64) -> Self {
        Self::new(move |x| x.abs().min(cap))
            .with_growth(0)
            .with_hint(ShapeHint::General)
            .named("abs-cap")
    }

    /// Piecewise-linear payoff from a `(x, value)` table.
    pub fn from_table(table: PayoffTable) -> Self {
        let growth = 1;
        Self::new(move |x| table.eval(x))
            .with_growth(growth)
            .named("table")
    }
}

/// Sorted breakpoint table defining a piecewise-linear payoff. Outside the
/// table range the edge segments extend linearly.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffTable {
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl PayoffTable {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if xs.len() != vs.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                got: vs.len(),
            });
        }
        if xs.len() < 2 {
            return Err(Error::InvalidParameter(
                "payoff table needs at least two points".into(),
            ));
        }
        if xs.iter().chain(vs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("payoff table entry".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "payoff table x column must be strictly increasing".into(),
            ));
        }
        Ok(Self { xs, vs })
    }

    /// Parse the `x,value` per line text format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!(
                    "payoff table line {}: expected 'x,value'",
                    lineno + 1
                )));
            };
            let x: f64 = a.trim().parse().map_err(|_| {
                Error::Config(format!("payoff table line {}: bad x '{a}'", lineno + 1))
            })?;
            let v: f64 = b.trim().parse().map_err(|_| {
                Error::Config(format!("payoff table line {}: bad value '{b}'", lineno + 1))
            })?;
            xs.push(x);
            vs.push(v);
        }
        Self::new(xs, vs)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = if x <= self.xs[0] {
            0
        } else if x >= self.xs[n - 1] {
            n - 2
        } else {
            match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
                Ok(k) => k.min(n - 2),
                Err(k) => k - 1,
            }
        };
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.vs[i] + w * (self.vs[i + 1] - self.vs[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtins_evaluate() {
        assert_eq!(Payoff::call(1.0).eval(1.5), 0.5);
        assert_eq!(Payoff::call(1.0).eval(0.5), 0.0);
        assert_eq!(Payoff::put(1.0).eval(0.5), 0.5);
        assert_eq!(Payoff::power(4).eval(2.0), 16.0);
        assert_eq!(Payoff::abs_cap(1.0).eval(-3.0), 1.0);
    }

    #[test]
    fn table_parse_and_eval() {
        let t = PayoffTable::parse("# strangle\n-2,1\n-1,0\n1,0\n2,1\n").unwrap();
        assert_abs_diff_eq!(t.eval(-1.5), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.eval(0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.eval(3.0), 2.0, epsilon = 1e-15); // linear extension
    }

    #[test]
    fn table_rejects_malformed_input() {
        assert!(PayoffTable::parse("1,2\n1,3\n").is_err()); // not increasing
        assert!(PayoffTable::parse("1,2\n").is_err()); // too short
        assert!(PayoffTable::parse("a,b\n").is_err());
        assert!(PayoffTable::parse("1,2,3\n4,5\n").is_err());
        assert!(PayoffTable::parse("1,inf\n2,0\n").is_err());
    }

    #[test]
    fn sampling_rejects_non_finite_payoffs() {
        let bad = Payoff::new(|x| 1.0 / x);
        assert!(bad.sample(&[0.0, 1.0]).is_err());
        assert!(bad.sample(&[1.0, 2.0]).is_ok());
    }
}
