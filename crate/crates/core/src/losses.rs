//! Pairwise losses `f(model, observed)` and their derivatives in the model
//! argument.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayBase, DataMut, Dimension};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default shift for the Poisson loss.
pub const DEFAULT_POISSON_DELTA: f64 = 1e-10;
/// Default shift for the Beta-divergence loss.
pub const DEFAULT_BETA_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Gaussian,
    BernoulliLogit,
    Poisson,
    BetaDivergence,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Gaussian => "gaussian",
            LossKind::BernoulliLogit => "bernoulli",
            LossKind::Poisson => "poisson",
            LossKind::BetaDivergence => "beta",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "l2" => Ok(LossKind::Gaussian),
            "bernoulli" | "logit" => Ok(LossKind::BernoulliLogit),
            "poisson" => Ok(LossKind::Poisson),
            "beta" | "beta-divergence" => Ok(LossKind::BetaDivergence),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// A loss family together with the feasible-set data used by the gradient
/// solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T> {
    pub kind: LossKind,
    /// Shift `δ` applied to the model (and, for Beta, the data) argument.
    pub delta: T,
    /// Exponent `β ∉ {0, 1}` of the Beta divergence.
    pub beta: T,
    /// Whether factors are projected onto the nonnegative orthant.
    pub nonneg: bool,
    /// Bound `λ` on `‖a_r‖ ‖b_r‖ ‖ξ_r‖_H`.
    pub norm_bound: T,
    /// Gradient clipping bound `c`, applied per factor block.
    pub clip: Option<T>,
}

impl<T: Scalar> LossSpec<T> {
    pub fn gaussian() -> Self {
        LossSpec {
            kind: LossKind::Gaussian,
            delta: T::zero(),
            beta: T::lit(2.0),
            nonneg: false,
            norm_bound: T::lit(1e4),
            clip: None,
        }
    }

    pub fn bernoulli() -> Self {
        LossSpec {
            kind: LossKind::BernoulliLogit,
            ..Self::gaussian()
        }
    }

    pub fn poisson(delta: T) -> Self {
        LossSpec {
            kind: LossKind::Poisson,
            delta,
            nonneg: true,
            ..Self::gaussian()
        }
    }

    pub fn beta_divergence(beta: T, delta: T) -> Self {
        LossSpec {
            kind: LossKind::BetaDivergence,
            delta,
            beta,
            nonneg: true,
            ..Self::gaussian()
        }
    }

    /// Loss of the given kind with its default parameters.
    pub fn of_kind(kind: LossKind) -> Self {
        match kind {
            LossKind::Gaussian => Self::gaussian(),
            LossKind::BernoulliLogit => Self::bernoulli(),
            LossKind::Poisson => Self::poisson(T::lit(DEFAULT_POISSON_DELTA)),
            LossKind::BetaDivergence => Self::beta_divergence(T::lit(0.5), T::lit(DEFAULT_BETA_DELTA)),
        }
    }

    pub fn with_norm_bound(mut self, bound: T) -> Self {
        self.norm_bound = bound;
        self
    }

    pub fn with_clip(mut self, clip: Option<T>) -> Self {
        self.clip = clip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.norm_bound > T::zero()) {
            return bad(format!("norm bound must be positive, got {}", self.norm_bound));
        }
        if let Some(c) = self.clip {
            if !(c > T::zero()) {
                return bad(format!("clip bound must be positive, got {c}"));
            }
        }
        match self.kind {
            LossKind::Poisson if !(self.delta > T::zero()) => {
                bad(format!("poisson shift must be positive, got {}", self.delta))
            }
            LossKind::BetaDivergence => {
                if self.beta == T::zero() || self.beta == T::one() || !self.beta.is_finite() {
                    bad(format!("beta exponent must avoid 0 and 1, got {}", self.beta))
                } else if self.delta < T::zero() || (self.beta < T::one() && !(self.delta > T::zero())) {
                    bad(format!("beta divergence with beta < 1 needs a positive shift, got {}", self.delta))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn domain(&self, m: T, x: T) -> Result<()> {
        let ok = match self.kind {
            LossKind::Gaussian | LossKind::BernoulliLogit => m.is_finite() && x.is_finite(),
            LossKind::Poisson => m + self.delta > T::zero() && x >= T::zero(),
            LossKind::BetaDivergence => m + self.delta > T::zero() && x + self.delta >= T::zero(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::LossDomain {
                loss: self.kind.name(),
                model: m.as_f64(),
                observed: x.as_f64(),
            })
        }
    }

    /// `f(m, x)`.
    pub fn value(&self, m: T, x: T) -> Result<T> {
        self.domain(m, x)?;
        Ok(self.value_unchecked(m, x))
    }

    /// `∂f(m, x)/∂m`.
    pub fn dmodel(&self, m: T, x: T) -> Result<T> {
        self.domain(m, x)?;
        Ok(self.dmodel_unchecked(m, x))
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, m: T, x: T) -> T {
        match self.kind {
            LossKind::Gaussian => (m - x) * (m - x),
            LossKind::BernoulliLogit => softplus(m) - x * m,
            LossKind::Poisson => {
                let v = m + self.delta;
                if x == T::zero() {
                    v
                } else {
                    v - x * v.ln()
                }
            }
            LossKind::BetaDivergence => {
                let b = self.beta;
                let u = x + self.delta;
                let v = m + self.delta;
                (u.powf(b) + (b - T::one()) * v.powf(b) - b * u * v.powf(b - T::one())) / (b * (b - T::one()))
            }
        }
    }

    #[inline]
    pub(crate) fn dmodel_unchecked(&self, m: T, x: T) -> T {
        match self.kind {
            LossKind::Gaussian => T::lit(2.0) * (m - x),
            LossKind::BernoulliLogit => sigmoid(m) - x,
            LossKind::Poisson => T::one() - x / (m + self.delta),
            LossKind::BetaDivergence => {
                let u = x + self.delta;
                let v = m + self.delta;
                v.powf(self.beta - T::lit(2.0)) * (v - u)
            }
        }
    }

    /// Checks the domain of every pair, returning the first violation.
    pub(crate) fn check_all<'a>(&self, pairs: impl Iterator<Item = (&'a T, &'a T)>) -> Result<()>
    where
        T: 'a,
    {
        for (&m, &x) in pairs {
            self.domain(m, x)?;
        }
        Ok(())
    }
}

/// `log(1 + e^m)` without overflow.
#[inline]
fn softplus<T: Scalar>(m: T) -> T {
    if m > T::zero() {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<T: Scalar>(m: T) -> T {
    if m >= T::zero() {
        T::one() / (T::one() + (-m).exp())
    } else {
        let e = m.exp();
        e / (T::one() + e)
    }
}

/// Rescales `g` onto the ball of radius `c` when `‖g‖ > c`. Returns the
/// factor applied.
pub fn clip_gradient<T, S, D>(g: &mut ArrayBase<S, D>, c: T) -> T
where
    T: Scalar,
    S: DataMut<Elem = T>,
    D: Dimension,
{
    let norm = g.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
    if norm > c {
        let f = c / norm;
        g.mapv_inplace(|v| v * f);
        f
    } else {
        T::one()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn gaussian_unit_residual() {
        let l = LossSpec::<f64>::gaussian();
        assert_eq!(l.value(2.0, 1.0).unwrap(), 1.0);
        assert_eq!(l.dmodel(1.5, 1.5).unwrap(), 0.0);
    }

    #[test]
    fn bernoulli_at_zero() {
        let l = LossSpec::<f64>::bernoulli();
        assert!((l.value(0.0, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((l.value(0.0, 0.0).unwrap() - 0.6931472).abs() < 1e-7);
    }

    #[test]
    fn bernoulli_large_margin_is_finite() {
        let l = LossSpec::<f64>::bernoulli();
        let v = l.value(800.0, 1.0).unwrap();
        assert!(v.abs() < 1e-12);
        assert!((l.value(-800.0, 0.0).unwrap()).abs() < 1e-12);
        assert!((l.dmodel(800.0, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn poisson_values() {
        let l = LossSpec::<f64>::poisson(0.0);
        assert_eq!(l.value(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(l.dmodel(2.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn poisson_rejects_negative_model() {
        let l = LossSpec::<f64>::poisson(1e-10);
        assert!(matches!(l.value(-1.0, 2.0), Err(Error::LossDomain { .. })));
        assert!(l.dmodel(-1.0, 2.0).is_err());
    }

    #[test]
    fn beta_two_is_half_squared_error() {
        let l = LossSpec::<f64>::beta_divergence(2.0, 0.0);
        for &(m, x) in &[(0.3, 1.7), (2.0, 0.0), (5.5, 5.4), (0.01, 3.0), (1.0, 1.0)] {
            let v = l.value(m, x).unwrap();
            assert!((v - (x - m) * (x - m) / 2.0).abs() < 1e-12, "{m} {x}");
        }
    }

    #[test]
    fn clip_examples() {
        let mut g = array![0.06, 0.08];
        assert_eq!(clip_gradient(&mut g, 1.0), 1.0);
        assert_eq!(g, array![0.06, 0.08]);
        let mut g = array![3.0, 4.0];
        clip_gradient(&mut g, 1.0);
        assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn validation() {
        assert!(LossSpec::<f64>::poisson(0.0).validate().is_err());
        assert!(LossSpec::<f64>::beta_divergence(1.0, 1e-6).validate().is_err());
        assert!(LossSpec::<f64>::beta_divergence(0.5, 0.0).validate().is_err());
        assert!(LossSpec::<f64>::beta_divergence(0.5, 1e-6).validate().is_ok());
        assert!(LossSpec::<f64>::gaussian().with_clip(Some(-1.0)).validate().is_err());
    }
}
