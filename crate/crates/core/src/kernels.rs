//! Reproducing kernels on `[0, 1]` and their Gram matrices.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The two parameter-free kernels supported for the functional mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSpec {
    /// `exp(-(x - y)^2)`.
    Radial,
    /// Reproducing kernel of the second-order Sobolev space built from
    /// scaled Bernoulli polynomials.
    Bernoulli,
}

impl KernelSpec {
    pub fn name(self) -> &'static str {
        match self {
            KernelSpec::Radial => "radial",
            KernelSpec::Bernoulli => "bernoulli",
        }
    }

    /// Evaluates the kernel, rejecting arguments outside `[0, 1]` for the
    /// Bernoulli kernel.
    pub fn eval<T: Scalar>(self, x: T, y: T) -> Result<T> {
        if self == KernelSpec::Bernoulli {
            check_unit(x)?;
            check_unit(y)?;
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluates the kernel without domain checks.
    #[inline]
    pub fn eval_unchecked<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            KernelSpec::Radial => {
                let d = x - y;
                (-(d * d)).exp()
            }
            KernelSpec::Bernoulli => {
                T::one() + k1(x) * k1(y) + k2(x) * k2(y) - k4((x - y).abs())
            }
        }
    }

    /// Gram matrix with entry `(a, b) = K(s[a], u[b])`.
    pub fn gram<T: Scalar>(self, s: &[T], u: &[T]) -> Result<Array2<T>> {
        if self == KernelSpec::Bernoulli {
            for &v in s.iter().chain(u) {
                check_unit(v)?;
            }
        }
        Ok(Array2::from_shape_fn((s.len(), u.len()), |(a, b)| {
            self.eval_unchecked(s[a], u[b])
        }))
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Bernoulli
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "radial" | "gaussian" | "rbf" => Ok(KernelSpec::Radial),
            "bernoulli" => Ok(KernelSpec::Bernoulli),
            other => Err(Error::InvalidConfig(format!("unknown kernel `{other}`"))),
        }
    }
}

fn check_unit<T: Scalar>(v: T) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::KernelDomain(v.as_f64()))
    }
}

#[inline]
fn k1<T: Scalar>(x: T) -> T {
    x - T::lit(0.5)
}

#[inline]
fn k2<T: Scalar>(x: T) -> T {
    let a = k1(x);
    (a * a - T::lit(1.0 / 12.0)) / T::lit(2.0)
}

#[inline]
fn k4<T: Scalar>(x: T) -> T {
    let a = k1(x);
    let a2 = a * a;
    (a2 * a2 - a2 / T::lit(2.0) + T::lit(7.0 / 240.0)) / T::lit(24.0)
}
