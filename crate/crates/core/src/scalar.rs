//! Scalar abstraction for the game-theoretic kernels.
//!
//! The Möbius transform, residual grids and LES allocations only need a
//! field plus a way to form combinatorial coefficients. Floating types build
//! those coefficients in log space (so `n!`-sized intermediates never
//! overflow) and exponentiate once per use; the exact rational type carries
//! them as big rationals.

use std::fmt::Debug;
use std::ops::Neg;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive};
use statrs::function::factorial::ln_factorial;

pub trait Scalar:
    Num + Clone + Neg<Output = Self> + PartialOrd + ToPrimitive + Debug + Send + Sync + 'static
{
    /// Multiplicative coefficient representation (log-magnitude for floats).
    type Coef: Clone + Debug + Send + Sync;

    fn from_usize(n: usize) -> Self;

    /// Lossy import used for random test tables and model outputs.
    fn from_f64(x: f64) -> Self;

    fn coef_one() -> Self::Coef;
    /// The binomial coefficient `C(n, k)`; `k <= n` is required.
    fn coef_binomial(n: usize, k: usize) -> Self::Coef;
    fn coef_mul(a: &Self::Coef, b: &Self::Coef) -> Self::Coef;
    fn coef_div(a: &Self::Coef, b: &Self::Coef) -> Self::Coef;
    fn coef_value(c: &Self::Coef) -> Self;

    fn abs_f64(&self) -> f64 {
        self.to_f64().map_or(f64::INFINITY, f64::abs)
    }
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n as u64) - ln_factorial(k as u64) - ln_factorial((n - k) as u64)
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            type Coef = f64;

            fn from_usize(n: usize) -> Self {
                n as $t
            }

            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn coef_one() -> f64 {
                0.0
            }

            fn coef_binomial(n: usize, k: usize) -> f64 {
                ln_binomial(n, k)
            }

            fn coef_mul(a: &f64, b: &f64) -> f64 {
                a + b
            }

            fn coef_div(a: &f64, b: &f64) -> f64 {
                a - b
            }

            fn coef_value(c: &f64) -> Self {
                c.exp() as $t
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for BigRational {
    type Coef = BigRational;

    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }

    fn from_f64(x: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(x).expect("finite value")
    }

    fn coef_one() -> Self {
        BigRational::one()
    }

    fn coef_binomial(n: usize, k: usize) -> Self {
        debug_assert!(k <= n);
        let k = k.min(n - k);
        let mut acc = BigInt::one();
        for j in 0..k {
            acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
        }
        BigRational::from_integer(acc)
    }

    fn coef_mul(a: &Self, b: &Self) -> Self {
        a * b
    }

    fn coef_div(a: &Self, b: &Self) -> Self {
        a / b
    }

    fn coef_value(c: &Self) -> Self {
        c.clone()
    }
}

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
