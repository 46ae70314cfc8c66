//! Scalar abstraction shared by the adiabatic, thermal and oracle layers.
//!
//! Everything that evaluates Boltzmann sums or displaced-oscillator splittings
//! is generic over [`Real`]. Two families implement it: the hardware floats
//! (`f32`, `f64`) and [`Extended`], a binary floating point number carrying
//! [`EXTENDED_BITS`] bits of mantissa (about 57 significant decimal digits).

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Rem, Sub};
use std::str::FromStr;

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;

/// Mantissa width of [`Extended`] in bits.
pub const EXTENDED_BITS: usize = 192;

/// Real scalar usable by the generic numerics.
pub trait Real:
    num_traits::Num + Neg<Output = Self> + Clone + PartialOrd + fmt::Debug + Send + Sync + 'static
{
    /// Approximate significant decimal digits carried by the type.
    const DIGITS: u32;

    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn from_extended(x: &Extended) -> Self;
    fn to_extended(&self) -> Extended;

    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn is_finite(&self) -> bool;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn abs(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    fn half(&self) -> Self {
        self.clone() / Self::from_f64(2.0)
    }

    fn cosh(&self) -> Self {
        let e = self.abs().exp();
        (e.clone() + Self::one() / e).half()
    }

    fn tanh(&self) -> Self {
        // e^{-2|x|} never overflows
        let a = self.abs();
        let t = (-(a.clone() + a)).exp();
        let v = (Self::one() - t.clone()) / (Self::one() + t);
        if *self < Self::zero() {
            -v
        } else {
            v
        }
    }

    /// `ln cosh(x)`, finite for every finite argument.
    fn ln_cosh(&self) -> Self {
        let a = self.abs();
        let t = (-(a.clone() + a.clone())).exp();
        a + ((Self::one() + t).half()).ln()
    }

    /// `sech(x)` without forming `cosh(x)`.
    fn sech(&self) -> Self {
        let a = self.abs();
        let e = (-a.clone()).exp();
        let two = Self::from_f64(2.0);
        two * e.clone() / (Self::one() + e.clone() * e)
    }
}

macro_rules! impl_real_float {
    ($t:ty, $digits:expr) => {
        impl Real for $t {
            const DIGITS: u32 = $digits;

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(&self) -> f64 {
                *self as f64
            }
            fn from_extended(x: &Extended) -> Self {
                x.to_f64() as $t
            }
            fn to_extended(&self) -> Extended {
                Extended::from(*self as f64)
            }
            #[inline]
            fn exp(&self) -> Self {
                <$t>::exp(*self)
            }
            #[inline]
            fn ln(&self) -> Self {
                <$t>::ln(*self)
            }
            #[inline]
            fn sqrt(&self) -> Self {
                <$t>::sqrt(*self)
            }
            #[inline]
            fn is_finite(&self) -> bool {
                <$t>::is_finite(*self)
            }
            #[inline]
            fn abs(&self) -> Self {
                <$t>::abs(*self)
            }
            #[inline]
            fn cosh(&self) -> Self {
                <$t>::cosh(*self)
            }
            #[inline]
            fn tanh(&self) -> Self {
                <$t>::tanh(*self)
            }
        }
    };
}

impl_real_float!(f32, 6);
impl_real_float!(f64, 15);

type Big = FBig<HalfEven, 2>;

/// Fixed-precision binary float with [`EXTENDED_BITS`] mantissa bits.
///
/// Every value is rounded to the same precision, so arithmetic never runs
/// with unbounded precision and never overflows in practice (the exponent is
/// a machine word).
#[derive(Clone, PartialEq, PartialOrd)]
pub struct Extended(Big);

impl Extended {
    fn wrap(x: Big) -> Self {
        Extended(x.with_precision(EXTENDED_BITS).value())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }
}

impl From<f64> for Extended {
    fn from(x: f64) -> Self {
        let b = Big::try_from(x).unwrap_or_else(|_| {
            if x.is_nan() {
                panic!("NaN cannot be represented as an extended-precision value")
            } else if x > 0.0 {
                Big::INFINITY
            } else {
                Big::NEG_INFINITY
            }
        });
        Extended::wrap(b)
    }
}

impl fmt::Debug for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Extended({:e})", self.to_f64())
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dec: FBig<HalfEven, 10> = self.0.clone().with_base_and_precision::<10>(60).value();
        write!(f, "{dec}")
    }
}

impl FromStr for Extended {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let dec = FBig::<HalfEven, 10>::from_str(s.trim()).map_err(|e| e.to_string())?;
        Ok(Extended::wrap(dec.with_base_and_precision::<2>(EXTENDED_BITS).value()))
    }
}

macro_rules! forward_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr for Extended {
            type Output = Extended;
            #[inline]
            fn $method(self, rhs: Extended) -> Extended {
                Extended::wrap(self.0 $op rhs.0)
            }
        }
        impl<'a> $tr<&'a Extended> for &'a Extended {
            type Output = Extended;
            #[inline]
            fn $method(self, rhs: &'a Extended) -> Extended {
                Extended::wrap(&self.0 $op &rhs.0)
            }
        }
    };
}

forward_binop!(Add, add, +);
forward_binop!(Sub, sub, -);
forward_binop!(Mul, mul, *);
forward_binop!(Div, div, /);

impl Rem for Extended {
    type Output = Extended;
    fn rem(self, rhs: Extended) -> Extended {
        let q = Extended::wrap((&self.0 / &rhs.0).trunc());
        self - q * rhs
    }
}

impl Neg for Extended {
    type Output = Extended;
    fn neg(self) -> Extended {
        Extended(-self.0)
    }
}

impl num_traits::Zero for Extended {
    fn zero() -> Self {
        Extended::wrap(Big::ZERO)
    }
    fn is_zero(&self) -> bool {
        self.0 == Big::ZERO
    }
}

impl num_traits::One for Extended {
    fn one() -> Self {
        Extended::wrap(Big::ONE)
    }
}

impl num_traits::Num for Extended {
    type FromStrRadixErr = String;

    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        if radix != 10 {
            return Err(format!("unsupported radix {radix}"));
        }
        Extended::from_str(s)
    }
}

impl Real for Extended {
    const DIGITS: u32 = 57;

    fn from_f64(x: f64) -> Self {
        Extended::from(x)
    }
    fn to_f64(&self) -> f64 {
        Extended::to_f64(self)
    }
    fn from_extended(x: &Extended) -> Self {
        x.clone()
    }
    fn to_extended(&self) -> Extended {
        self.clone()
    }
    fn exp(&self) -> Self {
        Extended::wrap(self.0.exp())
    }
    fn ln(&self) -> Self {
        Extended::wrap(self.0.ln())
    }
    fn sqrt(&self) -> Self {
        Extended::wrap(self.0.sqrt())
    }
    fn is_finite(&self) -> bool {
        !self.0.repr().is_infinite()
    }
    fn abs(&self) -> Self {
        match self.0.partial_cmp(&Big::ZERO) {
            Some(Ordering::Less) => -self.clone(),
            _ => self.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::{One, Zero};

    #[test]
    fn extended_keeps_digits_f64_drops() {
        let one = Extended::one();
        let tiny = Extended::from(1e-40);
        let back = (one.clone() + tiny.clone()) - one;
        assert!((back.to_f64() - 1e-40).abs() < 1e-55);
        assert_eq!((1.0f64 + 1e-40) - 1.0, 0.0);
    }

    #[test]
    fn extended_transcendentals_match_f64() {
        for &x in &[-3.5, -0.25, 0.0, 0.7, 12.0] {
            let e = Extended::from(x);
            assert!((Real::exp(&e).to_f64() - x.exp()).abs() <= 1e-15 * x.exp());
            assert!((Real::cosh(&e).to_f64() - x.cosh()).abs() <= 1e-15 * x.cosh());
            assert!((Real::tanh(&e).to_f64() - x.tanh()).abs() <= 1e-15);
            assert!((Real::sech(&e).to_f64() - 1.0 / x.cosh()).abs() <= 1e-15);
            assert!((Real::ln_cosh(&e).to_f64() - x.cosh().ln()).abs() <= 1e-14);
        }
        let two = Extended::from(2.0);
        assert!((Real::ln(&two).to_f64() - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((Real::sqrt(&two).to_f64() - std::f64::consts::SQRT_2).abs() < 1e-16);
    }

    #[test]
    fn extended_survives_huge_exponents() {
        let x = Extended::from(-2000.0);
        let e = Real::exp(&x);
        assert!(e > Extended::zero());
        assert!(Real::is_finite(&e));
        let back = Real::ln(&e).to_f64();
        assert!((back + 2000.0).abs() < 1e-12);
        assert_eq!((-2000.0f64).exp(), 0.0);
    }

    #[test]
    fn parse_and_display_round_trip() {
        let x: Extended = "0.1234567890123456789012345678901234567890123".parse().unwrap();
        let third = Extended::one() / Extended::from(3.0);
        assert!(format!("{third}").starts_with("0.33333333333333333333333333333333333333333333333"));
        assert!((x.to_f64() - 0.12345678901234568).abs() < 1e-17);
        assert_eq!(Extended::from(7.5) % Extended::from(2.0), Extended::from(1.5));
    }

    #[test]
    fn generic_helpers_agree_across_types() {
        fn probe<R: Real>(x: f64) -> f64 {
            let v = R::from_f64(x);
            (v.sech() * v.cosh()).to_f64()
        }
        for &x in &[0.0, 1.0, 30.0] {
            assert!((probe::<f64>(x) - 1.0).abs() < 1e-12);
            assert!((probe::<Extended>(x) - 1.0).abs() < 1e-15);
            assert!((probe::<f32>(x) - 1.0).abs() < 1e-5);
        }
    }
}
