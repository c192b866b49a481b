//! Integer and fractional parts with respect to a positive modulus, and the
//! one-sided power functions used by every kernel.

use crate::error::{Error, Result};

/// Which half-line a one-sided power lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

/// `[x]_a = max{n : n a <= x}`.
pub fn int_part(x: f64, a: f64) -> Result<i64> {
    check_modulus(x, a)?;
    Ok(split(x, a).0 as i64)
}

/// `{x}_a = x - a [x]_a`, always in `[0, a)`.
pub fn frac_part(x: f64, a: f64) -> Result<f64> {
    check_modulus(x, a)?;
    Ok(split(x, a).1)
}

fn check_modulus(x: f64, a: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain(format!("modulus must be positive and finite, got {a}")));
    }
    if !x.is_finite() {
        return Err(Error::domain(format!("argument must be finite, got {x}")));
    }
    Ok(())
}

/// Unchecked `([x]_a, {x}_a)` with the integer part returned as a float.
///
/// `floor(x / a)` can be off by one after rounding, so the candidate is
/// corrected until `n a <= x < (n + 1) a` holds in floating point, and the
/// remainder is clamped into `[0, a)`.
#[inline]
pub fn split(x: f64, a: f64) -> (f64, f64) {
    let mut n = (x / a).floor();
    if n * a > x {
        n -= 1.0;
    } else if (n + 1.0) * a <= x {
        n += 1.0;
    }
    let mut r = (-a).mul_add(n, x);
    if r < 0.0 {
        r = 0.0;
    }
    if r >= a {
        n += 1.0;
        r = 0.0;
    }
    (n, r)
}

/// One-sided power `u_+^kappa` or `u_-^kappa`.
///
/// For `kappa == 0` these are the indicators of `(0, inf)` and `(-inf, 0]`.
/// For `kappa != 0` both sides vanish at `u == 0`; the point has measure zero
/// and the convention keeps grid evaluations finite.
pub fn signed_power(u: f64, kappa: f64, side: Side) -> Result<f64> {
    if !u.is_finite() || !kappa.is_finite() {
        return Err(Error::domain("signed_power needs finite inputs"));
    }
    Ok(signed_power_unchecked(u, kappa, side))
}

#[inline]
pub fn signed_power_unchecked(u: f64, kappa: f64, side: Side) -> f64 {
    if kappa == 0.0 {
        return match side {
            Side::Plus => (u > 0.0) as u8 as f64,
            Side::Minus => (u <= 0.0) as u8 as f64,
        };
    }
    let on_side = match side {
        Side::Plus => u > 0.0,
        Side::Minus => u < 0.0,
    };
    if on_side {
        u.abs().powf(kappa)
    } else {
        0.0
    }
}

/// `(-1)^n` style power of a sign `b in {-1, 1}` with integer exponent.
#[inline]
pub fn sign_power(b: f64, n: f64) -> f64 {
    if b > 0.0 || (n as i64) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Neumaier compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn int_part_examples() {
        assert_eq!(int_part(3.7, 1.0).unwrap(), 3);
        assert_eq!(int_part(-0.2, 1.0).unwrap(), -1);
        assert_eq!(int_part(5.0, 2.5).unwrap(), 2);
    }

    #[test]
    fn frac_part_examples() {
        assert!((frac_part(3.7, 1.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((frac_part(-0.2, 1.0).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(frac_part(5.0, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn bad_modulus_is_a_domain_error() {
        assert!(matches!(int_part(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(frac_part(1.0, -2.0), Err(Error::Domain(_))));
        assert!(matches!(frac_part(f64::NAN, 1.0), Err(Error::Domain(_))));
        assert!(matches!(int_part(f64::INFINITY, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn tiny_negative_argument_stays_below_modulus() {
        let (n, r) = split(-1e-18, 1.0);
        assert!((0.0..1.0).contains(&r));
        assert!(n * 1.0 <= -1e-18 || r == 0.0);
    }

    #[test]
    fn signed_power_examples() {
        assert_eq!(signed_power(-2.0, 0.0, Side::Plus).unwrap(), 0.0);
        assert_eq!(signed_power(-2.0, 0.0, Side::Minus).unwrap(), 1.0);
        assert_eq!(signed_power(4.0, 0.5, Side::Plus).unwrap(), 2.0);
        assert_eq!(signed_power(0.0, -0.125, Side::Plus).unwrap(), 0.0);
        assert_eq!(signed_power(0.0, -0.125, Side::Minus).unwrap(), 0.0);
        // (-inf, 0] includes the origin when kappa = 0
        assert_eq!(signed_power(0.0, 0.0, Side::Minus).unwrap(), 1.0);
        assert_eq!(signed_power(0.0, 0.0, Side::Plus).unwrap(), 0.0);
    }

    #[test]
    fn sign_power_handles_negative_exponents() {
        assert_eq!(sign_power(-1.0, -1.0), -1.0);
        assert_eq!(sign_power(-1.0, -2.0), 1.0);
        assert_eq!(sign_power(1.0, -3.0), 1.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-16);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-15).abs() < 1e-30);
    }
}
