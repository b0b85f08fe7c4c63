//! The prime field `F_p` with `p = 2^64 - 2^32 + 1`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// `p = 2^64 - 2^32 + 1`.
pub const MODULUS: u64 = 0xFFFF_FFFF_0000_0001;
/// `2^64 mod p`.
const EPSILON: u64 = 0xFFFF_FFFF;

#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldElement(u64);

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F({})", self.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    /// Reduces an arbitrary `u64`.
    #[inline]
    pub const fn new(v: u64) -> Self {
        Self(if v >= MODULUS { v - MODULUS } else { v })
    }

    /// Returns `None` unless `v < p`.
    pub fn from_canonical(v: u64) -> Option<Self> {
        (v < MODULUS).then_some(Self(v))
    }

    #[inline]
    pub const fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Reduces a 128-bit value using `2^64 = 2^32 - 1 (mod p)`.
    #[inline]
    fn reduce128(x: u128) -> Self {
        let lo = x as u64;
        let hi = (x >> 64) as u64;
        let hi_hi = hi >> 32;
        let hi_lo = hi & EPSILON;
        // x = lo + hi_lo * 2^64 + hi_hi * 2^96, with 2^96 = -1.
        let (mut t0, borrow) = lo.overflowing_sub(hi_hi);
        if borrow {
            t0 = t0.wrapping_sub(EPSILON);
        }
        let t1 = hi_lo * EPSILON;
        let (res, carry) = t0.overflowing_add(t1);
        let res = if carry { res.wrapping_add(EPSILON) } else { res };
        Self::new(res)
    }

    pub fn add(self, rhs: Self) -> Self {
        let (sum, carry) = self.0.overflowing_add(rhs.0);
        let (sum, carry2) = if carry {
            sum.overflowing_add(EPSILON)
        } else {
            (sum, false)
        };
        debug_assert!(!carry2);
        Self::new(sum)
    }

    pub fn sub(self, rhs: Self) -> Self {
        let (diff, borrow) = self.0.overflowing_sub(rhs.0);
        if borrow {
            Self(diff.wrapping_sub(EPSILON))
        } else {
            Self(diff)
        }
    }

    pub fn mul(self, rhs: Self) -> Self {
        Self::reduce128(self.0 as u128 * rhs.0 as u128)
    }

    pub fn neg(self) -> Self {
        Self::ZERO.sub(self)
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse by Fermat's little theorem.
    pub fn inv(self) -> Result<Self, super::CircuitError> {
        if self.is_zero() {
            return Err(super::CircuitError::ZeroInverse);
        }
        Ok(self.pow(MODULUS - 2))
    }
}

impl From<u64> for FieldElement {
    fn from(v: u64) -> Self {
        Self::new(v)
    }
}

impl Add for FieldElement {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        FieldElement::add(self, rhs)
    }
}

impl Sub for FieldElement {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        FieldElement::sub(self, rhs)
    }
}

impl Mul for FieldElement {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        FieldElement::mul(self, rhs)
    }
}

impl Neg for FieldElement {
    type Output = Self;
    fn neg(self) -> Self {
        FieldElement::neg(self)
    }
}

impl std::iter::Sum for FieldElement {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SplitMix64;
    use num_bigint::BigUint;

    fn big(v: u64) -> BigUint {
        BigUint::from(v)
    }

    #[test]
    fn wraparound_and_inverse() {
        assert_eq!(
            FieldElement::new(MODULUS - 1) + FieldElement::ONE,
            FieldElement::ZERO
        );
        let two = FieldElement::from(2);
        assert_eq!(two * two.inv().unwrap(), FieldElement::ONE);
        assert!(FieldElement::ZERO.inv().is_err());
        assert_eq!(
            FieldElement::ZERO - FieldElement::ONE,
            FieldElement::new(MODULUS - 1)
        );
        assert_eq!(FieldElement::new(MODULUS), FieldElement::ZERO);
        assert!(FieldElement::from_canonical(MODULUS).is_none());
    }

    #[test]
    fn matches_bigint_reference() {
        let p = big(MODULUS);
        let mut rng = SplitMix64::new(2024);
        let edge = [
            0,
            1,
            2,
            EPSILON,
            EPSILON + 1,
            MODULUS - 1,
            MODULUS - 2,
            1 << 63,
            (1 << 32) - 2,
        ];
        for i in 0..1000 {
            let a = if i < edge.len() {
                edge[i]
            } else {
                rng.next_u64() % MODULUS
            };
            let b = if i < edge.len() {
                edge[edge.len() - 1 - i]
            } else {
                rng.next_u64() % MODULUS
            };
            let (fa, fb) = (FieldElement::new(a), FieldElement::new(b));
            assert_eq!(big((fa + fb).value()), (big(a) + big(b)) % &p);
            assert_eq!(big((fa * fb).value()), (big(a) * big(b)) % &p);
            assert_eq!(big((fa - fb).value()), (big(a) + &p - big(b)) % &p);
            if a != 0 {
                assert_eq!(fa * fa.inv().unwrap(), FieldElement::ONE);
            }
        }
    }
}
