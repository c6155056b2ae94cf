//! Arithmetic in `Z_M` with `M = 2^m`, plus the signed banding used throughout
//! the inference pipeline.
//!
//! Residues `0..=M/2` represent non-negative integers and `M/2 + 1..M` represent
//! negative ones, so the signed range is `[-(2^(m-1) - 1), 2^(m-1)]`. This is
//! deliberately not two's complement: the boundary value `M/2` decodes to `+2^(m-1)`.

use std::fmt;

use crate::error::{Error, Result};

/// Bit width of the ring, one of 8, 16, 32 or 64.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RingModulus {
    bits: u32,
}

impl RingModulus {
    pub const M8: RingModulus = RingModulus { bits: 8 };
    pub const M16: RingModulus = RingModulus { bits: 16 };
    pub const M32: RingModulus = RingModulus { bits: 32 };
    pub const M64: RingModulus = RingModulus { bits: 64 };

    pub const ALL: [RingModulus; 4] = [Self::M8, Self::M16, Self::M32, Self::M64];

    pub fn new(bits: u32) -> Result<Self> {
        match bits {
            8 | 16 | 32 | 64 => Ok(RingModulus { bits }),
            other => Err(Error::UnsupportedModulus(other)),
        }
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.bits
    }

    /// Number of bytes used to pack one element on the wire.
    #[inline]
    pub fn byte_width(self) -> usize {
        (self.bits / 8) as usize
    }

    #[inline]
    pub fn mask(self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// `⌊M/2⌋`, the largest residue of the non-negative band.
    #[inline]
    pub fn half(self) -> u64 {
        1u64 << (self.bits - 1)
    }

    /// `M` itself, as a wide integer.
    pub fn order(self) -> u128 {
        1u128 << self.bits
    }

    /// Largest representable signed value, `2^(m-1)`.
    pub fn max_signed(self) -> i128 {
        1i128 << (self.bits - 1)
    }

    /// Smallest representable signed value, `-(2^(m-1) - 1)`.
    pub fn min_signed(self) -> i128 {
        -((1i128 << (self.bits - 1)) - 1)
    }

    #[inline]
    pub fn reduce(self, value: u64) -> u64 {
        value & self.mask()
    }

    #[inline]
    pub fn add(self, x: u64, y: u64) -> u64 {
        x.wrapping_add(y) & self.mask()
    }

    #[inline]
    pub fn sub(self, x: u64, y: u64) -> u64 {
        x.wrapping_sub(y) & self.mask()
    }

    #[inline]
    pub fn mul(self, x: u64, y: u64) -> u64 {
        x.wrapping_mul(y) & self.mask()
    }

    #[inline]
    pub fn neg(self, x: u64) -> u64 {
        x.wrapping_neg() & self.mask()
    }

    /// Encodes a signed integer: `a` if `a >= 0`, otherwise `M + a`.
    pub fn encode(self, value: i128) -> Result<u64> {
        if value < self.min_signed() || value > self.max_signed() {
            return Err(Error::Range {
                value,
                min: self.min_signed(),
                max: self.max_signed(),
                bits: self.bits,
            });
        }
        Ok((value as u64) & self.mask())
    }

    /// Encodes an `i64`; see [`RingModulus::encode`].
    pub fn encode_i64(self, value: i64) -> Result<u64> {
        self.encode(value as i128)
    }

    /// Decodes a residue: `x` if `x <= M/2`, otherwise `x - M`.
    pub fn decode(self, value: u64) -> i128 {
        let value = value & self.mask();
        if value <= self.half() {
            value as i128
        } else {
            value as i128 - self.order() as i128
        }
    }

    /// Decodes into an `i64`. Only `+2^63` at m = 64 does not fit.
    pub fn decode_i64(self, value: u64) -> Result<i64> {
        let decoded = self.decode(value);
        i64::try_from(decoded).map_err(|_| Error::Overflow(format!("{decoded} does not fit in i64")))
    }

    /// Whether `x` lies in the non-negative band `0..=M/2`.
    #[inline]
    pub fn is_nonnegative(self, value: u64) -> bool {
        (value & self.mask()) <= self.half()
    }

    pub fn check_same(self, other: RingModulus) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ModulusMismatch {
                left: self.bits,
                right: other.bits,
            })
        }
    }
}

impl fmt::Display for RingModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z_2^{}", self.bits)
    }
}

/// A signed integer in the banded range of some ring.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedInt(pub i128);

/// An element of `Z_M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u64,
    modulus: RingModulus,
}

impl RingElement {
    /// Builds an element, reducing `value` modulo `M`.
    pub fn new(value: u64, modulus: RingModulus) -> Self {
        RingElement {
            value: modulus.reduce(value),
            modulus,
        }
    }

    pub fn zero(modulus: RingModulus) -> Self {
        RingElement { value: 0, modulus }
    }

    #[inline]
    pub fn value(self) -> u64 {
        self.value
    }

    #[inline]
    pub fn modulus(self) -> RingModulus {
        self.modulus
    }

    pub fn add(self, other: RingElement) -> Result<RingElement> {
        self.modulus.check_same(other.modulus)?;
        Ok(RingElement::new(self.modulus.add(self.value, other.value), self.modulus))
    }

    pub fn sub(self, other: RingElement) -> Result<RingElement> {
        self.modulus.check_same(other.modulus)?;
        Ok(RingElement::new(self.modulus.sub(self.value, other.value), self.modulus))
    }

    pub fn mul(self, other: RingElement) -> Result<RingElement> {
        self.modulus.check_same(other.modulus)?;
        Ok(RingElement::new(self.modulus.mul(self.value, other.value), self.modulus))
    }

    /// The `i`-th least significant bit.
    pub fn bit(self, index: u32) -> Result<bool> {
        if index >= self.modulus.bits {
            return Err(Error::BitIndex {
                index,
                bits: self.modulus.bits,
            });
        }
        Ok((self.value >> index) & 1 == 1)
    }
}

impl fmt::Display for RingElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod 2^{})", self.value, self.modulus.bits)
    }
}

/// Encodes `a` into `Z_M`.
pub fn encode(value: SignedInt, modulus: RingModulus) -> Result<RingElement> {
    Ok(RingElement::new(modulus.encode(value.0)?, modulus))
}

/// Decodes `x` back to a signed integer.
pub fn decode(x: RingElement) -> SignedInt {
    SignedInt(x.modulus.decode(x.value))
}

/// Encodes a slice of signed integers.
pub fn encode_all(modulus: RingModulus, values: &[i64]) -> Result<Vec<u64>> {
    values.iter().map(|&v| modulus.encode_i64(v)).collect()
}

/// Decodes a slice of residues into `i64`s.
pub fn decode_all(modulus: RingModulus, values: &[u64]) -> Result<Vec<i64>> {
    values.iter().map(|&v| modulus.decode_i64(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const M8: RingModulus = RingModulus::M8;

    fn el(v: u64) -> RingElement {
        RingElement::new(v, M8)
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode(SignedInt(5), M8).unwrap().value(), 5);
        assert_eq!(encode(SignedInt(-1), M8).unwrap().value(), 255);
        assert!(matches!(encode(SignedInt(-128), M8), Err(Error::Range { .. })));
        assert_eq!(encode(SignedInt(128), M8).unwrap().value(), 128);
        assert_eq!(encode(SignedInt(-127), M8).unwrap().value(), 129);
        assert!(encode(SignedInt(129), M8).is_err());
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode(el(0)), SignedInt(0));
        assert_eq!(decode(el(200)), SignedInt(-56));
        assert_eq!(decode(el(128)), SignedInt(128));
        assert_eq!(decode(el(129)), SignedInt(-127));
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(el(200).add(el(100)).unwrap().value(), 44);
        assert_eq!(el(16).mul(el(16)).unwrap().value(), 0);
        assert_eq!(el(0).sub(el(1)).unwrap().value(), 255);
        let wide = RingElement::new(1, RingModulus::M16);
        assert!(matches!(el(1).add(wide), Err(Error::ModulusMismatch { .. })));
    }

    #[test]
    fn bit_examples() {
        assert!(el(5).bit(0).unwrap());
        assert!(!el(5).bit(1).unwrap());
        for m in RingModulus::ALL {
            let top = RingElement::new(m.half(), m);
            assert!(top.bit(m.bits() - 1).unwrap());
            assert!(matches!(top.bit(m.bits()), Err(Error::BitIndex { .. })));
        }
    }

    #[test]
    fn modulus_validation() {
        assert!(RingModulus::new(12).is_err());
        assert_eq!(RingModulus::new(32).unwrap().mask(), u32::MAX as u64);
        assert_eq!(RingModulus::M64.mask(), u64::MAX);
    }

    #[test]
    fn bands_partition_ring_m8() {
        let nonneg = (0u64..256).filter(|&x| M8.is_nonnegative(x)).count();
        assert_eq!(nonneg, 129);
        for x in 0u64..256 {
            let d = M8.decode(x);
            assert_eq!(d >= 0, M8.is_nonnegative(x));
            assert_eq!(M8.encode(d).unwrap(), x);
        }
    }

    #[test]
    fn m64_extremes() {
        let m = RingModulus::M64;
        assert_eq!(m.decode(m.half()), 1i128 << 63);
        assert!(m.decode_i64(m.half()).is_err());
        assert_eq!(m.decode_i64(u64::MAX).unwrap(), -1);
        assert_eq!(m.encode(-(1i128 << 63) + 1).unwrap(), m.half() + 1);
    }

    proptest! {
        #[test]
        fn decode_encode_roundtrip(bits in prop::sample::select(vec![8u32, 16, 32, 64]), raw in any::<u64>()) {
            let m = RingModulus::new(bits).unwrap();
            let x = m.reduce(raw);
            prop_assert_eq!(m.encode(m.decode(x)).unwrap(), x);
        }

        #[test]
        fn encoding_is_additive(a in -30000i64..30000, b in -30000i64..30000) {
            let m = RingModulus::M32;
            let sum = m.add(m.encode_i64(a).unwrap(), m.encode_i64(b).unwrap());
            prop_assert_eq!(m.decode_i64(sum).unwrap(), a + b);
        }

        #[test]
        fn encoding_is_multiplicative(a in -3000i64..3000, b in -3000i64..3000) {
            let m = RingModulus::M32;
            let prod = m.mul(m.encode_i64(a).unwrap(), m.encode_i64(b).unwrap());
            prop_assert_eq!(m.decode_i64(prod).unwrap(), a * b);
        }
    }
}
