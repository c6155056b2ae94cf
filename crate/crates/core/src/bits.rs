//! A minimal packed bit vector. Boolean shares of many parallel circuit
//! instances are stored one bit per instance, 64 per word.

use std::ops::{BitAndAssign, BitXorAssign};

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut bits = Bits {
            words: vec![u64::MAX; words_for(len)],
            len,
        };
        bits.clear_tail();
        bits
    }

    pub fn from_bools(values: &[bool]) -> Self {
        let mut bits = Bits::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            bits.set(i, v);
        }
        bits
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut bits = Bits {
            words: (0..words_for(len)).map(|_| rng.random()).collect(),
            len,
        };
        bits.clear_tail();
        bits
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        debug_assert!(index < self.len);
        (self.words[index / 64] >> (index % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, index: usize, value: bool) {
        debug_assert!(index < self.len);
        let word = &mut self.words[index / 64];
        let mask = 1u64 << (index % 64);
        if value {
            *word |= mask;
        } else {
            *word &= !mask;
        }
    }

    pub fn push(&mut self, value: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn not_assign(&mut self) {
        for w in &mut self.words {
            *w = !*w;
        }
        self.clear_tail();
    }

    /// Appends all bits of `other`.
    pub fn extend_from(&mut self, other: &Bits) {
        if self.len % 64 == 0 {
            self.words.truncate(words_for(self.len));
            self.words.extend_from_slice(&other.words);
            self.len += other.len;
            return;
        }
        for bit in other.iter() {
            self.push(bit);
        }
    }

    /// Copies `len` bits starting at `start`.
    pub fn slice(&self, start: usize, len: usize) -> Bits {
        assert!(start + len <= self.len, "bit slice out of range");
        let mut out = Bits::zeros(len);
        let shift = start % 64;
        let first = start / 64;
        for (i, word) in out.words.iter_mut().enumerate() {
            let lo = self.words.get(first + i).copied().unwrap_or(0);
            *word = if shift == 0 {
                lo
            } else {
                let hi = self.words.get(first + i + 1).copied().unwrap_or(0);
                (lo >> shift) | (hi << (64 - shift))
            };
        }
        out.clear_tail();
        out
    }

    /// Packs into bytes, least significant bit first; `ceil(len / 8)` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nbytes = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(nbytes);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(nbytes);
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Bits> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format(format!(
                "expected {} bytes for {len} bits, found {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let mut words = Vec::with_capacity(words_for(len));
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            words.push(u64::from_le_bytes(buf));
        }
        let mut bits = Bits { words, len };
        if bits.tail_dirty() {
            return Err(Error::Format("padding bits are not zero".into()));
        }
        bits.clear_tail();
        Ok(bits)
    }

    fn tail_dirty(&self) -> bool {
        let rem = self.len % 64;
        rem != 0 && self.words.last().is_some_and(|w| w >> rem != 0)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl BitXorAssign<&Bits> for Bits {
    fn bitxor_assign(&mut self, rhs: &Bits) {
        assert_eq!(self.len, rhs.len, "bit length mismatch");
        for (a, b) in self.words.iter_mut().zip(&rhs.words) {
            *a ^= b;
        }
    }
}

impl BitAndAssign<&Bits> for Bits {
    fn bitand_assign(&mut self, rhs: &Bits) {
        assert_eq!(self.len, rhs.len, "bit length mismatch");
        for (a, b) in self.words.iter_mut().zip(&rhs.words) {
            *a &= b;
        }
    }
}

impl FromIterator<bool> for Bits {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        let mut bits = Bits::default();
        for b in iter {
            bits.push(b);
        }
        bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tail_is_masked() {
        let mut b = Bits::zeros(70);
        b.not_assign();
        assert_eq!(b.count_ones(), 70);
        assert_eq!(b.to_bytes().len(), 9);
        assert_eq!(b.to_bytes()[8], 0b0011_1111);
    }

    #[test]
    fn from_bytes_rejects_dirty_padding() {
        assert!(Bits::from_bytes(&[0xff], 3).is_err());
        assert!(Bits::from_bytes(&[0x07], 3).is_ok());
        assert!(Bits::from_bytes(&[0x07, 0], 3).is_err());
    }

    proptest! {
        #[test]
        fn slice_and_extend_agree(values in prop::collection::vec(any::<bool>(), 0..300), cut in 0usize..300) {
            let cut = cut.min(values.len());
            let all = Bits::from_bools(&values);
            let mut joined = all.slice(0, cut);
            joined.extend_from(&all.slice(cut, values.len() - cut));
            prop_assert_eq!(&joined, &all);
            let back = Bits::from_bytes(&all.to_bytes(), values.len()).unwrap();
            prop_assert_eq!(back.iter().collect::<Vec<_>>(), values);
        }
    }
}
