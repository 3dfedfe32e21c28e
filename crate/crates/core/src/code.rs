//! Bit-packed binary hashing codes.

use std::fmt;

use crate::error::{Error, Result};

/// A `K`-bit code packed little-endian into 64-bit words: bit `k` lives in
/// word `k / 64` at position `k % 64`. Padding bits are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    bits: usize,
    words: Vec<u64>,
}

pub fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

impl BinaryCode {
    pub fn zeros(bits: usize) -> Self {
        BinaryCode { bits, words: vec![0; words_for(bits)] }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            code.set(k, b);
        }
        code
    }

    pub fn from_fn(bits: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut code = Self::zeros(bits);
        for k in 0..bits {
            if f(k) {
                code.words[k / 64] |= 1 << (k % 64);
            }
        }
        code
    }

    pub fn from_words(bits: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != words_for(bits) {
            return Err(Error::Shape(format!("{} words for a {bits}-bit code", words.len())));
        }
        if !bits.is_multiple_of(64) {
            if let Some(&last) = words.last() {
                if last >> (bits % 64) != 0 {
                    return Err(Error::Format("nonzero padding bits in code".into()));
                }
            }
        }
        Ok(BinaryCode { bits, words })
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.bits, "bit {k} out of range for {}-bit code", self.bits);
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn set(&mut self, k: usize, value: bool) {
        assert!(k < self.bits, "bit {k} out of range for {}-bit code", self.bits);
        let mask = 1u64 << (k % 64);
        if value {
            self.words[k / 64] |= mask;
        } else {
            self.words[k / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn hamming(&self, other: &BinaryCode) -> u32 {
        assert_eq!(self.bits, other.bits, "hamming distance between codes of different length");
        hamming_words(&self.words, &other.words)
    }

    pub fn xor(&self, other: &BinaryCode) -> BinaryCode {
        assert_eq!(self.bits, other.bits);
        BinaryCode { bits: self.bits, words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.bits).map(|k| if self.get(k) { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.bits).map(|k| self.get(k)).collect()
    }

    /// Hex of the packed bytes: byte `i` holds bits `8i..8i+8`, least
    /// significant bit first; `ceil(K / 8)` bytes, two lowercase digits each.
    pub fn to_hex(&self) -> String {
        let nbytes = self.bits.div_ceil(8);
        (0..nbytes).map(|i| format!("{:02x}", (self.words[i / 8] >> ((i % 8) * 8)) as u8)).collect()
    }

    pub fn from_hex(bits: usize, hex: &str) -> Result<Self> {
        let nbytes = bits.div_ceil(8);
        if hex.len() != nbytes * 2 {
            return Err(Error::Format(format!("hex code `{hex}` has wrong length for {bits} bits")));
        }
        let mut words = vec![0u64; words_for(bits)];
        for i in 0..nbytes {
            let byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| Error::Format(format!("bad hex `{hex}`")))?;
            words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        Self::from_words(bits, words)
    }
}

impl fmt::Debug for BinaryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.bits).map(|k| if self.get(k) { '1' } else { '0' }).collect();
        write!(f, "BinaryCode({s})")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn padding_stays_zero() {
        let c = BinaryCode::from_fn(70, |_| true);
        assert_eq!(c.words()[1], (1 << 6) - 1);
        assert_eq!(c.count_ones(), 70);
        assert!(BinaryCode::from_words(70, vec![0, 1 << 6]).is_err());
    }

    #[test]
    fn hex_layout() {
        let c = BinaryCode::from_bools(&[true, false, false, false, false, false, false, false, false, true]);
        assert_eq!(c.to_hex(), "0102");
        assert_eq!(BinaryCode::from_hex(10, "0102").unwrap(), c);
        assert!(BinaryCode::from_hex(10, "01").is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let c = BinaryCode::from_bools(&bits);
            prop_assert_eq!(BinaryCode::from_hex(bits.len(), &c.to_hex()).unwrap(), c.clone());
            prop_assert_eq!(c.to_bools(), bits);
        }

        #[test]
        fn hamming_matches_unpacked(a in proptest::collection::vec(any::<bool>(), 130), b in proptest::collection::vec(any::<bool>(), 130)) {
            let naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            prop_assert_eq!(BinaryCode::from_bools(&a).hamming(&BinaryCode::from_bools(&b)), naive);
        }
    }
}
