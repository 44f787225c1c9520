//! Packed binary codes and their Hamming distance.

use std::sync::OnceLock;

use crate::{Error, Result};

/// Packed bit vector: bit `i` lives in word `i / 64` at position `i % 64`.
/// Bits past `len` in the last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    len: usize,
    words: Vec<u64>,
}

impl BinaryCode {
    pub fn zeros(len: usize) -> Self {
        BinaryCode {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    /// Builds a code from raw words; padding bits must be zero.
    pub fn from_words(len: usize, words: Vec<u64>) -> Result<Self> {
        if words.len() != len.div_ceil(64) {
            return Err(Error::dims("code words", len.div_ceil(64), words.len()));
        }
        let code = BinaryCode { len, words };
        if code.words.last().is_some_and(|&w| w & !code.last_word_mask() != 0) {
            return Err(Error::InvalidInput("non-zero padding bits in code".into()));
        }
        Ok(code)
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        BinaryCode { len, words }
    }

    fn last_word_mask(&self) -> u64 {
        match self.len % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for {}-bit code", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit {i} out of range for {}-bit code", self.len);
        let mask = 1u64 << (i % 64);
        if value {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

/// Which population-count implementation computes distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopcountPath {
    /// The CPU's `popcnt` instruction.
    Hardware,
    /// Branch-free SWAR bit counting; available everywhere.
    Portable,
}

impl PopcountPath {
    /// The fastest path on this machine.
    pub fn detect() -> Self {
        static PATH: OnceLock<PopcountPath> = OnceLock::new();
        *PATH.get_or_init(|| {
            #[cfg(target_arch = "x86_64")]
            {
                if std::arch::is_x86_feature_detected!("popcnt") {
                    return PopcountPath::Hardware;
                }
            }
            PopcountPath::Portable
        })
    }

    pub fn is_available(self) -> bool {
        match self {
            PopcountPath::Portable => true,
            PopcountPath::Hardware => Self::detect() == PopcountPath::Hardware,
        }
    }

    /// Hamming distance between equal-length word slices.
    ///
    /// Falls back to the portable path if hardware popcount is requested
    /// but unavailable.
    #[inline]
    pub fn distance(self, a: &[u64], b: &[u64]) -> u32 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            PopcountPath::Hardware if self.is_available() => {
                #[cfg(target_arch = "x86_64")]
                {
                    // SAFETY: the popcnt feature was detected at runtime.
                    unsafe { hardware_distance(a, b) }
                }
                #[cfg(not(target_arch = "x86_64"))]
                {
                    portable_distance(a, b)
                }
            }
            _ => portable_distance(a, b),
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn hardware_distance(a: &[u64], b: &[u64]) -> u32 {
    use std::arch::x86_64::_popcnt64;
    let mut total = 0u32;
    for (x, y) in a.iter().zip(b) {
        total += _popcnt64((x ^ y) as i64) as u32;
    }
    total
}

#[inline]
fn swar_popcount(mut x: u64) -> u32 {
    x -= (x >> 1) & 0x5555_5555_5555_5555;
    x = (x & 0x3333_3333_3333_3333) + ((x >> 2) & 0x3333_3333_3333_3333);
    x = (x + (x >> 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    (x.wrapping_mul(0x0101_0101_0101_0101) >> 56) as u32
}

#[inline]
fn portable_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| swar_popcount(x ^ y)).sum()
}

/// Number of differing bits. Uses hardware popcount when available.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    hamming_with(PopcountPath::detect(), a, b)
}

pub fn hamming_with(path: PopcountPath, a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::dims("code length", a.len, b.len));
    }
    Ok(path.distance(&a.words, &b.words))
}

/// Distances from `query` to every code in a contiguous word matrix
/// (`words_per_code` words per row). Used for linear scans.
pub fn scan(path: PopcountPath, query: &[u64], matrix: &[u64], out: &mut Vec<u32>) {
    let n = query.len();
    out.clear();
    if n == 0 {
        return;
    }
    out.extend(matrix.chunks_exact(n).map(|row| path.distance(query, row)));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_codes_have_zero_distance() {
        let a = BinaryCode::from_bits([true, false, true, true]);
        assert_eq!(hamming(&a, &a.clone()).unwrap(), 0);
    }

    #[test]
    fn all_zeros_vs_all_ones() {
        let a = BinaryCode::zeros(64);
        let b = BinaryCode::from_bits(std::iter::repeat_n(true, 64));
        assert_eq!(hamming(&a, &b).unwrap(), 64);
        assert_eq!(hamming_with(PopcountPath::Portable, &a, &b).unwrap(), 64);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(hamming(&BinaryCode::zeros(10), &BinaryCode::zeros(11)).is_err());
    }

    #[test]
    fn swar_matches_count_ones() {
        for x in [0u64, 1, u64::MAX, 0x8000_0000_0000_0001, 0xdead_beef_cafe_f00d] {
            assert_eq!(swar_popcount(x), x.count_ones());
        }
    }

    #[test]
    fn padding_is_validated() {
        assert!(BinaryCode::from_words(3, vec![0b1000]).is_err());
        assert!(BinaryCode::from_words(3, vec![0b111]).is_ok());
        assert!(BinaryCode::from_words(65, vec![0]).is_err());
    }

    #[test]
    fn set_and_get_bits() {
        let mut c = BinaryCode::zeros(130);
        c.set(129, true);
        c.set(0, true);
        assert!(c.bit(129) && c.bit(0) && !c.bit(64));
        assert_eq!(c.count_ones(), 2);
        c.set(0, false);
        assert_eq!(c.count_ones(), 1);
    }
}
