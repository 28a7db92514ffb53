//! Word-packed binary codes and Hamming primitives.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Magic prefix of the packed code file format.
pub const CODES_MAGIC: &[u8; 4] = b"SHCD";

/// Binary codes for a set of rows, packed into 64-bit words per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    bits: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl CodeMatrix {
    pub fn zeros(rows: usize, bits: usize) -> Self {
        let words_per_row = bits.div_ceil(64).max(1);
        CodeMatrix { rows, bits, words_per_row, words: vec![0; rows * words_per_row] }
    }

    pub fn from_bits(rows: usize, bits: usize, values: &[Vec<bool>]) -> Self {
        let mut m = Self::zeros(rows, bits);
        for (i, row) in values.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if v {
                    m.set_bit(i, b);
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn set_bit(&mut self, row: usize, bit: usize) {
        self.words[row * self.words_per_row + bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn bit(&self, row: usize, bit: usize) -> bool {
        self.words[row * self.words_per_row + bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Row as 0/1 values, used where per-bit arithmetic is clearer.
    pub fn row_bits(&self, row: usize) -> Vec<f64> {
        (0..self.bits).map(|b| if self.bit(row, b) { 1.0 } else { 0.0 }).collect()
    }

    /// Plain (unweighted) Hamming distance via popcount.
    pub fn hamming(&self, i: usize, j: usize) -> u32 {
        self.row_words(i)
            .iter()
            .zip(self.row_words(j))
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    /// Weighted Hamming distance: sums w over the set bits of the XOR.
    pub fn weighted_hamming(&self, w: &[f64], i: usize, j: usize) -> f64 {
        debug_assert_eq!(w.len(), self.bits);
        let mut total = 0.0;
        for (wi, (a, b)) in self.row_words(i).iter().zip(self.row_words(j)).enumerate() {
            let mut x = a ^ b;
            while x != 0 {
                let bit = x.trailing_zeros() as usize;
                total += w[wi * 64 + bit];
                x &= x - 1;
            }
        }
        total
    }

    /// XOR of two rows into a scratch word buffer.
    pub fn xor_into(&self, i: usize, j: usize, out: &mut Vec<u64>) {
        out.clear();
        out.extend(self.row_words(i).iter().zip(self.row_words(j)).map(|(a, b)| a ^ b));
    }
}

/// Weighted Hamming distance over pre-XORed words.
pub fn weighted_popcount(xor_words: &[u64], w: &[f64]) -> f64 {
    let mut total = 0.0;
    for (wi, word) in xor_words.iter().enumerate() {
        let mut x = *word;
        while x != 0 {
            let bit = x.trailing_zeros() as usize;
            total += w[wi * 64 + bit];
            x &= x - 1;
        }
    }
    total
}

/// Writes the packed code file: magic "SHCD", little-endian u32 rows,
/// u32 bits, then the word-packed rows.
pub fn save_codes(codes: &CodeMatrix, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CODES_MAGIC)?;
    w.write_all(&(codes.rows as u32).to_le_bytes())?;
    w.write_all(&(codes.bits as u32).to_le_bytes())?;
    for word in &codes.words {
        w.write_all(&word.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_codes(path: &Path) -> Result<CodeMatrix> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Parse { line: 0, msg: "truncated header".into() })?;
    if &magic != CODES_MAGIC {
        return Err(Error::Parse { line: 0, msg: format!("bad magic {magic:?}, expected {CODES_MAGIC:?}") });
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4).map_err(|_| Error::Parse { line: 0, msg: "truncated row count".into() })?;
    let rows = u32::from_le_bytes(buf4) as usize;
    r.read_exact(&mut buf4).map_err(|_| Error::Parse { line: 0, msg: "truncated bit count".into() })?;
    let bits = u32::from_le_bytes(buf4) as usize;
    let mut m = CodeMatrix::zeros(rows, bits);
    let mut buf8 = [0u8; 8];
    for k in 0..m.words.len() {
        r.read_exact(&mut buf8).map_err(|_| Error::Parse { line: 0, msg: format!("truncated at word {k}") })?;
        m.words[k] = u64::from_le_bytes(buf8);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weighted_hamming_hand_case() {
        let m = CodeMatrix::from_bits(2, 3, &[vec![true, false, true], vec![false, false, false]]);
        assert_eq!(m.weighted_hamming(&[0.5, 1.0, 2.0], 0, 1), 2.5);
        assert_eq!(m.weighted_hamming(&[0.5, 1.0, 2.0], 0, 0), 0.0);
        assert_eq!(m.hamming(0, 1), 2);
    }

    #[test]
    fn codes_file_roundtrip() {
        let mut m = CodeMatrix::zeros(3, 70);
        m.set_bit(0, 0);
        m.set_bit(1, 69);
        m.set_bit(2, 64);
        let f = tempfile::NamedTempFile::new().unwrap();
        save_codes(&m, f.path()).unwrap();
        assert_eq!(load_codes(f.path()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn packed_distances_match_bitwise_reference(
            a in proptest::collection::vec(any::<bool>(), 80),
            b in proptest::collection::vec(any::<bool>(), 80),
            w in proptest::collection::vec(0.0f64..2.0, 80),
        ) {
            let m = CodeMatrix::from_bits(2, 80, &[a.clone(), b.clone()]);
            let reference: f64 = a.iter().zip(&b).zip(&w)
                .filter(|((x, y), _)| x != y)
                .map(|(_, wi)| wi)
                .sum();
            prop_assert!((m.weighted_hamming(&w, 0, 1) - reference).abs() < 1e-12);
            let plain: u32 = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            prop_assert_eq!(m.hamming(0, 1), plain);
        }
    }
}
