//! Circular (ECFP-style) fingerprints over heavy-atom graphs.
//!
//! Identifiers are 64-bit FNV-1a hashes of little-endian byte serializations,
//! so bits are stable across platforms. They are not bit-compatible with any
//! external cheminformatics toolkit.

use alloc::vec;
use alloc::vec::Vec;

use crate::molgraph::{BondType, MolecularGraph};

pub const DEFAULT_BITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FingerprintError {
    #[error("fingerprint lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("expected {expected} bytes, got {got}")]
    ByteLength { expected: usize, got: usize },
}

/// Fixed-length bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(nbits: usize) -> Self {
        Fingerprint {
            nbits,
            words: vec![0; nbits.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.nbits
    }

    pub fn is_empty(&self) -> bool {
        self.nbits == 0
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.nbits, "bit {bit} out of range");
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.nbits && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&b| self.get(b))
    }

    /// True when every bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Fingerprint) -> bool {
        self.nbits == other.nbits && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// 0/1 values, one per bit; the conditioning-vector form.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.nbits).map(|b| if self.get(b) { 1.0 } else { 0.0 }).collect()
    }

    /// Bytes with bit `k` at byte `k / 8`, position `k % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.nbits.div_ceil(8)];
        for b in self.ones() {
            out[b / 8] |= 1 << (b % 8);
        }
        out
    }

    pub fn from_bytes(nbits: usize, bytes: &[u8]) -> Result<Self, FingerprintError> {
        let expected = nbits.div_ceil(8);
        if bytes.len() != expected {
            return Err(FingerprintError::ByteLength { expected, got: bytes.len() });
        }
        let mut fp = Fingerprint::zeros(nbits);
        for b in 0..nbits {
            if bytes[b / 8] >> (b % 8) & 1 == 1 {
                fp.set(b);
            }
        }
        Ok(fp)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn initial_invariant(g: &MolecularGraph, i: usize) -> u64 {
    let mut bonds: Vec<u8> = g.neighbors(i).map(|(_, b)| b.index() as u8).collect();
    bonds.sort_unstable();
    let aromatic = bonds.contains(&(BondType::Aromatic.index() as u8));
    let mut buf = Vec::with_capacity(3 + bonds.len());
    buf.push(g.atom(i).index() as u8);
    buf.push(bonds.len() as u8);
    buf.push(aromatic as u8);
    buf.extend_from_slice(&bonds);
    fnv1a(&buf)
}

/// Environment identifiers of every atom at every round `0..=radius`.
pub fn environment_ids(g: &MolecularGraph, radius: usize) -> Vec<u64> {
    let n = g.atom_count();
    let mut current: Vec<u64> = (0..n).map(|i| initial_invariant(g, i)).collect();
    let mut all = current.clone();
    for _ in 0..radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut env: Vec<(u8, u64)> = g.neighbors(i).map(|(j, b)| (b.index() as u8, current[j])).collect();
                env.sort_unstable();
                let mut buf = Vec::with_capacity(8 + 9 * env.len());
                buf.extend_from_slice(&current[i].to_le_bytes());
                for (b, id) in env {
                    buf.push(b);
                    buf.extend_from_slice(&id.to_le_bytes());
                }
                fnv1a(&buf)
            })
            .collect();
        all.extend_from_slice(&next);
        current = next;
    }
    all
}

pub fn morgan_fingerprint(g: &MolecularGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits > 0, "nbits must be positive");
    let mut fp = Fingerprint::zeros(nbits);
    for id in environment_ids(g, radius) {
        fp.set((id % nbits as u64) as usize);
    }
    fp
}

/// 2048-bit, radius-2 fingerprint.
pub fn default_fingerprint(g: &MolecularGraph) -> Fingerprint {
    morgan_fingerprint(g, DEFAULT_RADIUS, DEFAULT_BITS)
}

/// `|a & b| / |a | b|`, 1.0 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    #[test]
    fn single_atom_sets_one_bit() {
        let g = parse_smiles("C").unwrap();
        assert_eq!(morgan_fingerprint(&g, 0, 2048).count_ones(), 1);
        assert_eq!(morgan_fingerprint(&g, 2, 2048).count_ones(), 3);
    }

    #[test]
    fn tanimoto_cases() {
        let mut a = Fingerprint::zeros(64);
        let mut b = Fingerprint::zeros(64);
        assert_eq!(tanimoto(&a, &b).unwrap(), 1.0);
        for k in 0..5 {
            a.set(k);
        }
        for k in 3..8 {
            b.set(k);
        }
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.25);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let mut c = Fingerprint::zeros(64);
        c.set(40);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        assert_eq!(tanimoto(&a, &Fingerprint::zeros(32)), Err(FingerprintError::LengthMismatch(64, 32)));
    }

    #[test]
    fn byte_round_trip() {
        let g = parse_smiles("CC(=O)Nc1ccccc1").unwrap();
        let fp = default_fingerprint(&g);
        let bytes = fp.to_bytes();
        assert_eq!(bytes.len(), 256);
        assert_eq!(Fingerprint::from_bytes(2048, &bytes).unwrap(), fp);
        assert!(Fingerprint::from_bytes(2048, &bytes[1..]).is_err());
    }

    #[test]
    fn bond_order_changes_bits() {
        let a = default_fingerprint(&parse_smiles("CCO").unwrap());
        let b = default_fingerprint(&parse_smiles("C=CO").unwrap());
        assert_ne!(a, b);
    }
}
