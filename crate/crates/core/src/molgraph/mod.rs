//! Heavy-atom molecular graphs: element and bond vocabularies, formulas,
//! SMILES reading/writing, canonical forms and validity checks.

mod canon;
mod formula;
mod smiles;
mod validity;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use canon::{canonical_labeling, is_same_molecule, write_canonical};
pub use formula::{formula_of, Formula, FormulaError};
pub use smiles::{parse_smiles, write_smiles_with_order, SmilesError, SmilesErrorKind};
pub use validity::{validate, ValidityReport, ValenceViolation};

/// Heavy elements the model can place on a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Element {
    C,
    N,
    O,
    S,
    P,
    F,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::P,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Position in [`Element::ALL`], used for one-hot node features.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::P => "P",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(sym: &str) -> Option<Element> {
        Element::ALL.iter().copied().find(|e| e.symbol() == sym)
    }

    /// Largest total bond order the atom may carry.
    pub fn max_valence(self) -> u32 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::S => 6,
            Element::P => 5,
            Element::F | Element::Cl | Element::Br | Element::I => 1,
        }
    }

    /// Lowercase SMILES spelling when the atom sits in an aromatic system.
    pub fn aromatic_symbol(self) -> Option<&'static str> {
        match self {
            Element::C => Some("c"),
            Element::N => Some("n"),
            Element::O => Some("o"),
            Element::S => Some("s"),
            Element::P => Some("p"),
            _ => None,
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// The five edge categories of the adjacency tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum BondType {
    #[default]
    None = 0,
    Single = 1,
    Double = 2,
    Triple = 3,
    Aromatic = 4,
}

impl BondType {
    pub const ALL: [BondType; 5] = [
        BondType::None,
        BondType::Single,
        BondType::Double,
        BondType::Triple,
        BondType::Aromatic,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<BondType> {
        Self::ALL.get(i).copied()
    }

    /// Bond order in half-units (aromatic counts 1.5, i.e. 3 halves).
    pub fn half_order(self) -> u32 {
        match self {
            BondType::None => 0,
            BondType::Single => 2,
            BondType::Double => 4,
            BondType::Triple => 6,
            BondType::Aromatic => 3,
        }
    }

    pub fn is_bond(self) -> bool {
        self != BondType::None
    }
}

/// Heavy-atom graph with a dense symmetric bond matrix.
///
/// The dense `n x n` category matrix is the index form of the one-hot
/// `n x n x 5` adjacency tensor; [`MolecularGraph::one_hot`] expands it.
/// All mutation goes through [`MolecularGraph::set_bond`], which keeps the
/// matrix symmetric and the diagonal empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MolecularGraph {
    atoms: Vec<Element>,
    bonds: Vec<BondType>,
}

impl MolecularGraph {
    /// A graph over `atoms` with no bonds.
    pub fn new(atoms: Vec<Element>) -> Self {
        let n = atoms.len();
        MolecularGraph {
            atoms,
            bonds: vec![BondType::None; n * n],
        }
    }

    /// Build from an atom list and `(i, j, bond)` triples.
    ///
    /// Panics on out-of-range indices or self-bonds.
    pub fn from_edges(atoms: Vec<Element>, edges: &[(usize, usize, BondType)]) -> Self {
        let mut g = Self::new(atoms);
        for &(i, j, b) in edges {
            g.set_bond(i, j, b);
        }
        g
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> Element {
        self.atoms[i]
    }

    pub fn bond(&self, i: usize, j: usize) -> BondType {
        self.bonds[i * self.atoms.len() + j]
    }

    /// Set the category of edge `(i, j)` and its mirror.
    pub fn set_bond(&mut self, i: usize, j: usize, b: BondType) {
        let n = self.atoms.len();
        assert!(i < n && j < n, "bond index out of range");
        assert!(i != j || b == BondType::None, "self-bond on atom {i}");
        self.bonds[i * n + j] = b;
        self.bonds[j * n + i] = b;
    }

    /// Row-major `n x n` category matrix.
    pub fn bond_matrix(&self) -> &[BondType] {
        &self.bonds
    }

    /// `n x n x 5` one-hot tensor, row-major.
    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bonds.len() * BondType::COUNT];
        for (k, b) in self.bonds.iter().enumerate() {
            out[k * BondType::COUNT + b.index()] = 1.0;
        }
        out
    }

    /// Neighbors of `i` with the connecting bond.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, BondType)> + '_ {
        let n = self.atoms.len();
        self.bonds[i * n..(i + 1) * n]
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_bond())
            .map(|(j, &b)| (j, b))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }

    /// Bonded pairs `(i, j, bond)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, BondType)> + '_ {
        let n = self.atoms.len();
        (0..n).flat_map(move |i| {
            ((i + 1)..n).filter_map(move |j| {
                let b = self.bond(i, j);
                b.is_bond().then_some((i, j, b))
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Relabel atoms: atom `i` of `self` becomes atom `perm[i]` of the result.
    pub fn permute(&self, perm: &[usize]) -> MolecularGraph {
        let n = self.atoms.len();
        assert_eq!(perm.len(), n, "permutation length mismatch");
        let mut atoms = vec![Element::C; n];
        for (i, &p) in perm.iter().enumerate() {
            atoms[p] = self.atoms[i];
        }
        let mut g = MolecularGraph::new(atoms);
        for (i, j, b) in self.edges() {
            g.set_bond(perm[i], perm[j], b);
        }
        g
    }

    /// Connected components as sorted atom index lists, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let u = comp[k];
                k += 1;
                for (v, _) in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `keep` (in the given order).
    pub fn subgraph(&self, keep: &[usize]) -> MolecularGraph {
        let atoms = keep.iter().map(|&i| self.atoms[i]).collect();
        let mut g = MolecularGraph::new(atoms);
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate().skip(a + 1) {
                let bond = self.bond(i, j);
                if bond.is_bond() {
                    g.set_bond(a, b, bond);
                }
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_bond_is_symmetric() {
        let mut g = MolecularGraph::new(vec![Element::C, Element::O]);
        g.set_bond(0, 1, BondType::Double);
        assert_eq!(g.bond(1, 0), BondType::Double);
        assert_eq!(g.edge_count(), 1);
        let oh = g.one_hot();
        assert_eq!(oh.len(), 2 * 2 * 5);
        // (0,0) none, (0,1) double
        assert_eq!(&oh[0..5], &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&oh[5..10], &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic]
    fn self_bond_rejected() {
        let mut g = MolecularGraph::new(vec![Element::C]);
        g.set_bond(0, 0, BondType::Single);
    }

    #[test]
    fn permute_moves_bonds() {
        let g = MolecularGraph::from_edges(
            vec![Element::C, Element::C, Element::O],
            &[(0, 1, BondType::Single), (1, 2, BondType::Single)],
        );
        let p = g.permute(&[2, 0, 1]);
        assert_eq!(p.atoms(), &[Element::C, Element::O, Element::C]);
        assert_eq!(p.bond(2, 0), BondType::Single);
        assert_eq!(p.bond(0, 1), BondType::Single);
        assert_eq!(p.bond(2, 1), BondType::None);
    }

    #[test]
    fn components_split() {
        let g = MolecularGraph::from_edges(
            vec![Element::C, Element::C, Element::C],
            &[(0, 2, BondType::Single)],
        );
        assert_eq!(g.components(), vec![vec![0, 2], vec![1]]);
    }
}
