use alloc::vec::Vec;

use super::MolecularGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValenceViolation {
    pub atom: usize,
    /// Bond-order sum, aromatic bonds counting 1.5, rounded up.
    pub used: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    pub valence_ok: bool,
    pub connected: bool,
    pub per_atom_violations: Vec<ValenceViolation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.valence_ok && self.connected
    }
}

/// Used valence of atom `i`: ceil of the bond-order sum.
pub(crate) fn used_valence(g: &MolecularGraph, i: usize) -> u32 {
    let halves: u32 = g.neighbors(i).map(|(_, b)| b.half_order()).sum();
    halves.div_ceil(2)
}

/// Valence and connectivity check against the per-element valence table.
pub fn validate(g: &MolecularGraph) -> ValidityReport {
    let per_atom_violations: Vec<ValenceViolation> = (0..g.atom_count())
        .filter_map(|i| {
            let used = used_valence(g, i);
            let max = g.atom(i).max_valence();
            (used > max).then_some(ValenceViolation { atom: i, used, max })
        })
        .collect();
    ValidityReport {
        valence_ok: per_atom_violations.is_empty(),
        connected: g.atom_count() > 0 && g.components().len() == 1,
        per_atom_violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_smiles, BondType, Element};
    use alloc::vec;

    #[test]
    fn benzene_is_valid() {
        let r = validate(&parse_smiles("c1ccccc1").unwrap());
        assert!(r.valence_ok && r.connected);
    }

    #[test]
    fn disconnected() {
        let g = MolecularGraph::new(vec![Element::C, Element::C]);
        let r = validate(&g);
        assert!(!r.connected);
        assert!(r.valence_ok);
    }

    #[test]
    fn pentavalent_carbon() {
        let g = parse_smiles("CC(C)(C)(C)C").unwrap();
        let r = validate(&g);
        assert!(!r.valence_ok);
        assert_eq!(
            r.per_atom_violations,
            vec![ValenceViolation { atom: 1, used: 5, max: 4 }]
        );
    }

    #[test]
    fn aromatic_halves_round_up() {
        // Three aromatic bonds on one carbon: 4.5 rounds to 5 > 4.
        let g = MolecularGraph::from_edges(
            vec![Element::C; 4],
            &[(0, 1, BondType::Aromatic), (0, 2, BondType::Aromatic), (0, 3, BondType::Aromatic)],
        );
        assert_eq!(used_valence(&g, 0), 5);
        assert!(!validate(&g).valence_ok);
        // Pyridine nitrogen: 3 <= 3.
        assert!(validate(&parse_smiles("c1ccncc1").unwrap()).valence_ok);
    }

    #[test]
    fn single_atom_is_connected() {
        assert!(validate(&parse_smiles("C").unwrap()).connected);
    }
}
