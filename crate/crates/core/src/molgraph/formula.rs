use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{Element, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormulaError {
    #[error("formula has no heavy atoms")]
    NoHeavyAtoms,
    #[error("unsupported element `{symbol}` at offset {offset}")]
    UnsupportedElement { symbol: String, offset: usize },
    #[error("unexpected character at offset {offset}")]
    InvalidToken { offset: usize },
}

/// Heavy-atom composition plus an informational hydrogen count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Formula {
    counts: BTreeMap<Element, u32>,
    hydrogens: u32,
}

impl Formula {
    pub fn new(counts: BTreeMap<Element, u32>, hydrogens: u32) -> Result<Self, FormulaError> {
        let counts: BTreeMap<_, _> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        if counts.is_empty() {
            return Err(FormulaError::NoHeavyAtoms);
        }
        Ok(Formula { counts, hydrogens })
    }

    /// Parse a condensed formula such as `C10H13ClN2`.
    pub fn parse(text: &str) -> Result<Self, FormulaError> {
        let bytes = text.trim().as_bytes();
        let mut counts = BTreeMap::new();
        let mut hydrogens = 0u32;
        let mut i = 0;
        while i < bytes.len() {
            let start = i;
            if !bytes[i].is_ascii_uppercase() {
                return Err(FormulaError::InvalidToken { offset: i });
            }
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_lowercase() {
                i += 1;
            }
            let sym = core::str::from_utf8(&bytes[start..i]).expect("ascii");
            let num_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = if num_start == i {
                1
            } else {
                core::str::from_utf8(&bytes[num_start..i])
                    .expect("ascii")
                    .parse::<u32>()
                    .map_err(|_| FormulaError::InvalidToken { offset: num_start })?
            };
            if sym == "H" {
                hydrogens += n;
                continue;
            }
            let el = Element::from_symbol(sym).ok_or_else(|| FormulaError::UnsupportedElement {
                symbol: sym.into(),
                offset: start,
            })?;
            *counts.entry(el).or_insert(0) += n;
        }
        Formula::new(counts, hydrogens)
    }

    pub fn count(&self, el: Element) -> u32 {
        self.counts.get(&el).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<Element, u32> {
        &self.counts
    }

    pub fn hydrogen_count(&self) -> u32 {
        self.hydrogens
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.counts.values().map(|&c| c as usize).sum()
    }

    /// Atom list in element order, the node set a sampler starts from.
    pub fn atoms(&self) -> Vec<Element> {
        self.counts
            .iter()
            .flat_map(|(&el, &c)| core::iter::repeat_n(el, c as usize))
            .collect()
    }

    /// Same heavy-atom multiset; hydrogens are not compared.
    pub fn same_heavy_atoms(&self, other: &Formula) -> bool {
        self.counts == other.counts
    }
}

impl fmt::Display for Formula {
    /// Hill order: C, H, then the remaining elements alphabetically.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let emit = |f: &mut fmt::Formatter<'_>, sym: &str, n: u32| -> fmt::Result {
            match n {
                0 => Ok(()),
                1 => f.write_str(sym),
                _ => write!(f, "{sym}{n}"),
            }
        };
        emit(f, "C", self.count(Element::C))?;
        emit(f, "H", self.hydrogens)?;
        let mut rest: Vec<_> = self.counts.iter().filter(|(e, _)| **e != Element::C).collect();
        rest.sort_by_key(|(e, _)| e.symbol());
        for (e, &n) in rest {
            emit(f, e.symbol(), n)?;
        }
        Ok(())
    }
}

/// Heavy-atom formula of a graph. Heavy-atom graphs carry no hydrogens.
pub fn formula_of(g: &MolecularGraph) -> Formula {
    let mut counts = BTreeMap::new();
    for &a in g.atoms() {
        *counts.entry(a).or_insert(0) += 1;
    }
    Formula {
        counts,
        hydrogens: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn parses_condensed() {
        let f = Formula::parse("C10H13ClN2").unwrap();
        assert_eq!(f.count(Element::C), 10);
        assert_eq!(f.count(Element::Cl), 1);
        assert_eq!(f.count(Element::N), 2);
        assert_eq!(f.hydrogen_count(), 13);
        assert_eq!(f.heavy_atom_count(), 13);
        assert_eq!(f.to_string(), "C10H13ClN2");
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(Formula::parse("H2"), Err(FormulaError::NoHeavyAtoms));
        assert!(matches!(
            Formula::parse("C2Na"),
            Err(FormulaError::UnsupportedElement { offset: 2, .. })
        ));
        assert_eq!(Formula::parse("c2"), Err(FormulaError::InvalidToken { offset: 0 }));
    }

    #[test]
    fn formula_of_smiles() {
        let f = formula_of(&parse_smiles("CCO").unwrap());
        assert_eq!(f.count(Element::C), 2);
        assert_eq!(f.count(Element::O), 1);
        assert_eq!(f.hydrogen_count(), 0);
        let benzene = formula_of(&parse_smiles("c1ccccc1").unwrap());
        assert_eq!(benzene.counts().len(), 1);
        assert_eq!(benzene.count(Element::C), 6);
    }

    #[test]
    fn formula_of_is_permutation_invariant() {
        let g = parse_smiles("OCC(N)Cl").unwrap();
        let p = g.permute(&[4, 2, 0, 3, 1]);
        assert_eq!(formula_of(&g), formula_of(&p));
    }

    #[test]
    fn atoms_follow_element_order() {
        let f = Formula::parse("C2H6O").unwrap();
        assert_eq!(f.atoms(), vec![Element::C, Element::C, Element::O]);
    }
}
