//! Canonical SMILES via iterative neighborhood refinement.
//!
//! Atoms start from an invariant of (element, degree, bond-order multiset)
//! and are repeatedly re-ranked by their neighbors' ranks until the
//! partition is stable. Remaining ties are resolved by individualizing each
//! candidate of the first tied cell in turn and keeping the lexicographically
//! smallest emitted string, so the result does not depend on input order.
//! Interchangeable atoms (same bonds to every other atom) are explored once.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::smiles::write_smiles_with_order;
use super::MolecularGraph;

/// Rank the keys: equal keys share a color, colors ordered by key.
fn rank_keys<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let mut distinct: Vec<K> = keys.to_vec();
    distinct.sort();
    distinct.dedup();
    keys.iter()
        .map(|k| distinct.binary_search(k).expect("key present") as u32)
        .collect()
}

fn class_count(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

fn initial_colors(g: &MolecularGraph) -> Vec<u32> {
    let keys: Vec<(usize, usize, Vec<u32>)> = (0..g.atom_count())
        .map(|i| {
            let mut orders: Vec<u32> = g.neighbors(i).map(|(_, b)| b.half_order()).collect();
            orders.sort_unstable();
            (g.atom(i).index(), orders.len(), orders)
        })
        .collect();
    rank_keys(&keys)
}

/// Refine until the number of classes stops growing.
fn refine(g: &MolecularGraph, colors: &mut Vec<u32>) {
    let n = g.atom_count();
    let mut classes = class_count(colors);
    loop {
        let keys: Vec<(u32, Vec<(usize, u32)>)> = (0..n)
            .map(|i| {
                let mut nb: Vec<(usize, u32)> =
                    g.neighbors(i).map(|(j, b)| (b.index(), colors[j])).collect();
                nb.sort_unstable();
                (colors[i], nb)
            })
            .collect();
        let next = rank_keys(&keys);
        let next_classes = class_count(&next);
        *colors = next;
        if next_classes == classes {
            return;
        }
        classes = next_classes;
    }
}

fn are_twins(g: &MolecularGraph, u: usize, v: usize) -> bool {
    (0..g.atom_count())
        .filter(|&w| w != u && w != v)
        .all(|w| g.bond(u, w) == g.bond(v, w))
}

struct Best {
    text: String,
    rank: Vec<usize>,
}

fn search(g: &MolecularGraph, colors: Vec<u32>, best: &mut Option<Best>) {
    let n = g.atom_count();
    // First tied cell: smallest color shared by two or more atoms.
    let mut counts = vec![0usize; n];
    for &c in &colors {
        counts[c as usize] += 1;
    }
    let Some(cell_color) = (0..n).find(|&c| counts[c] > 1) else {
        let rank: Vec<usize> = colors.iter().map(|&c| c as usize).collect();
        let text = write_smiles_with_order(g, &rank);
        if best.as_ref().is_none_or(|b| text < b.text) {
            *best = Some(Best { text, rank });
        }
        return;
    };
    let cell: Vec<usize> = (0..n).filter(|&i| colors[i] as usize == cell_color).collect();
    let mut explored: Vec<usize> = Vec::new();
    for &v in &cell {
        if explored.iter().any(|&u| are_twins(g, u, v)) {
            continue;
        }
        explored.push(v);
        let keys: Vec<(u32, u8)> = colors
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, u8::from(i != v)))
            .collect();
        let mut next = rank_keys(&keys);
        refine(g, &mut next);
        search(g, next, best);
    }
}

fn canonical_component(g: &MolecularGraph) -> Best {
    let mut colors = initial_colors(g);
    refine(g, &mut colors);
    let mut best = None;
    search(g, colors, &mut best);
    best.expect("search visits at least one leaf")
}

fn canonical_parts(g: &MolecularGraph) -> Vec<(String, Vec<usize>)> {
    let mut parts: Vec<(String, Vec<usize>)> = g
        .components()
        .into_iter()
        .map(|comp| {
            let sub = g.subgraph(&comp);
            let best = canonical_component(&sub);
            // Map the component ranking back to original atom indices.
            let mut order = vec![0usize; comp.len()];
            for (local, &r) in best.rank.iter().enumerate() {
                order[r] = comp[local];
            }
            (best.text, order)
        })
        .collect();
    parts.sort();
    parts
}

/// Canonical, permutation-invariant SMILES for a heavy-atom graph.
///
/// Disconnected graphs are written as `.`-joined components in sorted order.
pub fn write_canonical(g: &MolecularGraph) -> String {
    let parts = canonical_parts(g);
    let mut out = String::new();
    for (k, (text, _)) in parts.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        out.push_str(text);
    }
    out
}

/// Canonical position of every atom: `labeling[i]` is the rank of atom `i`.
///
/// Relabeling a graph with its canonical labeling yields the same graph for
/// every input permutation.
pub fn canonical_labeling(g: &MolecularGraph) -> Vec<usize> {
    let mut labeling = vec![0usize; g.atom_count()];
    let mut next = 0;
    for (_, order) in canonical_parts(g) {
        for atom in order {
            labeling[atom] = next;
            next += 1;
        }
    }
    labeling
}

/// Heavy-atom graph identity via canonical strings.
pub fn is_same_molecule(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    if a.atom_count() != b.atom_count() || a.edge_count() != b.edge_count() {
        return false;
    }
    write_canonical(a) == write_canonical(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn canon(s: &str) -> String {
        write_canonical(&parse_smiles(s).unwrap())
    }

    #[test]
    fn same_molecule_two_spellings() {
        assert_eq!(canon("CCO"), canon("OCC"));
        assert_eq!(canon("C"), canon("C"));
        assert_eq!(canon("c1ccccc1O"), canon("Oc1ccccc1"));
        assert_eq!(canon("C1CC(C)CC1"), canon("CC1CCCC1"));
    }

    #[test]
    fn different_connectivity_differs() {
        let ethanol = parse_smiles("CCO").unwrap();
        let ether = parse_smiles("COC").unwrap();
        assert!(!is_same_molecule(&ethanol, &ether));
        let leucine = parse_smiles("CC(C)CC(N)C(=O)O").unwrap();
        let isoleucine = parse_smiles("CCC(C)C(N)C(=O)O").unwrap();
        assert!(!is_same_molecule(&leucine, &isoleucine));
        assert!(is_same_molecule(&leucine, &leucine));
    }

    #[test]
    fn symmetric_graphs_are_stable() {
        // Regular graphs where refinement alone cannot split the atoms.
        let cubane = parse_smiles("C12C3C4C1C5C2C3C45").unwrap();
        let c = write_canonical(&cubane);
        for perm in [[7, 6, 5, 4, 3, 2, 1, 0], [3, 0, 6, 1, 7, 2, 5, 4]] {
            assert_eq!(write_canonical(&cubane.permute(&perm)), c);
        }
        // Two non-isomorphic 6-cycles-of-carbons: one hexagon vs two triangles.
        assert_ne!(canon("C1CCCCC1"), canon("C1CC1.C1CC1"));
    }

    #[test]
    fn star_with_many_equivalent_leaves() {
        // Twin pruning keeps this cheap; without it the search is 12!.
        let mut s = String::from("C");
        for _ in 0..12 {
            s.push_str("(C)");
        }
        let g = parse_smiles(&s).unwrap();
        let c = write_canonical(&g);
        let perm: Vec<usize> = (0..g.atom_count()).rev().collect();
        assert_eq!(write_canonical(&g.permute(&perm)), c);
    }

    #[test]
    fn isolated_atoms() {
        assert_eq!(canon("C.C.C.O"), canon("O.C.C.C"));
    }

    #[test]
    fn round_trip_is_same_graph() {
        for s in ["CC(=O)Oc1ccccc1C(=O)O", "C1CC2CCC1C2", "N#Cc1ccncc1", "ClC(Cl)(Cl)Br"] {
            let g = parse_smiles(s).unwrap();
            let text = write_canonical(&g);
            let back = parse_smiles(&text).unwrap();
            assert!(is_same_molecule(&g, &back), "{s} -> {text}");
            assert_eq!(write_canonical(&back), text);
        }
    }

    #[test]
    fn labeling_normalizes_permutations() {
        let g = parse_smiles("CC(N)C(=O)O").unwrap();
        let p = g.permute(&[5, 3, 1, 0, 2, 4]);
        let a = g.permute(&canonical_labeling(&g));
        let b = p.permute(&canonical_labeling(&p));
        assert_eq!(a, b);
    }
}
