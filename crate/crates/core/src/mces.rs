//! Maximum common edge subgraph distance.
//!
//! A common edge is an edge of `g1` whose endpoints map (element-preserving,
//! injectively) onto an edge of `g2` with the same bond category. The common
//! subgraph may be disconnected. Distance is `|E1| + |E2| - 2 * common`.

use alloc::vec;
use alloc::vec::Vec;

use crate::molgraph::{BondType, Element, MolecularGraph};

pub const DEFAULT_NODE_BUDGET: usize = 25;
pub const BRUTE_FORCE_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum McesError {
    #[error("graph with {atoms} atoms exceeds the node budget of {budget}")]
    BudgetExceeded { atoms: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McesResult {
    pub distance: usize,
    pub common_edges: usize,
    /// `mapping[i]` is the `g2` atom that `g1` atom `i` maps to, if any.
    pub mapping: Vec<Option<usize>>,
    /// Set when the search stopped at a threshold; `distance` is then only a
    /// lower bound and `mapping` is empty.
    pub lower_bound: bool,
}

impl McesResult {
    fn exact(g1: &MolecularGraph, g2: &MolecularGraph, common: usize, mapping: Vec<Option<usize>>) -> Self {
        McesResult {
            distance: g1.edge_count() + g2.edge_count() - 2 * common,
            common_edges: common,
            mapping,
            lower_bound: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McesOptions {
    pub node_budget: usize,
    /// Stop early once the distance is provably at least this value.
    pub threshold: Option<usize>,
}

impl Default for McesOptions {
    fn default() -> Self {
        McesOptions {
            node_budget: DEFAULT_NODE_BUDGET,
            threshold: None,
        }
    }
}

pub fn mces_distance(g1: &MolecularGraph, g2: &MolecularGraph) -> Result<McesResult, McesError> {
    mces_with(g1, g2, &McesOptions::default())
}

fn check_budget(g1: &MolecularGraph, g2: &MolecularGraph, budget: usize) -> Result<(), McesError> {
    let atoms = g1.atom_count().max(g2.atom_count());
    if atoms > budget {
        return Err(McesError::BudgetExceeded { atoms, budget });
    }
    Ok(())
}

const LABELS: usize = Element::COUNT * Element::COUNT * (BondType::COUNT - 1);

fn label(a: Element, b: Element, bond: BondType) -> usize {
    let (lo, hi) = if a.index() <= b.index() { (a, b) } else { (b, a) };
    (lo.index() * Element::COUNT + hi.index()) * (BondType::COUNT - 1) + bond.index() - 1
}

struct Search<'g> {
    g1: &'g MolecularGraph,
    g2: &'g MolecularGraph,
    order: Vec<usize>,
    /// Adjacency of `g1` restricted to earlier atoms in `order`.
    back_edges: Vec<Vec<(usize, BondType)>>,
    e1: Vec<(usize, usize, usize)>,
    e2: Vec<(usize, usize, usize)>,
    map: Vec<Option<usize>>,
    assigned: Vec<bool>,
    used: Vec<bool>,
    best: usize,
    best_map: Vec<Option<usize>>,
    counts: Vec<u16>,
}

impl Search<'_> {
    /// Common edges still reachable: per label, the smaller of undecided
    /// `g1` edges and `g2` edges with at least one free endpoint.
    fn bound(&mut self) -> usize {
        self.counts.iter_mut().for_each(|c| *c = 0);
        for &(i, j, l) in &self.e1 {
            if !self.assigned[i] || !self.assigned[j] {
                self.counts[2 * l] += 1;
            }
        }
        for &(u, v, l) in &self.e2 {
            if !self.used[u] || !self.used[v] {
                self.counts[2 * l + 1] += 1;
            }
        }
        self.counts.chunks(2).map(|c| c[0].min(c[1]) as usize).sum()
    }

    fn gain(&self, i: usize, target: usize) -> usize {
        self.back_edges[i]
            .iter()
            .filter(|&&(j, b)| matches!(self.map[j], Some(v) if self.g2.bond(target, v) == b))
            .count()
    }

    fn run(&mut self, depth: usize, common: usize) {
        if common > self.best {
            self.best = common;
            self.best_map = self.map.clone();
        }
        if depth == self.order.len() {
            return;
        }
        if common + self.bound() <= self.best {
            return;
        }
        let i = self.order[depth];
        let el = self.g1.atom(i);
        let mut options: Vec<(usize, usize)> = (0..self.g2.atom_count())
            .filter(|&v| !self.used[v] && self.g2.atom(v) == el)
            .map(|v| (self.gain(i, v), v))
            .collect();
        options.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        self.assigned[i] = true;
        for (gain, v) in options {
            self.map[i] = Some(v);
            self.used[v] = true;
            self.run(depth + 1, common + gain);
            self.used[v] = false;
            self.map[i] = None;
        }
        self.run(depth + 1, common);
        self.assigned[i] = false;
    }
}

/// Exact distance by branch-and-bound over partial injections.
pub fn mces_with(g1: &MolecularGraph, g2: &MolecularGraph, opts: &McesOptions) -> Result<McesResult, McesError> {
    check_budget(g1, g2, opts.node_budget)?;
    let (n1, n2) = (g1.atom_count(), g2.atom_count());

    // Highest-degree atoms first, then keep neighbors close in the order.
    let mut order: Vec<usize> = Vec::with_capacity(n1);
    let mut placed = vec![false; n1];
    while order.len() < n1 {
        let next = (0..n1)
            .filter(|&i| !placed[i])
            .max_by_key(|&i| {
                let links = g1.neighbors(i).filter(|&(j, _)| placed[j]).count();
                (links, g1.degree(i), core::cmp::Reverse(i))
            })
            .expect("unplaced atom");
        placed[next] = true;
        order.push(next);
    }
    let mut rank = vec![0; n1];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let back_edges = (0..n1)
        .map(|i| g1.neighbors(i).filter(|&(j, _)| rank[j] < rank[i]).collect())
        .collect();
    let e1 = g1.edges().map(|(i, j, b)| (i, j, label(g1.atom(i), g1.atom(j), b))).collect();
    let e2 = g2.edges().map(|(u, v, b)| (u, v, label(g2.atom(u), g2.atom(v), b))).collect();

    let mut s = Search {
        g1,
        g2,
        order,
        back_edges,
        e1,
        e2,
        map: vec![None; n1],
        assigned: vec![false; n1],
        used: vec![false; n2],
        best: 0,
        best_map: vec![None; n1],
        counts: vec![0; 2 * LABELS],
    };
    if let Some(th) = opts.threshold {
        let upper = s.bound();
        let floor = g1.edge_count() + g2.edge_count() - 2 * upper;
        if floor >= th {
            return Ok(McesResult {
                distance: floor,
                common_edges: upper,
                mapping: Vec::new(),
                lower_bound: true,
            });
        }
    }
    s.run(0, 0);
    let best = s.best;
    Ok(McesResult::exact(g1, g2, best, s.best_map))
}

/// Exhaustive enumeration of every partial injection; a test oracle.
pub fn mces_bruteforce(g1: &MolecularGraph, g2: &MolecularGraph) -> Result<McesResult, McesError> {
    check_budget(g1, g2, BRUTE_FORCE_LIMIT)?;
    fn count(g1: &MolecularGraph, g2: &MolecularGraph, map: &[Option<usize>]) -> usize {
        g1.edges()
            .filter(|&(i, j, b)| match (map[i], map[j]) {
                (Some(u), Some(v)) => g2.bond(u, v) == b,
                _ => false,
            })
            .count()
    }
    fn walk(
        g1: &MolecularGraph,
        g2: &MolecularGraph,
        i: usize,
        map: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        best: &mut (usize, Vec<Option<usize>>),
    ) {
        if i == g1.atom_count() {
            let c = count(g1, g2, map);
            if c > best.0 {
                *best = (c, map.clone());
            }
            return;
        }
        walk(g1, g2, i + 1, map, used, best);
        for v in 0..g2.atom_count() {
            if used[v] || g2.atom(v) != g1.atom(i) {
                continue;
            }
            used[v] = true;
            map[i] = Some(v);
            walk(g1, g2, i + 1, map, used, best);
            map[i] = None;
            used[v] = false;
        }
    }
    let mut map = vec![None; g1.atom_count()];
    let mut used = vec![false; g2.atom_count()];
    let mut best = (0, map.clone());
    walk(g1, g2, 0, &mut map, &mut used, &mut best);
    Ok(McesResult::exact(g1, g2, best.0, best.1))
}

/// Whether `r.mapping` is an element- and bond-preserving injection
/// achieving `r.common_edges`.
pub fn check_mapping(g1: &MolecularGraph, g2: &MolecularGraph, r: &McesResult) -> bool {
    if r.mapping.len() != g1.atom_count() {
        return false;
    }
    let mut seen = vec![false; g2.atom_count()];
    for (i, m) in r.mapping.iter().enumerate() {
        if let Some(v) = *m {
            if v >= seen.len() || seen[v] || g2.atom(v) != g1.atom(i) {
                return false;
            }
            seen[v] = true;
        }
    }
    let common = g1
        .edges()
        .filter(|&(i, j, b)| matches!((r.mapping[i], r.mapping[j]), (Some(u), Some(v)) if g2.bond(u, v) == b))
        .count();
    common == r.common_edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;

    fn g(s: &str) -> MolecularGraph {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn documented_cases() {
        let r = mces_distance(&g("c1ccccc1"), &g("c1ccccc1")).unwrap();
        assert_eq!(r.distance, 0);
        let r = mces_distance(&g("CC"), &g("CCO")).unwrap();
        assert_eq!((r.common_edges, r.distance), (1, 1));
        let r = mces_distance(&g("C"), &g("O")).unwrap();
        assert_eq!((r.common_edges, r.distance), (0, 0));
    }

    #[test]
    fn bond_categories_must_match() {
        let r = mces_distance(&g("c1ccccc1"), &g("C1CCCCC1")).unwrap();
        assert_eq!((r.common_edges, r.distance), (0, 12));
        let r = mces_distance(&g("C=CC"), &g("CC=C")).unwrap();
        assert_eq!(r.distance, 0);
    }

    #[test]
    fn budget() {
        let big = g("CCCCCCCCCC");
        assert_eq!(
            mces_bruteforce(&big, &g("C")),
            Err(McesError::BudgetExceeded { atoms: 10, budget: 8 })
        );
        let opts = McesOptions { node_budget: 5, threshold: None };
        assert!(mces_with(&big, &g("C"), &opts).is_err());
    }

    #[test]
    fn threshold_reports_flagged_bound() {
        let opts = McesOptions { threshold: Some(3), ..McesOptions::default() };
        let r = mces_with(&g("CCCC"), &g("OOOO"), &opts).unwrap();
        assert!(r.lower_bound);
        assert_eq!(r.distance, 6);
        let r = mces_with(&g("CCCC"), &g("CCCC"), &opts).unwrap();
        assert!(!r.lower_bound);
        assert_eq!(r.distance, 0);
    }

    #[test]
    fn mapping_is_consistent() {
        let (a, b) = (g("CC(=O)Nc1ccccc1"), g("OC(=O)c1ccccc1N"));
        let r = mces_distance(&a, &b).unwrap();
        assert!(check_mapping(&a, &b, &r));
        assert_eq!(r.distance, mces_distance(&b, &a).unwrap().distance);
    }
}
