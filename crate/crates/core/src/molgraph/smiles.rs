//! Reader and writer for the connectivity subset of SMILES.
//!
//! Supported: organic-subset and bracket atoms of the heavy-element
//! whitelist, lowercase aromatic atoms, bond symbols `- = # :`, branches,
//! ring closures (`1`..`9`, `%nn`) and `.` component separators.
//! Hydrogens (bracket counts or `[H]` atoms) are dropped. Stereo marks,
//! isotopes, charges and atom classes are rejected.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{BondType, Element, MolecularGraph};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SmilesErrorKind {
    EmptyInput,
    UnsupportedElement(String),
    UnclosedBranch,
    UnclosedRing(u32),
    InvalidToken(char),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind:?} at byte {offset}")]
pub struct SmilesError {
    pub kind: SmilesErrorKind,
    pub offset: usize,
}

impl SmilesError {
    fn at(kind: SmilesErrorKind, offset: usize) -> Self {
        SmilesError { kind, offset }
    }
}

#[derive(Clone, Copy)]
struct ParsedAtom {
    element: Element,
    aromatic: bool,
}

struct OpenRing {
    atom: Option<usize>,
    bond: Option<BondType>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<ParsedAtom>,
    edges: Vec<(usize, usize, BondType)>,
    rings: Vec<(u32, OpenRing)>,
}

fn implicit_bond(a: ParsedAtom, b: ParsedAtom) -> BondType {
    if a.aromatic && b.aromatic {
        BondType::Aromatic
    } else {
        BondType::Single
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn invalid(&self, at: usize) -> SmilesError {
        let ch = self.bytes.get(at).map(|&b| b as char).unwrap_or('\0');
        SmilesError::at(SmilesErrorKind::InvalidToken(ch), at)
    }

    /// Returns `Some(index)` for a heavy atom and `None` for a dropped hydrogen.
    fn parse_atom(&mut self) -> Result<Option<usize>, SmilesError> {
        let start = self.pos;
        let b = self.peek().ok_or_else(|| self.invalid(start))?;
        if b == b'[' {
            return self.parse_bracket();
        }
        let (sym, aromatic, len): (&str, bool, usize) = match b {
            b'C' if self.bytes.get(start + 1) == Some(&b'l') => ("Cl", false, 2),
            b'B' if self.bytes.get(start + 1) == Some(&b'r') => ("Br", false, 2),
            b'C' => ("C", false, 1),
            b'N' => ("N", false, 1),
            b'O' => ("O", false, 1),
            b'S' => ("S", false, 1),
            b'P' => ("P", false, 1),
            b'F' => ("F", false, 1),
            b'I' => ("I", false, 1),
            b'c' => ("C", true, 1),
            b'n' => ("N", true, 1),
            b'o' => ("O", true, 1),
            b's' => ("S", true, 1),
            b'p' => ("P", true, 1),
            b'B' | b'b' | b'*' => {
                return Err(SmilesError::at(
                    SmilesErrorKind::UnsupportedElement(String::from(b as char)),
                    start,
                ))
            }
            _ => return Err(self.invalid(start)),
        };
        self.pos += len;
        let element = Element::from_symbol(sym).expect("organic subset is whitelisted");
        Ok(Some(self.push_atom(element, aromatic)))
    }

    fn parse_bracket(&mut self) -> Result<Option<usize>, SmilesError> {
        self.pos += 1; // '['
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(self.invalid(self.pos));
        }
        let sym_start = self.pos;
        let first = self.peek().ok_or_else(|| self.invalid(sym_start))?;
        if !first.is_ascii_alphabetic() {
            return Err(self.invalid(sym_start));
        }
        self.pos += 1;
        // Two-letter symbols: an uppercase letter followed by a lowercase one,
        // or the aromatic spellings `se` / `as`.
        if let Some(c2) = self.peek() {
            let two = [first, c2];
            let takes_second = (first.is_ascii_uppercase() && c2.is_ascii_lowercase() && c2 != b'h')
                || two == *b"se"
                || two == *b"as";
            if takes_second {
                self.pos += 1;
            }
        }
        let raw = core::str::from_utf8(&self.bytes[sym_start..self.pos]).expect("ascii");
        let (element, aromatic) = if raw == "H" {
            (None, false)
        } else if raw.as_bytes()[0].is_ascii_lowercase() {
            let upper: String = raw
                .char_indices()
                .map(|(i, c)| if i == 0 { c.to_ascii_uppercase() } else { c })
                .collect();
            match Element::from_symbol(&upper).filter(|e| e.aromatic_symbol() == Some(raw)) {
                Some(e) => (Some(e), true),
                None => {
                    return Err(SmilesError::at(
                        SmilesErrorKind::UnsupportedElement(raw.into()),
                        sym_start,
                    ))
                }
            }
        } else {
            match Element::from_symbol(raw) {
                Some(e) => (Some(e), false),
                None => {
                    return Err(SmilesError::at(
                        SmilesErrorKind::UnsupportedElement(raw.into()),
                        sym_start,
                    ))
                }
            }
        };
        // Optional hydrogen count, dropped.
        if self.peek() == Some(b'H') {
            self.pos += 1;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        match self.peek() {
            Some(b']') => self.pos += 1,
            None => return Err(self.invalid(self.pos.min(self.bytes.len().saturating_sub(1)))),
            Some(_) => return Err(self.invalid(self.pos)),
        }
        Ok(element.map(|e| self.push_atom(e, aromatic)))
    }

    fn push_atom(&mut self, element: Element, aromatic: bool) -> usize {
        self.atoms.push(ParsedAtom { element, aromatic });
        self.atoms.len() - 1
    }

    fn parse_bond(&mut self) -> Result<Option<BondType>, SmilesError> {
        let b = match self.peek() {
            Some(b'-') => BondType::Single,
            Some(b'=') => BondType::Double,
            Some(b'#') => BondType::Triple,
            Some(b':') => BondType::Aromatic,
            Some(b'/') | Some(b'\\') | Some(b'$') => return Err(self.invalid(self.pos)),
            _ => return Ok(None),
        };
        self.pos += 1;
        Ok(Some(b))
    }

    fn add_edge(
        &mut self,
        a: usize,
        b: usize,
        bond: BondType,
        offset: usize,
    ) -> Result<(), SmilesError> {
        if a == b || self.edges.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a)) {
            return Err(self.invalid(offset));
        }
        self.edges.push((a, b, bond));
        Ok(())
    }

    fn ring_number(&mut self) -> Result<Option<u32>, SmilesError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                self.pos += 1;
                Ok(Some((c - b'0') as u32))
            }
            Some(b'%') => {
                let at = self.pos;
                let d = self.bytes.get(at + 1..at + 3).ok_or_else(|| self.invalid(at))?;
                if !d.iter().all(u8::is_ascii_digit) {
                    return Err(self.invalid(at));
                }
                self.pos += 3;
                Ok(Some(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32))
            }
            _ => Ok(None),
        }
    }

    fn run(mut self) -> Result<MolecularGraph, SmilesError> {
        if self.bytes.iter().all(u8::is_ascii_whitespace) {
            return Err(SmilesError::at(SmilesErrorKind::EmptyInput, 0));
        }
        // Stack of (previous atom, offset of '(').
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        // `prev` is the atom new atoms bond to; `None` after a dropped H or a dot.
        let mut prev: Option<usize> = None;
        // Whether anything has been read in the current chain; used to catch
        // bonds and branches with nothing to attach to.
        let mut have_atom = false;
        let mut pending_bond: Option<(BondType, usize)> = None;

        while let Some(c) = self.peek() {
            let here = self.pos;
            match c {
                b'(' => {
                    if !have_atom || pending_bond.is_some() {
                        return Err(self.invalid(here));
                    }
                    branches.push((prev, here));
                    self.pos += 1;
                }
                b')' => {
                    let (p, _) = branches.pop().ok_or_else(|| self.invalid(here))?;
                    if pending_bond.is_some() || self.bytes.get(here.wrapping_sub(1)) == Some(&b'(') {
                        return Err(self.invalid(here));
                    }
                    prev = p;
                    self.pos += 1;
                }
                b'.' => {
                    if !have_atom || pending_bond.is_some() || !branches.is_empty() {
                        return Err(self.invalid(here));
                    }
                    prev = None;
                    have_atom = false;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' | b'$' => {
                    if !have_atom || pending_bond.is_some() {
                        return Err(self.invalid(here));
                    }
                    let bond = self.parse_bond()?.expect("bond symbol");
                    pending_bond = Some((bond, here));
                }
                b'0'..=b'9' | b'%' => {
                    if !have_atom {
                        return Err(self.invalid(here));
                    }
                    let num = self.ring_number()?.expect("ring digit");
                    let bond = pending_bond.take().map(|(b, _)| b);
                    if let Some(idx) = self.rings.iter().position(|(n, _)| *n == num) {
                        let (_, open) = self.rings.swap_remove(idx);
                        let bond = match (open.bond, bond) {
                            (Some(x), Some(y)) if x != y => return Err(self.invalid(here)),
                            (Some(x), _) | (None, Some(x)) => Some(x),
                            (None, None) => None,
                        };
                        if let (Some(a), Some(b)) = (open.atom, prev) {
                            let bond = bond.unwrap_or_else(|| implicit_bond(self.atoms[a], self.atoms[b]));
                            self.add_edge(a, b, bond, here)?;
                        }
                    } else {
                        self.rings.push((
                            num,
                            OpenRing {
                                atom: prev,
                                bond,
                                offset: here,
                            },
                        ));
                    }
                }
                b'@' | b'+' => return Err(self.invalid(here)),
                _ => {
                    let bond = pending_bond.take();
                    let atom = self.parse_atom()?;
                    if let (Some(a), Some(b)) = (prev, atom) {
                        let bond = bond
                            .map(|(b, _)| b)
                            .unwrap_or_else(|| implicit_bond(self.atoms[a], self.atoms[b]));
                        self.add_edge(a, b, bond, here)?;
                    }
                    prev = atom;
                    have_atom = true;
                }
            }
        }
        if let Some((_, at)) = pending_bond {
            return Err(self.invalid(at));
        }
        if let Some(&(_, at)) = branches.first() {
            return Err(SmilesError::at(SmilesErrorKind::UnclosedBranch, at));
        }
        if let Some((num, open)) = self.rings.iter().min_by_key(|(_, r)| r.offset) {
            return Err(SmilesError::at(SmilesErrorKind::UnclosedRing(*num), open.offset));
        }
        if self.atoms.is_empty() {
            return Err(SmilesError::at(SmilesErrorKind::EmptyInput, 0));
        }
        let atoms = self.atoms.iter().map(|a| a.element).collect();
        Ok(MolecularGraph::from_edges(atoms, &self.edges))
    }
}

/// Parse a SMILES string into a heavy-atom graph.
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, SmilesError> {
    Parser {
        bytes: text.trim_end().as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        edges: Vec::new(),
        rings: Vec::new(),
    }
    .run()
}

fn written_aromatic(g: &MolecularGraph, i: usize) -> bool {
    g.atom(i).aromatic_symbol().is_some() && g.neighbors(i).any(|(_, b)| b == BondType::Aromatic)
}

fn bond_symbol(bond: BondType, both_lower: bool) -> &'static str {
    match (bond, both_lower) {
        (BondType::Single, true) => "-",
        (BondType::Single, false) => "",
        (BondType::Double, _) => "=",
        (BondType::Triple, _) => "#",
        (BondType::Aromatic, true) => "",
        (BondType::Aromatic, false) => ":",
        (BondType::None, _) => unreachable!("no symbol for a missing bond"),
    }
}

fn push_ring_label(out: &mut String, d: u32) {
    if d < 10 {
        out.push((b'0' + d as u8) as char);
    } else {
        out.push('%');
        out.push((b'0' + (d / 10) as u8) as char);
        out.push((b'0' + (d % 10) as u8) as char);
    }
}

/// Write a SMILES string whose traversal order is fixed by `rank`
/// (lower rank first): each component starts at its lowest-ranked atom and
/// neighbors are explored in rank order.
pub fn write_smiles_with_order(g: &MolecularGraph, rank: &[usize]) -> String {
    let n = g.atom_count();
    assert_eq!(rank.len(), n, "rank length mismatch");
    let lower: Vec<bool> = (0..n).map(|i| written_aromatic(g, i)).collect();
    let sorted_neighbors: Vec<Vec<(usize, BondType)>> = (0..n)
        .map(|i| {
            let mut v: Vec<_> = g.neighbors(i).collect();
            v.sort_by_key(|&(j, _)| rank[j]);
            v
        })
        .collect();

    // Pass 1: DFS tree and ring-closure pairs.
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    // ring_open[u]: partners w visited after u, closing at w.
    let mut ring_open: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_close: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut roots = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| rank[i]);
    for &root in &order {
        if visited[root] {
            continue;
        }
        roots.push(root);
        // Iterative DFS: (atom, parent, next neighbor cursor).
        let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
        visited[root] = true;
        while let Some(top) = stack.last_mut() {
            let (u, parent, cursor) = *top;
            if cursor >= sorted_neighbors[u].len() {
                stack.pop();
                continue;
            }
            top.2 += 1;
            let (v, _) = sorted_neighbors[u][cursor];
            if Some(v) == parent {
                continue;
            }
            if visited[v] {
                // Back edge seen from the later atom u toward ancestor v.
                if !ring_close[u].contains(&v) && !ring_open[u].contains(&v) {
                    ring_open[v].push(u);
                    ring_close[u].push(v);
                }
                continue;
            }
            visited[v] = true;
            children[u].push(v);
            stack.push((v, Some(u), 0));
        }
    }

    // Pass 2: emission.
    let mut out = String::new();
    let mut digit_of: Vec<(usize, usize, u32)> = Vec::new();
    let mut free: Vec<bool> = vec![true; 100];
    free[0] = false;
    for (ci, &root) in roots.iter().enumerate() {
        if ci > 0 {
            out.push('.');
        }
        // Explicit stack of emission tasks.
        enum Task {
            Atom(usize, Option<usize>),
            Text(&'static str),
        }
        let mut tasks = vec![Task::Atom(root, None)];
        while let Some(task) = tasks.pop() {
            let (u, parent) = match task {
                Task::Text(s) => {
                    out.push_str(s);
                    continue;
                }
                Task::Atom(u, p) => (u, p),
            };
            if let Some(p) = parent {
                out.push_str(bond_symbol(g.bond(p, u), lower[p] && lower[u]));
            }
            let el = g.atom(u);
            if lower[u] {
                out.push_str(el.aromatic_symbol().expect("aromatic spelling"));
            } else {
                out.push_str(el.symbol());
            }
            // Close rings first so their digits can be reused right away.
            let mut closes = ring_close[u].clone();
            closes.sort_by_key(|&w| rank[w]);
            for w in closes {
                let k = digit_of
                    .iter()
                    .position(|&(a, b, _)| a == w && b == u)
                    .expect("ring opened before closing");
                let (_, _, d) = digit_of.swap_remove(k);
                out.push_str(bond_symbol(g.bond(u, w), lower[u] && lower[w]));
                push_ring_label(&mut out, d);
                free[d as usize] = true;
            }
            let mut opens = ring_open[u].clone();
            opens.sort_by_key(|&w| rank[w]);
            for w in opens {
                let d = free.iter().position(|&f| f).expect("fewer than 100 open rings") as u32;
                free[d as usize] = false;
                digit_of.push((u, w, d));
                push_ring_label(&mut out, d);
            }
            let kids = &children[u];
            // Push in reverse so the first child is emitted first.
            for (k, &v) in kids.iter().enumerate().rev() {
                let last = k + 1 == kids.len();
                if last {
                    tasks.push(Task::Atom(v, Some(u)));
                } else {
                    tasks.push(Task::Text(")"));
                    tasks.push(Task::Atom(v, Some(u)));
                    tasks.push(Task::Text("("));
                }
            }
        }
    }
    out
}
