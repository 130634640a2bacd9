//! SMILES parser for the organic subset plus bracket atoms.
//!
//! Bond orders exist only inside this module: they feed implicit-hydrogen
//! filling and valence validation, after which the graph keeps bare
//! connectivity. Aromatic lowercase notation is resolved without Kekulé
//! assignment: an aromatic C, N or P that still has valence room is assumed
//! to carry exactly one ring double bond (the `+1` allowance below), while
//! aromatic O and S contribute lone pairs. Pyrrole-type nitrogen must be
//! written `[nH]`, as usual.

use super::{Atom, Element, MolecularGraph, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondSym {
    Default,
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSym {
    fn order(self) -> i32 {
        match self {
            BondSym::Default | BondSym::Single | BondSym::Aromatic => 1,
            BondSym::Double => 2,
            BondSym::Triple => 3,
        }
    }
}

#[derive(Debug, Clone)]
struct RawAtom {
    element: Element,
    aromatic: bool,
    bracket: bool,
    h_count: u32,
    charge: i32,
}

struct RingOpen {
    atom: usize,
    bond: BondSym,
    pos: usize,
}

/// Parse a single-fragment SMILES string into a folded [`MolecularGraph`].
pub fn parse_smiles(text: &str) -> Result<MolecularGraph, ParseError> {
    let mut p = Parser::new(text);
    p.run()?;
    p.finish(text)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<RawAtom>,
    bonds: Vec<(usize, usize, BondSym)>,
    branch_stack: Vec<(usize, usize)>,
    ring_open: Vec<(u16, RingOpen)>,
    prev_atom: Option<usize>,
    pending_bond: Option<(BondSym, usize)>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            bonds: Vec::new(),
            branch_stack: Vec::new(),
            ring_open: Vec::new(),
            prev_atom: None,
            pending_bond: None,
        }
    }

    fn syntax(&self, pos: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        Some(c)
    }

    fn run(&mut self) -> Result<(), ParseError> {
        if self.bytes.is_empty() {
            return Err(ParseError::Empty);
        }
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'-' => {
                    self.bump();
                    self.set_pending(BondSym::Single, at)?;
                }
                b'=' => {
                    self.bump();
                    self.set_pending(BondSym::Double, at)?;
                }
                b'#' => {
                    self.bump();
                    self.set_pending(BondSym::Triple, at)?;
                }
                b':' => {
                    self.bump();
                    self.set_pending(BondSym::Aromatic, at)?;
                }
                b'/' | b'\\' => {
                    return Err(self.syntax(at, "stereo bonds are not supported"));
                }
                b'.' => {
                    return Err(ParseError::Disconnected);
                }
                b'(' => {
                    self.bump();
                    if self.pending_bond.is_some() {
                        return Err(self.syntax(at, "bond symbol before `(`"));
                    }
                    match self.prev_atom {
                        Some(a) => self.branch_stack.push((a, at)),
                        None => return Err(self.syntax(at, "branch with no preceding atom")),
                    }
                }
                b')' => {
                    self.bump();
                    if self.pending_bond.is_some() {
                        return Err(self.syntax(at, "dangling bond before `)`"));
                    }
                    match self.branch_stack.pop() {
                        Some((a, _)) => self.prev_atom = Some(a),
                        None => return Err(ParseError::UnbalancedBranch { pos: at }),
                    }
                }
                b'0'..=b'9' => {
                    self.bump();
                    self.ring_digit((c - b'0') as u16, at)?;
                }
                b'%' => {
                    self.bump();
                    let d1 = self.bump().filter(u8::is_ascii_digit);
                    let d2 = self.bump().filter(u8::is_ascii_digit);
                    match (d1, d2) {
                        (Some(a), Some(b)) => {
                            let n = (a - b'0') as u16 * 10 + (b - b'0') as u16;
                            self.ring_digit(n, at)?;
                        }
                        _ => return Err(self.syntax(at, "`%` needs two digits")),
                    }
                }
                b'[' => {
                    self.bump();
                    let atom = self.bracket_atom(at)?;
                    self.push_atom(atom)?;
                }
                b'*' => {
                    return Err(ParseError::UnsupportedElement {
                        pos: at,
                        symbol: "*".into(),
                    });
                }
                _ => {
                    let atom = self.organic_atom(at)?;
                    self.push_atom(atom)?;
                }
            }
        }
        if let Some((_, pos)) = self.pending_bond {
            return Err(self.syntax(pos, "trailing bond symbol"));
        }
        if let Some(&(_, pos)) = self.branch_stack.last() {
            return Err(ParseError::UnbalancedBranch { pos });
        }
        if let Some((digit, open)) = self.ring_open.first() {
            return Err(ParseError::UnclosedRing {
                digit: *digit,
                pos: open.pos,
            });
        }
        if self.atoms.is_empty() {
            return Err(ParseError::Empty);
        }
        Ok(())
    }

    fn set_pending(&mut self, bond: BondSym, pos: usize) -> Result<(), ParseError> {
        if self.pending_bond.is_some() {
            return Err(self.syntax(pos, "two bond symbols in a row"));
        }
        if self.prev_atom.is_none() {
            return Err(self.syntax(pos, "bond with no preceding atom"));
        }
        self.pending_bond = Some((bond, pos));
        Ok(())
    }

    fn take_pending(&mut self) -> BondSym {
        self.pending_bond
            .take()
            .map(|(b, _)| b)
            .unwrap_or(BondSym::Default)
    }

    fn push_atom(&mut self, atom: RawAtom) -> Result<(), ParseError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev_atom {
            let bond = self.take_pending();
            self.bonds.push((prev, idx, bond));
        } else if self.pending_bond.is_some() {
            let (_, pos) = self.pending_bond.take().unwrap();
            return Err(self.syntax(pos, "bond with no preceding atom"));
        }
        self.prev_atom = Some(idx);
        Ok(())
    }

    fn ring_digit(&mut self, digit: u16, at: usize) -> Result<(), ParseError> {
        let atom = match self.prev_atom {
            Some(a) => a,
            None => return Err(self.syntax(at, "ring digit with no preceding atom")),
        };
        let bond = self.pending_bond.take().map(|(b, _)| b).unwrap_or(BondSym::Default);
        if let Some(i) = self.ring_open.iter().position(|(d, _)| *d == digit) {
            let (_, open) = self.ring_open.swap_remove(i);
            if open.atom == atom {
                return Err(self.syntax(at, "ring bond closes on its own atom"));
            }
            let bond = match (open.bond, bond) {
                (BondSym::Default, b) | (b, BondSym::Default) => b,
                (a, b) if a == b => a,
                _ => return Err(self.syntax(at, "ring bond order mismatch")),
            };
            if self
                .bonds
                .iter()
                .any(|&(a, b, _)| (a, b) == (open.atom, atom) || (a, b) == (atom, open.atom))
            {
                return Err(self.syntax(at, "duplicate bond between atoms"));
            }
            self.bonds.push((open.atom, atom, bond));
        } else {
            self.ring_open.push((digit, RingOpen { atom, bond, pos: at }));
        }
        Ok(())
    }

    fn organic_atom(&mut self, at: usize) -> Result<RawAtom, ParseError> {
        let c = self.bump().expect("caller peeked");
        let (element, aromatic) = match c {
            b'B' => {
                if self.peek() == Some(b'r') {
                    self.bump();
                    (Element::Br, false)
                } else {
                    (Element::B, false)
                }
            }
            b'C' => {
                if self.peek() == Some(b'l') {
                    self.bump();
                    (Element::Cl, false)
                } else {
                    (Element::C, false)
                }
            }
            b'N' => (Element::N, false),
            b'O' => (Element::O, false),
            b'P' => (Element::P, false),
            b'S' => (Element::S, false),
            b'F' => (Element::F, false),
            b'I' => (Element::I, false),
            b'b' => (Element::B, true),
            b'c' => (Element::C, true),
            b'n' => (Element::N, true),
            b'o' => (Element::O, true),
            b'p' => (Element::P, true),
            b's' => (Element::S, true),
            _ => {
                return Err(ParseError::UnsupportedElement {
                    pos: at,
                    symbol: (c as char).to_string(),
                });
            }
        };
        Ok(RawAtom {
            element,
            aromatic,
            bracket: false,
            h_count: 0,
            charge: 0,
        })
    }

    fn bracket_atom(&mut self, open_at: usize) -> Result<RawAtom, ParseError> {
        if self.peek().is_some_and(|c| c.is_ascii_digit()) {
            return Err(self.syntax(self.pos, "isotopes are not supported"));
        }
        let sym_at = self.pos;
        let c = self
            .bump()
            .ok_or_else(|| self.syntax(open_at, "unterminated bracket atom"))?;
        if c == b'@' {
            return Err(self.syntax(sym_at, "stereochemistry is not supported"));
        }
        // Inside a bracket, an uppercase letter followed by a lowercase one is
        // always a two-letter element symbol ([Na+], [Se]); only Cl and Br are
        // in our subset. A following `H` is the hydrogen count, never part of
        // the symbol.
        let (element, aromatic) = if c.is_ascii_uppercase()
            && self.peek().is_some_and(|n| n.is_ascii_lowercase())
        {
            let second = self.bump().unwrap();
            match (c, second) {
                (b'C', b'l') => (Element::Cl, false),
                (b'B', b'r') => (Element::Br, false),
                _ => {
                    return Err(ParseError::UnsupportedElement {
                        pos: sym_at,
                        symbol: format!("{}{}", c as char, second as char),
                    });
                }
            }
        } else {
            match c {
                b'B' => (Element::B, false),
                b'C' => (Element::C, false),
                b'N' => (Element::N, false),
                b'O' => (Element::O, false),
                b'P' => (Element::P, false),
                b'S' => (Element::S, false),
                b'F' => (Element::F, false),
                b'I' => (Element::I, false),
                b'H' => (Element::H, false),
                b'b' => (Element::B, true),
                b'c' => (Element::C, true),
                b'n' => (Element::N, true),
                b'o' => (Element::O, true),
                b'p' => (Element::P, true),
                b's' => (Element::S, true),
                _ => {
                    return Err(ParseError::UnsupportedElement {
                        pos: sym_at,
                        symbol: (c as char).to_string(),
                    });
                }
            }
        };

        let mut h_count = 0u32;
        let mut charge = 0i32;
        // element == H means an explicit hydrogen node; it takes no H suffix.
        loop {
            let at = self.pos;
            match self.bump() {
                Some(b']') => break,
                Some(b'@') => return Err(self.syntax(at, "stereochemistry is not supported")),
                Some(b'H') if element != Element::H => {
                    h_count = 1;
                    if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        h_count = (self.bump().unwrap() - b'0') as u32;
                    }
                }
                Some(b'+') => {
                    charge = 1;
                    if self.peek() == Some(b'+') {
                        self.bump();
                        charge = 2;
                    } else if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        charge = (self.bump().unwrap() - b'0') as i32;
                    }
                }
                Some(b'-') => {
                    charge = -1;
                    if self.peek() == Some(b'-') {
                        self.bump();
                        charge = -2;
                    } else if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                        charge = -((self.bump().unwrap() - b'0') as i32);
                    }
                }
                Some(b':') => return Err(self.syntax(at, "atom classes are not supported")),
                Some(other) => {
                    return Err(self.syntax(at, format!("unexpected `{}` in bracket", other as char)));
                }
                None => return Err(self.syntax(open_at, "unterminated bracket atom")),
            }
        }
        Ok(RawAtom {
            element,
            aromatic,
            bracket: true,
            h_count,
            charge,
        })
    }

    /// Valence accounting, connectivity and ring checks; builds the graph.
    fn finish(self, text: &str) -> Result<MolecularGraph, ParseError> {
        let n = self.atoms.len();
        let mut bond_sum = vec![0i32; n];
        let mut degree = vec![0u32; n];
        let mut adjacency = vec![false; n * n];
        for &(a, b, sym) in &self.bonds {
            bond_sum[a] += sym.order();
            bond_sum[b] += sym.order();
            degree[a] += 1;
            degree[b] += 1;
            adjacency[a * n + b] = true;
            adjacency[b * n + a] = true;
        }

        let mut atoms = Vec::with_capacity(n);
        for (i, raw) in self.atoms.iter().enumerate() {
            let implicit_h = if raw.bracket {
                let max_valence = raw
                    .element
                    .valences()
                    .iter()
                    .map(|&v| raw.element.charged_valence(v, raw.charge))
                    .max()
                    .unwrap_or(0);
                if bond_sum[i] + raw.h_count as i32 > max_valence {
                    return Err(ParseError::Valence {
                        atom: i,
                        element: raw.element,
                        bond_sum: bond_sum[i] + raw.h_count as i32,
                    });
                }
                raw.h_count
            } else {
                // One ring double bond is implied for aromatic C/N/P when it fits.
                let allowance = matches!(raw.element, Element::C | Element::N | Element::P)
                    && raw.aromatic
                    && raw
                        .element
                        .valences()
                        .iter()
                        .any(|&v| bond_sum[i] + 1 <= v);
                let target = bond_sum[i] + if allowance { 1 } else { 0 };
                let fit = raw.element.valences().iter().copied().find(|&v| target <= v);
                match fit {
                    Some(v) => (v - target) as u32,
                    None => {
                        return Err(ParseError::Valence {
                            atom: i,
                            element: raw.element,
                            bond_sum: bond_sum[i],
                        });
                    }
                }
            };
            atoms.push(Atom {
                element: raw.element,
                explicit_degree: degree[i],
                implicit_h,
                formal_charge: raw.charge,
                in_ring: false,
            });
        }

        // Connectivity: the grammar cannot produce multiple components without
        // `.` (already rejected), but check anyway.
        if n > 0 {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if adjacency[i * n + j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            if seen.iter().any(|&s| !s) {
                return Err(ParseError::Disconnected);
            }
        }

        for (i, j) in ring_atoms(n, &self.bonds) {
            atoms[i].in_ring = true;
            atoms[j].in_ring = true;
        }

        Ok(MolecularGraph::new(atoms, adjacency, text.to_string()))
    }
}

/// Edges that lie on a cycle (non-bridges), found by DFS low-link.
fn ring_atoms(n: usize, bonds: &[(usize, usize, BondSym)]) -> Vec<(usize, usize)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(a, b, _)) in bonds.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut is_bridge = vec![false; bonds.len()];
    let mut timer = 0usize;

    fn dfs(
        u: usize,
        parent_edge: usize,
        adj: &[Vec<(usize, usize)>],
        disc: &mut [usize],
        low: &mut [usize],
        is_bridge: &mut [bool],
        timer: &mut usize,
    ) {
        disc[u] = *timer;
        low[u] = *timer;
        *timer += 1;
        for &(v, e) in &adj[u] {
            if e == parent_edge {
                continue;
            }
            if disc[v] == usize::MAX {
                dfs(v, e, adj, disc, low, is_bridge, timer);
                low[u] = low[u].min(low[v]);
                if low[v] > disc[u] {
                    is_bridge[e] = true;
                }
            } else {
                low[u] = low[u].min(disc[v]);
            }
        }
    }

    for start in 0..n {
        if disc[start] == usize::MAX {
            dfs(start, usize::MAX, &adj, &mut disc, &mut low, &mut is_bridge, &mut timer);
        }
    }
    bonds
        .iter()
        .enumerate()
        .filter(|(e, _)| !is_bridge[*e])
        .map(|(_, &(a, b, _))| (a, b))
        .collect()
}
