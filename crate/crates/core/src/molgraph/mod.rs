//! Molecular graphs from SMILES.
//!
//! The parser covers the organic subset (B, C, N, O, P, S, F, Cl, Br, I plus
//! aromatic lowercase forms) and bracket atoms with charges and explicit
//! hydrogen counts. Bond orders are used to fill implicit hydrogens and
//! validate valence, then discarded: the retained graph is element, H-count
//! and connectivity only, so every Kekulé or charge-separated spelling of the
//! same connectivity folds into one form. Stereochemistry, isotopes and
//! wildcard atoms are out of scope.

mod encode;
mod fold;
mod parse;

pub use encode::{encode, AtomVocab, EncodedGraph, C_MAX, CENTRALITY_BUCKETS, DEFAULT_D_MAX};
pub use fold::{fold_resonance, same_molecule};
pub use parse::parse_smiles;

use serde::Serialize;
use thiserror::Error;

/// Chemical elements the parser accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    H,
}

impl Element {
    pub const ALL: [Element; 11] = [
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::P,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
        Element::I,
        Element::H,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::H => "H",
        }
    }

    /// Allowed valences under the organic-subset model, lowest first.
    pub fn valences(self) -> &'static [i32] {
        match self {
            Element::B => &[3],
            Element::C => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S => &[2, 4, 6],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::H => &[1],
        }
    }

    /// Valence shifted by formal charge.
    ///
    /// Electronegative elements gain a bond when cationic and lose one when
    /// anionic ([NH4+], [O-]); boron is the mirror case ([BH4-]); carbon and
    /// hydrogen lose a bond in either direction ([CH3+] and [CH3-] are both
    /// trivalent).
    pub fn charged_valence(self, base: i32, charge: i32) -> i32 {
        match self {
            Element::N
            | Element::O
            | Element::P
            | Element::S
            | Element::F
            | Element::Cl
            | Element::Br
            | Element::I => base + charge,
            Element::B => base - charge,
            Element::C | Element::H => base - charge.abs(),
        }
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One heavy (or explicitly written) atom of a parsed molecule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    /// Number of explicit bonded neighbors in the graph.
    pub explicit_degree: u32,
    /// Hydrogens implied by the valence model or written in brackets.
    pub implicit_h: u32,
    /// Formal charge. Parsed for valence accounting; never embedded.
    pub formal_charge: i32,
    /// True when the atom lies on a cycle.
    pub in_ring: bool,
}

impl Atom {
    /// Explicit neighbors plus implicit hydrogens.
    pub fn total_neighbors(&self) -> u32 {
        self.explicit_degree + self.implicit_h
    }
}

/// A parsed, folded molecular graph.
///
/// Atoms are kept in parser emission order, which is deterministic per input
/// string. Bond orders and aromatic flags are gone; only the symmetric
/// adjacency survives. Equality of two folded graphs up to atom relabeling is
/// decided by [`same_molecule`].
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    /// Row-major n*n symmetric boolean adjacency, zero diagonal.
    adjacency: Vec<bool>,
    source_smiles: String,
}

impl MolecularGraph {
    pub(crate) fn new(atoms: Vec<Atom>, adjacency: Vec<bool>, source_smiles: String) -> Self {
        debug_assert_eq!(adjacency.len(), atoms.len() * atoms.len());
        MolecularGraph {
            atoms,
            adjacency,
            source_smiles,
        }
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn source_smiles(&self) -> &str {
        &self.source_smiles
    }

    pub fn bonded(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.atoms.len() + j]
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.atoms.len();
        (0..n).filter(move |&j| self.adjacency[i * n + j])
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.atoms.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[i * n + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Per-atom total-neighbor counts clamped to `clamp`.
    pub fn total_centrality_clamped(&self, clamp: u32) -> Vec<u32> {
        self.atoms
            .iter()
            .map(|a| a.total_neighbors().min(clamp))
            .collect()
    }

    /// Unclamped total-neighbor counts.
    pub fn total_centrality(&self) -> Vec<u32> {
        self.atoms.iter().map(|a| a.total_neighbors()).collect()
    }

    /// All-pairs BFS hop distances with entries above `d_max` replaced by the
    /// FAR sentinel `d_max + 1`.
    pub fn shortest_paths(&self, d_max: u32) -> Vec<Vec<u32>> {
        encode::shortest_paths(self, d_max)
    }

    /// JSON debug dump: `{atoms:[{element,implicit_h,charge}], edges:[[i,j]]}`.
    pub fn debug_json(&self) -> String {
        #[derive(Serialize)]
        struct AtomDump<'a> {
            element: &'a str,
            implicit_h: u32,
            charge: i32,
        }
        #[derive(Serialize)]
        struct Dump<'a> {
            atoms: Vec<AtomDump<'a>>,
            edges: Vec<[usize; 2]>,
        }
        let dump = Dump {
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomDump {
                    element: a.element.symbol(),
                    implicit_h: a.implicit_h,
                    charge: a.formal_charge,
                })
                .collect(),
            edges: self.edges().iter().map(|&(i, j)| [i, j]).collect(),
        };
        serde_json::to_string(&dump).expect("graph dump serializes")
    }
}

/// Errors from SMILES parsing and validation.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty SMILES")]
    Empty,
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unsupported element `{symbol}` at position {pos}")]
    UnsupportedElement { pos: usize, symbol: String },
    #[error("valence violation on atom {atom} ({element}): {bond_sum} bonds exceed charge-adjusted valence")]
    Valence {
        atom: usize,
        element: Element,
        bond_sum: i32,
    },
    #[error("ring-bond digit {digit} opened at position {pos} but never closed")]
    UnclosedRing { digit: u16, pos: usize },
    #[error("unbalanced branch parenthesis at position {pos}")]
    UnbalancedBranch { pos: usize },
    #[error("disconnected input: multi-fragment SMILES are rejected")]
    Disconnected,
}

/// Errors from graph encoding.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("atom type {0} not present in vocabulary")]
    UnknownAtomType(String),
    #[error("d_max must be >= 1, got {0}")]
    InvalidDMax(u32),
    #[error("task id {task} out of range for {num_tasks} tasks")]
    TaskOutOfRange { task: u32, num_tasks: u32 },
}
