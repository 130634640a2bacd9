//! Model-ready integer encodings of a molecular graph.
//!
//! The encoder turns a [`MolecularGraph`] into the three integer views the
//! model consumes: atom-type ids, clamped total-neighbor centrality, and an
//! all-pairs shortest-path-distance matrix whose entries are bucket indices.
//! Distances beyond `d_max` share one FAR bucket; an optional task virtual
//! node is appended whose row and column (diagonal included) carry a
//! distinguished TASK bucket, so conditioning on the task flows only through
//! attention against that node.

use super::{Element, EncodeError, MolecularGraph};

/// Centrality values are clamped to this; embedding tables size themselves
/// with [`CENTRALITY_BUCKETS`].
pub const C_MAX: u32 = 8;
/// Number of centrality embedding rows (values `0..=C_MAX`).
pub const CENTRALITY_BUCKETS: usize = C_MAX as usize + 1;
/// Default shortest-path distance threshold.
pub const DEFAULT_D_MAX: u32 = 5;

/// Mapping from elements to dense atom-type ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomVocab {
    elements: Vec<Element>,
}

impl AtomVocab {
    /// The full supported element set, in a fixed order.
    pub fn standard() -> Self {
        AtomVocab {
            elements: Element::ALL.to_vec(),
        }
    }

    /// A restricted vocabulary (mostly useful in tests).
    pub fn from_elements(elements: &[Element]) -> Self {
        AtomVocab {
            elements: elements.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn id(&self, element: Element) -> Option<usize> {
        self.elements.iter().position(|&e| e == element)
    }
}

impl Default for AtomVocab {
    fn default() -> Self {
        AtomVocab::standard()
    }
}

/// Integer tensors for one molecule, optionally with a task virtual node.
///
/// `spd` covers every node including the virtual one; `atom_type_ids` and
/// `centrality` cover only real atoms — the virtual node is embedded from a
/// separate task table, not from atom features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedGraph {
    atom_type_ids: Vec<usize>,
    centrality: Vec<usize>,
    /// Row-major `node_count()`² bucket indices.
    spd: Vec<usize>,
    d_max: u32,
    task_id: Option<u32>,
}

impl EncodedGraph {
    /// Number of real atoms.
    pub fn real_count(&self) -> usize {
        self.atom_type_ids.len()
    }

    /// Real atoms plus the task node when present.
    pub fn node_count(&self) -> usize {
        self.real_count() + usize::from(self.task_id.is_some())
    }

    pub fn atom_type_ids(&self) -> &[usize] {
        &self.atom_type_ids
    }

    pub fn centrality(&self) -> &[usize] {
        &self.centrality
    }

    pub fn task_id(&self) -> Option<u32> {
        self.task_id
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    /// Bucket index for "further apart than `d_max`".
    pub fn far_bucket(&self) -> usize {
        self.d_max as usize + 1
    }

    /// Bucket index for pairs involving the task node.
    pub fn task_bucket(&self) -> usize {
        self.d_max as usize + 2
    }

    /// Total number of spd embedding rows: `0..=d_max`, FAR, TASK.
    pub fn spd_buckets(&self) -> usize {
        self.d_max as usize + 3
    }

    pub fn spd_at(&self, i: usize, j: usize) -> usize {
        self.spd[i * self.node_count() + j]
    }

    /// Re-encode with real atoms relabeled by `perm` (`perm[new] = old`).
    /// The task node, when present, stays last. Intended for invariance tests.
    pub fn permuted(&self, perm: &[usize]) -> EncodedGraph {
        let n = self.real_count();
        assert_eq!(perm.len(), n, "permutation length must match atom count");
        let mut atom_type_ids = Vec::with_capacity(n);
        let mut centrality = Vec::with_capacity(n);
        for &old in perm {
            atom_type_ids.push(self.atom_type_ids[old]);
            centrality.push(self.centrality[old]);
        }
        let total = self.node_count();
        let map = |new: usize| if new < n { perm[new] } else { new };
        let mut spd = vec![0usize; total * total];
        for i in 0..total {
            for j in 0..total {
                spd[i * total + j] = self.spd_at(map(i), map(j));
            }
        }
        EncodedGraph {
            atom_type_ids,
            centrality,
            spd,
            d_max: self.d_max,
            task_id: self.task_id,
        }
    }
}

/// All-pairs BFS hop distances; entries above `d_max` become FAR = `d_max+1`.
pub(super) fn shortest_paths(graph: &MolecularGraph, d_max: u32) -> Vec<Vec<u32>> {
    let n = graph.atom_count();
    let far = d_max + 1;
    let mut out = vec![vec![far; n]; n];
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        let mut dist = vec![u32::MAX; n];
        dist[start] = 0;
        queue.clear();
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in graph.neighbors(i) {
                if dist[j] == u32::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        for (j, &d) in dist.iter().enumerate() {
            out[start][j] = if d > d_max { far } else { d };
        }
    }
    out
}

/// Assemble the model-ready encoding of `graph`.
pub fn encode(
    graph: &MolecularGraph,
    vocab: &AtomVocab,
    d_max: u32,
    task_id: Option<u32>,
) -> Result<EncodedGraph, EncodeError> {
    if d_max < 1 {
        return Err(EncodeError::InvalidDMax(d_max));
    }
    let n = graph.atom_count();
    let mut atom_type_ids = Vec::with_capacity(n);
    for atom in graph.atoms() {
        match vocab.id(atom.element) {
            Some(id) => atom_type_ids.push(id),
            None => return Err(EncodeError::UnknownAtomType(atom.element.symbol().into())),
        }
    }
    let centrality = graph
        .total_centrality_clamped(C_MAX)
        .into_iter()
        .map(|c| c as usize)
        .collect();

    let hops = shortest_paths(graph, d_max);
    let total = n + usize::from(task_id.is_some());
    let task_bucket = d_max as usize + 2;
    let mut spd = vec![task_bucket; total * total];
    for i in 0..n {
        for j in 0..n {
            spd[i * total + j] = hops[i][j] as usize;
        }
    }

    Ok(EncodedGraph {
        atom_type_ids,
        centrality,
        spd,
        d_max,
        task_id,
    })
}
