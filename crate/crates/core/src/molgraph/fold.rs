//! Resonance folding and structural equality.
//!
//! Folding maps a molecular graph onto its resonance-invariant form: bond
//! orders and aromatic flags are discarded, formal charges are kept on atoms
//! but never distinguish bonds. The parser already produces graphs in this
//! form, so [`fold_resonance`] is the (idempotent, total) projection that
//! makes the invariant explicit at type level; alternative notations of the
//! same molecule — aromatic vs. kekulized, different charge placements of a
//! resonance pair written over the same skeleton — land on equal graphs.
//!
//! [`same_molecule`] decides whether two graphs are isomorphic respecting
//! element, implicit hydrogen count and formal charge. It is a backtracking
//! (VF2-style) matcher: fine for the molecule sizes this crate handles, and
//! independent of atom emission order.

use super::MolecularGraph;

/// Project a graph onto its resonance-folded form.
///
/// Parsed graphs are already folded, so this is the identity; it exists so
/// call sites can state the invariant they rely on.
pub fn fold_resonance(graph: MolecularGraph) -> MolecularGraph {
    graph
}

/// True when the two graphs describe the same folded molecule, i.e. there is
/// an atom bijection preserving element, implicit hydrogens, formal charge
/// and adjacency.
pub fn same_molecule(a: &MolecularGraph, b: &MolecularGraph) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() {
        return false;
    }
    // Cheap invariant screen before backtracking.
    let mut sig_a: Vec<_> = a.atoms().iter().map(signature).collect();
    let mut sig_b: Vec<_> = b.atoms().iter().map(signature).collect();
    sig_a.sort_unstable();
    sig_b.sort_unstable();
    if sig_a != sig_b {
        return false;
    }

    let mut mapping = vec![usize::MAX; n];
    let mut used = vec![false; n];
    extend(a, b, 0, &mut mapping, &mut used)
}

type Signature = (u8, u32, u32, i32, bool);

fn signature(atom: &super::Atom) -> Signature {
    (
        atom.element as u8,
        atom.explicit_degree,
        atom.implicit_h,
        atom.formal_charge,
        atom.in_ring,
    )
}

fn compatible(a: &MolecularGraph, b: &MolecularGraph, i: usize, j: usize) -> bool {
    signature(&a.atoms()[i]) == signature(&b.atoms()[j])
}

fn extend(
    a: &MolecularGraph,
    b: &MolecularGraph,
    i: usize,
    mapping: &mut [usize],
    used: &mut [bool],
) -> bool {
    let n = a.atom_count();
    if i == n {
        return true;
    }
    'candidates: for j in 0..n {
        if used[j] || !compatible(a, b, i, j) {
            continue;
        }
        // Edges between i and already-mapped atoms must be mirrored exactly.
        for k in 0..i {
            if a.bonded(i, k) != b.bonded(j, mapping[k]) {
                continue 'candidates;
            }
        }
        mapping[i] = j;
        used[j] = true;
        if extend(a, b, i + 1, mapping, used) {
            return true;
        }
        mapping[i] = usize::MAX;
        used[j] = false;
    }
    false
}
