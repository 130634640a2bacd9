//! Deterministic toy corpus for offline tests and demos.
//!
//! Molecules are enumerated from scaffold × substituent templates, so the
//! corpus is reproducible from code alone. Targets are constructed from graph
//! quantities the model provably receives as inputs (centrality, degree, ring
//! membership, element identity), which makes learning curves meaningful:
//! a failure to fit is a training-stack bug, not noise.
//!
//! The downstream targets are noisy functions of centrality statistics, so a
//! model pretrained on per-atom centrality-flavored properties has a genuine
//! head start over a scratch model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::molgraph::{parse_smiles, Element, MolecularGraph, C_MAX};

/// Scaffolds with one `R` substitution point. `R` is always placed so the
/// substituent's first atom receives the attachment bond (branch or suffix
/// position), which keeps every combination valence-legal.
const SCAFFOLDS: [&str; 14] = [
    "c1ccc(R)cc1",
    "Cc1ccc(R)cc1",
    "c1ccc2cc(R)ccc2c1",
    "c1cc(R)ncc1",
    "c1cc(R)[nH]c1",
    "C1CCC(R)CC1",
    "C1CC(R)OC1",
    "CCCCR",
    "CC(C)R",
    "CC(=O)NR",
    "c1ccc(CR)cc1",
    "C=CR",
    "N#CR",
    "OC(=O)R",
];

/// Substituents spliced into the scaffold at `R`.
const SUBSTITUENTS: [&str; 15] = [
    "C", "N", "O", "F", "Cl", "Br", "I", "S", "CC", "CCC", "C(C)C", "CO", "CN", "C#N", "C=O",
];

/// The deterministic toy corpus: every scaffold × substituent combination
/// with at most 12 heavy atoms, de-duplicated, in enumeration order. All
/// strings parse.
pub fn toy_smiles() -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for scaffold in SCAFFOLDS {
        for sub in SUBSTITUENTS {
            let smiles = scaffold.replace('R', sub);
            let graph = parse_smiles(&smiles)
                .unwrap_or_else(|e| panic!("toy corpus template produced {smiles:?}: {e}"));
            if graph.atom_count() <= 12 && seen.insert(smiles.clone()) {
                out.push(smiles);
            }
        }
    }
    out
}

/// Per-atom property vectors derived from graph structure.
///
/// * `charge`  — the clamped centrality value itself;
/// * `fukui_e` — explicit degree;
/// * `fukui_n` — ring membership plus half the centrality;
/// * `nmr`     — an element-dependent base plus the centrality.
pub fn toy_atom_props(graph: &MolecularGraph) -> [(&'static str, Vec<f64>); 4] {
    let centrality = graph.total_centrality_clamped(C_MAX);
    let charge: Vec<f64> = centrality.iter().map(|&c| c as f64).collect();
    let fukui_e: Vec<f64> = graph
        .atoms()
        .iter()
        .map(|a| a.explicit_degree as f64)
        .collect();
    let fukui_n: Vec<f64> = graph
        .atoms()
        .iter()
        .zip(&centrality)
        .map(|(a, &c)| (a.in_ring as u8) as f64 + 0.5 * c as f64)
        .collect();
    let nmr: Vec<f64> = graph
        .atoms()
        .iter()
        .zip(&centrality)
        .map(|(a, &c)| element_base(a.element) + c as f64)
        .collect();
    [
        ("charge", charge),
        ("fukui_e", fukui_e),
        ("fukui_n", fukui_n),
        ("nmr", nmr),
    ]
}

fn element_base(e: Element) -> f64 {
    // arbitrary but fixed per-element offsets, spread over a few units
    match e {
        Element::H => 0.0,
        Element::B => 0.5,
        Element::C => 1.0,
        Element::N => 1.5,
        Element::O => 2.0,
        Element::F => 2.5,
        Element::P => 3.0,
        Element::S => 3.5,
        Element::Cl => 4.0,
        Element::Br => 4.5,
        Element::I => 5.0,
    }
}

/// The deterministic descriptor behind the downstream tasks: the mean clamped
/// centrality plus half its population standard deviation.
pub fn centrality_statistic(graph: &MolecularGraph) -> f64 {
    let centrality = graph.total_centrality_clamped(C_MAX);
    let n = centrality.len() as f64;
    let mean = centrality.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = centrality
        .iter()
        .map(|&c| (c as f64 - mean) * (c as f64 - mean))
        .sum::<f64>()
        / n;
    mean + 0.5 * var.sqrt()
}

/// Atom-level pretraining JSONL (one molecule per line, all four properties).
pub fn toy_atom_jsonl() -> String {
    let mut out = String::new();
    for smiles in toy_smiles() {
        let graph = parse_smiles(&smiles).expect("toy corpus parses");
        let props = toy_atom_props(&graph);
        let mut obj = serde_json::Map::new();
        obj.insert("smiles".into(), serde_json::Value::String(smiles));
        let mut props_obj = serde_json::Map::new();
        for (name, values) in props {
            props_obj.insert(
                name.to_string(),
                serde_json::Value::Array(
                    values
                        .iter()
                        .map(|&v| serde_json::json!(round6(v)))
                        .collect(),
                ),
            );
        }
        obj.insert("atom_props".into(), serde_json::Value::Object(props_obj));
        out.push_str(&serde_json::Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

/// Molecule-level pretraining CSV: target = heavy-atom count (a clean
/// graph-level regression).
pub fn toy_homolumo_csv() -> String {
    let mut out = String::from("smiles,target\n");
    for smiles in toy_smiles() {
        let graph = parse_smiles(&smiles).expect("toy corpus parses");
        out.push_str(&format!("{smiles},{}\n", graph.atom_count()));
    }
    out
}

/// Downstream regression CSV with an explicit split column: target is the
/// centrality statistic plus seeded Gaussian noise.
/// Seed used for the copy of the downstream CSV committed under `data/`.
pub const DOWNSTREAM_SEED: u64 = 2026;
/// Noise level used for the committed downstream CSV.
pub const DOWNSTREAM_NOISE: f64 = 0.1;

pub fn toy_downstream_csv(seed: u64, noise_std: f64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("smiles,target,split\n");
    for (i, smiles) in toy_smiles().into_iter().enumerate() {
        let graph = parse_smiles(&smiles).expect("toy corpus parses");
        let y = centrality_statistic(&graph) + noise_std * standard_normal(&mut rng);
        let split = cyclic_split(i);
        out.push_str(&format!("{smiles},{},{split}\n", round6(y)));
    }
    out
}

/// Downstream binary CSV: label 1 when the noiseless centrality statistic
/// exceeds the corpus median.
pub fn toy_binary_csv() -> String {
    let smiles = toy_smiles();
    let stats: Vec<f64> = smiles
        .iter()
        .map(|s| centrality_statistic(&parse_smiles(s).expect("toy corpus parses")))
        .collect();
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = sorted[sorted.len() / 2];
    let mut out = String::from("smiles,target,split\n");
    for (i, s) in smiles.iter().enumerate() {
        let label = i32::from(stats[i] > median);
        out.push_str(&format!("{s},{label},{}\n", cyclic_split(i)));
    }
    out
}

/// Deterministic 8/1/1 interleaved split by enumeration index: stratified
/// across the scaffold sweep, so every split sees every scaffold family.
fn cyclic_split(i: usize) -> &'static str {
    match i % 10 {
        8 => "valid",
        9 => "test",
        _ => "train",
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms in (0, 1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainpipe::dataset::{parse_atom_jsonl, parse_mol_csv};

    #[test]
    fn corpus_is_deduplicated_and_parses() {
        let smiles = toy_smiles();
        assert!(smiles.len() >= 200, "corpus has {} molecules", smiles.len());
        let set: std::collections::BTreeSet<_> = smiles.iter().collect();
        assert_eq!(set.len(), smiles.len());
        for s in &smiles {
            parse_smiles(s).unwrap_or_else(|e| panic!("{s:?}: {e}"));
        }
    }

    #[test]
    fn generated_files_load_through_the_real_loaders() {
        let atoms = parse_atom_jsonl(&toy_atom_jsonl(), 7).unwrap();
        assert!(atoms.len() >= 200);
        assert!(!atoms.valid.is_empty() && !atoms.test.is_empty());
        let homolumo = parse_mol_csv(&toy_homolumo_csv(), 7).unwrap();
        assert_eq!(homolumo.len(), atoms.len());
        let downstream = parse_mol_csv(&toy_downstream_csv(20260816, 0.05), 0).unwrap();
        assert_eq!(downstream.len(), atoms.len());
        // explicit split column: 8/1/1 interleave
        assert!(downstream.valid.len() >= 15 && downstream.test.len() >= 15);
        let binary = parse_mol_csv(&toy_binary_csv(), 0).unwrap();
        let pos: usize = binary
            .train
            .iter()
            .filter(|r| r.target == 1.0)
            .count();
        assert!(pos >= 30 && binary.train.len() - pos >= 30, "pos {pos}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(toy_atom_jsonl(), toy_atom_jsonl());
        assert_eq!(
            toy_downstream_csv(1, 0.05),
            toy_downstream_csv(1, 0.05)
        );
        assert_ne!(toy_downstream_csv(1, 0.05), toy_downstream_csv(2, 0.05));
    }

    #[test]
    fn charge_property_equals_centrality() {
        // centrality counts implicit hydrogens: C in "CO" has 1 + 3H, O has 1 + 1H
        let graph = parse_smiles("CO").unwrap();
        let props = toy_atom_props(&graph);
        let (name, charge) = &props[0];
        assert_eq!(*name, "charge");
        assert_eq!(charge, &vec![4.0, 2.0]);
        // aromatic carbons sit at 3, ring nitrogen at 2
        let pyridine = parse_smiles("c1ccncc1").unwrap();
        let (_, charge) = &toy_atom_props(&pyridine)[0];
        assert_eq!(charge, &vec![3.0, 3.0, 3.0, 2.0, 3.0, 3.0]);
    }
}
