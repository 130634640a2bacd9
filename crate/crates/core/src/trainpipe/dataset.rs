//! Dataset loading and deterministic splitting.
//!
//! Two on-disk formats:
//! * atom-level JSONL — one molecule per line:
//!   `{"smiles": "CCO", "atom_props": {"charge": [..], ...}, "split": "train"}`
//!   (the `split` key is optional);
//! * molecule-level CSV with header `smiles,target[,split]`.
//!
//! When no explicit split is given, each molecule is assigned to
//! train/valid/test 80/10/10 by a seeded hash of its SMILES string, so the
//! assignment is stable across runs and machines for a given seed.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::molgraph::{parse_smiles, MolecularGraph};

/// The four per-atom quantum-chemistry properties used for pretraining.
pub const ATOM_TASKS: [&str; 4] = ["charge", "fukui_e", "fukui_n", "nmr"];

/// Errors raised while loading a dataset file.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("no records")]
    Empty,
}

/// Which role a record plays in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Valid,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Valid => "valid",
            Role::Test => "test",
        }
    }

    pub const ALL: [Role; 3] = [Role::Train, Role::Valid, Role::Test];
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Role::Train),
            "valid" => Ok(Role::Valid),
            "test" => Ok(Role::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, valid, or test)"
            )),
        }
    }
}

/// One molecule with per-atom property vectors (heavy atoms only).
#[derive(Debug, Clone)]
pub struct AtomRecord {
    pub smiles: String,
    pub graph: MolecularGraph,
    /// Property name -> one value per parsed atom.
    pub props: BTreeMap<String, Vec<f64>>,
}

/// One molecule with a single molecular target.
#[derive(Debug, Clone)]
pub struct MolRecord {
    pub smiles: String,
    pub graph: MolecularGraph,
    pub target: f64,
}

/// Records partitioned into the three protocol roles.
#[derive(Debug, Clone)]
pub struct Datasets<R> {
    pub train: Vec<R>,
    pub valid: Vec<R>,
    pub test: Vec<R>,
}

impl<R> Datasets<R> {
    pub fn empty() -> Self {
        Datasets {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
        }
    }

    pub fn split(&self, role: Role) -> &[R] {
        match role {
            Role::Train => &self.train,
            Role::Valid => &self.valid,
            Role::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&mut self, role: Role, record: R) {
        match role {
            Role::Train => self.train.push(record),
            Role::Valid => self.valid.push(record),
            Role::Test => self.test.push(record),
        }
    }
}

/// Deterministic 80/10/10 role assignment from a seeded hash of the SMILES
/// string. Identical strings always land in the same role.
pub(crate) fn hashed_role(smiles: &str, seed: u64) -> Role {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(smiles.as_bytes());
    let digest = hasher.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
    let f = (x as f64) / (u64::MAX as f64);
    if f < 0.8 {
        Role::Train
    } else if f < 0.9 {
        Role::Valid
    } else {
        Role::Test
    }
}

/// Tracks SMILES-to-role assignments and rejects duplicates. A molecule that
/// appears twice — in one role or across roles — makes the split protocol
/// meaningless, so both are errors.
struct DuplicateGuard {
    seen: BTreeSet<String>,
}

impl DuplicateGuard {
    fn new() -> Self {
        DuplicateGuard {
            seen: BTreeSet::new(),
        }
    }

    fn check(&mut self, smiles: &str, line: usize) -> Result<(), DataError> {
        if !self.seen.insert(smiles.to_string()) {
            return Err(DataError::Line {
                line,
                msg: format!("duplicate smiles {smiles:?}"),
            });
        }
        Ok(())
    }
}

/// Load an atom-level JSONL dataset. `seed` drives the hash split for records
/// without an explicit `"split"` field.
pub fn load_atom_dataset(path: &Path, seed: u64) -> Result<Datasets<AtomRecord>, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_atom_jsonl(&text, seed)
}

/// Parse atom-level JSONL from a string (see [`load_atom_dataset`]).
pub(crate) fn parse_atom_jsonl(text: &str, seed: u64) -> Result<Datasets<AtomRecord>, DataError> {
    let mut out = Datasets::empty();
    let mut guard = DuplicateGuard::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fail = |msg: String| DataError::Line { line, msg };
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| fail(format!("invalid json: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| fail("expected a json object".into()))?;
        let mut smiles: Option<&str> = None;
        let mut props_value: Option<&serde_json::Map<String, serde_json::Value>> = None;
        let mut role: Option<Role> = None;
        for (key, val) in obj {
            match key.as_str() {
                "smiles" => {
                    smiles =
                        Some(val.as_str().ok_or_else(|| {
                            fail("\"smiles\" must be a string".into())
                        })?)
                }
                "atom_props" => {
                    props_value = Some(val.as_object().ok_or_else(|| {
                        fail("\"atom_props\" must be an object".into())
                    })?)
                }
                "split" => {
                    let s = val
                        .as_str()
                        .ok_or_else(|| fail("\"split\" must be a string".into()))?;
                    role = Some(s.parse().map_err(fail)?);
                }
                other => return Err(fail(format!("unknown key {other:?}"))),
            }
        }
        let smiles = smiles.ok_or_else(|| fail("missing \"smiles\"".into()))?;
        let props_value =
            props_value.ok_or_else(|| fail("missing \"atom_props\"".into()))?;
        let graph = parse_smiles(smiles).map_err(|e| fail(format!("smiles {smiles:?}: {e}")))?;
        let mut props = BTreeMap::new();
        for (name, arr) in props_value {
            if !ATOM_TASKS.contains(&name.as_str()) {
                return Err(fail(format!("unknown property key {name:?}")));
            }
            let arr = arr
                .as_array()
                .ok_or_else(|| fail(format!("property {name:?} must be an array")))?;
            let mut values = Vec::with_capacity(arr.len());
            for v in arr {
                let x = v
                    .as_f64()
                    .ok_or_else(|| fail(format!("property {name:?} has a non-numeric entry")))?;
                if !x.is_finite() {
                    return Err(fail(format!("property {name:?} has a non-finite entry")));
                }
                values.push(x);
            }
            if values.len() != graph.atom_count() {
                return Err(fail(format!(
                    "property {name:?} has {} values but {smiles:?} has {} atoms",
                    values.len(),
                    graph.atom_count()
                )));
            }
            props.insert(name.clone(), values);
        }
        if props.is_empty() {
            return Err(fail("\"atom_props\" is empty".into()));
        }
        guard.check(smiles, line)?;
        let role = role.unwrap_or_else(|| hashed_role(smiles, seed));
        out.push(
            role,
            AtomRecord {
                smiles: smiles.to_string(),
                graph,
                props,
            },
        );
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

/// Load a molecule-level CSV dataset with header `smiles,target[,split]`.
pub fn load_mol_dataset(path: &Path, seed: u64) -> Result<Datasets<MolRecord>, DataError> {
    let text = std::fs::read_to_string(path)?;
    parse_mol_csv(&text, seed)
}

/// Parse molecule-level CSV from a string (see [`load_mol_dataset`]).
pub(crate) fn parse_mol_csv(text: &str, seed: u64) -> Result<Datasets<MolRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Line {
            line: 1,
            msg: format!("bad header: {e}"),
        })?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let has_split = match headers.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["smiles", "target"] => false,
        ["smiles", "target", "split"] => true,
        _ => {
            return Err(DataError::Line {
                line: 1,
                msg: format!(
                    "expected header `smiles,target` or `smiles,target,split`, got {:?}",
                    headers.join(",")
                ),
            })
        }
    };
    let mut out = Datasets::empty();
    let mut guard = DuplicateGuard::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let fail = |msg: String| DataError::Line { line, msg };
        let row = row.map_err(|e| fail(format!("bad csv row: {e}")))?;
        let expected = if has_split { 3 } else { 2 };
        if row.len() != expected {
            return Err(fail(format!(
                "expected {expected} fields, got {}",
                row.len()
            )));
        }
        let smiles = row.get(0).expect("length checked");
        let graph = parse_smiles(smiles).map_err(|e| fail(format!("smiles {smiles:?}: {e}")))?;
        let target: f64 = row
            .get(1)
            .expect("length checked")
            .parse()
            .map_err(|_| fail(format!("target {:?} is not a number", row.get(1).unwrap())))?;
        if !target.is_finite() {
            return Err(fail("target is not finite".into()));
        }
        let role = if has_split {
            row.get(2).expect("length checked").parse().map_err(fail)?
        } else {
            hashed_role(smiles, seed)
        };
        guard.check(smiles, line)?;
        out.push(
            role,
            MolRecord {
                smiles: smiles.to_string(),
                graph,
                target,
            },
        );
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn methane_single_charge_accepted() {
        let data =
            parse_atom_jsonl(r#"{"smiles": "C", "atom_props": {"charge": [0.1]}}"#, 0).unwrap();
        assert_eq!(data.len(), 1);
        let rec = Role::ALL
            .iter()
            .flat_map(|r| data.split(*r))
            .next()
            .unwrap();
        assert_eq!(rec.props["charge"], vec![0.1]);
    }

    #[test]
    fn length_mismatch_is_rejected_with_line() {
        let err = parse_atom_jsonl(
            "{\"smiles\": \"C\", \"atom_props\": {\"charge\": [0.1]}}\n{\"smiles\": \"O\", \"atom_props\": {\"charge\": [0.1, 0.2]}}",
            0,
        )
        .unwrap_err();
        match err {
            DataError::Line { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("2 values") && msg.contains("1 atoms"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_reports_no_records() {
        assert!(matches!(parse_atom_jsonl("", 0), Err(DataError::Empty)));
        assert!(matches!(parse_atom_jsonl("\n\n", 0), Err(DataError::Empty)));
    }

    #[test]
    fn unknown_property_key_is_rejected() {
        let err = parse_atom_jsonl(
            r#"{"smiles": "C", "atom_props": {"dipole": [0.0]}}"#,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown property key"), "{err}");
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let err = parse_atom_jsonl(
            r#"{"smiles": "C", "atom_props": {"charge": [0.0]}, "label": 3}"#,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
    }

    #[test]
    fn bad_smiles_reports_line_and_position() {
        let err = parse_atom_jsonl(
            r#"{"smiles": "C(C", "atom_props": {"charge": [0.0, 0.0]}}"#,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
    }

    #[test]
    fn hash_split_is_deterministic_and_roughly_80_10_10() {
        let lines: Vec<String> = (1usize..=200)
            .map(|i| {
                let smiles = format!("{}O", "C".repeat(i));
                format!(
                    "{{\"smiles\": \"{smiles}\", \"atom_props\": {{\"charge\": {:?}}}}}",
                    vec![0.0; i + 1]
                )
            })
            .collect();
        let text = lines.join("\n");
        let a = parse_atom_jsonl(&text, 7).unwrap();
        let b = parse_atom_jsonl(&text, 7).unwrap();
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(
            a.train.iter().map(|r| &r.smiles).collect::<Vec<_>>(),
            b.train.iter().map(|r| &r.smiles).collect::<Vec<_>>()
        );
        // loose sanity bands: the hash should put most records in train
        assert!(a.train.len() > 120, "train {}", a.train.len());
        assert!(!a.valid.is_empty());
        assert!(!a.test.is_empty());
        // a different seed reshuffles membership
        let c = parse_atom_jsonl(&text, 8).unwrap();
        let same: Vec<_> = a.train.iter().map(|r| &r.smiles).collect();
        let other: Vec<_> = c.train.iter().map(|r| &r.smiles).collect();
        assert_ne!(same, other);
    }

    #[test]
    fn explicit_split_column_wins() {
        let csv = "smiles,target,split\nCCO,1.0,test\nCCC,2.0,train\n";
        let data = parse_mol_csv(csv, 0).unwrap();
        assert_eq!(data.test.len(), 1);
        assert_eq!(data.train.len(), 1);
        assert_eq!(data.test[0].smiles, "CCO");
    }

    #[test]
    fn duplicate_smiles_rejected_across_roles() {
        let csv = "smiles,target,split\nCCO,1.0,train\nCCO,2.0,test\n";
        let err = parse_mol_csv(csv, 0).unwrap_err();
        assert!(err.to_string().contains("duplicate smiles"), "{err}");
    }

    #[test]
    fn csv_header_is_strict() {
        let err = parse_mol_csv("smiles,y\nC,1.0\n", 0).unwrap_err();
        assert!(err.to_string().contains("expected header"), "{err}");
    }

    #[test]
    fn csv_bad_target_reports_line() {
        let err = parse_mol_csv("smiles,target\nC,1.0\nO,abc\n", 0).unwrap_err();
        match err {
            DataError::Line { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("not a number"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_split_value_reports_line() {
        let err = parse_mol_csv("smiles,target,split\nC,1.0,eval\n", 0).unwrap_err();
        assert!(err.to_string().contains("unknown split"), "{err}");
    }
}
