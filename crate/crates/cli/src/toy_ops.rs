//! `gen-toy`: write the bundled deterministic toy datasets.
//!
//! The files depend only on code (generators are seeded constants), so this
//! command is idempotent: re-running produces byte-identical files. No run
//! directory or manifest is created — the output IS the reproducible
//! artifact.

use std::fs;
use std::path::Path;

use molshift_core::trainpipe::toydata::{
    toy_atom_jsonl, toy_binary_csv, toy_downstream_csv, toy_homolumo_csv, toy_smiles,
    DOWNSTREAM_NOISE, DOWNSTREAM_SEED,
};

use crate::{CliError, RunSummary};

pub const TOY_ATOMS: &str = "toy_atoms.jsonl";
pub const TOY_HOMOLUMO: &str = "toy_homolumo.csv";
pub const TOY_DOWNSTREAM: &str = "toy_downstream.csv";
pub const TOY_BINARY: &str = "toy_binary.csv";

pub fn gen_toy(out: &Path) -> Result<RunSummary, CliError> {
    fs::create_dir_all(out).map_err(|e| {
        CliError::Usage(format!(
            "cannot create output directory {}: {e}",
            out.display()
        ))
    })?;
    let files = [
        (TOY_ATOMS, toy_atom_jsonl()),
        (TOY_HOMOLUMO, toy_homolumo_csv()),
        (TOY_DOWNSTREAM, toy_downstream_csv(DOWNSTREAM_SEED, DOWNSTREAM_NOISE)),
        (TOY_BINARY, toy_binary_csv()),
    ];
    for (name, contents) in &files {
        let path = out.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(RunSummary {
        line: format!(
            "gen-toy: wrote {} files for {} molecules -> {}",
            files.len(),
            toy_smiles().len(),
            out.display()
        ),
        run_dir: None,
    })
}
