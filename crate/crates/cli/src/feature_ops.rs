//! Feature extraction and distribution-shift analysis commands.
//!
//! `extract-features` embeds every molecule of the requested splits, captures
//! one encoder layer's per-atom activations, and writes one `.msfeat` file
//! per split plus a JSON sidecar describing it. Molecules are sharded over up
//! to `MOLSHIFT_THREADS` worker threads (default: the machine's parallelism);
//! the result is identical for any worker count because each molecule's
//! forward pass is independent and dataset order is preserved.
//!
//! `analyze-shift` compares two models' feature files over the same split
//! pair and writes both shift grids plus their difference. `report` adds
//! per-dimension normality tests and histogram dumps for the leading
//! dimensions.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;

use molshift_core::featstats::{
    extract_features_at, normality_report, shift_report, write_histogram_dump, FeatError,
    FeatureMatrix, ModelTag, NormalityReport,
};
use molshift_core::graphormer::ModelConfig;
use molshift_core::molgraph::MolecularGraph;
use molshift_core::tensorcore::ParamStore;
use molshift_core::trainpipe::{load_atom_dataset, load_mol_dataset, Datasets, Role};

use crate::rundir::{finish, RunDir};
use crate::store::{self, FeatureSidecar};
use crate::CliError;

pub const SHIFT_FILE: &str = "shift.csv";
pub const DELTA_FILE: &str = "shift_delta.csv";
pub const NORMALITY_FILE: &str = "normality.csv";
pub const NORMALITY_SUMMARY_FILE: &str = "normality_summary.csv";

/// Worker count for extraction: the machine's parallelism, capped by the
/// `MOLSHIFT_THREADS` environment variable and the number of molecules.
fn worker_count(env_cap: Option<&str>, items: usize) -> Result<usize, CliError> {
    let hw = thread::available_parallelism().map(|p| p.get()).unwrap_or(1);
    let cap = match env_cap {
        None => hw,
        Some(text) => text
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "MOLSHIFT_THREADS must be a positive integer, got {text:?}"
                ))
            })?,
    };
    Ok(cap.min(hw).min(items.max(1)))
}

/// [`extract_features_at`] sharded over `workers` threads; molecule order and
/// results are independent of the worker count.
fn extract_sharded(
    params: &ParamStore<f32>,
    cfg: &ModelConfig,
    graphs: &[MolecularGraph],
    task: u32,
    layer: usize,
    role: Role,
    tag: ModelTag,
    workers: usize,
) -> Result<FeatureMatrix, FeatError> {
    if workers <= 1 || graphs.len() <= 1 {
        return extract_features_at(params, cfg, graphs, task, layer, role, tag);
    }
    let chunk = graphs.len().div_ceil(workers);
    let results: Vec<(usize, Result<FeatureMatrix, FeatError>)> = thread::scope(|s| {
        let handles: Vec<_> = graphs
            .chunks(chunk)
            .enumerate()
            .map(|(i, part)| {
                let start = i * chunk;
                (
                    start,
                    s.spawn(move || extract_features_at(params, cfg, part, task, layer, role, tag)),
                )
            })
            .collect();
        handles
            .into_iter()
            .map(|(start, h)| (start, h.join().expect("extraction worker panicked")))
            .collect()
    });
    let mut values: Vec<f32> = Vec::new();
    let mut rows = 0usize;
    for (start, result) in results {
        // report non-finite molecules by their dataset index, not chunk index
        let part = result.map_err(|e| match e {
            FeatError::NonFinite { molecule } => FeatError::NonFinite {
                molecule: molecule + start,
            },
            other => other,
        })?;
        values.extend_from_slice(part.values());
        rows += part.rows();
    }
    FeatureMatrix::new(values, rows, cfg.hidden_dim, role, tag)
}

/// Load just the molecular graphs of a dataset, split by role. JSON-lines
/// files are read as atom-level data, anything else as `smiles,target` CSV.
fn load_graph_datasets(path: &Path, seed: u64) -> Result<Datasets<MolecularGraph>, CliError> {
    let is_jsonl = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json"));
    let map =
        |graphs: (Vec<MolecularGraph>, Vec<MolecularGraph>, Vec<MolecularGraph>)| Datasets {
            train: graphs.0,
            valid: graphs.1,
            test: graphs.2,
        };
    if is_jsonl {
        let d = load_atom_dataset(path, seed)?;
        let take = |v: Vec<_>| v.into_iter().map(|r: molshift_core::trainpipe::AtomRecord| r.graph).collect();
        Ok(map((take(d.train), take(d.valid), take(d.test))))
    } else {
        let d = load_mol_dataset(path, seed)?;
        let take = |v: Vec<_>| v.into_iter().map(|r: molshift_core::trainpipe::MolRecord| r.graph).collect();
        Ok(map((take(d.train), take(d.valid), take(d.test))))
    }
}

pub fn extract(
    data: &Path,
    init_checkpoint: &Path,
    splits: &[String],
    task_name: Option<&str>,
    capture_layer: usize,
    seed: u64,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let (params, cfg, meta) = store::load_checkpoint_dir(init_checkpoint)?;
    let task_idx = match task_name {
        Some(name) => meta
            .tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "checkpoint has no task {name:?} (tasks: {})",
                    task_names(&meta.tasks)
                ))
            })?,
        None if meta.tasks.len() == 1 => 0,
        None => {
            return Err(CliError::Usage(format!(
                "--task is required for a multitask checkpoint (tasks: {})",
                task_names(&meta.tasks)
            )))
        }
    };
    let tag = meta.model_tag()?;
    let datasets = load_graph_datasets(data, seed)?;
    let env_cap = std::env::var("MOLSHIFT_THREADS").ok();
    let mut written: Vec<String> = Vec::new();
    let mut total_rows = 0usize;
    for split in splits {
        let role: Role = split.parse().map_err(CliError::Usage)?;
        let graphs = datasets.split(role);
        if graphs.is_empty() {
            return Err(CliError::Data(format!("{} split is empty", role.as_str())));
        }
        let workers = worker_count(env_cap.as_deref(), graphs.len())?;
        let matrix = extract_sharded(
            &params,
            &cfg,
            graphs,
            task_idx as u32,
            capture_layer,
            role,
            tag,
            workers,
        )?;
        let name = format!("features-{}.msfeat", role.as_str());
        let path = rundir.file(&name);
        matrix.save(&path)?;
        store::write_sidecar(
            &path,
            &FeatureSidecar {
                split: role.as_str().to_string(),
                model_tag: tag.as_str().to_string(),
                capture_layer,
                task: meta.tasks[task_idx].name.clone(),
                rows: matrix.rows(),
                cols: matrix.cols(),
            },
        )?;
        total_rows += matrix.rows();
        written.push(format!("{name} ({} rows)", matrix.rows()));
    }
    Ok(format!(
        "extract-features: layer {capture_layer}, tag {}, {} atom rows x {} dims across {}",
        tag.as_str(),
        total_rows,
        cfg.hidden_dim,
        written.join(", "),
    ))
}

fn task_names(tasks: &[store::TaskMeta]) -> String {
    tasks
        .iter()
        .map(|t| t.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Load one model's feature pair, role-checked against the requested splits
/// and tagged from the sidecars.
fn load_pair(
    paths: &[PathBuf],
    roles: (Role, Role),
    flag: &str,
) -> Result<(FeatureMatrix, FeatureMatrix), CliError> {
    let load_one = |path: &PathBuf, want: Role| -> Result<FeatureMatrix, CliError> {
        let sidecar = store::read_sidecar(path)?;
        let got: Role = sidecar.split.parse().map_err(|e: String| {
            CliError::Data(format!("sidecar of {}: {e}", path.display()))
        })?;
        if got != want {
            return Err(CliError::Data(format!(
                "{flag}: {} holds the {} split but --splits asks for {} in this position",
                path.display(),
                got.as_str(),
                want.as_str()
            )));
        }
        let tag: ModelTag = sidecar.model_tag.parse().map_err(|e: FeatError| {
            CliError::Data(format!("sidecar of {}: {e}", path.display()))
        })?;
        Ok(FeatureMatrix::load(path, got, tag)?)
    };
    let first = load_one(&paths[0], roles.0)?;
    let second = load_one(&paths[1], roles.1)?;
    if first.tag != second.tag {
        return Err(CliError::Data(format!(
            "{flag}: the two files carry different model tags ({} vs {})",
            first.tag.as_str(),
            second.tag.as_str()
        )));
    }
    Ok((first, second))
}

fn parse_role_pair(splits: &[String]) -> Result<(Role, Role), CliError> {
    let a: Role = splits[0].parse().map_err(CliError::Usage)?;
    let b: Role = splits[1].parse().map_err(CliError::Usage)?;
    Ok((a, b))
}

pub fn analyze_shift(
    features_a: &[PathBuf],
    features_b: &[PathBuf],
    splits: &[String],
    bins: usize,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let (_, summary) = run_shift(features_a, features_b, splits, bins, rundir)?;
    Ok(format!("analyze-shift: {summary}"))
}

/// Shared analyze-shift core; returns the report for `report` to build on.
fn run_shift(
    features_a: &[PathBuf],
    features_b: &[PathBuf],
    splits: &[String],
    bins: usize,
    rundir: &RunDir,
) -> Result<(ShiftBundle, String), CliError> {
    let roles = parse_role_pair(splits)?;
    let (a1, a2) = load_pair(features_a, roles, "--features-a")?;
    let (b1, b2) = load_pair(features_b, roles, "--features-b")?;
    let report = shift_report((&a1, &a2), (&b1, &b2), bins).map_err(shift_err)?;

    let mut w = rundir.create_file(SHIFT_FILE)?;
    report
        .write_shift_csv(&mut w)
        .map_err(|e| CliError::Data(format!("cannot write {SHIFT_FILE}: {e}")))?;
    finish(w, SHIFT_FILE)?;
    let mut w = rundir.create_file(DELTA_FILE)?;
    report
        .write_delta_csv(&mut w)
        .map_err(|e| CliError::Data(format!("cannot write {DELTA_FILE}: {e}")))?;
    finish(w, DELTA_FILE)?;

    let dims = report.dims();
    let mean_emd_delta =
        report.delta.iter().map(|d| d.emd).sum::<f64>() / dims.max(1) as f64;
    let summary = format!(
        "{} vs {} over {}-{}, {} dims x 5 metrics (bins {}), mean delta emd {:+.4}",
        report.model_a.as_str(),
        report.model_b.as_str(),
        roles.0.as_str(),
        roles.1.as_str(),
        dims,
        bins,
        mean_emd_delta,
    );
    Ok((ShiftBundle { a1, a2, b1, b2 }, summary))
}

/// The four feature matrices a shift report was built from, kept for the
/// normality and histogram stages of `report`.
struct ShiftBundle {
    a1: FeatureMatrix,
    a2: FeatureMatrix,
    b1: FeatureMatrix,
    b2: FeatureMatrix,
}

fn shift_err(e: molshift_core::featstats::ShiftError) -> CliError {
    use molshift_core::featstats::{HistError, ShiftError};
    match e {
        ShiftError::Hist(HistError::BadBins) => CliError::Usage(e.to_string()),
        ShiftError::Hist(HistError::NonFinite) => CliError::Numeric(e.to_string()),
        ShiftError::RoleMismatch { .. } => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

pub fn report(
    features_a: &[PathBuf],
    features_b: &[PathBuf],
    splits: &[String],
    bins: usize,
    seed: u64,
    rundir: &RunDir,
) -> Result<String, CliError> {
    let (bundle, shift_summary) = run_shift(features_a, features_b, splits, bins, rundir)?;
    let ShiftBundle { a1, a2, b1, b2 } = &bundle;

    // per-dimension normality of every matrix
    let matrices: [(&str, &FeatureMatrix); 4] =
        [("a", a1), ("a", a2), ("b", b1), ("b", b2)];
    let reports: Vec<(&str, &FeatureMatrix, NormalityReport)> = matrices
        .iter()
        .map(|&(model, m)| {
            let rep = normality_report(m, seed).map_err(normality_err)?;
            Ok((model, m, rep))
        })
        .collect::<Result<_, CliError>>()?;

    let fail = |name: &str, e: std::io::Error| CliError::Data(format!("cannot write {name}: {e}"));
    let mut w = rundir.create_file(NORMALITY_FILE)?;
    writeln!(
        w,
        "model,tag,split,dimension,sw_w,sw_p,ks_d,ks_p,ks_estimated_params"
    )
    .map_err(|e| fail(NORMALITY_FILE, e))?;
    for (model, m, rep) in &reports {
        for dim in &rep.dims {
            let (sw_w, sw_p) = dim
                .shapiro
                .map_or((String::new(), String::new()), |s| {
                    (s.w.to_string(), s.p.to_string())
                });
            let (ks_d, ks_p, ks_est) = dim.ks.map_or(
                (String::new(), String::new(), String::new()),
                |k| (k.d.to_string(), k.p.to_string(), k.estimated_params.to_string()),
            );
            writeln!(
                w,
                "{model},{},{},{},{sw_w},{sw_p},{ks_d},{ks_p},{ks_est}",
                m.tag.as_str(),
                m.role.as_str(),
                dim.dim,
            )
            .map_err(|e| fail(NORMALITY_FILE, e))?;
        }
    }
    finish(w, NORMALITY_FILE)?;

    let mut w = rundir.create_file(NORMALITY_SUMMARY_FILE)?;
    writeln!(w, "model,tag,split,sw_p_mean,sw_p_std,dims_tested")
        .map_err(|e| fail(NORMALITY_SUMMARY_FILE, e))?;
    for (model, m, rep) in &reports {
        let tested = rep.dims.iter().filter(|d| d.shapiro.is_some()).count();
        let (mean, std) = rep
            .summary
            .map_or((String::new(), String::new()), |(mean, std)| {
                (mean.to_string(), std.to_string())
            });
        writeln!(
            w,
            "{model},{},{},{mean},{std},{tested}",
            m.tag.as_str(),
            m.role.as_str(),
        )
        .map_err(|e| fail(NORMALITY_SUMMARY_FILE, e))?;
    }
    finish(w, NORMALITY_SUMMARY_FILE)?;

    // leading-dimension histogram dumps, one file per model
    for (name, first, second) in [("hist-model-a.csv", a1, a2), ("hist-model-b.csv", b1, b2)] {
        let mut w = rundir.create_file(name)?;
        write_histogram_dump(&mut w, first, second, bins).map_err(shift_err)?;
        finish(w, name)?;
    }

    Ok(format!("report: {shift_summary}, normality + histograms written"))
}

fn normality_err(e: molshift_core::featstats::NormalityError) -> CliError {
    use molshift_core::featstats::NormalityError;
    match e {
        NormalityError::NonFinite => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}
