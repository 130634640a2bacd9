//! End-to-end tests against the compiled `molshift` binary: exit codes,
//! diagnostic lines, run-directory artifacts, and manifest-driven reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use molshift_core::tensorcore::{load_checkpoint, save_checkpoint};

const BIN: &str = env!("CARGO_BIN_EXE_molshift");

/// A small run config: two layers, sixteen dims, a handful of epochs.
const SMALL_CFG: &str = "seed = 7\nepochs = 3\nbatch_size = 8\nlr = 0.001\n\
                         patience = 5\nhidden_dim = 16\nnum_layers = 2\nnum_heads = 2\n";

fn molshift(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn molshift")
}

fn molshift_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env(key, value)
        .output()
        .expect("spawn molshift")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (exit {:?}): {}",
        out.status.code(),
        stderr(out)
    );
}

/// The single run directory the command at `parent` just created.
fn run_dir_of(out: &Output) -> PathBuf {
    let line = stdout(out);
    let path = line
        .rsplit_once(" -> ")
        .unwrap_or_else(|| panic!("summary line without run dir: {line:?}"))
        .1
        .trim();
    PathBuf::from(path)
}

/// Write small data files (subsets of the committed toy corpus) into `dir`.
fn write_small_corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let atoms: String = molshift_core::trainpipe::toydata::toy_atom_jsonl()
        .lines()
        .take(60)
        .map(|l| format!("{l}\n"))
        .collect();
    let atoms_path = dir.join("atoms.jsonl");
    fs::write(&atoms_path, atoms).unwrap();

    let all = molshift_core::trainpipe::toydata::toy_downstream_csv(
        molshift_core::trainpipe::toydata::DOWNSTREAM_SEED,
        molshift_core::trainpipe::toydata::DOWNSTREAM_NOISE,
    );
    let mut mols = String::new();
    for (i, line) in all.lines().enumerate() {
        if i <= 60 {
            mols.push_str(line);
            mols.push('\n');
        }
    }
    let mols_path = dir.join("mols.csv");
    fs::write(&mols_path, mols).unwrap();
    (atoms_path, mols_path)
}

#[test]
fn help_and_version_exit_zero() {
    let help = molshift(&["--help"]);
    assert_success(&help, "--help");
    assert!(stdout(&help).contains("pretrain-atom"), "{}", stdout(&help));
    let version = molshift(&["--version"]);
    assert_success(&version, "--version");
    assert!(stdout(&version).contains("molshift"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = molshift(&["finetune", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_reported_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let (atoms, _) = write_small_corpus(dir.path());
    let out = molshift(&[
        "pretrain-atom",
        "--config",
        "/definitely/not/here.cfg",
        "--data",
        atoms.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("usage error"), "{err}");
    assert!(err.contains("/definitely/not/here.cfg"), "{err}");
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "smiles,target\nCCO,not_a_number\n").unwrap();
    let out = molshift(&[
        "finetune",
        "--data",
        bad.to_str().unwrap(),
        "--task",
        "t",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("data error"), "{err}");
    assert!(err.contains("not_a_number"), "{err}");
}

#[test]
fn eval_rejects_an_atom_level_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (atoms, mols) = write_small_corpus(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL_CFG.replace("epochs = 3", "epochs = 1")).unwrap();

    let out = molshift(&[
        "pretrain-atom",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        atoms.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_success(&out, "pretrain-atom");
    let ckpt = run_dir_of(&out).join("checkpoint");

    let out = molshift(&[
        "eval",
        "--data",
        mols.to_str().unwrap(),
        "--init-checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("one task"), "{}", stderr(&out));
}

#[test]
fn nonfinite_checkpoint_is_a_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (_, mols) = write_small_corpus(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL_CFG.replace("epochs = 3", "epochs = 1")).unwrap();

    let out = molshift(&[
        "finetune",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        mols.to_str().unwrap(),
        "--task",
        "t",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_success(&out, "finetune");
    let ckpt = run_dir_of(&out).join("checkpoint");

    // poison the atom embedding (touched by every forward pass), then
    // extraction must fail with exit 3
    let params_file = ckpt.join("params.ckpt");
    let (mut params, opt) = load_checkpoint::<f32>(&params_file).unwrap();
    for v in &mut params.get_mut("embed/atom").unwrap().data {
        *v = f32::NAN;
    }
    save_checkpoint(&params_file, &params, opt.as_ref()).unwrap();

    let out = molshift(&[
        "extract-features",
        "--data",
        mols.to_str().unwrap(),
        "--init-checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("numeric failure"), "{}", stderr(&out));
}

#[test]
fn gen_toy_reproduces_the_committed_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = molshift(&["gen-toy", "--out", dir.path().to_str().unwrap()]);
    assert_success(&out, "gen-toy");

    let committed = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for name in [
        "toy_atoms.jsonl",
        "toy_homolumo.csv",
        "toy_downstream.csv",
        "toy_binary.csv",
    ] {
        let got = fs::read(dir.path().join(name)).unwrap();
        let want = fs::read(committed.join(name)).unwrap();
        assert_eq!(got, want, "{name} differs from the committed corpus");
    }
}

/// The long path: pretrain, finetune from it, finetune from scratch, extract
/// features from both, diff the shifts — then replay every stage from its
/// manifest and demand byte-identical CSV and feature files.
#[test]
fn pipeline_reruns_bit_exactly_from_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let (atoms, mols) = write_small_corpus(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, SMALL_CFG).unwrap();
    let runs = dir.path().join("runs");
    let runs_s = runs.to_str().unwrap();

    let pretrain = molshift(&[
        "pretrain-atom",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        atoms.to_str().unwrap(),
        "--out",
        runs_s,
    ]);
    assert_success(&pretrain, "pretrain-atom");
    let pretrain_dir = run_dir_of(&pretrain);

    let finetune_pre = molshift(&[
        "finetune",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        mols.to_str().unwrap(),
        "--init-checkpoint",
        pretrain_dir.join("checkpoint").to_str().unwrap(),
        "--task",
        "downstream",
        "--out",
        runs_s,
    ]);
    assert_success(&finetune_pre, "finetune (pretrained)");
    let finetune_pre_dir = run_dir_of(&finetune_pre);
    assert!(stdout(&finetune_pre).contains("atom_pretrained"));

    let finetune_scratch = molshift(&[
        "finetune",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        mols.to_str().unwrap(),
        "--task",
        "downstream",
        "--out",
        runs_s,
    ]);
    assert_success(&finetune_scratch, "finetune (scratch)");
    let finetune_scratch_dir = run_dir_of(&finetune_scratch);
    assert!(stdout(&finetune_scratch).contains("scratch"));

    let extract = |ckpt: &Path, threads: &str| -> Output {
        molshift_env(
            &[
                "extract-features",
                "--data",
                mols.to_str().unwrap(),
                "--init-checkpoint",
                ckpt.to_str().unwrap(),
                "--out",
                runs_s,
            ],
            "MOLSHIFT_THREADS",
            threads,
        )
    };
    let extract_a = extract(&finetune_pre_dir.join("checkpoint"), "1");
    assert_success(&extract_a, "extract-features (pretrained)");
    let extract_a_dir = run_dir_of(&extract_a);
    let extract_b = extract(&finetune_scratch_dir.join("checkpoint"), "4");
    assert_success(&extract_b, "extract-features (scratch)");
    let extract_b_dir = run_dir_of(&extract_b);

    // the worker count must never leak into the feature bytes
    let extract_a2 = extract(&finetune_pre_dir.join("checkpoint"), "7");
    assert_success(&extract_a2, "extract-features (7 workers)");
    let extract_a2_dir = run_dir_of(&extract_a2);
    for name in ["features-train.msfeat", "features-valid.msfeat", "features-test.msfeat"] {
        assert_eq!(
            fs::read(extract_a_dir.join(name)).unwrap(),
            fs::read(extract_a2_dir.join(name)).unwrap(),
            "{name} depends on MOLSHIFT_THREADS"
        );
    }

    let shift = molshift(&[
        "analyze-shift",
        "--features-a",
        &format!(
            "{},{}",
            extract_a_dir.join("features-train.msfeat").display(),
            extract_a_dir.join("features-test.msfeat").display()
        ),
        "--features-b",
        &format!(
            "{},{}",
            extract_b_dir.join("features-train.msfeat").display(),
            extract_b_dir.join("features-test.msfeat").display()
        ),
        "--bins",
        "32",
        "--out",
        runs_s,
    ]);
    assert_success(&shift, "analyze-shift");
    let shift_dir = run_dir_of(&shift);

    // the differenced CSV has one row per (dimension, metric) pair
    let delta = fs::read_to_string(shift_dir.join("shift_delta.csv")).unwrap();
    assert_eq!(delta.lines().next().unwrap(), "dimension,metric,delta");
    assert_eq!(delta.lines().count() - 1, 16 * 5, "expected hidden_dim x 5 rows");
    let manifest_text = fs::read_to_string(shift_dir.join("manifest.json")).unwrap();
    assert!(manifest_text.contains("\"bins\": 32"), "manifest lost the bins flag");

    // every stage replays bit-exactly from its manifest
    let compare = [
        (&pretrain_dir, vec!["history.csv", "metrics.csv", "config.txt"]),
        (&finetune_pre_dir, vec!["history.csv", "metrics.csv", "config.txt"]),
        (&extract_a_dir, vec![
            "features-train.msfeat",
            "features-valid.msfeat",
            "features-test.msfeat",
        ]),
        (&shift_dir, vec!["shift.csv", "shift_delta.csv"]),
    ];
    for (orig, files) in &compare {
        let replay_parent = dir.path().join("replays");
        let out = molshift(&[
            "rerun",
            "--manifest",
            orig.join("manifest.json").to_str().unwrap(),
            "--out",
            replay_parent.to_str().unwrap(),
        ]);
        assert_success(&out, "rerun");
        let replay = run_dir_of(&out);
        for name in files {
            assert_eq!(
                fs::read(orig.join(name)).unwrap(),
                fs::read(replay.join(name)).unwrap(),
                "{name} not reproduced by rerun of {}",
                orig.display()
            );
        }
    }

    // a changed input is refused with both hashes in the message
    let mut tampered = fs::read_to_string(&mols).unwrap();
    tampered.push_str("c1ccccc1,0.5\n");
    fs::write(&mols, tampered).unwrap();
    let out = molshift(&[
        "rerun",
        "--manifest",
        finetune_pre_dir.join("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("replays").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("changed since"), "{}", stderr(&out));
}
