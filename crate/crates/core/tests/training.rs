//! Training-loop integration tests on the deterministic toy corpus.
//!
//! Targets are constructed from quantities the model receives as inputs, so
//! convergence failures indicate training-stack bugs rather than noise.

use molshift_core::trainpipe::toydata::{
    centrality_statistic, toy_atom_jsonl, toy_homolumo_csv, toy_smiles,
};
use molshift_core::trainpipe::{
    finetune, pretrain_atom_level, pretrain_mol_level, AtomTask, Datasets, MetricKind, MolRecord,
    MolTask, Normalization, RunConfig, TaskKind, TrainError,
};
use molshift_core::molgraph::parse_smiles;

fn small_run(seed: u64) -> RunConfig {
    let mut run = RunConfig::default();
    run.seed = seed;
    run.hidden_dim = 16;
    run.num_layers = 2;
    run.num_heads = 2;
    run.dropout = 0.0;
    run.lr = 3e-3;
    run.batch_size = 16;
    run.epochs = 500;
    run.patience = 20;
    run
}

/// Parse the first `n` corpus molecules into an atom dataset via the JSONL path.
fn atom_data(n: usize, seed: u64) -> Datasets<molshift_core::trainpipe::AtomRecord> {
    let jsonl: String = toy_atom_jsonl()
        .lines()
        .take(n)
        .map(|l| format!("{l}\n"))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("atoms.jsonl");
    std::fs::write(&path, jsonl).unwrap();
    molshift_core::trainpipe::load_atom_dataset(&path, seed).unwrap()
}

fn mol_data(csv: &str, seed: u64) -> Datasets<MolRecord> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mols.csv");
    std::fs::write(&path, csv).unwrap();
    molshift_core::trainpipe::load_mol_dataset(&path, seed).unwrap()
}

#[test]
fn atom_pretraining_learns_centrality_target() {
    // The "charge" toy property is the centrality bucket itself — an input
    // embedding index — so a working training stack must drive MAE far below
    // the 0.05 gate within the epoch budget.
    let data = atom_data(50, 11);
    let tasks = vec![AtomTask::fit("charge", &data.train).unwrap()];
    let outcome =
        pretrain_atom_level::<f32>(&data, &tasks, &small_run(11)).unwrap();
    let best_mae = outcome
        .history
        .iter()
        .map(|e| e.val_metric)
        .fold(f64::INFINITY, f64::min);
    assert!(
        best_mae < 0.05,
        "validation MAE {best_mae:.4} after {} epochs",
        outcome.history.len()
    );
}

#[test]
fn identical_tasks_converge_to_similar_losses() {
    // Two tasks with byte-identical targets must end up with per-task
    // validation losses within 10%: the task-conditioning mechanism gives
    // neither task an advantage. Fixed noise puts the same irreducible floor
    // under both losses so the ratio is measured at a stable convergence
    // point rather than between two values racing to zero.
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut data = atom_data(40, 3);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(77);
    for split in [&mut data.train, &mut data.valid, &mut data.test] {
        for rec in split.iter_mut() {
            let noisy: Vec<f64> = rec.props["charge"]
                .iter()
                .map(|&c| c + (noise_rng.gen::<f64>() - 0.5))
                .collect();
            rec.props.insert("charge".into(), noisy.clone());
            rec.props.insert("fukui_e".into(), noisy);
        }
    }
    let tasks = vec![
        AtomTask::fit("charge", &data.train).unwrap(),
        AtomTask::fit("fukui_e", &data.train).unwrap(),
    ];
    let mut run = small_run(5);
    run.epochs = 200;
    let outcome = pretrain_atom_level::<f32>(&data, &tasks, &run).unwrap();

    // per-task z-scored validation MSE from the returned parameters
    let per_task: Vec<f64> = (0..2)
        .map(|ti| {
            use molshift_core::graphormer::{predict_atom_level, Phase, TapeBinding};
            use molshift_core::molgraph::{encode, AtomVocab};
            use molshift_core::tensorcore::Tape;
            let task = &tasks[ti];
            let mut sq = Vec::new();
            for rec in &data.valid {
                let enc = encode(
                    &rec.graph,
                    &AtomVocab::standard(),
                    outcome.config.d_max,
                    Some(ti as u32),
                )
                .unwrap();
                let mut tape = Tape::new();
                let mut binding = TapeBinding::new(&outcome.params);
                let out = predict_atom_level(
                    &mut tape,
                    &mut binding,
                    &outcome.config,
                    &enc,
                    &mut Phase::Eval,
                )
                .unwrap();
                for (z, y) in tape.value(out).iter().zip(&rec.props[&task.name]) {
                    let d = f64::from(*z) - task.norm.apply(*y);
                    sq.push(d * d);
                }
            }
            sq.iter().sum::<f64>() / sq.len() as f64
        })
        .collect();
    let ratio = per_task[0].max(per_task[1]) / per_task[0].min(per_task[1]).max(1e-9);
    assert!(
        ratio < 1.10,
        "per-task losses {per_task:?} differ by {:.1}%",
        (ratio - 1.0) * 100.0
    );
}

#[test]
fn mol_pretraining_learns_atom_count() {
    // Counting through attention (which normalizes) is the hardest of the
    // constructed targets, so this one gets the full corpus and a wider model.
    let data = mol_data(&toy_homolumo_csv(), 2);
    let mut run = small_run(2);
    run.hidden_dim = 32;
    run.num_layers = 3;
    run.lr = 2e-3;
    run.patience = 40;
    let outcome = pretrain_mol_level::<f32>(&data, "homolumo", &run).unwrap();
    let best_mae = outcome
        .history
        .iter()
        .map(|e| e.val_metric)
        .fold(f64::INFINITY, f64::min);
    assert!(best_mae < 0.1, "validation MAE {best_mae:.4}");
}

#[test]
fn constant_target_is_matched_exactly() {
    let mut csv = String::from("smiles,target\n");
    for s in toy_smiles().into_iter().take(40) {
        csv.push_str(&format!("{s},2.5\n"));
    }
    let data = mol_data(&csv, 4);
    let mut run = small_run(4);
    run.epochs = 120;
    let outcome = pretrain_mol_level::<f32>(&data, "homolumo", &run).unwrap();
    // loss approaches the target variance, which is zero
    assert!(
        outcome.best_val < 1e-3,
        "best validation loss {:.6}",
        outcome.best_val
    );
}

#[test]
fn shuffled_labels_do_not_generalize() {
    // Permutation-null oracle: with atom-count labels shuffled across
    // molecules, validation MSE cannot beat 0.8 × label variance.
    let all = toy_homolumo_csv();
    let mut rows: Vec<(String, f64)> = all
        .lines()
        .skip(1)
        .take(80)
        .map(|l| {
            let (s, t) = l.split_once(',').unwrap();
            (s.to_string(), t.parse().unwrap())
        })
        .collect();
    // a seeded random permutation decouples targets from structure
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut targets: Vec<f64> = rows.iter().map(|r| r.1).collect();
    targets.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1234));
    for (row, t) in rows.iter_mut().zip(&targets) {
        row.1 = *t;
    }
    let mut csv = String::from("smiles,target\n");
    for (s, t) in &rows {
        csv.push_str(&format!("{s},{t}\n"));
    }
    let data = mol_data(&csv, 6);
    let mut run = small_run(6);
    run.epochs = 80;
    let outcome = pretrain_mol_level::<f32>(&data, "homolumo", &run).unwrap();

    // raw-unit validation MSE of the returned model
    let preds = molshift_core::trainpipe::predict_molecules(
        &outcome.params,
        &outcome.config,
        &data.valid,
        outcome.norms.get("homolumo").copied(),
    )
    .unwrap();
    let mse: f64 = preds
        .iter()
        .zip(&data.valid)
        .map(|(p, r)| (p - r.target) * (p - r.target))
        .sum::<f64>()
        / preds.len() as f64;
    let label_mean = data.valid.iter().map(|r| r.target).sum::<f64>() / data.valid.len() as f64;
    let label_var = data
        .valid
        .iter()
        .map(|r| (r.target - label_mean) * (r.target - label_mean))
        .sum::<f64>()
        / data.valid.len() as f64;
    assert!(
        mse >= 0.8 * label_var,
        "shuffled-label MSE {mse:.3} beat 0.8 × label variance {label_var:.3}"
    );
}

#[test]
fn finetune_overfits_twenty_molecules() {
    // Capacity oracle: with train = valid = 20 molecules, the training-split
    // metric must become near-perfect on both loss paths. Targets are
    // structural, so near-twin molecules carry near targets and the check
    // measures training-loop capacity, not encoder separation of
    // almost-isomorphic scaffolds.
    let smiles: Vec<String> = toy_smiles().into_iter().step_by(10).take(20).collect();
    let stats: Vec<f64> = smiles
        .iter()
        .map(|s| centrality_statistic(&parse_smiles(s).unwrap()))
        .collect();

    // regression arm: MAE < 0.05
    let records: Vec<MolRecord> = smiles
        .iter()
        .zip(&stats)
        .map(|(s, &y)| MolRecord {
            smiles: s.clone(),
            graph: parse_smiles(s).unwrap(),
            target: y,
        })
        .collect();
    let data = Datasets {
        train: records.clone(),
        valid: records,
        test: Vec::new(),
    };
    let task = MolTask::new("toy_reg", TaskKind::Regression, MetricKind::Mae).unwrap();
    let mut run = small_run(8);
    run.epochs = 400;
    run.patience = 400; // capacity check: no early stopping at plateaus
    let outcome = finetune::<f32>(None, &task, &data, &run).unwrap();
    assert!(
        outcome.best_val < 0.05,
        "training MAE {:.4}",
        outcome.best_val
    );

    // binary arm: ROC-AUC > 0.99 on the median split of the same statistic
    let mut sorted = stats.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = (sorted[9] + sorted[10]) / 2.0;
    let records: Vec<MolRecord> = smiles
        .iter()
        .zip(&stats)
        .map(|(s, &y)| MolRecord {
            smiles: s.clone(),
            graph: parse_smiles(s).unwrap(),
            target: f64::from(y > median),
        })
        .collect();
    let data = Datasets {
        train: records.clone(),
        valid: records,
        test: Vec::new(),
    };
    let task = MolTask::new("toy_binary", TaskKind::Binary, MetricKind::RocAuc).unwrap();
    let outcome = finetune::<f32>(None, &task, &data, &run).unwrap();
    assert!(
        outcome.best_val > 0.99,
        "training ROC-AUC {:.4}",
        outcome.best_val
    );
}

#[test]
fn degenerate_labels_error() {
    let smiles: Vec<String> = toy_smiles().into_iter().take(10).collect();
    let records: Vec<MolRecord> = smiles
        .iter()
        .map(|s| MolRecord {
            smiles: s.clone(),
            graph: parse_smiles(s).unwrap(),
            target: 1.0,
        })
        .collect();
    let data = Datasets {
        train: records.clone(),
        valid: records,
        test: Vec::new(),
    };
    let task = MolTask::new("allpos", TaskKind::Binary, MetricKind::RocAuc).unwrap();
    let err = finetune::<f32>(None, &task, &data, &small_run(1)).unwrap_err();
    assert!(
        matches!(err, TrainError::DegenerateLabels(_)),
        "unexpected error {err}"
    );
}

#[test]
fn finetune_with_matching_fresh_checkpoint_equals_scratch() {
    // Code-path contract: the pretrained path differs from scratch only by
    // initialization, so handing it freshly initialized parameters must
    // reproduce the scratch run exactly.
    use molshift_core::graphormer::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let csv: String = {
        let all = toy_homolumo_csv();
        let mut s = String::from("smiles,target\n");
        for l in all.lines().skip(1).take(40) {
            s.push_str(l);
            s.push('\n');
        }
        s
    };
    let data = mol_data(&csv, 9);
    let task = MolTask::new("homolumo", TaskKind::Regression, MetricKind::Mae).unwrap();
    let mut run = small_run(9);
    run.epochs = 10;
    run.patience = 10;

    let scratch = finetune::<f32>(None, &task, &data, &run).unwrap();

    // the same initialization finetune would draw internally
    let cfg = scratch.config.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let fresh = init_params::<f32>(&cfg, &mut rng);
    let pre = finetune::<f32>(Some((&fresh, &cfg)), &task, &data, &run).unwrap();

    assert_eq!(scratch.history, pre.history);
}

#[test]
fn finetune_rejects_mismatched_checkpoint() {
    use molshift_core::graphormer::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let csv: String = {
        let all = toy_homolumo_csv();
        let mut s = String::from("smiles,target\n");
        for l in all.lines().skip(1).take(30) {
            s.push_str(l);
            s.push('\n');
        }
        s
    };
    let data = mol_data(&csv, 10);
    let task = MolTask::new("homolumo", TaskKind::Regression, MetricKind::Mae).unwrap();
    let run = small_run(10);

    let mut other = run.clone();
    other.hidden_dim = 32;
    let other_cfg = other.model_config(
        molshift_core::molgraph::AtomVocab::standard().len(),
        vec![molshift_core::graphormer::HeadKind::Regression],
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wrong = init_params::<f32>(&other_cfg, &mut rng);
    let err = finetune::<f32>(Some((&wrong, &other_cfg)), &task, &data, &run).unwrap_err();
    match err {
        TrainError::ConfigMismatch(msg) => assert!(msg.contains("hidden_dim"), "{msg}"),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn same_seed_reproduces_history_bit_exactly() {
    let csv: String = {
        let all = toy_homolumo_csv();
        let mut s = String::from("smiles,target\n");
        for l in all.lines().skip(1).take(40) {
            s.push_str(l);
            s.push('\n');
        }
        s
    };
    let data = mol_data(&csv, 12);
    let mut run = small_run(12);
    run.epochs = 8;
    run.dropout = 0.1; // exercise the stochastic path too
    let a = pretrain_mol_level::<f32>(&data, "homolumo", &run).unwrap();
    let b = pretrain_mol_level::<f32>(&data, "homolumo", &run).unwrap();
    assert_eq!(a.history, b.history);
    let pa: Vec<f32> = a.params.iter().flat_map(|(_, p)| p.data.clone()).collect();
    let pb: Vec<f32> = b.params.iter().flat_map(|(_, p)| p.data.clone()).collect();
    assert_eq!(pa, pb);
}

#[test]
fn normalization_round_trip() {
    let values: Vec<f64> = (0..100).map(|i| (i as f64) * 0.37 - 12.0).collect();
    let norm = Normalization::fit(&values);
    for &v in &values {
        let back = norm.invert(norm.apply(v));
        assert!((back - v).abs() < 1e-6, "{v} -> {back}");
    }
}
