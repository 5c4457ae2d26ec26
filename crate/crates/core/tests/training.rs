mod common;

use common::model::tiny_config;
use oat_core::baselines::{center_distribution, random_scanpath, wta_scanpath, BaselineConfig, BaselineKind};
use oat_core::datasets::{synth_dataset, Dataset, GridLayout, SynthConfig};
use oat_core::generation::{generate, generate_many, heatmap, history_swap_probe, Mode, Termination};
use oat_core::model::OatModel;
use oat_core::pe::PositionalTables;
use oat_core::training::{mean_loss, save_outcome, train, trial_inputs, Ablations, TrainConfig};
use oat_core::Error;

fn tiny_data(dir: &std::path::Path) -> Dataset {
    synth_dataset(
        &SynthConfig {
            rows: 2,
            cols: 3,
            n_items: 4,
            n_trials: 10,
            paths_per_trial: 3,
            cell: 10,
            gutter: 2,
            seed: 2,
            ..SynthConfig::default()
        },
        dir,
    )
    .unwrap()
}

fn tiny_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        lr: 1e-2,
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn tables() -> PositionalTables {
    PositionalTables::e2e(6, 3, 9)
}

#[test]
fn same_seed_same_first_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path());
    let cfg = tiny_config(2, 3);
    let a = train::<f64>(&ds, &cfg, &tables(), &tiny_train(3, 1), |_| {}).unwrap();
    let b = train::<f64>(&ds, &cfg, &tables(), &tiny_train(3, 1), |_| {}).unwrap();
    assert!((a.log[0].train_loss - b.log[0].train_loss).abs() < 1e-6);
    assert_eq!(a.log[0].val_loss, b.log[0].val_loss);
    let c = train::<f64>(&ds, &cfg, &tables(), &tiny_train(4, 1), |_| {}).unwrap();
    assert_ne!(a.log[0].train_loss, c.log[0].train_loss);
}

#[test]
fn loss_falls_and_checkpoint_reproduces_validation_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path());
    let tcfg = tiny_train(1, 8);
    let out = train::<f64>(&ds, &tiny_config(2, 3), &tables(), &tcfg, |_| {}).unwrap();
    assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
    let inputs = trial_inputs::<f64>(&ds, 8).unwrap();
    let before = mean_loss(&out.model, &ds, &inputs, &out.split.val).unwrap();
    assert_eq!(before, out.log[out.best_epoch - 1].val_loss);

    let ckpt = tempfile::tempdir().unwrap();
    save_outcome(&out, &tcfg, ckpt.path()).unwrap();
    let (loaded, extra) = OatModel::<f64>::load(&ckpt.path().join("model.ckpt")).unwrap();
    let after = mean_loss(&loaded, &ds, &inputs, &out.split.val).unwrap();
    assert!((before - after).abs() < 1e-6);
    assert_eq!(extra["best_epoch"], out.best_epoch);
    let csv = std::fs::read_to_string(ckpt.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), out.log.len() + 1);
}

#[test]
fn linear_head_ablation_trains() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path());
    let tcfg = TrainConfig {
        ablations: Ablations {
            use_oa: false,
            use_dpe: false,
            ..Ablations::default()
        },
        ..tiny_train(0, 2)
    };
    let out = train::<f64>(&ds, &tiny_config(2, 3), &tables(), &tcfg, |_| {}).unwrap();
    assert!(!out.model.config().use_oa);
    assert!(out.model.store().id("head.w").is_some());
    assert!(out.model.store().get(out.model.store().id("pe.x").unwrap()).trainable);
}

#[test]
fn bad_settings_name_their_key() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_data(dir.path());
    let few = Dataset {
        trials: ds.trials[..3].to_vec(),
        ..ds.clone()
    };
    let err = train::<f64>(&few, &tiny_config(2, 3), &tables(), &tiny_train(0, 1), |_| {}).unwrap_err();
    assert!(
        matches!(err, Error::Config { ref key, .. } if key == "train.split"),
        "{err}"
    );
    let err = train::<f64>(&ds, &tiny_config(3, 3), &tables(), &tiny_train(0, 1), |_| {}).unwrap_err();
    assert!(
        matches!(err, Error::Config { ref key, .. } if key == "model.rows"),
        "{err}"
    );
    let zero_lr = TrainConfig {
        lr: 0.0,
        ..tiny_train(0, 1)
    };
    let err = train::<f64>(&ds, &tiny_config(2, 3), &tables(), &zero_lr, |_| {}).unwrap_err();
    assert!(
        matches!(err, Error::Config { ref key, .. } if key == "train.lr"),
        "{err}"
    );
}

fn rigged_eos_model() -> OatModel<f64> {
    let cfg = oat_core::model::OatConfig {
        use_oa: false,
        ..tiny_config(2, 3)
    };
    let mut model = OatModel::new(cfg, &tables(), 0).unwrap();
    let w = model.store().id("head.w").unwrap();
    let b = model.store().id("head.b").unwrap();
    model.store_mut().value_mut(w).data_mut().fill(0.0);
    model.store_mut().value_mut(b).data_mut()[0] = 100.0;
    model
}

#[test]
fn forced_eos_gives_an_empty_scanpath() {
    let model = rigged_eos_model();
    let input = common::model::random_input(2, 3, 8, 2, 0);
    let enc = model.encode_trial(&input).unwrap();
    for mode in [Mode::Greedy, Mode::Sample] {
        let r = generate(&model, &enc, "t", mode, 5, 0, 30).unwrap();
        assert!(r.object_ids.is_empty());
        assert_eq!(r.terminated_by, Termination::Eos);
    }
}

#[test]
fn generation_contracts() {
    let model = common::model::tiny_model(tiny_config(2, 3), 3);
    let input = common::model::random_input(2, 3, 8, 4, 1);
    let enc = model.encode_trial(&input).unwrap();
    let g1 = generate(&model, &enc, "t", Mode::Greedy, 1, 0, 12).unwrap();
    let g2 = generate(&model, &enc, "t", Mode::Greedy, 99, 7, 12).unwrap();
    assert_eq!(g1.object_ids, g2.object_ids);
    let many = generate_many(&model, &enc, "t", Mode::Sample, 4, 100, 12).unwrap();
    assert_eq!(
        many,
        generate_many(&model, &enc, "t", Mode::Sample, 4, 100, 12).unwrap()
    );
    for r in &many {
        assert!(r.object_ids.len() <= 12);
        assert!(r.object_ids.iter().all(|&id| (1..=6).contains(&id)));
        if r.terminated_by == Termination::MaxLen {
            assert_eq!(r.object_ids.len(), 12);
        }
    }
    let h = heatmap(
        many.iter().map(|r| r.object_ids.as_slice()),
        &GridLayout::uniform(2, 3, 4, 1),
    )
    .unwrap();
    let total: f64 = h.iter().sum();
    assert!(total == 0.0 || (total - 1.0).abs() < 1e-9);
}

#[test]
fn no_op_swap_changes_nothing() {
    let model = common::model::tiny_model(tiny_config(2, 3), 4);
    let input = common::model::random_input(2, 3, 8, 4, 2);
    let enc = model.encode_trial(&input).unwrap();
    let history = [2, 5, 5, 1, 6];
    let d = history_swap_probe(&model, &enc, &history, 1, 5, &[2, 3, 5]).unwrap();
    assert_eq!(d.len(), 3);
    assert!(d.iter().all(|p| p.delta == 0.0 && p.object == 5));
    let moved = history_swap_probe(&model, &enc, &history, 1, 3, &[2, 3, 5]).unwrap();
    assert!(moved.iter().any(|p| p.delta != 0.0));
    assert!(history_swap_probe(&model, &enc, &history, 2, 3, &[2]).is_err());
    assert!(history_swap_probe(&model, &enc, &history, 5, 3, &[5]).is_err());
}

#[test]
fn random_baseline_is_uniform_with_geometric_length() {
    let layout = GridLayout::uniform(3, 4, 4, 1);
    let cfg = BaselineConfig {
        mean_length: 6.0,
        max_len: 1000,
        seed: 3,
        ..BaselineConfig::default()
    };
    let mut counts = vec![0usize; 12];
    let (mut fixations, mut paths) = (0usize, 0usize);
    while fixations < 50_000 {
        let r = random_scanpath(&layout, &cfg, "t", paths as u64);
        for id in &r.object_ids {
            counts[id - 1] += 1;
        }
        fixations += r.object_ids.len();
        paths += 1;
    }
    let p = 1.0 / 12.0;
    let se = (p * (1.0 - p) / fixations as f64).sqrt();
    for c in counts {
        assert!((c as f64 / fixations as f64 - p).abs() < 3.0 * se);
    }
    let mean = fixations as f64 / paths as f64;
    assert!((mean - 6.0).abs() < 0.3, "mean length {mean}");

    let single = GridLayout::uniform(1, 1, 4, 1);
    assert!(random_scanpath(&single, &cfg, "t", 0)
        .object_ids
        .iter()
        .all(|&id| id == 1));
}

#[test]
fn wide_center_baseline_is_uniform() {
    let layout = GridLayout::uniform(6, 14, 4, 1);
    let p = center_distribution(&layout, 1e6);
    let u = 1.0 / 84.0;
    let kl: f64 = p.iter().map(|&q| q * (q / u).ln()).sum();
    assert!(kl < 1e-3);
}

#[test]
fn wta_length_is_rounded_mean() {
    let layout = GridLayout::uniform(3, 3, 4, 1);
    let desc: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64, (i * i) as f64 % 5.0]).collect();
    for mean in [2.4, 5.5, 12.0] {
        let cfg = BaselineConfig {
            kind: BaselineKind::Wta,
            mean_length: mean,
            ..BaselineConfig::default()
        };
        let r = wta_scanpath(&layout, &desc, &cfg, "t").unwrap();
        assert_eq!(r.object_ids.len(), mean.round() as usize);
        let firsts = &r.object_ids[..r.object_ids.len().min(9)];
        let mut seen = firsts.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), firsts.len());
    }
}
