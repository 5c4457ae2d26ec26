//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. The end-to-end criteria share nine
//! training runs (full model, E2E positions, linear head; seeds 0 to 2) on
//! the default synthetic benchmark.

mod common;

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::model::{fd_error, jitter, random_input, tiny_config, tiny_model};
use common::{check_grads, lcs_oracle, levenshtein_oracle, random_tensor, rng, weighted_sum};
use oat_core::baselines::{center_scanpath, random_scanpath, BaselineConfig};
use oat_core::datasets::{synth_dataset, Dataset, SynthConfig};
use oat_core::generation::{generate, generate_many, Mode, Termination};
use oat_core::metrics::{
    aggregate, fed, saccade_distance_histogram, sequence_score, total_variation, BehaviorStats, MetricReport,
    TrialScanpaths,
};
use oat_core::model::{OatConfig, OatModel};
use oat_core::pe::{gaussian_target, sinusoidal_pe, train_pe, PeConfig, PeMatrix};
use oat_core::tensor::{Tape, Var, PAD_INDEX};
use oat_core::training::{positional_tables, train, trial_inputs, Ablations, EpochLog, TrainConfig};
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const SAMPLES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(results: &mut Vec<(String, bool)>, name: &str, elapsed: Duration, o: Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("{tag} criterion {name}: {} [{:.1}s]", o.detail, elapsed.as_secs_f64());
    results.push((name.to_string(), o.pass));
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Outcome {
    type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;
    let mut r = rng(101);
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[3, 4]);
    let w = random_tensor(&mut r, &[4, 2]);
    let bias = random_tensor(&mut r, &[4]);
    let mut shifted = random_tensor(&mut r, &[3, 4]);
    for v in shifted.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    let idx = vec![2, 0, 1, 2];
    let flat = Arc::new(vec![5, PAD_INDEX, 11, 0]);
    let targets = vec![0, 3, 2];
    let ops: Vec<(&str, Vec<oat_core::tensor::Tensor<f64>>, Build)> = vec![
        (
            "matmul",
            vec![a.clone(), w.clone()],
            Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
        ),
        (
            "matmul_t",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.matmul_t(v[0], v[1], false, true).unwrap()),
        ),
        (
            "add",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
        ),
        (
            "add_row",
            vec![a.clone(), bias.clone()],
            Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
        ),
        ("scale", vec![a.clone()], Box::new(|t, v| t.scale(v[0], -1.3))),
        (
            "add_scalar",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| {
                let s = t.add_scalar(v[0], 0.4);
                t.mul(s, v[1]).unwrap()
            }),
        ),
        ("relu", vec![shifted.clone()], Box::new(|t, v| t.relu(v[0]))),
        ("softmax", vec![a.clone()], Box::new(|t, v| t.softmax(v[0], 1).unwrap())),
        (
            "layer_norm",
            vec![a.clone(), bias.clone(), bias.clone()],
            Box::new(|t, v| t.layer_norm(v[0], v[1], v[2], 1).unwrap()),
        ),
        (
            "concat",
            vec![a.clone(), b.clone()],
            Box::new(|t, v| t.concat(&[v[0], v[1]], 0).unwrap()),
        ),
        (
            "slice",
            vec![a.clone()],
            Box::new(|t, v| t.slice(v[0], 1, 1, 2).unwrap()),
        ),
        (
            "gather",
            vec![a.clone()],
            Box::new(move |t, v| t.gather(v[0], flat.clone(), &[4]).unwrap()),
        ),
        (
            "embedding",
            vec![a.clone()],
            Box::new(move |t, v| t.embedding_lookup(v[0], &idx).unwrap()),
        ),
        (
            "reshape",
            vec![a.clone()],
            Box::new(|t, v| t.reshape(v[0], &[12]).unwrap()),
        ),
        (
            "transpose",
            vec![a.clone()],
            Box::new(|t, v| t.transpose(v[0]).unwrap()),
        ),
        (
            "sum",
            vec![a.clone()],
            Box::new(|t, v| {
                let s = t.mul(v[0], v[0]).unwrap();
                t.sum(s)
            }),
        ),
        (
            "mean",
            vec![a.clone()],
            Box::new(|t, v| {
                let s = t.mul(v[0], v[0]).unwrap();
                t.mean(s)
            }),
        ),
        (
            "cross_entropy",
            vec![a.clone()],
            Box::new(move |t, v| t.cross_entropy(v[0], &targets).unwrap()),
        ),
        (
            "row_norms",
            vec![shifted.clone()],
            Box::new(|t, v| t.row_norms(v[0]).unwrap()),
        ),
        (
            "normalize_rows",
            vec![shifted.clone()],
            Box::new(|t, v| t.normalize_rows(v[0]).unwrap()),
        ),
    ];
    let mut worst = (0.0f64, "");
    for (k, (name, inputs, build)) in ops.iter().enumerate() {
        let err = check_grads(inputs, &|t, v| {
            let out = build(t, v);
            if t.value(out).numel() == 1 {
                out
            } else {
                weighted_sum(t, out, 7 + k as u64)
            }
        });
        if err > worst.0 {
            worst = (err, name);
        }
    }
    let mut model = tiny_model(tiny_config(2, 2), 11);
    jitter(&mut model, 1);
    let input = random_input(2, 2, 8, 3, 5);
    let (model_err, param) = fd_error(&mut model, &input, &[1, 4, 4, 3]);
    let mut head = tiny_model(
        OatConfig {
            use_oa: false,
            ..tiny_config(2, 2)
        },
        12,
    );
    jitter(&mut head, 2);
    let (head_err, head_param) = fd_error(&mut head, &random_input(2, 2, 8, 2, 6), &[2, 1]);
    outcome(
        worst.0 < 1e-4 && model_err < 1e-4 && head_err < 1e-4,
        format!(
            "{} ops, worst {:.1e} ({}); full model on 2x2 {:.1e} ({param}); linear head {:.1e} ({head_param})",
            ops.len(),
            worst.0,
            worst.1,
            model_err,
            head_err
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

fn mean_cosine_at(m: &PeMatrix, d: usize) -> f64 {
    let n = m.length() - d;
    (0..n).map(|i| m.cosine(i, i + d)).sum::<f64>() / n as f64
}

fn criterion_2(dpe: &PeMatrix, cfg: &PeConfig) -> Outcome {
    let rmse = dpe.target_rmse(cfg.sigma);
    let norms = dpe.row_norms();
    let (lo, hi) = norms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &n| (l.min(n), h.max(n)));
    let half = dpe.half_width();
    outcome(
        rmse <= 0.05 && lo >= 0.95 && hi <= 1.05 && half.is_some_and(|h| h <= 3),
        format!("rmse {rmse:.4} (<= 0.05), row norms [{lo:.4}, {hi:.4}], half width {half:?} (<= 3)"),
    )
}

fn criterion_3(dpe: &PeMatrix, cfg: &PeConfig) -> Outcome {
    let target = gaussian_target(0, 5, cfg.sigma);
    let sin = sinusoidal_pe(cfg.length, cfg.d_axis).expect("even width");
    let s = mean_cosine_at(&sin, 5);
    let d = mean_cosine_at(dpe, 5);
    outcome(
        s - target >= 0.2 && (d - target).abs() <= 0.05,
        format!(
            "target {target:.4}; sinusoidal {s:.4} (excess {:.4}); DPE {d:.4}",
            s - target
        ),
    )
}

// ---------------------------------------------------------------- 4, 5

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let word = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
        let n = r.gen_range(0..=10);
        (0..n).map(|_| r.gen_range(1..=20)).collect()
    };
    let mut fed_bad = 0;
    let mut ss_bad = 0;
    for _ in 0..200 {
        let (a, b) = (word(&mut r), word(&mut r));
        if fed(&a, &b) != levenshtein_oracle(&a, &b) {
            fed_bad += 1;
        }
        let expect = if a.is_empty() && b.is_empty() {
            1.0
        } else {
            2.0 * lcs_oracle(&a, &b) as f64 / (a.len() + b.len()) as f64
        };
        if sequence_score(&a, &b) != expect {
            ss_bad += 1;
        }
    }
    let mut axiom_bad = 0;
    for _ in 0..1000 {
        let (a, b, c) = (word(&mut r), word(&mut r), word(&mut r));
        let symmetric = fed(&a, &b) == fed(&b, &a) && sequence_score(&a, &b) == sequence_score(&b, &a);
        let triangle = fed(&a, &c) <= fed(&a, &b) + fed(&b, &c);
        let identity = fed(&a, &a) == 0 && sequence_score(&a, &a) == 1.0;
        if !(symmetric && triangle && identity) {
            axiom_bad += 1;
        }
    }
    outcome(
        fed_bad == 0 && ss_bad == 0 && axiom_bad == 0,
        format!("FED mismatches {fed_bad}/200, SS mismatches {ss_bad}/200, axiom violations {axiom_bad}/1000"),
    )
}

fn criterion_5() -> Outcome {
    let stats = |s: f64, v: f64, f: f64, a: f64, l: f64| BehaviorStats {
        search_pct: s,
        revisit_pct: v,
        refix_pct: f,
        accuracy: a,
        avg_length: l,
    };
    let human = stats(85.8, 2.3, 11.9, 91.7, 8.4);
    let oat = stats(85.3, 3.0, 11.7, 89.4, 8.5);
    let random = stats(95.5, 3.6, 0.9, 1.1, 8.8);
    let o = oat_core::metrics::overall_difference(&oat, &human).unwrap();
    let r = oat_core::metrics::overall_difference(&random, &human).unwrap();
    outcome(
        (o - 0.074).abs() <= 0.005 && (r - 0.530).abs() <= 0.01,
        format!("OAT row {o:.4} (0.074 ± 0.005), Random row {r:.4} (0.530 ± 0.01)"),
    )
}

// ---------------------------------------------------------------- end-to-end runs

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Full,
    E2e,
    NoOa,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Full => "OAT",
            Variant::E2e => "w/o DPE",
            Variant::NoOa => "w/o OA",
        }
    }

    fn ablations(self) -> Ablations {
        Ablations {
            use_dpe: self != Variant::E2e,
            use_oa: self != Variant::NoOa,
            ..Ablations::default()
        }
    }
}

struct Run {
    variant: Variant,
    seed: u64,
    log: Vec<EpochLog>,
    model: OatModel<f32>,
    test: Vec<usize>,
    train_mean_length: f64,
    report: MetricReport,
    histogram: Vec<f64>,
    oracle_histogram: Vec<f64>,
}

fn train_run(ds: &Dataset, variant: Variant, seed: u64) -> Run {
    let mut model_cfg = OatConfig::desk();
    model_cfg.rows = ds.layout.rows;
    model_cfg.cols = ds.layout.cols;
    let cfg = TrainConfig {
        seed,
        ablations: variant.ablations(),
        ..TrainConfig::desk()
    };
    let model_cfg = cfg.ablations.apply(&model_cfg);
    let tables = positional_tables(
        model_cfg.pe_kind,
        model_cfg.p,
        model_cfg.rows,
        model_cfg.cols,
        &PeConfig::default(),
        seed,
    )
    .unwrap();
    let out = train::<f32>(ds, &model_cfg, &tables, &cfg, |_| {}).unwrap();
    let inputs = trial_inputs::<f32>(ds, model_cfg.patch_size).unwrap();
    let train_ds = Dataset {
        trials: out.split.train.iter().map(|&i| ds.trials[i].clone()).collect(),
        ..ds.clone()
    };
    let mut rows = Vec::new();
    for &i in &out.split.test {
        let t = &ds.trials[i];
        let enc = out.model.encode_trial(&inputs[i]).unwrap();
        let recs = generate_many(&out.model, &enc, &t.trial_id, Mode::Sample, seed, SAMPLES, 30).unwrap();
        rows.push(TrialScanpaths {
            trial_id: t.trial_id.clone(),
            target_id: t.target_id,
            model: recs.into_iter().map(|r| r.object_ids).collect(),
            reference: t.scanpaths.iter().map(|s| s.objects.clone()).collect(),
        });
    }
    let report = aggregate(&ds.layout, &rows);
    let histogram = saccade_distance_histogram(rows.iter().flat_map(|r| r.model.iter().map(Vec::as_slice)), &ds.layout);
    let oracle_histogram = saccade_distance_histogram(
        rows.iter().flat_map(|r| r.reference.iter().map(Vec::as_slice)),
        &ds.layout,
    );
    let run = Run {
        variant,
        seed,
        log: out.log,
        model: out.model,
        test: out.split.test,
        train_mean_length: train_ds.mean_length(),
        report,
        histogram,
        oracle_histogram,
    };
    println!(
        "  run {:<8} seed {}: {} epochs, SS {:.3}, accuracy {:.3}, overall {}",
        variant.name(),
        seed,
        run.log.len(),
        run.report.ss,
        run.report.model.accuracy,
        fmt_opt(run.report.overall)
    );
    run
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.3}"))
}

fn baseline_report(ds: &Dataset, run: &Run, center: bool) -> MetricReport {
    let cfg = BaselineConfig {
        mean_length: run.train_mean_length,
        seed: run.seed,
        ..BaselineConfig::default()
    };
    let rows: Vec<TrialScanpaths> = run
        .test
        .iter()
        .map(|&i| {
            let t = &ds.trials[i];
            let model = (0..SAMPLES as u64)
                .map(|k| {
                    if center {
                        center_scanpath(&ds.layout, &cfg, &t.trial_id, k).object_ids
                    } else {
                        random_scanpath(&ds.layout, &cfg, &t.trial_id, k).object_ids
                    }
                })
                .collect();
            TrialScanpaths {
                trial_id: t.trial_id.clone(),
                target_id: t.target_id,
                model,
                reference: t.scanpaths.iter().map(|s| s.objects.clone()).collect(),
            }
        })
        .collect();
    aggregate(&ds.layout, &rows)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn runs_of(runs: &[Run], v: Variant) -> Vec<&Run> {
    runs.iter().filter(|r| r.variant == v).collect()
}

fn criterion_6a(runs: &[Run]) -> Outcome {
    let full = runs_of(runs, Variant::Full);
    let mut detail = String::new();
    let mut pass = true;
    for r in &full {
        let e1 = r.log[0].train_loss;
        let e5 = r.log.get(4).map_or(f64::NAN, |e| e.train_loss);
        pass &= e5 < 0.5 * e1;
        let _ = write!(
            detail,
            "seed {}: epoch 1 {e1:.3}, epoch 5 {e5:.3} (ratio {:.3}); ",
            r.seed,
            e5 / e1
        );
    }
    outcome(pass, format!("{detail}need ratio < 0.5 on every seed"))
}

fn criterion_6b(runs: &[Run], random: &[MetricReport]) -> Outcome {
    let oat = mean(runs_of(runs, Variant::Full).iter().map(|r| r.report.ss));
    let rnd = mean(random.iter().map(|r| r.ss));
    outcome(
        oat >= 3.0 * rnd,
        format!("OAT SS {oat:.4}, Random SS {rnd:.4}, ratio {:.2} (>= 3)", oat / rnd),
    )
}

fn criterion_6c(runs: &[Run], random: &[MetricReport], center: &[MetricReport], m: usize) -> Outcome {
    let oat = mean(runs_of(runs, Variant::Full).iter().map(|r| r.report.model.accuracy));
    let n: usize = runs_of(runs, Variant::Full)
        .iter()
        .map(|r| r.test.len() * SAMPLES)
        .sum();
    let p = 2.0 / m as f64;
    let bound = p + 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let rnd = mean(random.iter().map(|r| r.model.accuracy));
    let cen = mean(center.iter().map(|r| r.model.accuracy));
    outcome(
        oat >= 0.5 && rnd <= bound && cen <= bound,
        format!("OAT accuracy {oat:.3} (>= 0.5); Random {rnd:.4}, Center {cen:.4} (<= {bound:.4})"),
    )
}

fn criterion_6d(runs: &[Run]) -> Outcome {
    let full = runs_of(runs, Variant::Full);
    let vals: Vec<Option<f64>> = full.iter().map(|r| r.report.overall).collect();
    if vals.iter().any(Option::is_none) {
        return outcome(false, "overall undefined for some seed");
    }
    let per: Vec<String> = vals.iter().map(|v| format!("{:.3}", v.unwrap())).collect();
    let o = mean(vals.into_iter().flatten());
    let r = &full[0].report;
    outcome(
        o < 0.3,
        format!(
            "mean overall {o:.3} (< 0.3) over seeds [{}]; seed 0 model {:?} vs oracle {:?}",
            per.join(", "),
            r.model,
            r.reference
        ),
    )
}

fn criterion_7(ds: &Dataset, run: &Run) -> Outcome {
    let inputs: Vec<_> = run
        .test
        .iter()
        .map(|&i| {
            ds.trial_input::<f32>(&ds.trials[i], run.model.config().patch_size)
                .unwrap()
        })
        .collect();
    let per_trial = 10_000 / run.test.len() + 1;
    let (mut total, mut within, mut eos, mut worst_sum) = (0usize, 0usize, 0usize, 0.0f64);
    let mut greedy_same = true;
    for (k, &i) in run.test.iter().enumerate() {
        let id = &ds.trials[i].trial_id;
        let enc = run.model.encode_trial(&inputs[k]).unwrap();
        let recs = generate_many(&run.model, &enc, id, Mode::Sample, 77, per_trial, 30).unwrap();
        for (j, r) in recs.iter().enumerate() {
            if total == 10_000 {
                break;
            }
            total += 1;
            within += usize::from(r.object_ids.len() <= 30);
            eos += usize::from(r.terminated_by == Termination::Eos);
            if j < 20 {
                for s in 0..=r.object_ids.len() {
                    let p = run.model.next_distribution(&enc, &r.object_ids[..s]).unwrap();
                    worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
                }
            }
        }
        let g1 = generate(&run.model, &enc, id, Mode::Greedy, 1, 0, 30).unwrap();
        let again = generate(&run.model, &enc, id, Mode::Greedy, 1, 0, 30).unwrap();
        let other_stream = generate(&run.model, &enc, id, Mode::Greedy, 2, 5, 30).unwrap();
        greedy_same &= g1 == again && g1.object_ids == other_stream.object_ids;
    }
    outcome(
        total == 10_000 && within == total && worst_sum <= 1e-6 && greedy_same,
        format!(
            "{within}/{total} within max_len ({eos} by EOS); worst |sum p - 1| {worst_sum:.1e}; greedy repeatable: {greedy_same}"
        ),
    )
}

fn criterion_8(runs: &[Run]) -> Outcome {
    let tv = |v: Variant| -> Vec<f64> {
        runs_of(runs, v)
            .iter()
            .map(|r| total_variation(&r.histogram, &r.oracle_histogram))
            .collect()
    };
    let (dpe, e2e) = (tv(Variant::Full), tv(Variant::E2e));
    let fmt = |h: &[f64]| h.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ");
    println!("  saccade-distance histograms (Manhattan distance 0..):");
    for r in runs.iter().filter(|r| r.variant != Variant::NoOa) {
        println!(
            "    {:<8} seed {}: model  {}",
            r.variant.name(),
            r.seed,
            fmt(&r.histogram)
        );
        println!(
            "    {:<8} seed {}: oracle {}",
            r.variant.name(),
            r.seed,
            fmt(&r.oracle_histogram)
        );
    }
    let (md, me) = (mean(dpe.iter().copied()), mean(e2e.iter().copied()));
    outcome(
        md < me,
        format!("mean TV to oracle: DPE {md:.4} {dpe:.3?}, E2E {me:.4} {e2e:.3?}"),
    )
}

fn criterion_9(runs: &[Run]) -> Outcome {
    let overall = |v: Variant, seed: u64| {
        runs.iter()
            .find(|r| r.variant == v && r.seed == seed)
            .and_then(|r| r.report.overall)
    };
    let mut detail = String::new();
    let mut pass = true;
    for v in [Variant::E2e, Variant::NoOa] {
        let mut worse = 0;
        for s in SEEDS {
            let (f, a) = (overall(Variant::Full, s), overall(v, s));
            if let (Some(f), Some(a)) = (f, a) {
                worse += usize::from(a > f);
            }
            let _ = write!(detail, "{} seed {s}: {} vs {}; ", v.name(), fmt_opt(a), fmt_opt(f));
        }
        pass &= worse >= 2;
    }
    outcome(pass, format!("{detail}ablation vs full; need worse in >= 2 of 3 seeds"))
}

fn main() {
    let mut results = Vec::new();

    let t = Instant::now();
    let o = criterion_1();
    report(&mut results, "1 (autodiff)", t.elapsed(), o);

    let cfg = PeConfig::default();
    let t = Instant::now();
    let dpe = train_pe(&cfg, 0).unwrap();
    let fit_time = t.elapsed();
    let mut o = criterion_2(&dpe, &cfg);
    o.pass &= fit_time < Duration::from_secs(60);
    report(&mut results, "2 (DPE fit)", fit_time, o);

    let t = Instant::now();
    let o = criterion_3(&dpe, &cfg);
    report(&mut results, "3 (PE contrast)", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_4();
    report(&mut results, "4 (metric oracles)", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_5();
    report(&mut results, "5 (overall arithmetic)", t.elapsed(), o);

    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset(&SynthConfig::default(), dir.path()).unwrap();
    println!(
        "  benchmark: {}x{} grid, {} trials, mean oracle length {:.2}",
        ds.layout.rows,
        ds.layout.cols,
        ds.trials.len(),
        ds.mean_length()
    );
    let mut runs = Vec::new();
    for variant in [Variant::Full, Variant::E2e, Variant::NoOa] {
        for seed in SEEDS {
            runs.push(train_run(&ds, variant, seed));
        }
    }
    let full = runs_of(&runs, Variant::Full);
    let random: Vec<MetricReport> = full.iter().map(|r| baseline_report(&ds, r, false)).collect();
    let center: Vec<MetricReport> = full.iter().map(|r| baseline_report(&ds, r, true)).collect();
    let pipeline = start.elapsed();
    println!("  nine runs and baselines took {:.0}s", pipeline.as_secs_f64());

    let within = pipeline < Duration::from_secs(30 * 60);
    let mut o = criterion_6a(&runs);
    o.pass &= within;
    report(&mut results, "6a (loss halves by epoch 5)", pipeline, o);
    report(
        &mut results,
        "6b (SS vs Random)",
        pipeline,
        criterion_6b(&runs, &random),
    );
    report(
        &mut results,
        "6c (accuracy)",
        pipeline,
        criterion_6c(&runs, &random, &center, ds.layout.m()),
    );
    report(&mut results, "6d (overall)", pipeline, criterion_6d(&runs));

    let t = Instant::now();
    let o = criterion_7(&ds, full[0]);
    report(&mut results, "7 (generation contracts)", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_8(&runs);
    report(&mut results, "8 (saccade distances)", t.elapsed(), o);

    let t = Instant::now();
    let o = criterion_9(&runs);
    report(&mut results, "9 (ablations)", t.elapsed(), o);

    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
