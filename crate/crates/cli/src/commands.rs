use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oat_core::baselines::{center_scanpath, pixel_descriptors, random_scanpath, wta_scanpath, BaselineKind};
use oat_core::datasets::{ingest_fixations, synth_dataset, Dataset, GridLayout, Trial, TrialMeta};
use oat_core::fsutil::{read_json, write_atomic, write_atomic_str, write_json};
use oat_core::generation::{
    generate_many, heatmap, heatmap_csv, heatmap_pgm, history_swap_probe, parse_records, write_records, Mode,
    ScanpathRecord,
};
use oat_core::metrics::{aggregate, MetricReport, TrialScanpaths};
use oat_core::model::{OatModel, PeKind};
use oat_core::pe::{train_pe, PositionalTables};
use oat_core::seeding::stream_seed;
use oat_core::training::{positional_tables, save_outcome, train, Split};
use serde_json::json;

use crate::config::{RunConfig, TrialSet};
use crate::{
    BaselineArgs, Cli, Command, DataCommand, EvalArgs, GenerateArgs, HeatmapArgs, IngestArgs, PeCommand, PeTablesArgs,
    PeTrainArgs, ProbeArgs, SynthArgs, TrainArgs, UsageError,
};

struct Ctx {
    command: &'static str,
    threads: usize,
    cfg: RunConfig,
}

impl Ctx {
    fn manifest(&self, path: &Path) -> Result<()> {
        let value = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "config": self.cfg,
            "seed": self.cfg.train.seed,
            "threads": self.threads,
            "version": env!("CARGO_PKG_VERSION"),
        });
        write_json(path, &value)?;
        Ok(())
    }

    /// Manifest for a directory output.
    fn dir_manifest(&self, dir: &Path) -> Result<()> {
        self.manifest(&dir.join("run_manifest.json"))
    }

    /// Manifest next to a file output: `<file>.manifest.json`.
    fn file_manifest(&self, file: &Path) -> Result<()> {
        let mut name = file.as_os_str().to_owned();
        name.push(".manifest.json");
        self.manifest(&PathBuf::from(name))
    }
}

pub fn dispatch(cli: Cli, cfg: RunConfig) -> Result<()> {
    cfg.validate()?;
    let threads = cli.common.threads;
    let command = match &cli.command {
        Command::Pe(PeCommand::Train(_)) => "pe train",
        Command::Pe(PeCommand::Tables(_)) => "pe tables",
        Command::Data(DataCommand::Synth(_)) => "data synth",
        Command::Data(DataCommand::Ingest(_)) => "data ingest",
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Baseline(_) => "baseline",
        Command::Eval(_) => "eval",
        Command::Heatmap(_) => "heatmap",
        Command::Probe(_) => "probe",
    };
    let mut ctx = Ctx { command, threads, cfg };
    match cli.command {
        Command::Pe(PeCommand::Train(a)) => pe_train(&mut ctx, a),
        Command::Pe(PeCommand::Tables(a)) => pe_tables(&mut ctx, a),
        Command::Data(DataCommand::Synth(a)) => synth(&mut ctx, a),
        Command::Data(DataCommand::Ingest(a)) => ingest(&mut ctx, a),
        Command::Train(a) => train_cmd(&mut ctx, a),
        Command::Generate(a) => generate_cmd(&mut ctx, a),
        Command::Baseline(a) => baseline(&mut ctx, a),
        Command::Eval(a) => eval(&mut ctx, a),
        Command::Heatmap(a) => heatmap_cmd(&mut ctx, a),
        Command::Probe(a) => probe(&mut ctx, a),
    }
}

fn pe_train(ctx: &mut Ctx, a: PeTrainArgs) -> Result<()> {
    let pe = &mut ctx.cfg.pe;
    if let Some(v) = a.length {
        pe.length = v;
    }
    if let Some(v) = a.d_axis {
        pe.d_axis = v;
    }
    if let Some(v) = a.sigma {
        pe.sigma = v;
    }
    if let Some(v) = a.lambda {
        pe.lambda = v;
    }
    if let Some(v) = a.iters {
        pe.iters = v;
    }
    if let Some(v) = a.lr {
        pe.lr = v;
    }
    pe.validate()?;
    let seed = ctx.cfg.train.seed;
    let table = train_pe(&ctx.cfg.pe, seed)?;
    table.save(&a.out, Some(&ctx.cfg.pe), Some(seed))?;
    let norms = table.row_norms();
    let (lo, hi) = norms
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &n| (l.min(n), h.max(n)));
    println!(
        "rmse {:.4}, row norms [{lo:.4}, {hi:.4}], half width {:?}",
        table.target_rmse(ctx.cfg.pe.sigma),
        table.half_width()
    );
    ctx.file_manifest(&a.out)
}

fn pe_tables(ctx: &mut Ctx, a: PeTablesArgs) -> Result<()> {
    let kind: PeKind = a.kind.parse()?;
    ctx.cfg.model.pe_kind = kind;
    let cfg = &ctx.cfg;
    let tables = positional_tables(
        kind,
        cfg.model.p,
        cfg.model.rows,
        cfg.model.cols,
        &cfg.pe,
        cfg.train.seed,
    )?;
    tables.save_dir(&a.out, Some(&cfg.pe), Some(cfg.train.seed))?;
    let axis = |m: &oat_core::pe::PeMatrix| {
        json!({
            "length": m.length(),
            "width": m.width(),
            "rmse": m.target_rmse(cfg.pe.sigma),
            "half_width": m.half_width(),
            "row_norms": m.row_norms(),
        })
    };
    let report = json!({ "kind": a.kind, "x": axis(&tables.x), "y": axis(&tables.y), "z": axis(&tables.z) });
    write_json(&a.out.join("pe_report.json"), &report)?;
    println!(
        "{} tables: x rmse {:.4}, y rmse {:.4}, half width {:?}",
        a.kind,
        tables.x.target_rmse(cfg.pe.sigma),
        tables.y.target_rmse(cfg.pe.sigma),
        tables.x.half_width()
    );
    ctx.dir_manifest(&a.out)
}

fn synth(ctx: &mut Ctx, a: SynthArgs) -> Result<()> {
    let d = &mut ctx.cfg.data;
    if let Some(v) = a.rows {
        d.rows = v;
    }
    if let Some(v) = a.cols {
        d.cols = v;
    }
    if let Some(v) = a.items {
        d.n_items = v;
    }
    if let Some(v) = a.trials {
        d.n_trials = v;
    }
    if let Some(v) = a.paths_per_trial {
        d.paths_per_trial = v;
    }
    let ds = synth_dataset(d, &a.out)?;
    println!(
        "{} trials on a {}×{} grid, mean scanpath length {:.2}",
        ds.trials.len(),
        ds.layout.rows,
        ds.layout.cols,
        ds.mean_length()
    );
    ctx.dir_manifest(&a.out)
}

fn ingest(ctx: &mut Ctx, a: IngestArgs) -> Result<()> {
    let layout: GridLayout = read_json(&a.layout)?;
    let meta: Vec<TrialMeta> = read_json(&a.meta)?;
    let file = std::fs::File::open(&a.fixations).with_context(|| format!("opening {}", a.fixations.display()))?;
    let trials = ingest_fixations(file, &layout, &meta)?;
    let ds = Dataset {
        root: a.out.clone(),
        layout,
        trials,
        templates: None,
    };
    ds.save(&a.out)?;
    println!("{} trials ingested", ds.trials.len());
    ctx.dir_manifest(&a.out)
}

fn train_cmd(ctx: &mut Ctx, a: TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let cfg = &mut ctx.cfg;
    cfg.model.rows = ds.layout.rows;
    cfg.model.cols = ds.layout.cols;
    cfg.model.pe_kind = cfg.train.ablations.effective_pe();
    let tables = match &a.pe {
        Some(dir) => PositionalTables::load_dir(dir)?,
        None => positional_tables(
            cfg.model.pe_kind,
            cfg.model.p,
            cfg.model.rows,
            cfg.model.cols,
            &cfg.pe,
            cfg.train.seed,
        )?,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcome = train::<f32>(&ds, &cfg.model, &tables, &cfg.train, |_| {})?;
    save_outcome(&outcome, &cfg.train, &a.out)?;
    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {}: train {:.4}, val {:.4}",
        outcome.best_epoch,
        outcome.log.len(),
        best.train_loss,
        best.val_loss
    );
    ctx.dir_manifest(&a.out)
}

fn checkpoint_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("model.ckpt")
    } else {
        p.to_path_buf()
    }
}

fn load_model(p: &Path) -> Result<(OatModel<f32>, serde_json::Value)> {
    let path = checkpoint_path(p);
    OatModel::<f32>::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn split_of(extra: &serde_json::Value) -> Option<Split> {
    serde_json::from_value(extra.get("split")?.clone()).ok()
}

/// Indices of the held-out trials, or all trials when there is no split.
fn selected_trials(ds: &Dataset, split: Option<&Split>, set: TrialSet) -> Result<Vec<usize>> {
    match (set, split) {
        (TrialSet::Test, Some(s)) => {
            if let Some(&bad) = s.test.iter().find(|&&i| i >= ds.trials.len()) {
                return Err(UsageError(format!(
                    "checkpoint split names trial {bad}, the dataset has {}",
                    ds.trials.len()
                ))
                .into());
            }
            Ok(s.test.clone())
        }
        _ => Ok((0..ds.trials.len()).collect()),
    }
}

fn check_grid(model: &OatModel<f32>, layout: &GridLayout) -> Result<()> {
    let c = model.config();
    if (c.rows, c.cols) != (layout.rows, layout.cols) {
        return Err(oat_core::Error::config(
            "model.rows",
            format!(
                "checkpoint grid {}×{} does not match the data grid {}×{}",
                c.rows, c.cols, layout.rows, layout.cols
            ),
        )
        .into());
    }
    Ok(())
}

fn generate_cmd(ctx: &mut Ctx, a: GenerateArgs) -> Result<()> {
    let g = &mut ctx.cfg.generate;
    if let Some(m) = &a.mode {
        g.mode = m.parse::<Mode>()?;
    }
    if let Some(n) = a.n {
        g.n = n;
    }
    if let Some(l) = a.max_len {
        g.max_len = l;
    }
    if a.all_trials {
        g.trials = TrialSet::All;
    }
    g.validate()?;
    let g = g.clone();
    let ds = Dataset::load(&a.data)?;
    let (model, extra) = load_model(&a.model)?;
    check_grid(&model, &ds.layout)?;
    let trials = selected_trials(&ds, split_of(&extra).as_ref(), g.trials)?;
    let n = if g.mode == Mode::Greedy { 1 } else { g.n };
    let mut records = Vec::with_capacity(trials.len() * n);
    for &i in &trials {
        let t = &ds.trials[i];
        let input = ds.trial_input::<f32>(t, model.config().patch_size)?;
        let enc = model.encode_trial(&input)?;
        records.extend(generate_many(&model, &enc, &t.trial_id, g.mode, g.seed, n, g.max_len)?);
    }
    write_atomic_str(&a.out, &write_records(&records))?;
    println!("{} scanpaths for {} trials", records.len(), trials.len());
    ctx.file_manifest(&a.out)
}

fn baseline(ctx: &mut Ctx, a: BaselineArgs) -> Result<()> {
    let kind: BaselineKind = a.kind.parse()?;
    let ds = Dataset::load(&a.data)?;
    let split = match &a.model {
        Some(p) => split_of(&load_model(p)?.1),
        None => None,
    };
    // Mean length comes from the training trials when a split is known.
    let train_idx: Vec<usize> = match &split {
        Some(s) => s.train.clone(),
        None => (0..ds.trials.len()).collect(),
    };
    let train_ds = Dataset {
        trials: train_idx.iter().filter_map(|&i| ds.trials.get(i).cloned()).collect(),
        ..ds.clone()
    };
    let b = &mut ctx.cfg.baseline;
    b.kind = kind;
    if train_ds.mean_length() > 1.0 {
        b.mean_length = train_ds.mean_length();
    }
    b.validate()?;
    let b = b.clone();
    let n = a.n.unwrap_or(ctx.cfg.generate.n);
    let trials = selected_trials(&ds, split.as_ref(), ctx.cfg.generate.trials)?;
    let mut records = Vec::new();
    for &i in &trials {
        let t = &ds.trials[i];
        match kind {
            BaselineKind::Random => {
                records.extend((0..n as u64).map(|k| random_scanpath(&ds.layout, &b, &t.trial_id, k)))
            }
            BaselineKind::Center => {
                records.extend((0..n as u64).map(|k| center_scanpath(&ds.layout, &b, &t.trial_id, k)))
            }
            BaselineKind::Wta => {
                let (_, objects) = ds.patches(t)?;
                let desc = pixel_descriptors(&objects, 8);
                records.push(wta_scanpath(&ds.layout, &desc, &b, &t.trial_id)?);
            }
        }
    }
    write_atomic_str(&a.out, &write_records(&records))?;
    println!("{} {kind} scanpaths (mean length {:.2})", records.len(), b.mean_length);
    ctx.file_manifest(&a.out)
}

fn read_records(path: &Path) -> Result<Vec<ScanpathRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_records(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_layout(path: &Path) -> Result<GridLayout> {
    let file = if path.is_dir() {
        path.join("layout.json")
    } else {
        path.to_path_buf()
    };
    let layout: GridLayout = read_json(&file).with_context(|| format!("reading {}", file.display()))?;
    layout.validate()?;
    Ok(layout)
}

fn score(layout: &GridLayout, reference: &BTreeMap<&str, &Trial>, records: &[ScanpathRecord]) -> Result<MetricReport> {
    let mut by_trial: BTreeMap<&str, Vec<Vec<usize>>> = BTreeMap::new();
    for r in records {
        by_trial
            .entry(r.trial_id.as_str())
            .or_default()
            .push(r.object_ids.clone());
    }
    let mut trials = Vec::with_capacity(by_trial.len());
    for (id, model) in by_trial {
        let t = reference
            .get(id)
            .ok_or_else(|| UsageError(format!("scanpaths name trial `{id}`, which the reference lacks")))?;
        trials.push(TrialScanpaths {
            trial_id: id.to_string(),
            target_id: t.target_id,
            model,
            reference: t.scanpaths.iter().map(|s| s.objects.clone()).collect(),
        });
    }
    Ok(aggregate(layout, &trials))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

fn eval(ctx: &mut Ctx, a: EvalArgs) -> Result<()> {
    let (trials_file, base_dir) = if a.reference.is_dir() {
        (a.reference.join("trials.json"), a.reference.clone())
    } else {
        let dir = a.reference.parent().map(Path::to_path_buf).unwrap_or_default();
        (a.reference.clone(), dir)
    };
    let layout = read_layout(a.layout.as_deref().unwrap_or(&base_dir))?;
    let trials: Vec<Trial> = read_json(&trials_file).with_context(|| format!("reading {}", trials_file.display()))?;
    for t in &trials {
        t.validate(&layout)?;
    }
    let reference: BTreeMap<&str, &Trial> = trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();

    let mut csv = String::from(
        "name,trials,ss,fed,mm_vector,mm_direction,mm_length,mm_position,mm_average,\
         search,revisit,refix,accuracy,avg_length,overall\n",
    );
    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    for path in &a.pred {
        let report = score(&layout, &reference, &read_records(path)?)?;
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, report));
    }
    if let Some((_, first)) = rows.first() {
        let human = first.reference;
        rows.push((
            "human".into(),
            MetricReport {
                trials: first.trials,
                ss: f64::NAN,
                fed: f64::NAN,
                multimatch: None,
                overall: Some(0.0),
                model: human,
                reference: human,
            },
        ));
    }
    println!(
        "{:<14} {:>7} {:>7} {:>7} {:>8} {:>8} {:>7} {:>9} {:>7} {:>8}",
        "", "SS", "FED", "MM", "search%", "revisit%", "refix%", "accuracy", "length", "overall"
    );
    for (name, r) in &rows {
        let mm = r.multimatch;
        let s = r.model;
        csv.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.trials,
            num(r.ss),
            num(r.fed),
            opt(mm.map(|m| m.vector)),
            opt(mm.map(|m| m.direction)),
            opt(mm.map(|m| m.length)),
            opt(mm.map(|m| m.position)),
            opt(mm.map(|m| m.average())),
            s.search_pct,
            s.revisit_pct,
            s.refix_pct,
            s.accuracy,
            s.avg_length,
            opt(r.overall),
        ));
        println!(
            "{:<14} {:>7} {:>7} {:>7} {:>8.1} {:>8.1} {:>7.1} {:>9.3} {:>7.2} {:>8}",
            name,
            num(r.ss),
            num(r.fed),
            opt(mm.map(|m| m.average())),
            100.0 * s.search_pct,
            100.0 * s.revisit_pct,
            100.0 * s.refix_pct,
            s.accuracy,
            s.avg_length,
            opt(r.overall),
        );
    }
    write_atomic_str(&a.out, &csv)?;
    ctx.file_manifest(&a.out)
}

fn num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.4}")
    }
}

fn heatmap_cmd(ctx: &mut Ctx, a: HeatmapArgs) -> Result<()> {
    let layout = read_layout(&a.layout)?;
    let records = read_records(&a.pred)?;
    let chosen: Vec<&ScanpathRecord> = records
        .iter()
        .filter(|r| a.trial.as_deref().map_or(true, |t| r.trial_id == t))
        .collect();
    if chosen.is_empty() {
        return Err(UsageError(format!("no scanpaths for trial `{}`", a.trial.unwrap_or_default())).into());
    }
    let heat = heatmap(chosen.iter().map(|r| r.object_ids.as_slice()), &layout)?;
    let with_ext = |ext: &str| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    let csv_path = with_ext(".csv");
    write_atomic_str(&csv_path, &heatmap_csv(&heat, &layout))?;
    write_atomic(&with_ext(".pgm"), &heatmap_pgm(&heat, &layout))?;
    println!("heatmap over {} scanpaths", chosen.len());
    ctx.file_manifest(&csv_path)
}

fn parse_ids(s: &str, key: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| UsageError(format!("{key}: `{p}` is not an object id")).into())
        })
        .collect()
}

fn probe(ctx: &mut Ctx, a: ProbeArgs) -> Result<()> {
    let ds = Dataset::load(&a.data)?;
    let (model, extra) = load_model(&a.model)?;
    check_grid(&model, &ds.layout)?;
    let m = ds.layout.m();
    let seed = ctx.cfg.generate.seed;

    // (trial index, subject, history)
    let mut jobs: Vec<(usize, String, Vec<usize>)> = Vec::new();
    match (&a.trial, &a.history) {
        (Some(id), Some(h)) => {
            let i = ds
                .trials
                .iter()
                .position(|t| &t.trial_id == id)
                .ok_or_else(|| UsageError(format!("--trial: no trial `{id}`")))?;
            jobs.push((i, "given".into(), parse_ids(h, "--history")?));
        }
        (None, None) => {
            let set = selected_trials(&ds, split_of(&extra).as_ref(), TrialSet::Test)?;
            for i in set {
                for s in &ds.trials[i].scanpaths {
                    if s.objects.len() > a.swap_step + 1 {
                        jobs.push((i, s.subject.clone(), s.objects.clone()));
                    }
                }
            }
        }
        _ => return Err(UsageError("--trial and --history go together".into()).into()),
    }
    if jobs.is_empty() {
        return Err(UsageError(format!(
            "no held-out scanpath is longer than {} fixations",
            a.swap_step + 1
        ))
        .into());
    }
    let mut csv = String::from("trial_id,subject,swap_step,replacement,step,object,before,after,delta\n");
    let mut by_offset: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (k, (i, subject, history)) in jobs.iter().enumerate() {
        let t = &ds.trials[*i];
        let steps = match &a.probe_steps {
            Some(s) => parse_ids(s, "--probe-steps")?,
            None => (a.swap_step + 1..=(a.swap_step + 4).min(history.len())).collect(),
        };
        let original = history[a.swap_step.min(history.len() - 1)];
        let replacement = match a.replacement {
            Some(r) if ds.layout.contains_id(r) => r,
            Some(r) => return Err(UsageError(format!("--replacement {r} is not on the grid")).into()),
            None => {
                // Uniform over the other objects.
                let draw = (stream_seed(seed, "probe", k as u64) % (m as u64 - 1).max(1)) as usize + 1;
                if draw >= original && m > 1 {
                    draw + 1
                } else {
                    draw
                }
            }
        };
        let input = ds.trial_input::<f32>(t, model.config().patch_size)?;
        let enc = model.encode_trial(&input)?;
        for d in history_swap_probe(&model, &enc, history, a.swap_step, replacement, &steps)? {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
                t.trial_id, subject, a.swap_step, replacement, d.step, d.object, d.before, d.after, d.delta
            ));
            let e = by_offset.entry(d.step - a.swap_step).or_default();
            e.0 += d.delta;
            e.1 += 1;
        }
    }
    for (offset, (sum, n)) in &by_offset {
        println!(
            "{offset} steps after the swap: mean relative change {:+.4} over {n} probes",
            sum / *n as f64
        );
    }
    write_atomic_str(&a.out, &csv)?;
    ctx.file_manifest(&a.out)
}
