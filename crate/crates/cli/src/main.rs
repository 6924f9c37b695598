//! `xmreid`: generate synthetic data, train, evaluate and run the
//! diagnostic sweeps.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 configuration,
//! 4 numeric abort.

mod config;
mod manifest;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{Profile, RunConfig};
use manifest::Recorder;
use xmreid::data::{self, Dataset};
use xmreid::eval::{self, CorrelationMeasure, EvalResult};
use xmreid::losses::Ablation;
use xmreid::model::{Model, Modality, Tap};
use xmreid::tensor::gradcheck;
use xmreid::trainer::{Granularity, Trainer};
use xmreid::{Error, Result};

#[derive(Parser)]
#[command(name = "xmreid", version, about = "Cross-modal person re-identification experiments")]
struct Cli {
    /// Root directory for relative output paths.
    #[arg(long, env = "XMREID_OUT", default_value = ".", global = true)]
    out_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality dataset.
    Gen(GenArgs),
    /// Train a model on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: rank-1/10, mAP, domain probe, layer correlation.
    Eval(EvalArgs),
    /// Train the baseline once per part count and tabulate rank-1.
    SweepPartitions(SweepArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Fit a modality classifier on one feature tap of a checkpoint.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML config with [data], [model], [train], [eval] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Size profile for images and network (overrides the file).
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (relative to the output root).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    ids: Option<usize>,
    #[arg(long)]
    train_ids: Option<usize>,
    /// Images per identity per modality.
    #[arg(long)]
    per_id: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<Ablation>,
    /// Epochs per side; the run alternates for twice as many.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    #[arg(long)]
    lr_backbone: Option<f64>,
    #[arg(long)]
    lr_heads: Option<f64>,
    #[arg(long)]
    lr_discriminator: Option<f64>,
    /// One learning rate for every parameter group.
    #[arg(long)]
    unified_lr: Option<f64>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of stripes per image.
    #[arg(long)]
    parts: Option<usize>,
    /// Save a resumable checkpoint every this many epochs.
    #[arg(long, default_value_t = 1)]
    checkpoint_every: usize,
    /// Continue the run checkpointed in `--out`.
    #[arg(long)]
    resume: bool,
    /// Stop after this many epochs have completed (resume later).
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file, or a run directory containing `model.xmr`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    correlation: Option<MeasureArg>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated part counts.
    #[arg(long, value_delimiter = ',', required = true)]
    parts: Vec<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "gradcheck")]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Feature tap: 1-4 for an intermediate stage, `descriptor` for the final one.
    #[arg(long, default_value = "descriptor", value_parser = parse_tap)]
    tap: Tap,
    #[arg(long, default_value = "probe")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    PerEpoch,
    PerBatch,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Pearson,
    Cosine,
}

fn parse_ablation(s: &str) -> std::result::Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_tap(s: &str) -> std::result::Result<Tap, String> {
    match s {
        "descriptor" | "f" => Ok(Tap::Descriptor),
        _ => match s.parse::<usize>() {
            Ok(j @ 1..=4) => Ok(Tap::Level(j)),
            _ => Err(format!("expected 1, 2, 3, 4 or descriptor, got {s:?}")),
        },
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Dimension(_) => 2,
        Error::Config(_) | Error::Format(_) => 3,
        Error::Numeric(_) => 4,
        Error::Protocol(_) | Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xmreid: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.out_root;
    match cli.command {
        Command::Gen(a) => gen(&root, a),
        Command::Train(a) => train(&root, a),
        Command::Eval(a) => evaluate(&root, a),
        Command::SweepPartitions(a) => sweep(&root, a),
        Command::Gradcheck(a) => grad(&root, a),
        Command::Probe(a) => probe(&root, a),
    }
}

fn base_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(c.config.as_deref(), c.profile)?;
    if let Some(s) = c.seed {
        cfg.data.seed = s;
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn apply_train_opts(cfg: &mut RunConfig, o: &TrainOpts) {
    let t = &mut cfg.train;
    if let Some(a) = o.ablation {
        t.ablation = a;
    }
    if let Some(e) = o.epochs {
        t.epochs_per_side = e;
    }
    if let Some(g) = o.granularity {
        t.granularity = match g {
            GranularityArg::PerEpoch => Granularity::PerEpoch,
            GranularityArg::PerBatch => Granularity::PerBatch,
        };
    }
    if let Some(v) = o.lr_backbone {
        t.lr_backbone = v;
    }
    if let Some(v) = o.lr_heads {
        t.lr_heads = v;
    }
    if let Some(v) = o.lr_discriminator {
        t.lr_discriminator = v;
    }
    if o.unified_lr.is_some() {
        t.unified_lr = o.unified_lr;
    }
    if o.batches_per_epoch.is_some() {
        t.batches_per_epoch = o.batches_per_epoch;
    }
    if let Some(v) = o.eval_every {
        t.eval_every = v;
    }
}

/// Input size and class count come from the dataset, whatever the file says.
fn fit_model_to_data(cfg: &mut RunConfig, ds: &Dataset) {
    cfg.model.input_height = ds.config.height;
    cfg.model.input_width = ds.config.width;
    cfg.model.num_identities = ds.config.num_train_classes();
}

fn load_data(dir: &Path) -> Result<Dataset> {
    if !dir.join("manifest.csv").exists() {
        return Err(Error::Config(format!("{} is not a dataset directory (no manifest.csv)", dir.display())));
    }
    data::import(dir)
}

fn load_model(path: &Path) -> Result<Model> {
    let file = if path.is_dir() { path.join("model.xmr") } else { path.to_path_buf() };
    Model::load(&file)
}

fn gen(root: &Path, a: GenArgs) -> Result<()> {
    let mut cfg = base_config(&a.common)?;
    let d = &mut cfg.data;
    if let Some(v) = a.ids {
        d.num_identities = v;
        if a.train_ids.is_none() {
            d.train_identities = d.train_identities.min(v * 3 / 4).max(1);
        }
    }
    if let Some(v) = a.train_ids {
        d.train_identities = v;
    }
    if let Some(v) = a.per_id {
        d.per_id_per_modality = v;
    }
    if let Some(v) = a.height {
        d.height = v;
    }
    if let Some(v) = a.width {
        d.width = v;
    }
    d.validate()?;
    let dir = root.join(&a.out);
    let mut rec = Recorder::new(&dir, "gen", cfg.data.seed, &cfg.data)?;
    let ds = data::generate(&cfg.data)?;
    data::export(&ds, &dir)?;
    rec.output("config.json")?;
    rec.output("manifest.csv")?;
    rec.output("images")?;
    println!(
        "wrote {} images ({} train, {} query, {} gallery, {} pool) to {}",
        ds.len(),
        ds.train.len(),
        ds.query.len(),
        ds.gallery.len(),
        ds.pool.len(),
        dir.display()
    );
    rec.finish()
}

fn write_eval(rec: &mut Recorder, ev: &eval::Evaluation) -> Result<()> {
    fs::write(rec.output("eval.json")?, serde_json::to_string_pretty(&ev.result)?)?;
    let f = fs::File::create(rec.output("ranks.csv")?)?;
    eval::write_rank_csv(&ev.rank_lists, &ev.gallery_ids, f)?;
    Ok(())
}

fn print_eval(r: &EvalResult) {
    println!("rank-1   {:.4}", r.rank1);
    println!("rank-10  {:.4}", r.rank10);
    println!("mAP      {:.4}", r.map);
    println!("probe    {:.4}", r.probe_accuracy);
    for (j, c) in r.layer_correlations.iter().enumerate() {
        println!("corr g{}  {:.4}", j + 1, c);
    }
    println!("probes {}  gallery {}  pairs {}", r.num_probes, r.gallery_size, r.correlation_pairs);
}

fn train(root: &Path, a: TrainArgs) -> Result<()> {
    let dir = root.join(&a.out);
    let ds = load_data(&a.data)?;
    if a.checkpoint_every == 0 {
        return Err(Error::Usage("--checkpoint-every must be positive".into()));
    }
    let (mut trainer, cfg) = if a.resume {
        let t = Trainer::resume(&dir, &ds)?;
        let cfg: RunConfig = serde_json::from_value(
            serde_json::from_str::<serde_json::Value>(&fs::read_to_string(dir.join("config.json"))?)?,
        )?;
        eprintln!("resuming at epoch {}", t.state().epoch);
        (t, cfg)
    } else {
        let mut cfg = base_config(&a.common)?;
        apply_train_opts(&mut cfg, &a.opts);
        if let Some(n) = a.parts {
            cfg.model.n_parts = n;
        }
        fit_model_to_data(&mut cfg, &ds);
        cfg.model.validate()?;
        cfg.train.validate()?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
        let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
        let mut t = Trainer::new(model, &ds, cfg.train.clone())?;
        t.set_eval_config(cfg.eval.clone());
        (t, cfg)
    };
    trainer.set_eval_config(cfg.eval.clone());
    let mut rec = Recorder::new(&dir, "train", cfg.train.seed, &cfg)?;
    rec.output("config.json")?;
    let total = cfg.train.total_epochs();
    let stop = a.stop_after.unwrap_or(total).min(total);
    while trainer.state().epoch < stop {
        let outcome = trainer.run_epoch();
        trainer.write_log(fs::File::create(rec.output("log.csv")?)?)?;
        outcome?;
        let e = trainer.state().epoch;
        if let Some(row) = trainer.log().last().filter(|r| r.epoch + 1 == e) {
            eprintln!("epoch {e}/{total} {} total {:.4}", row.phase.name(), row.total);
        }
        if e % a.checkpoint_every == 0 || e == stop {
            trainer.save_checkpoint(&dir)?;
            rec.output("model.xmr")?;
            rec.output("state.xmr")?;
        }
    }
    trainer.write_log(fs::File::create(rec.output("log.csv")?)?)?;
    if trainer.is_finished() {
        let ev = eval::evaluate(trainer.model(), &ds, &cfg.eval)?;
        write_eval(&mut rec, &ev)?;
        print_eval(&ev.result);
    } else {
        println!("stopped after epoch {}; continue with --resume", trainer.state().epoch);
    }
    rec.finish()
}

fn eval_config(file: Option<&Path>) -> Result<xmreid::eval::EvalConfig> {
    Ok(RunConfig::load(file, None)?.eval)
}

fn evaluate(root: &Path, a: EvalArgs) -> Result<()> {
    let mut cfg = eval_config(a.config.as_deref())?;
    if let Some(m) = a.correlation {
        cfg.correlation = match m {
            MeasureArg::Pearson => CorrelationMeasure::Pearson,
            MeasureArg::Cosine => CorrelationMeasure::Cosine,
        };
    }
    let model = load_model(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let dir = root.join(&a.out);
    let mut rec = Recorder::new(&dir, "eval", cfg.probe.seed, &cfg)?;
    let ev = eval::evaluate(&model, &ds, &cfg)?;
    write_eval(&mut rec, &ev)?;
    print_eval(&ev.result);
    rec.finish()
}

fn sweep(root: &Path, a: SweepArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let mut cfg = base_config(&a.common)?;
    apply_train_opts(&mut cfg, &a.opts);
    cfg.train.ablation = Ablation::Baseline;
    fit_model_to_data(&mut cfg, &ds);
    let valid = cfg.model.valid_part_counts();
    if a.parts.is_empty() {
        return Err(Error::Usage("--parts needs at least one value".into()));
    }
    if let Some(bad) = a.parts.iter().find(|n| !valid.contains(n)) {
        return Err(Error::Config(format!(
            "{bad} parts do not tile the final feature map of height {}; valid counts are {valid:?}",
            cfg.model.final_height()
        )));
    }
    let dir = root.join(&a.out);
    let mut rec = Recorder::new(&dir, "sweep-partitions", cfg.train.seed, &cfg)?;
    let mut rows = Vec::new();
    for &n in &a.parts {
        let mut c = cfg.clone();
        c.model.n_parts = n;
        let (model, log) = xmreid::trainer::train(c.model.clone(), &ds, c.train.clone())?;
        let sub = format!("n{n}");
        model.save(&rec.output(&format!("{sub}/model.xmr"))?)?;
        let loss = c.train.loss();
        xmreid::trainer::write_log(&log, &loss, n, fs::File::create(rec.output(&format!("{sub}/log.csv"))?)?)?;
        let r = eval::evaluate(&model, &ds, &c.eval)?.result;
        eprintln!("n={n} rank-1 {:.4} mAP {:.4}", r.rank1, r.map);
        rows.push((n, r.rank1, r.map));
    }
    let mut w = csv::Writer::from_path(rec.output("sweep.csv")?)?;
    w.write_record(["n", "rank1", "mAP"])?;
    for (n, r1, map) in &rows {
        w.write_record([n.to_string(), r1.to_string(), map.to_string()])?;
    }
    w.flush()?;
    let mut out = io::stdout().lock();
    writeln!(out, "{:>4}  {:>8}  {:>8}", "n", "rank-1", "mAP")?;
    for (n, r1, map) in &rows {
        writeln!(out, "{n:>4}  {r1:>8.4}  {map:>8.4}")?;
    }
    rec.finish()
}

fn grad(root: &Path, a: GradcheckArgs) -> Result<()> {
    let dir = root.join(&a.out);
    let mut rec = Recorder::new(&dir, "gradcheck", a.seed, serde_json::json!({ "cases": a.cases }))?;
    let report = gradcheck::run_suite(a.cases, a.seed)?;
    let mut w = csv::Writer::from_path(rec.output("gradcheck.csv")?)?;
    w.write_record(["op", "cases", "worst_relative_error", "passed"])?;
    for op in &report.ops {
        println!(
            "{:<22} {:>5} cases  worst {:.3e}  {}",
            op.op,
            op.cases,
            op.worst_relative_error,
            if op.passed { "ok" } else { "FAIL" }
        );
        w.write_record([
            op.op.clone(),
            op.cases.to_string(),
            op.worst_relative_error.to_string(),
            op.passed.to_string(),
        ])?;
    }
    w.flush()?;
    println!("{} ops in {:.1}s, tolerance {:e}", report.ops.len(), report.seconds, report.tolerance);
    rec.finish()?;
    let failed: Vec<&str> = report.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {failed:?}")))
    }
}

fn probe(root: &Path, a: ProbeArgs) -> Result<()> {
    let cfg = eval_config(a.config.as_deref())?;
    let model = load_model(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let c = model.config();
    if (c.input_height, c.input_width) != (ds.config.height, ds.config.width) {
        return Err(Error::Config(format!(
            "model expects {}x{} images, dataset has {}x{}",
            c.input_height, c.input_width, ds.config.height, ds.config.width
        )));
    }
    let samples: Vec<&data::Sample> = ds.query.iter().chain(&ds.gallery).chain(&ds.pool).collect();
    let images: Vec<&xmreid::tensor::Tensor> = samples.iter().map(|s| &s.image).collect();
    let mods: Vec<Modality> = samples.iter().map(|s| s.modality).collect();
    let records = model.infer(&images, &mods, cfg.chunk)?;
    let feats: Vec<Vec<f64>> = records
        .iter()
        .map(|r| match a.tap {
            Tap::Level(j) => r.taps[j - 1].clone(),
            Tap::Descriptor => r.descriptor(),
        })
        .collect();
    let acc = eval::domain_probe(&feats, &mods, &cfg.probe)?;
    let dir = root.join(&a.out);
    let mut rec = Recorder::new(&dir, "probe", cfg.probe.seed, &cfg.probe)?;
    let tap = xmreid::losses::tap_column(a.tap).replacen("adv_", "", 1);
    fs::write(
        rec.output("probe.json")?,
        serde_json::to_string_pretty(&serde_json::json!({ "tap": tap, "accuracy": acc, "samples": feats.len() }))?,
    )?;
    println!("tap {tap}: modality probe accuracy {acc:.4} on {} samples", feats.len());
    rec.finish()
}
