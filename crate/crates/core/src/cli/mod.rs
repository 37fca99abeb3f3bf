//! Command-line front end: `gen`, `train`, `eval`, `sweep` and `plot`.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 1 for
//! any other failure.

mod config;
mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{self, corrupt_dataset, gen_synthetic, Corruption, Dataset, GenConfig};
use crate::error::Error;
use crate::metrics::{self, default_grid, report, MetricsReport};
use crate::trainer::{evaluate, Checkpoint, ExperimentConfig, Trainer, LOG_HEADER};

pub use config::RunConfig;
pub use plot::{render_svg, Panel};

#[derive(Parser, Debug)]
#[command(
    name = "earlywarn",
    version,
    about = "Accident anticipation: data generation, training and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model and write checkpoints plus a per-epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Noise, ablation or reward sweeps.
    Sweep(SweepArgs),
    /// Probability timelines of two checkpoints side by side, as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// dad-like, ccd-like or full-scale.
    #[arg(long, default_value = "dad-like", conflicts_with = "config")]
    pub preset: String,
    /// TOML run config; its [gen] section replaces the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_pos: Option<usize>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Flags overriding the training section of the config.
#[derive(Args, Debug, Default, Clone)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// History window; 0 gives the frame-level baseline.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub no_object_attention: bool,
    #[arg(long)]
    pub no_time_weight: bool,
    #[arg(long)]
    pub no_image_diffusion: bool,
    #[arg(long)]
    pub no_object_diffusion: bool,
    #[arg(long)]
    pub no_anticipation_loss: bool,
    #[arg(long)]
    pub no_actor_loss: bool,
    #[arg(long)]
    pub no_critic_loss: bool,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.window {
            t.window = v;
        }
        if let Some(v) = self.alpha {
            cfg.loss.alpha = v;
        }
        if let Some(v) = self.beta {
            cfg.loss.beta = v;
        }
        let a = &mut t.ablation;
        a.object_attention &= !self.no_object_attention;
        a.time_weight &= !self.no_time_weight;
        a.image_diffusion &= !self.no_image_diffusion;
        a.object_diffusion &= !self.no_object_diffusion;
        a.anticipation_loss &= !self.no_anticipation_loss;
        a.actor_loss &= !self.no_actor_loss;
        a.critic_loss &= !self.no_critic_loss;
    }
}

#[derive(Args, Debug)]
pub struct OutputArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Leave the creation time out of the manifest.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from a checkpoint; only --epochs may be overridden.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Val,
    Train,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    pub split: Split,
    /// gaussian:<sigma> or impulse:<fraction>[:<magnitude>]
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Noise,
    Ablation,
    Reward,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: SweepKind,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to corrupt-evaluate (noise sweep only).
    #[arg(long, required_if_eq("kind", "noise"))]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    pub split: Split,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Long-horizon checkpoint (left panel).
    #[arg(long)]
    pub long: PathBuf,
    /// Frame-level checkpoint (right panel).
    #[arg(long)]
    pub short: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated dataset indices; defaults to the first validation
    /// positive and negative of the long-horizon checkpoint.
    #[arg(long, value_delimiter = ',')]
    pub videos: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn experiment(config: Option<&Path>, overrides: &TrainOverrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = load_config(config)?.experiment();
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Collects artifacts written to an output directory and records them in
/// `manifest.json`.
struct OutDir {
    root: PathBuf,
    command: &'static str,
    timestamp: bool,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    artifacts: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix_secs: Option<u64>,
}

impl OutDir {
    fn create(args: &OutputArgs, command: &'static str) -> anyhow::Result<Self> {
        fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
        Ok(Self {
            root: args.out_dir.clone(),
            command,
            timestamp: !args.no_timestamp,
            artifacts: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.root.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, text + "\n")
    }

    fn write_csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().context("flushing csv")?;
        self.write(name, bytes)
    }

    fn finish(mut self) -> anyhow::Result<()> {
        self.artifacts.sort();
        let manifest = Manifest {
            command: self.command,
            artifacts: &self.artifacts,
            created_unix_secs: self.timestamp.then(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            }),
        };
        let path = self.root.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    }
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_config(Some(p))?.gen,
        None => GenConfig::preset(&a.preset)?,
    };
    if let Some(n) = a.n_pos {
        cfg.n_pos = n;
    }
    if let Some(n) = a.n_neg {
        cfg.n_neg = n;
    }
    let data = gen_synthetic(&cfg, a.seed)?;
    dataset::save(&data, &a.out)?;
    eprintln!("wrote {} videos to {}", data.len(), a.out.display());
    Ok(())
}

fn write_log(out: &mut OutDir, log: &[crate::trainer::LogRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if log.is_empty() {
        w.write_record(LOG_HEADER)?;
    }
    for row in log {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().context("flushing csv")?;
    out.write("train_log.csv", bytes)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let data = dataset::load(&a.data)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            if let Some(e) = a.overrides.epochs {
                ckpt.config.train.epochs = e;
            }
            Trainer::resume(&data, ckpt)?
        }
        None => Trainer::new(&data, experiment(a.config.as_deref(), &a.overrides)?)?,
    };
    let mut out = OutDir::create(&a.output, "train")?;
    if a.resume.is_none() {
        let path = out.path("checkpoint_initial.json");
        trainer.checkpoint().save(path)?;
    }
    let start = trainer.epoch();
    while !trainer.is_done() {
        let row = trainer.run_epoch()?;
        if !a.quiet {
            eprintln!(
                "epoch {:>3}  loss {:.5}  lr {:.2e}  val AP {:.4}  val mTTA {:.3}s",
                row.epoch, row.l_total, row.lr, row.val_ap, row.val_mtta
            );
        }
    }
    if trainer.epoch() > start {
        let path = out.path("checkpoint_final.json");
        trainer.checkpoint().save(path)?;
        if let Some(best) = trainer.best_checkpoint() {
            let path = out.path("checkpoint_best.json");
            best.save(path)?;
        }
    }
    write_log(&mut out, trainer.log())?;
    out.finish()
}

fn select_split(data: &Dataset, ckpt: &Checkpoint, split: Split) -> anyhow::Result<Dataset> {
    let indices = match split {
        Split::All => return Ok(data.clone()),
        Split::Val => &ckpt.val_indices,
        Split::Train => &ckpt.train_indices,
    };
    if let Some(&i) = indices.iter().find(|&&i| i >= data.len()) {
        bail!(Error::Domain(format!(
            "checkpoint split refers to video {i} but the dataset has {} videos",
            data.len()
        )));
    }
    Ok(data.subset(indices))
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    split: &'a str,
    noise: &'a str,
    ap: f64,
    mtta: f64,
    n_positive: usize,
    n_negative: usize,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Val => "val",
        Split::Train => "train",
        Split::All => "all",
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let data = dataset::load(&a.data)?;
    let mut subset = select_split(&data, &ckpt, a.split)?;
    let noise = a.noise.as_deref().map(Corruption::parse).transpose()?;
    if let Some(c) = noise {
        subset = corrupt_dataset(&subset, c, a.noise_seed)?;
    }
    let pipeline = ckpt.config.pipeline()?;
    let records = evaluate(&ckpt.params, &subset, &pipeline, ckpt.config.train.eval_seed)?;
    let rep: MetricsReport = report(&records, &default_grid())?;
    println!("AP {:.6}  mTTA {:.6}s", rep.ap, rep.mtta);

    let mut out = OutDir::create(&a.output, "eval")?;
    out.write_json("metrics.json", &rep)?;
    out.write_csv(
        "metrics.csv",
        &[MetricsRow {
            split: split_name(a.split),
            noise: a.noise.as_deref().unwrap_or("none"),
            ap: rep.ap,
            mtta: rep.mtta,
            n_positive: rep.n_positive,
            n_negative: rep.n_negative,
        }],
    )?;
    out.finish()
}

#[derive(Serialize)]
struct AblationSummaryRow<'a> {
    variant: &'a str,
    ap: f64,
    mtta: f64,
}

#[derive(Serialize)]
struct AblationNoiseRow<'a> {
    variant: &'a str,
    level: &'a str,
    ap: f64,
    mtta: f64,
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<()> {
    let data = dataset::load(&a.data)?;
    let mut out = OutDir::create(&a.output, "sweep")?;
    match a.kind {
        SweepKind::Noise => {
            let path = a
                .checkpoint
                .as_ref()
                .context("--checkpoint is required for a noise sweep")?;
            let ckpt = Checkpoint::load(path)?;
            let subset = select_split(&data, &ckpt, a.split)?;
            let table = metrics::sweep_noise(
                &ckpt.params,
                &subset,
                &ckpt.config.pipeline()?,
                ckpt.config.train.eval_seed,
                a.noise_seed,
            )?;
            out.write_csv("noise_gaussian.csv", &table.gaussian)?;
            out.write_csv("noise_impulse.csv", &table.impulse)?;
            out.write_json("sweep.json", &table)?;
        }
        SweepKind::Ablation => {
            let cfg = experiment(a.config.as_deref(), &a.overrides)?;
            let table = metrics::sweep_ablation(&data, &cfg, a.noise_seed)?;
            let summary: Vec<_> = table
                .rows
                .iter()
                .map(|r| AblationSummaryRow {
                    variant: &r.variant,
                    ap: r.ap,
                    mtta: r.mtta,
                })
                .collect();
            let noise: Vec<_> = table
                .rows
                .iter()
                .flat_map(|r| {
                    r.gaussian.iter().map(move |g| AblationNoiseRow {
                        variant: &r.variant,
                        level: &g.level,
                        ap: g.ap,
                        mtta: g.mtta,
                    })
                })
                .collect();
            out.write_csv("ablation.csv", &summary)?;
            out.write_csv("ablation_gaussian.csv", &noise)?;
            out.write_json("sweep.json", &table)?;
        }
        SweepKind::Reward => {
            let cfg = experiment(a.config.as_deref(), &a.overrides)?;
            let table = metrics::sweep_reward(&data, &cfg, &metrics::reward_settings())?;
            out.write_csv("reward.csv", &table.rows)?;
            out.write_json("sweep.json", &table)?;
        }
    }
    out.finish()
}

fn cmd_plot(a: PlotArgs) -> anyhow::Result<()> {
    let long = Checkpoint::load(&a.long)?;
    let short = Checkpoint::load(&a.short)?;
    let data = dataset::load(&a.data)?;
    let videos = if a.videos.is_empty() {
        let pick = |positive: bool| {
            long.val_indices
                .iter()
                .copied()
                .find(|&i| i < data.len() && data.samples[i].label.positive == positive)
        };
        [pick(true), pick(false)].into_iter().flatten().collect()
    } else {
        a.videos.clone()
    };
    if let Some(&i) = videos.iter().find(|&&i| i >= data.len()) {
        bail!(Error::Config(format!(
            "video index {i} out of range ({} videos)",
            data.len()
        )));
    }
    let mut out = OutDir::create(&a.output, "plot")?;
    for &i in &videos {
        let sample = &data.samples[i];
        let one = data.subset(&[i]);
        let mut panels = Vec::new();
        for (name, ckpt) in [("long-horizon", &long), ("frame-level", &short)] {
            let records = evaluate(
                &ckpt.params,
                &one,
                &ckpt.config.pipeline()?,
                ckpt.config.train.eval_seed,
            )?;
            panels.push(Panel {
                title: format!("{name} (window {}) video {i}", ckpt.config.train.window),
                probs: records[0].probs.clone(),
                fps: sample.sequence.fps,
                accident_frame: sample.label.positive.then_some(sample.label.accident_frame),
                threshold: a.threshold,
            });
        }
        out.write(&format!("video_{i:04}.svg"), render_svg(&panels))?;
    }
    out.finish()
}
