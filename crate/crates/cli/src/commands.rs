//! Subcommand arguments and their implementations. Every command writes its
//! human-readable report to the supplied writer; data goes to files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bifm::checkpoint::{self, Model};
use bifm::flow::{train, LossHistory, Reporter, StepRecord};
use bifm::io::{fmt_f64, read_points, write_points, write_trajectory};
use bifm::metrics::{covariance, energy_distance, median, moment_error, MetricReport};
use bifm::model::VelocityNet;
use bifm::sampler::{self, SampleBatch, Schedule};
use clap::{Args, Parser, Subcommand};

use crate::ablate;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::svg::{self, Layer};
use crate::verify;

pub const CHECKPOINT_FILE: &str = "checkpoint.bifm";
pub const LOSS_FILE: &str = "losses.csv";

#[derive(Debug, Parser)]
#[command(
    name = "bifm",
    version,
    about = "Bidirectional average-velocity flow matching on toy data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a velocity net; writes a checkpoint, losses.csv and the resolved config.
    Train(TrainArgs),
    /// Generate points from noise.
    Sample(SampleArgs),
    /// Map data points back to noise.
    Invert(InvertArgs),
    /// Invert under one condition and regenerate under another.
    Edit(EditArgs),
    /// Invert and regenerate under the same condition; reports the error.
    Reconstruct(ReconstructArgs),
    /// Train and evaluate every configuration of a sweep.
    Ablate(AblateArgs),
    /// Run the invariant suite and print one line per property.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Print losses to stderr every this many steps; 0 is silent.
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct Outputs {
    /// Points CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Scatter plot of the input and output points.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Every intermediate state as CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Label for every point of a conditional net.
    #[arg(long)]
    pub cond: Option<usize>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run config whose dataset the samples are scored against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Where to write the metrics row; printed when absent.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Points CSV; a `label` column supplies per-point conditions.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Overrides the input labels.
    #[arg(long)]
    pub cond: Option<usize>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Defaults to the input labels.
    #[arg(long)]
    pub source_cond: Option<usize>,
    #[arg(long)]
    pub target_cond: Option<usize>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long)]
    pub cond: Option<usize>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub outputs: Outputs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Run config with an `[ablate]` table (defaults apply when absent).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Also check that this checkpoint loads and re-encodes to the same bytes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// Dispatches one command. `seed_override` replaces the config seed of
/// `train` and `ablate`.
pub fn run(cli: Cli, seed_override: Option<u64>, report: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, seed_override, report).map(|_| ()),
        Command::Sample(a) => cmd_sample(&a, report),
        Command::Invert(a) => cmd_invert(&a, report),
        Command::Edit(a) => cmd_edit(&a, report),
        Command::Reconstruct(a) => cmd_reconstruct(&a, report),
        Command::Ablate(a) => cmd_ablate(&a, seed_override, report),
        Command::Verify(a) => cmd_verify(&a, report),
    }
}

/// Prints every `every`-th step to stderr.
pub struct Progress {
    pub every: usize,
}

impl Reporter for Progress {
    fn report(&mut self, r: &StepRecord) {
        if self.every > 0 && r.step.is_multiple_of(self.every) {
            eprintln!(
                "step {:>6}  total {:.5e}  mf {:.5e}  bifm {:.5e}  w {:.3}",
                r.step, r.loss_total, r.loss_mf, r.loss_bifm, r.w
            );
        }
    }
}

/// Initialises from the config seed and trains.
pub fn train_run(cfg: &RunConfig, reporter: &mut dyn Reporter) -> Result<(VelocityNet, LossHistory)> {
    let mut net = VelocityNet::init(cfg.model.clone(), cfg.train.seed)?;
    let history = train(&mut net, &cfg.dataset, &cfg.train, reporter)?;
    Ok((net, history))
}

pub fn cmd_train(args: &TrainArgs, seed_override: Option<u64>, report: &mut dyn Write) -> Result<PathBuf> {
    let cfg = RunConfig::load(&args.config)?.resolve(seed_override)?;
    // `--out-dir` is where a run lands, not part of it; the snapshot keeps
    // the config's own value so runs in different places compare equal.
    let dir = args.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    cfg.write_resolved(&dir)?;
    let (net, history) = train_run(&cfg, &mut Progress { every: args.log_every })?;
    let ck = dir.join(CHECKPOINT_FILE);
    checkpoint::save(&Model::Net(net), &ck).map_err(|e| CliError::core_at(&ck, e))?;
    let losses = dir.join(LOSS_FILE);
    let mut w = create(&losses)?;
    history
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&losses, e))?;
    let last = history.records.last();
    say(
        report,
        &format!(
            "trained {} steps (seed {}); final mf loss {}; wrote {}",
            cfg.train.steps,
            cfg.train.seed,
            last.map_or("n/a".into(), |r| fmt_f64(r.loss_mf)),
            dir.display()
        ),
    )?;
    Ok(dir)
}

pub fn cmd_sample(args: &SampleArgs, report: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let cond = conditions(&model, args.n, args.cond, None, "--cond")?;
    let noise = SampleBatch::noise(args.n, model_dim(&model), args.seed);
    let mut out = sampler::generate(&model, &noise, schedule(args.steps, &args.outputs), cond.as_deref())?;
    out.labels = cond;
    write_outputs(&args.outputs, "noise", &noise, "samples", &out)?;
    if let Some(path) = &args.reference {
        let reference = RunConfig::load(path)?.resolve(None)?;
        let metrics = sample_metrics(&out, &reference, args.seed, args.steps)?;
        emit_metrics(&metrics, args.metrics.as_deref(), report)?;
    }
    say(
        report,
        &format!(
            "sampled {} points in {} steps -> {}",
            args.n,
            args.steps,
            args.outputs.out.display()
        ),
    )
}

/// Scores `batch` against a reference draw of the same size from the
/// config's dataset (seeded `seed + 1`).
pub fn sample_metrics(batch: &SampleBatch, cfg: &RunConfig, seed: u64, steps: usize) -> Result<MetricReport> {
    if batch.len() < 2 {
        return Err(CliError::Usage("metrics need at least 2 samples".into()));
    }
    let reference = cfg.dataset.sample(batch.len(), seed.wrapping_add(1))?;
    let (mean, cov) = covariance(&reference.points)?;
    let (mean_err, cov_err) = moment_error(&batch.points, &mean, &cov)?;
    let report = MetricReport {
        steps: Some(steps),
        energy_distance: Some(energy_distance(&batch.points, &reference.points)?),
        mean_err: Some(mean_err),
        cov_err: Some(cov_err),
        ..MetricReport::default()
    };
    report.validate()?;
    Ok(report)
}

pub fn cmd_invert(args: &InvertArgs, report: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let data = load_points(&args.input)?;
    let cond = conditions(&model, data.len(), args.cond, data.labels.as_ref(), "--cond")?;
    let mut out = sampler::invert(&model, &data, schedule(args.steps, &args.outputs), cond.as_deref())?;
    out.labels = data.labels.clone();
    write_outputs(&args.outputs, "data", &data, "latents", &out)?;
    say(
        report,
        &format!(
            "inverted {} points in {} steps -> {}",
            data.len(),
            args.steps,
            args.outputs.out.display()
        ),
    )
}

pub fn cmd_edit(args: &EditArgs, report: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let data = load_points(&args.input)?;
    let source = conditions(
        &model,
        data.len(),
        args.source_cond,
        data.labels.as_ref(),
        "--source-cond",
    )?;
    let target = conditions(&model, data.len(), args.target_cond, None, "--target-cond")?;
    let mut out = sampler::edit(
        &model,
        &data,
        source.as_deref(),
        target.as_deref(),
        schedule(args.steps, &args.outputs),
    )?;
    out.labels = target.or_else(|| data.labels.clone());
    write_outputs(&args.outputs, "source", &data, "edited", &out)?;
    say(
        report,
        &format!(
            "edited {} points in {} steps -> {}",
            data.len(),
            args.steps,
            args.outputs.out.display()
        ),
    )
}

pub fn cmd_reconstruct(args: &ReconstructArgs, report: &mut dyn Write) -> Result<()> {
    let model = load_model(&args.checkpoint)?;
    let data = load_points(&args.input)?;
    let cond = conditions(&model, data.len(), args.cond, data.labels.as_ref(), "--cond")?;
    let rec = sampler::reconstruct(&model, &data, schedule(args.steps, &args.outputs), cond.as_deref())?;
    let mut out = rec.batch;
    out.labels = data.labels.clone();
    write_outputs(&args.outputs, "data", &data, "reconstructed", &out)?;
    let metrics = MetricReport {
        steps: Some(args.steps),
        recon_mse: (!data.is_empty()).then(|| rec.squared_errors.iter().sum::<f64>() / data.len() as f64),
        recon_median_se: (!data.is_empty()).then(|| median(&rec.squared_errors)),
        ..MetricReport::default()
    };
    metrics.validate()?;
    emit_metrics(&metrics, args.metrics.as_deref(), report)
}

pub fn cmd_ablate(args: &AblateArgs, seed_override: Option<u64>, report: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.ablate.get_or_insert_with(Default::default);
    let cfg = cfg.resolve(seed_override)?;
    let dir = args.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    cfg.write_resolved(&dir)?;
    let rows = ablate::sweep(&cfg);
    let path = dir.join(ablate::ABLATION_FILE);
    let mut w = create(&path)?;
    ablate::write_csv(&mut w, &rows).map_err(|e| CliError::core_at(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    say(
        report,
        &format!("{} configurations, {failed} failed -> {}", rows.len(), path.display()),
    )
}

pub fn cmd_verify(args: &VerifyArgs, report: &mut dyn Write) -> Result<()> {
    let checks = verify::run_all(args.checkpoint.as_deref());
    for c in &checks {
        say(report, &c.line())?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Verification {
            failed,
            total: checks.len(),
        });
    }
    Ok(())
}

fn say(report: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(report, "{line}").map_err(|e| CliError::io(Path::new("<report>"), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<Model> {
    checkpoint::load(path).map_err(|e| CliError::core_at(path, e))
}

fn load_points(path: &Path) -> Result<SampleBatch> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_points(std::io::BufReader::new(file)).map_err(|e| CliError::core_at(path, e))
}

fn model_dim(model: &Model) -> usize {
    bifm::model::AverageVelocity::data_dim(model)
}

fn schedule(steps: usize, outputs: &Outputs) -> Schedule {
    let s = Schedule::new(steps);
    if outputs.trajectory.is_some() {
        s.recorded()
    } else {
        s
    }
}

/// Per-point labels for a conditional model: the flag if given, otherwise
/// the input labels. Unconditional models take none.
fn conditions(
    model: &Model,
    n: usize,
    flag: Option<usize>,
    labels: Option<&Vec<usize>>,
    name: &str,
) -> Result<Option<Vec<usize>>> {
    if model.num_labels() == 0 {
        if flag.is_some() {
            return Err(CliError::Usage(format!(
                "{name} given but the checkpoint is unconditional"
            )));
        }
        return Ok(None);
    }
    match (flag, labels) {
        (Some(k), _) => Ok(Some(vec![k; n])),
        (None, Some(l)) => Ok(Some(l.clone())),
        (None, None) => Err(CliError::Usage(format!(
            "conditional checkpoint needs {name} or a label column"
        ))),
    }
}

fn write_outputs(
    outputs: &Outputs,
    in_name: &str,
    input: &SampleBatch,
    out_name: &str,
    out: &SampleBatch,
) -> Result<()> {
    let path = &outputs.out;
    let mut w = create(path)?;
    write_points(&mut w, out).map_err(|e| CliError::core_at(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    if let Some(path) = &outputs.svg {
        let layers = [
            Layer {
                name: in_name,
                points: &input.points,
            },
            Layer {
                name: out_name,
                points: &out.points,
            },
        ];
        let text = svg::render(&format!("{in_name} -> {out_name}"), &layers);
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    }
    if let (Some(path), Some(tr)) = (&outputs.trajectory, &out.trajectory) {
        let mut w = create(path)?;
        write_trajectory(&mut w, tr).map_err(|e| CliError::core_at(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn emit_metrics(metrics: &MetricReport, path: Option<&Path>, report: &mut dyn Write) -> Result<()> {
    match path {
        Some(path) => {
            let mut w = create(path)?;
            metrics.write_csv(&mut w).map_err(|e| CliError::core_at(path, e))?;
            w.flush().map_err(|e| CliError::io(path, e))
        }
        None => metrics
            .write_csv(report)
            .map_err(|e| CliError::core_at(Path::new("<report>"), e)),
    }
}
