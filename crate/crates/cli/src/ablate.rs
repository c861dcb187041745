//! Sweeps over the four design axes: time input, time sampler, consistency
//! weighting and loss norm. Each configuration trains from scratch and is
//! scored on one-step samples and on round trips at one and four steps.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bifm::checkpoint::{decode, encode, Model};
use bifm::flow::{LossHistory, Silent, TimeSampler, Weighting};
use bifm::io::fmt_f64;
use bifm::metrics::{energy_distance, median};
use bifm::model::TimeParamMode;
use bifm::sampler::{generate, reconstruct, SampleBatch, Schedule};

use crate::commands::train_run;
use crate::config::{AblateConfig, RunConfig, SweepMode};

pub const ABLATION_FILE: &str = "ablation.csv";

pub const ABLATION_CSV_HEADER: [&str; 14] = [
    "run",
    "role",
    "time_param_mode",
    "time_sampler",
    "weighting",
    "loss_p",
    "status",
    "loss_total",
    "loss_mf",
    "loss_bifm",
    "energy_distance_1step",
    "recon_median_se_1",
    "recon_median_se_4",
    "error",
];

/// Trailing window the reported losses are averaged over.
const LOSS_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Absent for a zero-step run.
    pub loss_total: Option<f64>,
    pub loss_mf: Option<f64>,
    pub loss_bifm: Option<f64>,
    pub energy_distance_1step: f64,
    pub recon_median_se_1: f64,
    pub recon_median_se_4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub run: usize,
    /// The unmodified base configuration.
    pub is_base: bool,
    pub time_param_mode: TimeParamMode,
    pub time_sampler: TimeSampler,
    pub weighting: Weighting,
    pub loss_p: f64,
    pub outcome: Result<RunMetrics, String>,
}

/// `base` followed by the values of `list` that differ from it.
fn axis<T: PartialEq + Copy>(base: T, list: &[T]) -> Vec<T> {
    let mut out = vec![base];
    for &v in list {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Every configuration of the sweep, base first.
pub fn plan(base: &RunConfig) -> Vec<RunConfig> {
    let axes = base.ablate.clone().unwrap_or_default();
    let modes = axis(base.model.time_param_mode, &axes.time_param_modes);
    let samplers = axis(base.train.time_sampler, &axes.time_samplers);
    let weightings = axis(base.train.weighting, &axes.weightings);
    let ps = axis(base.train.loss_p, &axes.loss_ps);
    let with = |m: TimeParamMode, s: TimeSampler, w: Weighting, p: f64| {
        let mut c = base.clone();
        c.model.time_param_mode = m;
        c.train.time_sampler = s;
        c.train.weighting = w;
        c.train.loss_p = p;
        c
    };
    let (m0, s0, w0, p0) = (modes[0], samplers[0], weightings[0], ps[0]);
    let mut out = Vec::new();
    match axes.mode {
        SweepMode::OneAtATime => {
            out.push(with(m0, s0, w0, p0));
            out.extend(modes[1..].iter().map(|&m| with(m, s0, w0, p0)));
            out.extend(samplers[1..].iter().map(|&s| with(m0, s, w0, p0)));
            out.extend(weightings[1..].iter().map(|&w| with(m0, s0, w, p0)));
            out.extend(ps[1..].iter().map(|&p| with(m0, s0, w0, p)));
        }
        SweepMode::Grid => {
            for &m in &modes {
                for &s in &samplers {
                    for &w in &weightings {
                        for &p in &ps {
                            out.push(with(m, s, w, p));
                        }
                    }
                }
            }
        }
    }
    out
}

fn tail_mean(history: &LossHistory, f: impl Fn(&bifm::flow::StepRecord) -> f64) -> Option<f64> {
    let n = history.records.len();
    if n == 0 {
        return None;
    }
    let tail = &history.records[n.saturating_sub(LOSS_WINDOW)..];
    Some(tail.iter().map(f).sum::<f64>() / tail.len() as f64)
}

/// Trains one configuration and scores it.
pub fn run_one(cfg: &RunConfig, eval: &AblateConfig) -> crate::error::Result<RunMetrics> {
    let (net, history) = train_run(cfg, &mut Silent)?;
    // Score the net as a checkpoint would store it, so a row matches the
    // train-then-sample pipeline exactly.
    let net = decode(&encode(&Model::Net(net))?)?;
    let dim = cfg.dataset.dim();
    let conditional = cfg.dataset.num_labels() > 0;
    let labels = |b: &SampleBatch| if conditional { b.labels.clone() } else { None };

    let reference = cfg.dataset.sample(eval.eval_n, eval.eval_seed.wrapping_add(1))?;
    let noise = SampleBatch::noise(eval.eval_n, dim, eval.eval_seed);
    let one_step = generate(&net, &noise, Schedule::new(1), labels(&reference).as_deref())?;
    let energy = energy_distance(&one_step.points, &reference.points)?;

    let data = cfg.dataset.sample(eval.recon_n, eval.eval_seed.wrapping_add(2))?;
    let cond = labels(&data);
    let recon =
        |steps| reconstruct(&net, &data, Schedule::new(steps), cond.as_deref()).map(|r| median(&r.squared_errors));
    let metrics = RunMetrics {
        loss_total: tail_mean(&history, |r| r.loss_total),
        loss_mf: tail_mean(&history, |r| r.loss_mf),
        loss_bifm: tail_mean(&history, |r| r.loss_bifm),
        energy_distance_1step: energy,
        recon_median_se_1: recon(1)?,
        recon_median_se_4: recon(4)?,
    };
    let finite = [
        metrics.energy_distance_1step,
        metrics.recon_median_se_1,
        metrics.recon_median_se_4,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(bifm::Error::NonFinite("ablation metrics".into()).into());
    }
    Ok(metrics)
}

/// Runs the whole sweep. Configurations are independent and may run on
/// several threads; rows come back in plan order regardless.
pub fn sweep(base: &RunConfig) -> Vec<AblationRow> {
    let eval = base.ablate.clone().unwrap_or_default();
    let configs = plan(base);
    let jobs = match eval.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        j => j,
    }
    .min(configs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunMetrics, String>>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                let outcome = run_one(cfg, &eval).map_err(|e| e.to_string());
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let results = results.into_inner().expect("results lock");
    configs
        .iter()
        .zip(results)
        .enumerate()
        .map(|(i, (cfg, outcome))| AblationRow {
            run: i,
            is_base: i == 0,
            time_param_mode: cfg.model.time_param_mode,
            time_sampler: cfg.train.time_sampler,
            weighting: cfg.train.weighting,
            loss_p: cfg.train.loss_p,
            outcome: outcome.unwrap_or_else(|| Err("not run".into())),
        })
        .collect()
}

pub fn write_csv<W: Write>(out: W, rows: &[AblationRow]) -> bifm::Result<()> {
    let csv_err = |e: csv::Error| bifm::Error::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_CSV_HEADER).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in rows {
        let mut rec = vec![
            r.run.to_string(),
            if r.is_base { "base" } else { "variant" }.to_string(),
            r.time_param_mode.to_string(),
            r.time_sampler.label(),
            r.weighting.label().to_string(),
            fmt_f64(r.loss_p),
        ];
        match &r.outcome {
            Ok(m) => rec.extend([
                "ok".to_string(),
                opt(m.loss_total),
                opt(m.loss_mf),
                opt(m.loss_bifm),
                fmt_f64(m.energy_distance_1step),
                fmt_f64(m.recon_median_se_1),
                fmt_f64(m.recon_median_se_4),
                String::new(),
            ]),
            Err(e) => {
                rec.push("failed".into());
                rec.extend(std::iter::repeat_n(String::new(), 6));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use bifm::data::Dataset;

    fn base() -> RunConfig {
        let mut cfg = RunConfig::new(Dataset::gaussian(vec![0.0], 1.0));
        cfg.ablate = Some(AblateConfig::default());
        cfg
    }

    #[test]
    fn one_at_a_time_has_one_row_per_alternative() {
        let rows = plan(&base());
        assert_eq!(rows.len(), 1 + 3 + 3 + 3 + 3);
        assert_eq!(rows[0].train, base().train);
        assert_eq!(rows[0].model, base().model);
    }

    #[test]
    fn grid_is_the_full_product() {
        let mut cfg = base();
        let a = cfg.ablate.as_mut().unwrap();
        a.mode = SweepMode::Grid;
        a.weightings.truncate(2);
        // The base warm-up schedule is added back to the two listed.
        assert_eq!(plan(&cfg).len(), 4 * 4 * 3 * 4);
    }

    #[test]
    fn base_values_are_not_duplicated() {
        assert_eq!(axis(1.0, &[0.0, 1.0, 2.0, 0.0]), vec![1.0, 0.0, 2.0]);
    }

    #[test]
    fn failed_rows_keep_the_column_count() {
        let row = AblationRow {
            run: 3,
            is_base: false,
            time_param_mode: TimeParamMode::DeltaOnly,
            time_sampler: TimeSampler::Uniform,
            weighting: Weighting::Sin { w_max: 1.0 },
            loss_p: 2.0,
            outcome: Err("non-finite loss, at step 4".into()),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[row]).unwrap();
        let mut r = csv::Reader::from_reader(buf.as_slice());
        let rec = r.records().next().unwrap().unwrap();
        assert_eq!(rec.len(), ABLATION_CSV_HEADER.len());
        assert_eq!(&rec[6], "failed");
        assert_eq!(&rec[13], "non-finite loss, at step 4");
    }
}
