//! Training-time mathematics: the interpolation path, the MeanFlow target,
//! the regression and bidirectional consistency losses, time-pair sampling,
//! the consistency weighting schedule, and the training loop.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, Gradients, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AverageVelocity, TimePair, VelocityNet};

/// Distribution of the raw time draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSampler {
    Uniform,
    /// `sigmoid(mu + sigma·n)` with `n ~ N(0, 1)`.
    LogitNormal {
        mu: f64,
        sigma: f64,
    },
}

impl TimeSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TimeSampler::Uniform => rng.random::<f64>(),
            TimeSampler::LogitNormal { mu, sigma } => {
                let n: f64 = StandardNormal.sample(rng);
                1.0 / (1.0 + (-(mu + sigma * n)).exp())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            TimeSampler::Uniform => "uniform(0,1)".into(),
            TimeSampler::LogitNormal { mu, sigma } => format!("lognorm({mu},{sigma})"),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Weight `w` on the consistency term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Weighting {
    /// `w_max · |t' - t|`
    Linear {
        #[serde(default = "one")]
        w_max: f64,
    },
    /// `w_max · sin(π |t' - t|)`
    Sin {
        #[serde(default = "one")]
        w_max: f64,
    },
    /// `w_max · log(1 + |t' - t|) / log 2`
    Log {
        #[serde(default = "one")]
        w_max: f64,
    },
    /// `w_max · min(1, step / ramp_steps)`; the ramp defaults to a tenth of
    /// the run.
    Warmup {
        #[serde(default)]
        ramp_steps: Option<usize>,
        #[serde(default = "one")]
        w_max: f64,
    },
}

impl Weighting {
    pub fn label(&self) -> &'static str {
        match self {
            Weighting::Linear { .. } => "linear",
            Weighting::Sin { .. } => "sin",
            Weighting::Log { .. } => "log",
            Weighting::Warmup { .. } => "warm up",
        }
    }

    fn w_max(&self) -> f64 {
        match *self {
            Weighting::Linear { w_max }
            | Weighting::Sin { w_max }
            | Weighting::Log { w_max }
            | Weighting::Warmup { w_max, .. } => w_max,
        }
    }
}

/// Which point the backward prediction of the consistency term is taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifmEndpoint {
    /// `x_t + |t' - t| · sg(u(x_t, t, t'))`: the model's own forward step.
    Propagated,
    /// The straight-line interpolant at `t'`.
    Interpolated,
}

/// Every knob of the objective and the optimiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub time_sampler: TimeSampler,
    pub weighting: Weighting,
    pub loss_p: f64,
    pub huber_c: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub bifm_enabled: bool,
    pub equal_time_fraction: f64,
    pub bifm_endpoint: BifmEndpoint,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            time_sampler: TimeSampler::LogitNormal { mu: -0.4, sigma: 1.0 },
            weighting: Weighting::Warmup {
                ramp_steps: None,
                w_max: 1.0,
            },
            loss_p: 1.0,
            huber_c: 0.1,
            batch_size: 128,
            steps: 5000,
            learning_rate: 1e-3,
            seed: 0,
            bifm_enabled: true,
            equal_time_fraction: 0.25,
            bifm_endpoint: BifmEndpoint::Propagated,
        }
    }
}

impl TrainConfig {
    /// Pure instantaneous-velocity regression (squared L2, `t' = t` always).
    pub fn instantaneous(self) -> Self {
        Self {
            loss_p: 0.0,
            bifm_enabled: false,
            equal_time_fraction: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let TimeSampler::LogitNormal { mu, sigma } = self.time_sampler {
            if !(sigma > 0.0) || !mu.is_finite() || !sigma.is_finite() {
                return bad(format!(
                    "logit-normal sampler needs finite mu and sigma > 0, got ({mu}, {sigma})"
                ));
            }
        }
        if !(self.loss_p >= 0.0) || !self.loss_p.is_finite() {
            return bad(format!("loss_p must be >= 0, got {}", self.loss_p));
        }
        if !(self.huber_c > 0.0) {
            return bad(format!("huber_c must be > 0, got {}", self.huber_c));
        }
        if !(0.0..=1.0).contains(&self.equal_time_fraction) {
            return bad(format!(
                "equal_time_fraction must lie in [0, 1], got {}",
                self.equal_time_fraction
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !self.weighting.w_max().is_finite() || self.weighting.w_max() < 0.0 {
            return bad("w_max must be finite and >= 0".into());
        }
        Ok(())
    }
}

/// `(1 - t)·x0 + t·x1`.
pub fn interpolate(x0: &Array2<f64>, x1: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    if x0.dim() != x1.dim() {
        return Err(Error::dim(format!("{:?} vs {:?}", x0.dim(), x1.dim())));
    }
    Ok(x0 * (1.0 - t) + x1 * t)
}

fn interpolate_rows(x0: &Array2<f64>, x1: &Array2<f64>, t: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(x0.raw_dim());
    for (i, &ti) in t.iter().enumerate() {
        let mut row = out.row_mut(i);
        Zip::from(&mut row)
            .and(x0.row(i))
            .and(x1.row(i))
            .for_each(|o, &a, &b| *o = a * (1.0 - ti) + b * ti);
    }
    out
}

/// `x1 - x0`.
pub fn conditional_velocity(x0: &Array2<f64>, x1: &Array2<f64>) -> Result<Array2<f64>> {
    if x0.dim() != x1.dim() {
        return Err(Error::dim(format!("{:?} vs {:?}", x0.dim(), x1.dim())));
    }
    Ok(x1 - x0)
}

/// One minibatch on the interpolation path, with per-row times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub t: Vec<f64>,
    pub t_prime: Vec<f64>,
    pub x_t: Array2<f64>,
    /// The state paired with `x_t` at `t'`; the interpolant unless replaced.
    pub x_tp: Array2<f64>,
    /// Instantaneous velocity at `(x_t, t)`; the conditional velocity unless
    /// replaced by a teacher field.
    pub v: Array2<f64>,
    pub cond: Option<Vec<usize>>,
}

impl PathSample {
    pub fn new(
        x0: Array2<f64>,
        x1: Array2<f64>,
        t: Vec<f64>,
        t_prime: Vec<f64>,
        cond: Option<Vec<usize>>,
    ) -> Result<Self> {
        let rows = x0.nrows();
        if x0.dim() != x1.dim() || t.len() != rows || t_prime.len() != rows {
            return Err(Error::dim("x0, x1, t and t' must agree on the batch size"));
        }
        if cond.as_ref().is_some_and(|c| c.len() != rows) {
            return Err(Error::dim("one label per row required"));
        }
        for (&a, &b) in t.iter().zip(&t_prime) {
            TimePair::new(a, b)?;
        }
        let x_t = interpolate_rows(&x0, &x1, &t);
        let x_tp = interpolate_rows(&x0, &x1, &t_prime);
        let v = &x1 - &x0;
        Ok(Self {
            x0,
            x1,
            t,
            t_prime,
            x_t,
            x_tp,
            v,
            cond,
        })
    }

    /// Replaces the velocity used by the target (e.g. a marginal field).
    pub fn with_velocity(mut self, v: Array2<f64>) -> Result<Self> {
        if v.dim() != self.x_t.dim() {
            return Err(Error::dim("velocity shape differs from x_t"));
        }
        self.v = v;
        Ok(self)
    }

    /// Replaces the state paired with `x_t` at `t'`.
    pub fn with_endpoint(mut self, x_tp: Array2<f64>) -> Result<Self> {
        if x_tp.dim() != self.x_t.dim() {
            return Err(Error::dim("endpoint shape differs from x_t"));
        }
        self.x_tp = x_tp;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn cond(&self) -> Option<&[usize]> {
        self.cond.as_deref()
    }

    fn deltas(&self) -> Vec<f64> {
        self.t.iter().zip(&self.t_prime).map(|(a, b)| b - a).collect()
    }
}

/// Returns `(u(x_t, t, t'), u_tgt)`.
fn prediction_and_target<M: AverageVelocity + ?Sized>(
    net: &M,
    sample: &PathSample,
) -> Result<(Option<Array2<f64>>, Array2<f64>)> {
    let deltas = sample.deltas();
    if deltas.iter().all(|&d| d == 0.0) {
        return Ok((None, sample.v.clone()));
    }
    let n = sample.len();
    let (u, du) = net.jvp(
        &sample.x_t,
        &sample.t,
        &sample.t_prime,
        &sample.v,
        &vec![1.0; n],
        &vec![0.0; n],
        sample.cond(),
    )?;
    let mut target = sample.v.clone();
    for (i, mut row) in target.axis_iter_mut(Axis(0)).enumerate() {
        let d = deltas[i];
        let sign = if d < 0.0 { -1.0 } else { 1.0 };
        Zip::from(&mut row)
            .and(du.row(i))
            .for_each(|o, &g| *o = sign * *o + d * g);
    }
    Ok((Some(u), target))
}

/// `u_tgt = s·v + (t' - t)·d/dt u(x_t, t, t')`, the total derivative taken
/// along `(v, 1, 0)` and `s` the direction of travel. Treated as a constant
/// by every loss.
pub fn meanflow_target<M: AverageVelocity + ?Sized>(net: &M, sample: &PathSample) -> Result<Array2<f64>> {
    Ok(prediction_and_target(net, sample)?.1)
}

/// Per-row adaptive loss `‖r‖² / sg((‖r‖² + c)^p)`.
pub fn p_loss_rows(residual: &Array2<f64>, loss_p: f64, huber_c: f64) -> Vec<f64> {
    residual
        .rows()
        .into_iter()
        .map(|r| {
            let sq: f64 = r.iter().map(|v| v * v).sum();
            if loss_p == 0.0 {
                sq
            } else {
                sq / (sq + huber_c).powf(loss_p)
            }
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Adaptive-p regression of `u(x_t, t, t')` onto the MeanFlow target.
pub fn mf_loss<M: AverageVelocity + ?Sized>(net: &M, sample: &PathSample, loss_p: f64, huber_c: f64) -> Result<f64> {
    let (pred, target) = prediction_and_target(net, sample)?;
    let pred = match pred {
        Some(p) => p,
        None => net.eval(&sample.x_t, &sample.t, &sample.t_prime, sample.cond())?,
    };
    Ok(mean(&p_loss_rows(&(pred - target), loss_p, huber_c)))
}

/// Adaptive-p distance between `u(x_t, t, t')` and `-u(x_tp, t', t)`,
/// averaged over rows with `t' ≠ t` (zero when there are none).
pub fn bifm_loss<M: AverageVelocity + ?Sized>(net: &M, sample: &PathSample, loss_p: f64, huber_c: f64) -> Result<f64> {
    let fwd = net.eval(&sample.x_t, &sample.t, &sample.t_prime, sample.cond())?;
    let bwd = net.eval(&sample.x_tp, &sample.t_prime, &sample.t, sample.cond())?;
    let rows = p_loss_rows(&(fwd + bwd), loss_p, huber_c);
    Ok(consistency_terms(&vec![0.0; rows.len()], sample, &rows).1)
}

/// `w` for one pair at `step`.
pub fn weight_schedule(cfg: &TrainConfig, step: usize, pair: TimePair) -> f64 {
    let gap = pair.delta().abs();
    match cfg.weighting {
        Weighting::Warmup { ramp_steps, w_max } => {
            let ramp = ramp_steps.unwrap_or((cfg.steps / 10).max(1));
            if ramp == 0 {
                w_max
            } else {
                w_max * (step as f64 / ramp as f64).min(1.0)
            }
        }
        Weighting::Linear { w_max } => w_max * gap,
        Weighting::Sin { w_max } => w_max * (PI * gap).sin(),
        Weighting::Log { w_max } => w_max * (1.0 + gap).ln() / 2f64.ln(),
    }
}

/// Consistency weight per row; rows with `t' = t` get zero because the
/// forward and backward queries coincide there.
fn row_weights(cfg: &TrainConfig, step: usize, sample: &PathSample) -> Vec<f64> {
    sample
        .t
        .iter()
        .zip(&sample.t_prime)
        .map(|(&t, &tp)| {
            if t == tp || !cfg.bifm_enabled {
                0.0
            } else {
                weight_schedule(cfg, step, TimePair { t, t_prime: tp })
            }
        })
        .collect()
}

/// Loss values of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub mf: f64,
    /// Mean consistency loss over rows with `t' ≠ t`.
    pub bifm: f64,
    /// Mean weight over rows with `t' ≠ t`.
    pub w: f64,
}

fn consistency_terms(weights: &[f64], sample: &PathSample, rows: &[f64]) -> (f64, f64, f64) {
    let active: Vec<usize> = (0..sample.len())
        .filter(|&i| sample.t[i] != sample.t_prime[i])
        .collect();
    if active.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = active.len() as f64;
    let weighted = active.iter().map(|&i| weights[i] * rows[i]).sum::<f64>() / n;
    let plain = active.iter().map(|&i| rows[i]).sum::<f64>() / n;
    let w = active.iter().map(|&i| weights[i]).sum::<f64>() / n;
    (weighted, plain, w)
}

/// `L_MF + w·L_BiFM` evaluated without recording gradients.
pub fn combined_loss<M: AverageVelocity + ?Sized>(
    net: &M,
    sample: &PathSample,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let (pred, target) = match prediction_and_target(net, sample) {
        Err(Error::NonFinite(_)) => {
            return Err(Error::Diverged {
                step,
                total: f64::NAN,
                mf: f64::NAN,
                bifm: f64::NAN,
            });
        }
        r => r?,
    };
    let fwd = match pred {
        Some(p) => p,
        None => net.eval(&sample.x_t, &sample.t, &sample.t_prime, sample.cond())?,
    };
    let mf = mean(&p_loss_rows(&(&fwd - &target), cfg.loss_p, cfg.huber_c));
    if !cfg.bifm_enabled {
        return Ok(LossBreakdown {
            total: mf,
            mf,
            bifm: 0.0,
            w: 0.0,
        });
    }
    let bwd = net.eval(&sample.x_tp, &sample.t_prime, &sample.t, sample.cond())?;
    let rows = p_loss_rows(&(&fwd + &bwd), cfg.loss_p, cfg.huber_c);
    let weights = row_weights(cfg, step, sample);
    let (weighted, bifm, w) = consistency_terms(&weights, sample, &rows);
    Ok(LossBreakdown {
        total: mf + weighted,
        mf,
        bifm,
        w,
    })
}

/// Draws a forward pair `t ≤ t'` and returns it with its mirror.
pub fn sample_time_pair<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> (TimePair, TimePair) {
    let a = cfg.time_sampler.draw(rng);
    let b = cfg.time_sampler.draw(rng);
    let degenerate = rng.random::<f64>() < cfg.equal_time_fraction;
    let fwd = if degenerate {
        TimePair { t: a, t_prime: a }
    } else {
        TimePair {
            t: a.min(b),
            t_prime: a.max(b),
        }
    };
    (fwd, fwd.mirrored())
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss_total: f64,
    pub loss_mf: f64,
    pub loss_bifm: f64,
    pub w: f64,
    pub t_mean: f64,
    pub delta_mean: f64,
}

pub trait Reporter {
    fn report(&mut self, record: &StepRecord);
}

/// Discards every record.
pub struct Silent;

impl Reporter for Silent {
    fn report(&mut self, _: &StepRecord) {}
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossHistory {
    pub records: Vec<StepRecord>,
}

impl Reporter for LossHistory {
    fn report(&mut self, record: &StepRecord) {
        self.records.push(*record);
    }
}

pub const LOSS_CSV_HEADER: &str = "step,loss_total,loss_mf,loss_bifm,w,t_mean,delta_mean";

impl LossHistory {
    pub fn mf(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss_mf).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{LOSS_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                crate::io::fmt_f64(r.loss_total),
                crate::io::fmt_f64(r.loss_mf),
                crate::io::fmt_f64(r.loss_bifm),
                crate::io::fmt_f64(r.w),
                crate::io::fmt_f64(r.t_mean),
                crate::io::fmt_f64(r.delta_mean),
            )?;
        }
        Ok(())
    }
}

/// Trailing moving average with the given window (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= window {
            acc -= values[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Adam with the usual decay constants and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &[Array2<f64>], lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(&grads.arrays)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Records `mean_i ‖r_i‖² · sg((‖r_i‖² + c)^-p)` per row, shape `(rows, 1)`.
fn record_p_loss_rows(tape: &mut Tape<'_>, residual: Var, loss_p: f64, huber_c: f64) -> Var {
    let sq = tape.row_sq_norm(residual);
    if loss_p == 0.0 {
        return sq;
    }
    let shifted = tape.add_scalar(sq, huber_c);
    let inv = tape.powf(shifted, -loss_p);
    let inv = tape.stop_gradient(inv);
    tape.mul(sq, inv)
}

/// Records the full objective on `tape`; returns `(total, mf, bifm)`.
fn record_objective(
    tape: &mut Tape<'_>,
    net: &VelocityNet,
    sample: &PathSample,
    target: Array2<f64>,
    endpoint: &Array2<f64>,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(Var, Var, Option<Var>)> {
    let cond = sample.cond();
    let fwd = net.record(tape, &sample.x_t, &sample.t, &sample.t_prime, cond)?;
    let target = tape.constant(target);
    let target = tape.stop_gradient(target);
    let residual = tape.sub(fwd, target);
    let mf_rows = record_p_loss_rows(tape, residual, cfg.loss_p, cfg.huber_c);
    let mf = tape.mean(mf_rows);

    let weights = row_weights(cfg, step, sample);
    let active = weights
        .iter()
        .zip(&sample.t)
        .zip(&sample.t_prime)
        .filter(|((_, a), b)| a != b)
        .count();
    if !cfg.bifm_enabled || active == 0 {
        return Ok((mf, mf, None));
    }
    let bwd = net.record(tape, endpoint, &sample.t_prime, &sample.t, cond)?;
    let sum = crate::autodiff::TensorOps::add(tape, &fwd, &bwd);
    let rows = record_p_loss_rows(tape, sum, cfg.loss_p, cfg.huber_c);
    // The mean over all rows is rescaled so both terms average over the rows
    // with t' ≠ t.
    let scale = sample.len() as f64 / active as f64;
    let mask: Vec<f64> = (0..sample.len())
        .map(|i| if sample.t[i] != sample.t_prime[i] { scale } else { 0.0 })
        .collect();
    let w_col: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    let w_col = tape.constant(Array2::from_shape_vec((sample.len(), 1), w_col).expect("column"));
    let mask = tape.constant(Array2::from_shape_vec((sample.len(), 1), mask).expect("column"));
    let weighted = tape.mul(rows, w_col);
    let weighted = tape.mean(weighted);
    let plain = tape.mul(rows, mask);
    let plain = tape.mean(plain);
    let total = crate::autodiff::TensorOps::add(tape, &mf, &weighted);
    Ok((total, mf, Some(plain)))
}

/// Draws one training minibatch on the path.
pub fn draw_path_sample<R: Rng + ?Sized>(
    dataset: &Dataset,
    cfg: &TrainConfig,
    use_labels: bool,
    rng: &mut R,
) -> Result<PathSample> {
    let n = cfg.batch_size;
    let data = dataset.sample_with(n, rng)?;
    let dim = data.points.ncols();
    let x0 = Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(rng));
    let mut t = Vec::with_capacity(n);
    let mut tp = Vec::with_capacity(n);
    for _ in 0..n {
        let (pair, _) = sample_time_pair(cfg, rng);
        t.push(pair.t);
        tp.push(pair.t_prime);
    }
    let cond = if use_labels { data.labels } else { None };
    PathSample::new(x0, data.points, t, tp, cond)
}

/// One optimisation step on `sample`. Returns the loss breakdown.
pub fn train_step(
    net: &mut VelocityNet,
    opt: &mut Adam,
    sample: &PathSample,
    cfg: &TrainConfig,
    step: usize,
) -> Result<LossBreakdown> {
    let (pred, target) = match prediction_and_target(net, sample) {
        Err(Error::NonFinite(_)) => {
            return Err(Error::Diverged {
                step,
                total: f64::NAN,
                mf: f64::NAN,
                bifm: f64::NAN,
            });
        }
        r => r?,
    };
    let endpoint = match (cfg.bifm_endpoint, &pred) {
        (BifmEndpoint::Propagated, Some(u)) => {
            let mut end = sample.x_t.clone();
            for (i, mut row) in end.axis_iter_mut(Axis(0)).enumerate() {
                let gap = (sample.t_prime[i] - sample.t[i]).abs();
                row.scaled_add(gap, &u.row(i));
            }
            end
        }
        _ => sample.x_tp.clone(),
    };
    let weights = row_weights(cfg, step, sample);
    let grads;
    let breakdown;
    {
        let mut tape = Tape::new(net.params());
        let (total, mf, bifm) = record_objective(&mut tape, net, sample, target, &endpoint, cfg, step)?;
        let active: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.t[i] != sample.t_prime[i])
            .collect();
        let w = if active.is_empty() {
            0.0
        } else {
            active.iter().map(|&i| weights[i]).sum::<f64>() / active.len() as f64
        };
        breakdown = LossBreakdown {
            total: tape.scalar(total),
            mf: tape.scalar(mf),
            bifm: bifm.map_or(0.0, |b| tape.scalar(b)),
            w,
        };
        if !breakdown.total.is_finite() {
            return Err(Error::Diverged {
                step,
                total: breakdown.total,
                mf: breakdown.mf,
                bifm: breakdown.bifm,
            });
        }
        grads = grad(&tape, total)?;
    }
    opt.step(net.params_mut(), &grads);
    Ok(breakdown)
}

/// Trains `net` in place for `cfg.steps` steps and returns the history.
pub fn train(
    net: &mut VelocityNet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    reporter: &mut dyn Reporter,
) -> Result<LossHistory> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.dim() != net.data_dim() {
        return Err(Error::Config(format!(
            "dataset is {}-D but the net is {}-D",
            dataset.dim(),
            net.data_dim()
        )));
    }
    let use_labels = net.num_labels() > 0;
    if use_labels && dataset.num_labels() == 0 {
        return Err(Error::Config("conditional net needs a labelled dataset".into()));
    }
    if use_labels && dataset.num_labels() > net.num_labels() {
        return Err(Error::Config(format!(
            "dataset has {} labels but the net only {}",
            dataset.num_labels(),
            net.num_labels()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(net.params(), cfg.learning_rate);
    let mut history = LossHistory::default();
    for step in 0..cfg.steps {
        let sample = draw_path_sample(dataset, cfg, use_labels, &mut rng)?;
        let b = train_step(net, &mut opt, &sample, cfg, step)?;
        let n = sample.len() as f64;
        let record = StepRecord {
            step,
            loss_total: b.total,
            loss_mf: b.mf,
            loss_bifm: b.bifm,
            w: b.w,
            t_mean: sample.t.iter().sum::<f64>() / n,
            delta_mean: sample.deltas().iter().sum::<f64>() / n,
        };
        reporter.report(&record);
        history.records.push(record);
    }
    Ok(history)
}
