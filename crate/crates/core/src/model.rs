//! The average-velocity network `u(x, t, t', cond)`.
//!
//! An MLP trunk over `[x, e]`, where `e` is the sum of sinusoidal+MLP
//! embeddings of the time inputs (selected by [`TimeParamMode`]) plus an
//! optional per-label condition embedding. The second time embedder has a
//! zero final projection at initialisation, so a fresh net ignores the
//! interval until training moves it.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Dual, DualTensor, ForwardOps, Tape, TensorOps, Var};
use crate::error::{Error, Result};

/// Which time quantities are embedded and summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeParamMode {
    /// `embed(t) + embed'(t')`
    TAndTp,
    /// `embed(t) + embed'(t' - t)`
    TAndDelta,
    /// `embed(t' - t)`
    DeltaOnly,
    /// `embed(t) + embed'(t') + table[direction]`
    TTpDirection,
}

impl TimeParamMode {
    pub const ALL: [TimeParamMode; 4] = [
        TimeParamMode::TTpDirection,
        TimeParamMode::DeltaOnly,
        TimeParamMode::TAndTp,
        TimeParamMode::TAndDelta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TimeParamMode::TAndTp => "T_AND_TP",
            TimeParamMode::TAndDelta => "T_AND_DELTA",
            TimeParamMode::DeltaOnly => "DELTA_ONLY",
            TimeParamMode::TTpDirection => "T_TP_DIRECTION",
        }
    }
}

impl std::fmt::Display for TimeParamMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyper-parameters; everything needed to rebuild the
/// parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Zero for an unconditional net.
    pub num_labels: usize,
    pub time_param_mode: TimeParamMode,
    pub embed_dim: usize,
    pub num_frequencies: usize,
    pub min_frequency: f64,
    pub max_frequency: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden_dims: vec![256; 4],
            num_labels: 0,
            time_param_mode: TimeParamMode::TAndDelta,
            embed_dim: 64,
            num_frequencies: 64,
            min_frequency: 1.0,
            max_frequency: 4.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.embed_dim == 0 || self.num_frequencies == 0 {
            return Err(Error::Config(
                "data_dim, embed_dim and num_frequencies must be positive".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let freq_ok = self.min_frequency.is_finite()
            && self.max_frequency.is_finite()
            && self.min_frequency > 0.0
            && self.max_frequency >= self.min_frequency;
        if !freq_ok {
            return Err(Error::Config(
                "frequency ladder needs 0 < min_frequency <= max_frequency".into(),
            ));
        }
        Ok(())
    }

    /// Geometric ladder of `num_frequencies` angular frequencies.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.num_frequencies;
        if n == 1 {
            return vec![self.min_frequency];
        }
        let ratio = (self.max_frequency / self.min_frequency).ln();
        (0..n)
            .map(|k| self.min_frequency * (ratio * k as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

/// An ordered pair of times in `[0, 1]`. `t < t'` is generation, `t > t'`
/// inversion, `t == t'` the instantaneous limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePair {
    pub t: f64,
    pub t_prime: f64,
}

impl TimePair {
    pub fn new(t: f64, t_prime: f64) -> Result<Self> {
        check_time(t)?;
        check_time(t_prime)?;
        Ok(Self { t, t_prime })
    }

    pub fn delta(&self) -> f64 {
        self.t_prime - self.t
    }

    pub fn is_forward(&self) -> bool {
        self.t_prime >= self.t
    }

    pub fn mirrored(&self) -> Self {
        Self {
            t: self.t_prime,
            t_prime: self.t,
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!("time {t} outside [0, 1]")))
    }
}

/// Anything that predicts average velocities and their directional
/// derivatives over a batch with per-row times.
pub trait AverageVelocity {
    fn data_dim(&self) -> usize;

    fn eval(&self, x: &Array2<f64>, t: &[f64], t_prime: &[f64], cond: Option<&[usize]>) -> Result<Array2<f64>>;

    /// Returns `(u, du)` with `du = ∂u/∂x·dx + ∂u/∂t·dt + ∂u/∂t'·dt'`.
    #[allow(clippy::too_many_arguments)]
    fn jvp(
        &self,
        x: &Array2<f64>,
        t: &[f64],
        t_prime: &[f64],
        dx: &Array2<f64>,
        dt: &[f64],
        dt_prime: &[f64],
        cond: Option<&[usize]>,
    ) -> Result<(Array2<f64>, Array2<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EmbedderIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    time: EmbedderIdx,
    interval: EmbedderIdx,
    direction: usize,
    cond: Option<usize>,
    trunk: Vec<(usize, usize)>,
}

/// Parameter shapes and names in checkpoint declaration order.
fn declare(config: &ModelConfig) -> (Vec<(String, (usize, usize))>, Layout) {
    let mut decl: Vec<(String, (usize, usize))> = Vec::new();
    let mut push = |name: String, shape: (usize, usize)| {
        decl.push((name, shape));
        decl.len() - 1
    };
    let feat = 2 * config.num_frequencies;
    let e = config.embed_dim;
    let mut embedder = |prefix: &str| EmbedderIdx {
        w1: push(format!("{prefix}.w1"), (feat, e)),
        b1: push(format!("{prefix}.b1"), (1, e)),
        w2: push(format!("{prefix}.w2"), (e, e)),
        b2: push(format!("{prefix}.b2"), (1, e)),
    };
    let time = embedder("time_embed");
    let interval = embedder("interval_embed");
    let direction = push("direction_table".into(), (2, e));
    let cond = (config.num_labels > 0).then(|| push("cond_embed".into(), (config.num_labels, e)));
    let mut trunk = Vec::new();
    let mut fan_in = config.data_dim + e;
    let widths = config
        .hidden_dims
        .iter()
        .copied()
        .chain(std::iter::once(config.data_dim));
    for (i, out) in widths.enumerate() {
        let w = push(format!("trunk.{i}.w"), (fan_in, out));
        let b = push(format!("trunk.{i}.b"), (1, out));
        trunk.push((w, b));
        fan_in = out;
    }
    (
        decl,
        Layout {
            time,
            interval,
            direction,
            cond,
            trunk,
        },
    )
}

/// Parameters and architecture of the average-velocity MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    config: ModelConfig,
    params: Vec<Array2<f64>>,
    names: Vec<String>,
    layout: Layout,
    frequencies: Vec<f64>,
}

impl VelocityNet {
    /// Seeded initialisation. Linear weights are uniform in `±1/√fan_in`,
    /// biases and the interval embedder's output projection are zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (decl, layout) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zero_init = [layout.interval.w2, layout.interval.b2, layout.direction];
        let mut params = Vec::with_capacity(decl.len());
        for (i, (name, shape)) in decl.iter().enumerate() {
            let is_bias = name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2");
            let arr = if zero_init.contains(&i) || is_bias {
                Array2::zeros(*shape)
            } else if Some(i) == layout.cond {
                Array2::from_shape_fn(*shape, |_| StandardNormal.sample(&mut rng))
            } else {
                let bound = 1.0 / (shape.0 as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::Config(format!("{name}: {e}")))?;
                Array2::from_shape_fn(*shape, |_| dist.sample(&mut rng))
            };
            params.push(arr);
        }
        let names = decl.into_iter().map(|(n, _)| n).collect();
        let frequencies = config.frequencies();
        Ok(Self {
            config,
            params,
            names,
            layout,
            frequencies,
        })
    }

    /// Rebuilds a net from a config and parameter arrays in declaration order.
    pub fn from_params(config: ModelConfig, params: Vec<Array2<f64>>) -> Result<Self> {
        config.validate()?;
        let (decl, layout) = declare(&config);
        if decl.len() != params.len() {
            return Err(Error::dim(format!(
                "expected {} parameter arrays, got {}",
                decl.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in decl.iter().zip(&params) {
            if p.dim() != *shape {
                return Err(Error::dim(format!("{name}: expected {shape:?}, got {:?}", p.dim())));
            }
        }
        let names = decl.into_iter().map(|(n, _)| n).collect();
        let frequencies = config.frequencies();
        Ok(Self {
            config,
            params,
            names,
            layout,
            frequencies,
        })
    }

    /// Expected `(name, shape)` of every parameter for `config`.
    pub fn param_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        declare(config).0
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_labels(&self) -> usize {
        self.config.num_labels
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Index of the interval embedder's final projection weights.
    pub fn interval_projection_index(&self) -> usize {
        self.layout.interval.w2
    }

    fn check_inputs(&self, x: &Array2<f64>, t: &[f64], t_prime: &[f64], cond: Option<&[usize]>) -> Result<()> {
        let (rows, cols) = x.dim();
        if cols != self.config.data_dim {
            return Err(Error::dim(format!(
                "x has {cols} columns, net expects {}",
                self.config.data_dim
            )));
        }
        if t.len() != rows || t_prime.len() != rows {
            return Err(Error::dim(format!(
                "{rows} rows but {} t values and {} t' values",
                t.len(),
                t_prime.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input x".into()));
        }
        for &s in t.iter().chain(t_prime) {
            check_time(s)?;
        }
        if let Some(labels) = cond {
            if labels.len() != rows {
                return Err(Error::dim(format!("{rows} rows but {} labels", labels.len())));
            }
            if let Some(&label) = labels.iter().find(|&&l| l >= self.config.num_labels) {
                return Err(Error::Condition {
                    label,
                    num_labels: self.config.num_labels,
                });
            }
        }
        Ok(())
    }

    /// `[sin(f·s), cos(f·s)]` per row, with the tangent when any `s` carries one.
    fn sinusoid(&self, s: &[Dual]) -> DualTensor {
        let k = self.frequencies.len();
        let mut value = Array2::zeros((s.len(), 2 * k));
        let moving = s.iter().any(|d| d.eps != 0.0);
        let mut tangent = moving.then(|| Array2::zeros((s.len(), 2 * k)));
        for (r, d) in s.iter().enumerate() {
            for (j, &f) in self.frequencies.iter().enumerate() {
                let (sin, cos) = (f * d.re).sin_cos();
                value[[r, j]] = sin;
                value[[r, k + j]] = cos;
                if let Some(tan) = tangent.as_mut() {
                    tan[[r, j]] = f * cos * d.eps;
                    tan[[r, k + j]] = -f * sin * d.eps;
                }
            }
        }
        match tangent {
            Some(tan) => DualTensor::with_tangent(value, tan).expect("matching shapes"),
            None => DualTensor::constant(value),
        }
    }

    fn embedder<O: TensorOps>(&self, ops: &mut O, idx: EmbedderIdx, s: &[Dual]) -> O::Tensor {
        let feat = ops.input(self.sinusoid(s));
        let h = ops.matmul_param(&feat, idx.w1);
        let h = ops.add_bias_param(&h, idx.b1);
        let h = ops.silu(&h);
        let h = ops.matmul_param(&h, idx.w2);
        ops.add_bias_param(&h, idx.b2)
    }

    fn time_embedding<O: TensorOps>(&self, ops: &mut O, t: &[Dual], t_prime: &[Dual]) -> O::Tensor {
        let delta: Vec<Dual> = t.iter().zip(t_prime).map(|(&a, &b)| b - a).collect();
        let l = &self.layout;
        match self.config.time_param_mode {
            TimeParamMode::TAndDelta => {
                let a = self.embedder(ops, l.time, t);
                let b = self.embedder(ops, l.interval, &delta);
                ops.add(&a, &b)
            }
            TimeParamMode::TAndTp => {
                let a = self.embedder(ops, l.time, t);
                let b = self.embedder(ops, l.interval, t_prime);
                ops.add(&a, &b)
            }
            TimeParamMode::DeltaOnly => self.embedder(ops, l.time, &delta),
            TimeParamMode::TTpDirection => {
                let a = self.embedder(ops, l.time, t);
                let b = self.embedder(ops, l.interval, t_prime);
                let rows: Vec<usize> = delta.iter().map(|d| usize::from(d.re < 0.0)).collect();
                let dir = ops.gather_param_rows(l.direction, &rows);
                let ab = ops.add(&a, &b);
                ops.add(&ab, &dir)
            }
        }
    }

    fn forward<O: TensorOps>(
        &self,
        ops: &mut O,
        x: DualTensor,
        t: &[Dual],
        t_prime: &[Dual],
        cond: Option<&[usize]>,
    ) -> O::Tensor {
        let mut emb = self.time_embedding(ops, t, t_prime);
        if let (Some(labels), Some(table)) = (cond, self.layout.cond) {
            let c = ops.gather_param_rows(table, labels);
            emb = ops.add(&emb, &c);
        }
        let x = ops.input(x);
        let mut h = ops.concat_cols(&x, &emb);
        let last = self.layout.trunk.len() - 1;
        for (i, &(w, b)) in self.layout.trunk.iter().enumerate() {
            h = ops.matmul_param(&h, w);
            h = ops.add_bias_param(&h, b);
            if i < last {
                h = ops.silu(&h);
            }
        }
        h
    }

    /// Time embedding of a single pair (condition excluded).
    pub fn embed_time(&self, pair: TimePair) -> Array1<f64> {
        let mut ops = ForwardOps::new(&self.params);
        let e = self.time_embedding(&mut ops, &[Dual::constant(pair.t)], &[Dual::constant(pair.t_prime)]);
        e.into_value().index_axis_move(Axis(0), 0)
    }

    /// Evaluates the net on `x`, propagating `x`'s tangent if present. Times
    /// are shared by every row and carry no tangent.
    pub fn forward_eval(&self, x: &DualTensor, t: f64, t_prime: f64, cond: Option<&[usize]>) -> Result<DualTensor> {
        let rows = x.shape().0;
        let (ts, tps) = (vec![t; rows], vec![t_prime; rows]);
        self.check_inputs(x.value(), &ts, &tps, cond)?;
        if !x.is_finite() {
            return Err(Error::NonFinite("network input tangent".into()));
        }
        let td: Vec<Dual> = ts.iter().map(|&v| Dual::constant(v)).collect();
        let tpd: Vec<Dual> = tps.iter().map(|&v| Dual::constant(v)).collect();
        let mut ops = ForwardOps::new(&self.params);
        let out = self.forward(&mut ops, x.clone(), &td, &tpd, cond);
        finite_or(out, "network output")
    }

    /// `u(x, t, t')` for one shared time pair.
    pub fn u_theta(&self, x: &Array2<f64>, pair: TimePair, cond: Option<&[usize]>) -> Result<Array2<f64>> {
        let rows = x.nrows();
        self.eval(x, &vec![pair.t; rows], &vec![pair.t_prime; rows], cond)
    }

    /// Records the forward pass on `tape`, which must have been built over
    /// this net's parameters.
    pub fn record(
        &self,
        tape: &mut Tape<'_>,
        x: &Array2<f64>,
        t: &[f64],
        t_prime: &[f64],
        cond: Option<&[usize]>,
    ) -> Result<Var> {
        self.check_inputs(x, t, t_prime, cond)?;
        let td: Vec<Dual> = t.iter().map(|&v| Dual::constant(v)).collect();
        let tpd: Vec<Dual> = t_prime.iter().map(|&v| Dual::constant(v)).collect();
        Ok(self.forward(tape, DualTensor::constant(x.clone()), &td, &tpd, cond))
    }
}

fn finite_or(out: DualTensor, what: &str) -> Result<DualTensor> {
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

impl AverageVelocity for VelocityNet {
    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn eval(&self, x: &Array2<f64>, t: &[f64], t_prime: &[f64], cond: Option<&[usize]>) -> Result<Array2<f64>> {
        self.check_inputs(x, t, t_prime, cond)?;
        let td: Vec<Dual> = t.iter().map(|&v| Dual::constant(v)).collect();
        let tpd: Vec<Dual> = t_prime.iter().map(|&v| Dual::constant(v)).collect();
        let mut ops = ForwardOps::new(&self.params);
        let out = self.forward(&mut ops, DualTensor::constant(x.clone()), &td, &tpd, cond);
        Ok(finite_or(out, "network output")?.into_value())
    }

    fn jvp(
        &self,
        x: &Array2<f64>,
        t: &[f64],
        t_prime: &[f64],
        dx: &Array2<f64>,
        dt: &[f64],
        dt_prime: &[f64],
        cond: Option<&[usize]>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_inputs(x, t, t_prime, cond)?;
        if dx.dim() != x.dim() || dt.len() != t.len() || dt_prime.len() != t.len() {
            return Err(Error::dim("jvp direction shape differs from the input"));
        }
        let td: Vec<Dual> = t.iter().zip(dt).map(|(&v, &d)| Dual::new(v, d)).collect();
        let tpd: Vec<Dual> = t_prime.iter().zip(dt_prime).map(|(&v, &d)| Dual::new(v, d)).collect();
        let xd = DualTensor::with_tangent(x.clone(), dx.clone())?;
        let mut ops = ForwardOps::new(&self.params);
        let out = self.forward(&mut ops, xd, &td, &tpd, cond);
        Ok(finite_or(out, "network output or tangent")?.into_parts())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small(mode: TimeParamMode, labels: usize) -> ModelConfig {
        ModelConfig {
            data_dim: 2,
            hidden_dims: vec![16, 16],
            num_labels: labels,
            time_param_mode: mode,
            embed_dim: 8,
            num_frequencies: 8,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn same_seed_same_params() {
        let a = VelocityNet::init(small(TimeParamMode::TAndDelta, 2), 7).unwrap();
        let b = VelocityNet::init(small(TimeParamMode::TAndDelta, 2), 7).unwrap();
        assert_eq!(a, b);
        let c = VelocityNet::init(small(TimeParamMode::TAndDelta, 2), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut cfg = small(TimeParamMode::TAndDelta, 0);
        cfg.hidden_dims = vec![4, 0];
        assert!(matches!(VelocityNet::init(cfg, 0), Err(Error::Config(_))));
        let mut cfg = small(TimeParamMode::TAndDelta, 0);
        cfg.data_dim = 0;
        assert!(VelocityNet::init(cfg, 0).is_err());
    }

    #[test]
    fn zero_net_outputs_zero() {
        let mut net = VelocityNet::init(small(TimeParamMode::TAndDelta, 0), 1).unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        let x = array![[1.0, -2.0], [0.3, 4.0]];
        let out = net.forward_eval(&DualTensor::constant(x), 0.2, 0.9, None).unwrap();
        assert!(out.value().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interval_is_ignored_at_init() {
        let net = VelocityNet::init(small(TimeParamMode::TAndDelta, 0), 3).unwrap();
        let x = array![[0.5, -1.0], [2.0, 0.1]];
        let a = net.u_theta(&x, TimePair::new(0.3, 0.4).unwrap(), None).unwrap();
        let b = net.u_theta(&x, TimePair::new(0.3, 0.95).unwrap(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            net.embed_time(TimePair::new(0.3, 0.3).unwrap()),
            net.embed_time(TimePair::new(0.3, 0.8).unwrap())
        );
    }

    #[test]
    fn delta_only_depends_on_difference() {
        let net = VelocityNet::init(small(TimeParamMode::DeltaOnly, 0), 3).unwrap();
        let a = net.embed_time(TimePair::new(0.2, 0.7).unwrap());
        let b = net.embed_time(TimePair::new(0.1, 0.6).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn direction_table_picks_row_by_sign() {
        let mut net = VelocityNet::init(small(TimeParamMode::TTpDirection, 0), 3).unwrap();
        let dir = net.layout.direction;
        net.params_mut()[dir] = array![[1.0; 8], [-1.0; 8]];
        let w2 = net.layout.interval.w2;
        net.params_mut()[w2].fill(0.0);
        let fwd = net.embed_time(TimePair::new(0.4, 0.6).unwrap());
        let bwd = net.embed_time(TimePair::new(0.4, 0.2).unwrap());
        let diff = &fwd - &bwd;
        assert!(diff.iter().all(|&d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn batch_rows_are_independent() {
        let net = VelocityNet::init(small(TimeParamMode::TAndDelta, 0), 11).unwrap();
        let x = Array2::from_shape_fn((8, 2), |(i, j)| (i as f64 * 0.37 - j as f64 * 1.3).sin());
        let pair = TimePair::new(0.25, 0.75).unwrap();
        let full = net.u_theta(&x, pair, None).unwrap();
        let one = net
            .u_theta(&x.slice(ndarray::s![3..4, ..]).to_owned(), pair, None)
            .unwrap();
        for j in 0..2 {
            assert!((one[[0, j]] - full[[3, j]]).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_inputs_are_errors() {
        let net = VelocityNet::init(small(TimeParamMode::TAndDelta, 2), 1).unwrap();
        let pair = TimePair::new(0.0, 1.0).unwrap();
        let x3 = Array2::zeros((1, 3));
        assert!(matches!(net.u_theta(&x3, pair, None), Err(Error::Dimension(_))));
        let nan = array![[f64::NAN, 0.0]];
        assert!(matches!(net.u_theta(&nan, pair, None), Err(Error::NonFinite(_))));
        let x = array![[0.0, 0.0]];
        assert!(matches!(
            net.u_theta(&x, pair, Some(&[2])),
            Err(Error::Condition {
                label: 2,
                num_labels: 2
            })
        ));
        assert!(TimePair::new(-0.1, 0.5).is_err());
    }

    #[test]
    fn frequency_ladder_is_geometric() {
        let cfg = ModelConfig {
            num_frequencies: 3,
            min_frequency: 1.0,
            max_frequency: 100.0,
            ..Default::default()
        };
        let f = cfg.frequencies();
        assert!((f[0] - 1.0).abs() < 1e-12 && (f[1] - 10.0).abs() < 1e-9 && (f[2] - 100.0).abs() < 1e-9);
    }
}
