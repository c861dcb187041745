//! Synthetic datasets and the closed-form Gaussian path used as ground truth.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Dual;
use crate::error::{Error, Result};
use crate::model::AverageVelocity;
use crate::ode::{integrate, Tolerance};
use crate::sampler::{InstantaneousField, SampleBatch};

/// A synthetic distribution in `dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dataset {
    /// `N(mean, std² I)`.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Isotropic Gaussian mixture; labels are component indices.
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stds: Vec<f64>,
    },
    /// Two interleaved half circles in 2-D; labels are the moon index.
    Moons { noise: f64 },
    /// Alternating cells of a `cells × cells` board over `[-2, 2]²`.
    Checkerboard { cells: usize },
    /// Label `k` is drawn uniformly and selects component `k`.
    CondMixture { means: Vec<Vec<f64>>, stds: Vec<f64> },
}

impl Dataset {
    pub fn gaussian(mean: Vec<f64>, std: f64) -> Self {
        Dataset::Gaussian { mean, std }
    }

    /// The two-mode conditional set used for editing: label 0 at `(-3, 0)`,
    /// label 1 at `(3, 0)`.
    pub fn two_mode(std: f64) -> Self {
        Dataset::CondMixture {
            means: vec![vec![-3.0, 0.0], vec![3.0, 0.0]],
            stds: vec![std, std],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dataset::Gaussian { mean, .. } => mean.len(),
            Dataset::Mixture { means, .. } | Dataset::CondMixture { means, .. } => means.first().map_or(0, Vec::len),
            Dataset::Moons { .. } | Dataset::Checkerboard { .. } => 2,
        }
    }

    pub fn num_labels(&self) -> usize {
        match self {
            Dataset::CondMixture { means, .. } => means.len(),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            Dataset::Gaussian { mean, std } => {
                if mean.is_empty() || !(*std > 0.0) {
                    return bad("gaussian needs a non-empty mean and std > 0");
                }
            }
            Dataset::Mixture { weights, means, stds } => {
                check_components(means, stds)?;
                if weights.len() != means.len() || weights.iter().any(|w| !(*w > 0.0)) {
                    return bad("mixture weights must be positive, one per component");
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("mixture weights must sum to 1");
                }
            }
            Dataset::CondMixture { means, stds } => check_components(means, stds)?,
            Dataset::Moons { noise } => {
                if !(*noise >= 0.0) {
                    return bad("moons noise must be non-negative");
                }
            }
            Dataset::Checkerboard { cells } => {
                if *cells < 2 {
                    return bad("checkerboard needs at least 2 cells per side");
                }
            }
        }
        Ok(())
    }

    /// `n` points from a fresh seeded stream.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = self.sample_with(n, &mut rng)?;
        batch.seed = Some(seed);
        Ok(batch)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        self.validate()?;
        let dim = self.dim();
        let mut points = Array2::zeros((n, dim));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = points.row_mut(i);
            match self {
                Dataset::Gaussian { mean, std } => {
                    for (j, m) in mean.iter().enumerate() {
                        row[j] = m + std * normal(rng);
                    }
                }
                Dataset::Mixture { weights, means, stds } => {
                    let k = categorical(weights, rng);
                    for (j, m) in means[k].iter().enumerate() {
                        row[j] = m + stds[k] * normal(rng);
                    }
                    labels.push(k);
                }
                Dataset::CondMixture { means, stds } => {
                    let k = rng.random_range(0..means.len());
                    for (j, m) in means[k].iter().enumerate() {
                        row[j] = m + stds[k] * normal(rng);
                    }
                    labels.push(k);
                }
                Dataset::Moons { noise } => {
                    let upper = rng.random_bool(0.5);
                    let theta = PI * rng.random::<f64>();
                    let (x, y) = if upper {
                        (theta.cos(), theta.sin())
                    } else {
                        (1.0 - theta.cos(), 0.5 - theta.sin())
                    };
                    row[0] = x + noise * normal(rng);
                    row[1] = y + noise * normal(rng);
                    labels.push(usize::from(!upper));
                }
                Dataset::Checkerboard { cells } => {
                    let (ci, cj) = loop {
                        let ci = rng.random_range(0..*cells);
                        let cj = rng.random_range(0..*cells);
                        if (ci + cj) % 2 == 0 {
                            break (ci, cj);
                        }
                    };
                    let width = 4.0 / *cells as f64;
                    row[0] = -2.0 + width * (ci as f64 + rng.random::<f64>());
                    row[1] = -2.0 + width * (cj as f64 + rng.random::<f64>());
                }
            }
        }
        let batch = SampleBatch::new(points);
        Ok(if labels.is_empty() {
            batch
        } else {
            batch.with_labels(labels)
        })
    }
}

fn check_components(means: &[Vec<f64>], stds: &[f64]) -> Result<()> {
    if means.is_empty() || means.len() != stds.len() {
        return Err(Error::Config(
            "need one std per component and at least one component".into(),
        ));
    }
    let dim = means[0].len();
    if dim == 0 || means.iter().any(|m| m.len() != dim) {
        return Err(Error::Config("component means must share a positive dimension".into()));
    }
    if stds.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("component stds must be positive".into()));
    }
    Ok(())
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Checkerboard cell index of a point, `None` outside `[-2, 2]²`.
pub fn checkerboard_cell(cells: usize, x: f64, y: f64) -> Option<(usize, usize)> {
    if !(-2.0..=2.0).contains(&x) || !(-2.0..=2.0).contains(&y) {
        return None;
    }
    let width = 4.0 / cells as f64;
    let idx = |v: f64| (((v + 2.0) / width).floor() as usize).min(cells - 1);
    Some((idx(x), idx(y)))
}

/// Linear interpolation between `N(0, I)` and `N(mu, sigma² I)` under the
/// independent coupling. The marginal path stays Gaussian with mean
/// `m(t) = t·mu` and scale `s(t) = √((1-t)² + t²σ²)`, so its velocity field
/// and flow are affine in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPathOracle {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl GaussianPathOracle {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self> {
        if mu.is_empty() || !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(
                "oracle needs a non-empty mean and 0 < sigma < inf".into(),
            ));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn target(&self) -> Dataset {
        Dataset::gaussian(self.mu.clone(), self.sigma)
    }

    pub fn scale(&self, t: f64) -> f64 {
        ((1.0 - t).powi(2) + (t * self.sigma).powi(2)).sqrt()
    }

    /// `s'(t) / s(t)`.
    pub fn log_scale_rate(&self, t: f64) -> f64 {
        let s2 = (1.0 - t).powi(2) + (t * self.sigma).powi(2);
        (-(1.0 - t) + t * self.sigma * self.sigma) / s2
    }

    /// `E[x1 - x0 | x_t = x] = mu + (s'/s)(x - t·mu)`.
    pub fn instantaneous(&self, x: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
        self.check(x)?;
        let rate = self.log_scale_rate(t);
        Ok(Array2::from_shape_fn(x.raw_dim(), |(i, j)| {
            self.mu[j] + rate * (x[[i, j]] - t * self.mu[j])
        }))
    }

    /// Exact flow map from `t` to `t'`.
    pub fn flow_closed_form(&self, x: &Array2<f64>, t: f64, t_prime: f64) -> Result<Array2<f64>> {
        self.check(x)?;
        let ratio = self.scale(t_prime) / self.scale(t);
        Ok(Array2::from_shape_fn(x.raw_dim(), |(i, j)| {
            t_prime * self.mu[j] + ratio * (x[[i, j]] - t * self.mu[j])
        }))
    }

    /// Flow map by adaptive integration of the instantaneous field.
    pub fn flow(&self, x: &Array2<f64>, t: f64, t_prime: f64) -> Result<Array2<f64>> {
        self.check(x)?;
        let (rows, cols) = x.dim();
        let y0: Vec<f64> = x.iter().copied().collect();
        let y = integrate(
            |tau, y, dy| {
                let rate = self.log_scale_rate(tau);
                for (k, (d, v)) in dy.iter_mut().zip(y).enumerate() {
                    let m = self.mu[k % cols];
                    *d = m + rate * (v - tau * m);
                }
            },
            &y0,
            t,
            t_prime,
            Tolerance::default(),
        )?;
        Array2::from_shape_vec((rows, cols), y).map_err(|e| Error::dim(e.to_string()))
    }

    /// Average velocity over the interval by numerical integration: the
    /// displacement divided by `|t' - t|`. Equal times return the
    /// instantaneous field.
    pub fn average(&self, x: &Array2<f64>, t: f64, t_prime: f64) -> Result<Array2<f64>> {
        if t == t_prime {
            return self.instantaneous(x, t);
        }
        let end = self.flow(x, t, t_prime)?;
        Ok((end - x) / (t_prime - t).abs())
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::dim(format!(
                "x has {} columns, oracle is {}-D",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn scale_dual(&self, t: Dual) -> Dual {
        let one_minus = Dual::constant(1.0) - t;
        let st = t * self.sigma;
        (one_minus * one_minus + st * st).sqrt()
    }
}

impl InstantaneousField for GaussianPathOracle {
    fn data_dim(&self) -> usize {
        self.dim()
    }

    fn velocity(&self, x: &Array2<f64>, t: f64, _cond: Option<&[usize]>) -> Result<Array2<f64>> {
        self.instantaneous(x, t)
    }
}

/// The exact average-velocity field of a [`GaussianPathOracle`] in closed
/// form, usable anywhere a trained network is.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticAverageField {
    pub oracle: GaussianPathOracle,
}

impl AnalyticAverageField {
    pub fn new(oracle: GaussianPathOracle) -> Self {
        Self { oracle }
    }

    fn entry(&self, x: Dual, m: f64, t: Dual, tp: Dual) -> Dual {
        let o = &self.oracle;
        if t.re == tp.re {
            // v = mu + (s'/s)(x - t mu) with s'/s = (-(1-t) + tσ²)/s²
            let one_minus = Dual::constant(1.0) - t;
            let st = t * o.sigma;
            let s2 = one_minus * one_minus + st * st;
            let rate = (-one_minus + t * (o.sigma * o.sigma)) / s2;
            return rate * (x - t * m) + m;
        }
        let ratio = o.scale_dual(tp) / o.scale_dual(t);
        let disp = (tp - t) * m + (ratio - Dual::constant(1.0)) * (x - t * m);
        disp / (tp - t).abs()
    }
}

impl AverageVelocity for AnalyticAverageField {
    fn data_dim(&self) -> usize {
        self.oracle.dim()
    }

    fn eval(&self, x: &Array2<f64>, t: &[f64], t_prime: &[f64], _cond: Option<&[usize]>) -> Result<Array2<f64>> {
        let zeros = Array2::zeros(x.raw_dim());
        let zt = vec![0.0; t.len()];
        Ok(self.jvp(x, t, t_prime, &zeros, &zt, &zt, None)?.0)
    }

    fn jvp(
        &self,
        x: &Array2<f64>,
        t: &[f64],
        t_prime: &[f64],
        dx: &Array2<f64>,
        dt: &[f64],
        dt_prime: &[f64],
        _cond: Option<&[usize]>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.oracle.check(x)?;
        let rows = x.nrows();
        if [t.len(), t_prime.len(), dt.len(), dt_prime.len()]
            .iter()
            .any(|&l| l != rows)
            || dx.dim() != x.dim()
        {
            return Err(Error::dim("time or direction length differs from batch size"));
        }
        let mut u = Array2::zeros(x.raw_dim());
        let mut du = Array2::zeros(x.raw_dim());
        for i in 0..rows {
            let td = Dual::new(t[i], dt[i]);
            let tpd = Dual::new(t_prime[i], dt_prime[i]);
            for (j, &m) in self.oracle.mu.iter().enumerate() {
                let out = self.entry(Dual::new(x[[i, j]], dx[[i, j]]), m, td, tpd);
                u[[i, j]] = out.re;
                du[[i, j]] = out.eps;
            }
        }
        Ok((u, du))
    }
}
