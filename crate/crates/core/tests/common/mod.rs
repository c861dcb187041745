#![allow(dead_code)]

use bifm::autodiff::Tape;
use bifm::model::{AverageVelocity, ModelConfig, TimeParamMode, VelocityNet};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// A small random architecture with every parameter block non-zero.
pub fn random_net(rng: &mut ChaCha8Rng) -> VelocityNet {
    let modes = TimeParamMode::ALL;
    let depth = rng.random_range(1..=3);
    let cfg = ModelConfig {
        data_dim: rng.random_range(1..=3),
        hidden_dims: (0..depth).map(|_| rng.random_range(3..=12)).collect(),
        num_labels: rng.random_range(0..=2),
        time_param_mode: modes[rng.random_range(0..modes.len())],
        embed_dim: rng.random_range(2..=6),
        num_frequencies: rng.random_range(1..=6),
        ..ModelConfig::default()
    };
    let mut net = VelocityNet::init(cfg, rng.random()).unwrap();
    // Zero-initialised blocks would hide their derivatives.
    for p in net.params_mut() {
        p.mapv_inplace(|v| {
            v + 0.3 * {
                let n: f64 = StandardNormal.sample(rng);
                n
            }
        });
    }
    net
}

pub fn random_labels(net: &VelocityNet, rows: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    (net.num_labels() > 0).then(|| (0..rows).map(|_| rng.random_range(0..net.num_labels())).collect())
}

/// Times kept away from the ends so that central differences stay inside
/// `[0, 1]`.
pub fn interior_times(rows: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows).map(|_| rng.random_range(0.05..0.95)).collect()
}

/// `mean_i ‖u(x_i) - y_i‖²` recorded on a tape.
pub fn regression_loss(
    net: &VelocityNet,
    x: &Array2<f64>,
    t: &[f64],
    tp: &[f64],
    cond: Option<&[usize]>,
    y: &Array2<f64>,
) -> f64 {
    let u = net.eval(x, t, tp, cond).unwrap();
    let r = u - y;
    r.rows().into_iter().map(|row| row.dot(&row)).sum::<f64>() / x.nrows() as f64
}

pub fn record_regression<'p>(
    tape: &mut Tape<'p>,
    net: &VelocityNet,
    x: &Array2<f64>,
    t: &[f64],
    tp: &[f64],
    cond: Option<&[usize]>,
    y: &Array2<f64>,
) -> bifm::autodiff::Var {
    let u = net.record(tape, x, t, tp, cond).unwrap();
    let y = tape.constant(y.clone());
    let r = tape.sub(u, y);
    let sq = tape.row_sq_norm(r);
    tape.mean(sq)
}

pub fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Oracle instantaneous velocity with a time per row.
pub fn marginal_velocity(oracle: &bifm::data::GaussianPathOracle, x: &Array2<f64>, t: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, &ti) in t.iter().enumerate() {
        let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
        out.row_mut(i).assign(&oracle.instantaneous(&row, ti).unwrap().row(0));
    }
    out
}

/// Exact flow of each row from `t[i]` to `t_prime[i]`.
pub fn flow_rows(oracle: &bifm::data::GaussianPathOracle, x: &Array2<f64>, t: &[f64], t_prime: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
        out.row_mut(i)
            .assign(&oracle.flow_closed_form(&row, t[i], t_prime[i]).unwrap().row(0));
    }
    out
}

/// A net whose output is `c` for every input.
pub fn constant_net(c: &[f64]) -> VelocityNet {
    let cfg = ModelConfig {
        data_dim: c.len(),
        hidden_dims: vec![4],
        embed_dim: 3,
        num_frequencies: 2,
        ..Default::default()
    };
    let mut net = VelocityNet::init(cfg, 0).unwrap();
    let last = net.params().len() - 1;
    for (k, p) in net.params_mut().iter_mut().enumerate() {
        p.fill(0.0);
        if k == last {
            p.row_mut(0).assign(&ndarray::ArrayView1::from(c));
        }
    }
    net
}
