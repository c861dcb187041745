//! The invariant suite behind `bifm verify`. Every check is seeded, so the
//! report text is identical from run to run.

use std::path::Path;

use bifm::autodiff::{grad, Tape};
use bifm::checkpoint::{self, decode, encode, Model};
use bifm::data::{AnalyticAverageField, Dataset, GaussianPathOracle};
use bifm::flow::{
    bifm_loss, conditional_velocity, draw_path_sample, meanflow_target, mf_loss, PathSample, TrainConfig,
};
use bifm::model::{AverageVelocity, ModelConfig, TimeParamMode, VelocityNet};
use bifm::sampler::{generate, SampleBatch, Schedule};
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

const EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn bound(name: &'static str, value: f64, limit: f64) -> Self {
        Self {
            name,
            passed: value < limit,
            detail: format!("{value:.3e} < {limit:.0e}"),
        }
    }

    fn outcome(name: &'static str, r: Result<String, String>) -> Self {
        match r {
            Ok(detail) => Self {
                name,
                passed: true,
                detail,
            },
            Err(detail) => Self {
                name,
                passed: false,
                detail,
            },
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Runs every property; `checkpoint` adds a load and re-encode check of
/// that file.
pub fn run_all(checkpoint: Option<&Path>) -> Vec<Check> {
    let mut out = vec![
        Check::bound("jvp_vs_central_differences", jvp_error(20, 101), 1e-5),
        Check::bound("gradient_vs_central_differences", gradient_error(10, 102), 1e-4),
        Check::bound("degenerate_interval_identity", degenerate_error(200, 103), 1e-12),
    ];
    let (mf, bifm) = oracle_losses(20, 64, 104);
    out.push(Check::bound("oracle_fixed_point_mf", mf, 1e-3));
    out.push(Check::bound("oracle_fixed_point_bifm", bifm, 1e-4));
    out.push(Check::bound("oracle_negation", oracle_negation(10, 20, 105), 1e-8));
    out.push(Check::bound(
        "oracle_step_budget_consistency",
        step_budget_spread(200, 106),
        1e-3,
    ));
    out.push(Check::outcome("checkpoint_round_trip", checkpoint_round_trip()));
    out.push(Check::outcome(
        "corrupt_checkpoint_rejected",
        corrupt_checkpoint_rejected(),
    ));
    out.push(Check::outcome("config_round_trip", config_round_trip()));
    if let Some(path) = checkpoint {
        out.push(Check::outcome("checkpoint_file", checkpoint_file(path)));
    }
    out
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    SampleBatch::noise(rows, cols, rng.random()).points
}

fn random_net(rng: &mut ChaCha8Rng) -> VelocityNet {
    let modes = TimeParamMode::ALL;
    let cfg = ModelConfig {
        data_dim: rng.random_range(1..=3),
        hidden_dims: (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=10)).collect(),
        num_labels: rng.random_range(0..=2),
        time_param_mode: modes[rng.random_range(0..modes.len())],
        embed_dim: rng.random_range(2..=6),
        num_frequencies: rng.random_range(1..=6),
        ..ModelConfig::default()
    };
    let mut net = VelocityNet::init(cfg, rng.random()).expect("valid random architecture");
    // Zero-initialised blocks would hide their derivatives.
    for p in net.params_mut() {
        let noise = normal_matrix(p.nrows(), p.ncols(), rng);
        p.scaled_add(0.3, &noise);
    }
    net
}

fn labels(net: &VelocityNet, rows: usize, rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    (net.num_labels() > 0).then(|| (0..rows).map(|_| rng.random_range(0..net.num_labels())).collect())
}

fn times(rows: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..rows).map(|_| rng.random_range(0.05..0.95)).collect()
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Worst relative error of the network JVP against central differences
/// over `cases` random nets, inputs and tangents.
pub fn jvp_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let net = random_net(&mut rng);
        let rows = rng.random_range(1..=3);
        let x = normal_matrix(rows, net.data_dim(), &mut rng);
        let dx = normal_matrix(rows, net.data_dim(), &mut rng);
        let (t, tp) = (times(rows, &mut rng), times(rows, &mut rng));
        let dt: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dtp: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cond = labels(&net, rows, &mut rng);
        let Ok((_, du)) = net.jvp(&x, &t, &tp, &dx, &dt, &dtp, cond.as_deref()) else {
            return f64::INFINITY;
        };
        let shift = |h: f64| {
            let xs = &x + &(&dx * h);
            let ts: Vec<f64> = t.iter().zip(&dt).map(|(a, b)| a + h * b).collect();
            let tps: Vec<f64> = tp.iter().zip(&dtp).map(|(a, b)| a + h * b).collect();
            net.eval(&xs, &ts, &tps, cond.as_deref())
        };
        let (Ok(up), Ok(down)) = (shift(EPS), shift(-EPS)) else {
            return f64::INFINITY;
        };
        let fd = (up - down) / (2.0 * EPS);
        worst = worst.max(norm(&(&du - &fd)) / norm(&fd).max(1e-8));
    }
    worst
}

fn regression_loss(net: &VelocityNet, x: &Array2<f64>, t: &[f64], cond: Option<&[usize]>, y: &Array2<f64>) -> f64 {
    match net.eval(x, t, t, cond) {
        Ok(u) => (u - y).mapv(|v| v * v).sum() / x.nrows() as f64,
        Err(_) => f64::NAN,
    }
}

/// Worst relative error of tape gradients of a regression loss against
/// central differences, one sampled entry per parameter block.
pub fn gradient_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let mut net = random_net(&mut rng);
        let rows = rng.random_range(1..=3);
        let x = normal_matrix(rows, net.data_dim(), &mut rng);
        let y = normal_matrix(rows, net.data_dim(), &mut rng);
        let t = times(rows, &mut rng);
        let cond = labels(&net, rows, &mut rng);
        let grads = {
            let mut tape = Tape::new(net.params());
            let Ok(u) = net.record(&mut tape, &x, &t, &t, cond.as_deref()) else {
                return f64::INFINITY;
            };
            let target = tape.constant(y.clone());
            let r = tape.sub(u, target);
            let sq = tape.row_sq_norm(r);
            let loss = tape.mean(sq);
            match grad(&tape, loss) {
                Ok(g) => g,
                Err(_) => return f64::INFINITY,
            }
        };
        let (mut err, mut scale) = (0.0, 0.0);
        for k in 0..net.params().len() {
            let (r, c) = net.params()[k].dim();
            let (i, j) = (rng.random_range(0..r), rng.random_range(0..c));
            let orig = net.params()[k][[i, j]];
            net.params_mut()[k][[i, j]] = orig + EPS;
            let up = regression_loss(&net, &x, &t, cond.as_deref(), &y);
            net.params_mut()[k][[i, j]] = orig - EPS;
            let down = regression_loss(&net, &x, &t, cond.as_deref(), &y);
            net.params_mut()[k][[i, j]] = orig;
            let fd = (up - down) / (2.0 * EPS);
            err += (grads.arrays[k][[i, j]] - fd).powi(2);
            scale += fd * fd;
        }
        worst = worst.max(err.sqrt() / scale.sqrt().max(1e-8));
    }
    worst
}

/// Largest gap between the regression target at `t' = t` and `x1 - x0`.
pub fn degenerate_error(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let net = random_net(&mut rng);
        let rows = rng.random_range(1..=3);
        let x0 = normal_matrix(rows, net.data_dim(), &mut rng);
        let x1 = normal_matrix(rows, net.data_dim(), &mut rng);
        let t: Vec<f64> = (0..rows).map(|_| rng.random()).collect();
        let cond = labels(&net, rows, &mut rng);
        let target =
            PathSample::new(x0.clone(), x1.clone(), t.clone(), t, cond).and_then(|s| meanflow_target(&net, &s));
        let (Ok(target), Ok(v)) = (target, conditional_velocity(&x0, &x1)) else {
            return f64::INFINITY;
        };
        worst = worst.max(max_abs_diff(&target, &v));
    }
    worst
}

/// `N(0, I)` to `N((2, 0), 0.5² I)`.
pub fn oracle() -> GaussianPathOracle {
    GaussianPathOracle::new(vec![2.0, 0.0], 0.5).expect("valid oracle")
}

/// Row-wise map of a per-time oracle function.
fn per_row(x: &Array2<f64>, f: impl Fn(&Array2<f64>, usize) -> bifm::Result<Array2<f64>>) -> bifm::Result<Array2<f64>> {
    let mut out = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let row = x.slice(s![i..i + 1, ..]).to_owned();
        out.row_mut(i).assign(&f(&row, i)?.row(0));
    }
    Ok(out)
}

/// Worst per-batch losses of the exact field over sampler-drawn batches,
/// scored against the marginal velocity and the exact endpoint.
pub fn oracle_losses(batches: usize, batch_size: usize, seed: u64) -> (f64, f64) {
    let o = oracle();
    let field = AnalyticAverageField::new(o.clone());
    let cfg = TrainConfig {
        batch_size,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mf, mut bf) = (0.0_f64, 0.0_f64);
    for _ in 0..batches {
        let losses = draw_path_sample(&o.target(), &cfg, false, &mut rng).and_then(|s| {
            let v = per_row(&s.x_t, |r, i| o.instantaneous(r, s.t[i]))?;
            let end = per_row(&s.x_t, |r, i| o.flow_closed_form(r, s.t[i], s.t_prime[i]))?;
            let s = s.with_velocity(v)?.with_endpoint(end)?;
            Ok((
                mf_loss(&field, &s, cfg.loss_p, cfg.huber_c)?,
                bifm_loss(&field, &s, cfg.loss_p, cfg.huber_c)?,
            ))
        });
        match losses {
            Ok((a, b)) => {
                mf = mf.max(a);
                bf = bf.max(b);
            }
            Err(_) => return (f64::INFINITY, f64::INFINITY),
        }
    }
    (mf, bf)
}

/// Largest `‖u(x, t, t') + u(flow(x, t, t'), t', t)‖` of the exact field
/// over a `grid × grid` set of time pairs and `points` points.
pub fn oracle_negation(grid: usize, points: usize, seed: u64) -> f64 {
    let o = oracle();
    let x = SampleBatch::noise(points, 2, seed).points * 2.0;
    // The two grids interleave: at t' = t both queries are the same
    // instantaneous velocity and cannot cancel.
    let starts: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1).max(1) as f64).collect();
    let ends: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) / grid as f64).collect();
    let mut worst = 0.0_f64;
    for &t in &starts {
        for &tp in &ends {
            let r = (|| {
                let fwd = o.average(&x, t, tp)?;
                let y = o.flow(&x, t, tp)?;
                let bwd = o.average(&y, tp, t)?;
                Ok::<_, bifm::Error>(norm(&(&fwd + &bwd)))
            })();
            worst = worst.max(r.unwrap_or(f64::INFINITY));
        }
    }
    worst
}

/// Largest per-coordinate disagreement of exact-field generation across
/// step budgets 1, 2, 4, 8 and 32.
pub fn step_budget_spread(points: usize, seed: u64) -> f64 {
    let field = AnalyticAverageField::new(oracle());
    let noise = SampleBatch::noise(points, 2, seed);
    let outs: Result<Vec<_>, _> = [1, 2, 4, 8, 32]
        .iter()
        .map(|&n| generate(&field, &noise, Schedule::new(n), None).map(|b| b.points))
        .collect();
    let Ok(outs) = outs else { return f64::INFINITY };
    outs.iter().map(|a| max_abs_diff(a, &outs[0])).fold(0.0, f64::max)
}

fn checkpoint_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..10 {
        let net = random_net(&mut rng);
        let first = encode(&Model::Net(net)).map_err(|e| e.to_string())?;
        let again = decode(&first).and_then(|m| encode(&m)).map_err(|e| e.to_string())?;
        if again != first {
            return Err("save -> load -> save changed the bytes".into());
        }
    }
    Ok("10 random nets byte-identical".into())
}

fn corrupt_checkpoint_rejected() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let bytes = encode(&Model::Net(random_net(&mut rng))).map_err(|e| e.to_string())?;
    for _ in 0..20 {
        let mut bad = bytes.clone();
        let i = rng.random_range(0..bad.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        match decode(&bad) {
            Err(bifm::Error::Format(_)) => {}
            Err(e) => return Err(format!("byte {i}: unexpected error {e}")),
            Ok(_) => return Err(format!("byte {i}: corrupt checkpoint loaded")),
        }
    }
    Ok("20 single-bit flips rejected".into())
}

fn config_round_trip() -> Result<String, String> {
    let mut cfg = RunConfig::new(Dataset::two_mode(0.3));
    cfg.ablate = Some(Default::default());
    let text = cfg.to_toml().map_err(|e| e.to_string())?;
    let back = RunConfig::parse(&text, Path::new("<config>")).map_err(|e| e.to_string())?;
    if back != cfg || back.to_toml().map_err(|e| e.to_string())? != text {
        return Err("serialize -> parse changed the config".into());
    }
    Ok("serialize -> parse is idempotent".into())
}

fn checkpoint_file(path: &Path) -> Result<String, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let model = checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
    let again = encode(&model).map_err(|e| e.to_string())?;
    if again != bytes {
        return Err("re-encoding changed the bytes".into());
    }
    Ok(format!("{} loads and re-encodes identically", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_build_passes_and_reports_identically() {
        let a = run_all(None);
        assert!(a.iter().all(|c| c.passed), "{a:?}");
        assert_eq!(a, run_all(None));
    }
}
