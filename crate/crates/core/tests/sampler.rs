mod common;

use bifm::data::{AnalyticAverageField, Dataset, GaussianPathOracle};
use bifm::metrics::{covariance, median};
use bifm::sampler::*;
use common::*;
use ndarray::array;

fn oracle() -> GaussianPathOracle {
    GaussianPathOracle::new(vec![2.0, 0.0], 0.5).unwrap()
}

const BUDGETS: [usize; 5] = [1, 2, 4, 8, 32];

#[test]
fn oracle_generation_is_step_count_invariant() {
    let field = AnalyticAverageField::new(oracle());
    let noise = SampleBatch::noise(500, 2, 1);
    let outs: Vec<_> = BUDGETS
        .iter()
        .map(|&n| generate(&field, &noise, Schedule::new(n), None).unwrap().points)
        .collect();
    for a in &outs {
        for b in &outs {
            assert!(max_abs_diff(a, b) < 1e-3);
        }
    }
}

#[test]
fn oracle_inversion_undoes_generation() {
    let field = AnalyticAverageField::new(oracle());
    let noise = SampleBatch::noise(500, 2, 2);
    for &n in &BUDGETS {
        let data = generate(&field, &noise, Schedule::new(n), None).unwrap();
        let back = invert(&field, &data, Schedule::new(n), None).unwrap();
        assert!(max_abs_diff(&back.points, &noise.points) < 1e-3, "N={n}");
    }
}

#[test]
fn oracle_reconstruction_error_is_negligible() {
    let field = AnalyticAverageField::new(oracle());
    let data = oracle().target().sample(1000, 3).unwrap();
    for &n in &BUDGETS {
        let r = reconstruct(&field, &data, Schedule::new(n), None).unwrap();
        assert!(median(&r.squared_errors) < 1e-5);
    }
}

#[test]
fn one_step_oracle_pushforward_has_target_moments() {
    let field = AnalyticAverageField::new(oracle());
    let n = 10_000;
    let out = generate(&field, &SampleBatch::noise(n, 2, 4), Schedule::new(1), None)
        .unwrap()
        .points;
    let (mean, cov) = covariance(&out).unwrap();
    let se_mean = 0.5 / (n as f64).sqrt();
    // Var of a sample variance of N(0, s²) is 2s⁴/(n-1); off-diagonal s⁴/n.
    let se_var = (2.0 * 0.25f64.powi(2) / (n as f64 - 1.0)).sqrt();
    let se_cov = 0.25 / (n as f64).sqrt();
    assert!((mean[0] - 2.0).abs() < 3.0 * se_mean && mean[1].abs() < 3.0 * se_mean);
    assert!((cov[[0, 0]] - 0.25).abs() < 3.0 * se_var && (cov[[1, 1]] - 0.25).abs() < 3.0 * se_var);
    assert!(cov[[0, 1]].abs() < 3.0 * se_cov);
}

#[test]
fn fine_euler_reaches_the_target_mean() {
    let o = oracle();
    let n = 4000;
    let out = euler_generate(&o, &SampleBatch::noise(n, 2, 5), Schedule::new(512), None)
        .unwrap()
        .points;
    let (mean, _) = covariance(&out).unwrap();
    let se = 0.5 / (n as f64).sqrt();
    assert!((mean[0] - 2.0).abs() < 3.0 * se && mean[1].abs() < 3.0 * se);
}

#[test]
fn naive_reversal_error_shrinks_with_step_count() {
    let o = oracle();
    let data = o.target().sample(500, 6).unwrap();
    let round_trip = |steps| {
        let z = ddim_style_invert(&o, &data, Schedule::new(steps), None).unwrap();
        let back = euler_generate(&o, &z, Schedule::new(steps), None).unwrap();
        bifm::metrics::reconstruction_error(&data.points, &back.points)
            .unwrap()
            .1
    };
    let fine = round_trip(512);
    let coarse = round_trip(4);
    assert!(fine < 1e-2, "{fine}");
    assert!(coarse > fine, "{coarse} vs {fine}");
}

#[test]
fn generation_is_deterministic_and_records_the_grid() {
    let field = AnalyticAverageField::new(oracle());
    let noise = SampleBatch::noise(10, 2, 7);
    let a = generate(&field, &noise, Schedule::new(4).recorded(), None).unwrap();
    let b = generate(&field, &noise, Schedule::new(4).recorded(), None).unwrap();
    assert_eq!(a, b);
    let tr = a.trajectory.unwrap();
    assert_eq!(tr.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    assert_eq!(tr.states.first().unwrap(), &noise.points);
    assert_eq!(tr.states.last().unwrap(), &a.points);
    let inv = invert(
        &field,
        &SampleBatch::new(a.points.clone()),
        Schedule::new(4).recorded(),
        None,
    )
    .unwrap();
    assert_eq!(inv.trajectory.unwrap().times, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
}

#[test]
fn edit_with_equal_conditions_is_reconstruction() {
    let field = AnalyticAverageField::new(oracle());
    let data = Dataset::gaussian(vec![2.0, 0.0], 0.5).sample(50, 8).unwrap();
    let e = edit(&field, &data, None, None, Schedule::new(3)).unwrap();
    let r = reconstruct(&field, &data, Schedule::new(3), None).unwrap();
    assert_eq!(e.points, r.batch.points);
}

#[test]
fn constant_field_shifts_by_c_in_the_direction_of_travel() {
    let c = constant_net(&[0.25, -2.0]);
    let data = SampleBatch::new(array![[1.0, 1.0], [0.0, -3.0]]);
    for n in [1, 3, 7] {
        let g = generate(&c, &data, Schedule::new(n), None).unwrap();
        assert!(max_abs_diff(&g.points, &(&data.points + &array![0.25, -2.0])) < 1e-14);
        let i = invert(&c, &data, Schedule::new(n), None).unwrap();
        assert!(max_abs_diff(&i.points, &(&data.points + &array![0.25, -2.0])) < 1e-14);
    }
}
