//! Sample-quality and reconstruction metrics for low-dimensional batches.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::sampler::per_point_squared_error;

/// Mean and median over the batch of the per-point squared L2 error.
pub fn reconstruction_error(original: &Array2<f64>, reconstructed: &Array2<f64>) -> Result<(f64, f64)> {
    if original.dim() != reconstructed.dim() {
        return Err(Error::dim(format!("{:?} vs {:?}", original.dim(), reconstructed.dim())));
    }
    let se = per_point_squared_error(original, reconstructed);
    if se.is_empty() {
        return Err(Error::dim("empty batch"));
    }
    let mse = se.iter().sum::<f64>() / se.len() as f64;
    Ok((mse, median(&se)))
}

/// Median with the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for x in a.rows() {
        let mut row = 0.0;
        for y in b.rows() {
            row += dist(x, y);
        }
        total += row;
    }
    total / (a.nrows() as f64 * b.nrows() as f64)
}

/// Canonical order so that swapping the arguments runs identical arithmetic.
fn canonical<'a>(a: &'a Array2<f64>, b: &'a Array2<f64>) -> (&'a Array2<f64>, &'a Array2<f64>) {
    let key = |m: &Array2<f64>| (m.nrows(), m.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// V-statistic `2·E‖A−B‖ − E‖A−A'‖ − E‖B−B'‖`, clamped at zero against
/// rounding.
pub fn energy_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::dim("energy distance of an empty batch"));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!("{}-D vs {}-D", a.ncols(), b.ncols())));
    }
    let (a, b) = canonical(a, b);
    let cross = mean_pairwise(a, b);
    let within_a = mean_pairwise(a, a);
    let within_b = mean_pairwise(b, b);
    Ok((2.0 * cross - within_a - within_b).max(0.0))
}

/// Sample covariance with the `n - 1` normaliser.
pub fn covariance(batch: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = batch.nrows();
    if n < 2 {
        return Err(Error::dim("covariance needs at least two points"));
    }
    let mean = batch.mean_axis(Axis(0)).expect("non-empty");
    let centred = batch - &mean;
    let cov = centred.t().dot(&centred) / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// L2 norm of the mean gap and Frobenius norm of the covariance gap.
pub fn moment_error(batch: &Array2<f64>, target_mean: &Array1<f64>, target_cov: &Array2<f64>) -> Result<(f64, f64)> {
    let d = batch.ncols();
    if target_mean.len() != d || target_cov.dim() != (d, d) {
        return Err(Error::dim("target moments do not match the batch dimension"));
    }
    let (mean, cov) = covariance(batch)?;
    let mean_err = (&mean - target_mean).mapv(|v| v * v).sum().sqrt();
    let cov_err = (&cov - target_cov).mapv(|v| v * v).sum().sqrt();
    Ok((mean_err, cov_err))
}

/// One row of metrics; absent entries print as empty cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub steps: Option<usize>,
    pub recon_mse: Option<f64>,
    pub recon_median_se: Option<f64>,
    pub energy_distance: Option<f64>,
    pub mean_err: Option<f64>,
    pub cov_err: Option<f64>,
}

pub const METRIC_CSV_HEADER: &str = "steps,recon_mse,recon_median_se,energy_distance,mean_err,cov_err";

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.values() {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NonFinite(format!("metric {name} = {v}")));
                }
            }
        }
        Ok(())
    }

    fn values(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("recon_mse", self.recon_mse),
            ("recon_median_se", self.recon_median_se),
            ("energy_distance", self.energy_distance),
            ("mean_err", self.mean_err),
            ("cov_err", self.cov_err),
        ]
    }

    pub fn csv_row(&self) -> String {
        let mut cells = vec![self.steps.map(|s| s.to_string()).unwrap_or_default()];
        cells.extend(self.values().iter().map(|(_, v)| v.map(fmt_f64).unwrap_or_default()));
        cells.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{METRIC_CSV_HEADER}")?;
        writeln!(out, "{}", self.csv_row())?;
        Ok(())
    }
}
