//! CSV exchange for point clouds and trajectories.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sampler::{SampleBatch, Trajectory};

/// Seventeen significant digits: enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn point_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

/// Header `x0,..,x{d-1}` plus `label` when the batch is labelled.
pub fn write_points<W: Write>(out: W, batch: &SampleBatch) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = point_header(batch.dim());
    if batch.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in batch.points.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        if let Some(labels) = &batch.labels {
            rec.push(labels[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_points`]. A trailing `label` column is
/// recognised by name.
pub fn read_points<R: Read>(input: R) -> Result<SampleBatch> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let labelled = header.iter().next_back() == Some("label");
    let dim = header.len() - usize::from(labelled);
    if dim == 0 {
        return Err(Error::Csv("no coordinate columns".into()));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != header.len() {
            return Err(Error::Csv(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                header.len()
            )));
        }
        for field in rec.iter().take(dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: bad number {field:?}", line + 1)))?;
            values.push(v);
        }
        if labelled {
            let field = rec.get(dim).unwrap_or_default();
            let l: usize = field
                .trim()
                .parse()
                .map_err(|_| Error::Csv(format!("row {}: bad label {field:?}", line + 1)))?;
            labels.push(l);
        }
    }
    let rows = values.len() / dim;
    let points = Array2::from_shape_vec((rows, dim), values).map_err(|e| Error::Csv(e.to_string()))?;
    let batch = SampleBatch::new(points);
    Ok(if labelled { batch.with_labels(labels) } else { batch })
}

/// One row per (step, point): `step,time,point,x0,..`.
pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let dim = traj.states.first().map_or(0, |s| s.ncols());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string(), "time".into(), "point".into()];
    header.extend(point_header(dim));
    w.write_record(&header).map_err(csv_err)?;
    for (step, (t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        for (p, row) in state.rows().into_iter().enumerate() {
            let mut rec = vec![step.to_string(), fmt_f64(*t), p.to_string()];
            rec.extend(row.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
