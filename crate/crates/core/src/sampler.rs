//! Inference-time procedures: few-step generation and inversion with a
//! learned average-velocity field, editing by condition swap, and two
//! baselines on instantaneous fields (explicit Euler, and the naive reversal
//! of the Euler update).
//!
//! Every learned update moves the state by `|t_e - t_s| · u(z, t_s, t_e)`:
//! the field is a velocity pointing in the direction of travel, so the
//! backward prediction along a trajectory is the negation of the forward one.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::AverageVelocity;

/// Intermediate states with the time each was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
}

/// Points in data space with optional labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub trajectory: Option<Trajectory>,
}

impl SampleBatch {
    pub fn new(points: Array2<f64>) -> Self {
        Self {
            points,
            labels: None,
            seed: None,
            trajectory: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    /// `n` standard-normal points drawn from a seeded stream.
    pub fn noise(n: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = Array2::from_shape_fn((n, dim), |_| StandardNormal.sample(&mut rng));
        Self {
            points,
            labels: None,
            seed: Some(seed),
            trajectory: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// Number of equal-width intervals and whether to keep the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub steps: usize,
    pub record: bool,
}

impl Schedule {
    pub fn new(steps: usize) -> Self {
        Self { steps, record: false }
    }

    pub fn recorded(mut self) -> Self {
        self.record = true;
        self
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        Ok(())
    }
}

/// `0, 1/N, ..., 1`, or its reverse.
pub fn time_grid(steps: usize, ascending: bool) -> Vec<f64> {
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    if ascending {
        grid
    } else {
        grid.into_iter().rev().collect()
    }
}

/// A time-local velocity `v(x, t)`.
pub trait InstantaneousField {
    fn data_dim(&self) -> usize;
    fn velocity(&self, x: &Array2<f64>, t: f64, cond: Option<&[usize]>) -> Result<Array2<f64>>;
}

/// Reads an average-velocity model at zero interval length, `v(x, t) = u(x, t, t)`.
pub struct InstantaneousNet<'a, M: ?Sized>(pub &'a M);

impl<M: AverageVelocity + ?Sized> InstantaneousField for InstantaneousNet<'_, M> {
    fn data_dim(&self) -> usize {
        self.0.data_dim()
    }

    fn velocity(&self, x: &Array2<f64>, t: f64, cond: Option<&[usize]>) -> Result<Array2<f64>> {
        let ts = vec![t; x.nrows()];
        self.0.eval(x, &ts, &ts, cond)
    }
}

fn check_batch(points: &Array2<f64>, dim: usize, cond: Option<&[usize]>) -> Result<()> {
    if points.ncols() != dim {
        return Err(Error::dim(format!(
            "batch has {} columns, field expects {dim}",
            points.ncols()
        )));
    }
    if let Some(c) = cond {
        if c.len() != points.nrows() {
            return Err(Error::dim(format!("{} points but {} labels", points.nrows(), c.len())));
        }
    }
    Ok(())
}

fn finish(z: Array2<f64>, input: &SampleBatch, cond: Option<&[usize]>, trajectory: Option<Trajectory>) -> SampleBatch {
    SampleBatch {
        points: z,
        labels: cond.map(|c| c.to_vec()).or_else(|| input.labels.clone()),
        seed: input.seed,
        trajectory,
    }
}

fn ensure_finite(z: &Array2<f64>, step: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("state after step {step}")))
    }
}

fn run_average<M: AverageVelocity + ?Sized>(
    net: &M,
    start: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
    ascending: bool,
) -> Result<SampleBatch> {
    schedule.check()?;
    check_batch(&start.points, net.data_dim(), cond)?;
    let grid = time_grid(schedule.steps, ascending);
    let n = start.len();
    let mut z = start.points.clone();
    let mut traj = schedule.record.then(|| Trajectory {
        times: vec![grid[0]],
        states: vec![z.clone()],
    });
    for (i, w) in grid.windows(2).enumerate() {
        let (ts, te) = (w[0], w[1]);
        let u = net.eval(&z, &vec![ts; n], &vec![te; n], cond)?;
        z.scaled_add((te - ts).abs(), &u);
        ensure_finite(&z, i)?;
        if let Some(tr) = traj.as_mut() {
            tr.times.push(te);
            tr.states.push(z.clone());
        }
    }
    Ok(finish(z, start, cond, traj))
}

/// Noise to data over `[0, 1]` in `steps` equal intervals.
pub fn generate<M: AverageVelocity + ?Sized>(
    net: &M,
    noise: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
) -> Result<SampleBatch> {
    run_average(net, noise, schedule, cond, true)
}

/// Data to noise over `[1, 0]`; one step is `x0 = x1 + u(x1, 1, 0)`.
pub fn invert<M: AverageVelocity + ?Sized>(
    net: &M,
    data: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
) -> Result<SampleBatch> {
    run_average(net, data, schedule, cond, false)
}

/// Inverts under `source` and regenerates under `target` with the same
/// step budget on both legs.
pub fn edit<M: AverageVelocity + ?Sized>(
    net: &M,
    data: &SampleBatch,
    source: Option<&[usize]>,
    target: Option<&[usize]>,
    schedule: Schedule,
) -> Result<SampleBatch> {
    let latent = invert(net, data, schedule, source)?;
    let mut out = generate(net, &latent, schedule, target)?;
    if let (Some(inv), Some(gen)) = (latent.trajectory, out.trajectory.as_mut()) {
        // Keep the full round trip; the latent appears once.
        let mut times = inv.times;
        let mut states = inv.states;
        times.extend(gen.times.drain(1..));
        states.extend(gen.states.drain(1..));
        *gen = Trajectory { times, states };
    }
    Ok(out)
}

/// Round trip under one condition with the per-point squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub batch: SampleBatch,
    pub squared_errors: Vec<f64>,
}

pub fn reconstruct<M: AverageVelocity + ?Sized>(
    net: &M,
    data: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
) -> Result<Reconstruction> {
    let batch = edit(net, data, cond, cond, schedule)?;
    let squared_errors = per_point_squared_error(&data.points, &batch.points);
    Ok(Reconstruction { batch, squared_errors })
}

pub(crate) fn per_point_squared_error(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum())
        .collect()
}

/// Explicit Euler on `dx/dt = v(x, t)` over the ascending grid.
pub fn euler_generate<F: InstantaneousField + ?Sized>(
    field: &F,
    noise: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
) -> Result<SampleBatch> {
    schedule.check()?;
    check_batch(&noise.points, field.data_dim(), cond)?;
    let grid = time_grid(schedule.steps, true);
    let mut z = noise.points.clone();
    let mut traj = schedule.record.then(|| Trajectory {
        times: vec![0.0],
        states: vec![z.clone()],
    });
    for (i, w) in grid.windows(2).enumerate() {
        let v = field.velocity(&z, w[0], cond)?;
        z.scaled_add(w[1] - w[0], &v);
        ensure_finite(&z, i)?;
        if let Some(tr) = traj.as_mut() {
            tr.times.push(w[1]);
            tr.states.push(z.clone());
        }
    }
    Ok(finish(z, noise, cond, traj))
}

/// Reverses the Euler update from `t_s` down to `t_e` using the field at
/// the current (later-time) state: `z ← z - (t_s - t_e) · v(z, t_e)`.
/// Exact only when `v` does not vary between the two states.
pub fn ddim_style_invert<F: InstantaneousField + ?Sized>(
    field: &F,
    data: &SampleBatch,
    schedule: Schedule,
    cond: Option<&[usize]>,
) -> Result<SampleBatch> {
    schedule.check()?;
    check_batch(&data.points, field.data_dim(), cond)?;
    let grid = time_grid(schedule.steps, false);
    let mut z = data.points.clone();
    let mut traj = schedule.record.then(|| Trajectory {
        times: vec![1.0],
        states: vec![z.clone()],
    });
    for (i, w) in grid.windows(2).enumerate() {
        let (ts, te) = (w[0], w[1]);
        let v = field.velocity(&z, te, cond)?;
        z.scaled_add(-(ts - te), &v);
        ensure_finite(&z, i)?;
        if let Some(tr) = traj.as_mut() {
            tr.times.push(te);
            tr.states.push(z.clone());
        }
    }
    Ok(finish(z, data, cond, traj))
}
