//! Adaptive Dormand–Prince 5(4) integration of `dy/dt = f(t, y)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 100_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (equal to the last row of `A`).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates from `t0` to `t1` (either direction) and returns `y(t1)`.
pub fn integrate<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, tol: Tolerance) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let span = t1 - t0;
    if span == 0.0 || n == 0 {
        return Ok(y);
    }
    let dir = span.signum();
    let mut t = t0;
    let mut h = dir * (span.abs() * 1e-2).max(1e-6).min(span.abs());
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    f(t, &y, &mut k[0]);

    for _ in 0..tol.max_steps {
        let remaining = t1 - t;
        if remaining * dir <= 0.0 {
            return Ok(y);
        }
        if (h - remaining) * dir > 0.0 {
            h = remaining;
        }
        for s in 1..7 {
            let (done, rest) = k.split_at_mut(s);
            for i in 0..n {
                let incr: f64 = done.iter().enumerate().map(|(j, kj)| A[s][j] * kj[i]).sum();
                tmp[i] = y[i] + h * incr;
            }
            f(t + C[s] * h, &tmp, &mut rest[0]);
        }
        let mut err = 0.0_f64;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut hi = 0.0;
            let mut lo = 0.0;
            for s in 0..7 {
                hi += B5[s] * k[s][i];
                lo += B4[s] * k[s][i];
            }
            y5[i] = y[i] + h * hi;
            let scale = tol.atol + tol.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((h * (hi - lo)).abs() / scale);
        }
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("integrator state at t = {t}")));
        }
        if err <= 1.0 {
            t += h;
            y = y5;
            // FSAL: the last stage is f(t + h, y5).
            k.swap(0, 6);
            if (t1 - t) * dir <= 0.0 || (t1 - t).abs() <= 1e-15 * t1.abs().max(1.0) {
                return Ok(y);
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(Error::NonFinite(format!("integrator step underflow at t = {t}")));
        }
    }
    Err(Error::NonFinite(format!("integrator exceeded {} steps", tol.max_steps)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let y = integrate(|_, y, dy| dy[0] = -2.0 * y[0], &[1.0], 0.0, 1.5, Tolerance::default()).unwrap();
        assert!((y[0] - (-3.0_f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn backward_integration_inverts_forward() {
        let f = |t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0] + t.sin();
        };
        let fwd = integrate(f, &[0.3, -0.7], 0.1, 0.9, Tolerance::default()).unwrap();
        let back = integrate(f, &fwd, 0.9, 0.1, Tolerance::default()).unwrap();
        assert!((back[0] - 0.3).abs() < 1e-9 && (back[1] + 0.7).abs() < 1e-9);
    }

    #[test]
    fn zero_span_is_identity() {
        let y = integrate(|_, _, dy| dy[0] = 1.0, &[4.0], 0.5, 0.5, Tolerance::default()).unwrap();
        assert_eq!(y, vec![4.0]);
    }
}
