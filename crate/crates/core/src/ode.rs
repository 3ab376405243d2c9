//! Numerical integrators used as ground truth for soundness checks and as
//! the differentiable rollout proxy for training.

use crate::error::{Error, Result};
use crate::real::Real;

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive integration of `ẋ = f(t, x)` from `(t0, x0)`, returning the
/// state at each of the ascending `times`. `tol` bounds the local error
/// relative to `1 + |x|` per component.
pub fn integrate<F>(f: F, t0: f64, x0: &[f64], times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut t = t0;
    let mut x = x0.to_vec();
    let mut h = 1e-3;
    let mut out = Vec::with_capacity(times.len());
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    for &target in times {
        if target < t {
            return Err(Error::Argument("output times must be ascending".into()));
        }
        while t < target {
            let step = h.min(target - t);
            let last = step == target - t;
            k[0] = f(t, &x);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = x[i];
                    for j in 0..s {
                        acc += step * A[s][j] * k[j][i];
                    }
                    tmp[i] = acc;
                }
                k[s] = f(t + C[s] * step, &tmp);
            }
            let mut err = 0.0f64;
            let mut x5 = vec![0.0; n];
            for i in 0..n {
                let mut hi = x[i];
                let mut lo = x[i];
                for s in 0..7 {
                    hi += step * B5[s] * k[s][i];
                    lo += step * B4[s] * k[s][i];
                }
                x5[i] = hi;
                err = err.max((hi - lo).abs() / (tol * (1.0 + x[i].abs().max(hi.abs()))));
            }
            if !err.is_finite() {
                return Err(Error::Diverged(format!("integrator blew up at t={t}")));
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                x = x5;
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * fac;
            if h < 1e-14 {
                return Err(Error::Diverged(format!("step size underflow at t={t}")));
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// One classical Runge-Kutta step, generic so it can be differentiated.
pub fn rk4_step<S: Real, F>(f: &F, x: &[S], h: S) -> Vec<S>
where
    F: Fn(&[S]) -> Vec<S>,
{
    let add = |a: &[S], b: &[S], s: S| -> Vec<S> { a.iter().zip(b).map(|(&p, &q)| p + q * s).collect() };
    let half = h * 0.5;
    let k1 = f(x);
    let k2 = f(&add(x, &k1, half));
    let k3 = f(&add(x, &k2, half));
    let k4 = f(&add(x, &k3, h));
    (0..x.len())
        .map(|i| x[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let times: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
        let xs = integrate(|_, x| vec![-x[0]], 0.0, &[1.0], &times, 1e-10).unwrap();
        for (t, x) in times.iter().zip(&xs) {
            assert!((x[0] - (-t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let xs = integrate(|_, x| vec![x[1], -x[0]], 0.0, &[1.0, 0.0], &[10.0], 1e-10).unwrap();
        assert!((xs[0][0] - 10f64.cos()).abs() < 1e-8);
        assert!((xs[0][1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let f = |x: &[f64]| vec![-x[0]];
        let err = |h: f64| {
            let mut x = vec![1.0];
            let n = (1.0 / h).round() as usize;
            for _ in 0..n {
                x = rk4_step(&f, &x, h);
            }
            (x[0] - (-1f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "{ratio}");
    }

    #[test]
    fn blow_up_is_reported() {
        assert!(integrate(|_, x| vec![x[0] * x[0]], 0.0, &[10.0], &[1.0], 1e-10).is_err());
    }
}
