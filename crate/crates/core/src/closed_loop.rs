//! Reachability under zero-order-hold neural feedback.
//!
//! The flowpipe runs on the stacked state `(x, u)` with `u̇ = 0`. At every
//! control boundary the controller is certified on the state rows of the
//! current TM and its output replaces the input rows, so the control shares
//! the state's domain variables.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flowpipe::{advance, FlowpipeParams, SymbolicState, VectorField};
use crate::interval::{Interval, IntervalBox};
use crate::linalg::Mat;
use crate::neural::{ctl_crown, MLPNet};
use crate::ode::integrate;
use crate::real::Real;
use crate::taylor::{build_linear_tm, LinearTM};
use crate::tube::{ReachTube, StepInfo, TubeFailure};

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopSpec<S = f64> {
    /// Plant over `(x, u)`; its held input is ignored.
    pub dynamics: VectorField<S>,
    /// Maps `(x, y_ref)` to `u`.
    pub controller: MLPNet<S>,
    /// Atomic steps per control interval.
    pub k: usize,
    pub n_ctl: usize,
    /// One reference per control step, or empty.
    pub y_ref: Vec<Vec<S>>,
    /// `steps` is ignored; `h` is the atomic step.
    pub params: FlowpipeParams,
    /// Ablation: certify the controller on the state's box instead of its TM.
    pub intervalize_state: bool,
}

/// Serializable knobs for a closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub k: usize,
    pub n_ctl: usize,
    #[serde(default)]
    pub y_ref: Vec<Vec<f64>>,
}

impl<S: Real> ClosedLoopSpec<S> {
    pub fn new(dynamics: VectorField<S>, controller: MLPNet<S>, k: usize, n_ctl: usize, params: FlowpipeParams) -> Self {
        Self {
            dynamics,
            controller,
            k,
            n_ctl,
            y_ref: Vec::new(),
            params,
            intervalize_state: false,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn control_interval(&self) -> f64 {
        self.k as f64 * self.params.h
    }

    pub fn reference(&self, i: usize) -> &[S] {
        self.y_ref.get(i).map(|r| r.as_slice()).unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.k == 0 {
            return Err(Error::Config("control interval needs at least one atomic step".into()));
        }
        if self.dynamics.augmented {
            return Err(Error::Config("closed-loop plant must not be pre-augmented".into()));
        }
        check_dim(self.input_dim(), self.controller.output_dim(), "controller output")?;
        if !self.y_ref.is_empty() {
            check_dim(self.n_ctl, self.y_ref.len(), "reference sequence")?;
        }
        let ref_dim = self.y_ref.first().map(|r| r.len()).unwrap_or(0);
        if self.y_ref.iter().any(|r| r.len() != ref_dim) {
            return Err(Error::Config("references must share one dimension".into()));
        }
        check_dim(self.state_dim() + ref_dim, self.controller.input_dim(), "controller input")
    }
}

fn select_rows<S: Real>(tm: &LinearTM<S>, start: usize, len: usize) -> LinearTM<S> {
    let cols = tm.a.cols();
    let mut a = Mat::zeros(len, cols);
    for i in 0..len {
        a.row_mut(i).copy_from_slice(tm.a.row(start + i));
    }
    LinearTM {
        c: tm.c[start..start + len].to_vec(),
        a,
        rem: IntervalBox::new(tm.rem.dims[start..start + len].to_vec()),
        horizon: tm.horizon,
    }
}

/// Replaces the input rows of `seed` with the certified control. With a
/// symbolic window the control remainder becomes the newest `w` variable of
/// its row, which no state row references at a boundary.
pub fn impose_control<S: Real>(
    spec: &ClosedLoopSpec<S>,
    seed: &LinearTM<S>,
    sym: &SymbolicState<S>,
    i: usize,
) -> Result<LinearTM<S>> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let x_tm = select_rows(seed, 0, n);
    let r = spec.reference(i);
    let ctl = if spec.intervalize_state {
        let bx = ctl_crown(&build_linear_tm(&x_tm.range())?, &spec.controller, r)?.range();
        let mut t = LinearTM::from_parts(bx.center(), &Mat::zeros(m, seed.nz()));
        t.rem = IntervalBox::new(bx.dims.iter().map(|d| d.shift(-d.mid())).collect());
        t
    } else {
        ctl_crown(&x_tm, &spec.controller, r)?
    };
    if !ctl.is_finite() {
        return Err(Error::Diverged("control enclosure diverged".into()));
    }
    let mut out = seed.clone();
    for j in 0..m {
        let row = n + j;
        out.a.row_mut(row).copy_from_slice(ctl.a.row(j));
        out.c[row] = ctl.c[j];
        let rem = ctl.rem.dims[j];
        if sym.window > 0 {
            let col = sym.nz0 + row;
            debug_assert!((0..out.dim()).all(|k| k == row || out.a[(k, col)] == S::zero()));
            out.c[row] += rem.mid();
            out.a[(row, col)] = rem.rad();
            out.rem.dims[row] = Interval::zero();
        } else {
            out.rem.dims[row] = rem;
        }
    }
    Ok(out)
}

/// Closed-loop tube over the stacked `(x, u)` state, one box per atomic step
/// plus the initial boundary.
pub fn cl_reach<S: Real>(spec: &ClosedLoopSpec<S>, x0: &IntervalBox<S>) -> Result<ReachTube<S>> {
    spec.validate()?;
    let n = spec.state_dim();
    let m = spec.input_dim();
    check_dim(n, x0.dim(), "initial box")?;
    let field = spec.dynamics.clone().into_augmented();
    let nb = n + m;
    let base = build_linear_tm(x0)?;
    let mut aug = LinearTM::from_parts(
        base.c.iter().copied().chain((0..m).map(|_| S::zero())).collect(),
        &base.a_vars().transpose().hcat(&Mat::zeros(n, m)).transpose(),
    );
    aug.rem = IntervalBox::point(&vec![S::zero(); nb]);
    let mut sym = SymbolicState::new(n, nb, spec.params.window);
    let mut seed = sym.pad(&aug);
    let mut tube = ReachTube::default();
    let h = spec.params.h;
    let fail = |tube: &mut ReachTube<S>, step: usize, e: Error| {
        let e = match e {
            Error::StepFailure { ratio, .. } => Error::StepFailure { step, ratio },
            e => e,
        };
        tube.failure = Some(TubeFailure::from_error(step, &e));
    };
    'outer: for i in 0..spec.n_ctl {
        seed = match impose_control(spec, &seed, &sym, i) {
            Ok(s) => s,
            Err(e) => {
                fail(&mut tube, i * spec.k + usize::from(i > 0), e);
                break;
            }
        };
        // the held input cannot leave its boundary enclosure
        let held: Vec<Interval<S>> = seed.range().dims[n..].to_vec();
        if i == 0 {
            tube.push(0, 0.0, 0.0, seed.range(), StepInfo::default());
        }
        for j in 0..spec.k {
            let step = i * spec.k + j;
            match advance(&field, &seed, &sym, &spec.params) {
                Ok((mut bx, info, next, nsym)) => {
                    for (d, u) in bx.dims[n..].iter_mut().zip(&held) {
                        *d = Interval {
                            lo: d.lo.max(u.lo),
                            hi: d.hi.min(u.hi),
                        };
                    }
                    tube.push(step + 1, step as f64 * h, (step + 1) as f64 * h, bx, info);
                    seed = next;
                    sym = nsym;
                }
                Err(e) => {
                    fail(&mut tube, step + 1, e);
                    break 'outer;
                }
            }
        }
    }
    Ok(tube)
}

/// Zero-order-hold simulation of the exact closed loop. Returns the stacked
/// `(x, u)` state at every atomic step boundary, where `u` is the input held
/// over the interval ending at that boundary (the first input at step 0).
pub fn simulate(spec: &ClosedLoopSpec, x0: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let h = spec.params.h;
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(spec.n_ctl * spec.k + 1);
    for i in 0..spec.n_ctl {
        let mut inp = x.clone();
        inp.extend_from_slice(spec.reference(i));
        let u = spec.controller.forward(&inp);
        if i == 0 {
            out.push(x.iter().chain(&u).copied().collect());
        }
        let times: Vec<f64> = (1..=spec.k).map(|j| j as f64 * h).collect();
        let err = std::cell::Cell::new(None);
        let traj = integrate(
            |_, s| match spec.dynamics.eval_with(s, &u) {
                Ok(d) => d,
                Err(e) => {
                    err.set(Some(e));
                    vec![f64::NAN; s.len()]
                }
            },
            0.0,
            &x,
            &times,
            tol,
        );
        if let Some(e) = err.take() {
            return Err(e);
        }
        let traj = traj?;
        for s in &traj {
            out.push(s.iter().chain(&u).copied().collect());
        }
        x = traj.last().cloned().unwrap_or(x);
    }
    Ok(out)
}
