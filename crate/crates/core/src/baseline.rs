//! Naive interval-propagation baselines used for tightness comparisons.

use crate::dt::DTSystem;
use crate::error::{check_dim, Error, Result};
use crate::flowpipe::{FlowpipeParams, VectorField};
use crate::interval::{Interval, IntervalBox};
use crate::real::Real;
use crate::tube::{ReachTube, StepInfo, TubeFailure};

/// Per-step box propagation through the one-step map with plain interval
/// arithmetic (layerwise for networks).
pub fn interval_baseline_dt<S: Real>(sys: &DTSystem<S>, x0: &IntervalBox<S>, actions: &[Vec<S>]) -> Result<ReachTube<S>> {
    check_dim(sys.state_dim(), x0.dim(), "initial box")?;
    let mut tube = ReachTube::default();
    tube.push(0, 0.0, 0.0, x0.clone(), StepInfo::default());
    let mut bx = x0.clone();
    for (k, u) in actions.iter().enumerate() {
        match sys.step_box(&bx, u) {
            Ok(b) if !b.is_diverged() => bx = b,
            Ok(_) => {
                tube.failure = Some(TubeFailure::from_error(k + 1, &Error::Diverged("baseline box overflowed".into())));
                break;
            }
            Err(e) => {
                tube.failure = Some(TubeFailure::from_error(k + 1, &e));
                break;
            }
        }
        tube.push(k + 1, (k + 1) as f64, (k + 1) as f64, bx.clone(), StepInfo::default());
    }
    Ok(tube)
}

fn picard_box<S: Real>(field: &VectorField<S>, x: &IntervalBox<S>, guess: &IntervalBox<S>, h: S) -> Result<IntervalBox<S>> {
    let f = field.eval_generic(&guess.dims)?;
    let span = Interval { lo: S::zero(), hi: h };
    Ok(IntervalBox::new(x.dims.iter().zip(&f).map(|(xi, fi)| xi.add(fi.mul(span))).collect()))
}

/// One validated step of the interval Picard operator: an a-priori box `B`
/// with `X + [0,h] f(B) ⊆ B` encloses the segment, and `X + h f(B)` the
/// endpoint.
fn interval_step<S: Real>(
    field: &VectorField<S>,
    x: &IntervalBox<S>,
    params: &FlowpipeParams,
) -> Result<(IntervalBox<S>, IntervalBox<S>, u32)> {
    let h = S::from_f64(params.h);
    let eps = S::from_f64(params.eps_init);
    let mut guess = picard_box(field, x, x, h)?;
    for d in &mut guess.dims {
        *d = d.add(Interval::symmetric(eps));
    }
    let mut ratio = f64::INFINITY;
    for enl in 0..=params.max_enlargements {
        let next = match picard_box(field, x, &guess, h) {
            Ok(b) => b,
            Err(Error::Domain(_)) if enl > 0 => break,
            Err(e) => return Err(e),
        };
        if next.subset_of(&guess) && !next.is_diverged() {
            let f = field.eval_generic(&next.dims)?;
            let end = IntervalBox::new(x.dims.iter().zip(&f).map(|(xi, fi)| xi.add(fi.scale(h))).collect());
            return Ok((next, end, enl));
        }
        ratio = next
            .dims
            .iter()
            .zip(&guess.dims)
            .map(|(a, b)| (a.width() / b.width()).value())
            .fold(0.0, f64::max);
        let k = S::from_f64(params.enlargement);
        guess = IntervalBox::new(
            guess
                .dims
                .iter()
                .zip(&next.dims)
                .map(|(g, n)| {
                    let u = g.hull(n);
                    let r = u.rad() * k + eps;
                    Interval {
                        lo: u.mid() - r,
                        hi: u.mid() + r,
                    }
                })
                .collect(),
        );
    }
    Err(Error::StepFailure { step: 0, ratio })
}

/// Interval Picard flowpipe without polynomial part.
pub fn interval_baseline_ct<S: Real>(field: &VectorField<S>, x0: &IntervalBox<S>, params: &FlowpipeParams) -> Result<ReachTube<S>> {
    params.validate()?;
    check_dim(field.dim(), x0.dim(), "initial box")?;
    let mut tube = ReachTube::default();
    tube.push(0, 0.0, 0.0, x0.clone(), StepInfo::default());
    let mut x = x0.clone();
    for i in 0..params.steps {
        match interval_step(field, &x, params) {
            Ok((seg, end, enl)) => {
                tube.push(
                    i + 1,
                    i as f64 * params.h,
                    (i + 1) as f64 * params.h,
                    seg,
                    StepInfo {
                        enlargements: enl,
                        remainder_rad: 0.0,
                    },
                );
                x = end;
            }
            Err(e) => {
                let e = match e {
                    Error::StepFailure { ratio, .. } => Error::StepFailure { step: i + 1, ratio },
                    e => e,
                };
                tube.failure = Some(TubeFailure::from_error(i + 1, &e));
                break;
            }
        }
    }
    Ok(tube)
}
