//! Conservatism reduction: parallel input splitting and gradient-based
//! refinement of tube volume.
//!
//! Gradients come from forward-mode [`Dual`] evaluation of the same engine
//! code. Every discrete choice (activation stability, remainder
//! enlargements, contraction acceptance) is taken on primal values, so the
//! dual pass follows the branch of the primal pass and the result is the
//! derivative of the selected smooth piece.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{cl_reach, ClosedLoopSpec};
use crate::dt::{dt_reach, DTSystem, DtModel, DtOptions};
use crate::error::{check_dim, Error, Result};
use crate::flowpipe::{ct_reach, FieldKind, FlowpipeParams, VectorField};
use crate::interval::{Interval, IntervalBox, Radius};
use crate::real::{Dual, Real};
use crate::tube::{tube_hull, ReachTube};

/// Upper bound on the number of parts a plan may produce.
pub const MAX_PARTS: usize = 1 << 20;

/// Per-dimension split counts; the parts form an axis-aligned grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub counts: Vec<usize>,
}

impl SplitPlan {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        let plan = Self { counts };
        plan.parts()?;
        Ok(plan)
    }

    pub fn none(dim: usize) -> Self {
        Self { counts: vec![1; dim] }
    }

    /// `k` parts along each of the listed dimensions.
    pub fn on_dims(dim: usize, dims: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![1; dim];
        for &d in dims {
            if d >= dim {
                return Err(Error::Argument(format!("split dimension {d} out of range for {dim}-D box")));
            }
            counts[d] = k;
        }
        Self::new(counts)
    }

    /// Total number of parts, guarded against overflow.
    pub fn parts(&self) -> Result<usize> {
        let mut total: usize = 1;
        for &c in &self.counts {
            if c == 0 {
                return Err(Error::Argument("split counts must be at least 1".into()));
            }
            total = total
                .checked_mul(c)
                .filter(|&t| t <= MAX_PARTS)
                .ok_or_else(|| Error::Argument(format!("split plan exceeds {MAX_PARTS} parts")))?;
        }
        Ok(total)
    }

    /// Parses `2x2x1...` (one count per dimension), `rpy:K` (K parts spread
    /// evenly over the quadrotor attitude dims 6..9, K a perfect cube) or
    /// `uniform:K` (K parts along every dimension).
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse split plan '{text}'"));
        if let Some(k) = text.strip_prefix("rpy:") {
            let k: usize = k.parse().map_err(|_| bad())?;
            let per = (1..=k).find(|c| c * c * c >= k).unwrap_or(1);
            if per * per * per != k {
                return Err(Error::Config(format!("rpy preset needs a cube part count, got {k}")));
            }
            if dim < 9 {
                return Err(Error::Config("rpy preset needs at least 9 state dims".into()));
            }
            return Self::on_dims(dim, &[6, 7, 8], per);
        }
        if let Some(k) = text.strip_prefix("uniform:") {
            let k: usize = k.parse().map_err(|_| bad())?;
            return Self::new(vec![k; dim]);
        }
        let counts = text
            .split('x')
            .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        check_dim(dim, counts.len(), "split plan")?;
        Self::new(counts)
    }
}

/// Grid partition of `x0`, first dimension varying fastest. Cut points are
/// shared between neighbours and the outer endpoints are the original ones,
/// so the union is exactly `x0`.
pub fn split_box<S: Real>(x0: &IntervalBox<S>, plan: &SplitPlan) -> Result<Vec<IntervalBox<S>>> {
    check_dim(x0.dim(), plan.counts.len(), "split plan")?;
    let total = plan.parts()?;
    let cuts: Vec<Vec<S>> = x0
        .dims
        .iter()
        .zip(&plan.counts)
        .map(|(iv, &k)| {
            (0..=k)
                .map(|i| {
                    if i == 0 {
                        iv.lo
                    } else if i == k {
                        iv.hi
                    } else {
                        iv.lo + (iv.hi - iv.lo) * (i as f64 / k as f64)
                    }
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rest = idx;
        let dims = plan
            .counts
            .iter()
            .zip(&cuts)
            .map(|(&k, c)| {
                let i = rest % k;
                rest /= k;
                Interval { lo: c[i], hi: c[i + 1] }
            })
            .collect();
        out.push(IntervalBox::new(dims));
    }
    Ok(out)
}

/// Runs `engine` on every part in parallel and returns the per-step hull,
/// reduced in part order.
pub fn reach_with_splitting<F>(x0: &IntervalBox, plan: &SplitPlan, engine: F) -> Result<ReachTube>
where
    F: Fn(&IntervalBox) -> Result<ReachTube> + Sync,
{
    let parts = split_box(x0, plan)?;
    let tubes = parts.par_iter().map(&engine).collect::<Result<Vec<_>>>()?;
    tube_hull(&tubes)
}

/// A scalar function of a flat parameter vector that can be evaluated on any
/// [`Real`], which is what forward-mode differentiation needs.
pub trait Objective: Sync {
    fn num_params(&self) -> usize;
    fn eval<S: Real>(&self, p: &[S]) -> Result<S>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    ForwardDual,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub value: f64,
    pub grad: Vec<f64>,
    pub method: GradMethod,
    /// Set when the point sits on a branch boundary, where the returned
    /// vector is only a one-sided derivative.
    pub subgradient: bool,
}

/// Tangent lanes per dual evaluation.
pub const LANES: usize = 8;

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged(format!("non-finite {what}")))
    }
}

/// Forward-mode gradient with value and branch-boundary check.
pub fn gradient<O: Objective>(obj: &O, p: &[f64]) -> Result<Gradient> {
    let value = finite(obj.eval(p)?, "objective")?;
    let grad = forward_gradient(obj, p)?;
    let subgradient = on_branch_boundary(obj, p, value, &grad)?;
    Ok(Gradient {
        value,
        grad,
        method: GradMethod::ForwardDual,
        subgradient,
    })
}

/// Bare forward-mode gradient: `ceil(P / LANES)` dual evaluations, run in
/// parallel and concatenated in lane order.
pub fn forward_gradient<O: Objective>(obj: &O, p: &[f64]) -> Result<Vec<f64>> {
    check_dim(obj.num_params(), p.len(), "parameters")?;
    let chunks: Vec<usize> = (0..p.len()).step_by(LANES).collect();
    let parts = chunks
        .par_iter()
        .map(|&start| -> Result<Vec<f64>> {
            let x: Vec<Dual<LANES>> = p
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if i >= start && i < start + LANES {
                        Dual::variable(v, i - start)
                    } else {
                        Dual::constant(v)
                    }
                })
                .collect();
            let y = obj.eval(&x)?;
            let n = LANES.min(p.len() - start);
            Ok(y.d[..n].to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let grad: Vec<f64> = parts.into_iter().flatten().collect();
    for &g in &grad {
        finite(g, "gradient")?;
    }
    Ok(grad)
}

/// Compares one-sided slopes along the gradient direction; a kink shows up
/// as a mismatch far above the curvature term.
fn on_branch_boundary<O: Objective>(obj: &O, p: &[f64], f0: f64, g: &[f64]) -> Result<bool> {
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(false);
    }
    let scale = p.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let d = 1e-7 * scale;
    let at = |s: f64| -> Result<f64> {
        let q: Vec<f64> = p.iter().zip(g).map(|(x, gi)| x + s * d * gi / norm).collect();
        obj.eval(&q)
    };
    let (fp, fm) = (at(1.0)?, at(-1.0)?);
    if !fp.is_finite() || !fm.is_finite() {
        return Ok(true);
    }
    let right = (fp - f0) / d;
    let left = (f0 - fm) / d;
    let noise = 1e-12 * f0.abs().max(1.0) / d;
    Ok((right - left).abs() > 1e-3 * norm + noise)
}

/// Central differences with step `rel * max(|p_i|, 1)`.
pub fn fd_gradient<O: Objective>(obj: &O, p: &[f64], rel: f64) -> Result<Gradient> {
    check_dim(obj.num_params(), p.len(), "parameters")?;
    let value = finite(obj.eval(p)?, "objective")?;
    let grad = (0..p.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let h = rel * p[i].abs().max(1.0);
            let mut q = p.to_vec();
            q[i] = p[i] + h;
            let fp = obj.eval(&q)?;
            q[i] = p[i] - h;
            let fm = obj.eval(&q)?;
            finite((fp - fm) / (2.0 * h), "finite difference")
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Gradient {
        value,
        grad,
        method: GradMethod::FiniteDifference,
        subgradient: false,
    })
}

/// Which inputs of a reach call are differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Center of the initial box; the radius stays fixed.
    X0Center,
    /// Flattened action sequence (DT), held input (CT) or reference
    /// sequence (closed loop).
    Action,
    /// Network parameters in [`crate::neural::MLPNet::params`] layout.
    Weights,
}

fn radius_box<S: Real>(center: &[S], radius: &[f64]) -> Result<IntervalBox<S>> {
    IntervalBox::from_center(center, &Radius::PerDim(radius.iter().map(|&r| S::from_f64(r)).collect()))
}

fn lift_vec<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::from_f64(x)).collect()
}

fn tube_value<S: Real>(t: Result<ReachTube<S>>) -> Result<S> {
    let t = t?;
    if let Some(f) = &t.failure {
        return Err(Error::Diverged(format!("tube failed at step {}: {}", f.step, f.message)));
    }
    Ok(t.predicted_volume())
}

/// Tube volume of a discrete-time reach call.
#[derive(Clone, Debug)]
pub struct DtVolume {
    pub sys: DTSystem,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub opts: DtOptions,
    pub target: Target,
}

impl DtVolume {
    /// Current value of the differentiated inputs.
    pub fn initial_params(&self) -> Result<Vec<f64>> {
        Ok(match self.target {
            Target::X0Center => self.center.clone(),
            Target::Action => self.actions.concat(),
            Target::Weights => match &self.sys.model {
                DtModel::Neural(n) => n.params(),
                DtModel::Analytic(_) => return Err(Error::Argument("analytic map has no weights".into())),
            },
        })
    }

    pub fn unflatten_actions(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let m = self.sys.input_dim().max(1);
        if self.sys.input_dim() == 0 {
            return self.actions.clone();
        }
        p.chunks(m).map(|c| c.to_vec()).collect()
    }
}

impl Objective for DtVolume {
    fn num_params(&self) -> usize {
        match self.target {
            Target::X0Center => self.center.len(),
            Target::Action => self.actions.iter().map(|a| a.len()).sum(),
            Target::Weights => match &self.sys.model {
                DtModel::Neural(n) => n.num_params(),
                DtModel::Analytic(_) => 0,
            },
        }
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
        check_dim(self.num_params(), p.len(), "parameters")?;
        let m = self.sys.input_dim();
        let (sys, center, actions): (DTSystem<S>, Vec<S>, Vec<Vec<S>>) = match self.target {
            Target::X0Center => (self.sys.lift(), p.to_vec(), self.actions.iter().map(|a| lift_vec(a)).collect()),
            Target::Action => (
                self.sys.lift(),
                lift_vec(&self.center),
                if m == 0 {
                    self.actions.iter().map(|a| lift_vec(a)).collect()
                } else {
                    p.chunks(m).map(|c| c.to_vec()).collect()
                },
            ),
            Target::Weights => {
                let net = match &self.sys.model {
                    DtModel::Neural(n) => n.with_params(p),
                    DtModel::Analytic(_) => return Err(Error::Argument("analytic map has no weights".into())),
                };
                (self.sys.with_net(net)?, lift_vec(&self.center), self.actions.iter().map(|a| lift_vec(a)).collect())
            }
        };
        let x0 = radius_box(&center, &self.radius)?;
        tube_value(dt_reach(&sys, &x0, &actions, &self.opts))
    }
}

/// Tube volume of a continuous-time flowpipe.
#[derive(Clone, Debug)]
pub struct CtVolume {
    pub field: VectorField,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub params: FlowpipeParams,
    pub target: Target,
}

impl CtVolume {
    pub fn initial_params(&self) -> Result<Vec<f64>> {
        Ok(match self.target {
            Target::X0Center => self.center.clone(),
            Target::Action => self.field.input.clone(),
            Target::Weights => match &self.field.kind {
                FieldKind::Neural(n) => n.params(),
                FieldKind::Analytic(_) => return Err(Error::Argument("analytic field has no weights".into())),
            },
        })
    }
}

impl Objective for CtVolume {
    fn num_params(&self) -> usize {
        match self.target {
            Target::X0Center => self.center.len(),
            Target::Action => self.field.input.len(),
            Target::Weights => match &self.field.kind {
                FieldKind::Neural(n) => n.num_params(),
                FieldKind::Analytic(_) => 0,
            },
        }
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
        check_dim(self.num_params(), p.len(), "parameters")?;
        let mut field: VectorField<S> = self.field.lift();
        let mut center: Vec<S> = lift_vec(&self.center);
        match self.target {
            Target::X0Center => center = p.to_vec(),
            Target::Action => field.input = p.to_vec(),
            Target::Weights => {
                if let FieldKind::Neural(n) = &self.field.kind {
                    field.kind = FieldKind::Neural(n.with_params(p));
                }
            }
        }
        let x0 = radius_box(&center, &self.radius)?;
        tube_value(ct_reach(&field, &x0, &self.params))
    }
}

/// Tube volume of a closed-loop run. `Action` differentiates the flattened
/// reference sequence, `Weights` the controller.
#[derive(Clone, Debug)]
pub struct ClVolume {
    pub spec: ClosedLoopSpec,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
    pub target: Target,
}

impl ClVolume {
    pub fn initial_params(&self) -> Vec<f64> {
        match self.target {
            Target::X0Center => self.center.clone(),
            Target::Action => self.spec.y_ref.concat(),
            Target::Weights => self.spec.controller.params(),
        }
    }
}

pub(crate) fn lift_spec<S: Real>(spec: &ClosedLoopSpec) -> ClosedLoopSpec<S> {
    ClosedLoopSpec {
        dynamics: spec.dynamics.lift(),
        controller: spec.controller.lift(),
        k: spec.k,
        n_ctl: spec.n_ctl,
        y_ref: spec.y_ref.iter().map(|r| lift_vec(r)).collect(),
        params: spec.params.clone(),
        intervalize_state: spec.intervalize_state,
    }
}

impl Objective for ClVolume {
    fn num_params(&self) -> usize {
        match self.target {
            Target::X0Center => self.center.len(),
            Target::Action => self.spec.y_ref.iter().map(|r| r.len()).sum(),
            Target::Weights => self.spec.controller.num_params(),
        }
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
        check_dim(self.num_params(), p.len(), "parameters")?;
        let mut spec = lift_spec::<S>(&self.spec);
        let mut center: Vec<S> = lift_vec(&self.center);
        match self.target {
            Target::X0Center => center = p.to_vec(),
            Target::Action => {
                let mut off = 0;
                for r in &mut spec.y_ref {
                    let n = r.len();
                    r.copy_from_slice(&p[off..off + n]);
                    off += n;
                }
            }
            Target::Weights => spec.controller = self.spec.controller.with_params(p),
        }
        let x0 = radius_box(&center, &self.radius)?;
        tube_value(cl_reach(&spec, &x0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub iters: usize,
    /// Largest per-coordinate move of the first trial step.
    pub step: f64,
    pub max_backtracks: usize,
    /// Projection box; use infinities for unconstrained coordinates.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl RefineConfig {
    pub fn unconstrained(dim: usize, iters: usize, step: f64) -> Self {
        Self {
            iters,
            step,
            max_backtracks: 30,
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    /// Objective after every iteration, starting with the initial one.
    pub history: Vec<f64>,
    /// True when not a single step was accepted.
    pub no_progress: bool,
}

fn project(p: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((x, &l), &h) in p.iter_mut().zip(lo).zip(hi) {
        *x = x.clamp(l, h);
    }
}

/// Projected gradient descent with Armijo backtracking. The step length
/// doubles after an accepted step and halves on each rejection; the
/// objective never increases.
pub fn gradient_refine<O: Objective>(obj: &O, p0: &[f64], cfg: &RefineConfig) -> Result<RefineResult> {
    check_dim(obj.num_params(), p0.len(), "parameters")?;
    check_dim(p0.len(), cfg.lower.len(), "projection lower bound")?;
    check_dim(p0.len(), cfg.upper.len(), "projection upper bound")?;
    if cfg.lower.iter().zip(&cfg.upper).any(|(l, h)| l > h) {
        return Err(Error::Argument("projection box has lower > upper".into()));
    }
    let mut p = p0.to_vec();
    project(&mut p, &cfg.lower, &cfg.upper);
    let mut g = gradient(obj, &p)?;
    let initial_value = g.value;
    let mut f = g.value;
    let mut history = vec![f];
    let mut accepted = 0usize;
    let gmax = g.grad.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut alpha = if gmax > 0.0 { cfg.step / gmax } else { 0.0 };
    for _ in 0..cfg.iters {
        if g.grad.iter().all(|&x| x == 0.0) {
            break;
        }
        let mut moved = false;
        for _ in 0..=cfg.max_backtracks {
            let mut q: Vec<f64> = p.iter().zip(&g.grad).map(|(x, d)| x - alpha * d).collect();
            project(&mut q, &cfg.lower, &cfg.upper);
            let decrease: f64 = g.grad.iter().zip(p.iter().zip(&q)).map(|(d, (a, b))| d * (a - b)).sum();
            if decrease <= 0.0 {
                break;
            }
            match obj.eval(&q) {
                Ok(fq) if fq.is_finite() && fq <= f - 1e-4 * decrease => {
                    p = q;
                    f = fq;
                    moved = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !moved {
            break;
        }
        accepted += 1;
        history.push(f);
        alpha *= 2.0;
        g = gradient(obj, &p)?;
    }
    if accepted == 0 {
        p = p0.to_vec();
    }
    Ok(RefineResult {
        params: p,
        value: f,
        initial_value,
        history,
        no_progress: accepted == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, MLPNet};
    use crate::systems::{ct_system, dt_system};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    #[test]
    fn split_examples() {
        let b = IntervalBox::new(vec![iv(0.0, 1.0)]);
        assert_eq!(split_box(&b, &SplitPlan::none(1)).unwrap(), vec![b.clone()]);
        let parts = split_box(&b, &SplitPlan::new(vec![2]).unwrap()).unwrap();
        assert_eq!(parts, vec![IntervalBox::new(vec![iv(0.0, 0.5)]), IntervalBox::new(vec![iv(0.5, 1.0)])]);
        let b3 = IntervalBox::new(vec![iv(-1.0, 1.0), iv(0.0, 4.0), iv(2.0, 3.0)]);
        let parts = split_box(&b3, &SplitPlan::new(vec![2, 2, 2]).unwrap()).unwrap();
        assert_eq!(parts.len(), 8);
        let vol = |b: &IntervalBox| b.widths().iter().product::<f64>();
        assert_eq!(parts.iter().map(vol).sum::<f64>(), vol(&b3));
        for p in &parts {
            assert_eq!(p.widths(), vec![1.0, 2.0, 0.5]);
        }
    }

    #[test]
    fn plan_parsing_and_guard() {
        assert_eq!(SplitPlan::parse("2x1x3", 3).unwrap().counts, vec![2, 1, 3]);
        let rpy = SplitPlan::parse("rpy:8", 12).unwrap();
        assert_eq!(rpy.parts().unwrap(), 8);
        assert_eq!(&rpy.counts[6..9], &[2, 2, 2]);
        assert!(SplitPlan::parse("rpy:6", 12).is_err());
        assert!(SplitPlan::parse("2x2", 3).is_err());
        assert!(SplitPlan::new(vec![0]).is_err());
        assert!(SplitPlan::new(vec![usize::MAX, 2]).is_err());
        assert!(SplitPlan::parse("uniform:2", 40).is_err());
    }

    proptest! {
        #[test]
        fn split_union_is_exact(
            lo in proptest::collection::vec(-10.0f64..10.0, 1..4),
            w in proptest::collection::vec(0.0f64..5.0, 4),
            k in proptest::collection::vec(1usize..5, 4),
        ) {
            let n = lo.len();
            let b = IntervalBox::new((0..n).map(|i| iv(lo[i], lo[i] + w[i])).collect());
            let plan = SplitPlan::new(k[..n].to_vec()).unwrap();
            let parts = split_box(&b, &plan).unwrap();
            prop_assert_eq!(parts.len(), plan.parts().unwrap());
            let mut hull = parts[0].clone();
            for p in &parts {
                prop_assert!(p.subset_of(&b));
                hull = hull.hull(p).unwrap();
            }
            prop_assert_eq!(hull, b);
        }
    }

    #[test]
    fn single_split_equals_direct_call() {
        let sys = DTSystem::analytic(dt_system("affine").unwrap());
        let x0 = IntervalBox::new(vec![iv(0.0, 0.2), iv(-0.1, 0.1)]);
        let acts = vec![vec![0.3]; 6];
        let engine = |b: &IntervalBox| dt_reach(&sys, b, &acts, &DtOptions::default());
        let direct = engine(&x0).unwrap();
        let split = reach_with_splitting(&x0, &SplitPlan::none(2), engine).unwrap();
        assert_eq!(direct, split);
    }

    #[test]
    fn splitting_tightens_nonlinear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MLPNet::random(&[3, 16, 2], Activation::Tanh, &mut rng).unwrap();
        let sys = DTSystem::neural(net).unwrap();
        let x0 = IntervalBox::new(vec![iv(-0.5, 0.5), iv(-0.5, 0.5)]);
        let acts = vec![vec![0.2]; 5];
        let engine = |b: &IntervalBox| dt_reach(&sys, b, &acts, &DtOptions::default());
        let v1 = reach_with_splitting(&x0, &SplitPlan::none(2), engine).unwrap();
        let v4 = reach_with_splitting(&x0, &SplitPlan::new(vec![2, 2]).unwrap(), engine).unwrap();
        let v16 = reach_with_splitting(&x0, &SplitPlan::new(vec![4, 4]).unwrap(), engine).unwrap();
        assert!(v4.volume() < v1.volume());
        for k in 0..v1.len() {
            assert!(v4.steps[k].bx.subset_of(&v1.steps[k].bx) || v4.steps[k].bx.volume_proxy() <= v1.steps[k].bx.volume_proxy());
            assert!(v16.steps[k].bx.volume_proxy() <= v4.steps[k].bx.volume_proxy() + 1e-12);
        }
    }

    #[test]
    fn zero_field_gradient_is_zero() {
        let field = VectorField::analytic(ct_system("zero").unwrap(), vec![]).unwrap();
        let obj = CtVolume {
            field,
            center: vec![0.3, -0.2],
            radius: vec![0.1, 0.05],
            params: FlowpipeParams { steps: 10, ..Default::default() },
            target: Target::X0Center,
        };
        let g = gradient(&obj, &obj.center).unwrap();
        assert_eq!(g.grad, vec![0.0, 0.0]);
        assert!(!g.subgradient);
        let r = gradient_refine(&obj, &obj.center, &RefineConfig::unconstrained(2, 5, 0.1)).unwrap();
        assert_eq!(r.params, obj.center);
        assert!(r.no_progress);
    }

    /// `x' = a x + u` in 1-D: every step scales the width by `|a|`, so the
    /// predicted volume is `2 r Σ_{t=1..H} |a|^t`, linear in the radius.
    struct RadiusObjective {
        a: f64,
        h: usize,
    }

    impl Objective for RadiusObjective {
        fn num_params(&self) -> usize {
            1
        }
        fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
            let sys = crate::systems::AffineSystem::new(
                crate::linalg::Mat::from_rows(&[vec![self.a]]),
                crate::linalg::Mat::from_rows(&[vec![1.0]]),
                vec![0.0],
            )?;
            let sys = DTSystem::<S>::analytic(crate::systems::DtAnalytic::Affine(sys));
            let x0 = IntervalBox::from_center(&[S::from_f64(0.4)], &Radius::Uniform(p[0]))?;
            let acts = vec![vec![S::from_f64(0.1)]; self.h];
            tube_value(dt_reach(&sys, &x0, &acts, &DtOptions::default()))
        }
    }

    #[test]
    fn affine_radius_sensitivity_is_closed_form() {
        for (a, h) in [(1.0, 7usize), (0.5, 4), (-0.9, 5)] {
            let obj = RadiusObjective { a, h };
            let g = gradient(&obj, &[0.05]).unwrap();
            let expect: f64 = 2.0 * (1..=h).map(|t| a.abs().powi(t as i32)).sum::<f64>();
            assert!((g.grad[0] - expect).abs() < 1e-12 * expect, "{a}: {} vs {expect}", g.grad[0]);
            if a == 1.0 {
                assert_eq!(g.grad[0], 2.0 * h as f64);
            }
            let fd = fd_gradient(&obj, &[0.05], 1e-5).unwrap();
            assert!((fd.grad[0] - g.grad[0]).abs() < 1e-6 * expect);
        }
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn relu_net_weight_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MLPNet::random(&[3, 6, 2], Activation::Relu, &mut rng).unwrap();
        let obj = DtVolume {
            sys: DTSystem::neural(net).unwrap(),
            center: vec![0.2, -0.1],
            radius: vec![0.05, 0.05],
            actions: vec![vec![0.3], vec![-0.2], vec![0.1]],
            opts: DtOptions::default(),
            target: Target::Weights,
        };
        let p = obj.initial_params().unwrap();
        let g = gradient(&obj, &p).unwrap();
        let fd = fd_gradient(&obj, &p, 1e-5).unwrap();
        assert!(rel_err(&g.grad, &fd.grad) < 1e-4, "{:?}\n{:?}", g.grad, fd.grad);
        assert_eq!(g.value, fd.value);
    }

    #[test]
    fn quadratic_refine_reaches_projected_minimizer() {
        struct Quad;
        impl Objective for Quad {
            fn num_params(&self) -> usize {
                2
            }
            fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
                Ok((p[0] - 2.0) * (p[0] - 2.0) + (p[1] + 0.5) * (p[1] + 0.5) * 3.0)
            }
        }
        let cfg = RefineConfig {
            iters: 20,
            step: 1.0,
            max_backtracks: 30,
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        };
        let r = gradient_refine(&Quad, &[0.0, 0.5], &cfg).unwrap();
        assert!((r.params[0] - 1.0).abs() < 1e-6 && (r.params[1] + 0.5).abs() < 1e-6, "{:?}", r.params);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(!r.no_progress);
    }
}
