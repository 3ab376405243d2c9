//! Reachability-aware sampling MPC: a cross-entropy action search scored by
//! stage cost plus a penalty on the certified tube's constraint margins,
//! gradient refinement of the best candidate, and a receding-horizon loop
//! that executes plans on a disturbed simulator.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::ClosedLoopSpec;
use crate::dt::{dt_reach, DTSystem, DtOptions};
use crate::error::{check_dim, Error, Result};
use crate::interval::{IntervalBox, Radius};
use crate::ode::rk4_step;
use crate::real::Real;
use crate::refine::{gradient_refine, Objective, RefineConfig};
use crate::tube::ReachTube;

/// Margin assigned to every step a tube failed to certify.
pub const DIVERGED_MARGIN: f64 = -1e3;
/// Objective of a plan whose nominal rollout is not finite.
pub const INVALID_OBJECTIVE: f64 = 1e12;

/// Safety functional over boxes; a margin `G >= 0` means every state of the
/// box is safe. `dims` selects the state coordinates the shape lives in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Constraint {
    /// Unsafe set `{n·x > b}`.
    HalfspaceAvoid { dims: Vec<usize>, normal: Vec<f64>, offset: f64 },
    /// Unsafe open ball.
    SphereAvoid { dims: Vec<usize>, center: Vec<f64>, radius: f64 },
    /// Safe set is the box `[lo, hi]`.
    BoxStayIn { dims: Vec<usize>, lo: Vec<f64>, hi: Vec<f64> },
    /// Product of the box widths over `dims` stays below `max`.
    MaxVolume { dims: Vec<usize>, max: f64 },
}

pub const CONSTRAINT_KINDS: &[&str] = &["halfspace-avoid", "sphere-avoid", "box-stay-in", "max-volume"];

impl Constraint {
    pub fn dims(&self) -> &[usize] {
        match self {
            Constraint::HalfspaceAvoid { dims, .. }
            | Constraint::SphereAvoid { dims, .. }
            | Constraint::BoxStayIn { dims, .. }
            | Constraint::MaxVolume { dims, .. } => dims,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let d = self.dims();
        if d.is_empty() || d.iter().any(|&i| i >= n) {
            return Err(Error::Config(format!("constraint dims {d:?} outside a {n}-dimensional state")));
        }
        match self {
            Constraint::HalfspaceAvoid { normal, .. } => check_dim(d.len(), normal.len(), "halfspace normal"),
            Constraint::SphereAvoid { center, radius, .. } => {
                if !(*radius >= 0.0) {
                    return Err(Error::Config("sphere radius must be non-negative".into()));
                }
                check_dim(d.len(), center.len(), "sphere center")
            }
            Constraint::BoxStayIn { lo, hi, .. } => {
                check_dim(d.len(), lo.len(), "stay-in lower bound")?;
                check_dim(d.len(), hi.len(), "stay-in upper bound")?;
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::Config("stay-in box has lo > hi".into()));
                }
                Ok(())
            }
            Constraint::MaxVolume { max, .. } => {
                if !(*max >= 0.0) {
                    return Err(Error::Config("volume bound must be non-negative".into()));
                }
                Ok(())
            }
        }
    }

    /// Worst-case margin over the box.
    pub fn margin<S: Real>(&self, bx: &IntervalBox<S>) -> S {
        let iv = |i: usize| bx.dims[i];
        match self {
            Constraint::HalfspaceAvoid { dims, normal, offset } => {
                let mut top = S::zero();
                for (&i, &n) in dims.iter().zip(normal) {
                    let d = iv(i);
                    top += if n >= 0.0 { d.hi * n } else { d.lo * n };
                }
                -top + *offset
            }
            Constraint::SphereAvoid { dims, center, radius } => {
                let mut d2 = S::zero();
                for (&i, &c) in dims.iter().zip(center) {
                    let d = iv(i);
                    let gap = if d.lo.value() > c {
                        d.lo - c
                    } else if d.hi.value() < c {
                        -(d.hi - c)
                    } else {
                        S::zero()
                    };
                    d2 += gap * gap;
                }
                let dist = if d2.value() > 0.0 { d2.sqrt() } else { S::zero() };
                dist - *radius
            }
            Constraint::BoxStayIn { dims, lo, hi } => {
                let mut m: Option<S> = None;
                for ((&i, &l), &h) in dims.iter().zip(lo).zip(hi) {
                    let d = iv(i);
                    let v = (d.lo - l).min(-(d.hi - h));
                    m = Some(match m {
                        Some(a) => a.min(v),
                        None => v,
                    });
                }
                m.unwrap_or_else(S::zero)
            }
            Constraint::MaxVolume { dims, max } => {
                let mut v = S::one();
                for &i in dims {
                    v *= iv(i).width();
                }
                -v + *max
            }
        }
    }

    pub fn point_margin(&self, x: &[f64]) -> f64 {
        self.margin(&IntervalBox::point(x))
    }
}

/// Quadratic tracking cost `Σ q_i (x_i - g_i)^2 + Σ r_j u_j^2` per step, with
/// the final state's tracking term weighted by `1 + terminal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub goal: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default)]
    pub terminal: f64,
}

impl StageCost {
    fn track<S: Real>(&self, x: &[S]) -> S {
        let mut c = S::zero();
        for ((&xi, &g), &q) in x.iter().zip(&self.goal).zip(&self.q) {
            if q != 0.0 {
                let e = xi - g;
                c += e * e * q;
            }
        }
        c
    }

    fn effort<S: Real>(&self, u: &[S]) -> S {
        let mut c = S::zero();
        for (&ui, &r) in u.iter().zip(&self.r) {
            if r != 0.0 {
                c += ui * ui * r;
            }
        }
        c
    }
}

/// A finite-horizon planning problem over a DT model.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanProblem {
    pub sys: DTSystem,
    pub cost: StageCost,
    pub constraints: Vec<Constraint>,
    /// Weight `C` of the constraint penalty.
    pub penalty: f64,
    pub horizon: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    /// Radius of the initial-state box. Zero plans on the nominal rollout.
    pub eps: f64,
    pub window: usize,
}

impl PlanProblem {
    pub fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.horizon * self.input_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        if self.horizon == 0 {
            return Err(Error::Config("planning horizon must be at least 1".into()));
        }
        check_dim(m, self.u_lo.len(), "action lower bound")?;
        check_dim(m, self.u_hi.len(), "action upper bound")?;
        if self.u_lo.iter().zip(&self.u_hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h)) {
            return Err(Error::Config("action box must be bounded with lo <= hi".into()));
        }
        check_dim(n, self.cost.goal.len(), "cost goal")?;
        check_dim(n, self.cost.q.len(), "cost state weights")?;
        check_dim(m, self.cost.r.len(), "cost action weights")?;
        if !(self.eps >= 0.0 && self.penalty >= 0.0) {
            return Err(Error::Config("eps and penalty must be non-negative".into()));
        }
        for c in &self.constraints {
            c.validate(n)?;
        }
        Ok(())
    }

    fn clip(&self, p: &mut [f64]) {
        let m = self.input_dim();
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.u_lo[i % m], self.u_hi[i % m]);
        }
    }

    /// Objective over flattened actions, generic for differentiation.
    pub fn objective_generic<S: Real>(&self, x0: &[f64], flat: &[S]) -> Result<S> {
        Ok(self.evaluate_generic(x0, flat)?.0)
    }

    /// `(objective, tube, per-step minimum margins)`.
    fn evaluate_generic<S: Real>(&self, x0: &[f64], flat: &[S]) -> Result<(S, Option<ReachTube<S>>, Vec<f64>)> {
        let (n, m) = (self.state_dim(), self.input_dim());
        check_dim(n, x0.len(), "plan state")?;
        check_dim(self.num_params(), flat.len(), "flattened actions")?;
        let sys: DTSystem<S> = self.sys.lift();
        let acts: Vec<Vec<S>> = flat.chunks(m).map(|c| c.to_vec()).collect();
        let xs: Vec<S> = x0.iter().map(|&v| S::from_f64(v)).collect();
        let nominal = sys.rollout(&xs, &acts)?;
        if nominal.iter().flatten().any(|v| !v.is_finite()) {
            return Ok((S::from_f64(INVALID_OBJECTIVE), None, vec![DIVERGED_MARGIN; self.horizon]));
        }
        let mut obj = S::zero();
        for (t, u) in acts.iter().enumerate() {
            let x = &nominal[t + 1];
            let mut c = self.cost.track(x) + self.cost.effort(u);
            if t + 1 == self.horizon && self.cost.terminal != 0.0 {
                c += self.cost.track(x) * self.cost.terminal;
            }
            obj += c;
        }
        let tube = if self.eps > 0.0 {
            let bx = IntervalBox::from_center(&xs, &Radius::Uniform(S::from_f64(self.eps)))?;
            let opts = DtOptions {
                window: self.window,
                rebuild_from_box: false,
            };
            dt_reach(&sys, &bx, &acts, &opts)?
        } else {
            let mut t = ReachTube::default();
            for (k, x) in nominal.iter().enumerate() {
                t.push(k, k as f64, k as f64, IntervalBox::point(x), Default::default());
            }
            t
        };
        let mut margins = Vec::with_capacity(self.horizon);
        let mut pen = S::zero();
        for t in 1..=self.horizon {
            match tube.steps.get(t) {
                Some(step) => {
                    let mut worst = f64::INFINITY;
                    for c in &self.constraints {
                        let g = c.margin(&step.bx);
                        worst = worst.min(g.value());
                        if g.value() < 0.0 {
                            pen -= g;
                        }
                    }
                    margins.push(worst);
                }
                None => {
                    pen += S::from_f64(-DIVERGED_MARGIN * self.constraints.len().max(1) as f64);
                    margins.push(DIVERGED_MARGIN);
                }
            }
        }
        Ok((obj + pen * self.penalty, Some(tube), margins))
    }

    /// Scores an action sequence and keeps the pieces the MPC log needs.
    pub fn evaluate(&self, x0: &[f64], actions: &[Vec<f64>]) -> Result<PlanEval> {
        let flat: Vec<f64> = actions.iter().flatten().copied().collect();
        let (objective, tube, margins) = self.evaluate_generic(x0, &flat)?;
        let tube = tube.unwrap_or_default();
        let diverged = tube.failure.is_some() || tube.len() < self.horizon + 1;
        Ok(PlanEval {
            objective,
            tube_volume: tube.predicted_volume(),
            margins,
            tube,
            diverged,
        })
    }
}

/// `O(u) = Σ_t c(x̂_{t+1}, u_t) + C Σ_t max(0, -G(R_t))`.
pub fn plan_objective(problem: &PlanProblem, x0: &[f64], actions: &[Vec<f64>]) -> Result<f64> {
    Ok(problem.evaluate(x0, actions)?.objective)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanEval {
    pub objective: f64,
    pub tube: ReachTube,
    pub tube_volume: f64,
    /// Smallest constraint margin per planned step (`+inf` without
    /// constraints).
    pub margins: Vec<f64>,
    pub diverged: bool,
}

impl PlanEval {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

struct PlanObj<'a> {
    problem: &'a PlanProblem,
    x0: &'a [f64],
}

impl Objective for PlanObj<'_> {
    fn num_params(&self) -> usize {
        self.problem.num_params()
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
        self.problem.objective_generic(self.x0, p)
    }
}

/// Cross-entropy search settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iters: usize,
    /// Per action coordinate; empty means the center of the action box.
    #[serde(default)]
    pub init_mean: Vec<f64>,
    pub init_std: f64,
    /// Weight of the previous distribution in each refit.
    pub smoothing: f64,
    /// Gradient steps on the best candidate after the last iteration.
    pub refine_iters: usize,
    pub refine_step: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            population: 256,
            elite_frac: 0.1,
            iters: 5,
            init_mean: Vec::new(),
            init_std: 0.5,
            smoothing: 0.5,
            refine_iters: 5,
            refine_step: 0.05,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_frac).ceil() as usize).clamp(1, self.population.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 || self.iters == 0 {
            return Err(Error::Config("population and iterations must be positive".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(Error::Config("elite fraction must lie in (0, 1]".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("initial std must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub actions: Vec<Vec<f64>>,
    pub eval: PlanEval,
    /// Best objective after each CEM iteration.
    pub iter_best: Vec<f64>,
    /// Objective of the CEM winner before gradient refinement.
    pub cem_best: f64,
    pub refined: bool,
    /// Every scored candidate had a diverged tube.
    pub all_diverged: bool,
}

/// CEM over `U^H` from `x0`, then projected gradient refinement of the best
/// candidate. Candidates are drawn sequentially from the seeded generator and
/// scored in parallel, so the plan depends only on the seed.
pub fn plan_cem(problem: &PlanProblem, sampler: &SamplerConfig, x0: &[f64]) -> Result<Plan> {
    problem.validate()?;
    sampler.validate()?;
    check_dim(problem.state_dim(), x0.len(), "plan state")?;
    let m = problem.input_dim();
    let d = problem.num_params();
    let mut mean: Vec<f64> = if sampler.init_mean.is_empty() {
        (0..d).map(|i| 0.5 * (problem.u_lo[i % m] + problem.u_hi[i % m])).collect()
    } else if sampler.init_mean.len() == d {
        sampler.init_mean.clone()
    } else if sampler.init_mean.len() == m {
        (0..d).map(|i| sampler.init_mean[i % m]).collect()
    } else {
        return Err(Error::Dimension {
            expected: d,
            got: sampler.init_mean.len(),
            context: "sampler initial mean",
        });
    };
    problem.clip(&mut mean);
    let floor: Vec<f64> = (0..d).map(|i| 1e-3 * (problem.u_hi[i % m] - problem.u_lo[i % m]).max(1e-9)).collect();
    let mut std = vec![sampler.init_std; d];
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let n_elite = sampler.elites();
    let score = |p: &Vec<f64>| -> (f64, bool) {
        match problem.evaluate_generic::<f64>(x0, p) {
            Ok((o, tube, margins)) => {
                let div = tube.is_none() || margins.iter().any(|&g| g == DIVERGED_MARGIN);
                (if o.is_finite() { o } else { INVALID_OBJECTIVE }, div)
            }
            Err(_) => (INVALID_OBJECTIVE, true),
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iter_best = Vec::with_capacity(sampler.iters);
    let mut any_ok = false;
    for _ in 0..sampler.iters {
        let mut pop: Vec<Vec<f64>> = Vec::with_capacity(sampler.population + 2);
        pop.push(mean.clone());
        if let Some((_, b)) = &best {
            pop.push(b.clone());
        }
        while pop.len() < sampler.population.max(pop.len()) {
            let mut p: Vec<f64> = (0..d)
                .map(|i| {
                    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng);
                    mean[i] + std[i] * z
                })
                .collect();
            problem.clip(&mut p);
            pop.push(p);
        }
        let scores: Vec<(f64, bool)> = pop.par_iter().map(score).collect();
        any_ok |= scores.iter().any(|s| !s.1);
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0).then(a.cmp(&b)));
        let top = order[0];
        if best.as_ref().is_none_or(|(v, _)| scores[top].0 < *v) {
            best = Some((scores[top].0, pop[top].clone()));
        }
        iter_best.push(best.as_ref().map(|b| b.0).unwrap_or(INVALID_OBJECTIVE));
        let elite = &order[..n_elite.min(order.len())];
        let k = elite.len() as f64;
        for i in 0..d {
            let mu = elite.iter().map(|&e| pop[e][i]).sum::<f64>() / k;
            let var = elite.iter().map(|&e| (pop[e][i] - mu).powi(2)).sum::<f64>() / k;
            mean[i] = sampler.smoothing * mean[i] + (1.0 - sampler.smoothing) * mu;
            std[i] = (sampler.smoothing * std[i] + (1.0 - sampler.smoothing) * var.sqrt()).max(floor[i]);
        }
    }
    let (cem_best, cem_flat) = best.expect("at least one iteration");
    let mut flat = cem_flat.clone();
    let mut refined = false;
    if sampler.refine_iters > 0 && cem_best < INVALID_OBJECTIVE {
        let cfg = RefineConfig {
            iters: sampler.refine_iters,
            step: sampler.refine_step,
            max_backtracks: 20,
            lower: (0..d).map(|i| problem.u_lo[i % m]).collect(),
            upper: (0..d).map(|i| problem.u_hi[i % m]).collect(),
        };
        // a tube that fails under a perturbed action is not differentiable
        // there; keep the sampled winner in that case
        if let Ok(r) = gradient_refine(&PlanObj { problem, x0 }, &flat, &cfg) {
            if r.value < cem_best {
                flat = r.params;
                refined = true;
            }
        }
    }
    let mut actions = to_actions(&flat, m);
    let mut eval = problem.evaluate(x0, &actions)?;
    if refined && eval.objective > cem_best {
        actions = to_actions(&cem_flat, m);
        eval = problem.evaluate(x0, &actions)?;
        refined = false;
    }
    Ok(Plan {
        actions,
        eval,
        iter_best,
        cem_best,
        refined,
        all_diverged: !any_ok,
    })
}

fn to_actions(flat: &[f64], m: usize) -> Vec<Vec<f64>> {
    flat.chunks(m).map(|c| c.to_vec()).collect()
}

/// True plant used by the MPC loop.
pub trait Simulator: Sync {
    /// Dimension of the simulator's full state.
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Projection of a full state onto the planning model's state.
    fn plan_state(&self, x: &[f64]) -> Vec<f64>;
    /// Executes one planning action (already disturbed at planning level).
    /// `ctl` is the control-level bound. Returns every intermediate full
    /// state, ending with the state after the action.
    fn step(&self, x: &[f64], u: &[f64], ctl: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>>;
}

/// The planning model itself as the plant; control-level noise perturbs the
/// applied action a second time.
pub struct ModelSimulator {
    pub sys: DTSystem,
}

impl Simulator for ModelSimulator {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.sys.input_dim()
    }

    fn plan_state(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn step(&self, x: &[f64], u: &[f64], ctl: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let u: Vec<f64> = u.iter().map(|&v| v + uniform(rng, ctl)).collect();
        Ok(vec![self.sys.step(x, &u)?])
    }
}

/// A continuous plant under a low-level network controller: each planning
/// action is the controller's reference, held for `periods` control
/// intervals. Control-level noise, scaled per input channel by `ctl_scale`,
/// is added to the controller output and held with it.
pub struct ClosedLoopSimulator {
    pub spec: ClosedLoopSpec,
    pub periods: usize,
    /// Full-state coordinates forming the planning state.
    pub plan_dims: Vec<usize>,
    pub ctl_scale: Vec<f64>,
}

impl ClosedLoopSimulator {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_dim(self.spec.input_dim(), self.ctl_scale.len(), "control noise scale")?;
        if self.periods == 0 {
            return Err(Error::Config("each action needs at least one control interval".into()));
        }
        if self.plan_dims.iter().any(|&i| i >= self.spec.state_dim()) {
            return Err(Error::Config("planning dims outside the plant state".into()));
        }
        Ok(())
    }
}

impl Simulator for ClosedLoopSimulator {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.spec.controller.input_dim() - self.spec.state_dim()
    }

    fn plan_state(&self, x: &[f64]) -> Vec<f64> {
        self.plan_dims.iter().map(|&i| x[i]).collect()
    }

    fn step(&self, x: &[f64], u: &[f64], ctl: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        check_dim(self.state_dim(), x.len(), "simulator state")?;
        check_dim(self.action_dim(), u.len(), "simulator action")?;
        let h = self.spec.params.h;
        let mut s = x.to_vec();
        let mut out = Vec::with_capacity(self.periods);
        for _ in 0..self.periods {
            let mut inp = s.clone();
            inp.extend_from_slice(u);
            let mut v = self.spec.controller.forward(&inp);
            for (vi, &k) in v.iter_mut().zip(&self.ctl_scale) {
                *vi += k * uniform(rng, ctl);
            }
            let err = std::cell::Cell::new(None);
            let f = |_: f64, z: &[f64]| match self.spec.dynamics.eval_with(z, &v) {
                Ok(d) => d,
                Err(e) => {
                    err.set(Some(e));
                    vec![f64::NAN; z.len()]
                }
            };
            for _ in 0..self.spec.k {
                s = rk4_step(&|z: &[f64]| f(0.0, z), &s, h);
            }
            if let Some(e) = err.take() {
                return Err(e);
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged("simulator state is not finite".into()));
            }
            out.push(s.clone());
        }
        Ok(out)
    }
}

fn uniform(rng: &mut ChaCha8Rng, b: f64) -> f64 {
    if b > 0.0 {
        rng.random_range(-b..=b)
    } else {
        0.0
    }
}

/// Random-action episodes of a simulator, logged in planning coordinates.
/// Starts are uniform in `x0` (full state), actions uniform in `u_box`.
pub fn simulator_dataset<Sim: Simulator>(
    sim: &Sim,
    x0: &IntervalBox,
    u_box: &IntervalBox,
    episodes: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<crate::training::Episode>> {
    check_dim(sim.state_dim(), x0.dim(), "initial box")?;
    check_dim(sim.action_dim(), u_box.dim(), "action box")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |b: &IntervalBox, rng: &mut ChaCha8Rng| -> Vec<f64> {
        b.dims.iter().map(|d| if d.hi > d.lo { rng.random_range(d.lo..=d.hi) } else { d.lo }).collect()
    };
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut x = draw(x0, &mut rng);
        let mut states = vec![sim.plan_state(&x)];
        let mut actions = Vec::with_capacity(len);
        for _ in 0..len {
            let u = draw(u_box, &mut rng);
            x = sim.step(&x, &u, 0.0, &mut rng)?.pop().unwrap_or(x);
            states.push(sim.plan_state(&x));
            actions.push(u);
        }
        out.push(crate::training::Episode {
            states,
            actions,
            y_ref: Vec::new(),
        });
    }
    Ok(out)
}

/// Goal region in planning coordinates: a ball over `dims`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub dims: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl GoalRegion {
    pub fn reached(&self, x: &[f64]) -> bool {
        let d2: f64 = self.dims.iter().zip(&self.center).map(|(&i, &c)| (x[i] - c).powi(2)).sum();
        d2.sqrt() <= self.radius
    }
}

/// What the executed run is judged on: reaching `goal` while every true
/// state keeps `safety` satisfied. The planner's own constraints may be
/// stricter (inflated for model error).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcTask {
    pub goal: GoalRegion,
    pub safety: Vec<Constraint>,
}

/// Receding-horizon loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Actions executed per plan.
    pub replan: usize,
    /// Total executed actions.
    pub steps: usize,
    /// Bound of the uniform noise added to each executed action.
    pub plan_dist: f64,
    /// Bound of the uniform noise inside the simulator's low level.
    pub ctl_dist: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            replan: 3,
            steps: 30,
            plan_dist: 0.0,
            ctl_dist: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcLogRow {
    pub step: usize,
    /// Planning state before the action.
    pub state: Vec<f64>,
    /// Planned (undisturbed) action.
    pub action: Vec<f64>,
    /// Objective of the plan this action came from.
    pub objective: f64,
    pub tube_volume: f64,
    /// Smallest predicted margin of that plan.
    pub g_margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcOutcome {
    pub log: Vec<MpcLogRow>,
    pub success: bool,
    pub reached_at: Option<usize>,
    /// First executed action during which the true state left the safe set.
    pub violated_at: Option<usize>,
    /// Full simulator states, starting with the initial one.
    pub trajectory: Vec<Vec<f64>>,
    pub failure: Option<String>,
    /// Plans that ended with every candidate diverged.
    pub diverged_plans: usize,
}

/// Plan, execute `replan` disturbed actions, observe, repeat. Success means
/// the goal region was reached with no constraint violated at any
/// intermediate simulator state.
pub fn mpc_run<Sim: Simulator>(
    problem: &PlanProblem,
    sampler: &SamplerConfig,
    cfg: &MpcConfig,
    task: &MpcTask,
    sim: &Sim,
    x0: &[f64],
    seed: u64,
) -> Result<MpcOutcome> {
    problem.validate()?;
    check_dim(sim.state_dim(), x0.len(), "simulator initial state")?;
    check_dim(problem.input_dim(), sim.action_dim(), "simulator action")?;
    check_dim(problem.state_dim(), sim.plan_state(x0).len(), "simulator planning state")?;
    if cfg.replan == 0 || cfg.replan > problem.horizon {
        return Err(Error::Config("replan period must lie in 1..=horizon".into()));
    }
    let m = problem.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = MpcOutcome {
        log: Vec::new(),
        success: false,
        reached_at: None,
        violated_at: None,
        trajectory: vec![x0.to_vec()],
        failure: None,
        diverged_plans: 0,
    };
    for c in &task.safety {
        c.validate(problem.state_dim())?;
    }
    let goal = &task.goal;
    let safe = |x: &[f64]| task.safety.iter().all(|c| c.point_margin(x) >= 0.0);
    let mut x = x0.to_vec();
    let mut warm: Vec<f64> = Vec::new();
    let mut step = 0usize;
    let mut round = 0u64;
    'outer: while step < cfg.steps {
        let xp = sim.plan_state(&x);
        if goal.reached(&xp) {
            out.reached_at = Some(step);
            break;
        }
        let mut sc = sampler.clone();
        sc.seed = sampler.seed ^ seed.wrapping_mul(0x100_0000_01b3) ^ round;
        if !warm.is_empty() {
            sc.init_mean = warm.clone();
        }
        round += 1;
        let plan = plan_cem(problem, &sc, &xp)?;
        if plan.all_diverged {
            out.diverged_plans += 1;
        }
        // shift the plan by the executed prefix and repeat its last action
        let flat: Vec<f64> = plan.actions.iter().flatten().copied().collect();
        warm = flat[cfg.replan * m..].to_vec();
        let last = plan.actions.last().cloned().unwrap_or_default();
        for _ in 0..cfg.replan {
            warm.extend_from_slice(&last);
        }
        for a in plan.actions.iter().take(cfg.replan) {
            if step >= cfg.steps {
                break;
            }
            out.log.push(MpcLogRow {
                step,
                state: sim.plan_state(&x),
                action: a.clone(),
                objective: plan.eval.objective,
                tube_volume: plan.eval.tube_volume,
                g_margin: plan.eval.min_margin(),
            });
            let applied: Vec<f64> = a.iter().map(|&v| v + uniform(&mut rng, cfg.plan_dist)).collect();
            let states = match sim.step(&x, &applied, cfg.ctl_dist, &mut rng) {
                Ok(s) => s,
                Err(e) => {
                    out.failure = Some(e.to_string());
                    break 'outer;
                }
            };
            step += 1;
            for s in &states {
                if out.violated_at.is_none() && !safe(&sim.plan_state(s)) {
                    out.violated_at = Some(step);
                }
            }
            out.trajectory.extend(states.iter().cloned());
            x = states.last().cloned().unwrap_or(x);
            if out.violated_at.is_some() {
                break 'outer;
            }
            if goal.reached(&sim.plan_state(&x)) {
                out.reached_at = Some(step);
                break 'outer;
            }
        }
    }
    out.success = out.reached_at.is_some() && out.violated_at.is_none() && out.failure.is_none();
    Ok(out)
}

/// Run log as CSV: `step,state,action,objective,tube_volume,g_margin`, with
/// vectors written as `;`-joined values.
pub fn mpc_log_csv(log: &[MpcLogRow]) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(";");
    let mut s = String::from("step,state,action,objective,tube_volume,g_margin\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            join(&r.state),
            join(&r.action),
            r.objective,
            r.tube_volume,
            r.g_margin
        );
    }
    s
}
