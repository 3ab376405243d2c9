//! Certified training of discrete-time neural dynamics and continuous-time
//! neural controllers: multi-step losses, a reachability regularizer,
//! curriculum schedules and an Adam optimizer.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{cl_reach, simulate, ClosedLoopSpec};
use crate::dt::{dt_reach, DTSystem, DtOptions};
use crate::error::{check_dim, Error, Result};
use crate::interval::{IntervalBox, Radius};
use crate::neural::MLPNet;
use crate::ode::rk4_step;
use crate::real::Real;
use crate::refine::{forward_gradient, lift_spec, Objective};

/// One logged trajectory: `T + 1` states, `T` actions and optionally one
/// reference per action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y_ref: Vec<Vec<f64>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        check_dim(self.actions.len() + 1, self.states.len(), "episode states")?;
        for x in &self.states {
            check_dim(n, x.len(), "episode state")?;
        }
        for u in &self.actions {
            check_dim(m, u.len(), "episode action")?;
        }
        if !self.y_ref.is_empty() {
            check_dim(self.actions.len(), self.y_ref.len(), "episode references")?;
        }
        Ok(())
    }

    fn reference(&self, t: usize) -> &[f64] {
        self.y_ref.get(t).map(|r| r.as_slice()).unwrap_or(&[])
    }
}

pub fn save_episodes(path: impl AsRef<Path>, eps: &[Episode]) -> Result<()> {
    let mut out = String::new();
    for e in eps {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    parse_episodes(&std::fs::read_to_string(path)?)
}

pub fn parse_episodes(text: &str) -> Result<Vec<Episode>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Logarithmic horizon curriculum from one-step prediction to `th_max`.
pub fn horizon_schedule(s: usize, iters: usize, th_max: usize) -> usize {
    if iters <= 1 || th_max <= 1 {
        return th_max.max(1);
    }
    let frac = s.min(iters - 1) as f64 / (iters - 1) as f64;
    let t = (th_max as f64 * (1.0 + frac * (std::f64::consts::E - 1.0)).ln()).round() as usize;
    t.clamp(1, th_max)
}

/// Linear decrease of the initial-set radius from `eps0` to `eps_final`.
pub fn eps_schedule(s: usize, iters: usize, eps0: f64, eps_final: f64) -> f64 {
    if iters <= 1 || s + 1 >= iters {
        return eps_final;
    }
    eps_final + (eps0 - eps_final) * (1.0 - s as f64 / (iters - 1) as f64)
}

/// `w_t = 1 + t / T_h` for `t = 0..T_h`.
pub fn step_weights(th: usize) -> Vec<f64> {
    (0..th).map(|t| 1.0 + t as f64 / th as f64).collect()
}

fn sq_dist<S: Real>(a: &[S], b: &[f64]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn check_horizon(eps: &[&Episode], th: usize) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if let Some(e) = eps.iter().find(|e| e.len() < th) {
        return Err(Error::Argument(format!("horizon {th} exceeds episode length {}", e.len())));
    }
    Ok(())
}

/// Per-episode terms are computed in parallel and summed in batch order.
fn ordered_sum<S: Real>(terms: Vec<S>) -> S {
    terms.into_iter().fold(S::zero(), |a, b| a + b)
}

/// Weighted autoregressive prediction loss over the first `th` steps.
pub fn pred_loss<S: Real>(sys: &DTSystem<S>, eps: &[&Episode], th: usize, w: &[f64]) -> Result<S> {
    check_horizon(eps, th)?;
    check_dim(th, w.len(), "step weights")?;
    let terms = eps
        .par_iter()
        .map(|e| -> Result<S> {
            let mut x: Vec<S> = e.states[0].iter().map(|&v| S::from_f64(v)).collect();
            let mut acc = S::zero();
            for t in 0..th {
                let u: Vec<S> = e.actions[t].iter().map(|&v| S::from_f64(v)).collect();
                x = sys.step(&x, &u)?;
                acc += sq_dist(&x, &e.states[t + 1]) * w[t];
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ordered_sum(terms) / (eps.len() * th) as f64)
}

/// Reachability term with the number of episodes whose tube failed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReachTerm<S = f64> {
    pub loss: S,
    pub diverged: usize,
}

fn capped_log<S: Real>(v: S, cap: f64) -> (S, bool) {
    if !v.value().is_finite() {
        return (S::from_f64(cap), true);
    }
    let l = v.ln_1p();
    if l.value() > cap {
        (S::from_f64(cap), false)
    } else {
        (l, false)
    }
}

/// Mean over episodes of `log(1 + V)`, `V` the predicted tube volume from
/// `B_eps(x_0)` under the logged actions. Failed tubes contribute `cap`.
pub fn reach_loss<S: Real>(sys: &DTSystem<S>, eps: &[&Episode], radius: f64, th: usize, window: usize, cap: f64) -> Result<ReachTerm<S>> {
    check_horizon(eps, th)?;
    let opts = DtOptions {
        window,
        rebuild_from_box: false,
    };
    let terms = eps
        .par_iter()
        .map(|e| -> Result<(S, bool)> {
            let x0 = ball(&e.states[0], radius)?;
            let acts: Vec<Vec<S>> = e.actions[..th].iter().map(|u| u.iter().map(|&v| S::from_f64(v)).collect()).collect();
            let v = match dt_reach(sys, &x0, &acts, &opts) {
                Ok(t) => t.predicted_volume(),
                Err(Error::Domain(_) | Error::Diverged(_) | Error::StepFailure { .. }) => S::from_f64(f64::INFINITY),
                Err(e) => return Err(e),
            };
            Ok(capped_log(v, cap))
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged = terms.iter().filter(|t| t.1).count();
    let loss = ordered_sum(terms.into_iter().map(|t| t.0).collect()) / eps.len() as f64;
    Ok(ReachTerm { loss, diverged })
}

fn ball<S: Real>(c: &[f64], r: f64) -> Result<IntervalBox<S>> {
    let c: Vec<S> = c.iter().map(|&v| S::from_f64(v)).collect();
    IntervalBox::from_center(&c, &Radius::Uniform(S::from_f64(r)))
}

/// One control interval of the fixed-step proxy: `k` RK4 steps of `h` with
/// the input held.
fn proxy_interval<S: Real>(spec: &ClosedLoopSpec<S>, x: &[S], u: &[S]) -> Result<Vec<S>> {
    let h = S::from_f64(spec.params.h);
    check_dim(spec.input_dim(), u.len(), "controller output")?;
    // dimensions are checked above, so evaluation cannot fail
    let f = |y: &[S]| spec.dynamics.eval_with(y, u).unwrap_or_else(|_| vec![S::from_f64(f64::NAN); y.len()]);
    let mut x = x.to_vec();
    for _ in 0..spec.k {
        x = rk4_step(&f, &x, h);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("tracking proxy blew up".into()));
        }
    }
    Ok(x)
}

fn controller_input<S: Real>(x: &[S], r: &[f64]) -> Vec<S> {
    x.iter().copied().chain(r.iter().map(|&v| S::from_f64(v))).collect()
}

/// Tracking loss of `spec.controller` over the first `th` control intervals:
/// weighted action error plus `gamma` times the state error of the proxy
/// rollout. Blown-up rollouts contribute `cap` and are counted.
pub fn track_loss<S: Real>(spec: &ClosedLoopSpec<S>, eps: &[&Episode], th: usize, w: &[f64], gamma: f64, cap: f64) -> Result<ReachTerm<S>> {
    check_horizon(eps, th)?;
    check_dim(th, w.len(), "step weights")?;
    let terms = eps
        .par_iter()
        .map(|e| -> Result<(S, bool)> {
            let mut x: Vec<S> = e.states[0].iter().map(|&v| S::from_f64(v)).collect();
            let mut acc = S::zero();
            for t in 0..th {
                let u = spec.controller.forward(&controller_input(&x, e.reference(t)));
                acc += sq_dist(&u, &e.actions[t]) * w[t];
                x = match proxy_interval(spec, &x, &u) {
                    Ok(x) => x,
                    Err(Error::Diverged(_)) => return Ok((S::from_f64(cap), true)),
                    Err(e) => return Err(e),
                };
                if gamma != 0.0 {
                    acc += sq_dist(&x, &e.states[t + 1]) * (w[t] * gamma);
                }
            }
            if !acc.value().is_finite() {
                return Ok((S::from_f64(cap), true));
            }
            Ok((acc, false))
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged = terms.iter().filter(|t| t.1).count();
    let loss = ordered_sum(terms.into_iter().map(|t| t.0).collect()) / (eps.len() * th) as f64;
    Ok(ReachTerm { loss, diverged })
}

/// Closed-loop reachability term: `log(1 + V)` of `cl_reach` from
/// `B_eps(x_0)` over `th` control intervals.
pub fn cl_reach_loss<S: Real>(spec: &ClosedLoopSpec<S>, eps: &[&Episode], radius: f64, th: usize, cap: f64) -> Result<ReachTerm<S>> {
    check_horizon(eps, th)?;
    let terms = eps
        .par_iter()
        .map(|e| -> Result<(S, bool)> {
            let mut s = spec.clone();
            s.n_ctl = th;
            s.y_ref = e.y_ref.iter().take(th).map(|r| r.iter().map(|&v| S::from_f64(v)).collect()).collect();
            let v = match cl_reach(&s, &ball(&e.states[0], radius)?) {
                Ok(t) => t.predicted_volume(),
                Err(Error::Domain(_) | Error::Diverged(_) | Error::StepFailure { .. }) => S::from_f64(f64::INFINITY),
                Err(e) => return Err(e),
            };
            Ok(capped_log(v, cap))
        })
        .collect::<Result<Vec<_>>>()?;
    let diverged = terms.iter().filter(|t| t.1).count();
    let loss = ordered_sum(terms.into_iter().map(|t| t.0).collect()) / eps.len() as f64;
    Ok(ReachTerm { loss, diverged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub th_max: usize,
    pub eps_final: f64,
    pub eps0: f64,
    pub lambda: f64,
    /// State weight of the tracking loss.
    pub gamma: f64,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    /// When set, the step size decays linearly from `lr` to this value.
    #[serde(default)]
    pub lr_final: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Ceiling of a per-episode `log(1 + V)` term.
    pub reach_cap: f64,
    /// Off: train at `th_max` and `eps_final` from the start.
    pub curriculum: bool,
    pub window: usize,
    /// Monte-Carlo containment check of one tube every this many iterations
    /// (0 disables).
    pub audit_every: usize,
    pub audit_samples: usize,
    pub seed: u64,
    /// One-step networks predict the increment `x' - x`.
    #[serde(default)]
    pub residual: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            th_max: 10,
            eps_final: 0.01,
            eps0: 0.05,
            lambda: 0.1,
            gamma: 1.0,
            iters: 200,
            batch: 8,
            lr: 1e-3,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            reach_cap: 20.0,
            curriculum: true,
            window: 4,
            audit_every: 100,
            audit_samples: 64,
            seed: 0,
            residual: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("eps_final", self.eps_final),
            ("lr", self.lr),
            ("reach_cap", self.reach_cap),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let Some(end) = self.lr_final {
            if !(end > 0.0 && end <= self.lr) {
                return Err(Error::Config("lr_final must lie in (0, lr]".into()));
            }
        }
        if self.eps0 < self.eps_final {
            return Err(Error::Config("eps0 must be at least eps_final".into()));
        }
        if self.th_max == 0 || self.iters == 0 || self.batch == 0 {
            return Err(Error::Config("horizon, iterations and batch must be positive".into()));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Horizon and radius used at iteration `s`.
    pub fn schedule(&self, s: usize) -> (usize, f64) {
        if self.curriculum {
            (
                horizon_schedule(s, self.iters, self.th_max),
                eps_schedule(s, self.iters, self.eps0, self.eps_final),
            )
        } else {
            (self.th_max, self.eps_final)
        }
    }

    pub fn lr_at(&self, s: usize) -> f64 {
        match self.lr_final {
            Some(end) => eps_schedule(s, self.iters, self.lr, end),
            None => self.lr,
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, b1: f64, b2: f64, eps: f64) -> Self {
        Self {
            lr,
            b1,
            b2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g[i] * g[i];
            p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub th: usize,
    pub eps: f64,
    /// Prediction loss (dynamics) or tracking loss (controller).
    pub l_pred: f64,
    pub l_reach: f64,
    pub l_total: f64,
    pub diverged: usize,
}

pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut out = String::from("iter,T_h,eps,L_pred,L_reach,L_total,diverged_count\n");
    for r in log {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.iter, r.th, r.eps, r.l_pred, r.l_reach, r.l_total, r.diverged);
    }
    out
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub net: MLPNet,
    pub log: Vec<LogRow>,
}

/// Loss terms of one evaluation.
#[derive(Clone, Copy, Debug)]
struct Terms<S> {
    first: S,
    reach: S,
    diverged: usize,
}

/// The training loss as a function of flat network parameters.
trait TrainObjective: Sync {
    fn base(&self) -> &MLPNet;
    fn lambda(&self) -> f64;
    /// `with_reach = false` skips the reach term (value reported as zero).
    fn terms<S: Real>(&self, p: &[S], with_reach: bool) -> Result<Terms<S>>;
}

struct AsObjective<'a, T>(&'a T);

impl<T: TrainObjective> Objective for AsObjective<'_, T> {
    fn num_params(&self) -> usize {
        self.0.base().num_params()
    }

    fn eval<S: Real>(&self, p: &[S]) -> Result<S> {
        let lam = self.0.lambda();
        let t = self.0.terms(p, lam != 0.0)?;
        Ok(t.first + t.reach * lam)
    }
}

struct DynObjective<'a> {
    net: &'a MLPNet,
    batch: Vec<&'a Episode>,
    th: usize,
    eps: f64,
    cfg: &'a TrainConfig,
}

impl TrainObjective for DynObjective<'_> {
    fn base(&self) -> &MLPNet {
        self.net
    }

    fn lambda(&self) -> f64 {
        self.cfg.lambda
    }

    fn terms<S: Real>(&self, p: &[S], with_reach: bool) -> Result<Terms<S>> {
        let sys = dyn_system(self.net.with_params(p), self.cfg.residual)?;
        let first = pred_loss(&sys, &self.batch, self.th, &step_weights(self.th))?;
        let (reach, diverged) = if with_reach {
            let r = reach_loss(&sys, &self.batch, self.eps, self.th, self.cfg.window, self.cfg.reach_cap)?;
            (r.loss, r.diverged)
        } else {
            (S::zero(), 0)
        };
        Ok(Terms { first, reach, diverged })
    }
}

struct CtlObjective<'a> {
    spec: &'a ClosedLoopSpec,
    batch: Vec<&'a Episode>,
    th: usize,
    eps: f64,
    cfg: &'a TrainConfig,
}

impl TrainObjective for CtlObjective<'_> {
    fn base(&self) -> &MLPNet {
        &self.spec.controller
    }

    fn lambda(&self) -> f64 {
        self.cfg.lambda
    }

    fn terms<S: Real>(&self, p: &[S], with_reach: bool) -> Result<Terms<S>> {
        let mut spec = lift_spec::<S>(self.spec);
        spec.controller = self.spec.controller.with_params(p);
        let tr = track_loss(&spec, &self.batch, self.th, &step_weights(self.th), self.cfg.gamma, self.cfg.reach_cap)?;
        let (reach, diverged) = if with_reach {
            let r = cl_reach_loss(&spec, &self.batch, self.eps, self.th, self.cfg.reach_cap)?;
            (r.loss, r.diverged + tr.diverged)
        } else {
            (S::zero(), tr.diverged)
        };
        Ok(Terms {
            first: tr.loss,
            reach,
            diverged,
        })
    }
}

fn snapshot(iter: usize, th: usize, eps: f64, what: &str, a: f64, b: f64) -> Error {
    Error::Diverged(format!(
        "non-finite {what} at iteration {iter} (T_h = {th}, eps = {eps}, L_pred = {a}, L_reach = {b})"
    ))
}

/// Shared training loop; `audit` checks one tube against sampled
/// trajectories.
fn train_loop<'a, T, B, A>(init: &MLPNet, cfg: &'a TrainConfig, data: &'a [Episode], build: B, audit: A) -> Result<Trained>
where
    T: TrainObjective,
    B: Fn(&MLPNet, Vec<&'a Episode>, usize, f64) -> T,
    A: Fn(&MLPNet, &Episode, usize, f64, &mut ChaCha8Rng) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut p = init.params();
    let mut net = init.clone();
    let mut adam = Adam::new(p.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = Vec::with_capacity(cfg.iters);
    for s in 0..cfg.iters {
        let (th, eps) = cfg.schedule(s);
        let k = cfg.batch.min(data.len());
        let batch: Vec<&Episode> = sample(&mut rng, data.len(), k).into_iter().map(|i| &data[i]).collect();
        if cfg.audit_every > 0 && s % cfg.audit_every == 0 {
            audit(&net, batch[0], th, eps, &mut rng)?;
        }
        let obj = build(&net, batch, th, eps);
        let t = obj.terms::<f64>(&p, true)?;
        let total = t.first + cfg.lambda * t.reach;
        if !total.is_finite() {
            return Err(snapshot(s, th, eps, "loss", t.first, t.reach));
        }
        let g = forward_gradient(&AsObjective(&obj), &p).map_err(|_| snapshot(s, th, eps, "gradient", t.first, t.reach))?;
        log.push(LogRow {
            iter: s,
            th,
            eps,
            l_pred: t.first,
            l_reach: t.reach,
            l_total: total,
            diverged: t.diverged,
        });
        adam.set_lr(cfg.lr_at(s));
        adam.step(&mut p, &g);
        net = init.with_params(&p);
    }
    Ok(Trained { net, log })
}

fn sample_ball<R: Rng>(c: &[f64], r: f64, rng: &mut R) -> Vec<f64> {
    c.iter().map(|&v| if r > 0.0 { rng.random_range(v - r..=v + r) } else { v }).collect()
}

fn dyn_system<S: Real>(net: MLPNet<S>, residual: bool) -> Result<DTSystem<S>> {
    if residual {
        DTSystem::residual(net)
    } else {
        DTSystem::neural(net)
    }
}

/// Certified training of a one-step network `(x, u) -> x'`.
pub fn train_dt_dyn<'a>(init: &'a MLPNet, cfg: &'a TrainConfig, data: &'a [Episode]) -> Result<Trained> {
    let sys0 = dyn_system(init.clone(), cfg.residual)?;
    let (n, m) = (sys0.state_dim(), sys0.input_dim());
    for e in data {
        e.validate(n, m)?;
        if e.len() < cfg.th_max {
            return Err(Error::Config(format!("episode of length {} shorter than th_max {}", e.len(), cfg.th_max)));
        }
    }
    // the objective takes the architecture from `init`; parameters are passed in
    let build = |_: &MLPNet, batch: Vec<&'a Episode>, th: usize, eps: f64| DynObjective {
        net: init,
        batch,
        th,
        eps,
        cfg,
    };
    let audit = |net: &MLPNet, e: &Episode, th: usize, eps: f64, rng: &mut ChaCha8Rng| -> Result<()> {
        let sys = dyn_system(net.clone(), cfg.residual)?;
        let acts = &e.actions[..th];
        let tube = match dt_reach(&sys, &ball(&e.states[0], eps)?, acts, &DtOptions { window: cfg.window, rebuild_from_box: false }) {
            Ok(t) if t.failure.is_none() => t,
            _ => return Ok(()),
        };
        for _ in 0..cfg.audit_samples {
            let traj = sys.rollout(&sample_ball(&e.states[0], eps, rng), acts)?;
            for (k, x) in traj.iter().enumerate() {
                if !tube.steps[k].bx.contains_with_tol(x, 1e-9)? {
                    return Err(Error::Soundness(format!("training tube misses a rollout at step {k}")));
                }
            }
        }
        Ok(())
    };
    train_loop(init, cfg, data, build, audit)
}

/// Certified training of the controller in `spec` with the plant fixed.
/// Episodes hold control-boundary states, logged actions and references.
pub fn train_ct_ctl<'a>(spec: &'a ClosedLoopSpec, cfg: &'a TrainConfig, data: &'a [Episode]) -> Result<Trained> {
    spec.validate()?;
    let (n, m) = (spec.state_dim(), spec.input_dim());
    for e in data {
        e.validate(n, m)?;
        if e.len() < cfg.th_max {
            return Err(Error::Config(format!("episode of length {} shorter than th_max {}", e.len(), cfg.th_max)));
        }
    }
    let build = |_: &MLPNet, batch: Vec<&'a Episode>, th: usize, eps: f64| CtlObjective {
        spec,
        batch,
        th,
        eps,
        cfg,
    };
    let audit = |net: &MLPNet, e: &Episode, th: usize, eps: f64, rng: &mut ChaCha8Rng| -> Result<()> {
        let mut s = spec.clone();
        s.controller = net.clone();
        s.n_ctl = th;
        s.y_ref = e.y_ref.iter().take(th).cloned().collect();
        let tube = match cl_reach(&s, &ball(&e.states[0], eps)?) {
            Ok(t) if t.failure.is_none() => t,
            _ => return Ok(()),
        };
        for _ in 0..cfg.audit_samples {
            let traj = simulate(&s, &sample_ball(&e.states[0], eps, rng), 1e-10)?;
            for (k, x) in traj.iter().enumerate() {
                if !tube.steps[k].bx.contains_with_tol(x, 1e-7)? {
                    return Err(Error::Soundness(format!("closed-loop training tube misses a trajectory at step {k}")));
                }
            }
        }
        Ok(())
    };
    train_loop(&spec.controller, cfg, data, build, audit)
}

/// Random-action rollouts of `sys` from uniform initial states.
pub fn generate_dt_dataset(
    sys: &DTSystem,
    x0: &IntervalBox,
    u_box: &IntervalBox,
    episodes: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    check_dim(sys.state_dim(), x0.dim(), "initial box")?;
    check_dim(sys.input_dim(), u_box.dim(), "action box")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |b: &IntervalBox| -> Vec<f64> {
        b.dims.iter().map(|d| if d.hi > d.lo { rng.random_range(d.lo..=d.hi) } else { d.lo }).collect()
    };
    (0..episodes)
        .map(|_| {
            let x = uniform(x0);
            let actions: Vec<Vec<f64>> = (0..len).map(|_| uniform(u_box)).collect();
            let states = sys.rollout(&x, &actions)?;
            Ok(Episode {
                states,
                actions,
                y_ref: Vec::new(),
            })
        })
        .collect()
}

/// Logs the controller of `spec` on the fixed-step proxy, one state per
/// control boundary.
pub fn rollout_ctl_episode(spec: &ClosedLoopSpec, x0: &[f64], y_ref: &[Vec<f64>]) -> Result<Episode> {
    check_dim(spec.state_dim(), x0.len(), "initial state")?;
    let mut states = vec![x0.to_vec()];
    let mut actions = Vec::with_capacity(y_ref.len());
    for r in y_ref {
        let x = states.last().unwrap();
        let u = spec.controller.forward(&controller_input(x, r));
        let next = proxy_interval(spec, x, &u)?;
        actions.push(u);
        states.push(next);
    }
    Ok(Episode {
        states,
        actions,
        y_ref: y_ref.to_vec(),
    })
}
