//! Discrete-time stepwise reachability with per-step certification of the
//! one-step map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flowpipe::SymbolicState;
use crate::interval::{Interval, IntervalBox};
use crate::neural::{certify_tm_input, fold_reference, MLPNet};
use crate::real::Real;
use crate::systems::DtAnalytic;
use crate::taylor::{build_linear_tm, LinearTM, QuasiQuadTM, TmRow};
use crate::tube::{ReachTube, StepInfo, TubeFailure};

#[derive(Clone, Debug, PartialEq)]
pub enum DtModel<S = f64> {
    Analytic(DtAnalytic),
    /// Network mapping `(x, u)` to the next state.
    Neural(MLPNet<S>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DTSystem<S = f64> {
    pub model: DtModel<S>,
    /// Network predicts the increment: `x' = x + net(x, u)`.
    pub residual: bool,
}

impl<S: Real> DTSystem<S> {
    pub fn analytic(map: DtAnalytic) -> Self {
        Self {
            model: DtModel::Analytic(map),
            residual: false,
        }
    }

    pub fn neural(net: MLPNet<S>) -> Result<Self> {
        if net.input_dim() < net.output_dim() {
            return Err(Error::Argument("one-step network narrower than its state".into()));
        }
        Ok(Self {
            model: DtModel::Neural(net),
            residual: false,
        })
    }

    pub fn residual(net: MLPNet<S>) -> Result<Self> {
        let mut s = Self::neural(net)?;
        s.residual = true;
        Ok(s)
    }

    /// Same kind of model (plain or residual) with another network.
    pub fn with_net<T: Real>(&self, net: MLPNet<T>) -> Result<DTSystem<T>> {
        let mut s = DTSystem::neural(net)?;
        s.residual = self.residual;
        Ok(s)
    }

    pub fn state_dim(&self) -> usize {
        match &self.model {
            DtModel::Analytic(m) => m.state_dim(),
            DtModel::Neural(n) => n.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.model {
            DtModel::Analytic(m) => m.input_dim(),
            DtModel::Neural(n) => n.input_dim() - n.output_dim(),
        }
    }

    pub fn step(&self, x: &[S], u: &[S]) -> Result<Vec<S>> {
        check_dim(self.state_dim(), x.len(), "state")?;
        check_dim(self.input_dim(), u.len(), "action")?;
        match &self.model {
            DtModel::Analytic(m) => m.step(x, u),
            DtModel::Neural(net) => {
                let mut inp = x.to_vec();
                inp.extend_from_slice(u);
                let mut y = net.forward(&inp);
                if self.residual {
                    for (a, &b) in y.iter_mut().zip(x) {
                        *a = *a + b;
                    }
                }
                Ok(y)
            }
        }
    }

    /// Affine TM of the next state over the current TM's variables.
    pub fn step_tm(&self, tm: &LinearTM<S>, u: &[S]) -> Result<LinearTM<S>> {
        check_dim(self.state_dim(), tm.dim(), "state TM")?;
        check_dim(self.input_dim(), u.len(), "action")?;
        match &self.model {
            DtModel::Analytic(m) => {
                let nz = tm.nz();
                let rows = tm.clone().into_quasi().to_rows();
                let us: Vec<TmRow<S>> = u.iter().map(|&v| TmRow::constant(nz, S::zero(), v)).collect();
                let out = m.step(&rows, &us)?;
                Ok(QuasiQuadTM::from_rows(&out, nz, S::zero()).at_time(S::zero()))
            }
            DtModel::Neural(net) => {
                let out = certify_tm_input(&fold_reference(net, tm.dim(), u)?, tm)?;
                if !self.residual {
                    return Ok(out);
                }
                let nz = tm.nz();
                let a = tm.clone().into_quasi().to_rows();
                let b = out.into_quasi().to_rows();
                let sum: Vec<TmRow<S>> = a.iter().zip(&b).map(|(x, y)| x.add_row(y)).collect();
                Ok(QuasiQuadTM::from_rows(&sum, nz, S::zero()).at_time(S::zero()))
            }
        }
    }

    /// Plain interval image of a box, the baseline's one-step map.
    pub fn step_box(&self, bx: &IntervalBox<S>, u: &[S]) -> Result<IntervalBox<S>> {
        check_dim(self.state_dim(), bx.dim(), "state box")?;
        check_dim(self.input_dim(), u.len(), "action")?;
        match &self.model {
            DtModel::Analytic(m) => {
                let us: Vec<Interval<S>> = u.iter().map(|&v| Interval::point(v)).collect();
                Ok(IntervalBox::new(m.step(&bx.dims, &us)?))
            }
            DtModel::Neural(net) => {
                let mut d = bx.dims.clone();
                d.extend(u.iter().map(|&v| Interval::point(v)));
                let mut y = net.ibp(&IntervalBox::new(d));
                if self.residual {
                    for (a, b) in y.dims.iter_mut().zip(&bx.dims) {
                        *a = a.add(*b);
                    }
                }
                Ok(y)
            }
        }
    }

    /// Exact rollout, `H + 1` states.
    pub fn rollout(&self, x0: &[S], actions: &[Vec<S>]) -> Result<Vec<Vec<S>>> {
        let mut out = vec![x0.to_vec()];
        for u in actions {
            let next = self.step(out.last().unwrap(), u)?;
            out.push(next);
        }
        Ok(out)
    }
}

impl DTSystem<f64> {
    pub fn lift<S: Real>(&self) -> DTSystem<S> {
        DTSystem {
            model: match &self.model {
                DtModel::Analytic(m) => DtModel::Analytic(m.clone()),
                DtModel::Neural(n) => DtModel::Neural(n.lift()),
            },
            residual: self.residual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtOptions {
    /// Symbolic remainder window.
    pub window: usize,
    /// Ablation: re-seed every step from the box instead of the TM.
    pub rebuild_from_box: bool,
}

impl Default for DtOptions {
    fn default() -> Self {
        Self {
            window: 4,
            rebuild_from_box: false,
        }
    }
}

/// Tube of `H + 1` boxes; box `k` encloses every state reachable after `k`
/// actions from any point of `x0`.
pub fn dt_reach<S: Real>(sys: &DTSystem<S>, x0: &IntervalBox<S>, actions: &[Vec<S>], opts: &DtOptions) -> Result<ReachTube<S>> {
    let n = sys.state_dim();
    check_dim(n, x0.dim(), "initial box")?;
    for u in actions {
        check_dim(sys.input_dim(), u.len(), "action")?;
    }
    let mut sym = SymbolicState::new(n, n, opts.window);
    let mut seed = sym.pad(&build_linear_tm(x0)?);
    let mut tube = ReachTube::default();
    tube.push(0, 0.0, 0.0, x0.clone(), StepInfo::default());
    for (k, u) in actions.iter().enumerate() {
        let next = match sys.step_tm(&seed, u) {
            Ok(t) if t.is_finite() => t,
            Ok(_) => {
                tube.failure = Some(TubeFailure::from_error(k + 1, &Error::Diverged("non-finite step TM".into())));
                break;
            }
            Err(e) => {
                tube.failure = Some(TubeFailure::from_error(k + 1, &e));
                break;
            }
        };
        let bx = next.range();
        if bx.is_diverged() {
            tube.failure = Some(TubeFailure::from_error(k + 1, &Error::Diverged("step box overflowed".into())));
            break;
        }
        let info = StepInfo {
            enlargements: 0,
            remainder_rad: next.rem.dims.iter().map(|r| r.mag().value()).fold(0.0, f64::max),
        };
        tube.push(k + 1, (k + 1) as f64, (k + 1) as f64, bx.clone(), info);
        if opts.rebuild_from_box {
            seed = sym.pad(&build_linear_tm(&bx)?);
        } else {
            let (s, nsym) = crate::flowpipe::symbolic_step(&sym, &next);
            seed = s;
            sym = nsym;
        }
    }
    Ok(tube)
}

/// Element-wise [`dt_reach`], evaluated in parallel. Each element is computed
/// exactly as the sequential call would, so results are bit-identical.
pub fn dt_reach_batch<S: Real>(
    sys: &DTSystem<S>,
    x0s: &[IntervalBox<S>],
    action_seqs: &[Vec<Vec<S>>],
    opts: &DtOptions,
) -> Result<Vec<Result<ReachTube<S>>>> {
    check_dim(x0s.len(), action_seqs.len(), "batch")?;
    Ok(x0s
        .par_iter()
        .zip(action_seqs.par_iter())
        .map(|(x0, acts)| dt_reach(sys, x0, acts, opts))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::Radius;
    use crate::neural::Activation;
    use crate::systems::dt_system;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    #[test]
    fn identity_map_keeps_box() {
        let sys = DTSystem::analytic(dt_system("identity").unwrap());
        let x0 = IntervalBox::new(vec![iv(-1.0, 2.0), iv(0.5, 0.75)]);
        let acts = vec![vec![0.0; sys.input_dim()]; 5];
        let t = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
        assert_eq!(t.len(), 6);
        for s in &t.steps {
            assert_eq!(s.bx, x0);
        }
    }

    #[test]
    fn affine_map_is_exact() {
        let sys = DTSystem::analytic(dt_system("affine").unwrap());
        let DtModel::Analytic(DtAnalytic::Affine(a)) = &sys.model else { unreachable!() };
        let x0 = IntervalBox::new(vec![iv(0.5, 1.5), iv(-0.2, 0.2)]);
        let acts: Vec<Vec<f64>> = (0..8).map(|k| vec![(k as f64 * 0.7).sin()]).collect();
        let t = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
        // exact image of the box: center maps affinely, generators by the linear part
        let mut c = x0.center();
        let mut g = crate::linalg::Mat::from_diag(&x0.radii());
        for (k, u) in acts.iter().enumerate() {
            c = a.apply::<f64, f64>(&c, u);
            g = a.a.matmul(&g);
            for i in 0..2 {
                let r: f64 = g.row(i).iter().map(|x| x.abs()).sum();
                let d = t.steps[k + 1].bx.dims[i];
                assert!((d.lo - (c[i] - r)).abs() < 1e-12 && (d.hi - (c[i] + r)).abs() < 1e-12);
            }
        }
    }

    fn random_case(rng: &mut ChaCha8Rng, hidden: usize, layers: usize) -> (DTSystem, IntervalBox, Vec<Vec<f64>>) {
        let mut sizes = vec![3];
        sizes.extend(std::iter::repeat_n(hidden, layers));
        sizes.push(2);
        let mut net = MLPNet::random(&sizes, Activation::Relu, rng).unwrap();
        // keep rollouts bounded: residual-style small update
        net.scale_output(0.2);
        let sys = DTSystem::neural(net).unwrap();
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = IntervalBox::from_center(&c, &Radius::Uniform(rng.random_range(0.01..0.1))).unwrap();
        let acts = (0..10).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        (sys, x0, acts)
    }

    #[test]
    fn neural_rollouts_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let (sys, x0, acts) = random_case(&mut rng, 16, 2);
            let t = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
            assert!(t.failure.is_none());
            for _ in 0..300 {
                let p: Vec<f64> = x0.dims.iter().map(|d| rng.random_range(d.lo..=d.hi)).collect();
                for (k, x) in sys.rollout(&p, &acts).unwrap().iter().enumerate() {
                    assert!(t.steps[k].bx.contains_with_tol(x, 1e-12).unwrap());
                }
            }
        }
    }

    #[test]
    fn point_start_on_affine_stays_point() {
        let sys = DTSystem::analytic(dt_system("affine").unwrap());
        let acts = vec![vec![0.3]; 6];
        let t = dt_reach(&sys, &IntervalBox::point(&[0.2, -0.4]), &acts, &DtOptions::default()).unwrap();
        let xs = sys.rollout(&[0.2, -0.4], &acts).unwrap();
        for (s, x) in t.steps.iter().zip(&xs) {
            for (d, &v) in s.bx.dims.iter().zip(x) {
                assert!(d.width() < 1e-12 && (d.lo - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arm_map_contains_rollouts() {
        let sys = DTSystem::analytic(dt_system("arm").unwrap());
        let p = crate::systems::ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Vec<f64> = (0..10).map(|_| rng.random_range(-0.3..0.3)).collect();
        let x = crate::systems::arm_state(&q, &[0.0; 10], &p);
        let r: Vec<f64> = (0..40).map(|i| if (10..20).contains(&i) { 0.1 } else { 0.0 }).collect();
        let x0 = IntervalBox::from_center(&x, &Radius::PerDim(r)).unwrap();
        let acts = vec![vec![0.0; 10]; 20];
        let t = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
        assert!(t.failure.is_none());
        for _ in 0..200 {
            let qd: Vec<f64> = (0..10).map(|_| rng.random_range(-0.1..=0.1)).collect();
            let s0 = crate::systems::arm_state(&q, &qd, &p);
            for (k, s) in sys.rollout(&s0, &acts).unwrap().iter().enumerate() {
                assert!(t.steps[k].bx.contains_with_tol(s, 1e-12).unwrap());
            }
        }
    }

    #[test]
    fn batch_matches_sequential_and_permutes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (sys, _, _) = random_case(&mut rng, 8, 1);
        let cases: Vec<_> = (0..6).map(|_| random_case(&mut rng, 8, 1)).collect();
        let x0s: Vec<_> = cases.iter().map(|c| c.1.clone()).collect();
        let acts: Vec<_> = cases.iter().map(|c| c.2.clone()).collect();
        let opts = DtOptions::default();
        let batch = dt_reach_batch(&sys, &x0s, &acts, &opts).unwrap();
        for ((x0, a), b) in x0s.iter().zip(&acts).zip(&batch) {
            assert_eq!(b.as_ref().unwrap(), &dt_reach(&sys, x0, a, &opts).unwrap());
        }
        let rev_x: Vec<_> = x0s.iter().rev().cloned().collect();
        let rev_a: Vec<_> = acts.iter().rev().cloned().collect();
        let rev = dt_reach_batch(&sys, &rev_x, &rev_a, &opts).unwrap();
        for (a, b) in rev.iter().rev().zip(&batch) {
            assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
        }
        let one = dt_reach_batch(&sys, &x0s[..1], &acts[..1], &opts).unwrap();
        assert_eq!(one[0].as_ref().unwrap(), batch[0].as_ref().unwrap());
    }

    #[test]
    fn rebuild_ablation_is_sound_but_looser_on_rotation() {
        let sys = DTSystem::analytic(dt_system("affine").unwrap());
        let x0 = IntervalBox::new(vec![iv(0.5, 1.5), iv(-0.2, 0.2)]);
        let acts = vec![vec![0.0]; 10];
        let keep = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
        let opts = DtOptions { rebuild_from_box: true, ..Default::default() };
        let rebuilt = dt_reach(&sys, &x0, &acts, &opts).unwrap();
        assert!(rebuilt.volume() > keep.volume());
        for (a, b) in keep.steps.iter().zip(&rebuilt.steps) {
            assert!(a.bx.subset_of(&b.bx));
        }
    }

    #[test]
    fn residual_rollouts_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..4 {
            let (plain, x0, acts) = random_case(&mut rng, 16, 1);
            let DtModel::Neural(net) = plain.model else { unreachable!() };
            let sys = DTSystem::residual(net.clone()).unwrap();
            let x = [0.3, -0.2];
            let y = sys.step(&x, &acts[0]).unwrap();
            let d = net.forward(&[x[0], x[1], acts[0][0]]);
            assert_eq!(y, vec![x[0] + d[0], x[1] + d[1]]);
            let t = dt_reach(&sys, &x0, &acts, &DtOptions::default()).unwrap();
            assert!(t.failure.is_none());
            for _ in 0..300 {
                let p: Vec<f64> = x0.dims.iter().map(|d| rng.random_range(d.lo..=d.hi)).collect();
                for (k, x) in sys.rollout(&p, &acts).unwrap().iter().enumerate() {
                    assert!(t.steps[k].bx.contains_with_tol(x, 1e-12).unwrap());
                }
            }
            let b = sys.step_box(&x0, &acts[0]).unwrap();
            assert!(t.steps[1].bx.subset_of(&b) || t.steps[1].bx.volume_proxy() <= b.volume_proxy());
        }
    }
}
