//! Validated continuous-time flowpipes on the fixed Taylor-model shape.
//!
//! Each step builds a polynomial flow approximation by truncated Picard
//! iteration, validates an interval remainder by contraction, evaluates the
//! segment to a box and re-seeds the next step through a sliding window of
//! symbolic remainder variables.
//!
//! Variable layout of every seed: `[z | w_1 | ... | w_M]` where `z` are the
//! normalized initial-set variables and each `w_j` block holds one variable
//! per state row for the remainder introduced `j` steps ago. Since the state
//! stays a function of the original `z`, no re-parameterization is needed and
//! the set represented in state space is never re-wrapped into a box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interval::{outward_rounding, Interval, IntervalBox};
use crate::linalg::{orthonormal_frame, Mat};
use crate::neural::{certify_rows, MLPNet};
use crate::real::Real;
use crate::systems::CtSystem;
use crate::taylor::{build_linear_tm, FieldValue, LinearTM, QuasiQuadTM, TmRow};
use crate::tube::{ReachTube, StepInfo, TubeFailure};

/// How a value type pushes through a network.
pub trait NeuralEval<S: Real>: FieldValue<S> + Sized {
    fn apply_net(net: &MLPNet<S>, x: &[Self]) -> Result<Vec<Self>>;
}

impl<S: Real> NeuralEval<S> for S {
    fn apply_net(net: &MLPNet<S>, x: &[Self]) -> Result<Vec<Self>> {
        Ok(net.forward(x))
    }
}

impl<S: Real> NeuralEval<S> for TmRow<S> {
    fn apply_net(net: &MLPNet<S>, x: &[Self]) -> Result<Vec<Self>> {
        certify_rows(net, x)
    }
}

impl<S: Real> NeuralEval<S> for Interval<S> {
    fn apply_net(net: &MLPNet<S>, x: &[Self]) -> Result<Vec<Self>> {
        Ok(net.ibp(&IntervalBox::new(x.to_vec())).dims)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldKind<S = f64> {
    Analytic(CtSystem),
    /// Network mapping `(x, u)` to `ẋ`.
    Neural(MLPNet<S>),
}

/// `ẋ = f(x, u)` with `u` either held at `input` or, when `augmented`,
/// carried as extra state rows with `u̇ = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<S = f64> {
    pub kind: FieldKind<S>,
    pub input: Vec<S>,
    pub augmented: bool,
}

impl<S: Real> VectorField<S> {
    pub fn analytic(sys: CtSystem, input: Vec<S>) -> Result<Self> {
        check_dim(sys.input_dim(), input.len(), "held input")?;
        Ok(Self {
            kind: FieldKind::Analytic(sys),
            input,
            augmented: false,
        })
    }

    /// Neural field whose state dimension is the network's output dimension.
    pub fn neural(net: MLPNet<S>, input: Vec<S>) -> Result<Self> {
        if net.input_dim() < net.output_dim() {
            return Err(Error::Argument("neural field input narrower than its state".into()));
        }
        check_dim(net.input_dim() - net.output_dim(), input.len(), "held input")?;
        Ok(Self {
            kind: FieldKind::Neural(net),
            input,
            augmented: false,
        })
    }

    /// Same dynamics with the input carried as state.
    pub fn into_augmented(mut self) -> Self {
        self.augmented = true;
        self.input.clear();
        self
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            FieldKind::Analytic(s) => s.state_dim(),
            FieldKind::Neural(n) => n.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            FieldKind::Analytic(s) => s.input_dim(),
            FieldKind::Neural(n) => n.input_dim() - n.output_dim(),
        }
    }

    /// Number of rows the flowpipe propagates.
    pub fn dim(&self) -> usize {
        self.state_dim() + if self.augmented { self.input_dim() } else { 0 }
    }

    pub fn eval_generic<V: NeuralEval<S>>(&self, x: &[V]) -> Result<Vec<V>> {
        check_dim(self.dim(), x.len(), "field argument")?;
        let n = self.state_dim();
        let proto = x.first().ok_or_else(|| Error::Argument("empty field argument".into()))?;
        let held: Vec<V>;
        let (xs, us): (&[V], &[V]) = if self.augmented {
            (&x[..n], &x[n..])
        } else {
            held = self.input.iter().map(|&u| proto.constant_like(u)).collect();
            (x, &held)
        };
        let mut out = match &self.kind {
            FieldKind::Analytic(sys) => sys.rhs(xs, us)?,
            FieldKind::Neural(net) => {
                let mut inp = xs.to_vec();
                inp.extend(us.iter().cloned());
                V::apply_net(net, &inp)?
            }
        };
        if self.augmented {
            out.extend((0..self.input_dim()).map(|_| proto.constant_like(S::zero())));
        }
        Ok(out)
    }

    pub fn eval(&self, x: &[S]) -> Result<Vec<S>> {
        self.eval_generic(x)
    }

    /// Plain-state derivative under an explicit input, ignoring `input`.
    pub fn eval_with(&self, x: &[S], u: &[S]) -> Result<Vec<S>> {
        check_dim(self.state_dim(), x.len(), "field state")?;
        check_dim(self.input_dim(), u.len(), "field input")?;
        match &self.kind {
            FieldKind::Analytic(sys) => sys.rhs(x, u),
            FieldKind::Neural(net) => {
                let mut inp = x.to_vec();
                inp.extend_from_slice(u);
                Ok(net.forward(&inp))
            }
        }
    }
}

impl VectorField<f64> {
    pub fn lift<S: Real>(&self) -> VectorField<S> {
        VectorField {
            kind: match &self.kind {
                FieldKind::Analytic(s) => FieldKind::Analytic(s.clone()),
                FieldKind::Neural(n) => FieldKind::Neural(n.lift()),
            },
            input: self.input.iter().map(|&u| S::from_f64(u)).collect(),
            augmented: self.augmented,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowpipeParams {
    pub h: f64,
    pub steps: usize,
    pub order: usize,
    pub eps_init: f64,
    pub refine_rounds: usize,
    pub enlargement: f64,
    pub max_enlargements: u32,
    pub window: usize,
}

impl Default for FlowpipeParams {
    fn default() -> Self {
        Self {
            h: 0.01,
            steps: 100,
            order: 2,
            eps_init: 1e-4,
            refine_rounds: 3,
            enlargement: 2.0,
            max_enlargements: 20,
            window: 4,
        }
    }
}

impl FlowpipeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.h)));
        }
        if !(1..=2).contains(&self.order) {
            return Err(Error::Config(format!("order must be 1 or 2, got {}", self.order)));
        }
        if !(self.eps_init > 0.0) {
            return Err(Error::Config("initial remainder must be positive".into()));
        }
        if !(self.enlargement > 1.0) {
            return Err(Error::Config("enlargement factor must exceed 1".into()));
        }
        Ok(())
    }
}

/// Sliding window of symbolic remainder blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicState<S = f64> {
    /// Size of the original variable block `z`.
    pub nz0: usize,
    /// Rows per remainder block.
    pub block: usize,
    pub window: usize,
    /// Remainder boxes behind the live `w` blocks, newest first.
    pub history: VecDeque<IntervalBox<S>>,
}

impl<S: Real> SymbolicState<S> {
    pub fn new(nz0: usize, block: usize, window: usize) -> Self {
        Self {
            nz0,
            block,
            window,
            history: VecDeque::with_capacity(window),
        }
    }

    pub fn nz(&self) -> usize {
        self.nz0 + if self.window == 0 { 0 } else { (self.window + 1) * self.block }
    }

    /// First column of the accumulated block, which follows the window.
    pub fn acc_start(&self) -> usize {
        self.nz0 + self.window * self.block
    }

    /// Extends a TM over `z` with zero columns for the remainder blocks.
    pub fn pad(&self, tm: &LinearTM<S>) -> LinearTM<S> {
        let n = tm.dim();
        let zcols = tm.a_vars();
        let a = zcols.hcat(&Mat::zeros(n, self.nz() - zcols.cols()));
        let mut out = LinearTM::from_parts(tm.c.clone(), &a);
        let nz = out.nz();
        for i in 0..n {
            out.a[(i, nz)] = tm.a[(i, tm.nz())];
        }
        out.rem = tm.rem.clone();
        out.horizon = tm.horizon;
        out
    }
}

/// Merges the oldest window block into the accumulated block. Both are
/// re-boxed in an orthonormal frame fitted to their columns, which keeps a
/// rotating remainder set from being re-wrapped in state coordinates. The
/// returned per-row magnitudes bound the frame's numerical residual.
fn fold_into_accumulated<S: Real>(a: &mut Mat<S>, acc: usize, oldest: usize, b: usize) -> Vec<S> {
    let dim = a.rows();
    let mut g = Mat::zeros(dim, 2 * b);
    for i in 0..dim {
        let row = a.row(i);
        g.row_mut(i)[..b].copy_from_slice(&row[acc..acc + b]);
        g.row_mut(i)[b..].copy_from_slice(&row[oldest..oldest + b]);
    }
    let q = orthonormal_frame(&g);
    let p = q.transpose().matmul(&g);
    let rad = p.abs_row_sums();
    let qp = q.matmul(&p);
    let slack = if outward_rounding() { 4.0 * f64::EPSILON * (2 * b) as f64 } else { 0.0 };
    (0..dim)
        .map(|i| {
            let row = a.row_mut(i);
            let mut e = S::zero();
            let mut size = S::zero();
            for k in 0..2 * b {
                e += (g[(i, k)] - qp[(i, k)]).abs();
                size += g[(i, k)].abs();
            }
            for j in 0..b {
                row[acc + j] = q[(i, j)] * rad[j];
                size += row[acc + j].abs();
            }
            e + size * slack
        })
        .collect()
}

/// Re-seeds from the previous segment's endpoint. The oldest remainder block
/// is merged into the accumulated block, the window shifts by one, and the
/// current remainder becomes the newest block (its midpoint moves into the
/// constant). With an empty window the endpoint is returned unchanged and
/// the remainder is carried as an interval.
pub fn symbolic_step<S: Real>(sym: &SymbolicState<S>, endpoint: &LinearTM<S>) -> (LinearTM<S>, SymbolicState<S>) {
    let mut next = sym.clone();
    let mut seed = endpoint.clone();
    seed.horizon = S::zero();
    let nz = seed.nz();
    for i in 0..seed.dim() {
        seed.a[(i, nz)] = S::zero();
    }
    if sym.window == 0 {
        return (seed, next);
    }
    debug_assert_eq!(nz, sym.nz());
    debug_assert_eq!(seed.dim(), sym.block);
    let (z0, b, m) = (sym.nz0, sym.block, sym.window);
    let oldest = z0 + (m - 1) * b;
    let live = (0..seed.dim()).any(|i| seed.a.row(i)[oldest..oldest + b].iter().any(|x| x.value() != 0.0));
    let residual = if live {
        fold_into_accumulated(&mut seed.a, sym.acc_start(), oldest, b)
    } else {
        vec![S::zero(); seed.dim()]
    };
    for (i, e) in residual.into_iter().enumerate() {
        let row = seed.a.row_mut(i);
        row.copy_within(z0..oldest, z0 + b);
        for v in &mut row[z0..z0 + b] {
            *v = S::zero();
        }
        let r = seed.rem.dims[i].add(Interval::symmetric(e));
        seed.c[i] += r.mid();
        row[z0 + i] = r.rad();
        seed.rem.dims[i] = Interval::zero();
    }
    next.history.push_front(endpoint.rem.clone());
    next.history.truncate(m);
    (seed, next)
}

fn with_horizon<S: Real>(rows: &mut [TmRow<S>], h: S) {
    for r in rows {
        r.h = h;
    }
}

/// Truncated Picard iteration on the polynomial part.
pub fn poly_picard<S: Real>(field: &VectorField<S>, seed: &LinearTM<S>, h: S, k: usize) -> Result<QuasiQuadTM<S>> {
    let mut base = seed.clone().into_quasi().to_rows();
    with_horizon(&mut base, h);
    let base: Vec<TmRow<S>> = base.iter().map(|r| r.poly()).collect();
    let nz = seed.nz();
    let mut g = base.clone();
    let frozen = match &field.kind {
        FieldKind::Neural(_) => Some(field.eval_generic(&base)?),
        FieldKind::Analytic(_) => None,
    };
    for _ in 0..k {
        let f = match &frozen {
            Some(f) => f.clone(),
            None => field.eval_generic(&g)?,
        };
        g = base
            .iter()
            .zip(&f)
            .map(|(b, fi)| b.add_row(&fi.integrate()).poly())
            .collect();
        if g.iter().any(|r| !r.is_finite()) {
            return Err(Error::Diverged("non-finite Picard coefficients".into()));
        }
    }
    Ok(QuasiQuadTM::from_rows(&g, nz, h))
}

/// Remainder induced by one Picard step on `p ⊕ rem`.
fn induced_remainder<S: Real>(
    field: &VectorField<S>,
    seed_rows: &[TmRow<S>],
    p: &[TmRow<S>],
    rem: &[Interval<S>],
) -> Result<Vec<Interval<S>>> {
    let cand: Vec<TmRow<S>> = p
        .iter()
        .zip(rem)
        .map(|(r, &i)| {
            let mut r = r.clone();
            r.rem = i;
            r
        })
        .collect();
    let f = field.eval_generic(&cand)?;
    Ok(seed_rows
        .iter()
        .zip(&f)
        .zip(p)
        .map(|((s, fi), pi)| s.add_row(&fi.integrate()).sub_row(pi).range())
        .collect())
}

/// Validates a remainder for `p_k` by contraction, enlarging the candidate
/// until `I1 ⊆ I0`, then tightens it for `refine_rounds` Picard rounds.
pub fn remainder_picard<S: Real>(
    field: &VectorField<S>,
    seed: &LinearTM<S>,
    pk: &QuasiQuadTM<S>,
    params: &FlowpipeParams,
) -> Result<(QuasiQuadTM<S>, StepInfo)> {
    let h = pk.lin.horizon;
    let mut seed_rows = seed.clone().into_quasi().to_rows();
    with_horizon(&mut seed_rows, h);
    let p: Vec<TmRow<S>> = pk.to_rows().iter().map(|r| r.poly()).collect();
    let eps = S::from_f64(params.eps_init);
    let mut i0: Vec<Interval<S>> = seed
        .rem
        .dims
        .iter()
        .map(|r| Interval::symmetric(eps + r.mag()))
        .collect();
    let mut ratio = f64::INFINITY;
    for enl in 0..=params.max_enlargements {
        let i1 = match induced_remainder(field, &seed_rows, &p, &i0) {
            Ok(v) => v,
            // a candidate that pushes the field out of its domain is just too large
            Err(Error::Domain(_)) if enl > 0 => break,
            Err(e) => return Err(e),
        };
        if i1.iter().all(|x| x.is_finite()) && i1.iter().zip(&i0).all(|(a, b)| a.subset_of(b)) {
            let mut cur = i1;
            for _ in 0..params.refine_rounds {
                let next = induced_remainder(field, &seed_rows, &p, &cur)?;
                cur = next
                    .iter()
                    .zip(&cur)
                    .map(|(n, c)| Interval {
                        lo: n.lo.max(c.lo),
                        hi: n.hi.min(c.hi),
                    })
                    .collect();
            }
            let rad = cur.iter().map(|x| x.mag().value()).fold(0.0, f64::max);
            let mut seg = pk.clone();
            seg.lin.rem = IntervalBox::new(cur);
            return Ok((
                seg,
                StepInfo {
                    enlargements: enl,
                    remainder_rad: rad,
                },
            ));
        }
        ratio = i1
            .iter()
            .zip(&i0)
            .map(|(a, b)| {
                let m = a.mag().value() / b.mag().value();
                if m.is_nan() {
                    f64::INFINITY
                } else {
                    m
                }
            })
            .fold(0.0, f64::max);
        // grow only the rows that escaped, past what they induced; growing
        // every row would keep a unit-gain chain (held input feeding a rate)
        // at ratio one forever
        let f = S::from_f64(params.enlargement);
        for (x, y) in i0.iter_mut().zip(&i1) {
            if y.is_finite() && y.subset_of(x) {
                continue;
            }
            let r = if y.is_finite() { x.mag().max(y.mag()) } else { x.mag() };
            *x = Interval::symmetric(r * f);
        }
    }
    Err(Error::StepFailure { step: 0, ratio })
}

/// One validated atomic step from `seed`.
pub fn flow_step<S: Real>(
    field: &VectorField<S>,
    seed: &LinearTM<S>,
    params: &FlowpipeParams,
) -> Result<(QuasiQuadTM<S>, StepInfo)> {
    let h = S::from_f64(params.h);
    let pk = poly_picard(field, seed, h, params.order)?;
    remainder_picard(field, seed, &pk, params)
}

/// Advances `seed` by one atomic step, returning the segment box, the next
/// seed and the updated window.
pub fn advance<S: Real>(
    field: &VectorField<S>,
    seed: &LinearTM<S>,
    sym: &SymbolicState<S>,
    params: &FlowpipeParams,
) -> Result<(IntervalBox<S>, StepInfo, LinearTM<S>, SymbolicState<S>)> {
    let (seg, info) = flow_step(field, seed, params)?;
    let h = seg.lin.horizon;
    let bx = seg.eval_over(Interval { lo: S::zero(), hi: h });
    if bx.is_diverged() {
        return Err(Error::Diverged("segment enclosure overflowed".into()));
    }
    let endpoint = seg.at_time(h);
    let (next, sym) = symbolic_step(sym, &endpoint);
    Ok((bx, info, next, sym))
}

/// Continuous-time reach tube from the box `x0`.
pub fn ct_reach<S: Real>(field: &VectorField<S>, x0: &IntervalBox<S>, params: &FlowpipeParams) -> Result<ReachTube<S>> {
    params.validate()?;
    check_dim(field.dim(), x0.dim(), "initial box")?;
    let n = field.dim();
    let mut sym = SymbolicState::new(n, n, params.window);
    let mut seed = sym.pad(&build_linear_tm(x0)?);
    let mut tube = ReachTube::default();
    tube.push(0, 0.0, 0.0, x0.clone(), StepInfo::default());
    for i in 0..params.steps {
        match advance(field, &seed, &sym, params) {
            Ok((bx, info, next, nsym)) => {
                tube.push(i + 1, i as f64 * params.h, (i + 1) as f64 * params.h, bx, info);
                seed = next;
                sym = nsym;
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
