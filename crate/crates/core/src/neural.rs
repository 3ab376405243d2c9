//! Feed-forward networks and linear bound propagation with shared slopes.
//!
//! Every activation is relaxed by two parallel lines, so the lower and upper
//! bounds carried backward through the network have the same coefficient
//! matrix and differ only in their offsets.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interval::{outward_rounding, Interval, IntervalBox};
use crate::linalg::Mat;
use crate::real::Real;
use crate::taylor::{LinearTM, QuasiQuadTM, TmRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<S: Real>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn apply_interval<S: Real>(self, x: Interval<S>) -> Interval<S> {
        match self {
            Activation::Relu => Interval {
                lo: x.lo.max(S::zero()),
                hi: x.hi.max(S::zero()),
            },
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S = f64> {
    pub w: Mat<S>,
    pub b: Vec<S>,
    pub act: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MLPNet<S = f64> {
    layers: Vec<Layer<S>>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl<S: Real> MLPNet<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            check_dim(l.w.rows(), l.b.len(), "layer bias")?;
            if k > 0 {
                check_dim(layers[k - 1].w.rows(), l.w.cols(), "layer chaining")?;
            }
        }
        if layers.last().map(|l| l.act) != Some(Activation::Identity) {
            return Err(Error::Argument("final activation must be identity".into()));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.rows()
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.w.matvec(&h);
            for (v, &b) in h.iter_mut().zip(&l.b) {
                *v = l.act.apply(*v + b);
            }
        }
        h
    }

    /// Multiplies the final affine layer by `k`.
    pub fn scale_output(&mut self, k: S) {
        let last = self.layers.last_mut().unwrap();
        last.w = last.w.scale(k);
        for b in &mut last.b {
            *b *= k;
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.rows() * (l.w.cols() + 1)).sum()
    }

    /// Flattened parameters, layer by layer: weights row-major then bias.
    pub fn params(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(&l.b);
        }
        out
    }

    /// Same architecture with new parameters of possibly another scalar type.
    pub fn with_params<T: Real>(&self, p: &[T]) -> MLPNet<T> {
        assert_eq!(p.len(), self.num_params());
        let mut off = 0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (r, c) = (l.w.rows(), l.w.cols());
                let w = Mat::from_vec(r, c, p[off..off + r * c].to_vec());
                off += r * c;
                let b = p[off..off + r].to_vec();
                off += r;
                Layer { w, b, act: l.act }
            })
            .collect();
        MLPNet { layers }
    }

    pub fn to_f64(&self) -> MLPNet<f64> {
        let p: Vec<f64> = self.params().iter().map(|x| x.value()).collect();
        self.with_params(&p)
    }

    /// Interval bound propagation.
    pub fn ibp(&self, domain: &IntervalBox<S>) -> IntervalBox<S> {
        let mut h = domain.dims.clone();
        for l in &self.layers {
            h = affine_interval(&l.w, &l.b, &h)
                .into_iter()
                .map(|x| l.act.apply_interval(x))
                .collect();
        }
        IntervalBox::new(h)
    }
}

impl MLPNet<f64> {
    /// Network with the given layer widths, `hidden` activations and an
    /// identity output layer; weights use scaled Gaussian initialization.
    pub fn random<R: Rng>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Argument("need at least input and output widths".into()));
        }
        let mut layers = Vec::new();
        for k in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let std = if hidden == Activation::Relu {
                (2.0 / fan_in as f64).sqrt()
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
            let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            let act = if k + 2 == sizes.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Layer {
                w: Mat::from_vec(fan_out, fan_in, data),
                b: vec![0.0; fan_out],
                act,
            });
        }
        Self::new(layers)
    }

    pub fn lift<S: Real>(&self) -> MLPNet<S> {
        let p: Vec<S> = self.params().iter().map(|&x| S::from_f64(x)).collect();
        self.with_params(&p)
    }

    pub fn to_json(&self) -> Result<String> {
        let recs: Vec<LayerRecord> = self
            .layers
            .iter()
            .map(|l| LayerRecord {
                rows: l.w.rows(),
                cols: l.w.cols(),
                weights: l.w.data().to_vec(),
                bias: l.b.clone(),
                activation: l.act,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&recs)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let recs: Vec<LayerRecord> = serde_json::from_str(s)?;
        let layers = recs
            .into_iter()
            .map(|r| {
                check_dim(r.rows * r.cols, r.weights.len(), "layer weights")?;
                Ok(Layer {
                    w: Mat::from_vec(r.rows, r.cols, r.weights),
                    b: r.bias,
                    act: r.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn affine_interval<S: Real>(w: &Mat<S>, b: &[S], x: &[Interval<S>]) -> Vec<Interval<S>> {
    (0..w.rows())
        .map(|i| {
            w.row(i)
                .iter()
                .zip(x)
                .fold(Interval::point(b[i]), |acc, (&wij, xj)| {
                    if wij.value() == 0.0 {
                        acc
                    } else {
                        acc.add(xj.scale(wij))
                    }
                })
        })
        .collect()
}

/// Parallel linear sandwich of an activation over a preactivation interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActRelaxation<S = f64> {
    pub slope: S,
    pub lower_intercept: S,
    pub upper_intercept: S,
    pub preact: Interval<S>,
}

pub fn relax_activation<S: Real>(tag: Activation, preact: Interval<S>) -> Result<ActRelaxation<S>> {
    if !preact.is_finite() {
        return Err(Error::Diverged("non-finite preactivation bounds".into()));
    }
    let (l, u) = (preact.lo, preact.hi);
    let zero = S::zero();
    let (slope, lower_intercept, upper_intercept) = match tag {
        Activation::Identity => (S::one(), zero, zero),
        Activation::Relu => {
            if u.value() <= 0.0 {
                (zero, zero, zero)
            } else if l.value() >= 0.0 {
                (S::one(), zero, zero)
            } else {
                let s = u / (u - l);
                // min of relu(x) - s x over the breakpoints {l, 0, u}
                let lo = (-(s * l)).min(zero).min(u - s * u);
                (s, lo, -(s * l))
            }
        }
        Activation::Tanh => {
            let (tl, tu) = (l.tanh(), u.tanh());
            if l.value() == u.value() {
                let s = S::one() - tl * tl;
                let i = tl - s * l;
                (s, i, i)
            } else {
                // tanh' is unimodal with its peak at 0, so its minimum over
                // [l,u] sits at an endpoint; with that slope tanh(x) - s x is
                // nondecreasing and its extremes are the endpoint values.
                let s = (S::one() - tl * tl).min(S::one() - tu * tu);
                (s, tl - s * l, tu - s * u)
            }
        }
    };
    let (lower_intercept, upper_intercept) = if outward_rounding() && tag != Activation::Identity {
        let pad = |x: S| (x.abs() + S::one()) * (4.0 * f64::EPSILON);
        (lower_intercept - pad(lower_intercept), upper_intercept + pad(upper_intercept))
    } else {
        (lower_intercept, upper_intercept)
    };
    Ok(ActRelaxation {
        slope,
        lower_intercept,
        upper_intercept,
        preact,
    })
}

/// `A x + b_lower <= f(x) <= A x + b_upper` for `x` in `domain`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBounds<S = f64> {
    pub a: Mat<S>,
    pub b_lower: Vec<S>,
    pub b_upper: Vec<S>,
    pub domain: IntervalBox<S>,
}

impl<S: Real> LinearBounds<S> {
    /// Interval bounds for each output over the whole domain.
    pub fn concretize(&self) -> IntervalBox<S> {
        let lin = affine_interval(&self.a, &vec![S::zero(); self.a.rows()], &self.domain.dims);
        let dims = lin
            .iter()
            .enumerate()
            .map(|(i, x)| Interval {
                lo: x.lo + self.b_lower[i],
                hi: x.hi + self.b_upper[i],
            })
            .collect();
        IntervalBox::new(dims)
    }

    pub fn eval_bounds(&self, x: &[f64]) -> Vec<(f64, f64)> {
        (0..self.a.rows())
            .map(|i| {
                let ax: f64 = self.a.row(i).iter().zip(x).map(|(a, v)| a.value() * v).sum();
                (ax + self.b_lower[i].value(), ax + self.b_upper[i].value())
            })
            .collect()
    }
}

/// Preactivation bounds and relaxations for every layer, computed with a
/// forward linear pass intersected with interval propagation.
pub fn crown_relaxations<S: Real>(net: &MLPNet<S>, domain: &IntervalBox<S>) -> Result<Vec<Vec<ActRelaxation<S>>>> {
    let n_in = domain.dim();
    // post-activation of the previous layer: lam x + [lo, hi]
    let mut lam = Mat::<S>::identity(n_in);
    let mut off: Vec<Interval<S>> = vec![Interval::zero(); n_in];
    let mut ibp: Vec<Interval<S>> = domain.dims.clone();
    let mut out = Vec::with_capacity(net.layers.len());
    for l in &net.layers {
        let wl = l.w.matmul(&lam);
        let w_off = affine_interval(&l.w, &l.b, &off);
        let ibp_pre = affine_interval(&l.w, &l.b, &ibp);
        let lin_range = affine_interval(&wl, &vec![S::zero(); wl.rows()], &domain.dims);
        let mut relax = Vec::with_capacity(l.w.rows());
        for i in 0..l.w.rows() {
            let lin = lin_range[i].add(w_off[i]);
            let pre = Interval {
                lo: lin.lo.max(ibp_pre[i].lo),
                hi: lin.hi.min(ibp_pre[i].hi),
            };
            // an empty intersection can only come from rounding; fall back
            let pre = if pre.lo.value() > pre.hi.value() { ibp_pre[i] } else { pre };
            relax.push(relax_activation(l.act, pre)?);
        }
        let mut next_lam = wl;
        let mut next_off = Vec::with_capacity(relax.len());
        for (i, r) in relax.iter().enumerate() {
            for v in next_lam.row_mut(i) {
                *v *= r.slope;
            }
            next_off.push(w_off[i].scale(r.slope).add(Interval {
                lo: r.lower_intercept,
                hi: r.upper_intercept,
            }));
        }
        ibp = ibp_pre.into_iter().map(|x| l.act.apply_interval(x)).collect();
        lam = next_lam;
        off = next_off;
        out.push(relax);
    }
    Ok(out)
}

/// Backward bound propagation through parallel relaxations.
pub fn crown_backward<S: Real>(net: &MLPNet<S>, domain: &IntervalBox<S>) -> Result<LinearBounds<S>> {
    check_dim(net.input_dim(), domain.dim(), "crown domain")?;
    if domain.is_diverged() {
        return Err(Error::Diverged("crown domain diverged".into()));
    }
    let relax = crown_relaxations(net, domain)?;
    let n_o = net.output_dim();
    let mut omega = Mat::<S>::identity(n_o);
    let mut acc: Vec<Interval<S>> = vec![Interval::zero(); n_o];
    let mut fan = 0usize;
    for (l, rel) in net.layers.iter().zip(&relax).rev() {
        // through the activation: z = s p + [lo, hi]
        let mut om = omega.clone();
        for i in 0..n_o {
            let row = om.row_mut(i);
            for (j, r) in rel.iter().enumerate() {
                let w = row[j];
                if w.value() != 0.0 {
                    acc[i] = acc[i].add(
                        Interval {
                            lo: r.lower_intercept,
                            hi: r.upper_intercept,
                        }
                        .scale(w),
                    );
                }
                row[j] = w * r.slope;
            }
            // through the affine map: p = W x + b
            let shift: S = row.iter().zip(&l.b).map(|(&a, &b)| a * b).sum();
            acc[i] = acc[i].shift(shift);
        }
        omega = om.matmul(&l.w);
        fan += l.w.cols() + 1;
    }
    let (mut b_lower, mut b_upper): (Vec<S>, Vec<S>) = acc.iter().map(|x| (x.lo, x.hi)).unzip();
    if outward_rounding() {
        // a posteriori allowance for rounding in the coefficient products
        let mags: Vec<S> = domain.dims.iter().map(|d| d.mag()).collect();
        for i in 0..n_o {
            let m: S = omega.row(i).iter().zip(&mags).map(|(a, &x)| a.abs() * x).sum();
            let slack = (m + b_lower[i].abs() + b_upper[i].abs() + S::one()) * (4.0 * fan as f64 * f64::EPSILON);
            b_lower[i] -= slack;
            b_upper[i] += slack;
        }
    }
    Ok(LinearBounds {
        a: omega,
        b_lower,
        b_upper,
        domain: domain.clone(),
    })
}

/// Fraction of the linear-bound width below which plain interval bounds are
/// preferred for an output.
pub const IBP_SWITCH: f64 = 0.5;

/// Network output enclosure as an affine TM of the input TM's variables.
///
/// The time column of the input is handled as one more normalized variable.
/// Per output, interval propagation replaces the linear bound only when its
/// width is below [`IBP_SWITCH`] times the linear bound's width.
pub fn certify_tm_input<S: Real>(net: &MLPNet<S>, tm: &LinearTM<S>) -> Result<LinearTM<S>> {
    check_dim(net.input_dim(), tm.dim(), "certify input")?;
    if !tm.is_finite() {
        return Err(Error::Diverged("input TM diverged".into()));
    }
    let nz = tm.nz();
    let h = tm.horizon;
    let tcol = tm.time_col();
    let use_time = h.value() > 0.0 && tcol.iter().any(|x| x.value() != 0.0);
    let half_h = h * 0.5;
    // x = c' + [A_v | a_t h/2] s + r
    let nv = nz + usize::from(use_time);
    let n_i = tm.dim();
    let mut g = Mat::<S>::zeros(n_i, nv);
    let mut c = tm.c.clone();
    for i in 0..n_i {
        let src = tm.a.row(i);
        let dst = g.row_mut(i);
        dst[..nz].copy_from_slice(&src[..nz]);
        if use_time {
            dst[nz] = tcol[i] * half_h;
            c[i] += tcol[i] * half_h;
        }
    }

    let first = &net.layers[0];
    let w1g = first.w.matmul(&g);
    let mut w1 = w1g.hcat(&first.w);
    let mut b1 = first.w.matvec(&c);
    for (x, &b) in b1.iter_mut().zip(&first.b) {
        *x += b;
    }
    let mut layers = Vec::with_capacity(net.layers.len());
    layers.push(Layer {
        w: std::mem::replace(&mut w1, Mat::zeros(0, 0)),
        b: b1,
        act: first.act,
    });
    layers.extend(net.layers[1..].iter().cloned());
    let rnet = MLPNet { layers };

    let mut dom = IntervalBox::unit(nv).dims;
    dom.extend(tm.rem.dims.iter().copied());
    let dom = IntervalBox::new(dom);
    let lb = crown_backward(&rnet, &dom)?;
    let ibp = rnet.ibp(&dom);

    let n_o = net.output_dim();
    let mut out_c = Vec::with_capacity(n_o);
    let mut out_a = Mat::<S>::zeros(n_o, nz + 1);
    let mut out_rem = Vec::with_capacity(n_o);
    for i in 0..n_o {
        let row = lb.a.row(i);
        let r_part = row[nv..]
            .iter()
            .zip(&tm.rem.dims)
            .fold(Interval::zero(), |acc, (&w, d)| acc.add(d.scale(w)));
        let rem = r_part.add(Interval {
            lo: lb.b_lower[i],
            hi: lb.b_upper[i],
        });
        let spread: S = row[..nv].iter().map(|x| x.abs()).sum();
        let lin_width = spread * 2.0 + rem.width();
        // the linear part carries dependencies, so IBP must win clearly
        if ibp.dims[i].width().value() < IBP_SWITCH * lin_width.value() {
            out_c.push(ibp.dims[i].mid());
            out_rem.push(ibp.dims[i].shift(-ibp.dims[i].mid()));
            continue;
        }
        let m = rem.mid();
        let dst = out_a.row_mut(i);
        dst[..nz].copy_from_slice(&row[..nz]);
        let mut ci = m;
        if use_time {
            // s = 2 tau / h - 1
            let ps = row[nz];
            dst[nz] = ps * 2.0 / h;
            ci -= ps;
        }
        out_c.push(ci);
        out_rem.push(rem.shift(-m));
    }
    Ok(LinearTM {
        c: out_c,
        a: out_a,
        rem: IntervalBox::new(out_rem),
        horizon: h,
    })
}

/// Certification of a quasi-quadratic input: the cross term is bounded into
/// the remainder first.
pub fn certify_quasi<S: Real>(net: &MLPNet<S>, tm: &QuasiQuadTM<S>) -> Result<LinearTM<S>> {
    let h = tm.lin.horizon;
    let mut lin = tm.lin.clone();
    for i in 0..tm.dim() {
        let sb: S = tm.b.row(i).iter().map(|x| x.abs()).sum();
        lin.rem.dims[i] = lin.rem.dims[i].add(Interval::symmetric(sb * h));
    }
    certify_tm_input(net, &lin)
}

/// Row form of [`certify_quasi`], used by neural vector fields.
pub fn certify_rows<S: Real>(net: &MLPNet<S>, rows: &[TmRow<S>]) -> Result<Vec<TmRow<S>>> {
    let nz = rows.first().map(|r| r.nz()).unwrap_or(0);
    let h = rows.first().map(|r| r.h).unwrap_or_else(S::zero);
    let q = QuasiQuadTM::from_rows(rows, nz, h);
    let out = certify_quasi(net, &q)?;
    Ok(out.into_quasi().to_rows())
}

/// Network with `ref_input` folded into the first-layer bias so that it only
/// takes the state as input.
pub fn fold_reference<S: Real>(controller: &MLPNet<S>, state_dim: usize, ref_input: &[S]) -> Result<MLPNet<S>> {
    check_dim(controller.input_dim(), state_dim + ref_input.len(), "controller input")?;
    let first = &controller.layers[0];
    let w_state = first.w.cols_slice(0, state_dim);
    let w_ref = first.w.cols_slice(state_dim, ref_input.len());
    let mut b = w_ref.matvec(ref_input);
    for (x, &b0) in b.iter_mut().zip(&first.b) {
        *x += b0;
    }
    let mut layers = vec![Layer {
        w: w_state,
        b,
        act: first.act,
    }];
    layers.extend(controller.layers[1..].iter().cloned());
    Ok(MLPNet { layers })
}

/// Control TM over the state TM's variables.
pub fn ctl_crown<S: Real>(state_tm: &LinearTM<S>, controller: &MLPNet<S>, ref_input: &[S]) -> Result<LinearTM<S>> {
    let net = fold_reference(controller, state_tm.dim(), ref_input)?;
    certify_tm_input(&net, state_tm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{build_linear_tm, tm_affine_image};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    fn sample_box(rng: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
        b.dims
            .iter()
            .map(|d| if d.lo == d.hi { d.lo } else { rng.random_range(d.lo..=d.hi) })
            .collect()
    }

    fn rand_box(rng: &mut ChaCha8Rng, n: usize, max_w: f64) -> IntervalBox {
        IntervalBox::new(
            (0..n)
                .map(|_| {
                    let c = rng.random_range(-1.0..1.0);
                    let r = rng.random_range(0.0..max_w);
                    iv(c - r, c + r)
                })
                .collect(),
        )
    }

    fn rand_linear_tm(rng: &mut ChaCha8Rng, n: usize, nz: usize) -> LinearTM {
        let mut a = Mat::zeros(n, nz);
        for i in 0..n {
            for j in 0..nz {
                a[(i, j)] = rng.random_range(-0.3..0.3);
            }
        }
        let mut tm = LinearTM::from_parts((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), &a);
        tm.rem = IntervalBox::new((0..n).map(|_| iv(-0.02, rng.random_range(0.0..0.05))).collect());
        tm
    }

    #[test]
    fn relu_relaxation_examples() {
        let r = relax_activation(Activation::Relu, iv(1.0, 3.0)).unwrap();
        assert_eq!((r.slope, r.lower_intercept, r.upper_intercept), (1.0, 0.0, 0.0));
        let r = relax_activation(Activation::Relu, iv(-3.0, -1.0)).unwrap();
        assert_eq!((r.slope, r.lower_intercept, r.upper_intercept), (0.0, 0.0, 0.0));
        let r = relax_activation(Activation::Relu, iv(-1.0, 1.0)).unwrap();
        assert_eq!(r.slope, 0.5);
        assert_eq!(r.upper_intercept, 0.5);
        assert!(r.lower_intercept <= 0.0);
        for k in 0..=1000 {
            let x = -1.0 + 2.0 * k as f64 / 1000.0;
            let y = x.max(0.0);
            assert!(r.slope * x + r.lower_intercept <= y && y <= r.slope * x + r.upper_intercept);
        }
        assert!(relax_activation(Activation::Relu, iv(f64::NEG_INFINITY, 1.0)).is_err());
    }

    #[test]
    fn tanh_relaxation_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let l: f64 = rng.random_range(-4.0..4.0);
            let u = l + rng.random_range(0.0..4.0);
            let r = relax_activation(Activation::Tanh, iv(l, u)).unwrap();
            assert!(r.lower_intercept <= r.upper_intercept);
            for k in 0..=200 {
                let x = l + (u - l) * k as f64 / 200.0;
                let y = x.tanh();
                assert!(r.slope * x + r.lower_intercept <= y + 1e-15);
                assert!(y <= r.slope * x + r.upper_intercept + 1e-15);
            }
        }
    }

    #[test]
    fn affine_net_is_exact() {
        let net = MLPNet::new(vec![
            Layer { w: Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]), b: vec![0.1, -0.2], act: Activation::Identity },
            Layer { w: Mat::from_rows(&[vec![3.0, -1.0]]), b: vec![1.0], act: Activation::Identity },
        ])
        .unwrap();
        let lb = crown_backward(&net, &IntervalBox::new(vec![iv(-1.0, 1.0), iv(0.0, 2.0)])).unwrap();
        assert_eq!(lb.a.row(0), &[4.0, 5.5]);
        assert_eq!(lb.b_lower, lb.b_upper);
        assert!((lb.b_lower[0] - (0.3 + 0.2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn relu_stable_net() {
        let net = MLPNet::new(vec![
            Layer { w: Mat::identity(1), b: vec![0.0], act: Activation::Relu },
            Layer { w: Mat::identity(1), b: vec![0.0], act: Activation::Identity },
        ])
        .unwrap();
        let lb = crown_backward(&net, &IntervalBox::new(vec![iv(1.0, 2.0)])).unwrap();
        assert_eq!(lb.a.row(0), &[1.0]);
        assert_eq!((lb.b_lower[0], lb.b_upper[0]), (0.0, 0.0));
    }

    #[test]
    fn crown_contains_activation_pattern_range() {
        // 2 inputs, 2 hidden relus; exact range from all 4 activation patterns
        let w1 = Mat::from_rows(&[vec![1.0, -1.0], vec![0.5, 1.0]]);
        let b1 = vec![0.2, -0.1];
        let w2 = Mat::from_rows(&[vec![1.0, -2.0]]);
        let net = MLPNet::new(vec![
            Layer { w: w1.clone(), b: b1.clone(), act: Activation::Relu },
            Layer { w: w2.clone(), b: vec![0.3], act: Activation::Identity },
        ])
        .unwrap();
        let dom = IntervalBox::new(vec![iv(-1.0, 1.0), iv(-1.0, 1.0)]);
        let lb = crown_backward(&net, &dom).unwrap();
        let range = lb.concretize();

        // On each pattern region the net is affine; its extrema lie at vertices
        // of the region, which are found on a fine grid of the box boundary and
        // the region boundaries. A dense grid is an exact-enough proxy here.
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let n = 400;
        for i in 0..=n {
            for j in 0..=n {
                let x = [-1.0 + 2.0 * i as f64 / n as f64, -1.0 + 2.0 * j as f64 / n as f64];
                let mut best = None;
                for pat in 0..4u32 {
                    let h: Vec<f64> = (0..2)
                        .map(|k| {
                            let p = w1.row(k)[0] * x[0] + w1.row(k)[1] * x[1] + b1[k];
                            if pat >> k & 1 == 1 { p } else { 0.0 }
                        })
                        .collect();
                    // a pattern is consistent when on-units are nonnegative and off-units nonpositive
                    let ok = (0..2).all(|k| {
                        let p = w1.row(k)[0] * x[0] + w1.row(k)[1] * x[1] + b1[k];
                        (pat >> k & 1 == 1) == (p >= 0.0)
                    });
                    if ok {
                        best = Some(w2.row(0)[0] * h[0] + w2.row(0)[1] * h[1] + 0.3);
                    }
                }
                let y = best.unwrap();
                assert!((y - net.forward(&x)[0]).abs() < 1e-12);
                lo = lo.min(y);
                hi = hi.max(y);
                let (bl, bu) = lb.eval_bounds(&x)[0];
                assert!(bl <= y + 1e-12 && y <= bu + 1e-12);
            }
        }
        assert!(range.dims[0].lo <= lo && hi <= range.dims[0].hi);
    }

    #[test]
    fn crown_sampled_soundness_and_shared_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Relu, Activation::Tanh] {
            for _ in 0..5 {
                let net = MLPNet::random(&[3, 8, 8, 2], act, &mut rng).unwrap();
                let dom = rand_box(&mut rng, 3, 0.5);
                let lb = crown_backward(&net, &dom).unwrap();
                for i in 0..2 {
                    assert!(lb.b_lower[i] <= lb.b_upper[i]);
                }
                let mut violations = 0;
                for _ in 0..10_000 {
                    let x = sample_box(&mut rng, &dom);
                    let y = net.forward(&x);
                    for (yi, (l, u)) in y.iter().zip(lb.eval_bounds(&x)) {
                        if *yi < l - 1e-12 || *yi > u + 1e-12 {
                            violations += 1;
                        }
                    }
                }
                assert_eq!(violations, 0);
            }
        }
    }

    #[test]
    fn certify_point_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let affine = MLPNet::new(vec![Layer {
            w: Mat::from_rows(&[vec![1.0, 2.0], vec![0.0, -1.0]]),
            b: vec![0.5, 0.0],
            act: Activation::Identity,
        }])
        .unwrap();
        let point = build_linear_tm(&IntervalBox::point(&[0.3, -0.7])).unwrap();
        let out = certify_tm_input(&affine, &point).unwrap();
        let img = affine.forward(&[0.3, -0.7]);
        for i in 0..2 {
            assert!((out.c[i] - img[i]).abs() < 1e-15);
            assert_eq!(out.rem.dims[i].width(), 0.0);
        }

        let ident = MLPNet::new(vec![Layer { w: Mat::identity(3), b: vec![0.0; 3], act: Activation::Identity }]).unwrap();
        let tm = rand_linear_tm(&mut rng, 3, 4);
        let out = certify_tm_input(&ident, &tm).unwrap();
        for i in 0..3 {
            assert!((out.c[i] + out.rem.dims[i].mid() - tm.c[i] - tm.rem.dims[i].mid()).abs() < 1e-14);
            assert!((out.rem.dims[i].width() - tm.rem.dims[i].width()).abs() < 1e-14);
            for j in 0..5 {
                assert!((out.a[(i, j)] - tm.a[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn certify_monte_carlo_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for act in [Activation::Relu, Activation::Tanh] {
            for _ in 0..4 {
                let net = MLPNet::random(&[3, 10, 10, 2], act, &mut rng).unwrap();
                let mut tm = rand_linear_tm(&mut rng, 3, 4);
                tm.horizon = 0.1;
                for i in 0..3 {
                    tm.a[(i, 4)] = rng.random_range(-1.0..1.0);
                }
                let out = certify_tm_input(&net, &tm).unwrap();
                for _ in 0..10_000 {
                    let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..=1.0)).collect();
                    let tau = rng.random_range(0.0..=0.1);
                    let mut x = tm.eval_point(&z, tau);
                    for (i, xi) in x.iter_mut().enumerate() {
                        *xi += rng.random_range(tm.rem.dims[i].lo..=tm.rem.dims[i].hi);
                    }
                    let y = net.forward(&x);
                    let p = out.eval_point(&z, tau);
                    for i in 0..2 {
                        let d = y[i] - p[i];
                        assert!(out.rem.dims[i].lo - 1e-12 <= d && d <= out.rem.dims[i].hi + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn ctl_crown_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let state = rand_linear_tm(&mut rng, 2, 3);
        let zero = MLPNet::new(vec![
            Layer { w: Mat::zeros(4, 3), b: vec![0.0; 4], act: Activation::Relu },
            Layer { w: Mat::zeros(1, 4), b: vec![0.0], act: Activation::Identity },
        ])
        .unwrap();
        let u = ctl_crown(&state, &zero, &[1.0]).unwrap();
        assert_eq!(u.c, vec![0.0]);
        assert_eq!(u.rem.dims[0], iv(0.0, 0.0));
        assert!(u.a.data().iter().all(|&x| x == 0.0));

        let k = Mat::from_rows(&[vec![-1.0, -0.5]]);
        let lin = MLPNet::new(vec![Layer { w: k.hcat(&Mat::zeros(1, 1)), b: vec![0.0], act: Activation::Identity }]).unwrap();
        let u = ctl_crown(&state, &lin, &[2.0]).unwrap();
        let expect = tm_affine_image(&state, &k, &[0.0]).unwrap();
        assert!((u.c[0] + u.rem.dims[0].mid() - expect.c[0] - expect.rem.dims[0].mid()).abs() < 1e-14);
        assert!((u.rem.dims[0].width() - expect.rem.dims[0].width()).abs() < 1e-14);
        for j in 0..4 {
            assert!((u.a[(0, j)] - expect.a[(0, j)]).abs() < 1e-15);
        }

        let ctl = MLPNet::random(&[3, 16, 1], Activation::Tanh, &mut rng).unwrap();
        let u = ctl_crown(&state, &ctl, &[0.4]).unwrap();
        let bx = u.range();
        for _ in 0..10_000 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let mut x = state.eval_point(&z, 0.0);
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += rng.random_range(state.rem.dims[i].lo..=state.rem.dims[i].hi);
            }
            x.push(0.4);
            assert!(bx.contains_with_tol(&ctl.forward(&x), 1e-12).unwrap());
        }
    }

    #[test]
    fn dependency_preserved_across_two_applications() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut wins = 0;
        for _ in 0..20 {
            let net = MLPNet::random(&[3, 12, 3], Activation::Tanh, &mut rng).unwrap();
            let tm = rand_linear_tm(&mut rng, 3, 3);
            let once = certify_tm_input(&net, &tm).unwrap();
            let chained = certify_tm_input(&net, &once).unwrap().range();
            let boxed = build_linear_tm(&once.range()).unwrap();
            let interval = certify_tm_input(&net, &boxed).unwrap().range();
            let (a, b) = (chained.volume_proxy(), interval.volume_proxy());
            assert!(a <= b * (1.0 + 1e-12), "{a} > {b}");
            if a < b {
                wins += 1;
            }
        }
        assert!(wins > 0);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = MLPNet::random(&[2, 5, 1], Activation::Relu, &mut rng).unwrap();
        let back = MLPNet::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        let bad = r#"[{"rows":1,"cols":2,"weights":[1.0],"bias":[0.0],"activation":"identity"}]"#;
        assert!(MLPNet::from_json(bad).is_err());
        let not_last = r#"[{"rows":1,"cols":1,"weights":[1.0],"bias":[0.0],"activation":"relu"}]"#;
        assert!(MLPNet::from_json(not_last).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // For a single hidden layer the preactivation bounds are exact, so the
        // relaxation gaps can only shrink with the domain.
        #[test]
        fn offset_width_monotone_in_domain(seed in 0u64..10_000, shrink in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let act = if seed % 2 == 0 { Activation::Relu } else { Activation::Tanh };
            let net = MLPNet::random(&[3, 8, 2], act, &mut rng).unwrap();
            let outer = rand_box(&mut rng, 3, 1.0);
            let inner = IntervalBox::new(outer.dims.iter().map(|d| {
                let w = d.width() * shrink;
                let lo = d.lo + rng.random_range(0.0..=(d.width() - w));
                iv(lo, lo + w)
            }).collect());
            let a = crown_backward(&net, &outer).unwrap();
            let b = crown_backward(&net, &inner).unwrap();
            for i in 0..2 {
                let wa = a.b_upper[i] - a.b_lower[i];
                let wb = b.b_upper[i] - b.b_lower[i];
                prop_assert!(wb <= wa * (1.0 + 1e-12) + 1e-12);
            }
        }
    }
}
