//! Fixed-shape Taylor models.
//!
//! Every model lives over the normalized domain `v ∈ [-1,1]^nz` and, for
//! flowpipe segments, local time `τ ∈ [0,h]`. The polynomial part is
//! restricted to `c + A_v v + a_t τ + τ B v`; anything of higher degree is
//! bounded and folded into the interval remainder. Column `nz` of `A` is the
//! time coefficient.

use serde_json::json;

use crate::error::{check_dim, Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::linalg::Mat;
use crate::real::Real;

/// `x = c + A[:, ..nz] v + A[:, nz] τ ⊕ rem`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTM<S = f64> {
    pub c: Vec<S>,
    pub a: Mat<S>,
    pub rem: IntervalBox<S>,
    pub horizon: S,
}

/// Linear TM plus the `τ B v` cross term.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiQuadTM<S = f64> {
    pub lin: LinearTM<S>,
    pub b: Mat<S>,
}

/// A flowpipe segment valid for `τ ∈ [0, horizon]`.
pub type TMTrajectorySeg<S = f64> = QuasiQuadTM<S>;

/// Interval matrix-vector product `M I`.
pub fn interval_matvec<S: Real>(m: &Mat<S>, v: &IntervalBox<S>) -> IntervalBox<S> {
    let dims = (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .zip(&v.dims)
                .fold(Interval::zero(), |acc, (&w, d)| {
                    if w.value() == 0.0 {
                        acc
                    } else {
                        acc.add(d.scale(w))
                    }
                })
        })
        .collect();
    IntervalBox::new(dims)
}

impl<S: Real> LinearTM<S> {
    /// Zero-remainder model with the given constant and variable block.
    pub fn from_parts(c: Vec<S>, a_vars: &Mat<S>) -> Self {
        let n = c.len();
        assert_eq!(a_vars.rows(), n);
        let a = a_vars.hcat(&Mat::zeros(n, 1));
        Self {
            rem: IntervalBox::point(&vec![S::zero(); n]),
            c,
            a,
            horizon: S::zero(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Number of normalized domain variables (time excluded).
    #[inline]
    pub fn nz(&self) -> usize {
        self.a.cols() - 1
    }

    pub fn domain(&self) -> IntervalBox<S> {
        IntervalBox::unit(self.nz())
    }

    /// Variable block `A[:, ..nz]`.
    pub fn a_vars(&self) -> Mat<S> {
        self.a.cols_slice(0, self.nz())
    }

    pub fn time_col(&self) -> Vec<S> {
        self.a.col(self.nz())
    }

    pub fn check_shape(&self) -> Result<()> {
        check_dim(self.dim(), self.a.rows(), "TM A rows")?;
        check_dim(self.dim(), self.rem.dim(), "TM remainder")?;
        if self.a.cols() == 0 {
            return Err(Error::Argument("TM A has no time column".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.c.iter().all(|x| x.is_finite()) && self.a.all_finite() && !self.rem.is_diverged()
    }

    /// Box enclosure over the domain and `τ ∈ [0, horizon]`.
    pub fn range(&self) -> IntervalBox<S> {
        self.clone().into_quasi().eval_over(Interval {
            lo: S::zero(),
            hi: self.horizon,
        })
    }

    pub fn into_quasi(self) -> QuasiQuadTM<S> {
        let (n, nz) = (self.dim(), self.nz());
        QuasiQuadTM {
            lin: self,
            b: Mat::zeros(n, nz),
        }
    }

    /// Evaluates the polynomial part at a concrete domain point and time.
    pub fn eval_point(&self, v: &[f64], tau: f64) -> Vec<f64> {
        let nz = self.nz();
        (0..self.dim())
            .map(|i| {
                let row = self.a.row(i);
                let mut s = self.c[i].value() + row[nz].value() * tau;
                for j in 0..nz {
                    s += row[j].value() * v[j];
                }
                s
            })
            .collect()
    }

    pub fn to_f64(&self) -> LinearTM<f64> {
        LinearTM {
            c: self.c.iter().map(|x| x.value()).collect(),
            a: self.a.to_f64(),
            rem: self.rem.to_f64(),
            horizon: self.horizon.value(),
        }
    }
}

impl LinearTM<f64> {
    pub fn lift<S: Real>(&self) -> LinearTM<S> {
        LinearTM {
            c: self.c.iter().map(|&x| S::from_f64(x)).collect(),
            a: self.a.lift(),
            rem: self.rem.lift(),
            horizon: S::from_f64(self.horizon),
        }
    }
}

impl<S: Real> QuasiQuadTM<S> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.lin.dim()
    }
    #[inline]
    pub fn nz(&self) -> usize {
        self.lin.nz()
    }

    pub fn check_shape(&self) -> Result<()> {
        self.lin.check_shape()?;
        check_dim(self.dim(), self.b.rows(), "TM B rows")?;
        check_dim(self.nz(), self.b.cols(), "TM B cols")
    }

    /// Enclosure for `τ` ranging over `tau` (which must lie in `[0, horizon]`).
    ///
    /// For fixed `τ` the range over the unit domain is exact; the upper bound
    /// is convex and the lower bound concave in `τ`, so the hull of the two
    /// endpoint evaluations is exact for the polynomial part.
    pub fn eval_over(&self, tau: Interval<S>) -> IntervalBox<S> {
        let nz = self.nz();
        let dims = (0..self.dim())
            .map(|i| {
                let a = self.lin.a.row(i);
                let b = self.b.row(i);
                let at = |t: S| -> Interval<S> {
                    let mut spread = S::zero();
                    for j in 0..nz {
                        spread += (a[j] + b[j] * t).abs();
                    }
                    let mid = self.lin.c[i] + a[nz] * t;
                    Interval {
                        lo: mid - spread,
                        hi: mid + spread,
                    }
                };
                let mut r = at(tau.lo);
                if tau.hi.value() != tau.lo.value() {
                    r = r.hull(&at(tau.hi));
                }
                r.add(self.lin.rem.dims[i])
            })
            .collect();
        IntervalBox::new(dims)
    }

    /// Linear TM obtained by fixing `τ = t`; the remainder is kept.
    pub fn at_time(&self, t: S) -> LinearTM<S> {
        let (n, nz) = (self.dim(), self.nz());
        let mut a = Mat::zeros(n, nz + 1);
        let mut c = self.lin.c.clone();
        for i in 0..n {
            let src = self.lin.a.row(i);
            let b = self.b.row(i);
            c[i] += src[nz] * t;
            let dst = a.row_mut(i);
            for j in 0..nz {
                dst[j] = src[j] + b[j] * t;
            }
        }
        LinearTM {
            c,
            a,
            rem: self.lin.rem.clone(),
            horizon: S::zero(),
        }
    }

    /// Linear TM over the same variables enclosing every `τ ∈ [0, horizon]`:
    /// time-dependent parts are interval-bounded into the remainder.
    pub fn bound_time(&self) -> LinearTM<S> {
        let h = self.lin.horizon;
        let (n, nz) = (self.dim(), self.nz());
        let mut out = self.at_time(S::zero());
        for i in 0..n {
            let t_coef = self.lin.a[(i, nz)];
            let sb: S = self.b.row(i).iter().map(|x| x.abs()).sum();
            let time_part = Interval { lo: S::zero(), hi: h }.scale(t_coef);
            let cross = Interval::symmetric(sb * h);
            out.rem.dims[i] = out.rem.dims[i].add(time_part).add(cross);
        }
        out
    }

    pub fn eval_point(&self, v: &[f64], tau: f64) -> Vec<f64> {
        let base = self.lin.eval_point(v, tau);
        (0..self.dim())
            .map(|i| {
                let b = self.b.row(i);
                base[i] + tau * b.iter().zip(v).map(|(x, y)| x.value() * y).sum::<f64>()
            })
            .collect()
    }

    pub fn to_rows(&self) -> Vec<TmRow<S>> {
        let nz = self.nz();
        (0..self.dim())
            .map(|i| TmRow {
                c: self.lin.c[i],
                a: self.lin.a.row(i)[..nz].to_vec(),
                t: self.lin.a[(i, nz)],
                b: self.b.row(i).to_vec(),
                rem: self.lin.rem.dims[i],
                h: self.lin.horizon,
            })
            .collect()
    }

    pub fn from_rows(rows: &[TmRow<S>], nz: usize, horizon: S) -> Self {
        let n = rows.len();
        let mut a = Mat::zeros(n, nz + 1);
        let mut b = Mat::zeros(n, nz);
        let mut c = Vec::with_capacity(n);
        let mut rem = Vec::with_capacity(n);
        for (i, r) in rows.iter().enumerate() {
            debug_assert_eq!(r.a.len(), nz);
            c.push(r.c);
            a.row_mut(i)[..nz].copy_from_slice(&r.a);
            a[(i, nz)] = r.t;
            b.row_mut(i).copy_from_slice(&r.b);
            rem.push(r.rem);
        }
        Self {
            lin: LinearTM {
                c,
                a,
                rem: IntervalBox::new(rem),
                horizon,
            },
            b,
        }
    }
}

impl QuasiQuadTM<f64> {
    /// Debug dump with keys `c`, `A`, `B`, `remainder`, `horizon`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = |m: &Mat<f64>| -> Vec<Vec<f64>> { (0..m.rows()).map(|i| m.row(i).to_vec()).collect() };
        json!({
            "c": self.lin.c,
            "A": rows(&self.lin.a),
            "B": rows(&self.b),
            "remainder": self.lin.rem,
            "horizon": self.lin.horizon,
        })
    }
}

/// Affine TM over the unit box reproducing `bx` exactly.
pub fn build_linear_tm<S: Real>(bx: &IntervalBox<S>) -> Result<LinearTM<S>> {
    if bx.is_diverged() {
        return Err(Error::Diverged("cannot build a TM from a diverged box".into()));
    }
    Ok(LinearTM::from_parts(bx.center(), &Mat::from_diag(&bx.radii())))
}

/// Enclosure of `tm` for `τ ∈ tau`; `tau` must lie within `[0, horizon]`.
pub fn tm_eval_interval<S: Real>(tm: &QuasiQuadTM<S>, tau: Interval<S>) -> Result<IntervalBox<S>> {
    if tau.lo.value() < 0.0 || tau.hi.value() > tm.lin.horizon.value() || tau.lo.value() > tau.hi.value() {
        return Err(Error::Argument(format!(
            "tau [{}, {}] outside horizon [0, {}]",
            tau.lo.value(),
            tau.hi.value(),
            tm.lin.horizon.value()
        )));
    }
    Ok(tm.eval_over(tau))
}

/// `M tm + d`, exact on the polynomial part.
pub fn tm_affine_image<S: Real>(tm: &LinearTM<S>, m: &Mat<S>, d: &[S]) -> Result<LinearTM<S>> {
    check_dim(tm.dim(), m.cols(), "affine image M cols")?;
    check_dim(m.rows(), d.len(), "affine image offset")?;
    let mut c = m.matvec(&tm.c);
    for (ci, &di) in c.iter_mut().zip(d) {
        *ci += di;
    }
    Ok(LinearTM {
        c,
        a: m.matmul(&tm.a),
        rem: interval_matvec(m, &tm.rem),
        horizon: tm.horizon,
    })
}

/// `outer ∘ inner`, where `inner` maps the new variables onto `outer`'s
/// domain variables. Soundness of `outer`'s remainder requires `inner`'s
/// range to stay inside that domain.
pub fn tm_compose_affine<S: Real>(outer: &LinearTM<S>, inner: &LinearTM<S>) -> Result<LinearTM<S>> {
    check_dim(outer.nz(), inner.dim(), "compose: outer domain vs inner output")?;
    let ao = outer.a_vars();
    let mut c = ao.matvec(&inner.c);
    for (ci, &oc) in c.iter_mut().zip(&outer.c) {
        *ci += oc;
    }
    let mut a = ao.matmul(&inner.a);
    let onz = outer.nz();
    let inz = inner.nz();
    for i in 0..outer.dim() {
        a[(i, inz)] += outer.a[(i, onz)];
    }
    let pushed = interval_matvec(&ao, &inner.rem);
    let rem = IntervalBox::new(
        outer
            .rem
            .dims
            .iter()
            .zip(&pushed.dims)
            .map(|(x, y)| x.add(*y))
            .collect(),
    );
    Ok(LinearTM {
        c,
        a,
        rem,
        horizon: outer.horizon.max(inner.horizon),
    })
}

/// A monomial `coeff · τ^tau_pow · Π z_i^k` outside the fixed shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcessTerm<S = f64> {
    pub row: usize,
    pub coeff: S,
    pub tau_pow: u32,
    pub z_pows: Vec<(usize, u32)>,
}

impl<S: Real> ExcessTerm<S> {
    /// Range over `z ∈ [-1,1]`, `τ ∈ [0,h]`.
    pub fn bound(&self, h: S) -> Interval<S> {
        let mut r = Interval::point(self.coeff);
        if self.tau_pow > 0 {
            r = r.mul(Interval {
                lo: S::zero(),
                hi: h.powi(self.tau_pow),
            });
        }
        for &(_, k) in &self.z_pows {
            if k == 0 {
                continue;
            }
            let zk = if k % 2 == 0 {
                Interval { lo: S::zero(), hi: S::one() }
            } else {
                Interval::unit()
            };
            r = r.mul(zk);
        }
        r
    }
}

/// Folds out-of-shape terms into the remainder.
pub fn tm_truncate<S: Real>(excess: &[ExcessTerm<S>], tm: &QuasiQuadTM<S>) -> QuasiQuadTM<S> {
    let mut out = tm.clone();
    for t in excess {
        let i = t.row;
        out.lin.rem.dims[i] = out.lin.rem.dims[i].add(t.bound(tm.lin.horizon));
    }
    out
}

/// One output row of a quasi-quadratic TM, used for symbolic expansion of
/// vector fields: `c + a·v + t τ + τ b·v ⊕ rem` with `τ ∈ [0,h]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TmRow<S> {
    pub c: S,
    pub a: Vec<S>,
    pub t: S,
    pub b: Vec<S>,
    pub rem: Interval<S>,
    pub h: S,
}

fn abs_sum<S: Real>(v: &[S]) -> S {
    v.iter().map(|x| x.abs()).sum()
}

impl<S: Real> TmRow<S> {
    pub fn constant(nz: usize, h: S, k: S) -> Self {
        Self {
            c: k,
            a: vec![S::zero(); nz],
            t: S::zero(),
            b: vec![S::zero(); nz],
            rem: Interval::zero(),
            h,
        }
    }

    pub fn nz(&self) -> usize {
        self.a.len()
    }

    fn is_const(&self) -> bool {
        self.t.value() == 0.0
            && self.rem.lo.value() == 0.0
            && self.rem.hi.value() == 0.0
            && self.a.iter().all(|x| x.value() == 0.0)
            && self.b.iter().all(|x| x.value() == 0.0)
    }

    /// Range of the polynomial part minus its constant.
    fn poly_dev_range(&self) -> Interval<S> {
        let at = |t: S| {
            let mut s = S::zero();
            for (a, b) in self.a.iter().zip(&self.b) {
                s += (*a + *b * t).abs();
            }
            Interval {
                lo: self.t * t - s,
                hi: self.t * t + s,
            }
        };
        at(S::zero()).hull(&at(self.h))
    }

    /// Full enclosure over the domain and `[0,h]`.
    pub fn range(&self) -> Interval<S> {
        self.poly_dev_range().shift(self.c).add(self.rem)
    }

    pub fn add_row(&self, o: &Self) -> Self {
        Self {
            c: self.c + o.c,
            a: self.a.iter().zip(&o.a).map(|(&x, &y)| x + y).collect(),
            t: self.t + o.t,
            b: self.b.iter().zip(&o.b).map(|(&x, &y)| x + y).collect(),
            rem: self.rem.add(o.rem),
            h: self.h,
        }
    }

    pub fn neg_row(&self) -> Self {
        self.scale_row(-S::one())
    }

    pub fn sub_row(&self, o: &Self) -> Self {
        self.add_row(&o.neg_row())
    }

    pub fn scale_row(&self, k: S) -> Self {
        Self {
            c: self.c * k,
            a: self.a.iter().map(|&x| x * k).collect(),
            t: self.t * k,
            b: self.b.iter().map(|&x| x * k).collect(),
            rem: self.rem.scale(k),
            h: self.h,
        }
    }

    pub fn offset_row(&self, k: S) -> Self {
        let mut r = self.clone();
        r.c += k;
        r
    }

    /// Product; terms beyond the fixed shape are bounded into the remainder.
    pub fn mul_row(&self, o: &Self) -> Self {
        if o.is_const() {
            return self.scale_row(o.c);
        }
        if self.is_const() {
            return o.scale_row(self.c);
        }
        let h = self.h;
        let nz = self.nz();
        let mut out = Self::constant(nz, h, self.c * o.c);
        // c1 q2 + c2 q1
        for j in 0..nz {
            out.a[j] = self.c * o.a[j] + o.c * self.a[j];
            // (a1·v)(t2 τ) + (t1 τ)(a2·v) is an exact cross term
            out.b[j] = self.c * o.b[j] + o.c * self.b[j] + o.t * self.a[j] + self.t * o.a[j];
        }
        out.t = self.c * o.t + o.c * self.t;

        // (a1·v)(a2·v): v_i^2 ∈ [0,1] on the diagonal, v_i v_j ∈ [-1,1] off it.
        let s1 = abs_sum(&self.a);
        let s2 = abs_sum(&o.a);
        let mut diag_lo = S::zero();
        let mut diag_hi = S::zero();
        let mut diag_abs = S::zero();
        for j in 0..nz {
            let p = self.a[j] * o.a[j];
            if p.value() >= 0.0 {
                diag_hi += p;
            } else {
                diag_lo += p;
            }
            diag_abs += p.abs();
        }
        let off = s1 * s2 - diag_abs;
        let mut extra = Interval {
            lo: diag_lo - off,
            hi: diag_hi + off,
        };

        // Remaining higher-order time terms.
        let tau = Interval { lo: S::zero(), hi: h };
        let tau2 = Interval { lo: S::zero(), hi: h * h };
        let sb1 = abs_sum(&self.b);
        let sb2 = abs_sum(&o.b);
        let q1 = self.poly_dev_range();
        let q2 = o.poly_dev_range();
        extra = extra.add(tau2.scale(self.t * o.t));
        // (τ b1·v) q2 + (τ b2·v)(a1·v + t1 τ)
        let bv1 = Interval::symmetric(sb1 * h);
        let bv2 = Interval::symmetric(sb2 * h);
        let q1_no_b = Interval::symmetric(s1).add(tau.scale(self.t));
        extra = extra.add(bv1.mul(q2)).add(bv2.mul(q1_no_b));

        // Remainder products.
        let p1 = q1.shift(self.c);
        let p2 = q2.shift(o.c);
        let rem = p1
            .mul(o.rem)
            .add(p2.mul(self.rem))
            .add(self.rem.mul(o.rem));
        out.rem = extra.add(rem);
        out
    }

    /// `f(self)` by first-order expansion about the constant term with a
    /// Lagrange remainder: `f(c) + f'(c)(x - c) + f''(ξ)(x - c)^2 / 2`.
    fn compose_unary(&self, f: S, df: S, d2f_range: impl Fn(Interval<S>) -> Result<Interval<S>>) -> Result<Self> {
        let x = self.range().hull(&Interval::point(self.c));
        let dev = x.shift(-self.c).sqr();
        let lag = d2f_range(x)?.mul(dev).scale(S::from_f64(0.5));
        let mut out = self.offset_row(-self.c).scale_row(df);
        out.c = f;
        out.rem = out.rem.add(lag);
        Ok(out)
    }

    pub fn sin_row(&self) -> Self {
        let c = self.c;
        self.compose_unary(c.sin(), c.cos(), |x| Ok(x.sin().neg()))
            .expect("sin expansion is total")
    }

    pub fn cos_row(&self) -> Self {
        let c = self.c;
        self.compose_unary(c.cos(), -c.sin(), |x| Ok(x.cos().neg()))
            .expect("cos expansion is total")
    }

    /// `1/x`; errors when the range touches zero.
    pub fn recip_row(&self) -> Result<Self> {
        let c = self.c;
        if c.value() == 0.0 {
            return Err(Error::Argument("reciprocal expansion about zero".into()));
        }
        // (1/x)'' = 2 / x^3
        self.compose_unary(c.recip(), -(c * c).recip(), |x| {
            let r = x.recip()?;
            Ok(r.mul(r).mul(r).scale(S::from_f64(2.0)))
        })
    }

    pub fn tanh_row(&self) -> Self {
        let c = self.c;
        let t = c.tanh();
        // tanh'' = -2 tanh sech^2, bounded by |.| <= 4/(3 sqrt 3)
        let bound = S::from_f64(4.0 / (3.0 * 3f64.sqrt()));
        self.compose_unary(t, S::one() - t * t, |_| Ok(Interval::symmetric(bound)))
            .expect("tanh expansion is total")
    }

    /// `∫_0^τ self ds`; `τ²` terms are bounded into the remainder.
    pub fn integrate(&self) -> Self {
        let h = self.h;
        let half_h2 = h * h * 0.5;
        let sb = abs_sum(&self.b);
        let rem = Interval { lo: S::zero(), hi: half_h2 }
            .scale(self.t)
            .add(Interval::symmetric(sb * half_h2))
            .add(Interval { lo: S::zero(), hi: h }.mul(self.rem));
        Self {
            c: S::zero(),
            a: vec![S::zero(); self.nz()],
            t: self.c,
            b: self.a.clone(),
            rem,
            h,
        }
    }

    /// Polynomial part with the remainder dropped.
    pub fn poly(&self) -> Self {
        let mut r = self.clone();
        r.rem = Interval::zero();
        r
    }

    pub fn is_finite(&self) -> bool {
        self.c.is_finite()
            && self.t.is_finite()
            && self.rem.is_finite()
            && self.a.iter().all(|x| x.is_finite())
            && self.b.iter().all(|x| x.is_finite())
    }
}

/// Arithmetic shared by concrete scalars and TM rows so that analytical
/// vector fields are written once and evaluated on either.
pub trait FieldValue<S: Real>: Clone + Send + Sync {
    fn constant_like(&self, k: S) -> Self;
    fn add_v(&self, o: &Self) -> Self;
    fn sub_v(&self, o: &Self) -> Self;
    fn mul_v(&self, o: &Self) -> Self;
    fn neg_v(&self) -> Self;
    fn scale(&self, k: S) -> Self;
    fn offset(&self, k: S) -> Self;
    fn sin_v(&self) -> Self;
    fn cos_v(&self) -> Self;
    fn tanh_v(&self) -> Self;
    fn recip_v(&self) -> Result<Self>;
    /// Enclosure of the represented values.
    fn range_v(&self) -> Interval<S>;
}

impl<S: Real> FieldValue<S> for S {
    fn constant_like(&self, k: S) -> Self {
        k
    }
    fn add_v(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub_v(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul_v(&self, o: &Self) -> Self {
        *self * *o
    }
    fn neg_v(&self) -> Self {
        -*self
    }
    fn scale(&self, k: S) -> Self {
        *self * k
    }
    fn offset(&self, k: S) -> Self {
        *self + k
    }
    fn sin_v(&self) -> Self {
        Real::sin(*self)
    }
    fn cos_v(&self) -> Self {
        Real::cos(*self)
    }
    fn tanh_v(&self) -> Self {
        Real::tanh(*self)
    }
    fn recip_v(&self) -> Result<Self> {
        if self.value() == 0.0 {
            Err(Error::Argument("division by zero".into()))
        } else {
            Ok(Real::recip(*self))
        }
    }
    fn range_v(&self) -> Interval<S> {
        Interval::point(*self)
    }
}

impl<S: Real> FieldValue<S> for TmRow<S> {
    fn constant_like(&self, k: S) -> Self {
        TmRow::constant(self.nz(), self.h, k)
    }
    fn add_v(&self, o: &Self) -> Self {
        self.add_row(o)
    }
    fn sub_v(&self, o: &Self) -> Self {
        self.sub_row(o)
    }
    fn mul_v(&self, o: &Self) -> Self {
        self.mul_row(o)
    }
    fn neg_v(&self) -> Self {
        self.neg_row()
    }
    fn scale(&self, k: S) -> Self {
        self.scale_row(k)
    }
    fn offset(&self, k: S) -> Self {
        self.offset_row(k)
    }
    fn sin_v(&self) -> Self {
        self.sin_row()
    }
    fn cos_v(&self) -> Self {
        self.cos_row()
    }
    fn tanh_v(&self) -> Self {
        self.tanh_row()
    }
    fn recip_v(&self) -> Result<Self> {
        self.recip_row()
    }
    fn range_v(&self) -> Interval<S> {
        self.range()
    }
}

impl<S: Real> FieldValue<S> for Interval<S> {
    fn constant_like(&self, k: S) -> Self {
        Interval::point(k)
    }
    fn add_v(&self, o: &Self) -> Self {
        self.add(*o)
    }
    fn sub_v(&self, o: &Self) -> Self {
        self.sub(*o)
    }
    fn mul_v(&self, o: &Self) -> Self {
        self.mul(*o)
    }
    fn neg_v(&self) -> Self {
        self.neg()
    }
    fn scale(&self, k: S) -> Self {
        Interval::scale(*self, k)
    }
    fn offset(&self, k: S) -> Self {
        self.shift(k)
    }
    fn sin_v(&self) -> Self {
        self.sin()
    }
    fn cos_v(&self) -> Self {
        self.cos()
    }
    fn tanh_v(&self) -> Self {
        self.tanh()
    }
    fn recip_v(&self) -> Result<Self> {
        self.recip()
    }
    fn range_v(&self) -> Interval<S> {
        *self
    }
}
