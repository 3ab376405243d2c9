//! Benchmark dynamics: quadrotor, coupled quadrotor swarm, planar arm and
//! small affine systems used as oracles.
//!
//! Every right-hand side is written once over [`FieldValue`], so the same
//! code runs on concrete states and on Taylor-model rows.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::Mat;
use crate::neural::{Activation, Layer, MLPNet};
use crate::real::Real;
use crate::taylor::FieldValue;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorParams {
    pub m: f64,
    pub g: f64,
    pub j: [f64; 3],
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            g: 9.81,
            j: [0.01, 0.01, 0.02],
        }
    }
}

impl QuadrotorParams {
    pub fn hover_thrust(&self) -> f64 {
        self.m * self.g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmParams {
    pub agents: usize,
    pub k_s: f64,
    pub quad: QuadrotorParams,
}

impl Default for SwarmParams {
    fn default() -> Self {
        Self {
            agents: 6,
            k_s: 1.0,
            quad: QuadrotorParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub links: Vec<f64>,
    /// Step of the discrete-time variant.
    pub dt: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            links: vec![0.1; 10],
            dt: 0.01,
        }
    }
}

impl ArmParams {
    pub fn joints(&self) -> usize {
        self.links.len()
    }
}

/// `ẋ = A x + B u + d` (or `x' = ...` when used as a map).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSystem {
    pub a: Mat<f64>,
    pub b: Mat<f64>,
    pub d: Vec<f64>,
}

impl AffineSystem {
    pub fn new(a: Mat<f64>, b: Mat<f64>, d: Vec<f64>) -> Result<Self> {
        check_dim(a.rows(), a.cols(), "affine A square")?;
        check_dim(a.rows(), b.rows(), "affine B rows")?;
        check_dim(a.rows(), d.len(), "affine offset")?;
        Ok(Self { a, b, d })
    }

    pub fn apply<S: Real, V: FieldValue<S>>(&self, x: &[V], u: &[V]) -> Vec<V> {
        let zero = x.first().or(u.first()).expect("affine system needs inputs").constant_like(S::zero());
        (0..self.a.rows())
            .map(|i| {
                let mut acc = zero.offset(S::from_f64(self.d[i]));
                for (j, xj) in x.iter().enumerate() {
                    let c = self.a[(i, j)];
                    if c != 0.0 {
                        acc = acc.add_v(&xj.scale(S::from_f64(c)));
                    }
                }
                for (j, uj) in u.iter().enumerate() {
                    let c = self.b[(i, j)];
                    if c != 0.0 {
                        acc = acc.add_v(&uj.scale(S::from_f64(c)));
                    }
                }
                acc
            })
            .collect()
    }
}

fn gimbal_guard<S: Real, V: FieldValue<S>>(theta: &V) -> Result<()> {
    let r = theta.range_v();
    if r.lo.value() <= -FRAC_PI_2 || r.hi.value() >= FRAC_PI_2 || !r.is_finite() {
        return Err(Error::Domain(format!(
            "pitch range [{}, {}] reaches the Euler-angle singularity",
            r.lo.value(),
            r.hi.value()
        )));
    }
    Ok(())
}

/// Rigid-body quadrotor with ZYX Euler angles. `u = (thrust, τx, τy[, τz])`;
/// a missing yaw torque is taken as zero.
pub fn quadrotor_ode<S: Real, V: FieldValue<S>>(x: &[V], u: &[V], p: &QuadrotorParams) -> Result<Vec<V>> {
    check_dim(12, x.len(), "quadrotor state")?;
    if u.len() != 3 && u.len() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            got: u.len(),
            context: "quadrotor input",
        });
    }
    let c = |v: f64| S::from_f64(v);
    let (phi, th, psi) = (&x[6], &x[7], &x[8]);
    let (pr, qr, rr) = (&x[9], &x[10], &x[11]);
    gimbal_guard(th)?;
    let (sphi, cphi) = (phi.sin_v(), phi.cos_v());
    let (sth, cth) = (th.sin_v(), th.cos_v());
    let (spsi, cpsi) = (psi.sin_v(), psi.cos_v());

    let cphi_sth = cphi.mul_v(&sth);
    let b3x = cphi_sth.mul_v(&cpsi).add_v(&sphi.mul_v(&spsi));
    let b3y = cphi_sth.mul_v(&spsi).sub_v(&sphi.mul_v(&cpsi));
    let b3z = cphi.mul_v(&cth);
    let acc = u[0].scale(c(1.0 / p.m));

    let sec = cth.recip_v()?;
    let tan = sth.mul_v(&sec);
    let phid = pr
        .add_v(&sphi.mul_v(&tan).mul_v(qr))
        .add_v(&cphi.mul_v(&tan).mul_v(rr));
    let thd = cphi.mul_v(qr).sub_v(&sphi.mul_v(rr));
    let psid = sphi.mul_v(&sec).mul_v(qr).add_v(&cphi.mul_v(&sec).mul_v(rr));

    let [jx, jy, jz] = p.j;
    let pd = qr.mul_v(rr).scale(c((jy - jz) / jx)).add_v(&u[1].scale(c(1.0 / jx)));
    let qd = pr.mul_v(rr).scale(c((jz - jx) / jy)).add_v(&u[2].scale(c(1.0 / jy)));
    let mut rd = pr.mul_v(qr).scale(c((jx - jy) / jz));
    if let Some(tz) = u.get(3) {
        rd = rd.add_v(&tz.scale(c(1.0 / jz)));
    }

    Ok(vec![
        x[3].clone(),
        x[4].clone(),
        x[5].clone(),
        acc.mul_v(&b3x),
        acc.mul_v(&b3y),
        acc.mul_v(&b3z).offset(c(-p.g)),
        phid,
        thd,
        psid,
        pd,
        qd,
        rd,
    ])
}

/// Six quadrotors (12 states each) pulled toward the swarm's mean position.
/// Per-agent input is `(thrust - m g, τx, τy)`.
pub fn swarm_ode<S: Real, V: FieldValue<S>>(x: &[V], u: &[V], p: &SwarmParams) -> Result<Vec<V>> {
    let n = p.agents;
    check_dim(12 * n, x.len(), "swarm state")?;
    check_dim(3 * n, u.len(), "swarm input")?;
    let inv_n = S::from_f64(1.0 / n as f64);
    let mean: Vec<V> = (0..3)
        .map(|k| {
            let mut s = x[k].clone();
            for a in 1..n {
                s = s.add_v(&x[12 * a + k]);
            }
            s.scale(inv_n)
        })
        .collect();
    let mut out = Vec::with_capacity(12 * n);
    for a in 0..n {
        let xa = &x[12 * a..12 * a + 12];
        let ua = [
            u[3 * a].offset(S::from_f64(p.quad.hover_thrust())),
            u[3 * a + 1].clone(),
            u[3 * a + 2].clone(),
        ];
        let mut d = quadrotor_ode(xa, &ua, &p.quad)?;
        for k in 0..3 {
            let pull = mean[k].sub_v(&xa[k]).scale(S::from_f64(p.k_s));
            d[3 + k] = d[3 + k].add_v(&pull);
        }
        out.extend(d);
    }
    Ok(out)
}

/// Cumulative link angles `θ_k = Σ_{j≤k} q_j`.
fn cumulative<S: Real, V: FieldValue<S>>(q: &[V]) -> Vec<V> {
    let mut out: Vec<V> = Vec::with_capacity(q.len());
    for (i, qi) in q.iter().enumerate() {
        out.push(if i == 0 { qi.clone() } else { out[i - 1].add_v(qi) });
    }
    out
}

/// Positions of every joint tip of the planar chain.
pub fn joint_positions<S: Real, V: FieldValue<S>>(q: &[V], links: &[f64]) -> (Vec<V>, Vec<V>) {
    let th = cumulative(q);
    let mut xs: Vec<V> = Vec::with_capacity(q.len());
    let mut ys: Vec<V> = Vec::with_capacity(q.len());
    for (k, t) in th.iter().enumerate() {
        let l = S::from_f64(links[k]);
        let dx = t.cos_v().scale(l);
        let dy = t.sin_v().scale(l);
        if k == 0 {
            xs.push(dx);
            ys.push(dy);
        } else {
            xs.push(xs[k - 1].add_v(&dx));
            ys.push(ys[k - 1].add_v(&dy));
        }
    }
    (xs, ys)
}

pub fn eef_position<S: Real, V: FieldValue<S>>(q: &[V], links: &[f64]) -> [V; 2] {
    let (mut xs, mut ys) = joint_positions(q, links);
    [xs.pop().unwrap(), ys.pop().unwrap()]
}

/// Arm state layout: `(q, q̇, joint x, joint y)`, each block one entry per joint.
pub fn arm_ode<S: Real, V: FieldValue<S>>(x: &[V], u: &[V], p: &ArmParams) -> Result<Vec<V>> {
    let n = p.joints();
    check_dim(4 * n, x.len(), "arm state")?;
    check_dim(n, u.len(), "arm input")?;
    let th = cumulative(&x[..n]);
    let om = cumulative(&x[n..2 * n]);
    let mut out: Vec<V> = Vec::with_capacity(4 * n);
    out.extend(x[n..2 * n].iter().cloned());
    out.extend(u.iter().cloned());
    let mut vx: Vec<V> = Vec::with_capacity(n);
    let mut vy: Vec<V> = Vec::with_capacity(n);
    for k in 0..n {
        let l = S::from_f64(p.links[k]);
        let dx = th[k].sin_v().mul_v(&om[k]).scale(-l);
        let dy = th[k].cos_v().mul_v(&om[k]).scale(l);
        if k == 0 {
            vx.push(dx);
            vy.push(dy);
        } else {
            vx.push(vx[k - 1].add_v(&dx));
            vy.push(vy[k - 1].add_v(&dy));
        }
    }
    out.extend(vx);
    out.extend(vy);
    Ok(out)
}

/// Exact double-integrator step for the joints, then forward kinematics.
pub fn arm_dt<S: Real, V: FieldValue<S>>(x: &[V], u: &[V], p: &ArmParams) -> Result<Vec<V>> {
    let n = p.joints();
    check_dim(4 * n, x.len(), "arm state")?;
    check_dim(n, u.len(), "arm input")?;
    let dt = S::from_f64(p.dt);
    let half_dt2 = S::from_f64(0.5 * p.dt * p.dt);
    let q: Vec<V> = (0..n)
        .map(|i| x[i].add_v(&x[n + i].scale(dt)).add_v(&u[i].scale(half_dt2)))
        .collect();
    let qd: Vec<V> = (0..n).map(|i| x[n + i].add_v(&u[i].scale(dt))).collect();
    let (xs, ys) = joint_positions(&q, &p.links);
    let mut out = q;
    out.extend(qd);
    out.extend(xs);
    out.extend(ys);
    Ok(out)
}

/// Arm state with consistent joint positions for the given angles and rates.
pub fn arm_state(q: &[f64], qd: &[f64], p: &ArmParams) -> Vec<f64> {
    let (xs, ys) = joint_positions::<f64, f64>(q, &p.links);
    let mut s = q.to_vec();
    s.extend_from_slice(qd);
    s.extend(xs);
    s.extend(ys);
    s
}

/// Gains and saturation levels of the cascaded velocity-tracking law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityGains {
    pub kz: f64,
    pub kv: f64,
    pub kp: f64,
    pub kd: f64,
    /// Largest thrust deviation from hover.
    pub thrust_sat: f64,
    pub torque_sat: f64,
}

impl Default for VelocityGains {
    fn default() -> Self {
        Self {
            kz: 2.0,
            kv: 1.0,
            kp: 16.0,
            kd: 8.0,
            thrust_sat: 5.0,
            torque_sat: 0.1,
        }
    }
}

/// Rows of the unsaturated law over `(x, v_ref)`: thrust deviation, roll
/// torque, pitch torque. Attitude targets come from the velocity error
/// (`θ_des = kv Δvx / g`, `φ_des = -kv Δvy / g`) and are tracked by PD on
/// angle and body rate.
pub fn velocity_law_matrix(p: &QuadrotorParams, g: &VelocityGains) -> Mat<f64> {
    let mut l = Mat::zeros(3, 15);
    l[(0, 14)] = p.m * g.kz;
    l[(0, 5)] = -p.m * g.kz;
    let [jx, jy, _] = p.j;
    let tilt = g.kp * g.kv / p.g;
    l[(1, 13)] = -jx * tilt;
    l[(1, 4)] = jx * tilt;
    l[(1, 6)] = -jx * g.kp;
    l[(1, 9)] = -jx * g.kd;
    l[(2, 12)] = jy * tilt;
    l[(2, 3)] = -jy * tilt;
    l[(2, 7)] = -jy * g.kp;
    l[(2, 10)] = -jy * g.kd;
    l
}

/// The velocity law as a tanh network `(x, v_ref) -> (thrust, τx, τy)`:
/// each output is `s tanh(l·z / s)` around hover thrust, so it matches the
/// linear law for small errors and saturates at `s`.
pub fn quadrotor_velocity_controller(p: &QuadrotorParams, g: &VelocityGains) -> Result<MLPNet> {
    if !(g.thrust_sat > 0.0 && g.torque_sat > 0.0) {
        return Err(Error::Config("saturation levels must be positive".into()));
    }
    let sat = [g.thrust_sat, g.torque_sat, g.torque_sat];
    let mut w1 = velocity_law_matrix(p, g);
    for (i, s) in sat.iter().enumerate() {
        for j in 0..15 {
            w1[(i, j)] /= s;
        }
    }
    let mut w2 = Mat::zeros(3, 3);
    for (i, s) in sat.iter().enumerate() {
        w2[(i, i)] = *s;
    }
    MLPNet::new(vec![
        Layer {
            w: w1,
            b: vec![0.0; 3],
            act: Activation::Tanh,
        },
        Layer {
            w: w2,
            b: vec![p.hover_thrust(), 0.0, 0.0],
            act: Activation::Identity,
        },
    ])
}

/// Continuous-time analytical systems.
#[derive(Clone, Debug, PartialEq)]
pub enum CtSystem {
    Quadrotor(QuadrotorParams),
    Swarm(SwarmParams),
    Arm(ArmParams),
    Affine(AffineSystem),
    /// `ẋ = x²`, the scalar blow-up example.
    Square,
}

impl CtSystem {
    pub fn state_dim(&self) -> usize {
        match self {
            CtSystem::Quadrotor(_) => 12,
            CtSystem::Swarm(p) => 12 * p.agents,
            CtSystem::Arm(p) => 4 * p.joints(),
            CtSystem::Affine(s) => s.a.rows(),
            CtSystem::Square => 1,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CtSystem::Quadrotor(_) => 3,
            CtSystem::Swarm(p) => 3 * p.agents,
            CtSystem::Arm(p) => p.joints(),
            CtSystem::Affine(s) => s.b.cols(),
            CtSystem::Square => 0,
        }
    }

    pub fn rhs<S: Real, V: FieldValue<S>>(&self, x: &[V], u: &[V]) -> Result<Vec<V>> {
        check_dim(self.state_dim(), x.len(), "system state")?;
        check_dim(self.input_dim(), u.len(), "system input")?;
        match self {
            CtSystem::Quadrotor(p) => quadrotor_ode(x, u, p),
            CtSystem::Swarm(p) => swarm_ode(x, u, p),
            CtSystem::Arm(p) => arm_ode(x, u, p),
            CtSystem::Affine(s) => Ok(s.apply(x, u)),
            CtSystem::Square => Ok(vec![x[0].mul_v(&x[0])]),
        }
    }

    /// Concrete derivative.
    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.rhs::<f64, f64>(x, u)
    }
}

/// Discrete-time analytical one-step maps.
#[derive(Clone, Debug, PartialEq)]
pub enum DtAnalytic {
    Arm(ArmParams),
    Affine(AffineSystem),
    /// Euler-discretized damped pendulum `(θ, ω)` with torque input.
    Pendulum { dt: f64, damping: f64 },
}

impl DtAnalytic {
    pub fn state_dim(&self) -> usize {
        match self {
            DtAnalytic::Arm(p) => 4 * p.joints(),
            DtAnalytic::Affine(s) => s.a.rows(),
            DtAnalytic::Pendulum { .. } => 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            DtAnalytic::Arm(p) => p.joints(),
            DtAnalytic::Affine(s) => s.b.cols(),
            DtAnalytic::Pendulum { .. } => 1,
        }
    }

    pub fn step<S: Real, V: FieldValue<S>>(&self, x: &[V], u: &[V]) -> Result<Vec<V>> {
        check_dim(self.state_dim(), x.len(), "map state")?;
        check_dim(self.input_dim(), u.len(), "map input")?;
        match self {
            DtAnalytic::Arm(p) => arm_dt(x, u, p),
            DtAnalytic::Affine(s) => Ok(s.apply(x, u)),
            DtAnalytic::Pendulum { dt, damping } => {
                let k = S::from_f64(*dt);
                let acc = x[0].sin_v().neg_v().sub_v(&x[1].scale(S::from_f64(*damping))).add_v(&u[0]);
                Ok(vec![x[0].add_v(&x[1].scale(k)), x[1].add_v(&acc.scale(k))])
            }
        }
    }
}

pub const CT_SYSTEMS: &[&str] = &[
    "quadrotor",
    "swarm",
    "arm",
    "decay",
    "rotation",
    "zero",
    "square",
    "double-integrator",
];

pub const DT_SYSTEMS: &[&str] = &["arm", "affine", "identity", "pendulum"];

/// Continuous-time registry.
pub fn ct_system(name: &str) -> Result<CtSystem> {
    let aff = |a: Vec<Vec<f64>>, b: Vec<Vec<f64>>| -> Result<CtSystem> {
        let n = a.len();
        let b = if b.is_empty() { Mat::zeros(n, 0) } else { Mat::from_rows(&b) };
        Ok(CtSystem::Affine(AffineSystem::new(Mat::from_rows(&a), b, vec![0.0; n])?))
    };
    match name {
        "quadrotor" => Ok(CtSystem::Quadrotor(QuadrotorParams::default())),
        "swarm" => Ok(CtSystem::Swarm(SwarmParams::default())),
        "arm" => Ok(CtSystem::Arm(ArmParams::default())),
        "decay" => aff(vec![vec![-1.0]], vec![]),
        "rotation" => aff(vec![vec![0.0, 1.0], vec![-1.0, 0.0]], vec![]),
        "zero" => aff(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![]),
        "square" => Ok(CtSystem::Square),
        "double-integrator" => aff(vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0], vec![1.0]]),
        _ => Err(Error::Config(format!(
            "unknown continuous-time system '{name}' (known: {})",
            CT_SYSTEMS.join(", ")
        ))),
    }
}

/// Discrete-time registry. `affine` is a damped rotation with one input.
pub fn dt_system(name: &str) -> Result<DtAnalytic> {
    match name {
        "arm" => Ok(DtAnalytic::Arm(ArmParams::default())),
        "affine" => Ok(DtAnalytic::Affine(AffineSystem::new(
            Mat::from_rows(&[vec![0.6, -0.8], vec![0.8, 0.6]]).scale(0.95),
            Mat::from_rows(&[vec![0.0], vec![0.1]]),
            vec![0.05, 0.0],
        )?)),
        "pendulum" => Ok(DtAnalytic::Pendulum { dt: 0.1, damping: 0.1 }),
        "identity" => Ok(DtAnalytic::Affine(AffineSystem::new(
            Mat::identity(2),
            Mat::zeros(2, 0),
            vec![0.0; 2],
        )?)),
        _ => Err(Error::Config(format!(
            "unknown discrete-time system '{name}' (known: {})",
            DT_SYSTEMS.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::{Interval, IntervalBox};
    use crate::taylor::{build_linear_tm, TmRow};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad(x: &[f64], u: &[f64]) -> Vec<f64> {
        quadrotor_ode::<f64, f64>(x, u, &QuadrotorParams::default()).unwrap()
    }

    #[test]
    fn hover_is_equilibrium() {
        let p = QuadrotorParams::default();
        let mut x = vec![0.0; 12];
        x[0] = 1.0;
        x[2] = 3.0;
        let d = quad(&x, &[p.hover_thrust(), 0.0, 0.0]);
        assert!(d.iter().all(|&v| v == 0.0), "{d:?}");
    }

    #[test]
    fn free_fall() {
        let d = quad(&[0.0; 12], &[0.0; 3]);
        assert_eq!(d[5], -9.81);
        assert!(d.iter().enumerate().all(|(i, &v)| i == 5 || v == 0.0));
    }

    fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
        // Cramer's rule
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let mut out = [0.0; 3];
        for k in 0..3 {
            let mut m = a;
            for i in 0..3 {
                m[i][k] = b[i];
            }
            out[k] = det(m) / d;
        }
        out
    }

    #[test]
    fn quadrotor_matches_rotation_matrix_derivation() {
        let p = QuadrotorParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..12)
                .map(|i| if i == 7 { rng.random_range(-1.2..1.2) } else { rng.random_range(-2.0..2.0) })
                .collect();
            let u = [rng.random_range(0.0..20.0), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let got = quadrotor_ode::<f64, f64>(&x, &u, &p).unwrap();
            let (f, t, s) = (x[6], x[7], x[8]);
            let rx = [[1.0, 0.0, 0.0], [0.0, f.cos(), -f.sin()], [0.0, f.sin(), f.cos()]];
            let ry = [[t.cos(), 0.0, t.sin()], [0.0, 1.0, 0.0], [-t.sin(), 0.0, t.cos()]];
            let rz = [[s.cos(), -s.sin(), 0.0], [s.sin(), s.cos(), 0.0], [0.0, 0.0, 1.0]];
            let mm = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
                let mut c = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for k in 0..3 {
                            c[i][j] += a[i][k] * b[k][j];
                        }
                    }
                }
                c
            };
            let r = mm(mm(rz, ry), rx);
            let acc: Vec<f64> = (0..3).map(|i| u[0] / p.m * r[i][2] - if i == 2 { p.g } else { 0.0 }).collect();
            // body rates ω = W η̇
            let w = [
                [1.0, 0.0, -t.sin()],
                [0.0, f.cos(), f.sin() * t.cos()],
                [0.0, -f.sin(), f.cos() * t.cos()],
            ];
            let om = [x[9], x[10], x[11]];
            let eta = solve3(w, om);
            let j = p.j;
            let jw = [j[0] * om[0], j[1] * om[1], j[2] * om[2]];
            let cross = [
                om[1] * jw[2] - om[2] * jw[1],
                om[2] * jw[0] - om[0] * jw[2],
                om[0] * jw[1] - om[1] * jw[0],
            ];
            let wd: Vec<f64> = (0..3).map(|i| (u[i + 1] - cross[i]) / j[i]).collect();
            let expect: Vec<f64> = x[3..6].iter().copied().chain(acc).chain(eta).chain(wd).collect();
            for i in 0..12 {
                let tol = 1e-12 * expect[i].abs().max(1.0);
                assert!((got[i] - expect[i]).abs() <= tol * 50.0, "dim {i}: {} vs {}", got[i], expect[i]);
            }
        }
    }

    #[test]
    fn gimbal_guard_rejects_singular_pitch() {
        let mut x = vec![0.0; 12];
        x[7] = FRAC_PI_2;
        assert!(matches!(quadrotor_ode::<f64, f64>(&x, &[0.0; 3], &QuadrotorParams::default()), Err(Error::Domain(_))));
        let bx = IntervalBox::new((0..12).map(|i| if i == 7 { Interval { lo: 1.4, hi: 1.7 } } else { Interval::zero() }).collect());
        let rows = build_linear_tm(&bx).unwrap().into_quasi().to_rows();
        let u: Vec<TmRow<f64>> = (0..3).map(|_| TmRow::constant(12, 0.0, 0.0)).collect();
        assert!(quadrotor_ode::<f64, TmRow<f64>>(&rows, &u, &QuadrotorParams::default()).is_err());
    }

    #[test]
    fn swarm_equilibrium_and_symmetry() {
        let sys = CtSystem::Swarm(SwarmParams::default());
        let x = vec![0.0; 72];
        let d = sys.eval(&x, &[0.0; 18]).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![0.0; 72];
        for a in 0..6 {
            for k in 0..6 {
                x[12 * a + k] = rng.random_range(-1.0..1.0);
            }
        }
        let base = sys.eval(&x, &[0.0; 18]).unwrap();
        // coupling forces sum to zero, so total momentum is conserved
        for k in 0..3 {
            let s: f64 = (0..6).map(|a| base[12 * a + 3 + k]).sum();
            assert!(s.abs() < 1e-13, "{s}");
        }
        let mut shifted = x.clone();
        for a in 0..6 {
            shifted[12 * a] += 2.5;
            shifted[12 * a + 2] -= 1.0;
        }
        let d2 = sys.eval(&shifted, &[0.0; 18]).unwrap();
        for (a, b) in base.iter().zip(&d2) {
            assert!((a - b).abs() < 1e-13);
        }
        // zero-sum thrust offsets at level attitude keep momentum conserved
        let mut u = vec![0.0; 18];
        u[0] = 0.4;
        u[3] = -0.4;
        let d3 = sys.eval(&x, &u).unwrap();
        let s: f64 = (0..6).map(|a| d3[12 * a + 5]).sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn arm_kinematics_examples() {
        let p = ArmParams::default();
        let [x, y] = eef_position::<f64, f64>(&[0.0; 10], &p.links);
        assert!((x - 1.0).abs() < 1e-15 && y == 0.0);
        let mut q = vec![0.0; 10];
        q[0] = FRAC_PI_2;
        let [x, y] = eef_position::<f64, f64>(&q, &p.links);
        assert!(x.abs() < 1e-15 && (y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn arm_dt_matches_integrated_ode() {
        let p = ArmParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..0.5)).collect();
        let qd: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..0.5)).collect();
        let u: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x0 = arm_state(&q, &qd, &p);
        let next = arm_dt::<f64, f64>(&x0, &u, &p).unwrap();
        let sys = CtSystem::Arm(p.clone());
        let ode = crate::ode::integrate(|_, x| sys.eval(x, &u).unwrap(), 0.0, &x0, &[p.dt], 1e-12).unwrap();
        for (a, b) in next.iter().zip(&ode[0]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn velocity_controller_hovers_and_tracks() {
        let p = QuadrotorParams::default();
        let g = VelocityGains::default();
        let net = quadrotor_velocity_controller(&p, &g).unwrap();
        let mut z = vec![0.0; 15];
        z[2] = 1.0;
        assert_eq!(net.forward(&z), vec![p.hover_thrust(), 0.0, 0.0]);
        // small-signal slope equals the linear law
        let l = velocity_law_matrix(&p, &g);
        for j in [3usize, 4, 5, 6, 7, 9, 10, 12, 13, 14] {
            let mut zp = z.clone();
            zp[j] = 1e-6;
            let d: Vec<f64> = net.forward(&zp).iter().zip(net.forward(&z)).map(|(a, b)| (a - b) / 1e-6).collect();
            for i in 0..3 {
                assert!((d[i] - l[(i, j)]).abs() < 1e-6 * (1.0 + l[(i, j)].abs()), "({i},{j})");
            }
        }
        // closed loop with a held command reaches the commanded velocity
        let mut x = vec![0.0; 12];
        let cmd = [0.5, -0.3, 0.2];
        for _ in 0..200 {
            let mut inp = x.clone();
            inp.extend_from_slice(&cmd);
            let u = net.forward(&inp);
            let f = |y: &[f64]| quadrotor_ode::<f64, f64>(y, &u, &p).unwrap();
            for _ in 0..5 {
                x = crate::ode::rk4_step(&f, &x, 0.01);
            }
        }
        for k in 0..3 {
            assert!((x[3 + k] - cmd[k]).abs() < 0.02, "{:?}", &x[3..6]);
        }
    }

    #[test]
    fn registry_dims() {
        for name in CT_SYSTEMS {
            let s = ct_system(name).unwrap();
            let x = vec![0.0; s.state_dim()];
            let u = vec![0.0; s.input_dim()];
            assert_eq!(s.eval(&x, &u).unwrap().len(), s.state_dim());
        }
        for name in DT_SYSTEMS {
            let s = dt_system(name).unwrap();
            let x = vec![0.0; s.state_dim()];
            let u = vec![0.0; s.input_dim()];
            assert_eq!(s.step::<f64, f64>(&x, &u).unwrap().len(), s.state_dim());
        }
        assert!(ct_system("nope").is_err());
        assert_eq!(ct_system("swarm").unwrap().state_dim(), 72);
        assert_eq!(ct_system("swarm").unwrap().input_dim(), 18);
        assert_eq!(dt_system("arm").unwrap().state_dim(), 40);
    }
}
