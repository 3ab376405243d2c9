//! MPC scenario files and the quadrotor sphere-avoid task.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_loop::ClosedLoopSpec;
use crate::dt::DTSystem;
use crate::error::{Error, Result};
use crate::flowpipe::{FlowpipeParams, VectorField};
use crate::interval::IntervalBox;
use crate::mpc::{
    mpc_run, simulator_dataset, ClosedLoopSimulator, Constraint, GoalRegion, ModelSimulator, MpcConfig, MpcOutcome, MpcTask,
    PlanProblem, SamplerConfig, Simulator, StageCost,
};
use crate::neural::{Activation, MLPNet};
use crate::systems::{ct_system, dt_system, quadrotor_velocity_controller, QuadrotorParams, VelocityGains};
use crate::training::{train_dt_dyn, Episode, TrainConfig, Trained};

/// Name of the closed-loop quadrotor plant in scenario files.
pub const QUAD_SYSTEM: &str = "quadrotor-velocity";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbances {
    /// Added to each executed planning action.
    pub plan: f64,
    /// Added inside the low-level loop.
    pub control: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSettings {
    pub replan: usize,
    pub steps: usize,
}

/// A complete MPC experiment. `system` names the true plant: a DT registry
/// entry or [`QUAD_SYSTEM`]. The planner uses the network at `model` when
/// given, else the plant's own DT map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub system: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub residual: bool,
    pub x0: Vec<f64>,
    pub goal: GoalRegion,
    pub cost: StageCost,
    /// Planner constraints.
    pub constraints: Vec<Constraint>,
    /// Constraints the executed states are judged on.
    pub safety: Vec<Constraint>,
    pub penalty: f64,
    pub horizon: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub eps: f64,
    pub window: usize,
    pub disturbances: Disturbances,
    pub sampler: SamplerConfig,
    pub mpc: LoopSettings,
}

/// Either kind of true plant.
pub enum Plant {
    Model(ModelSimulator),
    Quad(ClosedLoopSimulator),
}

impl Simulator for Plant {
    fn state_dim(&self) -> usize {
        match self {
            Plant::Model(s) => s.state_dim(),
            Plant::Quad(s) => s.state_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        match self {
            Plant::Model(s) => s.action_dim(),
            Plant::Quad(s) => s.action_dim(),
        }
    }

    fn plan_state(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Plant::Model(s) => s.plan_state(x),
            Plant::Quad(s) => s.plan_state(x),
        }
    }

    fn step(&self, x: &[f64], u: &[f64], ctl: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        match self {
            Plant::Model(s) => s.step(x, u, ctl, rng),
            Plant::Quad(s) => s.step(x, u, ctl, rng),
        }
    }
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn plant(&self) -> Result<Plant> {
        if self.system == QUAD_SYSTEM {
            Ok(Plant::Quad(quad_simulator()?))
        } else {
            Ok(Plant::Model(ModelSimulator {
                sys: DTSystem::analytic(dt_system(&self.system)?),
            }))
        }
    }

    /// Planner model: `net` if given, else the file in `model`, else the
    /// plant's own map.
    pub fn planner_model(&self, net: Option<MLPNet>) -> Result<DTSystem> {
        let net = match (net, &self.model) {
            (Some(n), _) => Some(n),
            (None, Some(p)) => Some(MLPNet::load(p)?),
            (None, None) => None,
        };
        match net {
            Some(n) if self.residual => DTSystem::residual(n),
            Some(n) => DTSystem::neural(n),
            None if self.system == QUAD_SYSTEM => Err(Error::Config("the quadrotor plant needs a learned planning model".into())),
            None => Ok(DTSystem::analytic(dt_system(&self.system)?)),
        }
    }

    pub fn problem(&self, sys: DTSystem) -> PlanProblem {
        PlanProblem {
            sys,
            cost: self.cost.clone(),
            constraints: self.constraints.clone(),
            penalty: self.penalty,
            horizon: self.horizon,
            u_lo: self.u_lo.clone(),
            u_hi: self.u_hi.clone(),
            eps: self.eps,
            window: self.window,
        }
    }

    pub fn task(&self) -> MpcTask {
        MpcTask {
            goal: self.goal.clone(),
            safety: self.safety.clone(),
        }
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            replan: self.mpc.replan,
            steps: self.mpc.steps,
            plan_dist: self.disturbances.plan,
            ctl_dist: self.disturbances.control,
        }
    }

    /// One closed-loop run with the given planner network (or the scenario's).
    pub fn run(&self, net: Option<MLPNet>, seed: u64) -> Result<MpcOutcome> {
        let problem = self.problem(self.planner_model(net)?);
        let plant = self.plant()?;
        mpc_run(&problem, &self.sampler, &self.mpc_config(), &self.task(), &plant, &self.x0, seed)
    }
}

/// Low-level gains of the quadrotor plant; stiffer than the defaults so a
/// commanded velocity settles within about one planning action.
pub fn quad_gains() -> VelocityGains {
    VelocityGains {
        kz: 4.0,
        kv: 3.0,
        kp: 100.0,
        kd: 20.0,
        ..Default::default()
    }
}

/// 12D quadrotor under the tanh velocity controller. One planning action is
/// a velocity command held for 8 control intervals of 0.05 s; the planning
/// state is position, velocity, roll and pitch.
pub fn quad_simulator() -> Result<ClosedLoopSimulator> {
    let p = QuadrotorParams::default();
    let net = quadrotor_velocity_controller(&p, &quad_gains())?;
    let field = VectorField::analytic(ct_system("quadrotor")?, vec![p.hover_thrust(), 0.0, 0.0])?;
    let mut spec = ClosedLoopSpec::new(
        field,
        net,
        5,
        1,
        FlowpipeParams {
            h: 0.01,
            ..Default::default()
        },
    );
    // the reference slot is filled by the planner's action at run time
    spec.y_ref = vec![vec![0.0; 3]];
    let sim = ClosedLoopSimulator {
        spec,
        periods: 8,
        plan_dims: (0..8).collect(),
        // thrust noise in newtons; torque noise at 1% of the controller's saturation
        ctl_scale: vec![1.0, 0.01, 0.01],
    };
    sim.validate()?;
    Ok(sim)
}

fn sphere(radius: f64) -> Constraint {
    Constraint::SphereAvoid {
        dims: vec![0, 1, 2],
        center: vec![2.0, 0.15, 1.0],
        radius,
    }
}

/// Fly from hover at `(0, 0, 1)` to `(4, 0, 1)` around a sphere of radius
/// 0.5 at `(2, 0.15, 1)`. Planners avoid a sphere inflated by 0.1 to absorb
/// model error; `eps` is the planning-state uncertainty (0 for vanilla).
pub fn quad_avoid_scenario(eps: f64, disturbances: Disturbances) -> Scenario {
    let mut x0 = vec![0.0; 12];
    x0[2] = 1.0;
    let mut goal = vec![0.0; 8];
    goal[0] = 4.0;
    goal[2] = 1.0;
    let mut q = vec![0.0; 8];
    q[..3].fill(1.0);
    Scenario {
        system: QUAD_SYSTEM.into(),
        model: None,
        residual: true,
        x0,
        goal: GoalRegion {
            dims: vec![0, 1, 2],
            center: vec![4.0, 0.0, 1.0],
            radius: 0.3,
        },
        cost: StageCost {
            goal,
            q,
            r: vec![0.01; 3],
            terminal: 5.0,
        },
        constraints: vec![sphere(0.6)],
        safety: vec![sphere(0.5)],
        penalty: 100.0,
        horizon: 8,
        u_lo: vec![-1.0; 3],
        u_hi: vec![1.0; 3],
        eps,
        window: 4,
        disturbances,
        sampler: SamplerConfig {
            population: 128,
            iters: 4,
            refine_iters: 2,
            ..Default::default()
        },
        mpc: LoopSettings { replan: 3, steps: 30 },
    }
}

/// Random velocity-command episodes of the quadrotor plant over the task
/// region, logged in planning coordinates.
pub fn quad_dataset(episodes: usize, len: usize, seed: u64) -> Result<Vec<Episode>> {
    let sim = quad_simulator()?;
    let mut lo = vec![0.0; 12];
    let mut hi = vec![0.0; 12];
    (lo[0], hi[0]) = (-0.5, 4.5);
    (lo[1], hi[1]) = (-1.5, 1.5);
    (lo[2], hi[2]) = (0.3, 1.7);
    for i in 3..6 {
        (lo[i], hi[i]) = (-1.0, 1.0);
    }
    let x0 = IntervalBox::from_bounds(&lo, &hi)?;
    let u = IntervalBox::from_bounds(&[-1.0; 3], &[1.0; 3])?;
    simulator_dataset(&sim, &x0, &u, episodes, len, seed)
}

/// Training recipe for the quadrotor planning model; `lambda = 0` gives
/// the regular model.
pub fn quad_train_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        th_max: 8,
        eps_final: 0.05,
        eps0: 0.1,
        lambda,
        iters: 400,
        batch: 8,
        lr: 1e-2,
        lr_final: Some(1e-4),
        window: 0,
        residual: true,
        seed: 3,
        ..Default::default()
    }
}

/// Residual `[11, 16, 8]` tanh model trained on `data`.
pub fn quad_train_model(data: &[Episode], lambda: f64) -> Result<Trained> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let init = MLPNet::random(&[11, 16, 8], Activation::Tanh, &mut rng)?;
    train_dt_dyn(&init, &quad_train_config(lambda), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_json_round_trip() {
        let s = quad_avoid_scenario(0.05, Disturbances { plan: 0.3, control: 0.1 });
        let back: Scenario = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert!(s.planner_model(None).is_err());
    }

    #[test]
    fn dt_scenario_runs_on_its_own_map() {
        let s = Scenario {
            system: "pendulum".into(),
            model: None,
            residual: false,
            x0: vec![0.5, 0.0],
            goal: GoalRegion {
                dims: vec![0],
                center: vec![0.0],
                radius: 0.1,
            },
            cost: StageCost {
                goal: vec![0.0, 0.0],
                q: vec![1.0, 0.1],
                r: vec![0.01],
                terminal: 0.0,
            },
            constraints: vec![],
            safety: vec![],
            penalty: 0.0,
            horizon: 5,
            u_lo: vec![-2.0],
            u_hi: vec![2.0],
            eps: 0.01,
            window: 2,
            disturbances: Disturbances { plan: 0.0, control: 0.0 },
            sampler: SamplerConfig {
                population: 32,
                iters: 3,
                refine_iters: 0,
                ..Default::default()
            },
            mpc: LoopSettings { replan: 2, steps: 40 },
        };
        let out = s.run(None, 0).unwrap();
        assert!(out.success);
        assert_eq!(out, s.run(None, 0).unwrap());
    }

    #[test]
    fn quad_plant_holds_hover() {
        let sim = quad_simulator().unwrap();
        let mut x = vec![0.0; 12];
        x[2] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sim.step(&x, &[0.0; 3], 0.0, &mut rng).unwrap();
        assert_eq!(s.len(), 8);
        for v in s.last().unwrap().iter().zip(&x).map(|(a, b)| (a - b).abs()) {
            assert!(v < 1e-9);
        }
    }
}
