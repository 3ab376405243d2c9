//! Command-line front end. Every command computes its artifacts in memory,
//! then writes them together with `manifest.json` into `--out`; a command
//! that fails before producing a tube leaves nothing behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::baseline::{interval_baseline_ct, interval_baseline_dt};
use crate::closed_loop::{cl_reach, ClosedLoopSpec};
use crate::dt::{dt_reach, DTSystem, DtOptions};
use crate::error::{check_dim, Error, Result};
use crate::flowpipe::{ct_reach, FieldKind, FlowpipeParams, VectorField};
use crate::interval::{set_outward_rounding, IntervalBox, Radius};
use crate::mpc::mpc_log_csv;
use crate::neural::{Activation, MLPNet};
use crate::refine::{gradient_refine, reach_with_splitting, CtVolume, DtVolume, RefineConfig, SplitPlan, Target};
use crate::scenario::{quad_gains, Scenario};
use crate::systems::{ct_system, dt_system, quadrotor_velocity_controller, QuadrotorParams};
use crate::training::{generate_dt_dataset, load_episodes, log_to_csv, train_ct_ctl, train_dt_dyn, TrainConfig};
use crate::tube::{FailureKind, ReachTube};

pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "tmreach", version, about = "Taylor-model reachability for neural and analytical dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Continuous-time flowpipe of an analytical or neural vector field.
    ReachCt(ReachArgs),
    /// Reachable tube of a one-step map under an action sequence.
    ReachDt(ReachArgs),
    /// Flowpipe of a plant in feedback with a network controller.
    ReachCl(ClArgs),
    /// Hull of the tubes of a gridded initial box (`--split` required).
    Split(SplitArgs),
    /// Gradient descent of the tube volume.
    Refine(RefineArgs),
    /// Certified training of a one-step dynamics network.
    TrainDt(TrainDtArgs),
    /// Certified training of a closed-loop controller.
    TrainCtl(TrainCtlArgs),
    /// Receding-horizon planning run described by a scenario file.
    Mpc(MpcArgs),
    /// Wall-clock timing of repeated continuous-time runs.
    Bench(BenchArgs),
    /// Re-executes the run recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads for parallel engines (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Round every interval endpoint outward.
    #[arg(long)]
    pub sound_rounding: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Interval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Ct,
    Dt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    X0Center,
    Action,
    Weights,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::X0Center => Target::X0Center,
            TargetArg::Action => Target::Action,
            TargetArg::Weights => Target::Weights,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ReachArgs {
    /// Registered system name.
    #[arg(long, conflicts_with = "net")]
    pub system: Option<String>,
    /// Network JSON used as vector field or one-step map.
    #[arg(long)]
    pub net: Option<PathBuf>,
    /// The network predicts the state increment (discrete time).
    #[arg(long)]
    pub residual: bool,
    /// Comma-separated center of the initial box (default: origin).
    #[arg(long, allow_hyphen_values = true)]
    pub x0_center: Option<String>,
    /// Radius of the initial box: one value or one per dimension.
    #[arg(long, default_value = "0.01")]
    pub eps: String,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    /// Integration steps (continuous time) or horizon (discrete time).
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Symbolic remainder window.
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    /// Held input (continuous time) or the action repeated at every step.
    #[arg(long, allow_hyphen_values = true)]
    pub input: Option<String>,
    /// Action sequence `u0;u1;...`, each a comma-separated vector.
    #[arg(long, allow_hyphen_values = true)]
    pub actions: Option<String>,
    /// Split plan: `2x2x1...`, `rpy:K` or `uniform:K`.
    #[arg(long)]
    pub split: Option<String>,
    /// Also compute a comparison tube.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct SplitArgs {
    #[arg(long, value_enum, default_value = "ct")]
    pub mode: Mode,
    #[command(flatten)]
    pub reach: ReachArgs,
}

#[derive(Args, Debug, Clone)]
pub struct RefineArgs {
    #[arg(long, value_enum, default_value = "ct")]
    pub mode: Mode,
    #[arg(long, value_enum, default_value = "x0-center")]
    pub target: TargetArg,
    #[arg(long, default_value_t = 20)]
    pub grad_iters: usize,
    /// Largest per-coordinate move of the first trial step.
    #[arg(long, default_value_t = 0.05)]
    pub refine_step: f64,
    #[command(flatten)]
    pub reach: ReachArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ClArgs {
    /// Plant; `quadrotor` without `--net` uses the built-in velocity controller.
    #[arg(long, default_value = "quadrotor")]
    pub system: String,
    /// Controller network over `(x, reference)`.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0_center: Option<String>,
    #[arg(long, default_value = "0.01")]
    pub eps: String,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    /// Atomic steps per control interval.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Control intervals.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    /// Reference held at every interval, or `r0;r1;...` with one per interval.
    #[arg(long, allow_hyphen_values = true)]
    pub reference: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct TrainDtArgs {
    /// Episodes JSON; without it data is generated from `--system`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Analytical map used to generate data.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub len: usize,
    /// Sampling box of initial states (center and radius).
    #[arg(long, allow_hyphen_values = true)]
    pub x0_center: Option<String>,
    #[arg(long, default_value = "1.0")]
    pub eps: String,
    /// Half-width of the uniform action box.
    #[arg(long, default_value_t = 1.0)]
    pub u_max: f64,
    /// Initial network; otherwise a random tanh net with `--hidden` units.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, default_value = "32")]
    pub hidden: String,
    #[arg(long)]
    pub residual: bool,
    /// TrainConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct TrainCtlArgs {
    /// Episodes JSON with states, actions and references.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "quadrotor")]
    pub system: String,
    /// Initial controller; `quadrotor` defaults to the velocity controller.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct MpcArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Planner network overriding the scenario's model.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[arg(long, default_value = "quadrotor")]
    pub system: String,
    #[arg(long, allow_hyphen_values = true)]
    pub x0_center: Option<String>,
    #[arg(long, default_value = "0.01")]
    pub eps: String,
    #[arg(long, allow_hyphen_values = true)]
    pub input: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command: the arguments minus `--out`,
/// the effective seed and thread count, and hashes of inputs and outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub threads: usize,
    pub sound_rounding: bool,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Artifacts of one command, written only after the command succeeded.
struct Output {
    files: Vec<(String, Vec<u8>)>,
    inputs: Vec<PathBuf>,
    seed: u64,
    /// Deferred failure: the artifacts are written, then this is reported.
    failure: Option<Error>,
}

impl Output {
    fn new(seed: u64) -> Self {
        Self {
            files: Vec::new(),
            inputs: Vec::new(),
            seed,
            failure: None,
        }
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn add_json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.add(name, s);
        Ok(())
    }

    fn add_tube(&mut self, stem: &str, tube: &ReachTube, params: serde_json::Value) -> Result<()> {
        self.add(&format!("{stem}.csv"), tube.to_csv());
        self.add_json(&format!("{stem}.json"), &tube.to_json(params))?;
        if self.failure.is_none() {
            if let Some(f) = &tube.failure {
                self.failure = Some(match f.kind {
                    FailureKind::StepFailure { ratio } => Error::StepFailure { step: f.step, ratio },
                    FailureKind::Domain => Error::Domain(f.message.clone()),
                    FailureKind::Diverged => Error::Diverged(f.message.clone()),
                });
            }
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Comma-separated floats.
pub fn parse_vec(text: &str) -> Result<Vec<f64>> {
    let t = text.trim();
    if t.is_empty() {
        return Ok(Vec::new());
    }
    t.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("cannot parse number '{s}' in '{text}'"))))
        .collect()
}

/// `;`-separated vectors.
pub fn parse_seq(text: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';').map(parse_vec).collect()
}

fn initial_box(center: Option<&str>, eps: &str, n: usize) -> Result<IntervalBox> {
    let c = match center {
        Some(s) => parse_vec(s)?,
        None => vec![0.0; n],
    };
    check_dim(n, c.len(), "initial box center")?;
    let r = parse_vec(eps)?;
    let r = match r.len() {
        1 => Radius::Uniform(r[0]),
        _ => {
            check_dim(n, r.len(), "initial box radius")?;
            Radius::PerDim(r)
        }
    };
    IntervalBox::from_center(&c, &r)
}

fn held_input(text: Option<&str>, m: usize) -> Result<Vec<f64>> {
    let u = match text {
        Some(s) => parse_vec(s)?,
        None => vec![0.0; m],
    };
    check_dim(m, u.len(), "held input")?;
    Ok(u)
}

fn flow_params(a: &ReachArgs) -> Result<FlowpipeParams> {
    let p = FlowpipeParams {
        h: a.h,
        steps: a.steps,
        order: a.order,
        window: a.window,
        ..Default::default()
    };
    p.validate()?;
    Ok(p)
}

fn load_net(path: &Path, out: &mut Output) -> Result<MLPNet> {
    out.inputs.push(path.to_path_buf());
    MLPNet::load(path)
}

fn ct_field(a: &ReachArgs, out: &mut Output) -> Result<VectorField> {
    match (&a.net, &a.system) {
        (Some(p), _) => {
            let net = load_net(p, out)?;
            let m = net.input_dim().saturating_sub(net.output_dim());
            VectorField::neural(net, held_input(a.input.as_deref(), m)?)
        }
        (None, Some(s)) => {
            let sys = ct_system(s)?;
            let m = sys.input_dim();
            VectorField::analytic(sys, held_input(a.input.as_deref(), m)?)
        }
        (None, None) => Err(Error::Config("either --system or --net is required".into())),
    }
}

fn dt_sys(a: &ReachArgs, out: &mut Output) -> Result<DTSystem> {
    match (&a.net, &a.system) {
        (Some(p), _) => {
            let net = load_net(p, out)?;
            if a.residual {
                DTSystem::residual(net)
            } else {
                DTSystem::neural(net)
            }
        }
        (None, Some(s)) => Ok(DTSystem::analytic(dt_system(s)?)),
        (None, None) => Err(Error::Config("either --system or --net is required".into())),
    }
}

fn dt_actions(a: &ReachArgs, m: usize) -> Result<Vec<Vec<f64>>> {
    let acts = match &a.actions {
        Some(s) => parse_seq(s)?,
        None => vec![held_input(a.input.as_deref(), m)?; a.steps],
    };
    for u in &acts {
        check_dim(m, u.len(), "action")?;
    }
    Ok(acts)
}

fn reach_params_json(a: &ReachArgs, p: &FlowpipeParams) -> serde_json::Value {
    json!({ "flowpipe": p, "split": a.split, "residual": a.residual })
}

fn summary(tube: &ReachTube, baseline: Option<&ReachTube>) -> serde_json::Value {
    let vol = |t: &ReachTube| if t.failure.is_some() { None } else { Some(t.volume()) };
    json!({
        "steps": tube.len(),
        "volume": vol(tube),
        "predicted_volume": if tube.failure.is_some() { None } else { Some(tube.predicted_volume()) },
        "final_box": tube.last_box(),
        "failure": tube.failure,
        "baseline_volume": baseline.and_then(vol),
    })
}

fn cmd_reach(mode: Mode, a: &ReachArgs, need_split: bool) -> Result<Output> {
    let mut out = Output::new(a.common.seed.unwrap_or(0));
    let params = flow_params(a)?;
    let plan_text = match (&a.split, need_split) {
        (None, true) => return Err(Error::Config("--split is required".into())),
        (s, _) => s.clone(),
    };
    let (tube, base) = match mode {
        Mode::Ct => {
            let field = ct_field(a, &mut out)?;
            let x0 = initial_box(a.x0_center.as_deref(), &a.eps, field.dim())?;
            let tube = match &plan_text {
                Some(s) => reach_with_splitting(&x0, &SplitPlan::parse(s, x0.dim())?, |b| ct_reach(&field, b, &params))?,
                None => ct_reach(&field, &x0, &params)?,
            };
            let base = match a.baseline {
                Some(Baseline::Interval) => Some(interval_baseline_ct(&field, &x0, &params)?),
                None => None,
            };
            (tube, base)
        }
        Mode::Dt => {
            let sys = dt_sys(a, &mut out)?;
            let x0 = initial_box(a.x0_center.as_deref(), &a.eps, sys.state_dim())?;
            let acts = dt_actions(a, sys.input_dim())?;
            let opts = DtOptions {
                window: a.window,
                rebuild_from_box: false,
            };
            let tube = match &plan_text {
                Some(s) => reach_with_splitting(&x0, &SplitPlan::parse(s, x0.dim())?, |b| dt_reach(&sys, b, &acts, &opts))?,
                None => dt_reach(&sys, &x0, &acts, &opts)?,
            };
            let base = match a.baseline {
                Some(Baseline::Interval) => Some(interval_baseline_dt(&sys, &x0, &acts)?),
                None => None,
            };
            (tube, base)
        }
    };
    out.add_json("summary.json", &summary(&tube, base.as_ref()))?;
    out.add_tube("tube", &tube, reach_params_json(a, &params))?;
    if let Some(b) = &base {
        out.add_tube("baseline", b, json!({ "baseline": "interval" }))?;
    }
    Ok(out)
}

fn quad_input() -> Vec<f64> {
    vec![QuadrotorParams::default().hover_thrust(), 0.0, 0.0]
}

fn cl_spec(system: &str, net: Option<&Path>, h: f64, k: usize, n_ctl: usize, out: &mut Output) -> Result<ClosedLoopSpec> {
    let sys = ct_system(system)?;
    let input = if system == "quadrotor" { quad_input() } else { vec![0.0; sys.input_dim()] };
    let field = VectorField::analytic(sys, input)?;
    let controller = match net {
        Some(p) => load_net(p, out)?,
        None if system == "quadrotor" => quadrotor_velocity_controller(&QuadrotorParams::default(), &quad_gains())?,
        None => return Err(Error::Config(format!("--net is required for plant '{system}'"))),
    };
    let params = FlowpipeParams { h, ..Default::default() };
    Ok(ClosedLoopSpec::new(field, controller, k, n_ctl, params))
}

fn cmd_reach_cl(a: &ClArgs) -> Result<Output> {
    let mut out = Output::new(a.common.seed.unwrap_or(0));
    let mut spec = cl_spec(&a.system, a.net.as_deref(), a.h, a.k, a.steps, &mut out)?;
    spec.params.order = a.order;
    spec.params.window = a.window;
    let ref_dim = spec.controller.input_dim().saturating_sub(spec.state_dim());
    spec.y_ref = match &a.reference {
        Some(s) => {
            let r = parse_seq(s)?;
            if r.len() == 1 {
                vec![r[0].clone(); a.steps]
            } else {
                r
            }
        }
        None if ref_dim > 0 => vec![vec![0.0; ref_dim]; a.steps],
        None => Vec::new(),
    };
    spec.validate()?;
    let x0 = initial_box(a.x0_center.as_deref(), &a.eps, spec.state_dim())?;
    let tube = cl_reach(&spec, &x0)?;
    out.add_json("summary.json", &summary(&tube, None))?;
    let params = json!({ "flowpipe": spec.params, "k": a.k, "n_ctl": a.steps, "y_ref": spec.y_ref });
    out.add_tube("tube", &tube, params)?;
    Ok(out)
}

fn cmd_refine(a: &RefineArgs) -> Result<Output> {
    let r = &a.reach;
    let mut out = Output::new(r.common.seed.unwrap_or(0));
    let params = flow_params(r)?;
    let target: Target = a.target.into();
    let (result, tube) = match a.mode {
        Mode::Ct => {
            let field = ct_field(r, &mut out)?;
            let x0 = initial_box(r.x0_center.as_deref(), &r.eps, field.dim())?;
            let obj = CtVolume {
                field,
                center: x0.center(),
                radius: x0.radii(),
                params: params.clone(),
                target,
            };
            let p0 = obj.initial_params()?;
            let res = gradient_refine(&obj, &p0, &RefineConfig::unconstrained(p0.len(), a.grad_iters, a.refine_step))?;
            let (mut field, mut center) = (obj.field.clone(), obj.center.clone());
            match target {
                Target::X0Center => center = res.params.clone(),
                Target::Action => field.input = res.params.clone(),
                Target::Weights => {
                    if let FieldKind::Neural(n) = &obj.field.kind {
                        field.kind = FieldKind::Neural(n.with_params(&res.params));
                    }
                }
            }
            let x0 = IntervalBox::from_center(&center, &Radius::PerDim(obj.radius.clone()))?;
            (res, ct_reach(&field, &x0, &params)?)
        }
        Mode::Dt => {
            let sys = dt_sys(r, &mut out)?;
            let x0 = initial_box(r.x0_center.as_deref(), &r.eps, sys.state_dim())?;
            let acts = dt_actions(r, sys.input_dim())?;
            let obj = DtVolume {
                sys,
                center: x0.center(),
                radius: x0.radii(),
                actions: acts,
                opts: DtOptions {
                    window: r.window,
                    rebuild_from_box: false,
                },
                target,
            };
            let p0 = obj.initial_params()?;
            let res = gradient_refine(&obj, &p0, &RefineConfig::unconstrained(p0.len(), a.grad_iters, a.refine_step))?;
            let (mut sys, mut center, mut acts) = (obj.sys.clone(), obj.center.clone(), obj.actions.clone());
            match target {
                Target::X0Center => center = res.params.clone(),
                Target::Action => acts = obj.unflatten_actions(&res.params),
                Target::Weights => {
                    if let crate::dt::DtModel::Neural(n) = &obj.sys.model {
                        sys = obj.sys.with_net(n.with_params(&res.params))?;
                    }
                }
            }
            let x0 = IntervalBox::from_center(&center, &Radius::PerDim(obj.radius.clone()))?;
            (res, dt_reach(&sys, &x0, &acts, &obj.opts)?)
        }
    };
    out.add_json("refine.json", &result)?;
    out.add_tube("tube", &tube, reach_params_json(r, &params))?;
    Ok(out)
}

fn train_config(path: Option<&Path>, seed: Option<u64>, lambda: Option<f64>, iters: Option<usize>, out: &mut Output) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            out.inputs.push(p.to_path_buf());
            serde_json::from_str(&std::fs::read_to_string(p)?)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    if let Some(i) = iters {
        cfg.iters = i;
    }
    cfg.validate()?;
    out.seed = cfg.seed;
    Ok(cfg)
}

fn cmd_train_dt(a: &TrainDtArgs) -> Result<Output> {
    let mut out = Output::new(0);
    let mut cfg = train_config(a.config.as_deref(), a.common.seed, a.lambda, a.iters, &mut out)?;
    cfg.residual |= a.residual;
    let data = match (&a.data, &a.system) {
        (Some(p), _) => {
            out.inputs.push(p.clone());
            load_episodes(p)?
        }
        (None, Some(s)) => {
            let sys = DTSystem::analytic(dt_system(s)?);
            let x0 = initial_box(a.x0_center.as_deref(), &a.eps, sys.state_dim())?;
            let u = IntervalBox::from_center(&vec![0.0; sys.input_dim()], &Radius::Uniform(a.u_max))?;
            generate_dt_dataset(&sys, &x0, &u, a.episodes, a.len, cfg.seed)?
        }
        (None, None) => return Err(Error::Config("either --data or --system is required".into())),
    };
    let first = data.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let (n, m) = (first.states[0].len(), first.actions.first().map_or(0, |u| u.len()));
    let init = match &a.net {
        Some(p) => load_net(p, &mut out)?,
        None => {
            let mut sizes = vec![n + m];
            sizes.extend(parse_vec(&a.hidden)?.iter().map(|&w| w as usize));
            sizes.push(n);
            MLPNet::random(&sizes, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
        }
    };
    check_dim(n + m, init.input_dim(), "network input")?;
    check_dim(n, init.output_dim(), "network output")?;
    let trained = train_dt_dyn(&init, &cfg, &data)?;
    out.add("net.json", trained.net.to_json()?);
    out.add("train_log.csv", log_to_csv(&trained.log));
    out.add_json("train_config.json", &cfg)?;
    Ok(out)
}

fn cmd_train_ctl(a: &TrainCtlArgs) -> Result<Output> {
    let mut out = Output::new(0);
    let cfg = train_config(a.config.as_deref(), a.common.seed, a.lambda, a.iters, &mut out)?;
    out.inputs.push(a.data.clone());
    let data = load_episodes(&a.data)?;
    let th = data.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut spec = cl_spec(&a.system, a.net.as_deref(), a.h, a.k, th, &mut out)?;
    spec.params.window = cfg.window;
    let trained = train_ct_ctl(&spec, &cfg, &data)?;
    out.add("net.json", trained.net.to_json()?);
    out.add("train_log.csv", log_to_csv(&trained.log));
    out.add_json("train_config.json", &cfg)?;
    Ok(out)
}

fn cmd_mpc(a: &MpcArgs) -> Result<Output> {
    let seed = a.common.seed.unwrap_or(0);
    let mut out = Output::new(seed);
    out.inputs.push(a.scenario.clone());
    let sc = Scenario::load(&a.scenario)?;
    let net = match &a.net {
        Some(p) => Some(load_net(p, &mut out)?),
        None => {
            if let Some(m) = &sc.model {
                out.inputs.push(PathBuf::from(m));
            }
            None
        }
    };
    let outcome = sc.run(net, seed)?;
    out.add("mpc_log.csv", mpc_log_csv(&outcome.log));
    out.add_json(
        "outcome.json",
        &json!({
            "success": outcome.success,
            "reached_at": outcome.reached_at,
            "violated_at": outcome.violated_at,
            "failure": outcome.failure,
            "diverged_plans": outcome.diverged_plans,
            "trajectory": outcome.trajectory,
        }),
    )?;
    Ok(out)
}

fn cmd_bench(a: &BenchArgs) -> Result<Output> {
    let mut out = Output::new(a.common.seed.unwrap_or(0));
    let sys = ct_system(&a.system)?;
    let input = match (&a.input, a.system.as_str()) {
        (None, "quadrotor") => quad_input(),
        (t, _) => held_input(t.as_deref(), sys.input_dim())?,
    };
    let field = VectorField::analytic(sys, input)?;
    let x0 = initial_box(a.x0_center.as_deref(), &a.eps, field.dim())?;
    let params = FlowpipeParams {
        h: a.h,
        steps: a.steps,
        ..Default::default()
    };
    params.validate()?;
    let mut ms = Vec::with_capacity(a.repeats);
    let mut tube = None;
    for _ in 0..a.repeats.max(1) {
        let t0 = Instant::now();
        tube = Some(ct_reach(&field, &x0, &params)?);
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let tube = tube.expect("at least one repeat");
    let mut sorted = ms.clone();
    sorted.sort_by(f64::total_cmp);
    out.add_json(
        "bench.json",
        &json!({
            "system": a.system,
            "dim": field.dim(),
            "steps": a.steps,
            "runs_ms": ms,
            "median_ms": sorted[sorted.len() / 2],
            "threads": rayon::current_num_threads(),
            "summary": summary(&tube, None),
        }),
    )?;
    Ok(out)
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ReachCt(_) => "reach-ct",
            Command::ReachDt(_) => "reach-dt",
            Command::ReachCl(_) => "reach-cl",
            Command::Split(_) => "split",
            Command::Refine(_) => "refine",
            Command::TrainDt(_) => "train-dt",
            Command::TrainCtl(_) => "train-ctl",
            Command::Mpc(_) => "mpc",
            Command::Bench(_) => "bench",
            Command::Replay(_) => "replay",
        }
    }

    fn common(&self) -> Option<&Common> {
        Some(match self {
            Command::ReachCt(a) | Command::ReachDt(a) => &a.common,
            Command::ReachCl(a) => &a.common,
            Command::Split(a) => &a.reach.common,
            Command::Refine(a) => &a.reach.common,
            Command::TrainDt(a) => &a.common,
            Command::TrainCtl(a) => &a.common,
            Command::Mpc(a) => &a.common,
            Command::Bench(a) => &a.common,
            Command::Replay(_) => return None,
        })
    }

    fn dispatch(&self) -> Result<Output> {
        match self {
            Command::ReachCt(a) => cmd_reach(Mode::Ct, a, false),
            Command::ReachDt(a) => cmd_reach(Mode::Dt, a, false),
            Command::ReachCl(a) => cmd_reach_cl(a),
            Command::Split(a) => cmd_reach(a.mode, &a.reach, true),
            Command::Refine(a) => cmd_refine(a),
            Command::TrainDt(a) => cmd_train_dt(a),
            Command::TrainCtl(a) => cmd_train_ctl(a),
            Command::Mpc(a) => cmd_mpc(a),
            Command::Bench(a) => cmd_bench(a),
            Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
        }
    }
}

/// Arguments with `--out` and its value removed.
fn strip_out(args: &[String]) -> Vec<String> {
    let mut kept = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            kept.push(a.clone());
        }
    }
    kept
}

fn hash_file(path: &Path) -> Result<FileHash> {
    Ok(FileHash {
        path: path.to_string_lossy().into_owned(),
        sha256: sha256_hex(&std::fs::read(path)?),
    })
}

/// Runs `args` (without the program name) and returns the outcome of the
/// command; artifacts are on disk when this returns `Ok`, or when the error
/// is a tube failure.
pub fn execute(args: &[String]) -> Result<Manifest> {
    execute_with(args, None)
}

/// [`execute`] with a thread count used when `args` does not set one.
fn execute_with(args: &[String], threads: Option<usize>) -> Result<Manifest> {
    let cli = Cli::try_parse_from(std::iter::once("tmreach".to_string()).chain(args.iter().cloned()))
        .map_err(|e| Error::Argument(e.to_string()))?;
    if let Command::Replay(r) = &cli.command {
        return replay(&r.manifest, &r.out);
    }
    let common = cli.command.common().expect("non-replay command").clone();
    set_outward_rounding(common.sound_rounding);
    let (threads, output) = match common.threads.or(threads) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            (n, pool.install(|| cli.command.dispatch()))
        }
        None => (rayon::current_num_threads(), cli.command.dispatch()),
    };
    let output = output?;
    let mut inputs = Vec::with_capacity(output.inputs.len());
    for p in &output.inputs {
        inputs.push(hash_file(p)?);
    }
    std::fs::create_dir_all(&common.out)?;
    let mut outputs = Vec::with_capacity(output.files.len());
    for (name, bytes) in &output.files {
        std::fs::write(common.out.join(name), bytes)?;
        outputs.push(FileHash {
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let manifest = Manifest {
        tool: "tmreach".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cli.command.name().into(),
        args: strip_out(args),
        seed: output.seed,
        threads,
        sound_rounding: common.sound_rounding,
        inputs,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(common.out.join(MANIFEST), text)?;
    match output.failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}

/// Re-runs a recorded command into `out`. Inputs whose content changed
/// since the recording are rejected.
pub fn replay(manifest: &Path, out: &Path) -> Result<Manifest> {
    let m = Manifest::load(manifest)?;
    if m.tool != "tmreach" {
        return Err(Error::Config(format!("manifest written by '{}'", m.tool)));
    }
    for f in &m.inputs {
        let now = hash_file(Path::new(&f.path))?;
        if now.sha256 != f.sha256 {
            return Err(Error::Config(format!("input '{}' changed since the recorded run", f.path)));
        }
    }
    let mut args = m.args.clone();
    args.push("--out".into());
    args.push(out.to_string_lossy().into_owned());
    execute_with(&args, Some(m.threads))
}

/// Process entry point: returns the exit status.
pub fn run(args: &[String]) -> i32 {
    // let clap print help and version itself
    if let Err(e) = Cli::try_parse_from(std::iter::once("tmreach".to_string()).chain(args.iter().cloned())) {
        let code = if e.use_stderr() { 2 } else { 0 };
        let _ = e.print();
        return code;
    }
    match execute(args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("tmreach: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str, out: &Path) -> Vec<String> {
        let mut v: Vec<String> = s.split_whitespace().map(String::from).collect();
        v.push("--out".into());
        v.push(out.to_string_lossy().into_owned());
        v
    }

    #[test]
    fn vector_parsing() {
        assert_eq!(parse_vec("1, -2.5,3").unwrap(), vec![1.0, -2.5, 3.0]);
        assert_eq!(parse_seq("1,2;3,4").unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(matches!(parse_vec("1,x"), Err(Error::Config(_))));
        assert!(parse_vec("").unwrap().is_empty());
    }

    #[test]
    fn out_is_stripped() {
        let a: Vec<String> = ["reach-dt", "--out", "x", "--seed", "1", "--out=y"].iter().map(|s| s.to_string()).collect();
        assert_eq!(strip_out(&a), vec!["reach-dt", "--seed", "1"]);
    }

    #[test]
    fn dimension_error_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let e = execute(&args("reach-dt --system affine --x0-center 1,2,3 --steps 3", &out)).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_system_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let e = execute(&args("reach-ct --system nope", &out)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn step_failure_still_writes_the_tube() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let e = execute(&args("reach-ct --system square --x0-center 10 --eps 0 --h 1 --steps 3", &out)).unwrap_err();
        assert!(matches!(e.exit_code(), 4 | 5));
        let tube = ReachTube::from_csv(&std::fs::read_to_string(out.join("tube.csv")).unwrap()).unwrap();
        assert_eq!(tube.len(), 1);
        assert!(out.join(MANIFEST).exists());
    }

    #[test]
    fn replay_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let m = execute(&args("reach-ct --system rotation --x0-center 1,0 --eps 0.05 --steps 20 --split 2x2 --baseline interval", &a)).unwrap();
        assert_eq!(m.command, "reach-ct");
        let r = replay(&a.join(MANIFEST), &b).unwrap();
        assert_eq!(m, r);
        for f in &m.outputs {
            assert_eq!(std::fs::read(a.join(&f.path)).unwrap(), std::fs::read(b.join(&f.path)).unwrap());
        }
        assert_eq!(std::fs::read(a.join(MANIFEST)).unwrap(), std::fs::read(b.join(MANIFEST)).unwrap());
    }

    #[test]
    fn replay_rejects_changed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let net_path = dir.path().join("net.json");
        let net = MLPNet::random(&[3, 4, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        net.save(&net_path).unwrap();
        let a = dir.path().join("a");
        let cmd = format!("reach-dt --net {} --steps 3 --eps 0.1", net_path.display());
        execute(&args(&cmd, &a)).unwrap();
        let other = MLPNet::random(&[3, 4, 2], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        other.save(&net_path).unwrap();
        let e = replay(&a.join(MANIFEST), &dir.path().join("b")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn refine_shrinks_volume() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("r");
        execute(&args("refine --mode dt --system pendulum --x0-center 1.0,0.5 --eps 0.05 --steps 8 --target action --grad-iters 5", &out)).unwrap();
        let r: crate::refine::RefineResult = serde_json::from_str(&std::fs::read_to_string(out.join("refine.json")).unwrap()).unwrap();
        assert!(r.value < r.initial_value);
    }

    #[test]
    fn train_dt_small_run() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t");
        let m = execute(&args("train-dt --system affine --episodes 8 --len 10 --hidden 8 --iters 5 --seed 4", &out)).unwrap();
        assert_eq!(m.seed, 4);
        let net = MLPNet::load(out.join("net.json")).unwrap();
        assert_eq!((net.input_dim(), net.output_dim()), (3, 2));
    }
}
