//! Taylor-model reachability for neural and analytical dynamics.

pub mod baseline;
pub mod cli;
pub mod closed_loop;
pub mod dt;
pub mod error;
pub mod flowpipe;
pub mod interval;
pub mod linalg;
pub mod mpc;
pub mod neural;
pub mod ode;
pub mod real;
pub mod refine;
pub mod scenario;
pub mod systems;
pub mod taylor;
pub mod training;
pub mod tube;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalBox};
pub use linalg::Mat;
pub use real::{Dual, Real};
pub use taylor::{LinearTM, QuasiQuadTM, TmRow};
