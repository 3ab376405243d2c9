//! Reach tubes: per-step box enclosures plus failure metadata, with CSV and
//! JSON serialization.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::real::Real;

/// Diagnostics recorded for one step of an engine run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Remainder enlargements before the step became contractive.
    pub enlargements: u32,
    /// Largest per-dimension radius of the accepted remainder.
    pub remainder_rad: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeStep<S = f64> {
    pub step: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub bx: IntervalBox<S>,
    pub info: StepInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureKind {
    StepFailure { ratio: f64 },
    Diverged,
    Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeFailure {
    /// First step that could not be certified.
    pub step: usize,
    #[serde(flatten)]
    pub kind: FailureKind,
    pub message: String,
}

impl TubeFailure {
    pub fn from_error(step: usize, e: &Error) -> Self {
        let kind = match e {
            Error::StepFailure { ratio, .. } => FailureKind::StepFailure { ratio: *ratio },
            Error::Domain(_) => FailureKind::Domain,
            _ => FailureKind::Diverged,
        };
        Self {
            step,
            kind,
            message: e.to_string(),
        }
    }
}

/// Time-indexed sequence of boxes. A tube with a failure is truncated at the
/// failing step and counts as diverged from there on.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachTube<S = f64> {
    pub steps: Vec<TubeStep<S>>,
    pub failure: Option<TubeFailure>,
}

impl<S: Real> Default for ReachTube<S> {
    fn default() -> Self {
        Self {
            steps: Vec::new(),
            failure: None,
        }
    }
}

impl<S: Real> ReachTube<S> {
    pub fn push(&mut self, step: usize, t_lo: f64, t_hi: f64, bx: IntervalBox<S>, info: StepInfo) {
        self.steps.push(TubeStep {
            step,
            t_lo,
            t_hi,
            bx,
            info,
        });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_diverged(&self) -> bool {
        self.failure.is_some() || self.steps.iter().any(|s| s.bx.is_diverged())
    }

    pub fn last_box(&self) -> Option<&IntervalBox<S>> {
        self.steps.last().map(|s| &s.bx)
    }

    /// Sum over steps of the per-box width sum; `+inf` when diverged.
    pub fn volume(&self) -> S {
        if self.failure.is_some() {
            return S::from_f64(f64::INFINITY);
        }
        self.steps.iter().map(|s| s.bx.volume_proxy()).sum()
    }

    /// Volume of the predicted part only (steps after the initial box), the
    /// quantity differentiated by objectives and losses; `+inf` on failure.
    pub fn predicted_volume(&self) -> S {
        if self.failure.is_some() {
            return S::from_f64(f64::INFINITY);
        }
        self.steps.iter().skip(1).map(|s| s.bx.volume_proxy()).sum()
    }

    /// Box covering time `t`, if any.
    pub fn box_at_time(&self, t: f64) -> Option<&IntervalBox<S>> {
        self.steps.iter().find(|s| s.t_lo <= t && t <= s.t_hi).map(|s| &s.bx)
    }

    pub fn to_f64(&self) -> ReachTube<f64> {
        ReachTube {
            steps: self
                .steps
                .iter()
                .map(|s| TubeStep {
                    step: s.step,
                    t_lo: s.t_lo,
                    t_hi: s.t_hi,
                    bx: s.bx.to_f64(),
                    info: s.info,
                })
                .collect(),
            failure: self.failure.clone(),
        }
    }

    /// Widths of one dimension across steps.
    pub fn widths(&self, dim: usize) -> Vec<S> {
        self.steps.iter().map(|s| s.bx.dims[dim].width()).collect()
    }
}

/// `tube_volume` as a free function.
pub fn tube_volume<S: Real>(tube: &ReachTube<S>) -> S {
    tube.volume()
}

impl ReachTube<f64> {
    /// CSV with header `step,t_lo,t_hi,dim,lo,hi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t_lo,t_hi,dim,lo,hi\n");
        for s in &self.steps {
            for (d, iv) in s.bx.dims.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{},{}", s.step, s.t_lo, s.t_hi, d, iv.lo, iv.hi);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("step,t_lo,t_hi,dim,lo,hi") => {}
            _ => return Err(Error::Config("tube CSV header mismatch".into())),
        }
        let mut tube = ReachTube::default();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Config(format!("tube CSV line {}: expected 6 fields", ln + 2)));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::Config(format!("tube CSV line {}: {e}", ln + 2)))
            };
            let int = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|e| Error::Config(format!("tube CSV line {}: {e}", ln + 2)))
            };
            let step = int(f[0])?;
            let dim = int(f[3])?;
            let iv = Interval {
                lo: num(f[4])?,
                hi: num(f[5])?,
            };
            let fresh = tube.steps.last().map(|s| s.step != step).unwrap_or(true);
            if fresh {
                tube.push(step, num(f[1])?, num(f[2])?, IntervalBox::new(Vec::new()), StepInfo::default());
            }
            let last = tube.steps.last_mut().unwrap();
            if dim != last.bx.dims.len() {
                return Err(Error::Config(format!("tube CSV line {}: dims out of order", ln + 2)));
            }
            last.bx.dims.push(iv);
        }
        Ok(tube)
    }

    pub fn to_json(&self, params: serde_json::Value) -> serde_json::Value {
        let steps: Vec<_> = self
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "step": s.step,
                    "t_lo": s.t_lo,
                    "t_hi": s.t_hi,
                    "box": s.bx,
                    "enlargements": s.info.enlargements,
                    "remainder_rad": s.info.remainder_rad,
                })
            })
            .collect();
        serde_json::json!({
            "params": params,
            "volume": if self.failure.is_some() { serde_json::Value::Null } else { serde_json::json!(self.volume()) },
            "failure": self.failure,
            "steps": steps,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Step {
            step: usize,
            t_lo: f64,
            t_hi: f64,
            #[serde(rename = "box")]
            bx: IntervalBox,
            #[serde(default)]
            enlargements: u32,
            #[serde(default)]
            remainder_rad: f64,
        }
        #[derive(Deserialize)]
        struct Doc {
            steps: Vec<Step>,
            #[serde(default)]
            failure: Option<TubeFailure>,
        }
        let doc: Doc = serde_json::from_value(v.clone())?;
        Ok(ReachTube {
            steps: doc
                .steps
                .into_iter()
                .map(|s| TubeStep {
                    step: s.step,
                    t_lo: s.t_lo,
                    t_hi: s.t_hi,
                    bx: s.bx,
                    info: StepInfo {
                        enlargements: s.enlargements,
                        remainder_rad: s.remainder_rad,
                    },
                })
                .collect(),
            failure: doc.failure,
        })
    }
}

/// Elementwise hull of several tubes with identical step layout. Any
/// failure makes the hull fail from the earliest failing step.
pub fn tube_hull(tubes: &[ReachTube]) -> Result<ReachTube> {
    let first = tubes.first().ok_or_else(|| Error::Argument("empty tube list".into()))?;
    let mut out = ReachTube::default();
    let n_steps = tubes.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    for k in 0..n_steps {
        let mut bx = first.steps[k].bx.clone();
        let mut info = first.steps[k].info;
        for t in &tubes[1..] {
            bx = bx.hull(&t.steps[k].bx)?;
            info.enlargements = info.enlargements.max(t.steps[k].info.enlargements);
            info.remainder_rad = info.remainder_rad.max(t.steps[k].info.remainder_rad);
        }
        let s = &first.steps[k];
        out.push(s.step, s.t_lo, s.t_hi, bx, info);
    }
    out.failure = tubes
        .iter()
        .filter_map(|t| t.failure.clone())
        .min_by_key(|f| f.step);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    fn sample() -> ReachTube {
        let mut t = ReachTube::default();
        t.push(0, 0.0, 0.0, IntervalBox::new(vec![iv(-1.0, 1.0), iv(0.1, 0.30000000000000004)]), StepInfo::default());
        t.push(1, 0.0, 0.01, IntervalBox::new(vec![iv(-1.5, 1.25), iv(1e-300, 2.5e7)]), StepInfo { enlargements: 2, remainder_rad: 1e-5 });
        t
    }

    #[test]
    fn volume_examples() {
        let mut t = ReachTube::default();
        t.push(0, 0.0, 0.0, IntervalBox::point(&[1.0, 2.0]), StepInfo::default());
        t.push(1, 0.0, 1.0, IntervalBox::point(&[1.0, 2.0]), StepInfo::default());
        assert_eq!(tube_volume(&t), 0.0);

        let mut t = ReachTube::default();
        t.push(0, 0.0, 0.0, IntervalBox::new(vec![iv(-1.0, 1.0)]), StepInfo::default());
        t.push(1, 0.0, 1.0, IntervalBox::new(vec![iv(-1.0, 1.0)]), StepInfo::default());
        assert_eq!(tube_volume(&t), 4.0);
        t.failure = Some(TubeFailure { step: 2, kind: FailureKind::Diverged, message: String::new() });
        assert_eq!(tube_volume(&t), f64::INFINITY);
    }

    #[test]
    fn csv_round_trip_and_volume_recompute() {
        let t = sample();
        let csv = t.to_csv();
        let back = ReachTube::from_csv(&csv).unwrap();
        assert_eq!(back.steps.len(), 2);
        for (a, b) in t.steps.iter().zip(&back.steps) {
            assert_eq!(a.bx, b.bx);
            assert_eq!((a.t_lo, a.t_hi), (b.t_lo, b.t_hi));
        }
        // independent recomputation from the raw CSV text
        let v: f64 = csv
            .lines()
            .skip(1)
            .map(|l| {
                let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
                f[5] - f[4]
            })
            .sum();
        assert_eq!(v, t.volume());
        assert!(ReachTube::from_csv("bad\n").is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut t = sample();
        t.failure = Some(TubeFailure { step: 2, kind: FailureKind::StepFailure { ratio: 3.5 }, message: "x".into() });
        let v = t.to_json(serde_json::json!({"h": 0.01}));
        assert_eq!(ReachTube::from_json(&v).unwrap(), t);
    }

    #[test]
    fn hull_is_elementwise() {
        let a = sample();
        let mut b = sample();
        b.steps[1].bx.dims[0] = iv(-2.0, 0.0);
        let h = tube_hull(&[a, b]).unwrap();
        assert_eq!(h.steps[1].bx.dims[0], iv(-2.0, 1.25));
    }
}
