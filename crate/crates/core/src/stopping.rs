//! Norm-threshold stopping times and the maximality scan across truncation
//! levels.
//!
//! The level-n rule triggers at the first recorded time with ‖U‖_p ≥ n/2
//! (time 0 included); no sub-step interpolation is attempted.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{lp_norm, EnergyRecord};
use crate::dynamics::Cutoff;
use crate::error::{Error, Result};
use crate::field::StateU;
use crate::integrator::{run_trajectory, StepConfig};
use crate::noise::NoiseModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    NormThreshold,
    None,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StoppingRule {
    pub kind: StopKind,
    /// Threshold level n; the trigger fires at ‖U‖_p ≥ n/2.
    pub level_n: f64,
    /// Horizon T the trajectory runs to when nothing triggers.
    pub horizon: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopEvent {
    pub time: f64,
    pub reason: StopReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StopReason {
    NormThreshold { level: f64, norm: f64 },
}

impl StoppingRule {
    pub fn none() -> Self {
        Self {
            kind: StopKind::None,
            level_n: f64::INFINITY,
            horizon: f64::INFINITY,
            p: 2.0,
        }
    }

    pub fn norm_threshold(level_n: f64, horizon: f64, p: f64) -> Self {
        assert!(level_n > 0.0, "threshold level must be positive");
        Self {
            kind: StopKind::NormThreshold,
            level_n,
            horizon,
            p,
        }
    }

    pub fn evaluate(&self, rec: &EnergyRecord) -> Option<StopEvent> {
        match self.kind {
            StopKind::None => None,
            StopKind::NormThreshold => {
                let norm = rec.lp_p.powf(1.0 / self.p);
                (norm >= self.level_n / 2.0).then(|| StopEvent {
                    time: rec.t,
                    reason: StopReason::NormThreshold {
                        level: self.level_n,
                        norm,
                    },
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub level: f64,
    /// First recorded trigger time, or the horizon when untriggered.
    pub tau: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaximalityReport {
    pub levels: Vec<LevelOutcome>,
    /// τ of the largest level, capped at the horizon.
    pub tau_estimate: f64,
    pub consistency: bool,
    pub max_overlap_deviation: f64,
}

/// Run the truncated system at δ₀ = n for each level n over one shared
/// Brownian path, record the stopping times, and check that the solutions
/// agree on overlapping time ranges.
pub fn maximality_scan(
    u0: &StateU,
    levels: &[f64],
    cfg: &StepConfig,
    model: &NoiseModel,
    seed: u64,
) -> Result<MaximalityReport> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("levels list is empty".into()));
    }
    if levels.windows(2).any(|w| w[1] < w[0]) || levels[0] <= 0.0 {
        return Err(Error::InvalidParameter(
            "levels must be positive and nondecreasing".into(),
        ));
    }

    let mut run_cfg = *cfg;
    run_cfg.record_states = true;

    let mut outcomes = Vec::with_capacity(levels.len());
    let mut trajectories = Vec::with_capacity(levels.len());
    for &n in levels {
        let rule = StoppingRule::norm_threshold(n, cfg.t_final, cfg.p);
        let cutoff = Cutoff::new(n);
        let traj = run_trajectory(u0, &run_cfg, model, &cutoff, true, seed, &rule)?;
        let (tau, triggered) = match &traj.stopped {
            Some(ev) => (ev.time, true),
            None => (cfg.t_final, false),
        };
        outcomes.push(LevelOutcome {
            level: n,
            tau,
            triggered,
        });
        trajectories.push(traj);
    }

    // By uniqueness the (discrete) paths must coincide up to τ_m ∧ τ_n.
    let mut max_dev: f64 = 0.0;
    for i in 0..trajectories.len() {
        for j in (i + 1)..trajectories.len() {
            let overlap = outcomes[i].tau.min(outcomes[j].tau);
            let (ti, tj) = (&trajectories[i], &trajectories[j]);
            for (k, &t) in ti.times.iter().enumerate() {
                if t > overlap || k >= tj.times.len() {
                    break;
                }
                let dev = lp_norm(&ti.states()[k].sub(&tj.states()[k]), cfg.p);
                max_dev = max_dev.max(dev);
                if dev > 1e-10 {
                    return Err(Error::ConsistencyViolation {
                        level_a: outcomes[i].level,
                        level_b: outcomes[j].level,
                        deviation: dev,
                    });
                }
            }
        }
    }

    Ok(MaximalityReport {
        tau_estimate: outcomes.last().unwrap().tau.min(cfg.t_final),
        levels: outcomes,
        consistency: true,
        max_overlap_deviation: max_dev,
    })
}
