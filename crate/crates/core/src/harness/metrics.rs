use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cascade::{ConstraintConfig, SimLog};
use crate::error::{Error, Result};

/// Per-run summary. Errors are root-mean-square over every controller tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub attitude_rmse: f64,
    pub velocity_rmse: f64,
    pub position_rmse: f64,
    pub thrust_rmse: f64,
    pub torque_rmse: f64,
    /// First time the vehicle enters the arrival ball and stays for the dwell.
    pub time_to_target: Option<f64>,
    pub reached: bool,
    pub final_distance: f64,
    pub replans: usize,
    pub first_replan: Option<f64>,
    pub max_l1_slack: f64,
    pub solver_faults: usize,
    /// Largest tilt while the keep-in row was active, after the settling time.
    pub max_tilt_keep_in: Option<f64>,
    pub input_violations: usize,
    /// Wall-clock seconds in QP solves over the run.
    pub solve_time: f64,
    pub assembly_time: f64,
}

/// Ticks whose issued command leaves the input box.
pub fn input_violations(log: &SimLog, c: &ConstraintConfig) -> usize {
    const TOL: f64 = 1e-9;
    log.records
        .iter()
        .filter(|r| {
            let thrust = r.f < -TOL || r.f > c.thrust_max + TOL;
            let torque = r.m.iter().any(|m| m.abs() > c.torque_max + TOL);
            let rate = r.omega_cmd.is_some_and(|w| w.iter().any(|x| x.abs() > c.rate_max + TOL));
            thrust || torque || rate
        })
        .count()
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (sum / n.max(1) as f64).sqrt()
}

/// First `t` with `distance < radius` for every sample in `[t, t + dwell]`.
/// The dwell has to fit inside the log.
pub fn time_to_target(samples: &[(f64, f64)], radius: f64, dwell: f64) -> Option<f64> {
    let mut entered: Option<f64> = None;
    for &(t, d) in samples {
        if d < radius {
            let t0 = *entered.get_or_insert(t);
            if t - t0 >= dwell - 1e-9 {
                return Some(t0);
            }
        } else {
            entered = None;
        }
    }
    None
}

/// Scores one log. `keep_in_after` drops the initial transient from the
/// keep-in tilt statistic.
pub fn compute_metrics(log: &SimLog, c: &ConstraintConfig, radius: f64, dwell: f64, keep_in_after: f64) -> Result<RunMetrics> {
    let recs = &log.records;
    let last = recs.last().ok_or_else(|| Error::Config("cannot score an empty log".into()))?;
    let target = log.target.position;
    let dist = |r: &[f64; 3]| (Vector3::from(*r) - target).norm();
    let samples: Vec<(f64, f64)> = recs.iter().map(|r| (r.t, dist(&r.r))).collect();
    let ttt = time_to_target(&samples, radius, dwell);
    let replans = log.replan_times();
    let max_tilt_keep_in =
        recs.iter().filter(|r| r.keep_in_active && r.t >= keep_in_after).map(|r| r.tilt).fold(None, |a: Option<f64>, t| Some(a.map_or(t, |a| a.max(t))));
    Ok(RunMetrics {
        attitude_rmse: rms(recs.iter().map(|r| r.att_err)),
        velocity_rmse: rms(recs.iter().map(|r| r.vel_err)),
        position_rmse: rms(recs.iter().map(|r| r.pos_err)),
        thrust_rmse: rms(recs.iter().map(|r| r.f - r.f_ref)),
        torque_rmse: rms(recs.iter().map(|r| (Vector3::from(r.m) - Vector3::from(r.m_ref)).norm())),
        time_to_target: ttt,
        reached: ttt.is_some(),
        final_distance: dist(&last.r),
        replans: replans.len(),
        first_replan: replans.first().copied(),
        max_l1_slack: recs.iter().map(|r| r.slack_l1).fold(0.0, f64::max),
        solver_faults: log.fault_count(),
        max_tilt_keep_in,
        input_violations: input_violations(log, c),
        solve_time: log.total_solve_time(),
        assembly_time: recs.iter().map(|r| r.assembly_time).sum(),
    })
}
