use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{outer_error, ControllerKind, Guidance, TickOutput};
use crate::error::Result;
use crate::reference::Target;
use crate::vehicle::VehicleState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t: f64,
    pub r: [f64; 3],
    pub v: [f64; 3],
    pub attitude: [f64; 3],
    pub omega: [f64; 3],
}

/// One controller tick: measured state, reference, command and QP summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlRecord {
    pub t: f64,
    pub r: [f64; 3],
    pub v: [f64; 3],
    pub attitude: [f64; 3],
    pub omega: [f64; 3],
    pub r_ref: [f64; 3],
    pub v_ref: [f64; 3],
    pub pos_err: f64,
    pub vel_err: f64,
    pub att_err: f64,
    pub tilt: f64,
    pub f: f64,
    pub m: [f64; 3],
    pub f_ref: f64,
    pub m_ref: [f64; 3],
    /// Commanded body rate (cascaded controller only).
    pub omega_cmd: Option<[f64; 3]>,
    pub slack_keep_in: f64,
    pub slack_l1: f64,
    pub slack_momentum: f64,
    pub keep_in_active: bool,
    pub l1_active: bool,
    pub qp_count: usize,
    pub iterations: usize,
    /// Wall-clock seconds in QP solves this tick.
    pub solve_time: f64,
    pub assembly_time: f64,
    pub replanned: bool,
    pub fault: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Replan,
    SolverFault,
    IntegrationFault,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimLog {
    pub controller: ControllerKind,
    pub target: Target,
    pub records: Vec<ControlRecord>,
    pub truth: Vec<TruthSample>,
    pub events: Vec<Event>,
    pub aborted: Option<String>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl SimLog {
    pub fn new(controller: ControllerKind, target: Target) -> Self {
        Self { controller, target, records: Vec::new(), truth: Vec::new(), events: Vec::new(), aborted: None }
    }

    pub(super) fn push_truth(&mut self, t: f64, x: &VehicleState) {
        self.truth.push(TruthSample { t, r: arr(&x.pose.r), v: arr(&x.pose.v), attitude: arr(&x.pose.c.log()), omega: arr(&x.omega) });
    }

    pub(super) fn push_tick(&mut self, t: f64, x: &VehicleState, out: &TickOutput, guidance: &Guidance) -> Result<()> {
        let knot = guidance.traj.sample(t)?;
        let (err, _) = outer_error(&knot, x);
        let m_ref = guidance.torque_at(t)?;
        let max_of = |f: fn(&crate::mpc::MpcDiagnostics) -> f64| out.solves.iter().map(f).fold(0.0, f64::max);
        self.records.push(ControlRecord {
            t,
            r: arr(&x.pose.r),
            v: arr(&x.pose.v),
            attitude: arr(&x.pose.c.log()),
            omega: arr(&x.omega),
            r_ref: arr(&knot.r_r),
            v_ref: arr(&knot.v_r),
            pos_err: (x.pose.r - knot.r_r).norm(),
            vel_err: (x.pose.v - knot.v_r).norm(),
            att_err: err.c.log().norm(),
            tilt: x.pose.c.tilt(),
            f: out.wrench.thrust,
            m: arr(&out.wrench.torque),
            f_ref: knot.f_r,
            m_ref: arr(&m_ref),
            omega_cmd: out.omega_cmd.as_ref().map(arr),
            slack_keep_in: max_of(|d| d.slack_keep_in),
            slack_l1: max_of(|d| d.slack_l1),
            slack_momentum: max_of(|d| d.slack_momentum),
            keep_in_active: out.solves.iter().any(|d| d.keep_in_active),
            l1_active: out.solves.iter().any(|d| d.l1_active),
            qp_count: out.solves.len(),
            iterations: out.iterations,
            solve_time: out.solve_time,
            assembly_time: out.assembly_time,
            replanned: out.replanned,
            fault: out.fault,
        });
        if out.replanned {
            self.events.push(Event { t, kind: EventKind::Replan, detail: "l1 constraint active past the replan window".into() });
        }
        if out.fault {
            self.events.push(Event { t, kind: EventKind::SolverFault, detail: "QP did not converge; fallback command used".into() });
        }
        Ok(())
    }

    pub(super) fn abort(&mut self, t: f64, why: String) {
        self.events.push(Event { t, kind: EventKind::IntegrationFault, detail: why.clone() });
        self.aborted = Some(why);
    }

    pub fn total_solve_time(&self) -> f64 {
        self.records.iter().map(|r| r.solve_time).sum()
    }

    pub fn replan_times(&self) -> Vec<f64> {
        self.events.iter().filter(|e| e.kind == EventKind::Replan).map(|e| e.t).collect()
    }

    pub fn fault_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind == EventKind::SolverFault).count()
    }

    /// Controller-rate time series. Wall-clock columns are left out so the
    /// file is a pure function of the inputs; see [`Self::write_timing_csv`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "t,r_x,r_y,r_z,v_x,v_y,v_z,att_x,att_y,att_z,omega_x,omega_y,omega_z,r_ref_x,r_ref_y,r_ref_z,\
             pos_err,vel_err,att_err,tilt,f,m_x,m_y,m_z,f_ref,m_ref_x,m_ref_y,m_ref_z,omega_cmd_x,omega_cmd_y,omega_cmd_z,\
             slack_keep_in,slack_l1,slack_momentum,keep_in_active,l1_active,qp_count,iterations,replanned,fault"
        )?;
        for r in &self.records {
            let cmd = r.omega_cmd.map_or_else(|| ",,".to_string(), |c| format!("{},{},{}", c[0], c[1], c[2]));
            let head: Vec<String> = [r.t]
                .iter()
                .chain(&r.r)
                .chain(&r.v)
                .chain(&r.attitude)
                .chain(&r.omega)
                .chain(&r.r_ref)
                .chain(&[r.pos_err, r.vel_err, r.att_err, r.tilt, r.f])
                .chain(&r.m)
                .chain(&[r.f_ref])
                .chain(&r.m_ref)
                .map(|x| x.to_string())
                .collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                head.join(","),
                cmd,
                r.slack_keep_in,
                r.slack_l1,
                r.slack_momentum,
                r.keep_in_active as u8,
                r.l1_active as u8,
                r.qp_count,
                r.iterations,
                r.replanned as u8,
                r.fault as u8
            )?;
        }
        Ok(())
    }

    /// Per-tick wall-clock solve and assembly times.
    pub fn write_timing_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,solve_time,assembly_time")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.t, r.solve_time, r.assembly_time)?;
        }
        Ok(())
    }

    pub fn write_truth_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,r_x,r_y,r_z,v_x,v_y,v_z,att_x,att_y,att_z,omega_x,omega_y,omega_z")?;
        for s in &self.truth {
            let vals: Vec<String> =
                [s.r, s.v, s.attitude, s.omega].iter().flat_map(|a| a.iter()).map(|x| x.to_string()).collect();
            writeln!(w, "{},{}", s.t, vals.join(","))?;
        }
        Ok(())
    }
}
