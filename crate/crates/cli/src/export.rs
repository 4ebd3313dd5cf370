//! Plot-ready exports. Headers carry the unit of every column.

use mfe_descent::envelope::ManeuveringFlightEnvelope;
use mfe_descent::nlpsolve::SolveStatus;
use mfe_descent::planner::{PlanMode, PlanStatus, StageReport, Trajectory, ValidationReport, RESAMPLE_FACTOR};
use mfe_descent::terrain::TerrainModel;
use mfe_descent::units::mps_to_kt;
use serde::{Deserialize, Serialize};

pub const TRAJECTORY_HEADER: &str = "segment,t_s,x_m,y_m,h_m,psi_deg,v_kt,gamma_deg,psi_dot_deg_s,\
alpha_deg,beta_deg,phi_deg,theta_deg,p_deg_s,q_deg_s,r_deg_s,throttle_frac,elevator_deg,aileron_deg,rudder_deg";

/// One row per collocation node with the recovered trim; trim columns are
/// empty where recovery failed.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for n in &traj.nodes {
        let [x, y, z, psi] = n.state;
        let [v, g, w] = n.control;
        s.push_str(&format!(
            "{},{:.6},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6}",
            n.segment,
            n.t,
            x,
            y,
            -z,
            psi.to_degrees(),
            mps_to_kt(v),
            g.to_degrees(),
            w.to_degrees()
        ));
        match &n.trim {
            Some(t) => {
                let deg = [t.alpha, t.beta, t.phi, t.theta, t.p, t.q, t.r].map(f64::to_degrees);
                for d in deg {
                    s.push_str(&format!(",{d:.6}"));
                }
                s.push_str(&format!(
                    ",{:.6},{:.6},{:.6},{:.6}",
                    t.throttle,
                    t.elevator.to_degrees(),
                    t.aileron.to_degrees(),
                    t.rudder.to_degrees()
                ));
            }
            None => s.push_str(&",".repeat(11)),
        }
        s.push('\n');
    }
    s
}

/// Interpolated path between nodes, for plotting.
pub fn dense_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t_s,x_m,y_m,h_m,psi_deg,v_kt,gamma_deg,psi_dot_deg_s\n");
    for (t, [x, y, z, psi], [v, g, w]) in traj.dense(RESAMPLE_FACTOR) {
        s.push_str(&format!(
            "{:.6},{:.4},{:.4},{:.4},{:.6},{:.6},{:.6},{:.6}\n",
            t,
            x,
            y,
            -z,
            psi.to_degrees(),
            mps_to_kt(v),
            g.to_degrees(),
            w.to_degrees()
        ));
    }
    s
}

/// Boundary of one flight-path slice in `(V, psi_dot)`.
pub fn slice_csv(env: &ManeuveringFlightEnvelope, gamma: f64) -> String {
    let mut s = String::from("contour,v_kt,psi_dot_deg_s\n");
    for (c, poly) in env.slice_boundary(gamma).iter().enumerate() {
        for &(v, w) in poly.iter().chain(poly.first()) {
            s.push_str(&format!("{},{:.4},{:.4}\n", c, mps_to_kt(v), w.to_degrees()));
        }
    }
    s
}

pub fn raster_csv(terrain: &TerrainModel, nx: usize, ny: usize) -> String {
    let mut s = String::from("x_m,y_m,height_m\n");
    for (x, y, h) in terrain.raster(nx, ny) {
        s.push_str(&format!("{x:.3},{y:.3},{h:.6}\n"));
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: usize,
    pub nodes: usize,
    pub status: SolveStatus,
    pub retried: bool,
    pub planning_time_s: f64,
    pub traverse_time_s: f64,
    pub cost: f64,
    pub violation: f64,
    pub end_h_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanSummary {
    pub mode: PlanMode,
    pub status: PlanStatus,
    pub total_planning_time_s: f64,
    pub total_traverse_time_s: f64,
    pub total_numerical_cost: f64,
    pub nodes: usize,
    pub segments: usize,
    /// Nominal nodes per segment; piecewise mode only.
    pub nodes_per_segment: Option<usize>,
    pub control_recovery_time_s: f64,
    pub max_node_trim_time_s: f64,
    pub stages: Vec<StageReport>,
    pub segment_diagnostics: Vec<SegmentSummary>,
    pub validation: ValidationReport,
}

impl PlanSummary {
    pub fn new(traj: &Trajectory, nodes_per_segment: usize, validation: ValidationReport) -> Self {
        Self {
            mode: traj.mode,
            status: traj.status,
            total_planning_time_s: traj.planning_time,
            total_traverse_time_s: traj.traverse_time(),
            total_numerical_cost: traj.cost(),
            nodes: traj.total_nodes(),
            segments: traj.segments.len(),
            nodes_per_segment: (traj.mode == PlanMode::Piecewise).then_some(nodes_per_segment),
            control_recovery_time_s: traj.recovery_time,
            max_node_trim_time_s: traj.nodes.iter().map(|n| n.trim_time).fold(0.0, f64::max),
            stages: traj.stages.clone(),
            segment_diagnostics: traj
                .segments
                .iter()
                .enumerate()
                .map(|(k, s)| SegmentSummary {
                    index: k,
                    nodes: s.nodes(),
                    status: s.status,
                    retried: s.retried,
                    planning_time_s: s.planning_time,
                    traverse_time_s: s.traverse_time(),
                    cost: s.cost,
                    violation: s.violation,
                    end_h_m: -s.solution.final_state()[2],
                })
                .collect(),
            validation,
        }
    }
}
