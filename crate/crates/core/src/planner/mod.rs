//! Descent planning: the one-piece continuation solve, the piecewise
//! sequence of short segments, control recovery by re-trimming the
//! impaired aircraft at every node, and an independent validation pass.

mod scenario;

pub use scenario::{
    EnvelopeMode, FailureFile, PointFile, Runway, Scenario, ScenarioConfig, ScenarioFile, WeightsFile,
};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::collocation::CollocationGrid;
use crate::error::Result;
use crate::nlpsolve::{self, SolveStatus, SolverOptions};
use crate::ocp::{dynamics_rhs, initial_guess, warm_start, CondensedNlp, PhaseSolution, PlannerProblem, Proximity, TerminalCondition};
use crate::trim::{solve_trim, TrimGuess, TrimOptions, TrimSolution, TrimTarget};

/// Constraint violation below which a solve counts as feasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    OnePiece,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Ok,
    /// A later continuation stage failed; an earlier feasible stage is returned.
    Degraded,
    Infeasible,
    /// Planned, but control recovery failed at one or more nodes.
    Inconsistent,
}

/// One solved phase: the whole descent in one-piece mode, one segment in
/// piecewise mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Segment {
    /// Start time on the trajectory clock, s.
    pub t0: f64,
    pub solution: PhaseSolution,
    pub status: SolveStatus,
    pub violation: f64,
    pub kkt: f64,
    pub iterations: usize,
    /// Control-effort cost, excluding any proximity term.
    pub cost: f64,
    pub planning_time: f64,
    pub retried: bool,
    /// Altitude of the envelope used for this solve, m.
    pub envelope_altitude: f64,
}

impl Segment {
    pub fn nodes(&self) -> usize {
        self.solution.len()
    }

    pub fn traverse_time(&self) -> f64 {
        self.solution.tf
    }

    pub fn grid(&self) -> CollocationGrid {
        CollocationGrid::new(self.nodes()).expect("segment grids have at least two nodes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub nodes: usize,
    pub status: SolveStatus,
    pub feasible: bool,
    pub cost: f64,
    pub violation: f64,
    pub kkt: f64,
    pub iterations: usize,
    pub planning_time: f64,
}

/// Trim data recovered at one node, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveredTrim {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub throttle: f64,
    pub elevator: f64,
    pub aileron: f64,
    pub rudder: f64,
    pub residual: f64,
}

impl From<&TrimSolution> for RecoveredTrim {
    fn from(s: &TrimSolution) -> Self {
        Self {
            alpha: s.state.alpha,
            beta: s.state.beta,
            phi: s.state.phi,
            theta: s.state.theta,
            p: s.state.p,
            q: s.state.q,
            r: s.state.r,
            throttle: s.controls.throttle,
            elevator: s.controls.elevator,
            aileron: s.controls.aileron,
            rudder: s.controls.rudder,
            residual: s.residual,
        }
    }
}

impl RecoveredTrim {
    /// Yaw rate implied by the body rates and attitude.
    pub fn implied_psi_dot(&self) -> f64 {
        (self.q * self.phi.sin() + self.r * self.phi.cos()) / self.theta.cos()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub segment: usize,
    pub t: f64,
    /// `(x, y, z, psi)`.
    pub state: [f64; 4],
    /// `(V, gamma, psi_dot)`.
    pub control: [f64; 3],
    pub trim: Option<RecoveredTrim>,
    pub trim_error: Option<String>,
    pub trim_time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: PlanMode,
    pub status: PlanStatus,
    pub segments: Vec<Segment>,
    /// Continuation stages (one-piece mode only).
    pub stages: Vec<StageReport>,
    pub nodes: Vec<NodeRecord>,
    pub planning_time: f64,
    pub recovery_time: f64,
}

impl Trajectory {
    pub fn cost(&self) -> f64 {
        self.segments.iter().map(|s| s.cost).sum()
    }

    pub fn traverse_time(&self) -> f64 {
        self.segments.iter().map(|s| s.traverse_time()).sum()
    }

    pub fn total_nodes(&self) -> usize {
        self.segments.iter().map(|s| s.nodes()).sum()
    }

    pub fn final_state(&self) -> Option<[f64; 4]> {
        self.segments.last().map(|s| s.solution.final_state())
    }

    /// Interpolated `(t, state, control)` with `per_node` samples per
    /// collocation interval of each segment; segment joins appear once.
    pub fn dense(&self, per_node: usize) -> Vec<(f64, [f64; 4], [f64; 3])> {
        let mut out = Vec::new();
        for (k, seg) in self.segments.iter().enumerate() {
            let grid = seg.grid();
            let samples = seg.solution.sample(&grid, per_node.max(1) * seg.nodes() + 1);
            let skip = usize::from(k > 0);
            out.extend(samples.into_iter().skip(skip).map(|(t, s, u)| (seg.t0 + t, s, u)));
        }
        out
    }

    fn build_nodes(&mut self) {
        self.nodes.clear();
        for (k, seg) in self.segments.iter().enumerate() {
            let grid = seg.grid();
            let times = seg.solution.times(&grid);
            for i in 0..seg.nodes() {
                self.nodes.push(NodeRecord {
                    segment: k,
                    t: seg.t0 + times[i],
                    state: seg.solution.state(i),
                    control: seg.solution.control(i),
                    trim: None,
                    trim_error: None,
                    trim_time: 0.0,
                });
            }
        }
    }
}

fn solver_options(c: &ScenarioConfig, budget: Option<f64>) -> SolverOptions {
    SolverOptions {
        max_iterations: c.max_iterations,
        time_budget: budget.map(Duration::from_secs_f64),
        ..SolverOptions::default()
    }
}

struct PhaseOutcome {
    solution: PhaseSolution,
    status: SolveStatus,
    violation: f64,
    kkt: f64,
    iterations: usize,
    feasible: bool,
}

fn solve_phase(problem: &PlannerProblem, grid: &CollocationGrid, guess: &PhaseSolution, opts: &SolverOptions) -> Result<PhaseOutcome> {
    let nlp = CondensedNlp::new(problem, grid, guess)?;
    let x0 = nlp.close_terminal_gap(nlp.encode(guess), 5);
    let res = nlpsolve::solve(&nlp, &x0, None, opts);
    let solution = nlp.solution(&res.x);
    log::debug!(
        "N = {}: {:?} after {} iterations, violation {:.2e}, kkt {:.2e}, {:.2?}",
        grid.len(),
        res.status,
        res.iterations,
        res.violation,
        res.kkt,
        res.wall_time
    );
    Ok(PhaseOutcome {
        feasible: res.violation <= FEASIBILITY_TOLERANCE && res.status != SolveStatus::Infeasible,
        status: res.status,
        violation: res.violation,
        kkt: res.kkt,
        iterations: res.iterations,
        solution,
    })
}

/// Smallest terrain margin over the dense samples used by [`validate`].
fn dense_terrain_margin(problem: &PlannerProblem, grid: &CollocationGrid, sol: &PhaseSolution) -> f64 {
    sol.sample(grid, RESAMPLE_FACTOR * sol.len() + 1)
        .iter()
        .map(|(_, st, _)| problem.terrain_margin(st[0], st[1], st[2]))
        .fold(f64::INFINITY, f64::min)
}

const BUFFER_ROUNDS: usize = 4;

/// Re-solves with a growing terrain buffer while the terrain dips into the
/// clearance between collocation points. Keeps the last feasible outcome.
fn enforce_dense_clearance(
    problem: &mut PlannerProblem,
    grid: &CollocationGrid,
    mut out: PhaseOutcome,
    opts: &SolverOptions,
) -> Result<PhaseOutcome> {
    for _ in 0..BUFFER_ROUNDS {
        if !out.feasible {
            break;
        }
        let m = dense_terrain_margin(problem, grid, &out.solution);
        if m >= 0.0 {
            break;
        }
        problem.terrain_buffer += 1.5 * -m + 1.0;
        log::info!(
            "N = {}: terrain dips {:.1} m into the clearance between points, buffer now {:.1} m",
            grid.len(),
            -m,
            problem.terrain_buffer
        );
        let retry = solve_phase(problem, grid, &out.solution, opts)?;
        if !retry.feasible {
            break;
        }
        out = PhaseOutcome {
            iterations: out.iterations + retry.iterations,
            ..retry
        };
    }
    Ok(out)
}

fn base_problem(s: &Scenario, initial: [f64; 4], terminal: TerminalCondition) -> Result<PlannerProblem> {
    let c = &s.config;
    let envelope = s.envelope_for(-initial[2]);
    let mut p = PlannerProblem::new(initial, terminal, envelope, s.terrain.clone(), c.clearance)?;
    p.weights = c.weights;
    p.sdf_margin = c.envelope_margin;
    Ok(p)
}

fn start_state(c: &ScenarioConfig) -> [f64; 4] {
    [c.start[0], c.start[1], -c.start[2], c.start[3]]
}

fn runway_terminal(c: &ScenarioConfig) -> TerminalCondition {
    TerminalCondition {
        position: Some([c.runway.x, c.runway.y]),
        z: Some(-c.runway.h),
        psi: c.runway.psi,
    }
}

/// Solves the whole descent as one phase on each grid of the continuation
/// schedule in turn, each stage seeded by interpolating the previous one.
pub fn plan_one_piece(s: &Scenario) -> Result<Trajectory> {
    s.validate()?;
    let c = &s.config;
    let start = Instant::now();
    let mut problem = base_problem(s, start_state(c), runway_terminal(c))?;
    let opts = solver_options(c, c.stage_time_budget);
    let mut stages = Vec::new();
    let mut best: Option<(PhaseOutcome, f64, f64)> = None;
    let mut attempted: Option<(PhaseOutcome, f64, f64)> = None;
    let mut previous: Option<(PhaseSolution, CollocationGrid)> = None;
    let mut failed = false;
    for &n in &c.schedule {
        let t = Instant::now();
        let grid = CollocationGrid::new(n)?;
        let guess = match &previous {
            None => initial_guess(&problem, &grid)?,
            Some((sol, g)) => warm_start(sol, g, &grid),
        };
        let mut out = solve_phase(&problem, &grid, &guess, &opts)?;
        if Some(&n) == c.schedule.last() {
            out = enforce_dense_clearance(&mut problem, &grid, out, &opts)?;
        }
        let elapsed = t.elapsed().as_secs_f64();
        let cost = out.solution.control_cost(&problem, &grid);
        stages.push(StageReport {
            nodes: n,
            status: out.status,
            feasible: out.feasible,
            cost,
            violation: out.violation,
            kkt: out.kkt,
            iterations: out.iterations,
            planning_time: elapsed,
        });
        log::info!("stage N = {n}: cost {cost:.3}, {:?}, {:.1} s", out.status, elapsed);
        if !out.feasible {
            failed = true;
            attempted = Some((out, cost, elapsed));
            break;
        }
        previous = Some((out.solution.clone(), grid));
        best = Some((out, cost, elapsed));
    }
    let status = match (&best, failed) {
        (Some(_), false) => PlanStatus::Ok,
        (Some(_), true) => PlanStatus::Degraded,
        (None, _) => PlanStatus::Infeasible,
    };
    let (out, cost, elapsed) = best.or(attempted).expect("at least one stage ran");
    let planning_time = start.elapsed().as_secs_f64();
    let segment = Segment {
        t0: 0.0,
        solution: out.solution,
        status: out.status,
        violation: out.violation,
        kkt: out.kkt,
        iterations: out.iterations,
        cost,
        planning_time: elapsed,
        retried: false,
        envelope_altitude: problem.envelope.grid.altitude,
    };
    let mut traj = Trajectory {
        mode: PlanMode::OnePiece,
        status,
        segments: vec![segment],
        stages,
        nodes: Vec::new(),
        planning_time,
        recovery_time: 0.0,
    };
    traj.build_nodes();
    Ok(traj)
}

/// Solves the descent as a chain of short segments, each losing a fixed
/// altitude while ending as close to the runway as it can; the last one
/// meets the runway conditions.
pub fn plan_piecewise(s: &Scenario) -> Result<Trajectory> {
    s.validate()?;
    let c = &s.config;
    let start = Instant::now();
    let count = c.segment_count();
    let runway = [c.runway.x, c.runway.y];
    let mut state = start_state(c);
    let mut t0 = 0.0;
    let mut segments = Vec::with_capacity(count);
    let mut weight = c.proximity_weight;
    let mut status = PlanStatus::Ok;
    let opts = solver_options(c, None);

    for k in 0..count {
        let t = Instant::now();
        let last = k + 1 == count;
        let terminal = if last {
            runway_terminal(c)
        } else {
            TerminalCondition {
                position: None,
                z: Some(-(c.start[2] - (k + 1) as f64 * c.segment_drop)),
                psi: None,
            }
        };
        let mut problem = base_problem(s, state, terminal)?;
        if !last {
            let w = match weight {
                Some(w) => w,
                None => {
                    let w = calibrate_proximity(&problem, c.segment_nodes, runway)?;
                    weight = Some(w);
                    w
                }
            };
            problem.proximity = Some(Proximity { target: runway, weight: w });
        }
        let mut outcome = None;
        for n in [c.segment_nodes, 2 * c.segment_nodes] {
            let grid = CollocationGrid::new(n)?;
            problem.terrain_buffer = 0.0;
            let attempt = initial_guess(&problem, &grid)
                .and_then(|g| solve_phase(&problem, &grid, &g, &opts))
                .and_then(|out| enforce_dense_clearance(&mut problem, &grid, out, &opts));
            match attempt {
                Ok(out) if out.feasible => {
                    outcome = Some((out, grid));
                    break;
                }
                Ok(out) => {
                    log::warn!("segment {k}: {n}-node solve ended {:?}, violation {:.2e}", out.status, out.violation);
                    outcome = Some((out, grid));
                }
                Err(e) => log::warn!("segment {k}: {n}-node solve failed: {e}"),
            }
        }
        let Some((out, grid)) = outcome else {
            status = PlanStatus::Infeasible;
            break;
        };
        let feasible = out.feasible;
        let seg = Segment {
            t0,
            cost: out.solution.control_cost(&problem, &grid),
            status: out.status,
            violation: out.violation,
            kkt: out.kkt,
            iterations: out.iterations,
            planning_time: t.elapsed().as_secs_f64(),
            retried: grid.len() != c.segment_nodes,
            envelope_altitude: problem.envelope.grid.altitude,
            solution: out.solution,
        };
        t0 += seg.traverse_time();
        state = seg.solution.final_state();
        segments.push(seg);
        if !feasible {
            status = PlanStatus::Infeasible;
            break;
        }
    }
    let mut traj = Trajectory {
        mode: PlanMode::Piecewise,
        status,
        segments,
        stages: Vec::new(),
        nodes: Vec::new(),
        planning_time: start.elapsed().as_secs_f64(),
        recovery_time: 0.0,
    };
    traj.build_nodes();
    Ok(traj)
}

/// Weight that makes the proximity term at the first segment's start
/// distance match the control effort of that segment's initial guess.
fn calibrate_proximity(problem: &PlannerProblem, nodes: usize, target: [f64; 2]) -> Result<f64> {
    let grid = CollocationGrid::new(nodes)?;
    let guess = initial_guess(problem, &grid)?;
    let effort = guess.control_cost(problem, &grid);
    let d2 = (problem.initial[0] - target[0]).powi(2) + (problem.initial[1] - target[1]).powi(2);
    Ok(effort / d2.max(1.0))
}

/// Re-trims the impaired aircraft at every node, warm-starting each node
/// from the previous one.
pub fn recover_controls(traj: &mut Trajectory, s: &Scenario) {
    let start = Instant::now();
    let opts = TrimOptions::default();
    let mut previous: Option<TrimGuess> = None;
    let mut failures = 0;
    for node in &mut traj.nodes {
        let t = Instant::now();
        let target = TrimTarget {
            h: -node.state[2],
            v: node.control[0],
            gamma: node.control[1],
            psi_dot: node.control[2],
        };
        let mut result = Err(crate::trim::TrimFailure::Invalid("not attempted".into()));
        for guess in previous.iter().copied().chain(std::iter::once(TrimGuess::nominal(&target))) {
            result = solve_trim(&target, &guess, &s.model, &s.config.failure, &opts);
            if result.is_ok() {
                break;
            }
        }
        match result {
            Ok(sol) => {
                previous = Some(TrimGuess::from_solution(&sol));
                node.trim = Some(RecoveredTrim::from(&sol));
                node.trim_error = None;
            }
            Err(e) => {
                failures += 1;
                node.trim = None;
                node.trim_error = Some(e.to_string());
            }
        }
        node.trim_time = t.elapsed().as_secs_f64();
    }
    if failures > 0 && traj.status != PlanStatus::Infeasible {
        traj.status = PlanStatus::Inconsistent;
    }
    traj.recovery_time = start.elapsed().as_secs_f64();
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Over `per_node` samples per collocation interval.
    pub min_terrain_margin: f64,
    /// Raw signed distance (cells) at the nodes; negative means outside.
    pub min_envelope_distance: f64,
    pub envelope_violations: usize,
    /// Scaled as in [`PhaseSolution::max_defect`].
    pub max_defect: f64,
    /// Distance between the planned and replayed final positions, m.
    /// Gates `passed` in one-piece mode only: chained short segments
    /// accumulate interpolation error at every join.
    pub replay_error: f64,
    /// Horizontal distance of the planned final point from the runway, m.
    pub runway_miss: f64,
    pub final_altitude_error: f64,
    pub trim_failures: usize,
    /// Largest `|psi_dot(q, r, phi, theta) - psi_dot|` over recovered nodes.
    pub max_turn_rate_mismatch: f64,
    pub passed: bool,
}

pub const RESAMPLE_FACTOR: usize = 10;
/// Position tolerance at the runway, m.
pub const RUNWAY_TOLERANCE: f64 = 10.0;
pub const REPLAY_TOLERANCE: f64 = 50.0;

pub fn validate(traj: &Trajectory, s: &Scenario) -> ValidationReport {
    let c = &s.config;
    let mut min_margin = f64::INFINITY;
    for (_, st, _) in traj.dense(RESAMPLE_FACTOR) {
        min_margin = min_margin.min(s.terrain.clearance_margin(st[0], st[1], -st[2], c.clearance));
    }
    let mut min_sdf = f64::INFINITY;
    let mut violations = 0;
    for node in &traj.nodes {
        let env = s.envelope_for(-traj.segments[node.segment].solution.states[2][0]);
        let [v, g, w] = node.control;
        min_sdf = min_sdf.min(env.signed_distance(v, g, w));
        if !env.contains(v, g, w) {
            violations += 1;
        }
    }
    let max_defect = traj
        .segments
        .iter()
        .map(|seg| seg.solution.max_defect(&seg.grid()))
        .fold(0.0, f64::max);
    let replay_error = match (replay(traj), traj.final_state()) {
        (Some(r), Some(f)) => ((r[0] - f[0]).powi(2) + (r[1] - f[1]).powi(2) + (r[2] - f[2]).powi(2)).sqrt(),
        _ => f64::INFINITY,
    };
    let (runway_miss, final_altitude_error) = match traj.final_state() {
        Some(f) => (
            ((f[0] - c.runway.x).powi(2) + (f[1] - c.runway.y).powi(2)).sqrt(),
            (-f[2] - c.runway.h).abs(),
        ),
        None => (f64::INFINITY, f64::INFINITY),
    };
    let trim_failures = traj.nodes.iter().filter(|n| n.trim_error.is_some()).count();
    let max_turn_rate_mismatch = traj
        .nodes
        .iter()
        .filter_map(|n| n.trim.map(|t| (t.implied_psi_dot() - n.control[2]).abs()))
        .fold(0.0, f64::max);
    let passed = traj.status == PlanStatus::Ok
        && min_margin >= 0.0
        && violations == 0
        && max_defect <= FEASIBILITY_TOLERANCE
        && (traj.mode == PlanMode::Piecewise || replay_error <= REPLAY_TOLERANCE)
        && runway_miss <= RUNWAY_TOLERANCE
        && trim_failures == 0;
    ValidationReport {
        min_terrain_margin: min_margin,
        min_envelope_distance: min_sdf,
        envelope_violations: violations,
        max_defect,
        replay_error,
        runway_miss,
        final_altitude_error,
        trim_failures,
        max_turn_rate_mismatch,
        passed,
    }
}

/// Final state from fixed-step RK4 on the kinematics under the
/// interpolated controls, starting at the planned initial state and
/// running through every segment.
pub fn replay(traj: &Trajectory) -> Option<[f64; 4]> {
    let first = traj.segments.first()?;
    let mut x = first.solution.state(0);
    for seg in &traj.segments {
        let grid = seg.grid();
        let tf = seg.solution.tf;
        let steps = (20 * seg.nodes()).max(200);
        let h = tf / steps as f64;
        let u_at = |t: f64| -> [f64; 3] {
            let tau = 2.0 * t / tf - 1.0;
            std::array::from_fn(|c| grid.interpolate_control(&seg.solution.controls[c], tau))
        };
        let f = |t: f64, s: &[f64; 4]| dynamics_rhs(s, &u_at(t));
        for k in 0..steps {
            let t = k as f64 * h;
            let k1 = f(t, &x);
            let k2 = f(t + 0.5 * h, &std::array::from_fn(|j| x[j] + 0.5 * h * k1[j]));
            let k3 = f(t + 0.5 * h, &std::array::from_fn(|j| x[j] + 0.5 * h * k2[j]));
            let k4 = f(t + h, &std::array::from_fn(|j| x[j] + h * k3[j]));
            for j in 0..4 {
                x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
    }
    Some(x)
}
