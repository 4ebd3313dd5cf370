//! Acceptance criteria shared by the library and command-line suites. Each
//! check returns one [`Verdict`]; the caller decides how the inputs (plans,
//! envelopes) are produced.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfe_descent::collocation::{differentiation_matrix, lgr_nodes, lgr_weights};
use mfe_descent::envelope::ManeuveringFlightEnvelope;
use mfe_descent::flightdyn::{state_derivative, AircraftModel, FailureSpec};
use mfe_descent::planner::{
    validate, PlanMode, PlanStatus, Scenario, ScenarioFile, Trajectory, REPLAY_TOLERANCE, RUNWAY_TOLERANCE,
};
use mfe_descent::trim::{
    solve_trim, theta_from_constraint, TrimGuess, TrimOptions, TrimTarget, ALPHA_MARGIN, MAX_BANK, MAX_FLIGHT_PATH,
    MAX_SIDESLIP, TRIM_TOLERANCE,
};

pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    fn new(id: u32, name: &'static str, passed: bool, detail: String, start: Instant) -> Self {
        Self {
            id,
            name,
            passed,
            detail,
            elapsed: start.elapsed(),
        }
    }
}

/// Prints one line per criterion; true when all passed.
pub fn report(verdicts: &[Verdict]) -> bool {
    for v in verdicts {
        println!(
            "criterion {} {}: {} ({}; {:.1} s)",
            v.id,
            v.name,
            if v.passed { "PASS" } else { "FAIL" },
            v.detail,
            v.elapsed.as_secs_f64()
        );
    }
    verdicts.iter().all(|v| v.passed)
}

pub fn benchmark_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmark")
}

pub fn benchmark_file() -> ScenarioFile {
    ScenarioFile::load(benchmark_dir().join("scenario.json")).expect("bundled benchmark scenario")
}

pub fn benchmark_scenario() -> Scenario {
    benchmark_file().resolve(benchmark_dir()).expect("bundled benchmark resolves")
}

/// Quadrature and differentiation exactness on monomials.
pub fn collocation_exactness() -> Verdict {
    let start = Instant::now();
    let mut worst_q: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for n in [2usize, 3, 5, 10, 20, 40] {
        let x = lgr_nodes(n).unwrap();
        let w = lgr_weights(n).unwrap();
        for k in 0..=(2 * n - 2) {
            let exact = if k % 2 == 0 { 2.0 / (k + 1) as f64 } else { 0.0 };
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
            worst_q = worst_q.max((q - exact).abs());
        }
        let d = differentiation_matrix(n).unwrap();
        let mut support = x.clone();
        support.push(1.0);
        for k in 0..=n {
            for i in 0..n {
                let approx: f64 = (0..=n).map(|j| d[(i, j)] * support[j].powi(k as i32)).sum();
                let exact = if k == 0 { 0.0 } else { k as f64 * x[i].powi(k as i32 - 1) };
                worst_d = worst_d.max((approx - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    let x2 = lgr_nodes(2).unwrap();
    let w2 = lgr_weights(2).unwrap();
    let analytic = (x2[0] + 1.0).abs() < 1e-15
        && (x2[1] - 1.0 / 3.0).abs() < 1e-15
        && (w2[0] - 0.5).abs() < 1e-15
        && (w2[1] - 1.5).abs() < 1e-15;
    let elapsed_ok = start.elapsed() < Duration::from_secs(1);
    Verdict::new(
        1,
        "collocation exactness",
        worst_q <= 1e-12 && worst_d <= 1e-10 && analytic && elapsed_ok,
        format!("quadrature error {worst_q:.1e}, differentiation error {worst_d:.1e}, N=2 analytic {analytic}"),
        start,
    )
}

/// Random targets inside `env`, trimmed and re-verified through an
/// independent state-derivative call.
pub fn trim_fidelity(env: &ManeuveringFlightEnvelope, model: &AircraftModel, count: usize) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let g = &env.grid;
    let feasible: Vec<usize> = (0..g.len()).filter(|&k| env.cell(k).is_some()).collect();
    let opts = TrimOptions::default();
    let cfg = &model.config;
    let (mut accepted, mut worst, mut bound_failures, mut sampled) = (0, 0.0f64, 0, 0);
    while sampled < count && !feasible.is_empty() {
        let k = feasible[rng.gen_range(0..feasible.len())];
        let base = g.target(k);
        let target = TrimTarget {
            h: base.h,
            v: base.v + rng.gen_range(-0.5..0.5) * g.v.step,
            gamma: (base.gamma + rng.gen_range(-0.5..0.5) * g.gamma.step).clamp(-MAX_FLIGHT_PATH, MAX_FLIGHT_PATH),
            psi_dot: base.psi_dot + rng.gen_range(-0.5..0.5) * g.psi_dot.step,
        };
        if !env.contains(target.v, target.gamma, target.psi_dot) {
            continue;
        }
        sampled += 1;
        let guess = env.cell(k).unwrap().guess();
        let Ok(sol) = solve_trim(&target, &guess, model, &env.failure, &opts) else {
            continue;
        };
        accepted += 1;
        let d = state_derivative(&sol.state, &sol.controls, model, &env.failure).unwrap();
        worst = worst.max(d.wind.amax());
        let s = &sol.state;
        let u = &sol.controls;
        let tol = 1e-9;
        let ok = s.alpha >= model.aero.alpha_min + ALPHA_MARGIN - tol
            && s.alpha <= model.aero.alpha_max - ALPHA_MARGIN + tol
            && s.phi.abs() <= MAX_BANK + tol
            && s.beta.abs() <= MAX_SIDESLIP + tol
            && target.gamma.abs() <= MAX_FLIGHT_PATH + tol
            && u.within_limits(cfg, tol);
        if !ok {
            bound_failures += 1;
        }
    }
    let fast = start.elapsed() < Duration::from_secs(60);
    Verdict::new(
        2,
        "trim fidelity",
        sampled == count && accepted * 2 >= count && worst <= TRIM_TOLERANCE && bound_failures == 0 && fast,
        format!("{accepted}/{sampled} trims accepted, worst |xdot| {worst:.1e}, bound violations {bound_failures}"),
        start,
    )
}

/// The rate-of-climb constraint at zero sideslip and bank is theta = alpha + gamma.
pub fn wings_level_identity(pairs: usize) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let alpha = rng.gen_range(-10f64..20.0).to_radians();
        let gamma = rng.gen_range(-5f64..5.0).to_radians();
        let theta = theta_from_constraint(alpha, 0.0, 0.0, gamma).unwrap();
        worst = worst.max((theta - (alpha + gamma)).abs());
    }
    let fast = start.elapsed() < Duration::from_secs(5);
    Verdict::new(
        3,
        "wings-level identity",
        worst <= 1e-12 && fast,
        format!("{pairs} pairs, worst error {worst:.1e}"),
        start,
    )
}

/// Envelopes for the subset check at one altitude.
pub struct EnvelopeSet {
    pub unfailed: ManeuveringFlightEnvelope,
    pub jam10: ManeuveringFlightEnvelope,
    pub jam20: ManeuveringFlightEnvelope,
}

fn violations(inner: &ManeuveringFlightEnvelope, outer: &ManeuveringFlightEnvelope) -> usize {
    inner.mask().iter().zip(outer.mask()).filter(|(&a, b)| a && !b).count()
}

pub fn envelope_subsets(sets: &[EnvelopeSet], elapsed: Duration) -> Verdict {
    let start = Instant::now() - elapsed;
    let mut parts = Vec::new();
    let mut total = 0;
    for s in sets {
        let a = violations(&s.jam10, &s.unfailed);
        let b = violations(&s.jam20, &s.jam10);
        let c = violations(&s.jam20, &s.unfailed);
        total += a + b + c;
        parts.push(format!(
            "{:.0} m: feasible {}/{}/{}, jam10 outside unfailed {a}, jam20 outside jam10 {b}, jam20 outside unfailed {c}",
            s.unfailed.grid.altitude,
            s.unfailed.feasible_count(),
            s.jam10.feasible_count(),
            s.jam20.feasible_count()
        ));
    }
    Verdict::new(
        4,
        "envelope subsets",
        total == 0 && elapsed < Duration::from_secs(600),
        parts.join("; "),
        start,
    )
}

/// Plans of the benchmark produced by whichever front end is under test.
pub struct BenchmarkRuns {
    pub scenario: Scenario,
    pub one_piece: Trajectory,
    pub piecewise: Trajectory,
    /// One-piece solve with the single-stage schedule `[20]`.
    pub cold: Trajectory,
    /// Wall time of planning plus control recovery for both modes.
    pub elapsed: Duration,
}

pub fn benchmark_feasibility(r: &BenchmarkRuns) -> Verdict {
    let start = Instant::now() - r.elapsed;
    let mut parts = Vec::new();
    let mut ok = r.elapsed < Duration::from_secs(15 * 60);
    for t in [&r.one_piece, &r.piecewise] {
        let v = validate(t, &r.scenario);
        let good = t.status == PlanStatus::Ok
            && v.min_terrain_margin >= 0.0
            && v.envelope_violations == 0
            && v.runway_miss <= RUNWAY_TOLERANCE
            && v.max_defect <= 1e-6;
        ok &= good;
        parts.push(format!(
            "{:?}: {:?}, margin {:.2} m, envelope violations {}, runway miss {:.2} m, defect {:.1e}",
            t.mode, t.status, v.min_terrain_margin, v.envelope_violations, v.runway_miss, v.max_defect
        ));
    }
    Verdict::new(5, "benchmark feasibility", ok, parts.join("; "), start)
}

pub fn optimality_ordering(r: &BenchmarkRuns) -> Verdict {
    let start = Instant::now();
    let (one, pw) = (r.one_piece.cost(), r.piecewise.cost());
    let ratio = pw / one;
    let cold = r.cold.cost();
    let worst_stage = r.one_piece.stages.iter().map(|s| s.cost).fold(f64::NEG_INFINITY, f64::max);
    let monotone = r.one_piece.stages.iter().all(|s| s.cost <= cold * (1.0 + 1e-9));
    Verdict::new(
        6,
        "optimality ordering",
        pw >= one && ratio <= 1.5 && monotone,
        format!(
            "one-piece {one:.3}, piecewise {pw:.3}, ratio {ratio:.4}; cold 20-node {cold:.3}, worst stage {worst_stage:.3}"
        ),
        start,
    )
}

/// Turn-rate round trip on the piecewise plan, and sideslip under the jam
/// wherever the healthy aircraft flies with none.
pub fn inverse_dynamics(r: &BenchmarkRuns) -> Verdict {
    let start = Instant::now();
    let s = &r.scenario;
    let opts = TrimOptions::default();
    let mut worst: f64 = 0.0;
    let (mut missing, mut compared, mut zero_beta_jammed) = (0, 0, 0);
    let mut healthy_prev: Option<TrimGuess> = None;
    for n in &r.piecewise.nodes {
        let Some(t) = n.trim else {
            missing += 1;
            continue;
        };
        worst = worst.max((t.implied_psi_dot() - n.control[2]).abs());
        let target = TrimTarget {
            h: -n.state[2],
            v: n.control[0],
            gamma: n.control[1],
            psi_dot: n.control[2],
        };
        let guess = healthy_prev.unwrap_or_else(|| TrimGuess::nominal(&target));
        if let Ok(h) = solve_trim(&target, &guess, &s.model, &FailureSpec::None, &opts) {
            healthy_prev = Some(TrimGuess::from_solution(&h));
            if h.state.beta.abs() < 1e-6 {
                compared += 1;
                if t.beta.abs() < 1e-6 {
                    zero_beta_jammed += 1;
                }
            }
        }
    }
    Verdict::new(
        7,
        "inverse-dynamics consistency",
        missing == 0 && worst <= 1e-7 && compared > 0 && zero_beta_jammed == 0,
        format!(
            "{} nodes, worst turn-rate mismatch {worst:.1e}, {compared} healthy zero-sideslip nodes, {zero_beta_jammed} without sideslip under the jam",
            r.piecewise.nodes.len()
        ),
        start,
    )
}

pub fn replay_check(r: &BenchmarkRuns) -> Verdict {
    let start = Instant::now();
    assert_eq!(r.one_piece.mode, PlanMode::OnePiece);
    let v = validate(&r.one_piece, &r.scenario);
    Verdict::new(
        8,
        "kinematic replay",
        v.replay_error <= REPLAY_TOLERANCE,
        format!("one-piece terminal replay error {:.3} m", v.replay_error),
        start,
    )
}

pub fn real_time_premise(r: &BenchmarkRuns) -> Verdict {
    let start = Instant::now();
    let segs = &r.piecewise.segments;
    let fast = segs.iter().filter(|s| s.planning_time < s.traverse_time()).count();
    let slowest = segs.iter().map(|s| s.planning_time).fold(0.0, f64::max);
    Verdict::new(
        9,
        "real-time premise",
        !segs.is_empty() && fast * 10 >= segs.len() * 9,
        format!("{fast}/{} segments planned faster than flown, slowest {slowest:.3} s", segs.len()),
        start,
    )
}
