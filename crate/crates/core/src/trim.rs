//! Steady manoeuvre trim for a target `(h, V, gamma, psi_dot)` and
//! stability / controllability classification of the result.
//!
//! Pitch attitude and body rates are eliminated analytically, leaving the
//! decision vector `(alpha, beta, phi, throttle, elevator, aileron, rudder)`.
//! A jammed surface is removed from the decision vector. The sum of squared
//! wind-axis derivatives is minimised by a bounded Gauss-Newton SQP whose
//! subproblems are solved by the dual active-set QP.

use nalgebra::{Complex, DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flightdyn::{
    apply_failure, linearize, state_derivative, AircraftModel, ControlVector, FailureSpec, FullState, InputMatrix,
    StateMatrix, Surface, WindState, NUM_CONTROLS, NUM_STATES,
};
use crate::nlpsolve::qp;

pub const MAX_BANK: f64 = 30.0 * std::f64::consts::PI / 180.0;
pub const MAX_FLIGHT_PATH: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Sideslip search range.
pub const MAX_SIDESLIP: f64 = 20.0 * std::f64::consts::PI / 180.0;
/// Accepted trims keep this far inside the aerodynamic alpha range so the
/// linearisation stencil stays valid.
pub const ALPHA_MARGIN: f64 = 1e-5;
pub const TRIM_TOLERANCE: f64 = 1e-7;
pub const STABILITY_TOLERANCE: f64 = 1e-9;

const NUM_DECISION: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimTarget {
    pub h: f64,
    pub v: f64,
    pub gamma: f64,
    pub psi_dot: f64,
}

impl TrimTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.v > 0.0) {
            return Err(Error::InvalidInput(format!("target airspeed must be positive, got {}", self.v)));
        }
        if !(self.gamma.abs() <= MAX_FLIGHT_PATH + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "target flight path angle {:.3} deg outside [-5, 5] deg",
                self.gamma.to_degrees()
            )));
        }
        if !self.psi_dot.is_finite() || !self.h.is_finite() {
            return Err(Error::InvalidInput("non-finite trim target".into()));
        }
        Ok(())
    }
}

/// `(alpha, beta, phi, throttle, elevator, aileron, rudder)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimGuess(pub [f64; NUM_DECISION]);

impl TrimGuess {
    /// A generic starting point: coordinated bank for the turn rate,
    /// moderate incidence and throttle.
    pub fn nominal(target: &TrimTarget) -> Self {
        let bank = (target.v * target.psi_dot / crate::units::G0).atan().clamp(-0.9 * MAX_BANK, 0.9 * MAX_BANK);
        TrimGuess([3f64.to_radians(), 0.0, bank, 0.5, 0.0, 0.0, 0.0])
    }

    pub fn from_solution(sol: &TrimSolution) -> Self {
        let s = &sol.state;
        let u = &sol.controls;
        TrimGuess([s.alpha, s.beta, s.phi, u.throttle, u.elevator, u.aileron, u.rudder])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Stable,
    UnstableControllable,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimSolution {
    pub target: TrimTarget,
    pub state: FullState,
    /// Controls as seen by the airframe (failure applied).
    pub controls: ControlVector,
    /// `||x_dot||_inf` over the eight wind-axis derivatives.
    pub residual: f64,
    pub classification: Classification,
    /// Eigenvalues of the state matrix as `(re, im)`.
    pub eigenvalues: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InfeasibleReason {
    ResidualStalled { residual: f64 },
    BoundLocked { residual: f64 },
    MaxIterations { residual: f64 },
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrimFailure {
    #[error("trim infeasible: {0:?}")]
    Infeasible(InfeasibleReason),
    #[error("trim point is unstable and uncontrollable")]
    Uncontrollable,
    #[error("invalid trim request: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct TrimOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra deterministic restarts after a failed first attempt.
    pub restarts: usize,
}

impl Default for TrimOptions {
    fn default() -> Self {
        Self {
            tolerance: TRIM_TOLERANCE,
            max_iterations: 200,
            restarts: 4,
        }
    }
}

/// Pitch attitude satisfying the rate-of-climb constraint.
pub fn theta_from_constraint(alpha: f64, beta: f64, phi: f64, gamma: f64) -> Result<f64> {
    let a = alpha.cos() * beta.cos();
    let b = phi.sin() * beta.sin() + phi.cos() * alpha.sin() * beta.cos();
    let sg = gamma.sin();
    let den = a * a - sg * sg;
    if den <= 0.0 {
        return Err(Error::DegenerateAttitude);
    }
    let theta = ((a * b + sg * (den + b * b).sqrt()) / den).atan();
    Ok(theta)
}

/// Body rates of a steady turn at heading rate `psi_dot`.
pub fn body_rates_for_turn(psi_dot: f64, theta: f64, phi: f64) -> (f64, f64, f64) {
    (
        -psi_dot * theta.sin(),
        psi_dot * theta.cos() * phi.sin(),
        psi_dot * theta.cos() * phi.cos(),
    )
}

/// Builds the full state and commanded controls for a decision vector.
pub fn trim_state(target: &TrimTarget, z: &[f64; NUM_DECISION]) -> Result<(FullState, ControlVector)> {
    let [alpha, beta, phi, throttle, elevator, aileron, rudder] = *z;
    let theta = theta_from_constraint(alpha, beta, phi, target.gamma)?;
    let (p, q, r) = body_rates_for_turn(target.psi_dot, theta, phi);
    let state = FullState {
        v: target.v,
        alpha,
        beta,
        p,
        q,
        r,
        phi,
        theta,
        h: target.h,
        ..Default::default()
    };
    let u = ControlVector {
        throttle,
        elevator,
        aileron,
        rudder,
    };
    Ok((state, u))
}

fn residual(target: &TrimTarget, z: &[f64; NUM_DECISION], m: &AircraftModel, f: &FailureSpec) -> Result<WindState> {
    let (s, u) = trim_state(target, z)?;
    Ok(state_derivative(&s, &u, m, f)?.wind)
}

fn decision_bounds(m: &AircraftModel) -> ([f64; NUM_DECISION], [f64; NUM_DECISION]) {
    let c = &m.config;
    let lo = [
        m.aero.alpha_min + ALPHA_MARGIN,
        -MAX_SIDESLIP,
        -MAX_BANK,
        0.0,
        -c.elevator_limit,
        -c.aileron_limit,
        -c.rudder_limit,
    ];
    let hi = [
        m.aero.alpha_max - ALPHA_MARGIN,
        MAX_SIDESLIP,
        MAX_BANK,
        1.0,
        c.elevator_limit,
        c.aileron_limit,
        c.rudder_limit,
    ];
    (lo, hi)
}

fn jammed_index(f: &FailureSpec) -> Option<(usize, f64)> {
    match *f {
        FailureSpec::SurfaceJam { surface, angle } => {
            let k = match surface {
                Surface::Elevator => 4,
                Surface::Aileron => 5,
                Surface::Rudder => 6,
            };
            Some((k, angle))
        }
        _ => None,
    }
}

/// Classifies a trim by the eigenvalues of `A` and, failing stability, the
/// rank of the controllability matrix.
pub fn classify(a: &StateMatrix, b: &InputMatrix) -> Classification {
    let eig = a.complex_eigenvalues();
    if eig.iter().all(|l| l.re <= STABILITY_TOLERANCE) {
        return Classification::Stable;
    }
    if controllability_rank(a, b) == NUM_STATES {
        Classification::UnstableControllable
    } else {
        Classification::Rejected
    }
}

pub fn controllability_rank(a: &StateMatrix, b: &InputMatrix) -> usize {
    let mut k = DMatrix::<f64>::zeros(NUM_STATES, NUM_STATES * NUM_CONTROLS);
    let mut blk: InputMatrix = *b;
    for i in 0..NUM_STATES {
        k.view_mut((0, i * NUM_CONTROLS), (NUM_STATES, NUM_CONTROLS)).copy_from(&blk);
        blk = a * blk;
    }
    let sv = k.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    let tol = NUM_STATES as f64 * smax * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

fn eigen_pairs(a: &StateMatrix) -> Vec<(f64, f64)> {
    let eig: SMatrix<Complex<f64>, NUM_STATES, 1> = a.complex_eigenvalues();
    eig.iter().map(|l| (l.re, l.im)).collect()
}

/// Solves the trim problem from `guess`, retrying from perturbed guesses on
/// failure, and classifies the result.
pub fn solve_trim(
    target: &TrimTarget,
    guess: &TrimGuess,
    m: &AircraftModel,
    f: &FailureSpec,
    opts: &TrimOptions,
) -> std::result::Result<TrimSolution, TrimFailure> {
    target.validate().map_err(|e| TrimFailure::Invalid(e.to_string()))?;
    f.validate(&m.config).map_err(|e| TrimFailure::Invalid(e.to_string()))?;
    // A symmetric aircraft has one redundant lateral degree of freedom:
    // prefer the coordinated, zero-sideslip trim when it exists.
    if f.is_symmetric() {
        if let Ok(Ok(sol)) = solve_from(target, guess, m, f, opts, true).map(|z| finish(target, z, m, f)) {
            return Ok(sol);
        }
    }
    let mut first_err = None;
    for attempt in 0..=opts.restarts {
        let g = perturbed_guess(guess, attempt);
        match solve_from(target, &g, m, f, opts, false) {
            Ok(sol) => return finish(target, sol, m, f),
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    Err(TrimFailure::Infeasible(first_err.unwrap_or(InfeasibleReason::Degenerate)))
}

fn perturbed_guess(guess: &TrimGuess, attempt: usize) -> TrimGuess {
    let mut z = guess.0;
    let d = 2f64.to_radians();
    match attempt {
        0 => {}
        1 => {
            z[0] += d;
            z[3] = 0.8;
        }
        2 => {
            z[0] -= d;
            z[3] = 0.2;
        }
        3 => {
            z[1] += d;
            z[4] -= d;
        }
        _ => {
            z[1] -= d;
            z[4] += d;
            z[3] = 0.5;
        }
    }
    TrimGuess(z)
}

fn finish(
    target: &TrimTarget,
    z: [f64; NUM_DECISION],
    m: &AircraftModel,
    f: &FailureSpec,
) -> std::result::Result<TrimSolution, TrimFailure> {
    let (state, u) = trim_state(target, &z).map_err(|_| TrimFailure::Infeasible(InfeasibleReason::Degenerate))?;
    let d = state_derivative(&state, &u, m, f).map_err(|_| TrimFailure::Infeasible(InfeasibleReason::Degenerate))?;
    let res = d.wind.amax();
    let (a, b) = linearize(&state, &u, m, f).map_err(|_| TrimFailure::Infeasible(InfeasibleReason::Degenerate))?;
    let classification = classify(&a, &b);
    if classification == Classification::Rejected {
        return Err(TrimFailure::Uncontrollable);
    }
    Ok(TrimSolution {
        target: *target,
        state,
        controls: apply_failure(u, f),
        residual: res,
        classification,
        eigenvalues: eigen_pairs(&a),
    })
}

/// Bounded Gauss-Newton SQP with Levenberg-Marquardt damping. With
/// `coordinated` the sideslip is held at zero.
fn solve_from(
    target: &TrimTarget,
    guess: &TrimGuess,
    m: &AircraftModel,
    f: &FailureSpec,
    opts: &TrimOptions,
    coordinated: bool,
) -> std::result::Result<[f64; NUM_DECISION], InfeasibleReason> {
    let (lo, hi) = decision_bounds(m);
    let jam = jammed_index(f);
    let free: Vec<usize> = (0..NUM_DECISION)
        .filter(|&k| jam.is_none_or(|(j, _)| j != k) && !(coordinated && k == 1))
        .collect();
    let n = free.len();

    let mut z = guess.0;
    for k in 0..NUM_DECISION {
        z[k] = z[k].clamp(lo[k], hi[k]);
    }
    if let Some((j, angle)) = jam {
        z[j] = angle;
    }
    if coordinated {
        z[1] = 0.0;
    }

    let eval = |z: &[f64; NUM_DECISION]| residual(target, z, m, f).ok();
    let mut r = eval(&z).ok_or(InfeasibleReason::Degenerate)?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-6;
    // aim well below the acceptance tolerance so re-evaluation has margin
    let goal = opts.tolerance * 1e-3;

    for _ in 0..opts.max_iterations {
        if r.amax() <= goal {
            return Ok(z);
        }
        // Jacobian of the residual over the free variables
        let mut jac = DMatrix::<f64>::zeros(NUM_STATES, n);
        for (c, &k) in free.iter().enumerate() {
            let h = 1e-7 * z[k].abs().max(1.0);
            let mut zp = z;
            let mut zm = z;
            zp[k] = (z[k] + h).min(hi[k] + ALPHA_MARGIN * 0.5);
            zm[k] = (z[k] - h).max(lo[k] - ALPHA_MARGIN * 0.5);
            let (rp, rm) = match (eval(&zp), eval(&zm)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(InfeasibleReason::Degenerate),
            };
            let col = (rp - rm) / (zp[k] - zm[k]);
            jac.set_column(c, &DVector::from_column_slice(col.as_slice()));
        }
        let rv = DVector::from_column_slice(r.as_slice());
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &rv;
        let lo_d: Vec<f64> = free.iter().map(|&k| lo[k] - z[k]).collect();
        let hi_d: Vec<f64> = free.iter().map(|&k| hi[k] - z[k]).collect();
        let empty = DMatrix::<f64>::zeros(n, 0);
        let empty_v = DVector::<f64>::zeros(0);

        let mut accepted = false;
        while mu < 1e10 {
            let scale = jtj.diagonal().amax().max(1e-12);
            let hess = &jtj + DMatrix::<f64>::identity(n, n) * (mu * scale);
            let hinv = match hess.clone().cholesky() {
                Some(ch) => ch.inverse(),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let input = qp::QpInput {
                hinv: &hinv,
                g: &g,
                a_eq: &empty,
                b_eq: &empty_v,
                a_in: &empty,
                b_in: &empty_v,
                lower: &lo_d,
                upper: &hi_d,
            };
            let d = match qp::solve(&input) {
                Ok(sol) => sol.d,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let mut zt = z;
            for (c, &k) in free.iter().enumerate() {
                zt[k] = (z[k] + d[c]).clamp(lo[k], hi[k]);
            }
            if let Some(rt) = eval(&zt) {
                let ct = rt.norm_squared();
                if ct < cost {
                    z = zt;
                    r = rt;
                    cost = ct;
                    mu = (mu / 5.0).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            mu *= 5.0;
        }
        if !accepted {
            let res = r.amax();
            if res <= opts.tolerance {
                return Ok(z);
            }
            return Err(stall_reason(&z, &lo, &hi, &free, res));
        }
    }
    if r.amax() <= opts.tolerance {
        Ok(z)
    } else {
        Err(InfeasibleReason::MaxIterations { residual: r.amax() })
    }
}

fn stall_reason(
    z: &[f64; NUM_DECISION],
    lo: &[f64; NUM_DECISION],
    hi: &[f64; NUM_DECISION],
    free: &[usize],
    res: f64,
) -> InfeasibleReason {
    let locked = free.iter().any(|&k| (z[k] - lo[k]).abs() < 1e-12 || (hi[k] - z[k]).abs() < 1e-12);
    if locked {
        InfeasibleReason::BoundLocked { residual: res }
    } else {
        InfeasibleReason::ResidualStalled { residual: res }
    }
}
