//! Nonlinear 6-DoF rigid-body aircraft model in wind axes.
//!
//! The wind-axis derivatives are obtained from the body-axis force and
//! moment balance, so the aerodynamic build-up only has to be written once.
//! Lift and drag act in the stability frame, side force along body `y`,
//! thrust along the body `x` axis tilted up by the thrust incidence.

mod atmosphere;
mod model;

pub use atmosphere::{air_density, MAX_ALTITUDE, RHO0};
pub use model::{AeroCoefficients, AircraftConfig, AircraftModel, Coefficient, Inertia, SURROGATE_JSON};

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::G0;

pub const NUM_STATES: usize = 8;
pub const NUM_CONTROLS: usize = 4;

pub type StateMatrix = SMatrix<f64, NUM_STATES, NUM_STATES>;
pub type InputMatrix = SMatrix<f64, NUM_STATES, NUM_CONTROLS>;
pub type WindState = SVector<f64, NUM_STATES>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Elevator,
    Aileron,
    Rudder,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureSpec {
    #[default]
    None,
    /// Surface stuck at `angle` (rad) whatever is commanded.
    SurfaceJam { surface: Surface, angle: f64 },
    /// Deflections of `surface` scaled by `factor`.
    EffectivenessLoss { surface: Surface, factor: f64 },
}

impl FailureSpec {
    pub fn rudder_jam_deg(angle_deg: f64) -> Self {
        FailureSpec::SurfaceJam {
            surface: Surface::Rudder,
            angle: angle_deg.to_radians(),
        }
    }

    pub fn validate(&self, cfg: &AircraftConfig) -> Result<()> {
        match *self {
            FailureSpec::None => Ok(()),
            FailureSpec::SurfaceJam { surface, angle } => {
                let limit = surface_limit(cfg, surface);
                if !(angle.abs() <= limit) {
                    return Err(Error::InvalidInput(format!(
                        "jam angle {:.3} deg exceeds the {surface:?} limit of {:.3} deg",
                        angle.to_degrees(),
                        limit.to_degrees()
                    )));
                }
                Ok(())
            }
            FailureSpec::EffectivenessLoss { factor, .. } => {
                if !(0.0..=1.0).contains(&factor) {
                    return Err(Error::InvalidInput(format!("effectiveness factor {factor} outside [0, 1]")));
                }
                Ok(())
            }
        }
    }

    /// Whether the failed aircraft is still laterally symmetric.
    pub fn is_symmetric(&self) -> bool {
        match *self {
            FailureSpec::None => true,
            FailureSpec::SurfaceJam { surface, angle } => surface == Surface::Elevator || angle == 0.0,
            FailureSpec::EffectivenessLoss { .. } => true,
        }
    }
}

fn surface_limit(cfg: &AircraftConfig, s: Surface) -> f64 {
    match s {
        Surface::Elevator => cfg.elevator_limit,
        Surface::Aileron => cfg.aileron_limit,
        Surface::Rudder => cfg.rudder_limit,
    }
}

/// Throttle in `[0, 1]`, surface deflections in rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlVector {
    pub throttle: f64,
    pub elevator: f64,
    pub aileron: f64,
    pub rudder: f64,
}

impl ControlVector {
    pub fn to_array(&self) -> [f64; NUM_CONTROLS] {
        [self.throttle, self.elevator, self.aileron, self.rudder]
    }

    pub fn from_array(a: [f64; NUM_CONTROLS]) -> Self {
        Self {
            throttle: a[0],
            elevator: a[1],
            aileron: a[2],
            rudder: a[3],
        }
    }

    fn surface_mut(&mut self, s: Surface) -> &mut f64 {
        match s {
            Surface::Elevator => &mut self.elevator,
            Surface::Aileron => &mut self.aileron,
            Surface::Rudder => &mut self.rudder,
        }
    }

    pub fn within_limits(&self, cfg: &AircraftConfig, tol: f64) -> bool {
        (-tol..=1.0 + tol).contains(&self.throttle)
            && self.elevator.abs() <= cfg.elevator_limit + tol
            && self.aileron.abs() <= cfg.aileron_limit + tol
            && self.rudder.abs() <= cfg.rudder_limit + tol
    }
}

pub fn apply_failure(u: ControlVector, f: &FailureSpec) -> ControlVector {
    let mut out = u;
    match *f {
        FailureSpec::None => {}
        FailureSpec::SurfaceJam { surface, angle } => *out.surface_mut(surface) = angle,
        FailureSpec::EffectivenessLoss { surface, factor } => *out.surface_mut(surface) *= factor,
    }
    out
}

/// Wind-axis state plus spatial coordinates. `h` is altitude (up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FullState {
    pub v: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub phi: f64,
    pub theta: f64,
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub psi: f64,
}

impl FullState {
    /// `(V, alpha, beta, p, q, r, phi, theta)`.
    pub fn wind(&self) -> WindState {
        WindState::from([self.v, self.alpha, self.beta, self.p, self.q, self.r, self.phi, self.theta])
    }

    pub fn with_wind(&self, w: &WindState) -> Self {
        Self {
            v: w[0],
            alpha: w[1],
            beta: w[2],
            p: w[3],
            q: w[4],
            r: w[5],
            phi: w[6],
            theta: w[7],
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    /// Derivatives of `(V, alpha, beta, p, q, r, phi, theta)`.
    pub wind: WindState,
    pub x_dot: f64,
    pub y_dot: f64,
    pub h_dot: f64,
    pub psi_dot: f64,
}

pub fn wind_to_body(s: &FullState) -> (f64, f64, f64) {
    let (sa, ca) = s.alpha.sin_cos();
    let (sb, cb) = s.beta.sin_cos();
    (s.v * ca * cb, s.v * sb, s.v * sa * cb)
}

/// Available thrust at altitude `h` for throttle setting `throttle`.
pub fn thrust(cfg: &AircraftConfig, throttle: f64, h: f64) -> Result<f64> {
    let rho = air_density(h)?;
    Ok(throttle * cfg.engines as f64 * cfg.max_thrust_per_engine * rho / RHO0)
}

/// Forces (N) in body axes excluding gravity, and moments (N m).
struct Loads {
    force: [f64; 3],
    moment: [f64; 3],
}

fn loads(s: &FullState, u: &ControlVector, m: &AircraftModel) -> Result<Loads> {
    let a = &m.aero;
    let c = &m.config;
    if !(a.alpha_min..=a.alpha_max).contains(&s.alpha) {
        return Err(Error::AlphaOutOfRange {
            alpha_deg: s.alpha.to_degrees(),
            min_deg: a.alpha_min.to_degrees(),
            max_deg: a.alpha_max.to_degrees(),
        });
    }
    let rho = air_density(s.h)?;
    let qbar = 0.5 * rho * s.v * s.v;
    let p_hat = s.p * c.span / (2.0 * s.v);
    let q_hat = s.q * c.chord / (2.0 * s.v);
    let r_hat = s.r * c.span / (2.0 * s.v);
    let ev = |k: &Coefficient| k.eval(s.alpha, s.beta, p_hat, q_hat, r_hat, u.elevator, u.aileron, u.rudder);
    let lift = qbar * c.wing_area * ev(&a.lift);
    let drag = qbar * c.wing_area * ev(&a.drag);
    let side = qbar * c.wing_area * ev(&a.side);
    let t = thrust(c, u.throttle, s.h)?;
    let (sa, ca) = s.alpha.sin_cos();
    let (ss, cs) = c.thrust_incidence.sin_cos();
    let force = [
        -drag * ca + lift * sa + t * cs,
        side,
        -drag * sa - lift * ca - t * ss,
    ];
    let moment = [
        qbar * c.wing_area * c.span * ev(&a.roll),
        qbar * c.wing_area * c.chord * ev(&a.pitch),
        qbar * c.wing_area * c.span * ev(&a.yaw),
    ];
    Ok(Loads { force, moment })
}

/// Rigid-body angular accelerations from body moments.
fn angular_acceleration(i: &Inertia, p: f64, q: f64, r: f64, mo: [f64; 3]) -> [f64; 3] {
    let gamma = i.ixx * i.izz - i.ixz * i.ixz;
    let c1 = ((i.iyy - i.izz) * i.izz - i.ixz * i.ixz) / gamma;
    let c2 = (i.ixx - i.iyy + i.izz) * i.ixz / gamma;
    let c3 = i.izz / gamma;
    let c4 = i.ixz / gamma;
    let c5 = (i.izz - i.ixx) / i.iyy;
    let c6 = i.ixz / i.iyy;
    let c7 = 1.0 / i.iyy;
    let c8 = (i.ixx * (i.ixx - i.iyy) + i.ixz * i.ixz) / gamma;
    let c9 = i.ixx / gamma;
    [
        (c1 * r + c2 * p) * q + c3 * mo[0] + c4 * mo[2],
        c5 * p * r - c6 * (p * p - r * r) + c7 * mo[1],
        (c8 * p - c2 * r) * q + c4 * mo[0] + c9 * mo[2],
    ]
}

/// Full state derivative. `u` is the commanded control; the failure is
/// applied here.
pub fn state_derivative(s: &FullState, u: &ControlVector, m: &AircraftModel, f: &FailureSpec) -> Result<StateDerivative> {
    if !(s.v > 0.0) {
        return Err(Error::InvalidInput(format!("airspeed must be positive, got {}", s.v)));
    }
    let (sth, cth) = s.theta.sin_cos();
    if cth.abs() < 1e-12 {
        return Err(Error::PitchSingularity);
    }
    let u = apply_failure(*u, f);
    let ld = loads(s, &u, m)?;
    let mass = m.config.mass;
    let (sph, cph) = s.phi.sin_cos();
    let (ub, vb, wb) = wind_to_body(s);
    let (p, q, r) = (s.p, s.q, s.r);

    let g = [-G0 * sth, G0 * sph * cth, G0 * cph * cth];
    let u_dot = r * vb - q * wb + ld.force[0] / mass + g[0];
    let v_dot = p * wb - r * ub + ld.force[1] / mass + g[1];
    let w_dot = q * ub - p * vb + ld.force[2] / mass + g[2];

    let v = s.v;
    let v_dot_tot = (ub * u_dot + vb * v_dot + wb * w_dot) / v;
    let cb = s.beta.cos();
    let beta_dot = (v * v_dot - vb * v_dot_tot) / (v * v * cb);
    let alpha_dot = (ub * w_dot - wb * u_dot) / (ub * ub + wb * wb);

    let [p_dot, q_dot, r_dot] = angular_acceleration(&m.config.inertia, p, q, r, ld.moment);

    let tth = sth / cth;
    let phi_dot = p + tth * (q * sph + r * cph);
    let theta_dot = q * cph - r * sph;
    let psi_dot = (q * sph + r * cph) / cth;

    let (sps, cps) = s.psi.sin_cos();
    let x_dot = ub * cth * cps + vb * (sph * sth * cps - cph * sps) + wb * (cph * sth * cps + sph * sps);
    let y_dot = ub * cth * sps + vb * (sph * sth * sps + cph * cps) + wb * (cph * sth * sps - sph * cps);
    let h_dot = ub * sth - vb * sph * cth - wb * cph * cth;

    Ok(StateDerivative {
        wind: WindState::from([v_dot_tot, alpha_dot, beta_dot, p_dot, q_dot, r_dot, phi_dot, theta_dot]),
        x_dot,
        y_dot,
        h_dot,
        psi_dot,
    })
}

/// Relative finite-difference step used for linearisation.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference Jacobians of the wind-axis derivatives with respect
/// to `(V, alpha, beta, p, q, r, phi, theta)` and the commanded controls.
pub fn linearize(s: &FullState, u: &ControlVector, m: &AircraftModel, f: &FailureSpec) -> Result<(StateMatrix, InputMatrix)> {
    linearize_with_step(s, u, m, f, FD_STEP)
}

pub fn linearize_with_step(
    s: &FullState,
    u: &ControlVector,
    m: &AircraftModel,
    f: &FailureSpec,
    step: f64,
) -> Result<(StateMatrix, InputMatrix)> {
    let x0 = s.wind();
    let mut a = StateMatrix::zeros();
    for j in 0..NUM_STATES {
        let h = step * x0[j].abs().max(1.0);
        let mut xp = x0;
        let mut xm = x0;
        xp[j] += h;
        xm[j] -= h;
        let fp = state_derivative(&s.with_wind(&xp), u, m, f).map_err(perturbation_error)?;
        let fm = state_derivative(&s.with_wind(&xm), u, m, f).map_err(perturbation_error)?;
        a.set_column(j, &((fp.wind - fm.wind) / (2.0 * h)));
    }
    let u0 = u.to_array();
    let mut b = InputMatrix::zeros();
    for j in 0..NUM_CONTROLS {
        let h = step * u0[j].abs().max(1.0);
        let mut up = u0;
        let mut um = u0;
        up[j] += h;
        um[j] -= h;
        let fp = state_derivative(s, &ControlVector::from_array(up), m, f).map_err(perturbation_error)?;
        let fm = state_derivative(s, &ControlVector::from_array(um), m, f).map_err(perturbation_error)?;
        b.set_column(j, &((fp.wind - fm.wind) / (2.0 * h)));
    }
    Ok((a, b))
}

fn perturbation_error(e: Error) -> Error {
    Error::Numerical(format!("linearisation perturbation left the valid domain: {e}"))
}
