//! Aircraft configuration and surrogate aerodynamic coefficients, loaded
//! together from one JSON document.
//!
//! Angles in the file are degrees; stability and control derivatives are
//! per radian (rate derivatives are with respect to the usual normalised
//! rates `p b / 2V`, `q c / 2V`, `r b / 2V`). Everything is converted to
//! radians on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inertia {
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub ixz: f64,
}

/// Mass, geometry, propulsion and control limits (SI, radians).
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftConfig {
    pub mass: f64,
    pub wing_area: f64,
    pub span: f64,
    pub chord: f64,
    pub inertia: Inertia,
    pub engines: u32,
    /// Sea-level static thrust of one engine, N.
    pub max_thrust_per_engine: f64,
    /// Thrust line inclination above the body x axis.
    pub thrust_incidence: f64,
    pub elevator_limit: f64,
    pub aileron_limit: f64,
    pub rudder_limit: f64,
}

/// Linear and quadratic force/moment build-up terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Coefficient {
    pub c0: f64,
    pub alpha: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub beta2: f64,
    pub p_hat: f64,
    pub q_hat: f64,
    pub r_hat: f64,
    pub elevator: f64,
    pub aileron: f64,
    pub rudder: f64,
}

impl Coefficient {
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn eval(&self, alpha: f64, beta: f64, p_hat: f64, q_hat: f64, r_hat: f64, de: f64, da: f64, dr: f64) -> f64 {
        self.c0
            + self.alpha * alpha
            + self.alpha2 * alpha * alpha
            + self.beta * beta
            + self.beta2 * beta * beta
            + self.p_hat * p_hat
            + self.q_hat * q_hat
            + self.r_hat * r_hat
            + self.elevator * de
            + self.aileron * da
            + self.rudder * dr
    }
}

/// Surrogate coefficient set. `lift`/`drag` act in the stability frame,
/// `side` along the body y axis; `roll`/`pitch`/`yaw` are body moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AeroCoefficients {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub lift: Coefficient,
    pub drag: Coefficient,
    pub side: Coefficient,
    pub roll: Coefficient,
    pub pitch: Coefficient,
    pub yaw: Coefficient,
}

/// Aircraft plus aerodynamics, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftModel {
    pub name: String,
    pub config: AircraftConfig,
    pub aero: AeroCoefficients,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LimitsDeg {
    elevator: f64,
    aileron: f64,
    rudder: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AeroFile {
    alpha_range_deg: [f64; 2],
    lift: Coefficient,
    drag: Coefficient,
    side: Coefficient,
    roll: Coefficient,
    pitch: Coefficient,
    yaw: Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    mass_kg: f64,
    wing_area_m2: f64,
    span_m: f64,
    chord_m: f64,
    inertia_kgm2: Inertia,
    engines: u32,
    max_thrust_per_engine_n: f64,
    thrust_incidence_deg: f64,
    control_limits_deg: LimitsDeg,
    aero: AeroFile,
}

impl AircraftModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        let model = Self {
            name: f.name,
            config: AircraftConfig {
                mass: f.mass_kg,
                wing_area: f.wing_area_m2,
                span: f.span_m,
                chord: f.chord_m,
                inertia: f.inertia_kgm2,
                engines: f.engines,
                max_thrust_per_engine: f.max_thrust_per_engine_n,
                thrust_incidence: f.thrust_incidence_deg.to_radians(),
                elevator_limit: f.control_limits_deg.elevator.to_radians(),
                aileron_limit: f.control_limits_deg.aileron.to_radians(),
                rudder_limit: f.control_limits_deg.rudder.to_radians(),
            },
            aero: AeroCoefficients {
                alpha_min: f.aero.alpha_range_deg[0].to_radians(),
                alpha_max: f.aero.alpha_range_deg[1].to_radians(),
                lift: f.aero.lift,
                drag: f.aero.drag,
                side: f.aero.side,
                roll: f.aero.roll,
                pitch: f.aero.pitch,
                yaw: f.aero.yaw,
            },
        };
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let c = &self.config;
        let a = &self.aero;
        let f = ModelFile {
            name: self.name.clone(),
            mass_kg: c.mass,
            wing_area_m2: c.wing_area,
            span_m: c.span,
            chord_m: c.chord,
            inertia_kgm2: c.inertia,
            engines: c.engines,
            max_thrust_per_engine_n: c.max_thrust_per_engine,
            thrust_incidence_deg: c.thrust_incidence.to_degrees(),
            control_limits_deg: LimitsDeg {
                elevator: c.elevator_limit.to_degrees(),
                aileron: c.aileron_limit.to_degrees(),
                rudder: c.rudder_limit.to_degrees(),
            },
            aero: AeroFile {
                alpha_range_deg: [a.alpha_min.to_degrees(), a.alpha_max.to_degrees()],
                lift: a.lift,
                drag: a.drag,
                side: a.side,
                roll: a.roll,
                pitch: a.pitch,
                yaw: a.yaw,
            },
        };
        serde_json::to_string_pretty(&f).expect("model serialises")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The bundled transport-class surrogate (not GTM data).
    pub fn surrogate() -> Self {
        Self::from_json(SURROGATE_JSON).expect("bundled model is valid")
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(c.mass > 0.0) {
            return bad("mass must be positive");
        }
        if !(c.wing_area > 0.0 && c.span > 0.0 && c.chord > 0.0) {
            return bad("wing area, span and chord must be positive");
        }
        let i = c.inertia;
        if !(i.ixx > 0.0 && i.iyy > 0.0 && i.izz > 0.0 && i.ixx * i.izz - i.ixz * i.ixz > 0.0) {
            return bad("inertia tensor must be positive definite");
        }
        if !(c.max_thrust_per_engine > 0.0 && c.engines > 0) {
            return bad("thrust must be positive");
        }
        if !(c.elevator_limit > 0.0 && c.aileron_limit > 0.0 && c.rudder_limit > 0.0) {
            return bad("control limits must be positive");
        }
        let a = &self.aero;
        if !(a.alpha_max > a.alpha_min) {
            return bad("empty angle-of-attack range");
        }
        // C_D >= 0 over the valid range (quadratic in alpha at beta = 0 and
        // zero controls/rates, plus the non-negative beta^2 term)
        let d = &a.drag;
        if d.beta2 < 0.0 {
            return bad("drag must not decrease with sideslip magnitude");
        }
        let mut cd_min = (d.c0 + d.alpha * a.alpha_min + d.alpha2 * a.alpha_min.powi(2))
            .min(d.c0 + d.alpha * a.alpha_max + d.alpha2 * a.alpha_max.powi(2));
        if d.alpha2 > 0.0 {
            let a_star = -d.alpha / (2.0 * d.alpha2);
            if (a.alpha_min..=a.alpha_max).contains(&a_star) {
                cd_min = cd_min.min(d.c0 + d.alpha * a_star + d.alpha2 * a_star * a_star);
            }
        }
        if cd_min < 0.0 {
            return bad("drag coefficient negative inside the valid alpha range");
        }
        // lift slope over the valid range
        let l = &a.lift;
        let slope_min = (l.alpha + 2.0 * l.alpha2 * a.alpha_min).min(l.alpha + 2.0 * l.alpha2 * a.alpha_max);
        if slope_min <= 0.0 {
            return bad("lift must increase with alpha below the stall cap");
        }
        Ok(())
    }
}

/// Bundled surrogate: a generic light twin-engine transport. The numbers
/// are representative textbook values, not NASA GTM data; the engine and
/// thrust-line incidence in particular are placeholders.
pub const SURROGATE_JSON: &str = include_str!("../../data/surrogate_transport.json");
