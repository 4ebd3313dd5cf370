//! Scenario description. The file form uses display units with the unit in
//! every field name; [`ScenarioConfig`] is the SI form used internally.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envelope::ManeuveringFlightEnvelope;
use crate::error::{Error, Result};
use crate::flightdyn::{AircraftModel, FailureSpec, Surface};
use crate::ocp::CostWeights;
use crate::terrain::TerrainModel;
use crate::units::{ft_to_m, m_to_ft};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Runway {
    pub x: f64,
    pub y: f64,
    pub h: f64,
    /// Touchdown heading, enforced only when given.
    pub psi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMode {
    /// The envelope nearest the start altitude is used throughout.
    #[default]
    StartAltitude,
    /// Each solve uses the envelope nearest its starting altitude.
    PerAltitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// `(x, y, h, psi)`.
    pub start: [f64; 4],
    pub runway: Runway,
    pub failure: FailureSpec,
    pub clearance: f64,
    pub weights: CostWeights,
    /// Terminal-proximity weight of the piecewise mode; calibrated on the
    /// first segment when absent.
    pub proximity_weight: Option<f64>,
    pub schedule: Vec<usize>,
    pub segment_drop: f64,
    pub segment_nodes: usize,
    /// Required signed distance inside the envelope, grid cells.
    pub envelope_margin: f64,
    pub envelope_mode: EnvelopeMode,
    pub max_iterations: usize,
    /// Wall-time budget per one-piece stage, s.
    pub stage_time_budget: Option<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.start.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("start state is not finite".into()));
        }
        if !(self.start[2] > self.runway.h) {
            return Err(Error::InvalidInput(format!(
                "start altitude {} m must exceed the runway altitude {} m",
                self.start[2], self.runway.h
            )));
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput("continuation schedule needs stages of at least 2 nodes".into()));
        }
        if !(self.segment_drop > 0.0) || self.segment_nodes < 2 {
            return Err(Error::InvalidInput("segment drop must be positive and segments need 2+ nodes".into()));
        }
        if !(self.clearance >= 0.0) || !(self.envelope_margin >= 0.0) {
            return Err(Error::InvalidInput("clearance and envelope margin must be non-negative".into()));
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        let drop = self.start[2] - self.runway.h;
        let ratio = drop / self.segment_drop;
        let count = if (ratio - ratio.round()).abs() < 1e-9 { ratio.round() } else { ratio.ceil() };
        count.max(1.0) as usize
    }
}

/// A configuration with its aircraft, terrain and envelopes loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: AircraftModel,
    pub terrain: Arc<TerrainModel>,
    pub envelopes: Vec<Arc<ManeuveringFlightEnvelope>>,
}

impl Scenario {
    pub fn new(
        config: ScenarioConfig,
        model: AircraftModel,
        terrain: TerrainModel,
        envelopes: Vec<ManeuveringFlightEnvelope>,
    ) -> Result<Self> {
        let s = Self {
            config,
            model,
            terrain: Arc::new(terrain),
            envelopes: envelopes.into_iter().map(Arc::new).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        c.failure.validate(&self.model.config)?;
        self.terrain.validate()?;
        let margin = self.terrain.clearance_margin(c.start[0], c.start[1], c.start[2], c.clearance);
        if margin < 0.0 {
            return Err(Error::InvalidInput(format!(
                "start point is {:.1} m inside the terrain clearance",
                -margin
            )));
        }
        if self.envelopes.is_empty() {
            return Err(Error::InvalidInput("the scenario needs at least one envelope".into()));
        }
        let hash = self.model.hash();
        for e in &self.envelopes {
            if e.failure != c.failure {
                return Err(Error::InvalidInput(format!(
                    "envelope at {} m was computed for {:?}, scenario failure is {:?}",
                    e.grid.altitude, e.failure, c.failure
                )));
            }
            if !e.model_hash.is_empty() && e.model_hash != hash {
                return Err(Error::InvalidInput(format!(
                    "envelope at {} m was computed for a different aircraft model",
                    e.grid.altitude
                )));
            }
        }
        Ok(())
    }

    /// Envelope for a solve that starts at altitude `h`.
    pub fn envelope_for(&self, h: f64) -> Arc<ManeuveringFlightEnvelope> {
        let target = match self.config.envelope_mode {
            EnvelopeMode::StartAltitude => self.config.start[2],
            EnvelopeMode::PerAltitude => h,
        };
        self.envelopes
            .iter()
            .min_by(|a, b| {
                (a.grid.altitude - target)
                    .abs()
                    .total_cmp(&(b.grid.altitude - target).abs())
            })
            .cloned()
            .expect("validated scenario has envelopes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFile {
    pub x_m: f64,
    pub y_m: f64,
    pub h_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureFile {
    None,
    SurfaceJam { surface: Surface, angle_deg: f64 },
    EffectivenessLoss { surface: Surface, factor: f64 },
}

impl From<FailureFile> for FailureSpec {
    fn from(f: FailureFile) -> Self {
        match f {
            FailureFile::None => FailureSpec::None,
            FailureFile::SurfaceJam { surface, angle_deg } => FailureSpec::SurfaceJam {
                surface,
                angle: angle_deg.to_radians(),
            },
            FailureFile::EffectivenessLoss { surface, factor } => FailureSpec::EffectivenessLoss { surface, factor },
        }
    }
}

impl From<FailureSpec> for FailureFile {
    fn from(f: FailureSpec) -> Self {
        match f {
            FailureSpec::None => FailureFile::None,
            FailureSpec::SurfaceJam { surface, angle } => FailureFile::SurfaceJam {
                surface,
                angle_deg: angle.to_degrees(),
            },
            FailureSpec::EffectivenessLoss { surface, factor } => FailureFile::EffectivenessLoss { surface, factor },
        }
    }
}

/// Reference magnitudes; each weight is the inverse square of its reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub v_ref_mps: f64,
    pub gamma_ref_deg: f64,
    pub psi_dot_ref_deg_s: f64,
}

impl Default for WeightsFile {
    fn default() -> Self {
        let w = CostWeights::default();
        Self {
            v_ref_mps: w.v.sqrt().recip(),
            gamma_ref_deg: w.gamma.sqrt().recip().to_degrees(),
            psi_dot_ref_deg_s: w.psi_dot.sqrt().recip().to_degrees(),
        }
    }
}

fn default_schedule() -> Vec<usize> {
    vec![20, 100, 200, 300, 400]
}
fn default_drop() -> f64 {
    200.0
}
fn default_segment_nodes() -> usize {
    5
}
fn default_margin() -> f64 {
    1.0
}
fn default_iterations() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub start: PointFile,
    pub runway: PointFile,
    pub failure: FailureFile,
    pub clearance_ft: f64,
    /// Aircraft model file; the bundled surrogate when absent.
    #[serde(default)]
    pub aircraft: Option<PathBuf>,
    pub terrain: PathBuf,
    pub envelopes: Vec<PathBuf>,
    #[serde(default)]
    pub weights: WeightsFile,
    #[serde(default)]
    pub proximity_weight: Option<f64>,
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    #[serde(default = "default_drop")]
    pub segment_drop_m: f64,
    #[serde(default = "default_segment_nodes")]
    pub segment_nodes: usize,
    #[serde(default = "default_margin")]
    pub envelope_margin_cells: f64,
    #[serde(default)]
    pub envelope_mode: EnvelopeMode,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub stage_time_budget_s: Option<f64>,
}

impl ScenarioFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn config(&self) -> Result<ScenarioConfig> {
        let w = &self.weights;
        if !(w.v_ref_mps > 0.0 && w.gamma_ref_deg > 0.0 && w.psi_dot_ref_deg_s > 0.0) {
            return Err(Error::InvalidInput("cost reference magnitudes must be positive".into()));
        }
        let c = ScenarioConfig {
            start: [
                self.start.x_m,
                self.start.y_m,
                self.start.h_m,
                self.start.psi_deg.unwrap_or(0.0).to_radians(),
            ],
            runway: Runway {
                x: self.runway.x_m,
                y: self.runway.y_m,
                h: self.runway.h_m,
                psi: self.runway.psi_deg.map(f64::to_radians),
            },
            failure: self.failure.into(),
            clearance: ft_to_m(self.clearance_ft),
            weights: CostWeights {
                v: w.v_ref_mps.powi(-2),
                gamma: w.gamma_ref_deg.to_radians().powi(-2),
                psi_dot: w.psi_dot_ref_deg_s.to_radians().powi(-2),
            },
            proximity_weight: self.proximity_weight,
            schedule: self.schedule.clone(),
            segment_drop: self.segment_drop_m,
            segment_nodes: self.segment_nodes,
            envelope_margin: self.envelope_margin_cells,
            envelope_mode: self.envelope_mode,
            max_iterations: self.max_iterations,
            stage_time_budget: self.stage_time_budget_s,
        };
        c.validate()?;
        Ok(c)
    }

    /// Loads every referenced file; relative paths resolve against `base`.
    pub fn resolve(&self, base: impl AsRef<Path>) -> Result<Scenario> {
        let base = base.as_ref();
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let need = |p: &Path| -> Result<PathBuf> {
            let full = at(p);
            if !full.exists() {
                return Err(Error::InvalidInput(format!("referenced file {} does not exist", full.display())));
            }
            Ok(full)
        };
        let model = match &self.aircraft {
            Some(p) => AircraftModel::load(need(p)?)?,
            None => AircraftModel::surrogate(),
        };
        let terrain = TerrainModel::load(need(&self.terrain)?)?;
        let envelopes = self
            .envelopes
            .iter()
            .map(|p| ManeuveringFlightEnvelope::load(need(p)?))
            .collect::<Result<Vec<_>>>()?;
        Scenario::new(self.config()?, model, terrain, envelopes)
    }

    pub fn from_config(c: &ScenarioConfig, terrain: PathBuf, envelopes: Vec<PathBuf>) -> Self {
        Self {
            start: PointFile {
                x_m: c.start[0],
                y_m: c.start[1],
                h_m: c.start[2],
                psi_deg: Some(c.start[3].to_degrees()),
            },
            runway: PointFile {
                x_m: c.runway.x,
                y_m: c.runway.y,
                h_m: c.runway.h,
                psi_deg: c.runway.psi.map(f64::to_degrees),
            },
            failure: c.failure.into(),
            clearance_ft: m_to_ft(c.clearance),
            aircraft: None,
            terrain,
            envelopes,
            weights: WeightsFile {
                v_ref_mps: c.weights.v.sqrt().recip(),
                gamma_ref_deg: c.weights.gamma.sqrt().recip().to_degrees(),
                psi_dot_ref_deg_s: c.weights.psi_dot.sqrt().recip().to_degrees(),
            },
            proximity_weight: c.proximity_weight,
            schedule: c.schedule.clone(),
            segment_drop_m: c.segment_drop,
            segment_nodes: c.segment_nodes,
            envelope_margin_cells: c.envelope_margin,
            envelope_mode: c.envelope_mode,
            max_iterations: c.max_iterations,
            stage_time_budget_s: c.stage_time_budget,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file() -> ScenarioFile {
        serde_json::from_str(
            r#"{
                "start": {"x_m": 0, "y_m": 0, "h_m": 6000, "psi_deg": 0},
                "runway": {"x_m": 16000, "y_m": 19000, "h_m": 0},
                "failure": {"kind": "surface_jam", "surface": "rudder", "angle_deg": 10},
                "clearance_ft": 2000,
                "terrain": "terrain.json",
                "envelopes": ["envelope.json"]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_units() {
        let c = file().config().unwrap();
        assert_eq!(c.schedule, vec![20, 100, 200, 300, 400]);
        assert_eq!(c.segment_nodes, 5);
        assert!((c.clearance - 609.6).abs() < 1e-9);
        assert_eq!(c.failure, FailureSpec::rudder_jam_deg(10.0));
        assert_eq!(c.runway.psi, None);
        assert_eq!(c.segment_count(), 30);
        let w = CostWeights::default();
        assert!((c.weights.v - w.v).abs() < 1e-15 && (c.weights.gamma - w.gamma).abs() < 1e-9);
    }

    #[test]
    fn round_trip_through_config() {
        let f = file();
        let c = f.config().unwrap();
        let back = ScenarioFile::from_config(&c, f.terrain.clone(), f.envelopes.clone());
        let c2 = back.config().unwrap();
        assert_eq!(c.start, c2.start);
        assert_eq!(c.failure, FailureSpec::from(FailureFile::from(c2.failure)));
        assert!((c.weights.psi_dot - c2.weights.psi_dot).abs() < 1e-9 * c.weights.psi_dot);
    }

    #[test]
    fn segment_count_rounds_up() {
        let mut c = file().config().unwrap();
        c.segment_drop = 250.0;
        assert_eq!(c.segment_count(), 24);
        c.segment_drop = 700.0;
        assert_eq!(c.segment_count(), 9);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut f = file();
        f.runway.h_m = 7000.0;
        assert!(f.config().is_err());
        let err = file().resolve("/nonexistent-dir").unwrap_err().to_string();
        assert!(err.contains("terrain.json"), "{err}");
    }
}
