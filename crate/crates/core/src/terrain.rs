//! Max-set-of-Gaussians terrain. Each bump is the bivariate normal density
//! raised to the power `1/2` and rescaled so its peak equals its amplitude;
//! the terrain is the base elevation plus the largest bump at each point.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub mean: [f64; 2],
    /// Symmetric positive definite, m^2.
    pub cov: [[f64; 2]; 2],
    pub amplitude: f64,
}

impl GaussianBump {
    fn inverse_cov(&self) -> [[f64; 2]; 2] {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        [[d / det, -b / det], [-b / det, a / det]]
    }

    fn mahalanobis2(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let inv = self.inverse_cov();
        let dx = [x - self.mean[0], y - self.mean[1]];
        let s = [inv[0][0] * dx[0] + inv[0][1] * dx[1], inv[1][0] * dx[0] + inv[1][1] * dx[1]];
        (dx[0] * s[0] + dx[1] * s[1], s)
    }

    /// Unnormalised density value raised to `1/n` with `n = 2`.
    pub fn raw(&self, x: f64, y: f64) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        let (d2, _) = self.mahalanobis2(x, y);
        ((2.0 * std::f64::consts::PI).recip() * det.sqrt().recip() * (-0.5 * d2).exp()).sqrt()
    }

    /// Shape normalised to 1 at the mean.
    pub fn normalized(&self, x: f64, y: f64) -> f64 {
        let (d2, _) = self.mahalanobis2(x, y);
        (-0.25 * d2).exp()
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.amplitude * self.normalized(x, y)
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (d2, s) = self.mahalanobis2(x, y);
        let g = self.amplitude * (-0.25 * d2).exp();
        [-0.5 * g * s[0], -0.5 * g * s[1]]
    }

    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.cov;
        if b != c || !(a > 0.0) || !(a * d - b * b > 0.0) {
            return Err(Error::InvalidInput(format!("bump covariance {:?} is not SPD", self.cov)));
        }
        if !(self.amplitude >= 0.0) || !self.mean.iter().all(|m| m.is_finite()) {
            return Err(Error::InvalidInput("bump amplitude must be non-negative and mean finite".into()));
        }
        Ok(())
    }
}

/// `[x_min, x_max, y_min, y_max]`, m.
pub type BoundingBox = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainModel {
    pub bumps: Vec<GaussianBump>,
    pub base: f64,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl TerrainModel {
    pub fn flat(base: f64, bbox: BoundingBox) -> Self {
        Self {
            bumps: Vec::new(),
            base,
            bbox,
            seed: None,
        }
    }

    fn active(&self, x: f64, y: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, b) in self.bumps.iter().enumerate() {
            let v = b.value(x, y);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        best
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.base + self.active(x, y).map_or(0.0, |(_, v)| v.max(0.0))
    }

    /// Gradient of the active bump.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self.active(x, y) {
            Some((i, _)) => self.bumps[i].gradient(x, y),
            None => [0.0, 0.0],
        }
    }

    pub fn height_and_gradient(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        match self.active(x, y) {
            Some((i, v)) => (self.base + v, self.bumps[i].gradient(x, y)),
            None => (self.base, [0.0, 0.0]),
        }
    }

    /// `h - (terrain + clearance)`; non-negative when the clearance holds.
    pub fn clearance_margin(&self, x: f64, y: f64, h: f64, clearance: f64) -> f64 {
        h - (self.height(x, y) + clearance)
    }

    pub fn max_peak(&self) -> f64 {
        self.base + self.bumps.iter().map(|b| b.amplitude).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.bumps {
            b.validate()?;
        }
        let [x0, x1, y0, y1] = self.bbox;
        if !(x1 > x0 && y1 > y0) || !self.base.is_finite() {
            return Err(Error::InvalidInput("terrain bounding box is empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("terrain serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Uniform raster over the bounding box, `nx x ny` samples.
    pub fn raster(&self, nx: usize, ny: usize) -> Vec<(f64, f64, f64)> {
        let [x0, x1, y0, y1] = self.bbox;
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            let y = if ny > 1 { y0 + (y1 - y0) * j as f64 / (ny - 1) as f64 } else { y0 };
            for i in 0..nx {
                let x = if nx > 1 { x0 + (x1 - x0) * i as f64 / (nx - 1) as f64 } else { x0 };
                out.push((x, y, self.height(x, y)));
            }
        }
        out
    }
}

/// A point whose terrain must stay at or below `max_height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepLow {
    pub x: f64,
    pub y: f64,
    pub max_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub count: usize,
    pub base: f64,
    /// Peak elevations are drawn from this range; the first bump takes the
    /// maximum exactly.
    pub peak_min: f64,
    pub peak_max: f64,
    /// Standard deviation range along the principal axes, m.
    pub spread_min: f64,
    pub spread_max: f64,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub keep_low: Vec<KeepLow>,
}

const MAX_DRAWS: usize = 10_000;

pub fn generate(spec: &TerrainSpec, seed: u64) -> Result<TerrainModel> {
    let [x0, x1, y0, y1] = spec.bbox;
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::InvalidInput("terrain bounding box is empty".into()));
    }
    if !(spec.peak_max >= spec.peak_min && spec.peak_min >= spec.base) {
        return Err(Error::InvalidInput("peak range must satisfy base <= peak_min <= peak_max".into()));
    }
    if !(spec.spread_max >= spec.spread_min && spec.spread_min > 0.0) {
        return Err(Error::InvalidInput("spread range must be positive and ordered".into()));
    }
    if let Some(k) = spec.keep_low.iter().find(|k| k.max_height < spec.base) {
        return Err(Error::InvalidInput(format!("keep-low point {k:?} lies below the base elevation")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bumps = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let peak = if i == 0 {
            spec.peak_max
        } else {
            rng.gen_range(spec.peak_min..=spec.peak_max)
        };
        let mut placed = None;
        for _ in 0..MAX_DRAWS {
            let sx = rng.gen_range(spec.spread_min..=spec.spread_max);
            let sy = rng.gen_range(spec.spread_min..=spec.spread_max);
            let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let (s, c) = rot.sin_cos();
            let cov = [
                [c * c * sx * sx + s * s * sy * sy, c * s * (sx * sx - sy * sy)],
                [c * s * (sx * sx - sy * sy), s * s * sx * sx + c * c * sy * sy],
            ];
            let bump = GaussianBump {
                mean: [rng.gen_range(x0..=x1), rng.gen_range(y0..=y1)],
                cov,
                amplitude: peak - spec.base,
            };
            if spec.keep_low.iter().all(|k| spec.base + bump.value(k.x, k.y) <= k.max_height) {
                placed = Some(bump);
                break;
            }
        }
        bumps.push(placed.ok_or_else(|| Error::InvalidInput("could not place a bump clear of the keep-low points".into()))?);
    }
    Ok(TerrainModel {
        bumps,
        base: spec.base,
        bbox: spec.bbox,
        seed: Some(seed),
    })
}
