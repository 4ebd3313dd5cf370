//! Gridded manoeuvring flight envelope over `(V, gamma, psi_dot)` at one
//! altitude.
//!
//! The sweep runs gamma outer, heading rate middle and airspeed inner
//! (ascending), warm-starting each trim from the previous accepted point on
//! the same line. Lines are independent and run in parallel. A repair pass
//! then retries infeasible cells next to feasible ones from their
//! neighbours' solutions, which removes isolated convergence misses.
//!
//! Feasibility is exposed as a signed distance in cell units, computed per
//! gamma slice and interpolated trilinearly.

pub mod contour;
pub mod sdf;

use std::path::Path;

use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flightdyn::{AircraftModel, FailureSpec};
use crate::trim::{self, Classification, TrimGuess, TrimOptions, TrimSolution, TrimTarget};

pub const SCHEMA_VERSION: u32 = 1;

/// One regularly sampled axis, `min + k * step` for `k < count()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn at(&self, k: usize) -> f64 {
        self.min + k as f64 * self.step
    }

    /// Continuous index of `x`.
    pub fn position(&self, x: f64) -> f64 {
        (x - self.min) / self.step
    }

    pub fn nearest(&self, x: f64) -> usize {
        (self.position(x).round().max(0.0) as usize).min(self.count() - 1)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.step > 0.0) || !(self.max >= self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidInput(format!("invalid {name} axis {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub altitude: f64,
    pub v: Axis,
    pub gamma: Axis,
    pub psi_dot: Axis,
}

impl GridSpec {
    /// V 40..120 m/s by 2, heading rate -20..20 deg/s by 1, gamma -5..5 deg by 1.
    pub fn default_at(altitude: f64) -> Self {
        let d = std::f64::consts::PI / 180.0;
        Self {
            altitude,
            v: Axis::new(40.0, 120.0, 2.0),
            gamma: Axis::new(-5.0 * d, 5.0 * d, d),
            psi_dot: Axis::new(-20.0 * d, 20.0 * d, d),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.v.validate("airspeed")?;
        self.gamma.validate("flight path")?;
        self.psi_dot.validate("heading rate")?;
        if self.v.min <= 0.0 {
            return Err(Error::InvalidInput("airspeed axis must be positive".into()));
        }
        let lim = trim::MAX_FLIGHT_PATH + 1e-9;
        if self.gamma.min < -lim || self.gamma.at(self.gamma.count() - 1) > lim {
            return Err(Error::InvalidInput("flight path axis must lie within [-5, 5] deg".into()));
        }
        crate::flightdyn::air_density(self.altitude)?;
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.v.count(), self.psi_dot.count(), self.gamma.count())
    }

    pub fn len(&self) -> usize {
        let (a, b, c) = self.shape();
        a * b * c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index, airspeed fastest, then heading rate, then gamma.
    pub fn index(&self, iv: usize, ip: usize, ig: usize) -> usize {
        let (nv, np, _) = self.shape();
        (ig * np + ip) * nv + iv
    }

    pub fn unindex(&self, k: usize) -> (usize, usize, usize) {
        let (nv, np, _) = self.shape();
        (k % nv, (k / nv) % np, k / (nv * np))
    }

    pub fn target(&self, k: usize) -> TrimTarget {
        let (iv, ip, ig) = self.unindex(k);
        TrimTarget {
            h: self.altitude,
            v: self.v.at(iv),
            gamma: self.gamma.at(ig),
            psi_dot: self.psi_dot.at(ip),
        }
    }
}

/// Trim data kept per feasible cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub theta: f64,
    pub throttle: f64,
    pub elevator: f64,
    pub aileron: f64,
    pub rudder: f64,
    pub residual: f64,
    pub classification: Classification,
}

impl CellSummary {
    pub fn from_solution(s: &TrimSolution) -> Self {
        Self {
            alpha: s.state.alpha,
            beta: s.state.beta,
            phi: s.state.phi,
            theta: s.state.theta,
            throttle: s.controls.throttle,
            elevator: s.controls.elevator,
            aileron: s.controls.aileron,
            rudder: s.controls.rudder,
            residual: s.residual,
            classification: s.classification,
        }
    }

    pub fn guess(&self) -> TrimGuess {
        TrimGuess([
            self.alpha,
            self.beta,
            self.phi,
            self.throttle,
            self.elevator,
            self.aileron,
            self.rudder,
        ])
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    pub trim: TrimOptions,
    /// Upper bound on neighbour repair passes.
    pub repair_passes: usize,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            trim: TrimOptions::default(),
            repair_passes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManeuveringFlightEnvelope {
    pub grid: GridSpec,
    pub failure: FailureSpec,
    pub model_hash: String,
    cells: Vec<Option<CellSummary>>,
    sdf: Vec<f64>,
}

fn try_trim(
    target: &TrimTarget,
    guesses: &[TrimGuess],
    model: &AircraftModel,
    failure: &FailureSpec,
    opts: &TrimOptions,
) -> Option<CellSummary> {
    guesses
        .iter()
        .find_map(|g| trim::solve_trim(target, g, model, failure, opts).ok())
        .map(|s| CellSummary::from_solution(&s))
}

fn sweep_line(
    grid: &GridSpec,
    ip: usize,
    ig: usize,
    model: &AircraftModel,
    failure: &FailureSpec,
    opts: &TrimOptions,
) -> Vec<Option<CellSummary>> {
    let nv = grid.v.count();
    let mut out = Vec::with_capacity(nv);
    let mut last: Option<CellSummary> = None;
    for iv in 0..nv {
        let target = grid.target(grid.index(iv, ip, ig));
        let nominal = TrimGuess::nominal(&target);
        let mut guesses = Vec::with_capacity(2);
        if let Some(prev) = last {
            guesses.push(prev.guess());
        }
        guesses.push(nominal);
        let cell = try_trim(&target, &guesses, model, failure, opts);
        if cell.is_some() {
            last = cell;
        }
        out.push(cell);
    }
    out
}

fn neighbours(grid: &GridSpec, k: usize) -> impl Iterator<Item = usize> + '_ {
    let (nv, np, ng) = grid.shape();
    let (iv, ip, ig) = grid.unindex(k);
    let cand = [
        (iv.wrapping_sub(1), ip, ig),
        (iv + 1, ip, ig),
        (iv, ip.wrapping_sub(1), ig),
        (iv, ip + 1, ig),
        (iv, ip, ig.wrapping_sub(1)),
        (iv, ip, ig + 1),
    ];
    cand.into_iter()
        .filter(move |&(a, b, c)| a < nv && b < np && c < ng)
        .map(move |(a, b, c)| grid.index(a, b, c))
}

/// Builds the envelope. Per-point trim failures are recorded as
/// infeasible cells; only an invalid grid or failure spec is an error.
pub fn sweep_mfe(
    grid: &GridSpec,
    model: &AircraftModel,
    failure: &FailureSpec,
    opts: &EnvelopeOptions,
) -> Result<ManeuveringFlightEnvelope> {
    grid.validate()?;
    failure.validate(&model.config)?;
    let (_, np, ng) = grid.shape();
    let lines: Vec<(usize, usize)> = (0..ng).flat_map(|ig| (0..np).map(move |ip| (ip, ig))).collect();
    let swept: Vec<Vec<Option<CellSummary>>> = lines
        .par_iter()
        .map(|&(ip, ig)| sweep_line(grid, ip, ig, model, failure, &opts.trim))
        .collect();
    // lines are in (ig, ip) order with V fastest, matching the flat index
    let mut cells: Vec<Option<CellSummary>> = swept.into_iter().flatten().collect();

    // neighbour repair: only cells next to newly feasible cells are retried
    let mut fresh: Vec<usize> = (0..cells.len()).filter(|&k| cells[k].is_some()).collect();
    let mut repair_opts = opts.trim.clone();
    repair_opts.restarts = 0;
    for _ in 0..opts.repair_passes {
        let mut cand: Vec<usize> = fresh
            .iter()
            .flat_map(|&k| neighbours(grid, k))
            .filter(|&n| cells[n].is_none())
            .collect();
        cand.sort_unstable();
        cand.dedup();
        if cand.is_empty() {
            break;
        }
        let fixed: Vec<(usize, CellSummary)> = cand
            .par_iter()
            .filter_map(|&k| {
                let guesses: Vec<TrimGuess> = neighbours(grid, k).filter_map(|n| cells[n].map(|c| c.guess())).collect();
                try_trim(&grid.target(k), &guesses, model, failure, &repair_opts).map(|c| (k, c))
            })
            .collect();
        if fixed.is_empty() {
            break;
        }
        fresh = fixed.iter().map(|&(k, _)| k).collect();
        for (k, c) in fixed {
            cells[k] = Some(c);
        }
    }
    Ok(ManeuveringFlightEnvelope::from_cells(*grid, *failure, model.hash(), cells))
}

impl ManeuveringFlightEnvelope {
    pub fn from_cells(grid: GridSpec, failure: FailureSpec, model_hash: String, cells: Vec<Option<CellSummary>>) -> Self {
        assert_eq!(cells.len(), grid.len());
        let mut env = Self {
            grid,
            failure,
            model_hash,
            cells,
            sdf: Vec::new(),
        };
        env.sdf = env.compute_sdf();
        env
    }

    fn compute_sdf(&self) -> Vec<f64> {
        let (nv, np, ng) = self.grid.shape();
        let mut out = Vec::with_capacity(self.cells.len());
        for ig in 0..ng {
            let mask: Vec<bool> = (0..nv * np).map(|k| self.cells[ig * nv * np + k].is_some()).collect();
            out.extend(sdf::signed_distance(&mask, nv, np));
        }
        out
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(Option::is_some).collect()
    }

    pub fn cell(&self, k: usize) -> Option<&CellSummary> {
        self.cells[k].as_ref()
    }

    pub fn cells(&self) -> &[Option<CellSummary>] {
        &self.cells
    }

    pub fn feasible_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Signed distance stored at grid cell `k`.
    pub fn cell_distance(&self, k: usize) -> f64 {
        self.sdf[k]
    }

    /// Signed distance (cells) and its gradient with respect to
    /// `(V, gamma, psi_dot)` in cells per SI unit, interpolated with
    /// continuous first derivatives. Outside the grid box the value keeps
    /// decreasing with the distance to the box.
    pub fn signed_distance_with_gradient(&self, v: f64, gamma: f64, psi_dot: f64) -> (f64, [f64; 3]) {
        let g = &self.grid;
        let axes = [g.v, g.psi_dot, g.gamma];
        let raw = [v, psi_dot, gamma];
        let mut over = [0f64; 3];
        // per axis: four clamped sample indices with their weights and
        // weight derivatives
        let mut idx = [[0usize; 4]; 3];
        let mut wt = [[0f64; 4]; 3];
        let mut dwt = [[0f64; 4]; 3];
        for d in 0..3 {
            let n = axes[d].count();
            let f = axes[d].position(raw[d]);
            let fc = f.clamp(0.0, (n - 1) as f64);
            over[d] = f - fc;
            let i0 = (fc.floor() as usize).min(n.saturating_sub(2));
            let t = fc - i0 as f64;
            for (k, slot) in idx[d].iter_mut().enumerate() {
                *slot = (i0 as i64 + k as i64 - 1).clamp(0, n as i64 - 1) as usize;
            }
            (wt[d], dwt[d]) = catmull_rom(t);
        }
        let (nv, np) = (axes[0].count(), axes[1].count());
        let at = |i: usize, j: usize, k: usize| self.sdf[(k * np + j) * nv + i];
        let mut val = 0.0;
        let mut grad = [0.0; 3];
        for c in 0..4 {
            for b in 0..4 {
                for a in 0..4 {
                    let s = at(idx[0][a], idx[1][b], idx[2][c]);
                    val += s * wt[0][a] * wt[1][b] * wt[2][c];
                    grad[0] += s * dwt[0][a] * wt[1][b] * wt[2][c];
                    grad[1] += s * wt[0][a] * dwt[1][b] * wt[2][c];
                    grad[2] += s * wt[0][a] * wt[1][b] * dwt[2][c];
                }
            }
        }
        for d in 0..3 {
            if over[d] != 0.0 {
                grad[d] = 0.0;
            }
        }
        let out_dist = (over[0] * over[0] + over[1] * over[1] + over[2] * over[2]).sqrt();
        if out_dist > 0.0 {
            val -= out_dist;
            for d in 0..3 {
                grad[d] -= over[d] / out_dist;
            }
        }
        // cells per unit -> per SI unit, reorder to (V, gamma, psi_dot)
        let gv = grad[0] / axes[0].step;
        let gp = grad[1] / axes[1].step;
        let gg = grad[2] / axes[2].step;
        (val, [gv, gg, gp])
    }

    pub fn signed_distance(&self, v: f64, gamma: f64, psi_dot: f64) -> f64 {
        self.signed_distance_with_gradient(v, gamma, psi_dot).0
    }

    fn in_box(&self, v: f64, gamma: f64, psi_dot: f64) -> bool {
        let g = &self.grid;
        let inside = |a: &Axis, x: f64| {
            let f = a.position(x);
            f >= -1e-9 && f <= (a.count() - 1) as f64 + 1e-9
        };
        inside(&g.v, v) && inside(&g.gamma, gamma) && inside(&g.psi_dot, psi_dot)
    }

    /// Boundary cells sit at distance zero; the tolerance absorbs rounding
    /// in the grid coordinates of a node.
    pub fn contains(&self, v: f64, gamma: f64, psi_dot: f64) -> bool {
        self.in_box(v, gamma, psi_dot) && self.signed_distance(v, gamma, psi_dot) >= -1e-9
    }

    /// Boundary polylines of the slice nearest `gamma`, in `(V, psi_dot)`.
    pub fn slice_boundary(&self, gamma: f64) -> Vec<Vec<(f64, f64)>> {
        let g = &self.grid;
        let (nv, np, _) = g.shape();
        let ig = g.gamma.nearest(gamma);
        let mask: Vec<bool> = (0..nv * np).map(|k| self.cells[ig * nv * np + k].is_some()).collect();
        contour::contours(&mask, nv, np)
            .into_iter()
            .map(|poly| {
                poly.into_iter()
                    .map(|(i, j)| (g.v.min + i * g.v.step, g.psi_dot.min + j * g.psi_dot.step))
                    .collect()
            })
            .collect()
    }

    /// Ranges of `(V, gamma, psi_dot)` spanned by feasible cells.
    pub fn feasible_bounds(&self) -> Option<[(f64, f64); 3]> {
        let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 3];
        let mut any = false;
        for (k, c) in self.cells.iter().enumerate() {
            if c.is_some() {
                any = true;
                let t = self.grid.target(k);
                for (d, x) in [t.v, t.gamma, t.psi_dot].into_iter().enumerate() {
                    b[d].0 = b[d].0.min(x);
                    b[d].1 = b[d].1.max(x);
                }
            }
        }
        any.then_some(b)
    }

    pub fn to_json(&self) -> String {
        let mask = self.mask();
        let mut bytes = vec![0u8; mask.len().div_ceil(8)];
        for (k, &m) in mask.iter().enumerate() {
            if m {
                bytes[k / 8] |= 1 << (k % 8);
            }
        }
        let file = EnvelopeFile {
            schema_version: SCHEMA_VERSION,
            grid: self.grid,
            failure: self.failure,
            model_hash: self.model_hash.clone(),
            cell_count: mask.len(),
            mask: base64::engine::general_purpose::STANDARD.encode(bytes),
            solutions: self.cells.iter().filter_map(|c| *c).collect(),
        };
        serde_json::to_string(&file).expect("envelope serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let head: serde_json::Value = serde_json::from_str(text)?;
        let found = head
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: SCHEMA_VERSION,
            });
        }
        let file: EnvelopeFile = serde_json::from_value(head)?;
        file.grid.validate()?;
        if file.cell_count != file.grid.len() {
            return Err(Error::Corrupt(format!(
                "cell count {} does not match grid size {}",
                file.cell_count,
                file.grid.len()
            )));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(file.mask.as_bytes())
            .map_err(|e| Error::Corrupt(format!("mask is not valid base64: {e}")))?;
        if bytes.len() != file.cell_count.div_ceil(8) {
            return Err(Error::Corrupt("mask length does not match the grid".into()));
        }
        let mut sols = file.solutions.into_iter();
        let mut cells = Vec::with_capacity(file.cell_count);
        for k in 0..file.cell_count {
            if bytes[k / 8] >> (k % 8) & 1 == 1 {
                let s = sols.next().ok_or_else(|| Error::Corrupt("fewer solutions than feasible cells".into()))?;
                cells.push(Some(s));
            } else {
                cells.push(None);
            }
        }
        if sols.next().is_some() {
            return Err(Error::Corrupt("more solutions than feasible cells".into()));
        }
        Ok(Self::from_cells(file.grid, file.failure, file.model_hash, cells))
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

    /// Boundary polylines of every slice as CSV in display units.
    pub fn boundary_csv(&self) -> String {
        let mut s = String::from("gamma_deg,contour,v_kt,psi_dot_deg_s\n");
        for ig in 0..self.grid.gamma.count() {
            let gamma = self.grid.gamma.at(ig);
            for (c, poly) in self.slice_boundary(gamma).iter().enumerate() {
                for &(v, pd) in poly.iter().chain(poly.first()) {
                    s.push_str(&format!(
                        "{:.4},{},{:.4},{:.4}\n",
                        gamma.to_degrees(),
                        c,
                        crate::units::mps_to_kt(v),
                        pd.to_degrees()
                    ));
                }
            }
        }
        s
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EnvelopeFile {
    schema_version: u32,
    grid: GridSpec,
    failure: FailureSpec,
    model_hash: String,
    cell_count: usize,
    /// Feasibility bits, cell `k` in bit `k % 8` of byte `k / 8`.
    mask: String,
    /// Summaries of the feasible cells in index order.
    solutions: Vec<CellSummary>,
}

/// Catmull-Rom weights for samples `i-1, i, i+1, i+2` at fraction `t` and
/// their derivatives in `t`. The interpolant is C1 and passes through the
/// samples.
fn catmull_rom(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}
