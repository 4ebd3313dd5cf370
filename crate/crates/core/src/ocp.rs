//! Point-mass descent problem on one LGR phase.
//!
//! States are `(x, y, z, psi)` with `z` positive down, controls are
//! `(V, gamma, psi_dot)` and the final time is free. Two NLP views are
//! provided over the same discretisation:
//!
//! * [`TranscribedNlp`] keeps states and controls as variables with the
//!   collocation defects as equality constraints.
//! * [`CondensedNlp`] eliminates the states through the LGR integration
//!   matrix, leaving `3N + 1` variables; this is the one that is solved.
//!
//! Both share the cost, the envelope and terrain path constraints and the
//! boundary conditions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collocation::CollocationGrid;
use crate::envelope::ManeuveringFlightEnvelope;
use crate::error::{Error, Result};
use crate::nlpsolve::Nlp;
use crate::terrain::TerrainModel;

pub const NUM_STATES: usize = 4;
pub const NUM_CONTROLS: usize = 3;

const POS_SCALE: f64 = 1000.0;

/// `(x_dot, y_dot, z_dot, psi_dot)` for `state = (x, y, z, psi)` and
/// `control = (V, gamma, psi_dot)`.
pub fn dynamics_rhs(state: &[f64; 4], control: &[f64; 3]) -> [f64; 4] {
    let psi = state[3];
    let [v, gamma, psi_dot] = *control;
    let (sg, cg) = gamma.sin_cos();
    let (sp, cp) = psi.sin_cos();
    [v * cg * cp, v * cg * sp, -v * sg, psi_dot]
}

/// Diagonal of the control weighting matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub v: f64,
    pub gamma: f64,
    pub psi_dot: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            v: 1.0 / (100.0f64).powi(2),
            gamma: 1.0 / 5f64.to_radians().powi(2),
            psi_dot: 1.0 / 5f64.to_radians().powi(2),
        }
    }
}

impl CostWeights {
    fn as_array(&self) -> [f64; 3] {
        [self.v, self.gamma, self.psi_dot]
    }

    pub fn running(&self, u: &[f64; 3]) -> f64 {
        self.v * u[0] * u[0] + self.gamma * u[1] * u[1] + self.psi_dot * u[2] * u[2]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TerminalCondition {
    pub position: Option<[f64; 2]>,
    pub z: Option<f64>,
    pub psi: Option<f64>,
}

impl TerminalCondition {
    pub fn count(&self) -> usize {
        2 * self.position.is_some() as usize + self.z.is_some() as usize + self.psi.is_some() as usize
    }
}

/// Soft pull of the final horizontal position towards `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proximity {
    pub target: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct PlannerProblem {
    /// `(x, y, z, psi)` at `t = 0`.
    pub initial: [f64; 4],
    pub terminal: TerminalCondition,
    pub proximity: Option<Proximity>,
    pub weights: CostWeights,
    pub envelope: Arc<ManeuveringFlightEnvelope>,
    /// Required signed distance inside the envelope, grid cells.
    pub sdf_margin: f64,
    pub terrain: Arc<TerrainModel>,
    pub clearance: f64,
    /// Extra clearance demanded at the collocation points after the
    /// first, m. Covers the terrain between points.
    pub terrain_buffer: f64,
    pub control_lower: [f64; 3],
    pub control_upper: [f64; 3],
    pub tf_bounds: (f64, f64),
}

impl PlannerProblem {
    /// Control bounds default to the box spanned by the feasible cells of
    /// `envelope`.
    pub fn new(
        initial: [f64; 4],
        terminal: TerminalCondition,
        envelope: Arc<ManeuveringFlightEnvelope>,
        terrain: Arc<TerrainModel>,
        clearance: f64,
    ) -> Result<Self> {
        let b = envelope
            .feasible_bounds()
            .ok_or_else(|| Error::InvalidInput("the envelope has no feasible cells".into()))?;
        Ok(Self {
            initial,
            terminal,
            proximity: None,
            weights: CostWeights::default(),
            envelope,
            sdf_margin: 1.0,
            terrain,
            clearance,
            terrain_buffer: 0.0,
            control_lower: [b[0].0, b[1].0, b[2].0],
            control_upper: [b[0].1, b[1].1, b[2].1],
            tf_bounds: (1.0, 1e5),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.initial.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("initial state is not finite".into()));
        }
        for k in 0..3 {
            if !(self.control_lower[k] <= self.control_upper[k]) {
                return Err(Error::InvalidInput("control bounds are inverted".into()));
            }
        }
        if !(self.terrain_buffer >= 0.0) {
            return Err(Error::InvalidInput("terrain buffer must be non-negative".into()));
        }
        if !(self.tf_bounds.0 > 0.0 && self.tf_bounds.1 > self.tf_bounds.0) {
            return Err(Error::InvalidInput("final-time bounds must be positive and ordered".into()));
        }
        let margin = self.terrain_margin(self.initial[0], self.initial[1], self.initial[2]);
        if margin < 0.0 {
            return Err(Error::InvalidInput(format!(
                "initial state violates the terrain clearance by {:.1} m",
                -margin
            )));
        }
        Ok(())
    }

    pub fn terrain_margin(&self, x: f64, y: f64, z: f64) -> f64 {
        self.terrain.clearance_margin(x, y, -z, self.clearance)
    }

    /// Terrain constraint value at support point `i`: the margin less the
    /// buffer everywhere except at the fixed initial point.
    pub fn node_terrain_margin(&self, i: usize, x: f64, y: f64, z: f64) -> f64 {
        let m = self.terrain_margin(x, y, z);
        if i == 0 {
            m
        } else {
            m - self.terrain_buffer
        }
    }

    /// Signed distance minus the required margin.
    pub fn envelope_margin(&self, u: &[f64; 3]) -> f64 {
        self.envelope.signed_distance(u[0], u[1], u[2]) - self.sdf_margin
    }
}

/// Discrete solution on one grid: controls at the `N` collocation points,
/// states at the `N + 1` support points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSolution {
    pub tf: f64,
    pub controls: [Vec<f64>; 3],
    pub states: [Vec<f64>; 4],
}

impl PhaseSolution {
    pub fn len(&self) -> usize {
        self.controls[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn control(&self, i: usize) -> [f64; 3] {
        [self.controls[0][i], self.controls[1][i], self.controls[2][i]]
    }

    pub fn state(&self, k: usize) -> [f64; 4] {
        [self.states[0][k], self.states[1][k], self.states[2][k], self.states[3][k]]
    }

    pub fn final_state(&self) -> [f64; 4] {
        self.state(self.len())
    }

    /// Times of the support points.
    pub fn times(&self, grid: &CollocationGrid) -> Vec<f64> {
        grid.support().iter().map(|t| 0.5 * self.tf * (t + 1.0)).collect()
    }

    /// State and control interpolants at `m` evenly spaced times, endpoints
    /// included. Controls are extrapolated past the last collocation point.
    pub fn sample(&self, grid: &CollocationGrid, m: usize) -> Vec<(f64, [f64; 4], [f64; 3])> {
        let m = m.max(2);
        (0..m)
            .map(|k| {
                let tau = -1.0 + 2.0 * k as f64 / (m - 1) as f64;
                let s = std::array::from_fn(|j| grid.interpolate_state(&self.states[j], tau));
                let u = std::array::from_fn(|j| grid.interpolate_control(&self.controls[j], tau));
                (0.5 * self.tf * (tau + 1.0), s, u)
            })
            .collect()
    }

    /// Control-effort cost plus the proximity term.
    pub fn cost(&self, problem: &PlannerProblem, grid: &CollocationGrid) -> f64 {
        let running: f64 = (0..self.len())
            .map(|i| grid.weights()[i] * problem.weights.running(&self.control(i)))
            .sum();
        let mut j = 0.5 * self.tf * running;
        if let Some(p) = problem.proximity {
            let f = self.final_state();
            j += p.weight * ((f[0] - p.target[0]).powi(2) + (f[1] - p.target[1]).powi(2));
        }
        j
    }

    /// Control-effort part of the cost only.
    pub fn control_cost(&self, problem: &PlannerProblem, grid: &CollocationGrid) -> f64 {
        let running: f64 = (0..self.len())
            .map(|i| grid.weights()[i] * problem.weights.running(&self.control(i)))
            .sum();
        0.5 * self.tf * running
    }

    /// Largest collocation defect `|D X - (tf/2) f|` with positions in km
    /// and heading in rad, the scaling used by the solver.
    pub fn max_defect(&self, grid: &CollocationGrid) -> f64 {
        let half = 0.5 * self.tf;
        let derivs: Vec<Vec<f64>> = (0..4).map(|j| grid.differentiate(&self.states[j])).collect();
        let mut worst = 0f64;
        for i in 0..self.len() {
            let f = dynamics_rhs(&self.state(i), &self.control(i));
            for j in 0..4 {
                let scale = if j < 3 { POS_SCALE } else { 1.0 };
                worst = worst.max((derivs[j][i] - half * f[j]).abs() / scale);
            }
        }
        worst
    }

    /// Flattened variable vector in the [`TranscribedNlp`] layout.
    pub fn to_transcribed(&self) -> Vec<f64> {
        let mut z: Vec<f64> = self.states.iter().flatten().copied().collect();
        z.extend(self.controls.iter().flatten());
        z.push(self.tf);
        z
    }

    pub fn from_transcribed(z: &[f64], n: usize) -> Result<Self> {
        if z.len() != 7 * n + 5 {
            return Err(Error::InvalidInput(format!("expected {} variables, got {}", 7 * n + 5, z.len())));
        }
        let s = 4 * (n + 1);
        Ok(Self {
            tf: z[7 * n + 4],
            states: std::array::from_fn(|j| z[j * (n + 1)..(j + 1) * (n + 1)].to_vec()),
            controls: std::array::from_fn(|c| z[s + c * n..s + (c + 1) * n].to_vec()),
        })
    }
}

/// Lifts a solution onto a different grid by evaluating its state and
/// control interpolants at the new points.
pub fn warm_start(old: &PhaseSolution, old_grid: &CollocationGrid, new_grid: &CollocationGrid) -> PhaseSolution {
    let states = std::array::from_fn(|j| {
        new_grid
            .support()
            .iter()
            .map(|&t| old_grid.interpolate_state(&old.states[j], t))
            .collect()
    });
    let controls = std::array::from_fn(|c| {
        new_grid
            .nodes()
            .iter()
            .map(|&t| old_grid.interpolate_control(&old.controls[c], t))
            .collect()
    });
    PhaseSolution {
        tf: old.tf,
        controls,
        states,
    }
}

/// Full-space transcription. Variables: `x, y, z, psi` at the `N + 1`
/// support points (state-major), then `V, gamma, psi_dot` at the `N`
/// collocation points (control-major), then `tf`. Equalities: `4N`
/// defects (state-major), 4 initial conditions, the terminal conditions.
/// Inequalities: `N` envelope margins, then `N` terrain margins.
pub struct TranscribedNlp<'a> {
    pub problem: &'a PlannerProblem,
    pub grid: &'a CollocationGrid,
}

impl TranscribedNlp<'_> {
    fn n(&self) -> usize {
        self.grid.len()
    }
}

impl Nlp for TranscribedNlp<'_> {
    fn num_vars(&self) -> usize {
        7 * self.n() + 5
    }

    fn num_eq(&self) -> usize {
        4 * self.n() + 4 + self.problem.terminal.count()
    }

    fn num_ineq(&self) -> usize {
        2 * self.n()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        let p = self.problem;
        let mut lo = vec![f64::NEG_INFINITY; 4 * (n + 1)];
        let mut hi = vec![f64::INFINITY; 4 * (n + 1)];
        for c in 0..3 {
            lo.extend(std::iter::repeat_n(p.control_lower[c], n));
            hi.extend(std::iter::repeat_n(p.control_upper[c], n));
        }
        lo.push(p.tf_bounds.0);
        hi.push(p.tf_bounds.1);
        (lo, hi)
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let sol = PhaseSolution::from_transcribed(z, self.n()).expect("layout");
        sol.cost(self.problem, self.grid)
    }

    fn constraints(&self, z: &[f64], c_eq: &mut [f64], c_in: &mut [f64]) {
        let n = self.n();
        let p = self.problem;
        let sol = PhaseSolution::from_transcribed(z, n).expect("layout");
        let half = 0.5 * sol.tf;
        for j in 0..4 {
            let d = self.grid.differentiate(&sol.states[j]);
            for i in 0..n {
                let f = dynamics_rhs(&sol.state(i), &sol.control(i));
                c_eq[j * n + i] = d[i] - half * f[j];
            }
        }
        let mut k = 4 * n;
        for j in 0..4 {
            c_eq[k] = sol.states[j][0] - p.initial[j];
            k += 1;
        }
        let last = sol.final_state();
        for (val, target) in terminal_residuals(&p.terminal, &last) {
            c_eq[k] = val - target;
            k += 1;
        }
        for i in 0..n {
            let s = sol.state(i);
            c_in[i] = p.envelope_margin(&sol.control(i));
            c_in[n + i] = p.node_terrain_margin(i, s[0], s[1], s[2]);
        }
    }
}

fn terminal_residuals(t: &TerminalCondition, last: &[f64; 4]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(4);
    if let Some([x, y]) = t.position {
        out.push((last[0], x));
        out.push((last[1], y));
    }
    if let Some(z) = t.z {
        out.push((last[2], z));
    }
    if let Some(psi) = t.psi {
        out.push((last[3], psi));
    }
    out
}

/// States at the support points implied by the controls. Rows of `a` map
/// derivative samples to increments at support points `1..=N`.
fn propagate(initial: &[f64; 4], a: &DMatrix<f64>, controls: &[Vec<f64>; 3], tf: f64) -> [Vec<f64>; 4] {
    let n = controls[0].len();
    let half = 0.5 * tf;
    let w = DVector::from_column_slice(&controls[2]);
    let psi_inc = a * &w;
    let mut psi = Vec::with_capacity(n + 1);
    psi.push(initial[3]);
    psi.extend(psi_inc.iter().map(|d| initial[3] + half * d));
    let mut fx = DVector::zeros(n);
    let mut fy = DVector::zeros(n);
    let mut fz = DVector::zeros(n);
    for i in 0..n {
        let f = dynamics_rhs(&[0.0, 0.0, 0.0, psi[i]], &[controls[0][i], controls[1][i], controls[2][i]]);
        fx[i] = f[0];
        fy[i] = f[1];
        fz[i] = f[2];
    }
    let mut out: [Vec<f64>; 4] = Default::default();
    for (j, f) in [fx, fy, fz].into_iter().enumerate() {
        let inc = a * f;
        out[j] = std::iter::once(initial[j])
            .chain(inc.iter().map(|d| initial[j] + half * d))
            .collect();
    }
    out[3] = psi;
    out
}

/// Affine map between solver variables and physical controls and `tf`:
/// `u = center + unit * xi`, `tf = tf_unit * xi_tf`.
#[derive(Debug, Clone)]
pub struct Scaling {
    pub center: [f64; 3],
    pub unit: [f64; 3],
    pub tf: f64,
}

/// Condensed transcription. Variables are the scaled controls
/// (control-major, `N` each) followed by the scaled final time. The
/// collocation defects are satisfied identically.
pub struct CondensedNlp<'a> {
    pub problem: &'a PlannerProblem,
    pub grid: &'a CollocationGrid,
    integ: DMatrix<f64>,
    /// `integ` shifted down by one row with a zero first row: maps
    /// derivative samples to increments at the collocation points.
    integ_nodes: DMatrix<f64>,
    scaling: Scaling,
    obj_scale: f64,
}

impl<'a> CondensedNlp<'a> {
    pub fn new(problem: &'a PlannerProblem, grid: &'a CollocationGrid, reference: &PhaseSolution) -> Result<Self> {
        problem.validate()?;
        if reference.len() != grid.len() {
            return Err(Error::InvalidInput("reference solution does not match the grid".into()));
        }
        let n = grid.len();
        let integ = grid.integration_matrix()?;
        let mut integ_nodes = DMatrix::zeros(n, n);
        integ_nodes.view_mut((1, 0), (n - 1, n)).copy_from(&integ.rows(0, n - 1));
        let center = std::array::from_fn(|k| 0.5 * (problem.control_lower[k] + problem.control_upper[k]));
        let unit =
            std::array::from_fn(|k| (0.5 * (problem.control_upper[k] - problem.control_lower[k])).max(1e-3));
        let scaling = Scaling {
            center,
            unit,
            tf: reference.tf.max(1.0),
        };
        let mut nlp = Self {
            problem,
            grid,
            integ,
            integ_nodes,
            scaling,
            obj_scale: 1.0,
        };
        let j0 = nlp.solution(&nlp.encode(reference)).cost(problem, grid);
        nlp.obj_scale = 1.0 / j0.abs().max(1.0);
        nlp.rescale(reference);
        Ok(nlp)
    }

    /// Shrinks the variable units until no single variable moves a
    /// scaled constraint by more than one unit per unit step at the
    /// reference point.
    fn rescale(&mut self, reference: &PhaseSolution) {
        let n = self.grid.len();
        let x = self.encode(reference);
        let mut je = DMatrix::zeros(self.num_eq(), 3 * n + 1);
        let mut ji = DMatrix::zeros(self.num_ineq(), 3 * n + 1);
        self.jacobian(&x, &mut je, &mut ji);
        let column_size = |k: usize| {
            let eq = je.column(k).amax();
            let terrain = ji.view((n, k), (n, 1)).amax();
            eq.max(terrain)
        };
        let group_size = |range: std::ops::Range<usize>| range.map(column_size).fold(0.0, f64::max);
        for c in 0..3 {
            let m = group_size(c * n..(c + 1) * n);
            if m > 1.0 {
                self.scaling.unit[c] /= m;
            }
        }
        let m = column_size(3 * n);
        if m > 1.0 {
            self.scaling.tf /= m;
        }
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn encode(&self, sol: &PhaseSolution) -> Vec<f64> {
        let s = &self.scaling;
        let mut x = Vec::with_capacity(3 * sol.len() + 1);
        for c in 0..3 {
            x.extend(sol.controls[c].iter().map(|u| (u - s.center[c]) / s.unit[c]));
        }
        x.push(sol.tf / s.tf);
        x
    }

    fn decode(&self, x: &[f64]) -> ([Vec<f64>; 3], f64) {
        let n = self.grid.len();
        let s = &self.scaling;
        let controls = std::array::from_fn(|c| {
            x[c * n..(c + 1) * n]
                .iter()
                .map(|v| s.center[c] + s.unit[c] * v)
                .collect()
        });
        (controls, x[3 * n] * s.tf)
    }

    pub fn solution(&self, x: &[f64]) -> PhaseSolution {
        let (controls, tf) = self.decode(x);
        let states = propagate(&self.problem.initial, &self.integ, &controls, tf);
        PhaseSolution { tf, controls, states }
    }

    /// Derivatives of the support-point states `1..=N` with respect to the
    /// physical controls and `tf`: `(dx, dy, dz, dpsi)`, each `N x (3N + 1)`.
    fn state_jacobians(&self, sol: &PhaseSolution) -> [DMatrix<f64>; 4] {
        let n = self.grid.len();
        let half = 0.5 * sol.tf;
        let a = &self.integ;
        let an = &self.integ_nodes;
        let w = DVector::from_column_slice(&sol.controls[2]);
        let dpsi_nodes_dtf = an * &w * 0.5;
        let mut out: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::zeros(n, 3 * n + 1));

        let mut f = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        let mut df_dv = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        let mut df_dg = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
        let mut df_dpsi = [DVector::zeros(n), DVector::zeros(n)];
        for i in 0..n {
            let [v, g, _] = sol.control(i);
            let psi = sol.states[3][i];
            let (sg, cg) = g.sin_cos();
            let (sp, cp) = psi.sin_cos();
            f[0][i] = v * cg * cp;
            f[1][i] = v * cg * sp;
            f[2][i] = -v * sg;
            df_dv[0][i] = cg * cp;
            df_dv[1][i] = cg * sp;
            df_dv[2][i] = -sg;
            df_dg[0][i] = -v * sg * cp;
            df_dg[1][i] = -v * sg * sp;
            df_dg[2][i] = -v * cg;
            df_dpsi[0][i] = -v * cg * sp;
            df_dpsi[1][i] = v * cg * cp;
        }
        for j in 0..3 {
            let m = &mut out[j];
            for col in 0..n {
                for row in 0..n {
                    m[(row, col)] = half * a[(row, col)] * df_dv[j][col];
                    m[(row, n + col)] = half * a[(row, col)] * df_dg[j][col];
                }
            }
            let mut dtf = a * &f[j] * 0.5;
            if j < 2 {
                // heading coupling
                let mut scaled = an.clone();
                for r in 0..n {
                    let s = df_dpsi[j][r];
                    scaled.row_mut(r).scale_mut(s);
                }
                let dw = a * scaled * (half * half);
                m.view_mut((0, 2 * n), (n, n)).copy_from(&dw);
                let coupling = df_dpsi[j].component_mul(&dpsi_nodes_dtf);
                dtf += a * coupling * half;
            }
            m.column_mut(3 * n).copy_from(&dtf);
        }
        let m = &mut out[3];
        m.view_mut((0, 2 * n), (n, n)).copy_from(&(a * half));
        let dtf = a * &w * 0.5;
        m.column_mut(3 * n).copy_from(&dtf);
        out
    }

    /// Minimum-norm Gauss-Newton steps on the terminal equalities, kept
    /// inside the bounds.
    pub fn close_terminal_gap(&self, mut x: Vec<f64>, iterations: usize) -> Vec<f64> {
        let (n, me, mi) = (self.num_vars(), self.num_eq(), self.num_ineq());
        if me == 0 {
            return x;
        }
        let (lo, hi) = self.bounds();
        let mut ce = vec![0.0; me];
        let mut ci = vec![0.0; mi];
        let mut je = DMatrix::zeros(me, n);
        let mut ji = DMatrix::zeros(mi, n);
        for _ in 0..iterations {
            self.constraints(&x, &mut ce, &mut ci);
            if ce.iter().all(|c| c.abs() < 1e-9) {
                break;
            }
            self.jacobian(&x, &mut je, &mut ji);
            let jjt = &je * je.transpose();
            let Some(chol) = jjt.cholesky() else { break };
            let step = je.transpose() * chol.solve(&DVector::from_column_slice(&ce));
            for k in 0..n {
                x[k] = (x[k] - step[k]).clamp(lo[k], hi[k]);
            }
        }
        x
    }

    fn num_terminal(&self) -> usize {
        self.problem.terminal.count()
    }

    fn scaled_terminal(&self, t: &TerminalCondition) -> Vec<f64> {
        let mut s = Vec::new();
        if t.position.is_some() {
            s.extend([POS_SCALE, POS_SCALE]);
        }
        if t.z.is_some() {
            s.push(POS_SCALE);
        }
        if t.psi.is_some() {
            s.push(1.0);
        }
        s
    }

    fn variable_scales(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut s = Vec::with_capacity(3 * n + 1);
        for c in 0..3 {
            s.extend(std::iter::repeat_n(self.scaling.unit[c], n));
        }
        s.push(self.scaling.tf);
        s
    }
}

impl Nlp for CondensedNlp<'_> {
    fn num_vars(&self) -> usize {
        3 * self.grid.len() + 1
    }

    fn num_eq(&self) -> usize {
        self.num_terminal()
    }

    fn num_ineq(&self) -> usize {
        2 * self.grid.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let p = self.problem;
        let s = &self.scaling;
        let mut lo = Vec::with_capacity(3 * n + 1);
        let mut hi = Vec::with_capacity(3 * n + 1);
        for c in 0..3 {
            let l = (p.control_lower[c] - s.center[c]) / s.unit[c];
            let h = (p.control_upper[c] - s.center[c]) / s.unit[c];
            lo.extend(std::iter::repeat_n(l, n));
            hi.extend(std::iter::repeat_n(h, n));
        }
        lo.push(p.tf_bounds.0 / s.tf);
        hi.push(p.tf_bounds.1 / s.tf);
        (lo, hi)
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.solution(x).cost(self.problem, self.grid) * self.obj_scale
    }

    fn constraints(&self, x: &[f64], c_eq: &mut [f64], c_in: &mut [f64]) {
        let n = self.grid.len();
        let p = self.problem;
        let sol = self.solution(x);
        let last = sol.final_state();
        let scales = self.scaled_terminal(&p.terminal);
        for (k, (val, target)) in terminal_residuals(&p.terminal, &last).into_iter().enumerate() {
            c_eq[k] = (val - target) / scales[k];
        }
        for i in 0..n {
            let s = sol.state(i);
            c_in[i] = p.envelope_margin(&sol.control(i));
            c_in[n + i] = p.node_terrain_margin(i, s[0], s[1], s[2]) / POS_SCALE;
        }
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let n = self.grid.len();
        let p = self.problem;
        let sol = self.solution(x);
        let half = 0.5 * sol.tf;
        let r = p.weights.as_array();
        let wts = self.grid.weights();
        let mut running = 0.0;
        for i in 0..n {
            let u = sol.control(i);
            for c in 0..3 {
                g[c * n + i] = half * wts[i] * 2.0 * r[c] * u[c];
            }
            running += wts[i] * p.weights.running(&u);
        }
        g[3 * n] = 0.5 * running;
        if let Some(prox) = p.proximity {
            let jac = self.state_jacobians(&sol);
            let last = sol.final_state();
            let ex = 2.0 * prox.weight * (last[0] - prox.target[0]);
            let ey = 2.0 * prox.weight * (last[1] - prox.target[1]);
            for (k, gk) in g.iter_mut().enumerate().take(3 * n + 1) {
                *gk += ex * jac[0][(n - 1, k)] + ey * jac[1][(n - 1, k)];
            }
        }
        for (gk, s) in g.iter_mut().zip(self.variable_scales()) {
            *gk *= s * self.obj_scale;
        }
    }

    fn jacobian(&self, x: &[f64], j_eq: &mut DMatrix<f64>, j_in: &mut DMatrix<f64>) {
        let n = self.grid.len();
        let p = self.problem;
        let sol = self.solution(x);
        let jac = self.state_jacobians(&sol);
        j_eq.fill(0.0);
        j_in.fill(0.0);
        let mut row = 0;
        let last_row = |m: &DMatrix<f64>, j: &mut DMatrix<f64>, r: usize, scale: f64| {
            for k in 0..3 * n + 1 {
                j[(r, k)] = m[(n - 1, k)] / scale;
            }
        };
        if p.terminal.position.is_some() {
            last_row(&jac[0], j_eq, row, POS_SCALE);
            last_row(&jac[1], j_eq, row + 1, POS_SCALE);
            row += 2;
        }
        if p.terminal.z.is_some() {
            last_row(&jac[2], j_eq, row, POS_SCALE);
            row += 1;
        }
        if p.terminal.psi.is_some() {
            last_row(&jac[3], j_eq, row, 1.0);
        }
        for i in 0..n {
            let u = sol.control(i);
            let (_, gs) = p.envelope.signed_distance_with_gradient(u[0], u[1], u[2]);
            for c in 0..3 {
                j_in[(i, c * n + i)] = gs[c];
            }
            if i == 0 {
                continue;
            }
            let s = sol.state(i);
            let (_, gt) = p.terrain.height_and_gradient(s[0], s[1]);
            // margin = -z - terrain(x, y) - clearance
            for k in 0..3 * n + 1 {
                j_in[(n + i, k)] =
                    (-jac[2][(i - 1, k)] - gt[0] * jac[0][(i - 1, k)] - gt[1] * jac[1][(i - 1, k)]) / POS_SCALE;
            }
        }
        let scales = self.variable_scales();
        for (k, s) in scales.iter().enumerate() {
            j_eq.column_mut(k).scale_mut(*s);
            j_in.column_mut(k).scale_mut(*s);
        }
    }

    /// Hessian of the control effort plus the Gauss-Newton term of the
    /// proximity penalty. The effort is bilinear in `tf` and the squared
    /// controls, so its exact Hessian is indefinite; the `tf` diagonal gets
    /// the Schur complement term that makes the block positive
    /// semidefinite.
    fn objective_hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.grid.len();
        let p = self.problem;
        let sol = self.solution(x);
        let r = p.weights.as_array();
        let wts = self.grid.weights();
        let mut h = DMatrix::zeros(3 * n + 1, 3 * n + 1);
        for i in 0..n {
            let u = sol.control(i);
            for c in 0..3 {
                let k = c * n + i;
                h[(k, k)] = sol.tf * wts[i] * r[c];
                h[(k, 3 * n)] = wts[i] * r[c] * u[c];
                h[(3 * n, k)] = h[(k, 3 * n)];
                h[(3 * n, 3 * n)] += h[(k, 3 * n)].powi(2) / h[(k, k)];
            }
        }
        if let Some(prox) = p.proximity {
            let jac = self.state_jacobians(&sol);
            for j in 0..2 {
                let row = jac[j].row(n - 1).transpose();
                h.ger(2.0 * prox.weight, &row, &row, 1.0);
            }
        }
        let scales = DVector::from_vec(self.variable_scales());
        for k in 0..3 * n + 1 {
            h.column_mut(k).component_mul_assign(&scales);
            h.row_mut(k).component_mul_assign(&scales.transpose());
        }
        Some(h * self.obj_scale)
    }
}

/// Constant-control arcs and turn-then-straight paths scored on the target
/// grid; the best one seeds the solver.
pub fn initial_guess(problem: &PlannerProblem, grid: &CollocationGrid) -> Result<PhaseSolution> {
    problem.validate()?;
    let integ = grid.integration_matrix()?;
    let n = grid.len();
    let p = problem;
    let [x0, y0, z0, psi0] = p.initial;
    let (g_lo, g_hi) = (p.control_lower[1], p.control_upper[1].min(0.0));
    let z_target = p.terminal.z;
    let horizontal_target = p.terminal.position.or(p.proximity.map(|q| q.target));

    let v_choices: Vec<f64> = (0..=8)
        .map(|k| p.control_lower[0] + (p.control_upper[0] - p.control_lower[0]) * k as f64 / 8.0)
        .collect();
    let max_turn = (n as f64 * PI / 3.0).max(2.0 * PI);

    let mut candidates: Vec<(f64, [f64; 3], f64, f64)> = Vec::new(); // (t_switch, u, w_after, tf)
    let push_arc = |c: &mut Vec<_>, v: f64, gamma: f64, w: f64, t1: f64, tf: f64| {
        if tf.is_finite() && tf > 0.0 {
            c.push((t1, [v, gamma, w], 0.0, tf));
        }
    };

    let drop = z_target.map(|zt| zt - z0); // positive when descending
    let gamma_for = |length: f64| -> Option<f64> {
        match drop {
            Some(dz) if length > 0.0 => {
                let g = -(dz / length).atan();
                (g >= g_lo - 1e-12 && g <= p.control_upper[1] + 1e-12).then_some(g)
            }
            Some(_) => None,
            None => Some(g_lo.max(-5f64.to_radians()).min(g_hi)),
        }
    };

    match horizontal_target {
        Some([xt, yt]) if p.terminal.position.is_some() => {
            let (dx, dy) = (xt - x0, yt - y0);
            let (sp, cp) = psi0.sin_cos();
            for &v in &v_choices {
                // single arc through the target, possibly with extra loops
                for side in [1.0f64, -1.0] {
                    let nx = -sp * side;
                    let ny = cp * side;
                    let lateral = dx * nx + dy * ny;
                    if lateral.abs() < 1e-9 {
                        continue;
                    }
                    let r = (dx * dx + dy * dy) / (2.0 * lateral);
                    if r <= 0.0 {
                        continue;
                    }
                    let (cx, cy) = (x0 + r * nx, y0 + r * ny);
                    let a0 = (y0 - cy).atan2(x0 - cx);
                    let a1 = (yt - cy).atan2(xt - cx);
                    let mut sweep = side * (a1 - a0);
                    sweep = sweep.rem_euclid(2.0 * PI);
                    let mut k = 0.0;
                    while sweep + 2.0 * PI * k <= max_turn {
                        let length = r * (sweep + 2.0 * PI * k);
                        if let Some(g) = gamma_for(length) {
                            let tf = length / (v * g.cos());
                            push_arc(&mut candidates, v, g, side * v * g.cos() / r, tf, tf);
                        }
                        k += 1.0;
                    }
                }
                // turn (with loops) then straight to the target
                for r in [1500.0, 2500.0, 4000.0, 6000.0, 9000.0] {
                    for side in [1.0f64, -1.0] {
                        let (cx, cy) = (x0 - sp * side * r, y0 + cp * side * r);
                        let (ex, ey) = (xt - cx, yt - cy);
                        let d = (ex * ex + ey * ey).sqrt();
                        if d <= r {
                            continue;
                        }
                        // tangent point leaving the circle towards the target
                        let straight = (d * d - r * r).sqrt();
                        let beta = (r / d).asin();
                        let bearing = ey.atan2(ex);
                        let heading_out = bearing + side * beta;
                        let turn = side * (heading_out - psi0);
                        let turn = turn.rem_euclid(2.0 * PI);
                        let mut k = 0.0;
                        while turn + 2.0 * PI * k <= max_turn {
                            let arc = r * (turn + 2.0 * PI * k);
                            let length = arc + straight;
                            if let Some(g) = gamma_for(length) {
                                let vh = v * g.cos();
                                let tf = length / vh;
                                candidates.push((arc / vh, [v, g, side * vh / r], 0.0, tf));
                            }
                            k += 1.0;
                        }
                    }
                }
            }
        }
        _ => {
            // no fixed end point: steady turns of various rates
            let dz = drop.unwrap_or(200.0);
            let g = g_lo.max(-5f64.to_radians()).min(g_hi);
            let length = if g < 0.0 { dz / (-g).tan() } else { 1000.0 };
            for &v in &v_choices {
                for w_frac in [-0.6, -0.3, -0.1, 0.0, 0.1, 0.3, 0.6] {
                    let w = if w_frac < 0.0 { -w_frac * p.control_lower[2] } else { w_frac * p.control_upper[2] };
                    let tf = length / (v * g.cos());
                    push_arc(&mut candidates, v, g, w, tf, tf);
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no initial guess satisfies the flight-path limits".into()));
    }

    let mut best: Option<(f64, PhaseSolution)> = None;
    for (t1, u, w_after, tf) in candidates {
        if tf < p.tf_bounds.0 || tf > p.tf_bounds.1 {
            continue;
        }
        let blend = 0.02 * tf;
        let mut controls: [Vec<f64>; 3] = Default::default();
        for &tau in grid.nodes() {
            let t = 0.5 * tf * (tau + 1.0);
            let s = if t1 >= tf { 1.0 } else { 0.5 * (1.0 - ((t - t1) / blend).tanh()) };
            controls[0].push(u[0]);
            controls[1].push(u[1]);
            controls[2].push(s * u[2] + (1.0 - s) * w_after);
        }
        let states = propagate(&[x0, y0, z0, psi0], &integ, &controls, tf);
        let sol = PhaseSolution { tf, controls, states };
        let score = guess_score(p, &sol, grid);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, sol));
        }
    }
    let (_, sol) = best.ok_or_else(|| Error::InvalidInput("no initial guess fits the final-time bounds".into()))?;
    let nlp = CondensedNlp::new(p, grid, &sol)?;
    let x = nlp.close_terminal_gap(nlp.encode(&sol), 10);
    Ok(nlp.solution(&x))
}

fn guess_score(p: &PlannerProblem, sol: &PhaseSolution, grid: &CollocationGrid) -> f64 {
    let last = sol.final_state();
    let miss: f64 = terminal_residuals(&p.terminal, &last)
        .iter()
        .map(|(v, t)| (v - t).abs())
        .sum();
    let mut terrain = 0.0;
    for (_, s, _) in sol.sample(grid, 4 * sol.len()) {
        terrain += (-p.terrain_margin(s[0], s[1], s[2])).max(0.0);
    }
    let envelope: f64 = (0..sol.len()).map(|i| (-p.envelope_margin(&sol.control(i))).max(0.0)).sum();
    let cost = sol.cost(p, grid);
    miss / 100.0 + terrain / 100.0 + 10.0 * envelope + 1e-3 * cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{Axis, GridSpec};
    use crate::flightdyn::FailureSpec;

    /// Envelope feasible everywhere inside a box in `(V, gamma, psi_dot)`.
    pub(crate) fn box_envelope() -> ManeuveringFlightEnvelope {
        let grid = GridSpec {
            altitude: 3000.0,
            v: Axis::new(40.0, 120.0, 2.0),
            gamma: Axis::new(-5f64.to_radians(), 5f64.to_radians(), 1f64.to_radians()),
            psi_dot: Axis::new(-10f64.to_radians(), 10f64.to_radians(), 1f64.to_radians()),
        };
        let cells = (0..grid.len())
            .map(|k| {
                let t = grid.target(k);
                (t.v >= 50.0 && t.v <= 110.0 && t.psi_dot.abs() <= 8f64.to_radians()).then_some({
                    crate::envelope::CellSummary {
                        alpha: 0.0,
                        beta: 0.0,
                        phi: 0.0,
                        theta: 0.0,
                        throttle: 0.5,
                        elevator: 0.0,
                        aileron: 0.0,
                        rudder: 0.0,
                        residual: 0.0,
                        classification: crate::trim::Classification::Stable,
                    }
                })
            })
            .collect();
        ManeuveringFlightEnvelope::from_cells(grid, FailureSpec::None, String::new(), cells)
    }

    fn flat_problem() -> PlannerProblem {
        PlannerProblem::new(
            [0.0, 0.0, -3000.0, 0.0],
            TerminalCondition {
                position: Some([20_000.0, 0.0]),
                z: Some(-1500.0),
                psi: None,
            },
            Arc::new(box_envelope()),
            Arc::new(TerrainModel::flat(0.0, [-5e4, 5e4, -5e4, 5e4])),
            609.6,
        )
        .unwrap()
    }

    #[test]
    fn rhs_values() {
        let f = dynamics_rhs(&[0.0, 0.0, 0.0, 0.0], &[50.0, 0.0, 0.1]);
        assert_eq!(f, [50.0, 0.0, -0.0, 0.1]);
        let g = -3f64.to_radians();
        let f = dynamics_rhs(&[0.0, 0.0, 0.0, PI / 2.0], &[60.0, g, 0.0]);
        assert!(f[0].abs() < 1e-12);
        assert!((f[1] - 60.0 * g.cos()).abs() < 1e-12);
        assert!((f[2] - 60.0 * 3f64.to_radians().sin()).abs() < 1e-12);
    }

    fn straight_line(n: usize, tf: f64) -> (CollocationGrid, PhaseSolution) {
        let grid = CollocationGrid::new(n).unwrap();
        let (v, g) = (60.0, -2f64.to_radians());
        let f = dynamics_rhs(&[0.0; 4], &[v, g, 0.0]);
        let sol = PhaseSolution {
            tf,
            controls: [vec![v; n], vec![g; n], vec![0.0; n]],
            states: std::array::from_fn(|j| {
                grid.support()
                    .iter()
                    .map(|t| {
                        let time = 0.5 * tf * (t + 1.0);
                        [0.0, 0.0, -3000.0, 0.0][j] + f[j] * time
                    })
                    .collect()
            }),
        };
        (grid, sol)
    }

    #[test]
    fn straight_line_has_zero_defects_and_lifts() {
        let (grid, sol) = straight_line(20, 300.0);
        assert!(sol.max_defect(&grid) < 1e-9);
        let fine = CollocationGrid::new(100).unwrap();
        let lifted = warm_start(&sol, &grid, &fine);
        assert!(lifted.max_defect(&fine) <= 1e-8, "{}", lifted.max_defect(&fine));
        assert_eq!(lifted.len(), 100);
    }

    #[test]
    fn transcribed_layout() {
        let p = flat_problem();
        let (grid, sol) = straight_line(12, 300.0);
        let nlp = TranscribedNlp { problem: &p, grid: &grid };
        assert_eq!(nlp.num_vars(), 7 * 12 + 5);
        assert_eq!(nlp.num_eq(), 4 * 12 + 4 + 3);
        assert_eq!(nlp.num_ineq(), 24);
        let z = sol.to_transcribed();
        assert_eq!(PhaseSolution::from_transcribed(&z, 12).unwrap(), sol);
        let mut ce = vec![0.0; nlp.num_eq()];
        let mut ci = vec![0.0; nlp.num_ineq()];
        nlp.constraints(&z, &mut ce, &mut ci);
        assert!(ce[..4 * 12 + 4].iter().all(|c| c.abs() < 1e-8));
        // terminal x residual is the distance still to go
        assert!((ce[52] - (sol.final_state()[0] - 20_000.0)).abs() < 1e-9);
        assert!(ci.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn condensed_states_satisfy_defects() {
        let p = flat_problem();
        let grid = CollocationGrid::new(15).unwrap();
        let guess = initial_guess(&p, &grid).unwrap();
        assert!(guess.max_defect(&grid) < 1e-8);
        let nlp = CondensedNlp::new(&p, &grid, &guess).unwrap();
        let x = nlp.encode(&guess);
        let back = nlp.solution(&x);
        for c in 0..3 {
            for (a, b) in back.controls[c].iter().zip(&guess.controls[c]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn condensed_derivatives_match_differences() {
        let mut p = flat_problem();
        p.proximity = Some(Proximity {
            target: [15_000.0, 3_000.0],
            weight: 1e-6,
        });
        p.terminal.psi = Some(0.3);
        let grid = CollocationGrid::new(9).unwrap();
        let mut guess = initial_guess(&p, &grid).unwrap();
        for i in 0..9 {
            guess.controls[2][i] = 0.01 * (i as f64 - 3.0);
            guess.controls[0][i] += i as f64;
        }
        let nlp = CondensedNlp::new(&p, &grid, &guess).unwrap();
        let x = nlp.encode(&guess);
        let n = nlp.num_vars();
        let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
        let mut g = vec![0.0; n];
        nlp.gradient(&x, &mut g);
        let mut je = DMatrix::zeros(me, n);
        let mut ji = DMatrix::zeros(mi, n);
        nlp.jacobian(&x, &mut je, &mut ji);
        let h = 1e-6;
        for k in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (nlp.objective(&xp) - nlp.objective(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "grad {k}: {fd} vs {}", g[k]);
            let (mut cep, mut cip) = (vec![0.0; me], vec![0.0; mi]);
            let (mut cem, mut cim) = (vec![0.0; me], vec![0.0; mi]);
            nlp.constraints(&xp, &mut cep, &mut cip);
            nlp.constraints(&xm, &mut cem, &mut cim);
            for r in 0..me {
                let fd = (cep[r] - cem[r]) / (2.0 * h);
                assert!((fd - je[(r, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "eq {r},{k}: {fd} vs {}", je[(r, k)]);
            }
            // terrain rows only (flat terrain, smooth)
            for r in 9..mi {
                let fd = (cip[r] - cim[r]) / (2.0 * h);
                assert!((fd - ji[(r, k)]).abs() < 1e-5 * (1.0 + fd.abs()), "in {r},{k}: {fd} vs {}", ji[(r, k)]);
            }
        }
    }

    #[test]
    fn guess_reaches_the_target() {
        let p = flat_problem();
        let grid = CollocationGrid::new(20).unwrap();
        let g = initial_guess(&p, &grid).unwrap();
        let last = g.final_state();
        assert!((last[0] - 20_000.0).abs() < 50.0 && last[1].abs() < 50.0, "{last:?}");
        assert!((last[2] + 1500.0).abs() < 5.0, "{last:?}");
        assert!((0..20).all(|i| p.envelope_margin(&g.control(i)) >= 0.0));
    }

    #[test]
    fn rejects_bad_problems() {
        let mut p = flat_problem();
        p.initial[2] = -100.0;
        assert!(p.validate().is_err());
        let mut p = flat_problem();
        p.tf_bounds = (10.0, 5.0);
        assert!(p.validate().is_err());
    }
}
