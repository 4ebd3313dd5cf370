//! Dense sequential quadratic programming.
//!
//! Each iteration solves a convex QP built from the linearised constraints
//! and a Powell-damped BFGS approximation of the Lagrangian Hessian, then
//! backtracks on the l1 exact-penalty merit function. When the linearised
//! constraints are inconsistent the QP is relaxed with one extra variable
//! that scales down the violated constraints.

pub mod qp;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// A smooth NLP:
///
/// ```text
/// min f(x)  s.t.  c_eq(x) = 0,  c_in(x) >= 0,  lower <= x <= upper
/// ```
///
/// Jacobians are `m x n` (one row per constraint). The default gradient and
/// Jacobian use central differences.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn objective(&self, x: &[f64]) -> f64;
    fn constraints(&self, x: &[f64], c_eq: &mut [f64], c_in: &mut [f64]);

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = self.objective(&xp);
            xp[i] = x[i] - h;
            let fm = self.objective(&xp);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
    }

    fn jacobian(&self, x: &[f64], j_eq: &mut DMatrix<f64>, j_in: &mut DMatrix<f64>) {
        let (me, mi) = (self.num_eq(), self.num_ineq());
        let mut xp = x.to_vec();
        let (mut ep, mut em) = (vec![0.0; me], vec![0.0; me]);
        let (mut ip, mut im) = (vec![0.0; mi], vec![0.0; mi]);
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            self.constraints(&xp, &mut ep, &mut ip);
            xp[i] = x[i] - h;
            self.constraints(&xp, &mut em, &mut im);
            xp[i] = x[i];
            for k in 0..me {
                j_eq[(k, i)] = (ep[k] - em[k]) / (2.0 * h);
            }
            for k in 0..mi {
                j_in[(k, i)] = (ip[k] - im[k]) / (2.0 * h);
            }
        }
    }

    /// Exact (or Gauss-Newton) Hessian of the objective. When provided the
    /// solver models the Lagrangian Hessian as this matrix plus a
    /// symmetric-rank-one estimate of the constraint curvature instead of
    /// a pure BFGS approximation.
    fn objective_hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Optional diagonal used to seed the BFGS matrix.
    fn hessian_diagonal_guess(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    /// Feasible and the objective stopped improving before the KKT
    /// tolerance was met.
    Acceptable,
    MaxIterations,
    Infeasible,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub tol_kkt: f64,
    pub tol_con: f64,
    pub time_budget: Option<Duration>,
    /// Collect a per-iteration log.
    pub log: bool,
    pub armijo: f64,
    pub min_step: f64,
    /// Cap on `||d||_inf` per iteration (in variable units).
    pub max_step: f64,
    /// A feasible iterate whose objective improved by less than this
    /// fraction over the last `stall_window` iterations ends the solve as
    /// [`SolveStatus::Acceptable`].
    pub tol_stall: f64,
    pub stall_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tol_kkt: 1e-6,
            tol_con: 1e-6,
            time_budget: None,
            log: false,
            armijo: 1e-4,
            min_step: 1e-10,
            max_step: f64::INFINITY,
            tol_stall: 1e-6,
            stall_window: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Multipliers {
    fn zeros(n: usize, me: usize, mi: usize) -> Self {
        Self {
            eq: vec![0.0; me],
            ineq: vec![0.0; mi],
            lower: vec![0.0; n],
            upper: vec![0.0; n],
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.eq
            .iter()
            .chain(&self.ineq)
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub cost: f64,
    pub violation: f64,
    pub kkt: f64,
    pub step: f64,
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub multipliers: Multipliers,
    pub status: SolveStatus,
    pub objective: f64,
    pub kkt: f64,
    pub violation: f64,
    pub iterations: usize,
    pub wall_time: Duration,
    pub log: Vec<IterationRecord>,
}

impl NlpResult {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.violation <= tol
    }

    /// Iteration log as CSV.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iter,cost,violation,kkt,step\n");
        for r in &self.log {
            s.push_str(&format!(
                "{},{:.12e},{:.6e},{:.6e},{:.6e}\n",
                r.iter, r.cost, r.violation, r.kkt, r.step
            ));
        }
        s
    }
}

struct Eval {
    f: f64,
    g: DVector<f64>,
    ce: DVector<f64>,
    ci: DVector<f64>,
}

fn evaluate<P: Nlp + ?Sized>(nlp: &P, x: &[f64], with_grad: bool) -> Eval {
    let n = nlp.num_vars();
    let mut ce = vec![0.0; nlp.num_eq()];
    let mut ci = vec![0.0; nlp.num_ineq()];
    nlp.constraints(x, &mut ce, &mut ci);
    let mut g = vec![0.0; if with_grad { n } else { 0 }];
    if with_grad {
        nlp.gradient(x, &mut g);
    }
    Eval {
        f: nlp.objective(x),
        g: DVector::from_vec(g),
        ce: DVector::from_vec(ce),
        ci: DVector::from_vec(ci),
    }
}

fn violation_l1(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter().map(|v| v.abs()).sum::<f64>() + ci.iter().map(|v| (-v).max(0.0)).sum::<f64>()
}

fn violation_inf(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    ce.iter()
        .map(|v| v.abs())
        .chain(ci.iter().map(|v| (-v).max(0.0)))
        .fold(0.0, f64::max)
}

/// Infinity norm of the first-order optimality conditions at `(x, mult)`:
/// Lagrangian gradient, constraint violation and complementarity products.
pub fn kkt_residual<P: Nlp + ?Sized>(nlp: &P, x: &[f64], mult: &Multipliers) -> f64 {
    let n = nlp.num_vars();
    let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
    let ev = evaluate(nlp, x, true);
    let mut je = DMatrix::zeros(me, n);
    let mut ji = DMatrix::zeros(mi, n);
    nlp.jacobian(x, &mut je, &mut ji);
    let (lo, hi) = nlp.bounds();
    kkt_from_parts(&ev, &je, &ji, x, &lo, &hi, mult)
}

fn kkt_from_parts(
    ev: &Eval,
    je: &DMatrix<f64>,
    ji: &DMatrix<f64>,
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    mult: &Multipliers,
) -> f64 {
    let le = DVector::from_column_slice(&mult.eq);
    let li = DVector::from_column_slice(&mult.ineq);
    let mut grad_l = ev.g.clone();
    if !mult.eq.is_empty() {
        grad_l -= je.tr_mul(&le);
    }
    if !mult.ineq.is_empty() {
        grad_l -= ji.tr_mul(&li);
    }
    for i in 0..x.len() {
        grad_l[i] -= mult.lower[i] - mult.upper[i];
    }
    let mut r = grad_l.amax();
    r = r.max(violation_inf(&ev.ce, &ev.ci));
    for (l, c) in mult.ineq.iter().zip(ev.ci.iter()) {
        r = r.max((l * c).abs());
        r = r.max((-l).max(0.0));
    }
    for i in 0..x.len() {
        if lo[i].is_finite() {
            r = r.max((mult.lower[i] * (x[i] - lo[i])).abs());
            r = r.max((lo[i] - x[i]).max(0.0));
        }
        if hi[i].is_finite() {
            r = r.max((mult.upper[i] * (hi[i] - x[i])).abs());
            r = r.max((x[i] - hi[i]).max(0.0));
        }
        r = r.max((-mult.lower[i]).max(0.0)).max((-mult.upper[i]).max(0.0));
    }
    r
}

/// Damped BFGS approximation kept together with its inverse.
pub struct DampedBfgs {
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl DampedBfgs {
    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut b = DMatrix::zeros(n, n);
        let mut h = DMatrix::zeros(n, n);
        for i in 0..n {
            let v = diag[i].max(1e-8);
            b[(i, i)] = v;
            h[(i, i)] = 1.0 / v;
        }
        Self { b, h }
    }

    /// Powell-damped update with step `s` and gradient change `y`. Returns
    /// the damping factor used (1 = undamped).
    pub fn update(&mut self, s: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let bs = &self.b * s;
        let sbs = s.dot(&bs);
        if sbs <= 1e-300 {
            return 1.0;
        }
        let sy = s.dot(y);
        let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
        let r = y * theta + &bs * (1.0 - theta);
        let sr = s.dot(&r);
        if sr <= 1e-300 {
            return theta;
        }
        // B+ = B - bs bs'/sbs + r r'/sr
        self.b.ger(-1.0 / sbs, &bs, &bs, 1.0);
        self.b.ger(1.0 / sr, &r, &r, 1.0);
        // H+ = (I - rho s r') H (I - rho r s') + rho s s'
        let rho = 1.0 / sr;
        let hr = &self.h * &r;
        let rhr = r.dot(&hr);
        // H+ = H - rho (s hr' + hr s') + (rho^2 rhr + rho) s s'
        self.h.ger(-rho, s, &hr, 1.0);
        self.h.ger(-rho, &hr, s, 1.0);
        self.h.ger(rho * rho * rhr + rho, s, s, 1.0);
        theta
    }

    /// Smallest eigenvalue of the symmetric part of `B`.
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.b + self.b.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Positive definite model `hf + corr + delta I` with the smallest `delta`
/// from a geometric sequence that admits a Cholesky factor.
fn structured_model(hf: &DMatrix<f64>, corr: &DMatrix<f64>) -> DampedBfgs {
    let n = hf.nrows();
    let base = hf + corr;
    let scale = base.diagonal().amax().max(1.0);
    let mut delta = 1e-8 * scale;
    loop {
        let mut b = base.clone();
        for i in 0..n {
            b[(i, i)] += delta;
        }
        if let Some(chol) = b.clone().cholesky() {
            let h = chol.inverse();
            log::trace!("model shift {delta:.3e} (diag max {scale:.3e})");
            return DampedBfgs { b, h };
        }
        delta *= 10.0;
    }
}

/// Symmetric-rank-one update of the constraint curvature estimate, skipped
/// when the denominator is unreliable.
fn sr1_update(corr: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let r = y - &*corr * s;
    let sr = s.dot(&r);
    if sr.abs() > 1e-8 * s.norm() * r.norm() && sr.abs() > 1e-300 {
        corr.ger(1.0 / sr, &r, &r, 1.0);
    }
}

struct QpStep {
    d: DVector<f64>,
    mult: Multipliers,
    /// l1 violation of the linearised constraints at `x + d`.
    lin_violation: f64,
}

#[allow(clippy::too_many_arguments)]
fn solve_subproblem(
    bfgs: &DampedBfgs,
    ev: &Eval,
    je_t: &DMatrix<f64>,
    ji_t: &DMatrix<f64>,
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_step: f64,
) -> Option<QpStep> {
    let n = x.len();
    let dlo: Vec<f64> = (0..n).map(|i| (lo[i] - x[i]).max(-max_step)).collect();
    let dhi: Vec<f64> = (0..n).map(|i| (hi[i] - x[i]).min(max_step)).collect();
    let direct = qp::solve(&qp::QpInput {
        hinv: &bfgs.h,
        g: &ev.g,
        a_eq: je_t,
        b_eq: &ev.ce,
        a_in: ji_t,
        b_in: &ev.ci,
        lower: &dlo,
        upper: &dhi,
    });
    if let Ok(sol) = direct {
        return Some(QpStep {
            mult: Multipliers {
                eq: sol.lambda_eq.iter().copied().collect(),
                ineq: sol.lambda_in.iter().copied().collect(),
                lower: sol.lambda_lower.iter().copied().collect(),
                upper: sol.lambda_upper.iter().copied().collect(),
            },
            lin_violation: 0.0,
            d: sol.d,
        });
    }

    // Relaxed subproblem: extra variable `delta` in [0, 1] scales the
    // currently violated constraints, A d + (1 - delta) c (>=,=) 0.
    let me = ev.ce.len();
    let mi = ev.ci.len();
    let big = 1e4 * bfgs.b.diagonal().amax().max(1.0);
    let mut h_ext = DMatrix::zeros(n + 1, n + 1);
    h_ext.view_mut((0, 0), (n, n)).copy_from(&bfgs.h);
    h_ext[(n, n)] = 1.0 / big;
    let mut g_ext = DVector::zeros(n + 1);
    g_ext.rows_mut(0, n).copy_from(&ev.g);
    let mut ae = DMatrix::zeros(n + 1, me);
    ae.view_mut((0, 0), (n, me)).copy_from(je_t);
    for j in 0..me {
        ae[(n, j)] = -ev.ce[j];
    }
    let mut ai = DMatrix::zeros(n + 1, mi);
    ai.view_mut((0, 0), (n, mi)).copy_from(ji_t);
    for j in 0..mi {
        if ev.ci[j] < 0.0 {
            ai[(n, j)] = -ev.ci[j];
        }
    }
    let mut dlo_e = dlo.clone();
    let mut dhi_e = dhi.clone();
    dlo_e.push(0.0);
    dhi_e.push(1.0);
    // delta = 0 is the original linearisation; a large linear cost keeps the
    // relaxation as small as possible
    g_ext[n] = big;
    let sol = qp::solve(&qp::QpInput {
        hinv: &h_ext,
        g: &g_ext,
        a_eq: &ae,
        b_eq: &ev.ce,
        a_in: &ai,
        b_in: &ev.ci,
        lower: &dlo_e,
        upper: &dhi_e,
    })
    .ok()?;
    let delta = sol.d[n];
    let d = sol.d.rows(0, n).into_owned();
    let ce_lin = &ev.ce + je_t.tr_mul(&d);
    let ci_lin = &ev.ci + ji_t.tr_mul(&d);
    let lin_violation = violation_l1(&ce_lin, &ci_lin);
    log::debug!("relaxed QP: delta = {delta:.3e}, linearised violation = {lin_violation:.3e}");
    Some(QpStep {
        mult: Multipliers {
            eq: sol.lambda_eq.iter().copied().collect(),
            ineq: sol.lambda_in.iter().copied().collect(),
            lower: sol.lambda_lower.iter().take(n).copied().collect(),
            upper: sol.lambda_upper.iter().take(n).copied().collect(),
        },
        lin_violation,
        d,
    })
}

fn lagrangian_gradient(
    g: &DVector<f64>,
    je_t: &DMatrix<f64>,
    ji_t: &DMatrix<f64>,
    mult: &Multipliers,
) -> DVector<f64> {
    let mut gl = g.clone();
    if !mult.eq.is_empty() {
        gl -= je_t * DVector::from_column_slice(&mult.eq);
    }
    if !mult.ineq.is_empty() {
        gl -= ji_t * DVector::from_column_slice(&mult.ineq);
    }
    gl
}

/// Runs SQP from `x0` (projected into the bounds). `mult0` warm-starts the
/// penalty parameter and the first Lagrangian-gradient difference.
pub fn solve<P: Nlp + ?Sized>(
    nlp: &P,
    x0: &[f64],
    mult0: Option<&Multipliers>,
    opts: &SolverOptions,
) -> NlpResult {
    let start = Instant::now();
    let n = nlp.num_vars();
    let (me, mi) = (nlp.num_eq(), nlp.num_ineq());
    assert_eq!(x0.len(), n, "initial point has the wrong dimension");
    let (lo, hi) = nlp.bounds();
    let mut x: Vec<f64> = (0..n).map(|i| x0[i].clamp(lo[i], hi[i])).collect();

    let mut hf = nlp.objective_hessian(&x);
    let mut corr = DMatrix::zeros(n, n);
    let mut bfgs = match &hf {
        Some(hf) => structured_model(hf, &corr),
        None => DampedBfgs::from_diagonal(&nlp.hessian_diagonal_guess(&x).unwrap_or_else(|| vec![1.0; n])),
    };
    let mut mult = mult0.cloned().unwrap_or_else(|| Multipliers::zeros(n, me, mi));
    let mut penalty = mult.max_abs() * 1.1 + 1.0;

    let mut ev = evaluate(nlp, &x, true);
    let mut je = DMatrix::zeros(me, n);
    let mut ji = DMatrix::zeros(mi, n);
    nlp.jacobian(&x, &mut je, &mut ji);
    let mut je_t = je.transpose();
    let mut ji_t = ji.transpose();

    let mut log = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    let mut resets = 0;
    let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::new();

    for iter in 0..opts.max_iterations {
        iterations = iter;
        if let Some(budget) = opts.time_budget {
            if start.elapsed() > budget {
                break;
            }
        }
        let step = match solve_subproblem(&bfgs, &ev, &je_t, &ji_t, &x, &lo, &hi, opts.max_step) {
            Some(s) => s,
            None => {
                status = SolveStatus::Infeasible;
                break;
            }
        };
        kkt = kkt_from_parts(&ev, &je, &ji, &x, &lo, &hi, &step.mult);
        let viol_inf = violation_inf(&ev.ce, &ev.ci);
        if viol_inf <= opts.tol_con && kkt <= opts.tol_kkt {
            mult = step.mult;
            status = SolveStatus::Optimal;
            break;
        }
        // step-size convergence: the QP step is negligible and the point is
        // feasible, so the KKT residual of the QP multipliers is the limit
        let d_norm = step.d.amax();
        let x_norm = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if d_norm <= 1e-12 * x_norm && viol_inf <= opts.tol_con {
            mult = step.mult;
            if kkt <= opts.tol_kkt.sqrt() {
                status = SolveStatus::Optimal;
            }
            break;
        }

        penalty = penalty.max(step.mult.max_abs() * 1.1 + 1e-3);
        let viol1 = violation_l1(&ev.ce, &ev.ci);
        let merit0 = ev.f + penalty * viol1;
        let mut dmerit = ev.g.dot(&step.d) - penalty * (viol1 - step.lin_violation);
        if dmerit >= 0.0 {
            // not a descent direction for the merit (inexact QP); fall back to
            // the quadratic model decrease
            dmerit = -step.d.dot(&(&bfgs.b * &step.d)).max(1e-16);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.min_step {
            let xt: Vec<f64> = (0..n)
                .map(|i| (x[i] + alpha * step.d[i]).clamp(lo[i], hi[i]))
                .collect();
            let et = evaluate(nlp, &xt, false);
            let merit = et.f + penalty * violation_l1(&et.ce, &et.ci);
            if merit.is_finite() && merit <= merit0 + opts.armijo * alpha * dmerit {
                accepted = Some((xt, merit));
                break;
            }
            // second-order correction when the constraints got worse: project
            // the trial point back onto the linearised constraints
            if violation_l1(&et.ce, &et.ci) > viol1 {
                if let Some((xs, ms)) = second_order_correction(nlp, &bfgs, &et, &je_t, &ji_t, &xt, &lo, &hi, penalty) {
                    if ms <= merit0 + opts.armijo * alpha * dmerit {
                        accepted = Some((xs, ms));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, merit_new)) = accepted else {
            if resets < 2 {
                // restart curvature information and retry
                bfgs = match &hf {
                    Some(hf) => {
                        corr.fill(0.0);
                        structured_model(hf, &corr)
                    }
                    None => DampedBfgs::from_diagonal(&nlp.hessian_diagonal_guess(&x).unwrap_or_else(|| vec![1.0; n])),
                };
                resets += 1;
                continue;
            }
            status = SolveStatus::LineSearchFailure;
            mult = step.mult;
            break;
        };

        let s = DVector::from_iterator(n, (0..n).map(|i| x_new[i] - x[i]));
        let gl_old = lagrangian_gradient(&ev.g, &je_t, &ji_t, &step.mult);
        x = x_new;
        ev = evaluate(nlp, &x, true);
        nlp.jacobian(&x, &mut je, &mut ji);
        je_t = je.transpose();
        ji_t = ji.transpose();
        let gl_new = lagrangian_gradient(&ev.g, &je_t, &ji_t, &step.mult);
        let y = &gl_new - gl_old;
        let theta = match hf.as_mut() {
            Some(hf) => {
                *hf = nlp.objective_hessian(&x).expect("objective Hessian became unavailable");
                let yc = &y - &*hf * &s;
                sr1_update(&mut corr, &s, &yc);
                bfgs = structured_model(hf, &corr);
                1.0
            }
            None => bfgs.update(&s, &y),
        };
        log::trace!(
            "iter {iter}: step {:.3e} of {:.3e}, damping {theta:.3}, penalty {penalty:.3e}, objective {:.9e}, violation {:.3e}",
            s.amax(),
            step.d.amax(),
            ev.f,
            violation_inf(&ev.ce, &ev.ci)
        );
        debug_assert!(hf.is_some() || n > 60 || bfgs.min_eigenvalue() > 0.0);
        mult = step.mult;

        if opts.log {
            log.push(IterationRecord {
                iter,
                cost: ev.f,
                violation: violation_inf(&ev.ce, &ev.ci),
                kkt,
                step: s.amax(),
                merit_before: merit0,
                merit_after: merit_new,
            });
        }
        iterations = iter + 1;

        if violation_inf(&ev.ce, &ev.ci) <= opts.tol_con {
            history.push_back(ev.f);
            if history.len() > opts.stall_window {
                let old = history.pop_front().expect("non-empty history");
                if opts.stall_window > 0 && old - ev.f <= opts.tol_stall * ev.f.abs().max(1.0) {
                    status = SolveStatus::Acceptable;
                    break;
                }
            }
        } else {
            history.clear();
        }
    }

    let violation = violation_inf(&ev.ce, &ev.ci);
    if status != SolveStatus::Optimal {
        kkt = kkt_from_parts(&ev, &je, &ji, &x, &lo, &hi, &mult);
        if violation <= opts.tol_con && kkt <= opts.tol_kkt {
            status = SolveStatus::Optimal;
        }
    }
    NlpResult {
        objective: ev.f,
        x,
        multipliers: mult,
        status,
        kkt,
        violation,
        iterations,
        wall_time: start.elapsed(),
        log,
    }
}

/// Minimum-norm corrections (in the metric of the inverse Hessian
/// approximation) that drive the equalities and the violated inequalities
/// at the trial point `xt` back to zero. The Jacobians from the start of
/// the step are reused, so each sweep costs one constraint evaluation.
#[allow(clippy::too_many_arguments)]
fn second_order_correction<P: Nlp + ?Sized>(
    nlp: &P,
    bfgs: &DampedBfgs,
    et: &Eval,
    je_t: &DMatrix<f64>,
    ji_t: &DMatrix<f64>,
    xt: &[f64],
    lo: &[f64],
    hi: &[f64],
    penalty: f64,
) -> Option<(Vec<f64>, f64)> {
    const SWEEPS: usize = 4;
    let n = xt.len();
    let me = et.ce.len();
    let mut xs = xt.to_vec();
    let mut ce = et.ce.clone();
    let mut ci = et.ci.clone();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut viol = violation_l1(&ce, &ci);
    for _ in 0..SWEEPS {
        let violated: Vec<usize> = (0..ci.len()).filter(|&j| ci[j] < 0.0).collect();
        let m = me + violated.len();
        if m == 0 {
            break;
        }
        let mut a = DMatrix::zeros(n, m);
        let mut r = DVector::zeros(m);
        a.columns_mut(0, me).copy_from(je_t);
        r.rows_mut(0, me).copy_from(&ce);
        for (k, &j) in violated.iter().enumerate() {
            a.set_column(me + k, &ji_t.column(j));
            r[me + k] = ci[j];
        }
        let ha = &bfgs.h * &a;
        let mut gram = a.tr_mul(&ha);
        let shift = 1e-12 * gram.diagonal().amax().max(1e-300);
        for i in 0..m {
            gram[(i, i)] += shift;
        }
        let w = gram.cholesky()?.solve(&r);
        let dc = -(ha * w);
        for i in 0..n {
            xs[i] = (xs[i] + dc[i]).clamp(lo[i], hi[i]);
        }
        let es = evaluate(nlp, &xs, false);
        let v = violation_l1(&es.ce, &es.ci);
        let merit = es.f + penalty * v;
        if !merit.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|b| merit < b.1) {
            best = Some((xs.clone(), merit));
        }
        if v > 0.5 * viol {
            break;
        }
        viol = v;
        ce = es.ce;
        ci = es.ci;
    }
    best
}
