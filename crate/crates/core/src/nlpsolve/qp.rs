//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani.
//!
//! ```text
//! min  1/2 d' B d + g' d
//! s.t. A_eq' d + b_eq  = 0
//!      A_in' d + b_in >= 0
//!      lower <= d <= upper
//! ```
//!
//! The solver works with `H = B^-1` directly (the SQP driver maintains it)
//! and keeps a Cholesky factor of the Schur complement `N' H N` of the
//! active normals `N`, updated by appending rows and by Givens downdates.
//! Constraint normals are stored column-wise (`A_eq` is `n x m_eq`).

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpError {
    /// No point satisfies the constraints.
    Infeasible,
    MaxIterations,
}

pub struct QpInput<'a> {
    pub hinv: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
    pub a_in: &'a DMatrix<f64>,
    pub b_in: &'a DVector<f64>,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub d: DVector<f64>,
    /// Multipliers with the convention `B d + g = A_eq l_eq + A_in l_in + l_lo - l_up`.
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub lambda_lower: DVector<f64>,
    pub lambda_upper: DVector<f64>,
    pub iterations: usize,
}

const FEAS_TOL: f64 = 1e-9;
const DEP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Con {
    Eq(usize),
    In(usize),
    Lo(usize),
    Up(usize),
}

struct Problem<'a> {
    inp: &'a QpInput<'a>,
    eq_sign: Vec<f64>,
    in_norm: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn dot(&self, c: Con, v: &DVector<f64>) -> f64 {
        match c {
            Con::Eq(j) => self.eq_sign[j] * self.inp.a_eq.column(j).dot(v),
            Con::In(j) => self.inp.a_in.column(j).dot(v),
            Con::Lo(i) => v[i],
            Con::Up(i) => -v[i],
        }
    }

    fn offset(&self, c: Con) -> f64 {
        match c {
            Con::Eq(j) => self.eq_sign[j] * self.inp.b_eq[j],
            Con::In(j) => self.inp.b_in[j],
            Con::Lo(i) => -self.inp.lower[i],
            Con::Up(i) => self.inp.upper[i],
        }
    }

    fn slack(&self, c: Con, d: &DVector<f64>) -> f64 {
        self.dot(c, d) + self.offset(c)
    }

    fn hinv_normal(&self, c: Con) -> DVector<f64> {
        let h = self.inp.hinv;
        match c {
            Con::Eq(j) => h * self.inp.a_eq.column(j) * self.eq_sign[j],
            Con::In(j) => h * self.inp.a_in.column(j),
            Con::Lo(i) => h.column(i).into_owned(),
            Con::Up(i) => -h.column(i).into_owned(),
        }
    }
}

/// Lower-triangular Cholesky factor stored by rows.
#[derive(Default)]
struct Chol {
    rows: Vec<Vec<f64>>,
}

impl Chol {
    fn forward(&self, w: &[f64]) -> Vec<f64> {
        let k = self.rows.len();
        let mut y = vec![0.0; k];
        for i in 0..k {
            let row = &self.rows[i];
            let mut s = w[i];
            for j in 0..i {
                s -= row[j] * y[j];
            }
            y[i] = s / row[i];
        }
        y
    }

    fn solve(&self, w: &[f64]) -> Vec<f64> {
        let k = self.rows.len();
        let mut x = self.forward(w);
        for i in (0..k).rev() {
            let mut s = x[i];
            for j in i + 1..k {
                s -= self.rows[j][i] * x[j];
            }
            x[i] = s / self.rows[i][i];
        }
        x
    }

    fn append(&mut self, l: Vec<f64>, diag: f64) {
        let mut row = l;
        row.push(diag);
        self.rows.push(row);
    }

    /// Removes row/column `j` of `S = L L'` and restores triangularity.
    fn remove(&mut self, j: usize) {
        self.rows.remove(j);
        let k = self.rows.len();
        for i in j..k {
            // row i currently has entries 0..=i+1
            let a = self.rows[i][i];
            let b = self.rows[i][i + 1];
            let r = a.hypot(b);
            let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
            for row in self.rows[i..].iter_mut() {
                let x = row[i];
                let y = row[i + 1];
                row[i] = c * x + s * y;
                row[i + 1] = -s * x + c * y;
            }
            self.rows[i].truncate(i + 1);
            if self.rows[i][i] < 0.0 {
                for row in self.rows[i..].iter_mut() {
                    row[i] = -row[i];
                }
            }
        }
    }
}

struct Active {
    cons: Vec<Con>,
    hn: Vec<DVector<f64>>,
    u: Vec<f64>,
    chol: Chol,
    in_flag: Vec<bool>,
    lo_flag: Vec<bool>,
    up_flag: Vec<bool>,
}

impl Active {
    fn set_flag(&mut self, c: Con, v: bool) {
        match c {
            Con::Eq(_) => {}
            Con::In(j) => self.in_flag[j] = v,
            Con::Lo(i) => self.lo_flag[i] = v,
            Con::Up(i) => self.up_flag[i] = v,
        }
    }

    fn remove(&mut self, k: usize) {
        self.set_flag(self.cons[k], false);
        self.cons.remove(k);
        self.hn.remove(k);
        self.u.remove(k);
        self.chol.remove(k);
    }
}

/// Solves the QP. `B^-1` must be symmetric positive definite.
pub fn solve(inp: &QpInput<'_>) -> Result<QpSolution, QpError> {
    let n = inp.g.len();
    let m_eq = inp.b_eq.len();
    let m_in = inp.b_in.len();
    debug_assert_eq!(inp.hinv.nrows(), n);
    debug_assert_eq!(inp.a_eq.ncols(), m_eq);
    debug_assert_eq!(inp.a_in.ncols(), m_in);

    let in_norm = (0..m_in).map(|j| inp.a_in.column(j).norm().max(1e-300)).collect();
    let mut prob = Problem {
        inp,
        eq_sign: vec![1.0; m_eq],
        in_norm,
    };

    let mut d = -(inp.hinv * inp.g);
    let mut act = Active {
        cons: Vec::new(),
        hn: Vec::new(),
        u: Vec::new(),
        chol: Chol::default(),
        in_flag: vec![false; m_in],
        lo_flag: vec![false; n],
        up_flag: vec![false; n],
    };
    let max_iter = 20 * (n + m_eq + m_in) + 100;
    let mut iterations = 0;

    for j in 0..m_eq {
        let s = inp.a_eq.column(j).dot(&d) + inp.b_eq[j];
        if s > 0.0 {
            prob.eq_sign[j] = -1.0;
        }
        add_constraint(&prob, &mut act, &mut d, Con::Eq(j), &mut iterations, max_iter)?;
    }

    let mut s_in = DVector::zeros(m_in);
    loop {
        if iterations > max_iter {
            return Err(QpError::MaxIterations);
        }
        // most violated inactive inequality, normalised by its normal's length
        let mut worst: Option<(Con, f64)> = None;
        if m_in > 0 {
            inp.a_in.tr_mul_to(&d, &mut s_in);
            s_in += inp.b_in;
        }
        for j in 0..m_in {
            let v = s_in[j] / prob.in_norm[j];
            if v < -FEAS_TOL && worst.is_none_or(|(_, w)| v < w) && !act.in_flag[j] {
                worst = Some((Con::In(j), v));
            }
        }
        for i in 0..n {
            if inp.lower[i].is_finite() {
                let v = d[i] - inp.lower[i];
                if v < -FEAS_TOL && worst.is_none_or(|(_, w)| v < w) && !act.lo_flag[i] {
                    worst = Some((Con::Lo(i), v));
                }
            }
            if inp.upper[i].is_finite() {
                let v = inp.upper[i] - d[i];
                if v < -FEAS_TOL && worst.is_none_or(|(_, w)| v < w) && !act.up_flag[i] {
                    worst = Some((Con::Up(i), v));
                }
            }
        }
        match worst {
            None => break,
            Some((c, _)) => add_constraint(&prob, &mut act, &mut d, c, &mut iterations, max_iter)?,
        }
    }

    let mut lambda_eq = DVector::zeros(m_eq);
    let mut lambda_in = DVector::zeros(m_in);
    let mut lambda_lower = DVector::zeros(n);
    let mut lambda_upper = DVector::zeros(n);
    for (c, u) in act.cons.iter().zip(&act.u) {
        match *c {
            Con::Eq(j) => lambda_eq[j] = prob.eq_sign[j] * u,
            Con::In(j) => lambda_in[j] = *u,
            Con::Lo(i) => lambda_lower[i] = *u,
            Con::Up(i) => lambda_upper[i] = *u,
        }
    }
    Ok(QpSolution {
        d,
        lambda_eq,
        lambda_in,
        lambda_lower,
        lambda_upper,
        iterations,
    })
}

fn add_constraint(
    prob: &Problem<'_>,
    act: &mut Active,
    d: &mut DVector<f64>,
    p: Con,
    iterations: &mut usize,
    max_iter: usize,
) -> Result<(), QpError> {
    let is_eq = matches!(p, Con::Eq(_));
    let hp = prob.hinv_normal(p);
    let sigma = prob.dot(p, &hp);
    let mut u_p = 0.0;
    loop {
        *iterations += 1;
        if *iterations > max_iter {
            return Err(QpError::MaxIterations);
        }
        let s_p = prob.slack(p, d);
        let w: Vec<f64> = act.cons.iter().map(|&c| prob.dot(c, &hp)).collect();
        let r = act.chol.solve(&w);
        let mut z = hp.clone();
        for (rj, hj) in r.iter().zip(&act.hn) {
            z.axpy(-rj, hj, 1.0);
        }
        let zap = sigma - w.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
        let dependent = zap <= DEP_TOL * sigma.max(1e-300);

        if !is_eq && s_p >= 0.0 {
            return Ok(());
        }
        let scale = sigma.sqrt().max(1.0);
        if dependent && s_p.abs() <= FEAS_TOL * scale {
            // redundant with the active set and already satisfied
            return Ok(());
        }
        let t2 = if dependent { f64::INFINITY } else { (-s_p / zap).max(0.0) };
        let mut t1 = f64::INFINITY;
        let mut drop_k = None;
        for (k, (&c, &rk)) in act.cons.iter().zip(&r).enumerate() {
            if matches!(c, Con::Eq(_)) {
                continue;
            }
            if rk > 0.0 {
                let t = act.u[k] / rk;
                if t < t1 {
                    t1 = t;
                    drop_k = Some(k);
                }
            }
        }

        let t = t1.min(t2);
        if !t.is_finite() {
            return Err(QpError::Infeasible);
        }
        if !t2.is_finite() {
            // dual step only
            for (uk, rk) in act.u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_p += t;
            act.remove(drop_k.expect("finite t1 implies a blocking constraint"));
            continue;
        }
        d.axpy(t, &z, 1.0);
        for (uk, rk) in act.u.iter_mut().zip(&r) {
            *uk -= t * rk;
        }
        u_p += t;
        if t2 <= t1 {
            let l = act.chol.forward(&w);
            let diag = zap.max(DEP_TOL * sigma).sqrt();
            act.chol.append(l, diag);
            act.cons.push(p);
            act.set_flag(p, true);
            act.hn.push(hp);
            act.u.push(u_p);
            return Ok(());
        }
        act.remove(drop_k.expect("t1 < t2 implies a blocking constraint"));
    }
}
