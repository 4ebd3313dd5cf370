//! Legendre-Gauss-Radau collocation: nodes, quadrature weights, the
//! rectangular differentiation matrix, barycentric interpolation and the
//! affine map between computational time `tau` and physical time `t`.
//!
//! A grid with `N` collocation points carries `N + 1` support points: the
//! `N` LGR nodes on `[-1, 1)` plus the non-collocated end point `+1`.
//! States live on the support points, controls on the collocation points.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Evaluates the Legendre polynomials `P_{n-1}(x)`, `P_n(x)` and the
/// derivative `P_n'(x)` by the three-term recurrence.
pub fn legendre(n: usize, x: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (0.0, 1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let k = k as f64;
        let p_next = ((2.0 * k - 1.0) * x * p - (k - 1.0) * p_prev) / k;
        p_prev = p;
        p = p_next;
    }
    let n_f = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint limit of the derivative recurrence
        let s = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) };
        s * n_f * (n_f + 1.0) / 2.0
    } else {
        n_f * (p_prev - x * p) / (1.0 - x * x)
    };
    (p_prev, p, dp)
}

/// The `N` Legendre-Gauss-Radau points on `[-1, 1)`, with `tau_1 = -1`.
///
/// The interior points are the roots of `(P_{N-1} + P_N) / (1 + tau)`,
/// found by Newton iteration from Chebyshev-Gauss-Radau initial guesses and
/// kept inside the open interval by bisection-style safeguarding.
pub fn lgr_nodes(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "LGR grid needs at least 2 points, got {n}"
        )));
    }
    let mut nodes = Vec::with_capacity(n);
    nodes.push(-1.0);
    let m = 2 * n - 1;
    for k in 1..n {
        let guess = -(2.0 * std::f64::consts::PI * k as f64 / m as f64).cos();
        nodes.push(radau_root(n, guess));
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(nodes)
}

// g(x) = (P_{n-1}(x) + P_n(x)) / (1 + x); Newton on g with the deflated
// derivative, which avoids the root at -1.
fn radau_root(n: usize, guess: f64) -> f64 {
    let mut x = guess;
    for _ in 0..NEWTON_MAX_ITER {
        let (pm1, p, dp) = legendre(n, x);
        let (_, _, dpm1) = legendre(n - 1, x);
        let f = pm1 + p;
        let df = dpm1 + dp;
        // derivative of f/(1+x) relative to f/(1+x): df/f - 1/(1+x)
        let denom = df - f / (1.0 + x);
        if denom == 0.0 {
            break;
        }
        let mut step = f / denom;
        let mut next = x - step;
        while next <= -1.0 || next >= 1.0 {
            step *= 0.5;
            next = x - step;
        }
        x = next;
        if step.abs() <= NEWTON_TOL * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// LGR quadrature weights for the `N` nodes returned by [`lgr_nodes`].
pub fn lgr_weights(n: usize) -> Result<Vec<f64>> {
    let nodes = lgr_nodes(n)?;
    Ok(weights_for_nodes(&nodes))
}

fn weights_for_nodes(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let nn = (n * n) as f64;
    nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if i == 0 {
                2.0 / nn
            } else {
                let (pm1, _, _) = legendre(n, x);
                (1.0 - x) / (nn * pm1 * pm1)
            }
        })
        .collect()
}

/// Barycentric weights in log-magnitude/sign form so that large point sets
/// do not underflow.
#[derive(Debug, Clone)]
pub struct BarycentricWeights {
    log_mag: Vec<f64>,
    sign: Vec<f64>,
}

impl BarycentricWeights {
    pub fn new(points: &[f64]) -> Self {
        let n = points.len();
        let mut log_mag = vec![0.0; n];
        let mut sign = vec![1.0; n];
        for j in 0..n {
            for k in 0..n {
                if k != j {
                    let d = points[j] - points[k];
                    log_mag[j] -= d.abs().ln();
                    if d < 0.0 {
                        sign[j] = -sign[j];
                    }
                }
            }
        }
        // normalise so the largest weight has unit magnitude
        let max = log_mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for l in &mut log_mag {
            *l -= max;
        }
        Self { log_mag, sign }
    }

    #[inline]
    pub fn weight(&self, j: usize) -> f64 {
        self.sign[j] * self.log_mag[j].exp()
    }

    /// `w_i / w_j` without forming either weight explicitly.
    #[inline]
    pub fn ratio(&self, i: usize, j: usize) -> f64 {
        self.sign[i] * self.sign[j] * (self.log_mag[i] - self.log_mag[j]).exp()
    }

    pub fn len(&self) -> usize {
        self.sign.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sign.is_empty()
    }
}

/// Barycentric Lagrange interpolation through `(points, values)` at `x`.
/// Exact (returns the stored value) when `x` coincides with a point.
pub fn barycentric_eval(points: &[f64], weights: &BarycentricWeights, values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(points.len(), values.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, (&p, &v)) in points.iter().zip(values).enumerate() {
        let d = x - p;
        if d == 0.0 {
            return v;
        }
        let t = weights.weight(j) / d;
        num += t * v;
        den += t;
    }
    num / den
}

/// Row of Lagrange basis values `L_j(x)` for the given support points.
pub fn lagrange_basis_row(points: &[f64], weights: &BarycentricWeights, x: f64) -> Vec<f64> {
    let n = points.len();
    let mut row = vec![0.0; n];
    if let Some(j) = points.iter().position(|&p| p == x) {
        row[j] = 1.0;
        return row;
    }
    let mut den = 0.0;
    for j in 0..n {
        let t = weights.weight(j) / (x - points[j]);
        row[j] = t;
        den += t;
    }
    for r in &mut row {
        *r /= den;
    }
    row
}

/// Differentiation matrix of the Lagrange basis on `support`, evaluated at
/// the first `rows` support points.
fn barycentric_diff_matrix(support: &[f64], rows: usize) -> DMatrix<f64> {
    let cols = support.len();
    let w = BarycentricWeights::new(support);
    let mut d = DMatrix::zeros(rows, cols);
    for l in 0..rows {
        let mut diag = 0.0;
        for i in 0..cols {
            if i != l {
                let v = w.ratio(i, l) / (support[l] - support[i]);
                d[(l, i)] = v;
                diag -= v;
            }
        }
        d[(l, l)] = diag;
    }
    d
}

/// `N x (N+1)` LGR differentiation matrix.
pub fn differentiation_matrix(n: usize) -> Result<DMatrix<f64>> {
    let mut support = lgr_nodes(n)?;
    support.push(1.0);
    Ok(barycentric_diff_matrix(&support, n))
}

/// Physical time for computational time `tau`.
pub fn map_time(t0: f64, tf: f64, tau: f64) -> Result<f64> {
    check_interval(t0, tf)?;
    Ok((tf - t0) * tau / 2.0 + (tf + t0) / 2.0)
}

/// `dt / dtau` for the interval `[t0, tf]`.
pub fn metric(t0: f64, tf: f64) -> Result<f64> {
    check_interval(t0, tf)?;
    Ok((tf - t0) / 2.0)
}

/// Inverse of [`map_time`].
pub fn map_tau(t0: f64, tf: f64, t: f64) -> Result<f64> {
    check_interval(t0, tf)?;
    Ok((2.0 * t - (tf + t0)) / (tf - t0))
}

fn check_interval(t0: f64, tf: f64) -> Result<()> {
    if !(tf > t0) {
        return Err(Error::InvalidInput(format!(
            "time interval must satisfy tf > t0 (t0 = {t0}, tf = {tf})"
        )));
    }
    Ok(())
}

/// One LGR phase: nodes, weights, differentiation matrix and the
/// barycentric weights needed for state and control interpolation.
#[derive(Debug, Clone)]
pub struct CollocationGrid {
    n: usize,
    support: Vec<f64>,
    weights: Vec<f64>,
    diff: DMatrix<f64>,
    state_bary: BarycentricWeights,
    control_bary: BarycentricWeights,
}

impl CollocationGrid {
    pub fn new(n: usize) -> Result<Self> {
        let nodes = lgr_nodes(n)?;
        let weights = weights_for_nodes(&nodes);
        let mut support = nodes;
        support.push(1.0);
        let diff = barycentric_diff_matrix(&support, n);
        let state_bary = BarycentricWeights::new(&support);
        let control_bary = BarycentricWeights::new(&support[..n]);
        Ok(Self {
            n,
            support,
            weights,
            diff,
            state_bary,
            control_bary,
        })
    }

    /// Number of collocation points `N`.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Collocation points `tau_1..tau_N`.
    pub fn nodes(&self) -> &[f64] {
        &self.support[..self.n]
    }

    /// Support (discretisation) points `tau_1..tau_{N+1}`.
    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Integrates samples at the collocation points over `[-1, 1]`.
    pub fn quadrature(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Applies the differentiation matrix to `N + 1` support values.
    pub fn differentiate(&self, support_values: &[f64]) -> Vec<f64> {
        assert_eq!(support_values.len(), self.n + 1);
        (0..self.n)
            .map(|l| {
                self.diff
                    .row(l)
                    .iter()
                    .zip(support_values)
                    .map(|(d, v)| d * v)
                    .sum()
            })
            .collect()
    }

    /// State interpolation with the `N + 1` point basis.
    pub fn interpolate_state(&self, support_values: &[f64], tau: f64) -> f64 {
        barycentric_eval(&self.support, &self.state_bary, support_values, tau)
    }

    /// Control interpolation with the `N` point basis on the collocation
    /// points.
    pub fn interpolate_control(&self, node_values: &[f64], tau: f64) -> f64 {
        barycentric_eval(&self.support[..self.n], &self.control_bary, node_values, tau)
    }

    pub fn state_basis_row(&self, tau: f64) -> Vec<f64> {
        lagrange_basis_row(&self.support, &self.state_bary, tau)
    }

    pub fn control_basis_row(&self, tau: f64) -> Vec<f64> {
        lagrange_basis_row(&self.support[..self.n], &self.control_bary, tau)
    }

    /// Inverse of the square block `D[:, 1..=N]`, i.e. the map from
    /// derivative samples at the collocation points to state increments
    /// `X(tau_i) - X(tau_1)`, `i = 2..N+1`.
    pub fn integration_matrix(&self) -> Result<DMatrix<f64>> {
        let block = self.diff.columns(1, self.n).into_owned();
        block
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular LGR differentiation block".into()))
    }
}
