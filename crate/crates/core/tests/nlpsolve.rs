use mfe_descent::nlpsolve::{kkt_residual, solve, Multipliers, Nlp, SolveStatus, SolverOptions};
use proptest::prelude::*;

const INF: f64 = f64::INFINITY;

fn converged(s: SolveStatus) -> bool {
    matches!(s, SolveStatus::Optimal | SolveStatus::Acceptable)
}

struct ShiftedBound;
impl Nlp for ShiftedBound {
    fn num_vars(&self) -> usize {
        1
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-INF], vec![INF])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (x[0] - 3.0).powi(2)
    }
    fn constraints(&self, x: &[f64], _: &mut [f64], ci: &mut [f64]) {
        ci[0] = x[0] - 5.0;
    }
}

struct SimplexNorm(usize);
impl Nlp for SimplexNorm {
    fn num_vars(&self) -> usize {
        self.0
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-INF; self.0], vec![INF; self.0])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn constraints(&self, x: &[f64], ce: &mut [f64], _: &mut [f64]) {
        ce[0] = x.iter().sum::<f64>() - 1.0;
    }
}

struct RosenbrockDisk;
impl Nlp for RosenbrockDisk {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-INF; 2], vec![INF; 2])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        rosenbrock(x[0], x[1])
    }
    fn constraints(&self, x: &[f64], _: &mut [f64], ci: &mut [f64]) {
        ci[0] = 2.0 - x[0] * x[0] - x[1] * x[1];
    }
}

fn rosenbrock(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

/// Hock-Schittkowski problem 71.
struct Hs071;
impl Nlp for Hs071 {
    fn num_vars(&self) -> usize {
        4
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        1
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![1.0; 4], vec![5.0; 4])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]
    }
    fn constraints(&self, x: &[f64], ce: &mut [f64], ci: &mut [f64]) {
        ce[0] = x.iter().map(|v| v * v).sum::<f64>() - 40.0;
        ci[0] = x.iter().product::<f64>() - 25.0;
    }
}

/// `min 0.5 x'Qx + c'x` subject to `Ax = b`, `Q` diagonal positive.
#[derive(Debug, Clone)]
struct EqQp {
    q: Vec<f64>,
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Nlp for EqQp {
    fn num_vars(&self) -> usize {
        self.q.len()
    }
    fn num_eq(&self) -> usize {
        self.a.len()
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-INF; self.q.len()], vec![INF; self.q.len()])
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.q).zip(&self.c).map(|((x, q), c)| 0.5 * q * x * x + c * x).sum()
    }
    fn constraints(&self, x: &[f64], ce: &mut [f64], _: &mut [f64]) {
        for (k, row) in self.a.iter().enumerate() {
            ce[k] = row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - self.b[k];
        }
    }
}

impl EqQp {
    /// Closed form: `x = Q^-1 (A'y - c)` with `(A Q^-1 A') y = b + A Q^-1 c`.
    fn exact(&self) -> Vec<f64> {
        let m = self.a.len();
        let n = self.q.len();
        let mut k = nalgebra::DMatrix::zeros(m, m);
        let mut r = nalgebra::DVector::zeros(m);
        for i in 0..m {
            r[i] = self.b[i] + (0..n).map(|j| self.a[i][j] * self.c[j] / self.q[j]).sum::<f64>();
            for l in 0..m {
                k[(i, l)] = (0..n).map(|j| self.a[i][j] * self.a[l][j] / self.q[j]).sum::<f64>();
            }
        }
        let y = k.lu().solve(&r).expect("full-rank constraints");
        (0..n)
            .map(|j| ((0..m).map(|i| self.a[i][j] * y[i]).sum::<f64>() - self.c[j]) / self.q[j])
            .collect()
    }
}

fn eq_qp() -> impl Strategy<Value = EqQp> {
    (3usize..8).prop_flat_map(|n| {
        (1usize..n).prop_flat_map(move |m| {
            (
                prop::collection::vec(0.5f64..5.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, n), m),
                prop::collection::vec(-3.0f64..3.0, m),
            )
                .prop_map(|(q, c, mut a, b)| {
                    // Diagonal dominance keeps the rows independent.
                    for (i, row) in a.iter_mut().enumerate() {
                        row[i] += 5.0;
                    }
                    EqQp { q, c, a, b }
                })
        })
    })
}

#[test]
fn active_bound_gives_expected_multiplier() {
    let r = solve(&ShiftedBound, &[0.0], None, &SolverOptions::default());
    assert!(converged(r.status), "{:?}", r.status);
    assert!((r.x[0] - 5.0).abs() < 1e-8, "x = {}", r.x[0]);
    assert!((r.multipliers.ineq[0] - 4.0).abs() < 1e-6, "mu = {}", r.multipliers.ineq[0]);
}

#[test]
fn minimum_norm_point_on_simplex() {
    let r = solve(&SimplexNorm(10), &[0.0; 10], None, &SolverOptions::default());
    assert!(converged(r.status), "{:?}", r.status);
    for v in &r.x {
        assert!((v - 0.1).abs() < 1e-8, "{v}");
    }
}

#[test]
fn rosenbrock_on_disk_matches_grid_search() {
    // Refine a grid search around the best feasible point until the cell is tiny.
    let (mut cx, mut cy, mut half) = (0.0, 0.0, 2.0);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    while half > 1e-8 {
        let k = 200;
        for i in 0..=k {
            for j in 0..=k {
                let x = cx - half + 2.0 * half * i as f64 / k as f64;
                let y = cy - half + 2.0 * half * j as f64 / k as f64;
                if x * x + y * y <= 2.0 {
                    let f = rosenbrock(x, y);
                    if f < best.0 {
                        best = (f, x, y);
                    }
                }
            }
        }
        (cx, cy) = (best.1, best.2);
        half *= 0.05;
    }
    let r = solve(&RosenbrockDisk, &[-1.2, 1.0], None, &SolverOptions::default());
    assert!(converged(r.status), "{:?}", r.status);
    assert!((r.x[0] - cx).abs() < 1e-5 && (r.x[1] - cy).abs() < 1e-5, "{:?} vs ({cx}, {cy})", r.x);
}

#[test]
fn hock_schittkowski_71() {
    let r = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], None, &SolverOptions::default());
    assert!(converged(r.status), "{:?}", r.status);
    assert!((r.objective - 17.014_017_3).abs() < 1e-6, "f = {}", r.objective);
    assert!(r.violation < 1e-8);
}

#[test]
fn kkt_residual_is_zero_only_at_solutions() {
    let opt = Multipliers { eq: vec![], ineq: vec![4.0], lower: vec![0.0], upper: vec![0.0] };
    assert!(kkt_residual(&ShiftedBound, &[5.0], &opt) < 1e-6);
    assert!(kkt_residual(&ShiftedBound, &[4.0], &opt) > 0.1);
    assert!(kkt_residual(&ShiftedBound, &[6.0], &opt) > 0.1);
}

#[test]
fn warm_start_needs_no_more_iterations() {
    let opts = SolverOptions::default();
    let cold = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], None, &opts);
    let warm = solve(&Hs071, &cold.x, Some(&cold.multipliers), &opts);
    assert!(converged(warm.status));
    assert!(warm.iterations <= cold.iterations.min(3), "{} vs {}", warm.iterations, cold.iterations);
}

#[test]
fn time_budget_is_respected() {
    let opts = SolverOptions { time_budget: Some(std::time::Duration::ZERO), ..SolverOptions::default() };
    let r = solve(&Hs071, &[1.0, 5.0, 5.0, 1.0], None, &opts);
    assert!(!matches!(r.status, SolveStatus::Optimal) || r.iterations <= 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn equality_qp_matches_closed_form(qp in eq_qp()) {
        let opts = SolverOptions { log: true, ..SolverOptions::default() };
        let r = solve(&qp, &vec![0.0; qp.q.len()], None, &opts);
        prop_assert!(converged(r.status), "{:?}", r.status);
        for (a, b) in r.x.iter().zip(qp.exact()) {
            prop_assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn accepted_steps_never_raise_the_merit(qp in eq_qp()) {
        let opts = SolverOptions { log: true, ..SolverOptions::default() };
        let r = solve(&qp, &vec![1.0; qp.q.len()], None, &opts);
        for rec in &r.log {
            prop_assert!(rec.merit_after <= rec.merit_before + 1e-10 * (1.0 + rec.merit_before.abs()),
                "iteration {}: {} -> {}", rec.iter, rec.merit_before, rec.merit_after);
        }
    }

    #[test]
    fn result_stays_inside_bounds(lo in -5.0f64..0.0, width in 0.1f64..5.0, x0 in -10.0f64..10.0) {
        struct Boxed { lo: f64, hi: f64 }
        impl Nlp for Boxed {
            fn num_vars(&self) -> usize { 2 }
            fn num_eq(&self) -> usize { 0 }
            fn num_ineq(&self) -> usize { 0 }
            fn bounds(&self) -> (Vec<f64>, Vec<f64>) { (vec![self.lo; 2], vec![self.hi; 2]) }
            fn objective(&self, x: &[f64]) -> f64 { (x[0] - 7.0).powi(2) + (x[1] + 7.0).powi(2) }
            fn constraints(&self, _: &[f64], _: &mut [f64], _: &mut [f64]) {}
        }
        let p = Boxed { lo, hi: lo + width };
        let r = solve(&p, &[x0, -x0], None, &SolverOptions::default());
        prop_assert!(converged(r.status));
        prop_assert!((r.x[0] - p.hi).abs() < 1e-8);
        prop_assert!((r.x[1] - p.lo).abs() < 1e-8);
    }
}
