use mfe_descent::collocation::*;
use proptest::prelude::*;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * x + ci)
}

fn poly_int(c: &[f64]) -> f64 {
    // over [-1, 1]
    c.iter()
        .enumerate()
        .map(|(k, ci)| if k % 2 == 0 { 2.0 * ci / (k + 1) as f64 } else { 0.0 })
        .sum()
}

fn poly_deriv(c: &[f64], x: f64) -> f64 {
    c.iter().enumerate().skip(1).map(|(k, ci)| k as f64 * ci * x.powi(k as i32 - 1)).sum()
}

proptest! {
    #[test]
    fn quadrature_is_exact_to_degree_2n_minus_2(n in 2usize..25, seed in prop::collection::vec(-1.0f64..1.0, 48)) {
        let c = &seed[..2 * n - 1];
        let grid = CollocationGrid::new(n).unwrap();
        let vals: Vec<f64> = grid.nodes().iter().map(|&x| poly(c, x)).collect();
        let q = grid.quadrature(&vals);
        prop_assert!((q - poly_int(c)).abs() < 1e-12 * (1.0 + c.len() as f64));
    }

    #[test]
    fn differentiation_is_exact_to_degree_n(n in 2usize..25, seed in prop::collection::vec(-1.0f64..1.0, 26)) {
        let c = &seed[..=n];
        let grid = CollocationGrid::new(n).unwrap();
        let vals: Vec<f64> = grid.support().iter().map(|&x| poly(c, x)).collect();
        let d = grid.differentiate(&vals);
        for (i, &x) in grid.nodes().iter().enumerate() {
            prop_assert!((d[i] - poly_deriv(c, x)).abs() < 1e-10 * (1.0 + n as f64));
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials(n in 2usize..20, seed in prop::collection::vec(-1.0f64..1.0, 21), x in -1.0f64..1.0) {
        let grid = CollocationGrid::new(n).unwrap();
        let cs = &seed[..=n];
        let vals: Vec<f64> = grid.support().iter().map(|&t| poly(cs, t)).collect();
        prop_assert!((grid.interpolate_state(&vals, x) - poly(cs, x)).abs() < 1e-10);
        let cc = &seed[..n];
        let vals: Vec<f64> = grid.nodes().iter().map(|&t| poly(cc, t)).collect();
        prop_assert!((grid.interpolate_control(&vals, x) - poly(cc, x)).abs() < 1e-10);
    }

    #[test]
    fn time_map_round_trips(t0 in -100.0f64..100.0, span in 0.1f64..1e4, tau in -1.0f64..1.0) {
        let tf = t0 + span;
        let t = map_time(t0, tf, tau).unwrap();
        prop_assert!((map_tau(t0, tf, t).unwrap() - tau).abs() < 1e-12);
        prop_assert!((metric(t0, tf).unwrap() - span / 2.0).abs() < 1e-12 * span);
    }

    #[test]
    fn nodes_are_sorted_and_weights_positive(n in 2usize..60) {
        let x = lgr_nodes(n).unwrap();
        let w = lgr_weights(n).unwrap();
        prop_assert_eq!(x[0], -1.0);
        prop_assert!(x.windows(2).all(|p| p[0] < p[1]) && *x.last().unwrap() < 1.0);
        prop_assert!(w.iter().all(|&wi| wi > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}

#[test]
fn two_point_rule_is_analytic() {
    let x = lgr_nodes(2).unwrap();
    let w = lgr_weights(2).unwrap();
    assert_eq!(x[0], -1.0);
    assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 1.5).abs() < 1e-15);
}

#[test]
fn invalid_sizes_are_errors() {
    assert!(lgr_nodes(0).is_err());
    assert!(CollocationGrid::new(1).is_err());
    assert!(map_time(1.0, 1.0, 0.0).is_err());
}
