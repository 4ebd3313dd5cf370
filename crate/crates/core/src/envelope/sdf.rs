//! Exact 2-D Euclidean distance transform (separable lower-envelope
//! algorithm) and the signed distance of a boolean slice in cell units.

const FAR: f64 = 1e20;

/// Squared distance to the nearest site along one line. `f` holds 0 at
/// sites and `FAR` elsewhere (or a previous pass's squared distances).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let parabola_cut = |k: usize| {
            let vk = v[k] as f64;
            ((f[q] + qf * qf) - (f[v[k]] + vk * vk)) / (2.0 * qf - 2.0 * vk)
        };
        let mut s = parabola_cut(k);
        // z[0] is -inf, so this stops at k = 0
        while s <= z[k] {
            k -= 1;
            s = parabola_cut(k);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from each cell of an `nx x ny` grid
/// (x fastest) to the nearest cell with `site == true`. Cells with no
/// site anywhere get `None`.
pub fn squared_distance(site: &[bool], nx: usize, ny: usize) -> Vec<Option<f64>> {
    assert_eq!(site.len(), nx * ny);
    let m = nx.max(ny);
    let mut v = vec![0usize; m];
    let mut z = vec![0f64; m + 1];
    let mut col = vec![0f64; m];
    let mut tmp = vec![0f64; m];
    let mut g: Vec<f64> = site.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    // along y for each x
    for i in 0..nx {
        for j in 0..ny {
            col[j] = g[j * nx + i];
        }
        edt_1d(&col[..ny], &mut tmp[..ny], &mut v, &mut z);
        for j in 0..ny {
            g[j * nx + i] = tmp[j];
        }
    }
    // along x for each y
    for j in 0..ny {
        col[..nx].copy_from_slice(&g[j * nx..(j + 1) * nx]);
        edt_1d(&col[..nx], &mut tmp[..nx], &mut v, &mut z);
        g[j * nx..(j + 1) * nx].copy_from_slice(&tmp[..nx]);
    }
    g.into_iter().map(|d| if d >= FAR * 0.5 { None } else { Some(d) }).collect()
}

/// Signed distance in cells for one slice: feasible cells get the distance
/// to the nearest infeasible cell minus one (so boundary cells are zero),
/// infeasible cells the negated distance to the nearest feasible cell.
/// Everything beyond the slice edge counts as infeasible.
pub fn signed_distance(mask: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let (px, py) = (nx + 2, ny + 2);
    let mut outside = vec![true; px * py];
    for j in 0..ny {
        for i in 0..nx {
            outside[(j + 1) * px + i + 1] = !mask[j * nx + i];
        }
    }
    let d_out = squared_distance(&outside, px, py);
    let d_in = squared_distance(mask, nx, ny);
    let far = (nx + ny) as f64;
    let mut sdf = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            sdf[k] = if mask[k] {
                d_out[(j + 1) * px + i + 1].map_or(far, f64::sqrt) - 1.0
            } else {
                -d_in[k].map_or(far, f64::sqrt)
            };
        }
    }
    sdf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(mask: &[bool], nx: usize, ny: usize) -> Vec<f64> {
        let inside = |i: i64, j: i64| i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && mask[j as usize * nx + i as usize];
        let mut out = vec![0.0; nx * ny];
        for j in 0..ny as i64 {
            for i in 0..nx as i64 {
                let me = inside(i, j);
                let mut best = f64::INFINITY;
                for jj in -1..=ny as i64 {
                    for ii in -1..=nx as i64 {
                        if inside(ii, jj) != me {
                            let d = (((ii - i).pow(2) + (jj - j).pow(2)) as f64).sqrt();
                            best = best.min(d);
                        }
                    }
                }
                if best.is_infinite() {
                    best = (nx + ny) as f64;
                }
                out[j as usize * nx + i as usize] = if me { best - 1.0 } else { -best };
            }
        }
        out
    }

    #[test]
    fn boundary_cells_are_zero() {
        let (nx, ny) = (9, 7);
        let mut mask = vec![false; nx * ny];
        for j in 2..5 {
            for i in 2..7 {
                mask[j * nx + i] = true;
            }
        }
        let s = signed_distance(&mask, nx, ny);
        assert_eq!(s[2 * nx + 2], 0.0);
        assert_eq!(s[3 * nx + 3], 1.0);
        assert_eq!(s[3 * nx + 1], -1.0);
        assert!(s[0] < -2.0);
    }

    #[test]
    fn deep_interior_of_wide_region() {
        let (nx, ny) = (30, 30);
        let mut mask = vec![false; nx * ny];
        for j in 5..25 {
            for i in 5..25 {
                mask[j * nx + i] = true;
            }
        }
        let s = signed_distance(&mask, nx, ny);
        assert!(s[15 * nx + 15] >= 5.0);
        assert_eq!(s, brute(&mask, nx, ny));
    }

    #[test]
    fn empty_and_full_masks() {
        let s = signed_distance(&[false; 12], 4, 3);
        assert!(s.iter().all(|&v| v == -7.0));
        let s = signed_distance(&[true; 12], 4, 3);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[5], 1.0);
    }

    proptest! {
        #[test]
        fn matches_brute_force(nx in 1usize..12, ny in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let mask: Vec<bool> = bits[..nx * ny].to_vec();
            let fast = signed_distance(&mask, nx, ny);
            let slow = brute(&mask, nx, ny);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}
