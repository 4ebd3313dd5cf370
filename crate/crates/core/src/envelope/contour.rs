//! Marching squares on a boolean grid. Crossings sit at edge midpoints and
//! contours are closed, counter-clockwise around feasible regions (x right,
//! y up). Diagonal-only contact does not join regions.

use std::collections::HashMap;

/// Contours of `mask` (`nx x ny`, x fastest) in grid coordinates, where
/// cell `(i, j)` sits at `(i, j)`. The grid is treated as surrounded by
/// infeasible cells, so every contour closes.
pub fn contours(mask: &[bool], nx: usize, ny: usize) -> Vec<Vec<(f64, f64)>> {
    assert_eq!(mask.len(), nx * ny);
    let at = |i: i64, j: i64| i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && mask[j as usize * nx + i as usize];
    // a crossing is keyed by the doubled coordinates of its midpoint
    type Key = (i64, i64);
    let mut next: HashMap<Key, Key> = HashMap::new();
    let mut order: Vec<Key> = Vec::new();
    for j in -1..ny as i64 {
        for i in -1..nx as i64 {
            // corners counter-clockwise
            let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let inside = [at(c[0].0, c[0].1), at(c[1].0, c[1].1), at(c[2].0, c[2].1), at(c[3].0, c[3].1)];
            let count = inside.iter().filter(|&&b| b).count();
            if count == 0 || count == 4 {
                continue;
            }
            // crossings in counter-clockwise order: leaving (in -> out) and
            // entering (out -> in)
            let mut events: Vec<(bool, Key)> = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if inside[a] != inside[b] {
                    let key = (c[a].0 + c[b].0, c[a].1 + c[b].1);
                    events.push((inside[a], key));
                }
            }
            // each leaving crossing joins the entering crossing just before it
            let m = events.len();
            for k in 0..m {
                let (leaving, key) = events[k];
                if leaving {
                    let prev = events[(k + m - 1) % m];
                    debug_assert!(!prev.0);
                    next.insert(key, prev.1);
                    order.push(key);
                }
            }
        }
    }
    let mut out = Vec::new();
    let mut used: HashMap<Key, bool> = HashMap::new();
    for &start in &order {
        if used.contains_key(&start) {
            continue;
        }
        let mut poly = Vec::new();
        let mut k = start;
        loop {
            used.insert(k, true);
            poly.push((k.0 as f64 / 2.0, k.1 as f64 / 2.0));
            k = next[&k];
            if k == start {
                break;
            }
        }
        out.push(poly);
    }
    out
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        a += x0 * y1 - x1 * y0;
    }
    0.5 * a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rectangle_gives_one_ccw_contour() {
        let (nx, ny) = (5, 4);
        let c = contours(&vec![true; nx * ny], nx, ny);
        assert_eq!(c.len(), 1);
        let a = signed_area(&c[0]);
        assert!(a > 0.0);
        // corners are cut by half a cell diagonally
        assert!((a - (nx * ny) as f64 + 0.5).abs() < 1e-12, "area {a}");
        let xs: Vec<f64> = c[0].iter().map(|p| p.0).collect();
        assert_eq!(xs.iter().cloned().fold(f64::INFINITY, f64::min), -0.5);
        assert_eq!(xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max), nx as f64 - 0.5);
    }

    #[test]
    fn disk_area_matches_pixel_count() {
        let n = 61;
        let r = 20.0;
        let mut mask = vec![false; n * n];
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let (x, y) = (i as f64 - 30.0, j as f64 - 30.0);
                if x * x + y * y <= r * r {
                    mask[j * n + i] = true;
                    count += 1;
                }
            }
        }
        let c = contours(&mask, n, n);
        assert_eq!(c.len(), 1);
        let a = signed_area(&c[0]);
        assert!(((a - count as f64) / count as f64).abs() < 0.05);
        let disk = std::f64::consts::PI * r * r;
        assert!(((a - disk) / disk).abs() < 0.05);
    }

    #[test]
    fn two_blobs_and_a_hole() {
        let (nx, ny) = (12, 5);
        let mut mask = vec![false; nx * ny];
        for j in 1..4 {
            for i in 1..4 {
                mask[j * nx + i] = true;
            }
            for i in 6..11 {
                mask[j * nx + i] = true;
            }
        }
        assert_eq!(contours(&mask, nx, ny).len(), 2);
        // ring: outer contour counter-clockwise, hole clockwise
        let (nx, ny) = (7, 7);
        let mut ring = vec![true; nx * ny];
        ring[3 * nx + 3] = false;
        let c = contours(&ring, nx, ny);
        assert_eq!(c.len(), 2);
        let mut areas: Vec<f64> = c.iter().map(|p| signed_area(p)).collect();
        areas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(areas[0] < 0.0 && areas[1] > 0.0);
    }

    #[test]
    fn empty_mask_has_no_contours() {
        assert!(contours(&[false; 6], 3, 2).is_empty());
    }
}
