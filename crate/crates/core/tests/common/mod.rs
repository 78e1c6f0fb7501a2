//! Oracles shared by the integration tests.

#![allow(dead_code)]

use writerid_core::Point;

/// Iterated integrals of a piecewise-linear path by direct nested
/// integration: every multi-index word `w·i` is accumulated as
/// `A_{w·i}(t) = ∫_0^t A_w(s) dX^i(s)` with the trapezoid rule on `sub`
/// sub-steps per linear piece. Returns levels `0..=n`, level `k` holding the
/// `2^k` words in lexicographic order (index 0 = x, 1 = y).
pub fn riemann_signature(points: &[Point], n: usize, sub: usize) -> Vec<Vec<f64>> {
    let mut grid = vec![points[0]];
    for w in points.windows(2) {
        for s in 1..=sub {
            let t = s as f64 / sub as f64;
            grid.push(Point::new(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].y + t * (w[1].y - w[0].y),
            ));
        }
    }
    let steps = grid.len() - 1;
    let dx: Vec<[f64; 2]> = grid
        .windows(2)
        .map(|w| [w[1].x - w[0].x, w[1].y - w[0].y])
        .collect();

    // running[word] = A_word evaluated at every grid time
    let mut levels = vec![vec![1.0]];
    let mut running: Vec<Vec<f64>> = vec![vec![1.0; steps + 1]];
    for _ in 1..=n {
        let mut next = Vec::with_capacity(running.len() * 2);
        for prev in &running {
            for axis in 0..2 {
                let mut a = vec![0.0; steps + 1];
                for m in 0..steps {
                    a[m + 1] = a[m] + 0.5 * (prev[m] + prev[m + 1]) * dx[m][axis];
                }
                next.push(a);
            }
        }
        levels.push(next.iter().map(|a| a[steps]).collect());
        running = next;
    }
    levels
}

/// Distance from a point to a segment.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0)
    };
    (p.x - a.x - t * vx).hypot(p.y - a.y - t * vy)
}

/// Binomial-proportion half-width at `z` standard deviations.
pub fn binomial_halfwidth(p: f64, n: usize, z: f64) -> f64 {
    z * (p * (1.0 - p) / n as f64).sqrt()
}
