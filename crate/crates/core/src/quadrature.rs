//! Fixed quadrature rules on disks and squares.

use std::f64::consts::PI;

use crate::geometry::{Point, SquareBox};

/// Node with its area weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub at: Point,
    pub weight: f64,
}

/// Midpoint rule on a polar grid over the disk `B(center, r)`.
///
/// Rings are equal in width; the node radius of ring `i` is
/// `sqrt((r_i^2 + r_{i+1}^2) / 2)`, which integrates `|z - center|^2` exactly.
/// The weights sum to `pi r^2` up to rounding. At least `nodes` points are
/// produced.
pub fn polar_midpoint(center: Point, r: f64, nodes: usize) -> Vec<Node> {
    let nr = ((nodes.max(1) as f64 / 4.0).sqrt().ceil() as usize).max(1);
    let nt = 4 * nr;
    let mut out = Vec::with_capacity(nr * nt);
    for i in 0..nr {
        let r0 = r * i as f64 / nr as f64;
        let r1 = r * (i + 1) as f64 / nr as f64;
        let rho = ((r0 * r0 + r1 * r1) / 2.0).sqrt();
        let w = PI * (r1 * r1 - r0 * r0) / nt as f64;
        for j in 0..nt {
            let th = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
            out.push(Node { at: Point::new(center.re + rho * th.cos(), center.im + rho * th.sin()), weight: w });
        }
    }
    out
}

/// `k x k` midpoint rule on a square cell.
pub fn square_midpoint(cell: &SquareBox, k: usize) -> Vec<Node> {
    let k = k.max(1);
    let h = cell.side / k as f64;
    let w = h * h;
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(Node {
                at: Point::new(cell.corner.re + (i as f64 + 0.5) * h, cell.corner.im + (j as f64 + 0.5) * h),
                weight: w,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_weights_sum_to_area() {
        for n in [16, 100, 1000] {
            let nodes = polar_midpoint(Point::new(0.3, -0.1), 0.7, n);
            assert!(nodes.len() >= n);
            let s: f64 = nodes.iter().map(|q| q.weight).sum();
            assert!((s - PI * 0.49).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_second_moment_exact() {
        let r = 0.5;
        let nodes = polar_midpoint(Point::ORIGIN, r, 16);
        let s: f64 = nodes.iter().map(|q| q.weight * q.at.re * q.at.re).sum();
        assert!((s - PI * r.powi(4) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn square_rule_linear_exact() {
        let c = SquareBox::new(Point::new(1.0, 2.0), 0.5).unwrap();
        let nodes = square_midpoint(&c, 3);
        let s: f64 = nodes.iter().map(|q| q.weight * q.at.re).sum();
        assert!((s - 0.25 * 1.25).abs() < 1e-14);
    }
}
