//! Dyadic covers, bump partitions of unity and the Green's-theorem bound on
//! `|f^(t)(x)|`.
//!
//! The chain being measured is
//!
//! ```text
//! |t!/(2 pi i) contour f(z) (z-x)^-(t+1) dz|
//!     <= t!/pi sum_j int_{Q_j*} |f - f_{Q_j*}| |z-x|^-(t+1) |dphi_j/dzbar| dA
//! ```
//!
//! where `phi_j` is a partition of unity subordinate to the dilated cover
//! squares `Q_j* = (3/2) Q_j`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campanato::{CampanatoParams, FunctionHandle};
use crate::error::{Error, Result};
use crate::geometry::{CellClass, DyadicGrid, DyadicSquare, Point, Rect, Region, SquareBox};
use crate::hausdorff::{full_cost_table, MeasureFunction};

/// Interior-disjoint dyadic squares covering `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicCover {
    pub grid: DyadicGrid,
    pub squares: Vec<DyadicSquare>,
    pub target: Region,
}

impl DyadicCover {
    pub fn boxes(&self) -> Vec<SquareBox> {
        self.squares.iter().map(|s| self.grid.cell(*s)).collect()
    }

    pub fn cost(&self, h: &MeasureFunction) -> f64 {
        self.squares.iter().map(|s| h.eval(self.grid.side_at(s.level))).sum()
    }

    /// No two edge-adjacent squares differ by more than one level.
    pub fn is_balanced(&self) -> bool {
        let set: HashSet<DyadicSquare> = self.squares.iter().copied().collect();
        self.squares.iter().all(|q| coarse_neighbor(&set, *q).is_none())
    }
}

const EDGES: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// A member of `set` at least two levels coarser than `q` and edge-adjacent to it.
fn coarse_neighbor(set: &HashSet<DyadicSquare>, q: DyadicSquare) -> Option<DyadicSquare> {
    if q.level < 2 {
        return None;
    }
    for (dx, dy) in EDGES {
        let Some(n) = q.neighbor(dx, dy) else { continue };
        for l in (0..=q.level - 2).rev() {
            let a = n.ancestor(l);
            if set.contains(&a) {
                return Some(a);
            }
        }
    }
    None
}

fn select(
    k: &Region,
    grid: &DyadicGrid,
    h: &MeasureFunction,
    full: &[f64],
    sq: DyadicSquare,
    out: &mut Vec<DyadicSquare>,
) -> f64 {
    let own = h.eval(grid.side_at(sq.level));
    match k.classify_cell_interior(&grid.cell(sq)) {
        CellClass::Empty => 0.0,
        CellClass::Full if full[sq.level as usize] >= own => {
            out.push(sq);
            own
        }
        _ if sq.level == grid.depth => {
            out.push(sq);
            own
        }
        _ => {
            let mark = out.len();
            let children: f64 = sq.children().iter().map(|c| select(k, grid, h, full, *c, out)).sum();
            if own <= children {
                out.truncate(mark);
                out.push(sq);
                own
            } else {
                children
            }
        }
    }
}

/// Cheapest cover for the kernel `h` down to the grid depth, then 2:1 balanced.
///
/// Cells are tested on their open interiors, which covers every set that is
/// the closure of its interior (disks, annuli and their CSG combinations).
pub fn dyadic_cover(k: &Region, grid: &DyadicGrid, h: &MeasureFunction) -> Result<DyadicCover> {
    if k.bbox().is_none() {
        return Ok(DyadicCover { grid: *grid, squares: Vec::new(), target: k.clone() });
    }
    grid.check_contains(k)?;
    let full = full_cost_table(grid, h);
    let mut picked = Vec::new();
    select(k, grid, h, &full, DyadicSquare::ROOT, &mut picked);
    let mut set: HashSet<DyadicSquare> = picked.iter().copied().collect();
    let mut queue = picked;
    while let Some(q) = queue.pop() {
        if !set.contains(&q) {
            continue;
        }
        if let Some(a) = coarse_neighbor(&set, q) {
            set.remove(&a);
            for c in a.children() {
                set.insert(c);
                queue.push(c);
            }
            queue.push(q);
        }
    }
    let mut squares: Vec<DyadicSquare> = set.into_iter().collect();
    squares.sort_by_key(|s| (s.level, s.iy, s.ix));
    Ok(DyadicCover { grid: *grid, squares, target: k.clone() })
}

/// Polynomial smoothstep `S_N` on `[0, 1]` and its derivative.
fn smoothstep(n: u32, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    let n = n as i32;
    let mut s = 0.0;
    for k in 0..=n {
        s += binom(n + k, k) * binom(2 * n + 1, n - k) * (-x).powi(k);
    }
    let val = x.powi(n + 1) * s;
    let c = (n + 1) as f64 * binom(2 * n + 1, n);
    let der = c * x.powi(n) * (1.0 - x).powi(n);
    (val, der)
}

fn binom(n: i32, k: i32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Smooth partition of unity over the dilated squares of a balanced cover.
///
/// `psi_j` is a tensor product of smoothsteps, equal to 1 on `(5/4) Q_j` and
/// 0 off `(3/2) Q_j`. With `Psi = sum psi_k`, `phi_j = psi_j / M(Psi)` where
/// `M(s) = s` for `s >= 1` and `s + (1-s)^(N+2)` below 1. Hence
/// `sum phi_j = 1` wherever `Psi >= 1`, a neighbourhood of the union of the
/// `Q_j`, and every `phi_j` vanishes to order `N` on the edge of `Q_j*`.
#[derive(Debug, Clone)]
pub struct BumpPartition {
    pub squares: Vec<SquareBox>,
    pub smoothness: u32,
    neighbors: Vec<Vec<usize>>,
    /// Sampled `max_j side_j * |grad phi_j|`.
    pub gradient_constant: f64,
}

fn star(q: &SquareBox) -> Rect {
    let c = q.center();
    let h = 0.75 * q.side;
    Rect { x0: c.re - h, y0: c.im - h, x1: c.re + h, y1: c.im + h }
}

fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1
}

pub fn bump_partition(cover: &DyadicCover, smoothness: u32) -> Result<BumpPartition> {
    if !cover.is_balanced() {
        return Err(Error::BalanceRequired);
    }
    let squares = cover.boxes();
    let stars: Vec<Rect> = squares.iter().map(star).collect();
    let neighbors: Vec<Vec<usize>> = (0..squares.len())
        .into_par_iter()
        .map(|j| (0..squares.len()).filter(|&k| k != j && overlaps(&stars[j], &stars[k])).collect())
        .collect();
    let mut part = BumpPartition { squares, smoothness, neighbors, gradient_constant: 0.0 };
    let grads: Vec<f64> = (0..part.squares.len())
        .into_par_iter()
        .map(|j| {
            let r = stars[j];
            let q = part.squares[j];
            let m = 33;
            let mut best = 0.0f64;
            for a in 0..m {
                for b in 0..m {
                    let z = Point::new(
                        r.x0 + r.width() * a as f64 / (m - 1) as f64,
                        r.y0 + r.height() * b as f64 / (m - 1) as f64,
                    );
                    let (_, gx, gy) = part.phi_with_grad(j, z);
                    best = best.max(q.side * gx.hypot(gy));
                }
            }
            best
        })
        .collect();
    part.gradient_constant = grads.into_iter().fold(0.0, f64::max);
    Ok(part)
}

impl BumpPartition {
    pub fn len(&self) -> usize {
        self.squares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.squares.is_empty()
    }

    /// Support `Q_j*` of `phi_j`.
    pub fn support(&self, j: usize) -> Rect {
        star(&self.squares[j])
    }

    fn profile(&self, u: f64, s: f64) -> (f64, f64) {
        let a = u.abs();
        let (lo, hi) = (0.625 * s, 0.75 * s);
        if a <= lo {
            (1.0, 0.0)
        } else if a >= hi {
            (0.0, 0.0)
        } else {
            let w = 0.125 * s;
            let (v, d) = smoothstep(self.smoothness, (hi - a) / w);
            (v, -u.signum() * d / w)
        }
    }

    /// `psi_j` and its gradient.
    pub fn psi(&self, j: usize, z: Point) -> (f64, f64, f64) {
        let q = &self.squares[j];
        let c = q.center();
        let (bx, dx) = self.profile(z.re - c.re, q.side);
        let (by, dy) = self.profile(z.im - c.im, q.side);
        (bx * by, dx * by, bx * dy)
    }

    fn norm_fn(&self, s: f64) -> (f64, f64) {
        if s >= 1.0 {
            (s, 1.0)
        } else {
            let e = self.smoothness as i32 + 2;
            (s + (1.0 - s).powi(e), 1.0 - e as f64 * (1.0 - s).powi(e - 1))
        }
    }

    /// `phi_j` and its gradient.
    pub fn phi_with_grad(&self, j: usize, z: Point) -> (f64, f64, f64) {
        let (pj, pjx, pjy) = self.psi(j, z);
        if pj == 0.0 && pjx == 0.0 && pjy == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let (mut s, mut sx, mut sy) = (pj, pjx, pjy);
        for &k in &self.neighbors[j] {
            let (v, gx, gy) = self.psi(k, z);
            s += v;
            sx += gx;
            sy += gy;
        }
        let (m, dm) = self.norm_fn(s);
        let phi = pj / m;
        let gx = pjx / m - pj * dm * sx / (m * m);
        let gy = pjy / m - pj * dm * sy / (m * m);
        (phi, gx, gy)
    }

    pub fn phi(&self, j: usize, z: Point) -> f64 {
        self.phi_with_grad(j, z).0
    }

    /// `d phi_j / d zbar = (d_x + i d_y) phi_j / 2`.
    pub fn dbar(&self, j: usize, z: Point) -> Complex64 {
        let (_, gx, gy) = self.phi_with_grad(j, z);
        Complex64::new(0.5 * gx, 0.5 * gy)
    }

    /// `sum_j phi_j(z)`.
    pub fn sum(&self, z: Point) -> f64 {
        (0..self.len()).filter(|&j| self.support(j).contains(z)).map(|j| self.phi(j, z)).sum()
    }

    /// Break points of `phi_j` along each axis, clipped to its support.
    fn breaks(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        let r = self.support(j);
        let mut xs = vec![r.x0, r.x1];
        let mut ys = vec![r.y0, r.y1];
        for k in std::iter::once(j).chain(self.neighbors[j].iter().copied()) {
            let q = &self.squares[k];
            let c = q.center();
            for f in [-0.75, -0.625, 0.625, 0.75] {
                xs.push(c.re + f * q.side);
                ys.push(c.im + f * q.side);
            }
        }
        let clip = |v: &mut Vec<f64>, lo: f64, hi: f64| {
            v.retain(|t| *t >= lo && *t <= hi);
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
        };
        clip(&mut xs, r.x0, r.x1);
        clip(&mut ys, r.y0, r.y1);
        (xs, ys)
    }

    /// Tensor Gauss-Legendre nodes over `Q_j*`, split at the break points.
    /// About `nodes` points in total; every piece uses an even degree, so
    /// no node sits at the centre of a symmetric piece.
    pub fn nodes(&self, j: usize, nodes: usize) -> Vec<(Point, f64)> {
        let (xs, ys) = self.breaks(j);
        let per_axis = (nodes as f64).sqrt().ceil() as usize;
        let rule = |pieces: usize| {
            let d = (per_axis / pieces.max(1)).max(4);
            let d = d + d % 2;
            GaussLegendre::new(NonZeroUsize::new(d).expect("positive degree"))
        };
        let axis = |b: &[f64]| -> Vec<(f64, f64)> {
            let g = rule(b.len() - 1);
            let mut out = Vec::new();
            for w in b.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                let (m, hw) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                for &(x, wt) in g.as_node_weight_pairs() {
                    out.push((m + hw * x, hw * wt));
                }
            }
            out
        };
        let ax = axis(&xs);
        let ay = axis(&ys);
        let mut out = Vec::with_capacity(ax.len() * ay.len());
        for &(x, wx) in &ax {
            for &(y, wy) in &ay {
                out.push((Point::new(x, y), wx * wy));
            }
        }
        out
    }
}

fn check_outside(part: &BumpPartition, x: Point) -> Result<()> {
    if (0..part.len()).any(|j| part.support(j).contains(x)) {
        return Err(Error::SingularityInsideSupport);
    }
    Ok(())
}

/// `max_j |int_{Q_j*} (z-x)^-(t+1) dphi_j/dzbar dA|`; zero in exact arithmetic.
pub fn moment_vanish_check(part: &BumpPartition, x: Point, t: u32, nodes: usize) -> Result<f64> {
    check_outside(part, x)?;
    let vals: Vec<f64> = (0..part.len())
        .into_par_iter()
        .map(|j| {
            let mut s = Complex64::new(0.0, 0.0);
            for (z, w) in part.nodes(j, nodes) {
                s += part.dbar(j, z) * w / (z.z() - x.z()).powu(t + 1);
            }
            s.norm()
        })
        .collect();
    Ok(vals.into_iter().fold(0.0, f64::max))
}

/// Both sides of the Green's-theorem estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenReport {
    /// `t!/pi sum_j int |f - f_Q*| |z-x|^-(t+1) |dphi_j/dzbar| dA`.
    pub bound: f64,
    /// The same after Hoelder in `L^p x L^q` on each `Q_j*`.
    pub holder_bound: f64,
    /// `|t!/(2 pi i) contour f(z) (z-x)^-(t+1) dz|` around the cover.
    pub contour: f64,
    pub moment_residual: f64,
    pub gradient_constant: f64,
    pub squares: usize,
}

/// Order of the smoothstep used by the Green bound.
pub const GREEN_SMOOTHNESS: u32 = 3;

fn factorial(t: u32) -> f64 {
    (1..=t).map(f64::from).product()
}

fn union_interior_contains(boxes: &[SquareBox], p: Point) -> bool {
    let smin = boxes.iter().map(|b| b.side).fold(f64::INFINITY, f64::min);
    let d = 1e-9 * smin;
    let probes = [(0.0, 0.0), (d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d), (d, d), (-d, d), (d, -d), (-d, -d)];
    probes.iter().all(|(dx, dy)| boxes.iter().any(|b| b.contains(p.translate(*dx, *dy))))
}

fn check_poles(cover: &DyadicCover, poles: &[Point]) -> Result<()> {
    let boxes = cover.boxes();
    if poles.iter().any(|p| !union_interior_contains(&boxes, *p)) {
        return Err(Error::PolesNotIsolated);
    }
    Ok(())
}

fn per_square(
    f: &FunctionHandle,
    part: &BumpPartition,
    j: usize,
    x: Point,
    t: u32,
    p: f64,
    nodes: usize,
) -> Result<(f64, f64)> {
    let pts = part.nodes(j, nodes);
    let vals: Vec<Complex64> = pts.iter().map(|(z, _)| f.eval(*z)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotIntegrable);
    }
    let area: f64 = pts.iter().map(|(_, w)| w).sum();
    let mean = pts.iter().zip(&vals).map(|((_, w), v)| v * *w).sum::<Complex64>() / area;
    let mut direct = 0.0;
    let mut lp = 0.0;
    let mut lq = 0.0;
    let mut sup_d = 0.0f64;
    let q = if p > 1.0 { p / (p - 1.0) } else { f64::INFINITY };
    for ((z, w), v) in pts.iter().zip(&vals) {
        let d = part.dbar(j, *z).norm();
        let osc = (v - mean).norm();
        direct += w * osc * d / (z.z() - x.z()).norm().powi(t as i32 + 1);
        lp += w * osc.powf(p);
        if q.is_finite() {
            lq += w * d.powf(q);
        } else {
            sup_d = sup_d.max(d);
        }
    }
    let r = part.support(j);
    let kernel_sup = r.min_dist(x).powi(-(t as i32 + 1));
    let dnorm = if q.is_finite() { lq.powf(1.0 / q) } else { sup_d };
    Ok((direct, kernel_sup * lp.powf(1.0 / p) * dnorm))
}

/// The Green's-theorem bound on `|f^(t)(x)|` for `f` analytic off the cover.
pub fn green_derivative_bound(
    f: &FunctionHandle,
    poles: &[Point],
    x: Point,
    t: u32,
    params: &CampanatoParams,
    cover: &DyadicCover,
    nodes: usize,
) -> Result<f64> {
    Ok(green_parts(f, poles, x, t, params, cover, nodes)?.0)
}

fn green_parts(
    f: &FunctionHandle,
    poles: &[Point],
    x: Point,
    t: u32,
    params: &CampanatoParams,
    cover: &DyadicCover,
    nodes: usize,
) -> Result<(f64, f64, BumpPartition)> {
    params.check_exponents()?;
    check_poles(cover, poles)?;
    let part = bump_partition(cover, GREEN_SMOOTHNESS)?;
    check_outside(&part, x)?;
    let parts: Vec<Result<(f64, f64)>> =
        (0..part.len()).into_par_iter().map(|j| per_square(f, &part, j, x, t, params.p, nodes)).collect();
    let (mut direct, mut holder) = (0.0, 0.0);
    for r in parts {
        let (d, h) = r?;
        direct += d;
        holder += h;
    }
    let c = factorial(t) / PI;
    Ok((c * direct, c * holder, part))
}

/// `|t!/(2 pi i) contour f(z) (z-x)^-(t+1) dz|` over a rectangle enclosing
/// every `Q_j*` but not `x`; equals `|f^(t)(x)|` when every pole of `f` is
/// inside.
pub fn contour_derivative(f: &FunctionHandle, x: Point, t: u32, cover: &DyadicCover, nodes: usize) -> Result<f64> {
    let boxes = cover.boxes();
    let Some(bb) = boxes.iter().map(star).reduce(|a, b| a.union(&b)) else { return Ok(0.0) };
    let pad = 0.125 * boxes.iter().map(|b| b.side).fold(f64::INFINITY, f64::min);
    let r = Rect { x0: bb.x0 - pad, y0: bb.y0 - pad, x1: bb.x1 + pad, y1: bb.y1 + pad };
    if r.contains(x) {
        return Err(Error::SingularityInsideSupport);
    }
    let corners = [
        Complex64::new(r.x0, r.y0),
        Complex64::new(r.x1, r.y0),
        Complex64::new(r.x1, r.y1),
        Complex64::new(r.x0, r.y1),
    ];
    let g = GaussLegendre::new(NonZeroUsize::new(16).expect("positive degree"));
    let panels = (nodes / 64).clamp(8, 4096);
    let mut s = Complex64::new(0.0, 0.0);
    for e in 0..4 {
        let (a, b) = (corners[e], corners[(e + 1) % 4]);
        for k in 0..panels {
            let pa = a + (b - a) * (k as f64 / panels as f64);
            let pb = a + (b - a) * ((k + 1) as f64 / panels as f64);
            let (m, hw) = ((pa + pb) * 0.5, (pb - pa) * 0.5);
            for &(u, w) in g.as_node_weight_pairs() {
                let z = m + hw * u;
                let v = f.eval(Point::from(z));
                if !v.is_finite() {
                    return Err(Error::NotIntegrable);
                }
                s += v / (z - x.z()).powu(t + 1) * hw * w;
            }
        }
    }
    Ok((s * factorial(t) / (2.0 * PI)).norm())
}

/// Runs both sides of the estimate and the moment check.
pub fn sufficiency_check(
    f: &FunctionHandle,
    poles: &[Point],
    x: Point,
    t: u32,
    params: &CampanatoParams,
    cover: &DyadicCover,
    nodes: usize,
) -> Result<GreenReport> {
    let (bound, holder_bound, part) = green_parts(f, poles, x, t, params, cover, nodes)?;
    Ok(GreenReport {
        bound,
        holder_bound,
        contour: contour_derivative(f, x, t, cover, nodes)?,
        moment_residual: moment_vanish_check(&part, x, t, nodes)?,
        gradient_constant: part.gradient_constant,
        squares: part.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campanato::{Builtin, Pole};
    use crate::hausdorff::content_upper;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn root() -> Region {
        Region::square(-1.0, -1.0, 2.0).unwrap()
    }

    fn cover_of(k: &Region, depth: u32) -> DyadicCover {
        dyadic_cover(k, &DyadicGrid::unit(depth), &MeasureFunction::power(1.0).unwrap()).unwrap()
    }

    fn poles(at: Point, order: u32) -> FunctionHandle {
        let p = Pole { at, residue: Complex64::new(1.0, 0.0), order };
        FunctionHandle::builtin(Builtin::Poles(vec![p]), root())
    }

    #[test]
    fn smoothstep_endpoints_and_slope() {
        for n in 0..6 {
            assert_eq!(smoothstep(n, 0.0).0, 0.0);
            assert_eq!(smoothstep(n, 1.0).0, 1.0);
            assert!((smoothstep(n, 0.5).0 - 0.5).abs() < 1e-14);
            for x in [0.1, 0.37, 0.8] {
                let h = 1e-6;
                let fd = (smoothstep(n, x + h).0 - smoothstep(n, x - h).0) / (2.0 * h);
                assert!((fd - smoothstep(n, x).1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_cell_covers_itself() {
        let grid = DyadicGrid::unit(5);
        let sq = DyadicSquare { level: 3, ix: 2, iy: 5 };
        let b = grid.cell(sq);
        let k = Region::square(b.corner.re, b.corner.im, b.side).unwrap();
        let c = dyadic_cover(&k, &grid, &MeasureFunction::power(1.0).unwrap()).unwrap();
        assert_eq!(c.squares, vec![sq]);
    }

    #[test]
    fn empty_region_gives_empty_cover() {
        assert!(cover_of(&Region::empty(), 6).squares.is_empty());
    }

    #[test]
    fn disk_cover_cost_near_radius() {
        let k = Region::disk(0.0, 0.0, 0.125).unwrap();
        let h = MeasureFunction::power(1.0).unwrap();
        let grid = DyadicGrid::unit(6);
        let c = dyadic_cover(&k, &grid, &h).unwrap();
        let cost = c.cost(&h);
        assert!((0.125 / 4.0..=4.0 * 0.125).contains(&cost), "{cost}");
        let upper = content_upper(&k, &h, &grid).unwrap();
        assert!(cost >= upper - 1e-12 && cost <= 4.0 * upper);
    }

    #[test]
    fn unbalanced_cover_is_rejected() {
        let grid = DyadicGrid::unit(6);
        let big = DyadicSquare { level: 1, ix: 0, iy: 0 };
        let small = DyadicSquare { level: 4, ix: 8, iy: 0 };
        let c = DyadicCover { grid, squares: vec![big, small], target: Region::empty() };
        assert!(!c.is_balanced());
        assert!(matches!(bump_partition(&c, 3), Err(Error::BalanceRequired)));
    }

    #[test]
    fn single_square_bump() {
        let grid = DyadicGrid::unit(4);
        let sq = DyadicSquare { level: 2, ix: 1, iy: 1 };
        let c = DyadicCover { grid, squares: vec![sq], target: Region::empty() };
        let part = bump_partition(&c, 3).unwrap();
        let q = grid.cell(sq);
        let r = part.support(0);
        for a in 0..=40 {
            for b in 0..=40 {
                let z = Point::new(r.x0 + r.width() * a as f64 / 40.0, r.y0 + r.height() * b as f64 / 40.0);
                let v = part.phi(0, z);
                assert!((0.0..=1.0).contains(&v));
                if q.contains(z) {
                    assert_eq!(v, 1.0);
                }
            }
        }
        assert!(part.gradient_constant > 0.0 && part.gradient_constant < 100.0);
    }

    #[test]
    fn two_adjacent_squares_sum_to_one() {
        let grid = DyadicGrid::unit(4);
        let a = DyadicSquare { level: 3, ix: 3, iy: 4 };
        let b = DyadicSquare { level: 3, ix: 4, iy: 4 };
        let c = DyadicCover { grid, squares: vec![a, b], target: Region::empty() };
        let part = bump_partition(&c, 3).unwrap();
        let r = grid.cell(a).rect().union(&grid.cell(b).rect());
        for i in 1..64 {
            for j in 1..64 {
                let z = Point::new(r.x0 + r.width() * i as f64 / 64.0, r.y0 + r.height() * j as f64 / 64.0);
                assert!((part.sum(z) - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn dbar_matches_finite_differences() {
        let k = Region::disk(0.1, -0.05, 0.2).unwrap();
        let part = bump_partition(&cover_of(&k, 5), 3).unwrap();
        let h = 1e-7;
        for j in (0..part.len()).step_by(7) {
            let r = part.support(j);
            for (u, v) in [(0.1, 0.2), (0.93, 0.5), (0.05, 0.95), (0.7, 0.12)] {
                let z = Point::new(r.x0 + u * r.width(), r.y0 + v * r.height());
                let fx = (part.phi(j, z.translate(h, 0.0)) - part.phi(j, z.translate(-h, 0.0))) / (2.0 * h);
                let fy = (part.phi(j, z.translate(0.0, h)) - part.phi(j, z.translate(0.0, -h))) / (2.0 * h);
                let d = part.dbar(j, z);
                let scale = 1.0 / part.squares[j].side;
                assert!((d.re - 0.5 * fx).abs() < 1e-5 * scale && (d.im - 0.5 * fy).abs() < 1e-5 * scale);
            }
        }
    }

    #[test]
    fn gradient_constant_stable_across_depths() {
        let k = Region::difference(Region::disk(0.0, 0.0, 0.6).unwrap(), Region::disk(0.2, 0.1, 0.25).unwrap());
        let c4 = bump_partition(&cover_of(&k, 4), 3).unwrap().gradient_constant;
        let c8 = bump_partition(&cover_of(&k, 8), 3).unwrap().gradient_constant;
        let ratio = c4.max(c8) / c4.min(c8);
        assert!(ratio < 2.0, "{c4} {c8}");
    }

    fn single_bump() -> BumpPartition {
        let grid = DyadicGrid::unit(6);
        let sq = DyadicSquare { level: 5, ix: 10, iy: 13 };
        bump_partition(&DyadicCover { grid, squares: vec![sq], target: Region::empty() }, 3).unwrap()
    }

    #[test]
    fn moments_vanish_for_single_bump() {
        let part = single_bump();
        let q = part.squares[0];
        let near = q.center().translate(10.0 * q.side, 0.0);
        let r0 = moment_vanish_check(&part, near, 0, 128 * 128).unwrap();
        let r2 = moment_vanish_check(&part, near, 2, 128 * 128).unwrap();
        assert!(r0 < 1e-6, "{r0}");
        assert!(r2 < 1e-5, "{r2}");
        let far = Point::new(0.999, 0.999);
        let rf = moment_vanish_check(&part, far, 2, 128 * 128).unwrap();
        let close = q.center().translate(1.5 * q.side, 0.0);
        let rc = moment_vanish_check(&part, close, 2, 128 * 128).unwrap();
        assert!(rf < rc, "{rf} {rc}");
    }

    #[test]
    fn moment_check_rejects_inside_point() {
        let part = single_bump();
        let z = part.squares[0].center();
        assert!(matches!(moment_vanish_check(&part, z, 0, 256), Err(Error::SingularityInsideSupport)));
    }

    #[test]
    fn constant_function_has_zero_bound() {
        let k = Region::disk(0.3, 0.3, 0.1).unwrap();
        let c = cover_of(&k, 6);
        let f = FunctionHandle::builtin(Builtin::Constant { value: Complex64::new(2.0, -1.0) }, root());
        let params = CampanatoParams::new(2.0, 2.0).unwrap();
        let rep = sufficiency_check(&f, &[], Point::new(-0.8, -0.8), 1, &params, &c, 32 * 32).unwrap();
        assert!(rep.bound < 1e-12 && rep.holder_bound < 1e-12);
        assert!(rep.contour < 1e-12);
    }

    #[test]
    fn green_bound_dominates_pole_derivatives() {
        let zeta = Point::new(0.375, 0.0);
        let k = Region::disk(zeta.re, zeta.im, 0.03).unwrap();
        let c = cover_of(&k, 7);
        let params = CampanatoParams::new(1.5, 2.0).unwrap();
        for order in [1, 2] {
            let f = poles(zeta, order);
            for t in [0u32, 1] {
                let rep = sufficiency_check(&f, &[zeta], Point::ORIGIN, t, &params, &c, 64 * 64).unwrap();
                // d^t/dz^t (z - zeta)^-m at 0
                let m = order as i32;
                let exact = (m..m + t as i32).map(f64::from).product::<f64>() * zeta.norm().powi(-(m + t as i32));
                assert!((rep.contour - exact).abs() < 1e-9 * exact, "{} {exact}", rep.contour);
                assert!(1.1 * rep.bound >= rep.contour, "{rep:?}");
                assert!(rep.holder_bound >= rep.bound * (1.0 - 1e-9));
            }
        }
    }

    #[test]
    fn uncovered_pole_is_rejected() {
        let c = cover_of(&Region::disk(0.5, 0.5, 0.05).unwrap(), 6);
        let f = poles(Point::new(-0.5, 0.0), 1);
        let params = CampanatoParams::new(2.0, 2.0).unwrap();
        let e = green_derivative_bound(&f, &[Point::new(-0.5, 0.0)], Point::ORIGIN, 0, &params, &c, 256);
        assert!(matches!(e, Err(Error::PolesNotIsolated)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn covers_are_balanced_and_cover(
            cx in -0.6f64..0.6, cy in -0.6f64..0.6, r in 0.02f64..0.3,
            dx in -0.2f64..0.2, rr in 0.01f64..0.2, depth in 4u32..8,
        ) {
            let k = Region::difference(
                Region::disk(cx, cy, r).unwrap(),
                Region::disk(cx + dx, cy, rr).unwrap(),
            );
            let c = cover_of(&k, depth);
            prop_assert!(c.is_balanced());
            let boxes = c.boxes();
            for i in 0..40 {
                let a = i as f64 * 0.618_033_988_7 % 1.0;
                let b = i as f64 * 0.414_213_562_3 % 1.0;
                let z = Point::new(cx + r * (2.0 * a - 1.0), cy + r * (2.0 * b - 1.0));
                if k.interior_contains(z) {
                    prop_assert!(boxes.iter().any(|q| q.contains(z)));
                }
            }
        }

        #[test]
        fn partition_of_unity_on_cover(
            cx in -0.5f64..0.5, cy in -0.5f64..0.5, r in 0.05f64..0.3, depth in 4u32..7,
        ) {
            let k = Region::disk(cx, cy, r).unwrap();
            let part = bump_partition(&cover_of(&k, depth), 3).unwrap();
            for (j, q) in part.squares.iter().enumerate().step_by(3) {
                let e = 0.25 * q.side;
                for (u, v) in [(0.0, 0.0), (0.3, 0.7), (1.0, 1.0), (0.5, 0.1)] {
                    let z = Point::new(q.corner.re + u * q.side, q.corner.im + v * q.side);
                    prop_assert!((part.sum(z) - 1.0).abs() < 1e-12);
                    let w = z.translate(-e * 1.5, e * 0.9);
                    let p = part.phi(j, w);
                    prop_assert!((0.0..=1.0).contains(&p));
                }
            }
        }
    }
}
