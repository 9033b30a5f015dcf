//! Campanato seminorms by quadrature over sampled balls, and the parameter
//! maps between Campanato spaces.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frostman::DiscreteMeasure;
use crate::geometry::{CellClass, Disk, Point, Rect, Region, SquareBox};
use crate::quadrature::{polar_midpoint, square_midpoint, Node};

/// Exponents `(p, lambda)` of `L^{p,lambda}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampanatoParams {
    pub p: f64,
    pub lambda: f64,
}

impl CampanatoParams {
    /// Checked constructor: `1 <= p`, `lambda >= 0`, `2 - p < lambda < 2 + p`.
    pub fn new(p: f64, lambda: f64) -> Result<Self> {
        let c = CampanatoParams { p, lambda };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, l) = (self.p, self.lambda);
        if !(p.is_finite() && l.is_finite()) || p < 1.0 || l < 0.0 || !(2.0 - p < l && l < 2.0 + p) {
            return Err(Error::InvalidParams(format!("p = {p}, lambda = {l}")));
        }
        Ok(())
    }

    /// Only `p >= 1` and `lambda >= 0`: enough for the seminorm to make sense.
    pub fn check_exponents(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite() && self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("p = {}, lambda = {}", self.p, self.lambda)));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        (self.lambda - 2.0) / self.p
    }

    /// Conjugate exponent; infinite for `p = 1`.
    pub fn q(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else {
            self.p / (self.p - 1.0)
        }
    }

    pub fn content_dim(&self) -> f64 {
        1.0 + self.alpha()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    Rational,
    Generic,
}

/// A complex function on the plane with the region it is meant for.
#[derive(Clone)]
pub struct FunctionHandle {
    evaluator: Arc<dyn Fn(Point) -> Complex64 + Send + Sync>,
    pub domain: Region,
    pub smoothness: Smoothness,
}

impl fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionHandle")
            .field("domain", &self.domain)
            .field("smoothness", &self.smoothness)
            .finish_non_exhaustive()
    }
}

impl FunctionHandle {
    pub fn new<F>(f: F, domain: Region, smoothness: Smoothness) -> Self
    where
        F: Fn(Point) -> Complex64 + Send + Sync + 'static,
    {
        FunctionHandle { evaluator: Arc::new(f), domain, smoothness }
    }

    pub fn builtin(b: Builtin, domain: Region) -> Self {
        let smoothness = match b {
            Builtin::Poles(_) | Builtin::Cauchy(_) => Smoothness::Rational,
            _ => Smoothness::Generic,
        };
        FunctionHandle::new(move |z| b.eval(z), domain, smoothness)
    }

    #[inline]
    pub fn eval(&self, z: Point) -> Complex64 {
        (self.evaluator)(z)
    }

    /// `c * f`.
    pub fn scaled(&self, c: Complex64) -> FunctionHandle {
        let g = self.evaluator.clone();
        FunctionHandle::new(move |z| c * g(z), self.domain.clone(), self.smoothness)
    }

    /// `f + c`.
    pub fn shifted(&self, c: Complex64) -> FunctionHandle {
        let g = self.evaluator.clone();
        FunctionHandle::new(move |z| g(z) + c, self.domain.clone(), self.smoothness)
    }
}

/// Pole term `residue / (z - at)^order`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub at: Point,
    pub residue: Complex64,
    #[serde(default = "simple")]
    pub order: u32,
}

fn simple() -> u32 {
    1
}

impl Pole {
    pub fn simple(at: Point, residue: Complex64) -> Pole {
        Pole { at, residue, order: 1 }
    }

    pub fn eval(&self, z: Point) -> Complex64 {
        self.residue / (z.z() - self.at.z()).powu(self.order)
    }
}

/// Functions addressable by name from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Builtin {
    Constant {
        value: Complex64,
    },
    RealPart,
    Identity,
    Conjugate,
    Poles(Vec<Pole>),
    /// `sum w / (zeta - z)` over the atoms.
    Cauchy(DiscreteMeasure),
}

impl Builtin {
    pub fn eval(&self, z: Point) -> Complex64 {
        match self {
            Builtin::Constant { value } => *value,
            Builtin::RealPart => Complex64::new(z.re, 0.0),
            Builtin::Identity => z.z(),
            Builtin::Conjugate => z.z().conj(),
            Builtin::Poles(ps) => ps.iter().map(|p| p.eval(z)).sum(),
            Builtin::Cauchy(nu) => {
                nu.atoms.iter().map(|a| Complex64::new(a.weight, 0.0) / (a.position.z() - z.z())).sum()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OscillationMode {
    MeanBased,
    InfC,
}

fn check_ball(f: &FunctionHandle, ball: &Disk) -> Result<()> {
    let dom = f.domain.bbox().ok_or(Error::EmptySupport)?;
    let b = Rect {
        x0: ball.center.re - ball.radius,
        y0: ball.center.im - ball.radius,
        x1: ball.center.re + ball.radius,
        y1: ball.center.im + ball.radius,
    };
    if !dom.contains_rect(&b) {
        return Err(Error::InvalidParams("ball leaves the function's domain".into()));
    }
    Ok(())
}

fn sample(f: &FunctionHandle, nodes: &[Node]) -> Result<Vec<Complex64>> {
    let vals: Vec<Complex64> = nodes.iter().map(|q| f.eval(q.at)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotIntegrable);
    }
    Ok(vals)
}

fn moment(nodes: &[Node], vals: &[Complex64], c: Complex64, p: f64) -> f64 {
    nodes.iter().zip(vals).map(|(q, v)| q.weight * pow_abs(*v - c, p)).sum()
}

#[inline]
fn pow_abs(z: Complex64, p: f64) -> f64 {
    if p == 2.0 {
        z.norm_sqr()
    } else if p == 1.0 {
        z.norm()
    } else {
        z.norm().powf(p)
    }
}

fn mean(nodes: &[Node], vals: &[Complex64]) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    let mut w = 0.0;
    for (q, v) in nodes.iter().zip(vals) {
        s += v * q.weight;
        w += q.weight;
    }
    s / w
}

/// Derivative-free minimisation over `c in C` seeded at `seed`.
fn nelder_mead<F: Fn(Complex64) -> f64>(g: F, seed: Complex64, step: f64, tol: f64) -> (Complex64, f64) {
    let mut s = [seed, seed + Complex64::new(step, 0.0), seed + Complex64::new(0.0, step)];
    let mut v = [g(s[0]), g(s[1]), g(s[2])];
    for _ in 0..4000 {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        s = [s[idx[0]], s[idx[1]], s[idx[2]]];
        v = [v[idx[0]], v[idx[1]], v[idx[2]]];
        let size = (s[1] - s[0]).norm().max((s[2] - s[0]).norm());
        if size <= tol * (1.0 + s[0].norm()) || (v[2] - v[0]).abs() <= tol * tol * (1.0 + v[0].abs()) {
            break;
        }
        let centroid = (s[0] + s[1]) / 2.0;
        let xr = centroid + (centroid - s[2]);
        let fr = g(xr);
        if fr < v[0] {
            let xe = centroid + (centroid - s[2]) * 2.0;
            let fe = g(xe);
            if fe < fr {
                s[2] = xe;
                v[2] = fe;
            } else {
                s[2] = xr;
                v[2] = fr;
            }
        } else if fr < v[1] {
            s[2] = xr;
            v[2] = fr;
        } else {
            let xc = if fr < v[2] { centroid + (xr - centroid) * 0.5 } else { centroid + (s[2] - centroid) * 0.5 };
            let fc = g(xc);
            if fc < v[2].min(fr) {
                s[2] = xc;
                v[2] = fc;
            } else {
                for k in 1..3 {
                    s[k] = s[0] + (s[k] - s[0]) * 0.5;
                    v[k] = g(s[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    (s[best], v[best])
}

fn oscillation_on_nodes(
    vals: &[Complex64],
    nodes: &[Node],
    r: f64,
    params: &CampanatoParams,
    mode: OscillationMode,
) -> f64 {
    let p = params.p;
    // work with deviations from one sample so constants give exact zeros
    let Some(&v0) = vals.first() else { return 0.0 };
    let devs: Vec<Complex64> = vals.iter().map(|v| v - v0).collect();
    let vals = &devs[..];
    let c0 = mean(nodes, vals);
    let at_mean = moment(nodes, vals, c0, p);
    let integral = match mode {
        OscillationMode::MeanBased => at_mean,
        OscillationMode::InfC if p == 2.0 => at_mean,
        OscillationMode::InfC => {
            let spread = vals.iter().map(|v| (*v - c0).norm()).fold(0.0, f64::max);
            if spread == 0.0 {
                0.0
            } else {
                let (_, best) = nelder_mead(|c| moment(nodes, vals, c, p), c0, 0.5 * spread, 1e-10);
                best.min(at_mean)
            }
        }
    };
    (r.powf(-params.lambda) * integral.max(0.0)).powf(1.0 / p)
}

/// `(r^-lambda int_B |f - c|^p dA)^(1/p)` by polar quadrature.
pub fn oscillation(
    f: &FunctionHandle,
    ball: &Disk,
    params: &CampanatoParams,
    mode: OscillationMode,
    nodes: usize,
) -> Result<f64> {
    if nodes < 16 {
        return Err(Error::InvalidParams(format!("{nodes} quadrature nodes, need at least 16")));
    }
    params.check_exponents()?;
    check_ball(f, ball)?;
    let q = polar_midpoint(ball.center, ball.radius, nodes);
    let vals = sample(f, &q)?;
    Ok(oscillation_on_nodes(&vals, &q, ball.radius, params, mode))
}

/// Ball family: a grid of centres crossed with a ladder of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSamplingSpec {
    pub window: Rect,
    pub centers_per_side: usize,
    pub radii: Vec<f64>,
    pub nodes: usize,
    pub mode: OscillationMode,
}

impl BallSamplingSpec {
    /// Radii `2^-k0, ..., 2^-(k0 + levels - 1)`.
    pub fn dyadic(window: Rect, centers_per_side: usize, k0: i32, levels: usize, nodes: usize) -> Self {
        let radii = (0..levels).map(|i| 2f64.powi(-(k0 + i as i32))).collect();
        BallSamplingSpec { window, centers_per_side, radii, nodes, mode: OscillationMode::MeanBased }
    }

    pub fn with_mode(mut self, mode: OscillationMode) -> Self {
        self.mode = mode;
        self
    }

    /// Same centres, radii at most `delta`.
    pub fn restricted(&self, delta: f64) -> Self {
        let mut s = self.clone();
        s.radii.retain(|r| *r <= delta);
        s
    }

    pub fn centers(&self) -> Vec<Point> {
        let n = self.centers_per_side.max(1);
        let w = &self.window;
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let (u, v) = if n == 1 { (0.5, 0.5) } else { (i as f64 / (n - 1) as f64, j as f64 / (n - 1) as f64) };
                out.push(Point::new(w.x0 + u * w.width(), w.y0 + v * w.height()));
            }
        }
        out
    }

    pub fn balls(&self) -> Vec<Disk> {
        let centers = self.centers();
        let mut out = Vec::with_capacity(centers.len() * self.radii.len());
        for &r in &self.radii {
            for &c in &centers {
                out.push(Disk { center: c, radius: r });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub value: f64,
    pub balls_sampled: usize,
    pub quadrature_nodes: usize,
    pub mode: OscillationMode,
    pub worst_ball: Option<Disk>,
}

/// Largest oscillation over the sampled balls; a lower bound for the seminorm.
pub fn seminorm_estimate(
    f: &FunctionHandle,
    params: &CampanatoParams,
    sampling: &BallSamplingSpec,
) -> Result<SeminormEstimate> {
    params.check_exponents()?;
    let balls = sampling.balls();
    let vals: Vec<Result<f64>> =
        balls.par_iter().map(|b| oscillation(f, b, params, sampling.mode, sampling.nodes)).collect();
    let mut best = 0.0;
    let mut worst = None;
    for (b, v) in balls.iter().zip(vals) {
        let v = v?;
        if v > best || worst.is_none() {
            best = v.max(best);
            worst = Some(*b);
        }
    }
    let per_ball = polar_midpoint(Point::ORIGIN, 1.0, sampling.nodes.max(16)).len();
    Ok(SeminormEstimate {
        value: best,
        balls_sampled: balls.len(),
        quadrature_nodes: per_ball,
        mode: sampling.mode,
        worst_ball: worst,
    })
}

/// `Omega_f(delta)`: the estimate over sampled balls of radius at most `delta`.
pub fn vanishing_modulus(
    f: &FunctionHandle,
    delta: f64,
    params: &CampanatoParams,
    sampling: &BallSamplingSpec,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParams(format!("delta = {delta}")));
    }
    Ok(seminorm_estimate(f, params, &sampling.restricted(delta))?.value)
}

/// Quadtree resolution of the `L^p` integral over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpQuadrature {
    pub depth: u32,
    pub per_cell: usize,
}

impl Default for LpQuadrature {
    fn default() -> Self {
        LpQuadrature { depth: 7, per_cell: 4 }
    }
}

fn lp_cell(f: &FunctionHandle, x: &Region, cell: &SquareBox, level: u32, q: &LpQuadrature, p: f64) -> Result<f64> {
    match x.classify_cell_interior(cell) {
        CellClass::Empty => Ok(0.0),
        CellClass::Full => {
            let nodes = square_midpoint(cell, q.per_cell);
            let vals = sample(f, &nodes)?;
            Ok(nodes.iter().zip(&vals).map(|(n, v)| n.weight * pow_abs(*v, p)).sum())
        }
        CellClass::Partial if level >= q.depth => {
            let nodes: Vec<Node> = square_midpoint(cell, q.per_cell).into_iter().filter(|n| x.contains(n.at)).collect();
            let vals = sample(f, &nodes)?;
            Ok(nodes.iter().zip(&vals).map(|(n, v)| n.weight * pow_abs(*v, p)).sum())
        }
        CellClass::Partial => {
            let h = cell.side / 2.0;
            let mut s = 0.0;
            for (i, j) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let child = SquareBox { corner: cell.corner.translate(i * h, j * h), side: h };
                s += lp_cell(f, x, &child, level + 1, q, p)?;
            }
            Ok(s)
        }
    }
}

/// `(int_X |f|^p dA)^(1/p)`.
pub fn lp_norm(f: &FunctionHandle, x: &Region, p: f64, quad: &LpQuadrature) -> Result<f64> {
    let Some(bb) = x.bbox() else { return Ok(0.0) };
    let root = bb.covering_square();
    Ok(lp_cell(f, x, &root, 0, quad, p)?.powf(1.0 / p))
}

/// Seminorm estimate plus the `L^p` norm over `X`.
pub fn norm_estimate(
    f: &FunctionHandle,
    x: &Region,
    params: &CampanatoParams,
    sampling: &BallSamplingSpec,
    quad: &LpQuadrature,
) -> Result<f64> {
    let semi = seminorm_estimate(f, params, sampling)?.value;
    Ok(semi + lp_norm(f, x, params.p, quad)?)
}

/// Target of [`transfer_params`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transfer {
    ToGivenP(f64),
    ReduceBelow2,
}

/// Move along the line `(lambda - 2) / p = const`, on which the spaces coincide.
pub fn transfer_params(params: &CampanatoParams, direction: Transfer) -> Result<CampanatoParams> {
    params.validate()?;
    let (p, l) = (params.p, params.lambda);
    let out = match direction {
        Transfer::ToGivenP(p1) => {
            if !(p1 >= 1.0 && p1.is_finite()) {
                return Err(Error::NoAdmissibleReduction);
            }
            CampanatoParams { p: p1, lambda: 2.0 + p1 * (l - 2.0) / p }
        }
        Transfer::ReduceBelow2 => {
            let a = (l - 2.0) / p;
            if l == 2.0 {
                CampanatoParams { p: 1.5, lambda: 2.0 }
            } else if l > 2.0 {
                let l1 = ((2.0 + a) + (2.0 + 2.0 * a)) / 2.0;
                CampanatoParams { p: p * (l1 - 2.0) / (l - 2.0), lambda: l1 }
            } else {
                let l1 = ((2.0 + 2.0 * a) + (2.0 + a)) / 2.0;
                CampanatoParams { p: p * (2.0 - l1) / (2.0 - l), lambda: l1 }
            }
        }
    };
    if out.validate().is_err() {
        return Err(Error::NoAdmissibleReduction);
    }
    if matches!(direction, Transfer::ReduceBelow2) && !(out.p < 2.0) {
        return Err(Error::NoAdmissibleReduction);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", content = "exponent")]
pub enum SpaceClass {
    #[serde(rename = "BMO")]
    Bmo,
    Lipschitz(f64),
    MorreyNegLip(f64),
    ConstantsOnly,
}

/// Which classical space `L^{p,lambda}` coincides with. Only `p >= 1` and
/// `lambda >= 0` are assumed, so the trivial range `lambda > p + 2` shows up.
pub fn classify_space(params: &CampanatoParams) -> SpaceClass {
    let (p, l) = (params.p, params.lambda);
    let e = (l - 2.0) / p;
    if l > p + 2.0 {
        SpaceClass::ConstantsOnly
    } else if l == 2.0 {
        SpaceClass::Bmo
    } else if l > 2.0 {
        SpaceClass::Lipschitz(e)
    } else {
        SpaceClass::MorreyNegLip(e)
    }
}
