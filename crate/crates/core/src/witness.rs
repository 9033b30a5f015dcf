//! Cauchy transforms of discrete measures and the necessity construction
//! built from them.
//!
//! A witness `f_n(z) = sum (zeta/|zeta|)^(t+1) w / (zeta - z)` lives on one
//! dyadic shell around `x`. Its `t`-th derivative at `x` is the positive
//! number `t! sum w / |zeta|^(t+1)`, while its Campanato norm away from the
//! shell is small. Block sums `g_m = f_m + ... + f_M` keep the derivative
//! bounded below and the norm shrinking, which is how a divergent series
//! rules out a bounded point derivation.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campanato::{
    lp_norm, seminorm_estimate, BallSamplingSpec, CampanatoParams, FunctionHandle, LpQuadrature, Smoothness,
};
use crate::error::{Error, Result};
use crate::frostman::{verify_frostman, DiscreteMeasure, FrostmanTree};
use crate::geometry::{annulus_shell, CellClass, DyadicGrid, Point, Rect, Region, SquareBox};
use crate::hausdorff::{content_upper, MeasureFunction};
use crate::quadrature::polar_midpoint;

/// Cauchy transform of a discrete measure, optionally twisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessFunction {
    pub measure: DiscreteMeasure,
    pub t: u32,
    pub twist: bool,
    pub annulus_index: u32,
    /// Overall real factor; `1` except for normalised transforms.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl WitnessFunction {
    pub fn new(measure: DiscreteMeasure, t: u32, twist: bool, annulus_index: u32) -> Result<Self> {
        measure.validate()?;
        if twist && measure.atoms.iter().any(|a| a.position.norm() == 0.0) {
            return Err(Error::AtomAtOrigin);
        }
        Ok(WitnessFunction { measure, t, twist, annulus_index, scale: 1.0 })
    }

    /// `g(z) = -(1/nu(S)) int dnu / (zeta - z)`, so that `g(z) = 1/z + ...`
    /// at infinity.
    pub fn normalized_transform(measure: DiscreteMeasure) -> Result<Self> {
        let mass = measure.total_mass();
        if !(mass > 0.0) {
            return Err(Error::EmptySupport);
        }
        let mut w = WitnessFunction::new(measure, 0, false, 0)?;
        w.scale = -1.0 / mass;
        Ok(w)
    }

    /// Complex weight of each atom: `scale * twist(zeta) * w`.
    pub fn coefficients(&self) -> Vec<(Complex64, Complex64)> {
        self.measure
            .atoms
            .iter()
            .map(|a| {
                let z = a.position.z();
                let c = if self.twist { (z / z.norm()).powu(self.t + 1) } else { Complex64::new(1.0, 0.0) };
                (z, c * (a.weight * self.scale))
            })
            .collect()
    }

    /// Radius of the disk each atom stands for in [`witness_eval_smoothed`].
    pub fn atom_radius(&self) -> f64 {
        0.5 * self.measure.cell_side
    }
}

/// `sum twist(zeta) w / (zeta - z)`.
pub fn witness_eval(w: &WitnessFunction, z: Point) -> Result<Complex64> {
    let z = z.z();
    let mut s = Complex64::new(0.0, 0.0);
    for (zeta, c) in w.coefficients() {
        let d = zeta - z;
        if d.norm_sqr() == 0.0 {
            return Err(Error::EvaluationAtPole);
        }
        s += c / d;
    }
    Ok(s)
}

#[inline]
fn smoothed_kernel(zeta: Complex64, c: Complex64, z: Complex64, a: f64) -> Complex64 {
    let d = z - zeta;
    let r2 = d.norm_sqr();
    if r2 >= a * a {
        -c / d
    } else {
        -c * d.conj() / (a * a)
    }
}

/// Each atom replaced by a uniform disk of radius [`WitnessFunction::atom_radius`].
///
/// Agrees with [`witness_eval`] at distance at least that radius from every
/// atom and is bounded everywhere, so it can be fed to quadrature.
pub fn witness_eval_smoothed(w: &WitnessFunction, z: Point) -> Complex64 {
    let a = w.atom_radius();
    w.coefficients().into_iter().map(|(zeta, c)| smoothed_kernel(zeta, c, z.z(), a)).sum()
}

fn factorial(t: u32) -> f64 {
    (1..=t).map(f64::from).product()
}

/// `f^(t)(0) = t! sum w / |zeta|^(t+1)` for a twisted witness.
pub fn witness_derivative(w: &WitnessFunction, t: u32) -> Result<f64> {
    if !w.twist || w.t != t {
        return Err(Error::InvalidParams(format!("derivative of order {t} needs a witness twisted for t = {t}")));
    }
    let mut s = 0.0;
    for a in &w.measure.atoms {
        let r = a.position.norm();
        if r == 0.0 {
            return Err(Error::AtomAtOrigin);
        }
        s += a.weight / r.powi(t as i32 + 1);
    }
    Ok(factorial(t) * s * w.scale)
}

/// Nonincreasing normalisers `eps_n` in `(0, 1]` with `eps_n term_n <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSequence {
    pub values: Vec<f64>,
}

impl EpsilonSequence {
    /// `eps_n term_n`.
    pub fn weighted(&self, terms: &[f64]) -> Vec<f64> {
        self.values.iter().zip(terms).map(|(e, t)| e * t).collect()
    }
}

/// `eps_n = min_{k <= n} min(1 / term_k, 1 / S_k, 1)` with `S_k` the partial sums.
///
/// If the terms diverge so does `sum eps_n term_n`, since the partial sums of
/// `term_n / S_n` are unbounded.
pub fn epsilon_sequence(terms: &[f64]) -> Result<EpsilonSequence> {
    if terms.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidParams("terms must be finite and nonnegative".into()));
    }
    if terms.iter().all(|t| *t == 0.0) {
        return Err(Error::DegenerateSeries);
    }
    let mut s = 0.0;
    let mut run = 1.0f64;
    let values = terms
        .iter()
        .map(|&t| {
            s += t;
            let inv_t = if t > 0.0 { 1.0 / t } else { f64::INFINITY };
            let inv_s = if s > 0.0 { 1.0 / s } else { f64::INFINITY };
            run = run.min(inv_t).min(inv_s);
            run
        })
        .collect();
    Ok(EpsilonSequence { values })
}

/// Smallest `M >= m` with `sum_{n=m}^M weighted[n] >= 1`, indices from 1.
pub fn block_select(weighted_terms: &[f64], m: usize) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidParams("block start is 1-based".into()));
    }
    if weighted_terms.iter().any(|w| !(*w >= 0.0 && *w <= 1.0 + 1e-12)) {
        return Err(Error::InvalidParams("weighted terms must lie in [0, 1]".into()));
    }
    let mut s = 0.0;
    for (i, w) in weighted_terms.iter().enumerate().skip(m - 1) {
        s += w;
        if s >= 1.0 {
            return Ok(i + 1);
        }
    }
    Err(Error::TailExhausted)
}

const EXPANSION_TERMS: usize = 34;

struct Shell {
    pos: Vec<Complex64>,
    coef: Vec<Complex64>,
    smooth: f64,
    rmin: f64,
    rmax: f64,
}

impl Shell {
    fn from_witness(w: &WitnessFunction) -> Option<Shell> {
        if w.measure.atoms.is_empty() {
            return None;
        }
        let (pos, coef): (Vec<_>, Vec<_>) = w.coefficients().into_iter().unzip();
        let a = w.atom_radius();
        let rmin = pos.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min) - a;
        let rmax = pos.iter().map(|z| z.norm()).fold(0.0, f64::max) + a;
        Some(Shell { pos, coef, smooth: a, rmin: rmin.max(0.0), rmax })
    }

    fn direct(&self, z: Complex64) -> Complex64 {
        self.pos.iter().zip(&self.coef).map(|(p, c)| smoothed_kernel(*p, *c, z, self.smooth)).sum()
    }
}

/// Sum of shell witnesses around the origin, evaluated with multipole
/// expansions about 0 for shells well inside or well outside `|z|`.
///
/// Shells are sorted outermost first. `outer[j]` expands shells `j..` about
/// infinity in powers of `R_j / z`, `inner[j]` expands shells `..=j` about 0 in
/// powers of `z / rho_j`; both are exact up to `3^-34` where used.
pub struct ShellField {
    shells: Vec<Shell>,
    suffix_r: Vec<f64>,
    prefix_r: Vec<f64>,
    outer: Vec<[Complex64; EXPANSION_TERMS]>,
    inner: Vec<[Complex64; EXPANSION_TERMS]>,
}

impl ShellField {
    pub fn new(witnesses: &[WitnessFunction]) -> ShellField {
        let mut shells: Vec<Shell> = witnesses.iter().filter_map(Shell::from_witness).collect();
        shells.sort_by(|a, b| b.rmax.total_cmp(&a.rmax));
        let k = shells.len();
        let zero = [Complex64::new(0.0, 0.0); EXPANSION_TERMS];

        let mut suffix_r = vec![0.0; k];
        let mut acc = 0.0f64;
        for j in (0..k).rev() {
            acc = acc.max(shells[j].rmax);
            suffix_r[j] = acc;
        }
        let mut outer = vec![zero; k];
        for j in (0..k).rev() {
            let r = suffix_r[j];
            let mut b = zero;
            for (p, c) in shells[j].pos.iter().zip(&shells[j].coef) {
                let u = p / r;
                let mut pw = *c;
                for bk in b.iter_mut() {
                    *bk += pw;
                    pw *= u;
                }
            }
            if j + 1 < k {
                let ratio = suffix_r[j + 1] / r;
                let mut f = 1.0;
                for (bk, nk) in b.iter_mut().zip(&outer[j + 1]) {
                    *bk += nk * f;
                    f *= ratio;
                }
            }
            outer[j] = b;
        }

        let mut prefix_r = vec![0.0; k];
        let mut acc = f64::INFINITY;
        for j in 0..k {
            acc = acc.min(shells[j].rmin);
            prefix_r[j] = acc;
        }
        let mut inner = vec![zero; k];
        for j in 0..k {
            let rho = prefix_r[j];
            let mut b = zero;
            if rho > 0.0 {
                for (p, c) in shells[j].pos.iter().zip(&shells[j].coef) {
                    let u = rho / p;
                    let mut pw = c * u;
                    for bk in b.iter_mut() {
                        *bk += pw;
                        pw *= u;
                    }
                }
                if j > 0 && prefix_r[j - 1] > 0.0 {
                    let ratio = rho / prefix_r[j - 1];
                    let mut f = ratio;
                    for (bk, pk) in b.iter_mut().zip(&inner[j - 1]) {
                        *bk += pk * f;
                        f *= ratio;
                    }
                }
            }
            inner[j] = b;
        }
        ShellField { shells, suffix_r, prefix_r, outer, inner }
    }

    pub fn is_empty(&self) -> bool {
        self.shells.is_empty()
    }

    pub fn eval(&self, z: Point) -> Complex64 {
        let z = z.z();
        let rz = z.norm();
        let j_out = self.suffix_r.partition_point(|r| 3.0 * r > rz);
        let j_in = self.prefix_r.partition_point(|r| *r >= 3.0 * rz && *r > 0.0);
        let mut s = Complex64::new(0.0, 0.0);
        if j_out < self.shells.len() {
            let u = self.suffix_r[j_out] / z;
            let mut acc = Complex64::new(0.0, 0.0);
            for bk in self.outer[j_out].iter().rev() {
                acc = acc * u + bk;
            }
            s -= acc / z;
        }
        if j_in > 0 {
            let rho = self.prefix_r[j_in - 1];
            let u = z / rho;
            let mut acc = Complex64::new(0.0, 0.0);
            for bk in self.inner[j_in - 1].iter().rev() {
                acc = acc * u + bk;
            }
            s += acc / rho;
        }
        for sh in &self.shells[j_in.min(j_out)..j_out] {
            s += sh.direct(z);
        }
        s
    }

    /// Plain smoothed sum over every atom, for checking the expansions.
    pub fn eval_direct(&self, z: Point) -> Complex64 {
        self.shells.iter().map(|s| s.direct(z.z())).sum()
    }
}

/// Bounding box of a region found by walking down the quadtree from `start`,
/// keeping at most `cap` non-empty cells per level.
pub fn localize(region: &Region, start: SquareBox, cap: usize) -> Option<Rect> {
    let mut frontier = match region.classify_cell_interior(&start) {
        CellClass::Empty => return None,
        _ => vec![start],
    };
    for _ in 0..1100 {
        let mut next = Vec::new();
        for c in &frontier {
            let h = c.side / 2.0;
            if !(h > 0.0) || h == c.side {
                return Some(union_rect(&frontier));
            }
            for (i, j) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
                let child = SquareBox { corner: c.corner.translate(i * h, j * h), side: h };
                if region.classify_cell_interior(&child) != CellClass::Empty {
                    next.push(child);
                }
            }
        }
        if next.is_empty() {
            return None;
        }
        if next.len() > cap {
            return Some(union_rect(&frontier));
        }
        frontier = next;
    }
    Some(union_rect(&frontier))
}

fn union_rect(cells: &[SquareBox]) -> Rect {
    cells.iter().map(SquareBox::rect).reduce(|a, b| a.union(&b)).expect("non-empty frontier")
}

/// `A_n(c) \ X` in a frame centred on its non-empty part, clipped to a
/// local root. Returns the set, the local grid and the frame origin.
///
/// Deep shells of fast roadrunners hold disks far smaller than the float
/// spacing at their centres, so the set is shifted to the origin before the
/// fine quadtree work.
pub(crate) fn shell_set(x: &Region, c: Point, n: u32, cap: usize) -> Option<(Region, DyadicGrid, Point)> {
    let shell = Region::Annulus(annulus_shell(c, n));
    let set = Region::difference(shell, x.clone());
    let outer = (-(n as f64)).exp2();
    let start = SquareBox { corner: c.translate(-outer, -outer), side: 2.0 * outer };
    let coarse = localize(&set, start, cap)?;
    let origin = coarse.center();
    let local = set.translate(-origin.re, -origin.im);
    let half = 0.5 * coarse.width().max(coarse.height()) + 4.0 * f64::EPSILON * (origin.norm() + outer);
    let start = SquareBox { corner: Point::new(-half, -half), side: 2.0 * half };
    let bb = localize(&local, start, cap)?;
    let root = bb.covering_square();
    let clipped = Region::Intersection(vec![local, Region::Square(root)]);
    Some((clipped, DyadicGrid::new(root, 0), origin))
}

/// Settings of [`necessity_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct NecessityConfig {
    /// Exact series terms `2^(n(t+1)) M_*(A_n \ X)` for `n = 1, 2, ...`; computed
    /// from the covering program when absent.
    pub terms: Option<Vec<f64>>,
    /// Number of shells used when terms are computed.
    pub n_max: u32,
    pub m_range: (usize, usize),
    /// Depth of the local grid each `nu_n` is built on.
    pub local_depth: u32,
    pub localize_cap: usize,
    pub frostman_samples: usize,
    pub norm_sampling: BallSamplingSpec,
    pub lp: LpQuadrature,
    pub lemma_range: (u32, u32),
    pub lemma_balls: usize,
    pub lemma_nodes: usize,
    pub seed: u64,
}

impl Default for NecessityConfig {
    fn default() -> Self {
        NecessityConfig {
            terms: None,
            n_max: 200,
            m_range: (1, 8),
            local_depth: 5,
            localize_cap: 64,
            frostman_samples: 2000,
            norm_sampling: BallSamplingSpec::dyadic(Rect { x0: -1.0, y0: -1.0, x1: 1.0, y1: 1.0 }, 9, 1, 5, 256),
            lp: LpQuadrature::default(),
            lemma_range: (2, 10),
            lemma_balls: 200,
            lemma_nodes: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub m: usize,
    pub block_end: usize,
    pub block_sum: f64,
    pub derivative_at_x: f64,
    pub seminorm: f64,
    pub lp_norm: f64,
    pub norm_estimate: f64,
    /// Largest prop 2, 3, 4 ratios over the shells of the block that were measured.
    pub lemma42_constants: Vec<f64>,
}

/// Measured constants of the shell estimates for one `nu_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRecord {
    pub n: u32,
    pub epsilon: f64,
    pub mass: f64,
    /// `mass / (eps_n M_*(A_n \ X))`.
    pub mass_ratio: f64,
    /// `f_n^(t)(0) / (eps_n 2^(n(t+1)) M_*)`.
    pub derivative_ratio: f64,
    /// Ball bound for `|f_n|` on shells `|k - n| >= 2`, over `eps_n 2^(n(1+alpha)) M_*`.
    pub prop2: f64,
    /// Same for the ball mean of `f_n`.
    pub prop3: f64,
    /// `||f_n||_{L^p(X)} / (eps_n M_*)`.
    pub prop4: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum WitnessOutcome {
    Witness,
    NoWitness(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub t: u32,
    pub params: CampanatoParams,
    pub outcome: WitnessOutcome,
    pub terms: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// Smallest `g_m^(t)(x)` over the blocks: the fitted lower bound `c`.
    pub derivative_floor: Option<f64>,
    pub blocks: Vec<BlockRecord>,
    pub lemma: Vec<LemmaRecord>,
}

struct ShellMeasure {
    n: u32,
    eps: f64,
    witness: WitnessFunction,
    content: f64,
}

fn computed_terms(x: &Region, t: u32, params: &CampanatoParams, cfg: &NecessityConfig) -> Result<Vec<f64>> {
    let h = MeasureFunction::power(params.content_dim())?;
    let terms: Vec<Result<f64>> = (1..=cfg.n_max)
        .into_par_iter()
        .map(|n| {
            let Some((set, grid0, _)) = shell_set(x, Point::ORIGIN, n, cfg.localize_cap) else { return Ok(0.0) };
            let grid = DyadicGrid::new(grid0.root, cfg.local_depth.max(1));
            let c = content_upper(&set, &h, &grid)?;
            Ok((n as f64 * (t + 1) as f64).exp2() * c)
        })
        .collect();
    terms.into_iter().collect()
}

fn build_shell(
    x: &Region,
    n: u32,
    eps: f64,
    term: f64,
    t: u32,
    params: &CampanatoParams,
    cfg: &NecessityConfig,
) -> Result<Option<ShellMeasure>> {
    if term == 0.0 {
        return Ok(None);
    }
    let Some((set, grid0, origin)) = shell_set(x, Point::ORIGIN, n, cfg.localize_cap) else { return Ok(None) };
    let grid = DyadicGrid::new(grid0.root, cfg.local_depth.max(1));
    let h = MeasureFunction::power(params.content_dim())?;
    let tree = match FrostmanTree::build(&set, &h, &grid) {
        Ok(tree) => tree,
        Err(Error::EmptySupport) => return Ok(None),
        Err(e) => return Err(e),
    };
    let raw = tree.to_measure(None);
    let c = verify_frostman(&raw, &h, cfg.frostman_samples, cfg.seed ^ u64::from(n)).constant_c;
    let mut nu = raw.scaled(eps / c.max(f64::MIN_POSITIVE));
    for a in &mut nu.atoms {
        a.position = a.position.translate(origin.re, origin.im);
    }
    let content = term / (n as f64 * (t + 1) as f64).exp2();
    Ok(Some(ShellMeasure { n, eps, witness: WitnessFunction::new(nu, t, true, n)?, content }))
}

fn plane_handle(field: Arc<ShellField>) -> FunctionHandle {
    let domain = Region::Square(SquareBox { corner: Point::new(-4.0, -4.0), side: 8.0 });
    FunctionHandle::new(move |z| field.eval(z), domain, Smoothness::Rational)
}

/// Random balls inside shells `A_k` with `|k - n| >= 2`.
fn lemma_balls(n: u32, count: usize, seed: u64) -> Vec<crate::geometry::Disk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(n) << 32));
    let ks: Vec<u32> = (0..=n + 6).filter(|k| k.abs_diff(n) >= 2).collect();
    (0..count)
        .map(|_| {
            let k = ks[rng.gen_range(0..ks.len())];
            let (lo, hi) = ((-(k as f64) - 1.0).exp2(), (-(k as f64)).exp2());
            let rho = lo + (hi - lo) * rng.gen_range(0.05..0.95);
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            let room = (rho - lo).min(hi - rho);
            let r = room * rng.gen_range(0.1..1.0);
            crate::geometry::Disk { center: Point::new(rho * th.cos(), rho * th.sin()), radius: r }
        })
        .collect()
}

fn lemma_record(
    shell: &ShellMeasure,
    x: &Region,
    t: u32,
    params: &CampanatoParams,
    cfg: &NecessityConfig,
) -> Result<LemmaRecord> {
    let n = shell.n;
    let mass = shell.witness.measure.total_mass();
    let field = Arc::new(ShellField::new(std::slice::from_ref(&shell.witness)));
    let eps_n = shell.eps;
    let base = eps_n * shell.content;
    let rhs = base * (f64::from(n) * params.content_dim()).exp2();
    let p = params.p;
    let mut prop2 = 0.0f64;
    let mut prop3 = 0.0f64;
    for b in lemma_balls(n, cfg.lemma_balls, cfg.seed) {
        let nodes = polar_midpoint(b.center, b.radius, cfg.lemma_nodes);
        let vals: Vec<Complex64> = nodes.iter().map(|q| field.eval(q.at)).collect();
        let area: f64 = nodes.iter().map(|q| q.weight).sum();
        let int_p: f64 = nodes.iter().zip(&vals).map(|(q, v)| q.weight * v.norm().powf(p)).sum();
        let mean: Complex64 = nodes.iter().zip(&vals).map(|(q, v)| v * q.weight).sum::<Complex64>() / area;
        let scale = b.radius.powf(-params.lambda);
        prop2 = prop2.max((scale * int_p).powf(1.0 / p) / rhs);
        prop3 = prop3.max((scale * area * mean.norm().powf(p)).powf(1.0 / p) / rhs);
    }
    let lp = lp_norm(&plane_handle(field), x, p, &cfg.lp)?;
    let deriv = witness_derivative(&shell.witness, t)?;
    Ok(LemmaRecord {
        n,
        epsilon: eps_n,
        mass,
        mass_ratio: mass / base,
        derivative_ratio: deriv / (base * (f64::from(n) * f64::from(t + 1)).exp2()),
        prop2,
        prop3,
        prop4: lp / base,
    })
}

/// The necessity construction around `x`.
///
/// Builds `nu_n` on `A_n(x) \ X` with growth `eps_n r^(1+alpha)`, forms the
/// twisted witnesses `f_n`, groups them into blocks `g_m` and measures the
/// derivative at `x`, the norm of each block, and the shell estimates for
/// `n` in `cfg.lemma_range`.
pub fn necessity_suite(
    x_set: &Region,
    x: Point,
    t: u32,
    params: &CampanatoParams,
    cfg: &NecessityConfig,
) -> Result<WitnessReport> {
    params.validate()?;
    if params.p >= 2.0 {
        return Err(Error::InvalidParams("necessity suite needs p < 2; reduce the exponent first".into()));
    }
    let region = x_set.translate(-x.re, -x.im);
    let terms = match &cfg.terms {
        Some(t) => t.clone(),
        None => computed_terms(&region, t, params, cfg)?,
    };
    let mut report = WitnessReport {
        t,
        params: *params,
        outcome: WitnessOutcome::Witness,
        terms: terms.clone(),
        epsilon: Vec::new(),
        derivative_floor: None,
        blocks: Vec::new(),
        lemma: Vec::new(),
    };
    let eps = match epsilon_sequence(&terms) {
        Ok(e) => e,
        Err(Error::DegenerateSeries) => {
            report.outcome = WitnessOutcome::NoWitness("series converges; no witness".into());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.epsilon = eps.values.clone();
    let weighted = eps.weighted(&terms);

    let mut windows = Vec::new();
    for m in cfg.m_range.0.max(1)..=cfg.m_range.1 {
        match block_select(&weighted, m) {
            Ok(end) => windows.push((m, end)),
            Err(Error::TailExhausted) => break,
            Err(e) => return Err(e),
        }
    }
    if windows.is_empty() {
        report.outcome = WitnessOutcome::NoWitness("series converges; no witness".into());
        return Ok(report);
    }
    let last = windows.iter().map(|w| w.1).max().unwrap_or(0) as u32;
    let (l0, l1) = cfg.lemma_range;
    let top = last.max(l1).min(terms.len() as u32);
    let shells: Vec<Result<Option<ShellMeasure>>> = (1..=top)
        .into_par_iter()
        .map(|n| {
            let i = (n - 1) as usize;
            build_shell(&region, n, eps.values[i], terms[i], t, params, cfg)
        })
        .collect();
    let mut by_n: Vec<Option<ShellMeasure>> = Vec::with_capacity(top as usize);
    for s in shells {
        by_n.push(s?);
    }

    let lemma: Vec<Result<LemmaRecord>> = by_n
        .par_iter()
        .flatten()
        .filter(|s| s.n >= l0 && s.n <= l1)
        .map(|s| lemma_record(s, &region, t, params, cfg))
        .collect();
    report.lemma = lemma.into_iter().collect::<Result<_>>()?;

    for (m, end) in windows {
        let members: Vec<WitnessFunction> = by_n[m - 1..end].iter().flatten().map(|s| s.witness.clone()).collect();
        let mut deriv = 0.0;
        for w in &members {
            deriv += witness_derivative(w, t)?;
        }
        let field = Arc::new(ShellField::new(&members));
        let handle = plane_handle(field);
        let semi = seminorm_estimate(&handle, params, &cfg.norm_sampling)?.value;
        let lp = lp_norm(&handle, &region, params.p, &cfg.lp)?;
        let in_block: Vec<&LemmaRecord> =
            report.lemma.iter().filter(|r| (r.n as usize) >= m && (r.n as usize) <= end).collect();
        let lemma42_constants = if in_block.is_empty() {
            Vec::new()
        } else {
            vec![
                in_block.iter().map(|r| r.prop2).fold(0.0, f64::max),
                in_block.iter().map(|r| r.prop3).fold(0.0, f64::max),
                in_block.iter().map(|r| r.prop4).fold(0.0, f64::max),
            ]
        };
        report.blocks.push(BlockRecord {
            m,
            block_end: end,
            block_sum: weighted[m - 1..end].iter().sum(),
            derivative_at_x: deriv,
            seminorm: semi,
            lp_norm: lp,
            norm_estimate: semi + lp,
            lemma42_constants,
        });
    }
    report.derivative_floor = report.blocks.iter().map(|b| b.derivative_at_x).reduce(f64::min);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frostman::Atom;
    use proptest::prelude::{prop_assert, prop_assume, proptest, ProptestConfig};

    fn measure(atoms: &[(f64, f64, f64)], cell_side: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: atoms.iter().map(|&(x, y, w)| Atom { position: Point::new(x, y), weight: w }).collect(),
            cell_side,
            root_side: 1.0,
            support_hint: None,
        }
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, rlo: f64, rhi: f64) -> DiscreteMeasure {
        let atoms: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let r = rng.gen_range(rlo..rhi);
                let th = rng.gen_range(0.0..std::f64::consts::TAU);
                (r * th.cos(), r * th.sin(), rng.gen_range(0.01..1.0))
            })
            .collect();
        measure(&atoms, 1e-3 * rlo)
    }

    /// Lyness-Moler: `f^(t)(0)` from the trapezoid rule on `|z| = rho`.
    fn contour_derivative(w: &WitnessFunction, t: u32, rho: f64, n: usize) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let u = Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / n as f64);
            let z = u * rho;
            s += witness_eval(w, Point::from(z)).unwrap() / z.powu(t);
        }
        s * factorial(t) / n as f64
    }

    #[test]
    fn eval_examples() {
        let w = WitnessFunction::new(measure(&[(0.25, 0.0, 1.0)], 1e-3), 0, false, 0).unwrap();
        assert_eq!(witness_eval(&w, Point::ORIGIN).unwrap(), Complex64::new(4.0, 0.0));
        let w = WitnessFunction::new(measure(&[(0.25, 0.0, 1.0)], 1e-3), 0, true, 0).unwrap();
        assert_eq!(witness_eval(&w, Point::ORIGIN).unwrap(), Complex64::new(4.0, 0.0));
        assert_eq!(witness_eval(&w, Point::new(0.25, 0.0)), Err(Error::EvaluationAtPole));
        assert_eq!(
            WitnessFunction::new(measure(&[(0.0, 0.0, 1.0)], 1e-3), 1, true, 0).unwrap_err(),
            Error::AtomAtOrigin
        );
    }

    #[test]
    fn far_field_mass() {
        let nu = measure(&[(0.1, 0.2, 0.5), (-0.3, 0.1, 0.25), (0.0, -0.2, 0.25)], 1e-3);
        let w = WitnessFunction::new(nu.clone(), 0, false, 0).unwrap();
        let z = Point::new(3e5, -4e5);
        let v = witness_eval(&w, z).unwrap() * z.z();
        assert!((v + nu.total_mass()).norm() < 1e-5);
        let g = WitnessFunction::normalized_transform(nu).unwrap();
        let v = witness_eval(&g, z).unwrap() * z.z();
        assert!((v - 1.0).norm() < 1e-5);
    }

    #[test]
    fn derivative_examples() {
        let nu = measure(&[(0.0, 0.25, 1.0)], 1e-3);
        let w1 = WitnessFunction::new(nu.clone(), 1, true, 2).unwrap();
        assert_eq!(witness_derivative(&w1, 1).unwrap(), 16.0);
        let w0 = WitnessFunction::new(nu.clone(), 0, true, 2).unwrap();
        assert_eq!(witness_derivative(&w0, 0).unwrap(), 4.0);
        for (w, t) in [(&w1, 1), (&w0, 0)] {
            let oracle = contour_derivative(w, t, 0.1, 64);
            let d = witness_derivative(w, t).unwrap();
            assert!((oracle.re - d).abs() <= 1e-8 * d && oracle.im.abs() <= 1e-8 * d);
        }
        let w3 = WitnessFunction::new(nu.scaled(3.0), 1, true, 2).unwrap();
        assert_eq!(witness_derivative(&w3, 1).unwrap(), 48.0);
        assert!(witness_derivative(&w1, 0).is_err());
    }

    #[test]
    fn derivative_matches_contour_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let nu = random_measure(&mut rng, 50, 0.25, 0.5);
            for t in 0..4 {
                let w = WitnessFunction::new(nu.clone(), t, true, 1).unwrap();
                let d = witness_derivative(&w, t).unwrap();
                let o = contour_derivative(&w, t, 0.125, 128);
                assert!((o - d).norm() <= 1e-8 * d, "t={t}: {o} vs {d}");
            }
        }
    }

    #[test]
    fn smoothed_matches_point_kernel_away_from_atoms() {
        let nu = measure(&[(0.3, 0.0, 1.0), (0.0, 0.4, 2.0)], 0.02);
        let w = WitnessFunction::new(nu, 1, true, 1).unwrap();
        let z = Point::new(0.1, 0.1);
        assert!((witness_eval_smoothed(&w, z) - witness_eval(&w, z).unwrap()).norm() < 1e-14);
        // bounded at the atom itself
        assert!(witness_eval_smoothed(&w, Point::new(0.3, 0.0)).is_finite());
        // continuous across the atom disk
        let a = w.atom_radius();
        let inside = witness_eval_smoothed(&w, Point::new(0.3 + a * (1.0 - 1e-12), 0.0));
        let outside = witness_eval_smoothed(&w, Point::new(0.3 + a * (1.0 + 1e-12), 0.0));
        assert!((inside - outside).norm() < 1e-8);
    }

    #[test]
    fn epsilon_examples() {
        let e = epsilon_sequence(&[1.0; 6]).unwrap();
        for (i, v) in e.values.iter().enumerate() {
            assert!((v - 1.0 / (i + 1) as f64).abs() < 1e-15);
        }
        let terms: Vec<f64> = (1..30).map(|n| 2f64.powi(n)).collect();
        let e = epsilon_sequence(&terms).unwrap();
        for (v, t) in e.values.iter().zip(&terms) {
            assert!(v * t <= 1.0);
            assert!(v * t >= 0.25);
        }
        assert_eq!(epsilon_sequence(&[0.0, 0.0]), Err(Error::DegenerateSeries));
        assert!(epsilon_sequence(&[1.0, f64::NAN]).is_err());
        let conv: Vec<f64> = (1..50).map(|n| 1.0 / (n * n) as f64).collect();
        let e = epsilon_sequence(&conv).unwrap();
        let s: f64 = e.weighted(&conv).iter().sum();
        assert!(s <= conv.iter().sum::<f64>());
    }

    #[test]
    fn block_examples() {
        assert_eq!(block_select(&[0.5; 10], 1).unwrap(), 2);
        assert_eq!(block_select(&[0.9; 10], 3).unwrap(), 4);
        let mut v = vec![0.1; 5];
        v.extend([0.0; 5]);
        assert_eq!(block_select(&v, 1), Err(Error::TailExhausted));
        assert!(block_select(&[0.5; 4], 0).is_err());
        assert!(block_select(&[1.5; 4], 1).is_err());
    }

    #[test]
    fn shell_field_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ws: Vec<WitnessFunction> = (1..=12)
            .map(|n| {
                let outer = (-(n as f64)).exp2();
                let nu = random_measure(&mut rng, 40, 0.55 * outer, 0.95 * outer);
                WitnessFunction::new(nu, 1, true, n).unwrap()
            })
            .collect();
        let field = ShellField::new(&ws);
        for _ in 0..400 {
            let r = (-rng.gen_range(0.0..14.0f64)).exp2();
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            let z = Point::new(r * th.cos(), r * th.sin());
            let a = field.eval(z);
            let b = field.eval_direct(z);
            assert!((a - b).norm() <= 1e-11 * b.norm().max(1e-300), "{z:?}: {a} vs {b}");
        }
        let a = field.eval(Point::ORIGIN);
        let b = field.eval_direct(Point::ORIGIN);
        assert!((a - b).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn localize_tiny_disk() {
        let d = Region::disk(0.3, 0.0, 1e-9).unwrap();
        let start = SquareBox { corner: Point::new(-1.0, -1.0), side: 2.0 };
        let bb = localize(&d, start, 64).unwrap();
        assert!(bb.x0 <= 0.3 - 1e-9 && bb.x1 >= 0.3 + 1e-9);
        assert!(bb.y0 <= -1e-9 && bb.y1 >= 1e-9);
        assert!(bb.width() < 1e-8 && bb.height() < 1e-8);
        assert!(localize(&Region::disk(5.0, 5.0, 0.1).unwrap(), start, 64).is_none());
    }

    #[test]
    fn filled_annuli_have_no_witness() {
        let x = Region::disk(0.0, 0.0, 1.0).unwrap();
        let cfg = NecessityConfig { n_max: 12, ..NecessityConfig::default() };
        let p = CampanatoParams::new(1.5, 2.0).unwrap();
        let rep = necessity_suite(&x, Point::ORIGIN, 1, &p, &cfg).unwrap();
        assert_eq!(rep.outcome, WitnessOutcome::NoWitness("series converges; no witness".into()));
        assert!(rep.blocks.is_empty());
        let p2 = CampanatoParams::new(2.5, 2.0).unwrap();
        assert!(necessity_suite(&x, Point::ORIGIN, 1, &p2, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cauchy_riemann_off_atoms(seed in 0u64..1000, x in -0.2..0.2f64, y in -0.2..0.2f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = WitnessFunction::new(random_measure(&mut rng, 20, 0.3, 0.6), 2, true, 1).unwrap();
            let h = 1e-5;
            let f = |dx: f64, dy: f64| witness_eval(&w, Point::new(x + dx, y + dy)).unwrap();
            let fx = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
            let fy = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
            let i = Complex64::new(0.0, 1.0);
            prop_assert!((fy - i * fx).norm() <= 1e-6 * (1.0 + fx.norm()));
        }

        #[test]
        fn normalized_far_field(seed in 0u64..1000, r in 4.0..1e4f64, th in 0.0..std::f64::consts::TAU) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nu = random_measure(&mut rng, 30, 0.05, 0.5);
            let diam = 1.0;
            let g = WitnessFunction::normalized_transform(nu).unwrap();
            let z = Point::new(r * diam * th.cos(), r * diam * th.sin());
            let v = witness_eval(&g, z).unwrap() * z.z();
            prop_assert!((v - 1.0).norm() <= 2.0 * diam / z.norm());
        }

        #[test]
        fn epsilon_invariants(terms in proptest::collection::vec(0.0..1e3f64, 1..60)) {
            prop_assume!(terms.iter().any(|t| *t > 0.0));
            let e = epsilon_sequence(&terms).unwrap();
            for w in e.values.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            for (v, t) in e.values.iter().zip(&terms) {
                prop_assert!(*v > 0.0 && *v <= 1.0);
                prop_assert!(v * t <= 1.0 + 1e-15);
            }
        }

        #[test]
        fn block_window(terms in proptest::collection::vec(0.0..=1.0f64, 1..80), m in 1usize..20) {
            if let Ok(end) = block_select(&terms, m) {
                let s: f64 = terms[m - 1..end].iter().sum();
                prop_assert!((1.0..=2.0).contains(&s));
                let short: f64 = terms[m - 1..end - 1].iter().sum();
                prop_assert!(short < 1.0);
            }
        }
    }
}
