//! The series `sum_n 2^((t+1)n) M_*^(1+alpha)(A_n(x) \ X)` with certified
//! term intervals, tail classification and exact roadrunner families.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campanato::CampanatoParams;
use crate::error::{Error, Result};
use crate::geometry::{annulus_shell, DyadicGrid, Point, Region};
use crate::hausdorff::{lower_content_interval, IntervalEstimate, LowerContentConfig};
use crate::witness::shell_set;

/// Half-width of the "ratio near 1" band.
pub const RATIO_DELTA: f64 = 0.05;
/// Ratios whose log-log slope against `n` is at most this are treated as
/// decaying to 0.
pub const DECAY_SLOPE: f64 = -0.3;
/// Terms decaying like `n^-s` with `s` above `1 + P_MARGIN` are summable.
pub const P_MARGIN: f64 = 0.1;
pub const MIN_TERMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Converges,
    Diverges,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    ExactDisk,
    QuadtreeInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum RadiusLaw {
    /// `r_n = 1/n!`
    Factorial,
    /// `r_n = q^-n`
    Geometric { q: f64 },
    /// `r_n = a^-n n^-s`
    PowerScaled { a: f64, s: f64 },
    /// `r_n` chosen so the term for `(t, content_dim)` is exactly `1/n`.
    Harness { t: u32, content_dim: f64 },
    /// `radii[n-1] = r_n`
    Custom { radii: Vec<f64> },
}

impl RadiusLaw {
    pub fn ln_radius(&self, n: u32) -> f64 {
        let nf = n as f64;
        match self {
            RadiusLaw::Factorial => -(2..=n).map(|k| (k as f64).ln()).sum::<f64>(),
            RadiusLaw::Geometric { q } => -nf * q.ln(),
            RadiusLaw::PowerScaled { a, s } => -nf * a.ln() - s * nf.ln(),
            RadiusLaw::Harness { t, content_dim } => {
                -(nf * (*t as f64 + 1.0) * std::f64::consts::LN_2 + nf.ln()) / content_dim
            }
            RadiusLaw::Custom { radii } => radii.get(n as usize - 1).map_or(f64::NEG_INFINITY, |r| r.ln()),
        }
    }

    pub fn radius(&self, n: u32) -> f64 {
        match self {
            RadiusLaw::Custom { radii } => radii.get(n as usize - 1).copied().unwrap_or(0.0),
            RadiusLaw::Geometric { q } => q.powf(-(n as f64)),
            RadiusLaw::PowerScaled { a, s } => a.powf(-(n as f64)) * (n as f64).powf(-s),
            RadiusLaw::Factorial if n <= 170 => 1.0 / (1..=n).map(f64::from).product::<f64>(),
            _ => self.ln_radius(n).exp(),
        }
    }
}

/// Where `D_n` sits inside `A_n`: at distance `radius_fraction * 2^-n` from
/// the origin, at the given angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterLaw {
    pub radius_fraction: f64,
    pub angle: f64,
}

impl Default for CenterLaw {
    fn default() -> Self {
        CenterLaw { radius_fraction: 0.75, angle: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadrunnerSpec {
    pub radius_law: RadiusLaw,
    #[serde(default)]
    pub center_law: CenterLaw,
    pub n_max: u32,
    /// First index carrying a deleted disk; earlier annuli stay whole.
    /// `None` picks the smallest index from which every disk fits.
    #[serde(default)]
    pub n_min: Option<u32>,
}

impl RoadrunnerSpec {
    pub fn new(radius_law: RadiusLaw, n_max: u32) -> Self {
        RoadrunnerSpec { radius_law, center_law: CenterLaw::default(), n_max, n_min: None }
    }

    /// Terms exactly `1/n` for the given order and content dimension.
    pub fn harness(t: u32, content_dim: f64, n_max: u32) -> Self {
        RoadrunnerSpec::new(RadiusLaw::Harness { t, content_dim }, n_max)
    }

    pub fn center(&self, n: u32) -> Point {
        let rho = self.center_law.radius_fraction * (-(n as f64)).exp2();
        let (s, c) = self.center_law.angle.sin_cos();
        Point::new(rho * c, rho * s)
    }

    /// `D_n` lies inside the closed shell `A_n`; tangency is allowed up to
    /// rounding.
    pub fn disk_fits(&self, n: u32) -> bool {
        let r = self.radius_law.radius(n);
        let shell = annulus_shell(Point::ORIGIN, n);
        let rho = self.center(n).norm();
        let tol = 1e-12 * shell.outer;
        r > 0.0 && r.is_finite() && rho - r >= shell.inner - tol && rho + r <= shell.outer + tol
    }

    /// First index with a deleted disk.
    pub fn first_index(&self) -> Result<u32> {
        if let Some(m) = self.n_min {
            if m == 0 {
                return Err(Error::Config("n_min starts at 1".into()));
            }
            if let Some(n) = (m..=self.n_max).find(|&n| !self.disk_fits(n)) {
                return Err(Error::DiskTouchesEdge(n as usize));
            }
            return Ok(m);
        }
        let mut first = self.n_max + 1;
        for n in (1..=self.n_max).rev() {
            if !self.disk_fits(n) {
                break;
            }
            first = n;
        }
        Ok(first)
    }

    pub fn validate(&self) -> Result<()> {
        if let RadiusLaw::Custom { radii } = &self.radius_law {
            if radii.len() < self.n_max as usize {
                return Err(Error::Config(format!("custom law has {} radii, n_max is {}", radii.len(), self.n_max)));
            }
        }
        let f = self.center_law.radius_fraction;
        if !(f > 0.5 && f < 1.0) {
            return Err(Error::Config(format!("center radius fraction {f} outside (1/2, 1)")));
        }
        self.first_index().map(|_| ())
    }
}

/// `2^((t+1)n) r_n^(1+alpha)` for `n = 1..=n_max`; zero before the first
/// deleted disk. The exponent may reach 2 here, where the disk value is
/// still exact.
pub fn roadrunner_terms(spec: &RoadrunnerSpec, t: u32, alpha: f64) -> Result<Vec<f64>> {
    let d = 1.0 + alpha;
    if !(d > 0.0 && d <= 2.0) {
        return Err(Error::ContentDimension(d));
    }
    spec.validate()?;
    let first = spec.first_index()?;
    Ok((1..=spec.n_max)
        .map(|n| {
            if n < first {
                0.0
            } else {
                let ln = (t as f64 + 1.0) * n as f64 * std::f64::consts::LN_2 + d * spec.radius_law.ln_radius(n);
                ln.exp()
            }
        })
        .collect())
}

/// `X = union_n (A_n \ D_n)` for `n = 1..=n_max`.
///
/// Built as one annulus minus the open disks, padded by the neighbouring
/// shells so the circles separating consecutive `A_n` are interior to `X`.
pub fn build_roadrunner(spec: &RoadrunnerSpec) -> Result<Region> {
    spec.validate()?;
    if spec.n_max == 0 {
        return Ok(Region::empty());
    }
    let first = spec.first_index()?;
    let inner = (-(spec.n_max as f64 + 2.0)).exp2();
    let shells = Region::annulus(0.0, 0.0, inner, 1.0)?;
    let mut disks = Vec::new();
    for n in first..=spec.n_max {
        let c = spec.center(n);
        disks.push(Region::disk(c.re, c.im, spec.radius_law.radius(n))?);
    }
    Ok(Region::difference(shells, Region::Union(disks)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioTest {
    pub limit: Option<f64>,
    pub verdict: Verdict,
    /// Least-squares slope of `ln(a_(n+1)/a_n)` against `ln n` over the tail.
    pub slope: f64,
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn check_terms(terms: &[f64]) -> Result<()> {
    if terms.len() < MIN_TERMS {
        return Err(Error::TooFewTerms { needed: MIN_TERMS, got: terms.len() });
    }
    if terms.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::NonpositiveTerms);
    }
    Ok(())
}

/// Ratio test over `terms[k] = a_(n0+k)`.
///
/// The tail is the second half of the ratios. When their log-log slope is at
/// most [`DECAY_SLOPE`] the ratios fall off like a power of `n` and the limit
/// is reported as 0; otherwise it is the mean of the last quarter.
pub fn ratio_test(terms: &[f64], n0: u32) -> Result<RatioTest> {
    check_terms(terms)?;
    let ratios: Vec<f64> = terms.windows(2).map(|w| w[1] / w[0]).collect();
    let tail = &ratios[ratios.len() / 2..];
    let start = n0 as usize + ratios.len() / 2;
    let xs: Vec<f64> = (0..tail.len()).map(|k| ((start + k) as f64).ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|r| r.ln()).collect();
    let slope = fit_slope(&xs, &ys);
    let limit = if slope <= DECAY_SLOPE {
        0.0
    } else {
        let q = &ratios[ratios.len() - (ratios.len() / 4).max(1)..];
        q.iter().sum::<f64>() / q.len() as f64
    };
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let verdict = if limit < 1.0 - RATIO_DELTA && monotone {
        Verdict::Converges
    } else if limit > 1.0 + RATIO_DELTA {
        Verdict::Diverges
    } else {
        Verdict::Undecided
    };
    Ok(RatioTest { limit: Some(limit), verdict, slope })
}

/// Ratio test, then a comparison with `sum n^-s` when the ratios tend to 1.
///
/// Divergence by comparison additionally needs the partial sum to reach
/// `threshold` times the largest term, so a short, nearly flat run stays
/// undecided.
pub fn tail_verdict(terms: &[f64], n0: u32, threshold: f64) -> Result<RatioTest> {
    let mut rt = ratio_test(terms, n0)?;
    if rt.verdict != Verdict::Undecided {
        return Ok(rt);
    }
    let half = terms.len() / 2;
    let xs: Vec<f64> = (half..terms.len()).map(|k| ((n0 as usize + k) as f64).ln()).collect();
    let ys: Vec<f64> = terms[half..].iter().map(|a| a.ln()).collect();
    let s = -fit_slope(&xs, &ys);
    let sum: f64 = terms.iter().sum();
    let max = terms.iter().copied().fold(0.0, f64::max);
    if s > 1.0 + P_MARGIN {
        rt.verdict = Verdict::Converges;
    } else if s <= 1.0 + 1e-6 && sum >= threshold * max {
        rt.verdict = Verdict::Diverges;
    }
    Ok(rt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSums {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub params: CampanatoParams,
    pub t: u32,
    pub n_start: u32,
    pub terms: Vec<IntervalEstimate>,
    pub partial_sums: PartialSums,
    pub ratio_limit: Option<f64>,
    pub verdict: Verdict,
    pub method: Method,
    /// First index with a deleted disk, for roadrunner runs.
    pub shift: Option<u32>,
    pub warnings: Vec<String>,
}

impl CriterionReport {
    /// Rows `(n, lower, upper, partial_lower, partial_upper)`.
    pub fn rows(&self) -> Vec<(u32, f64, f64, f64, f64)> {
        let (mut pl, mut pu) = (0.0, 0.0);
        self.terms
            .iter()
            .enumerate()
            .map(|(k, e)| {
                pl += e.lower;
                pu += e.upper;
                (self.n_start + k as u32, e.lower, e.upper, pl, pu)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionConfig {
    pub depth: u32,
    pub content: LowerContentConfig,
    /// The caller vouches for a monotone, geometrically dominated tail, which
    /// lets upper bounds certify convergence.
    pub assume_tail: bool,
    pub diverge_threshold: f64,
    /// Cells per level kept while shrinking each shell's grid onto its
    /// non-empty part.
    pub localize_cap: usize,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        CriterionConfig {
            depth: 8,
            content: LowerContentConfig::default(),
            assume_tail: false,
            diverge_threshold: 4.0,
            localize_cap: 64,
        }
    }
}

fn sums(terms: &[IntervalEstimate]) -> PartialSums {
    PartialSums { lower: terms.iter().map(|e| e.lower).sum(), upper: terms.iter().map(|e| e.upper).sum() }
}

/// Interval terms for `n` in `n_range` from the quadtree bracket, each on a
/// grid shrunk onto the non-empty part of its shell.
pub fn criterion_series(
    x_set: &Region,
    x: Point,
    t: u32,
    params: &CampanatoParams,
    n_range: (u32, u32),
    cfg: &CriterionConfig,
) -> Result<CriterionReport> {
    params.validate()?;
    let (n0, n1) = n_range;
    if n0 == 0 || n1 < n0 {
        return Err(Error::Config(format!("bad n range {n0}..{n1}")));
    }
    let d = params.content_dim();
    let mut warnings = Vec::new();
    if !x_set.contains(x) {
        warnings.push("x is not in X".to_string());
    }
    let terms: Vec<Result<IntervalEstimate>> = (n0..=n1)
        .into_par_iter()
        .map(|n| {
            let Some((set, grid, _)) = shell_set(x_set, x, n, cfg.localize_cap) else {
                return Ok(IntervalEstimate::zero(cfg.depth));
            };
            let grid = DyadicGrid { root: grid.root, depth: cfg.depth };
            let e = lower_content_interval(&set, d, &grid, &cfg.content)?;
            Ok(e.scale(((t as f64 + 1.0) * n as f64).exp2()))
        })
        .collect();
    let terms = terms.into_iter().collect::<Result<Vec<_>>>()?;
    let partial_sums = sums(&terms);
    let uppers: Vec<f64> = terms.iter().map(|e| e.upper).collect();
    let lowers: Vec<f64> = terms.iter().map(|e| e.lower).collect();
    let (verdict, ratio_limit) = if uppers.iter().all(|u| *u == 0.0) {
        (Verdict::Converges, None)
    } else {
        let up = if cfg.assume_tail { tail_verdict(&uppers, n0, cfg.diverge_threshold).ok() } else { None };
        let low = tail_verdict(&lowers, n0, cfg.diverge_threshold).ok();
        match (up, low) {
            (Some(u), _) if u.verdict == Verdict::Converges => (Verdict::Converges, u.limit),
            (_, Some(l)) if l.verdict == Verdict::Diverges => (Verdict::Diverges, l.limit),
            (u, l) => (Verdict::Undecided, u.or(l).and_then(|r| r.limit)),
        }
    };
    Ok(CriterionReport {
        params: *params,
        t,
        n_start: n0,
        terms,
        partial_sums,
        ratio_limit,
        verdict,
        method: Method::QuadtreeInterval,
        shift: None,
        warnings,
    })
}

/// Exact series for a roadrunner set at `x = 0`: `A_n \ X = D_n`, whose lower
/// content is `r_n^(1+alpha)`.
pub fn roadrunner_report(spec: &RoadrunnerSpec, t: u32, params: &CampanatoParams) -> Result<CriterionReport> {
    params.validate()?;
    let values = roadrunner_terms(spec, t, params.alpha())?;
    let first = spec.first_index()?;
    let terms: Vec<IntervalEstimate> = values
        .iter()
        .map(|v| if *v == 0.0 { IntervalEstimate::zero(0) } else { IntervalEstimate::exact(*v, "exact disk") })
        .collect();
    let partial_sums = sums(&terms);
    let positive = &values[(first as usize).saturating_sub(1).min(values.len())..];
    let (verdict, ratio_limit) = if positive.is_empty() {
        (Verdict::Converges, None)
    } else {
        match tail_verdict(positive, first, CriterionConfig::default().diverge_threshold) {
            Ok(r) => (r.verdict, r.limit),
            Err(Error::TooFewTerms { .. }) => (Verdict::Undecided, None),
            Err(e) => return Err(e),
        }
    };
    Ok(CriterionReport {
        params: *params,
        t,
        n_start: 1,
        terms,
        partial_sums,
        ratio_limit,
        verdict,
        method: Method::ExactDisk,
        shift: Some(first),
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub lambda: f64,
    pub t: u32,
    pub verdict: Option<Verdict>,
    pub sum_lower: Option<f64>,
    pub sum_upper: Option<f64>,
    pub ratio_limit: Option<f64>,
    pub error: Option<String>,
}

/// One exact roadrunner report per `(p, lambda, t)`; a failing row records
/// its error and the sweep moves on.
pub fn sweep(spec: &RoadrunnerSpec, grid: &[(f64, f64, u32)]) -> Vec<SweepRow> {
    grid.par_iter()
        .map(|&(p, lambda, t)| {
            let run = CampanatoParams::new(p, lambda).and_then(|c| roadrunner_report(spec, t, &c));
            match run {
                Ok(r) => SweepRow {
                    p,
                    lambda,
                    t,
                    verdict: Some(r.verdict),
                    sum_lower: Some(r.partial_sums.lower),
                    sum_upper: Some(r.partial_sums.upper),
                    ratio_limit: r.ratio_limit,
                    error: None,
                },
                Err(e) => SweepRow {
                    p,
                    lambda,
                    t,
                    verdict: None,
                    sum_lower: None,
                    sum_upper: None,
                    ratio_limit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
