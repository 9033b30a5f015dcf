//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 when parameters violate their invariants,
//! 3 for configuration, file and other runtime errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;

use crate::campanato::{
    seminorm_estimate, BallSamplingSpec, Builtin, CampanatoParams, FunctionHandle, OscillationMode, Pole,
    SeminormEstimate,
};
use crate::criterion::{
    build_roadrunner, criterion_series, roadrunner_report, roadrunner_terms, sweep, CriterionConfig, CriterionReport,
    RadiusLaw, RoadrunnerSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{DyadicGrid, Point, Rect, Region};
use crate::hausdorff::{lower_content_interval, GrowthSampling, IntervalEstimate, LowerContentConfig, MeasureFunction};
use crate::report::{fmt_g12, to_csv, to_json, write_atomic};
use crate::sufficiency::{dyadic_cover, sufficiency_check, GreenReport};
use crate::witness::{necessity_suite, NecessityConfig};

#[derive(Debug, Parser)]
#[command(name = "caplab", version, about = "Bounded point derivations on vanishing Campanato spaces")]
pub struct Cli {
    /// Worker threads; falls back to CAPLAB_THREADS, then all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bracket the lower Hausdorff content of a region.
    Content(ContentArgs),
    /// Evaluate the criterion series.
    Criterion(CriterionArgs),
    /// Run the necessity construction on a divergent roadrunner.
    Witness(WitnessArgs),
    /// Estimate a Campanato seminorm.
    Seminorm(SeminormArgs),
    /// Compare the Green's-theorem bound with the contour derivative.
    SufficiencyCheck(SufficiencyArgs),
    /// Exact roadrunner verdicts over a grid of (p, lambda, t).
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SetArgs {
    /// Region JSON file.
    #[arg(long, conflicts_with = "roadrunner")]
    pub region: Option<PathBuf>,
    /// factorial | geometric:Q | power:A:S | harness[:T:DIM]
    #[arg(long)]
    pub roadrunner: Option<String>,
    /// Last annulus index of a roadrunner.
    #[arg(long)]
    pub nmax: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct ContentArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub depth: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CriterionArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub t: u32,
    #[arg(long, default_value_t = 8)]
    pub depth: u32,
    /// FIRST..LAST for region input; defaults to 1..nmax.
    #[arg(long)]
    pub n_range: Option<String>,
    /// Evaluation point "re,im".
    #[arg(long, default_value = "0,0")]
    pub x: String,
    /// Trust a monotone geometric tail when certifying convergence.
    #[arg(long)]
    pub assume_tail: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Terms as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WitnessArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub t: u32,
    /// Largest block start m.
    #[arg(long, default_value_t = 8)]
    pub m_max: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Mean,
    Infc,
}

#[derive(Debug, Args)]
pub struct SeminormArgs {
    /// re_z | z | conj | const:RE[:IM]
    #[arg(long = "fn")]
    pub function: String,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Minimum number of sampled balls.
    #[arg(long, default_value_t = 1000)]
    pub balls: usize,
    #[arg(long, default_value_t = 256)]
    pub nodes: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    pub mode: ModeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SufficiencyArgs {
    /// Pole "re,im[,order]" with unit residue; repeatable.
    #[arg(long, required = true)]
    pub pole: Vec<String>,
    /// Region to cover; defaults to disks of `--radius` around the poles.
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[arg(long, default_value_t = 0.03125)]
    pub radius: f64,
    #[arg(long, default_value = "0,0")]
    pub x: String,
    #[arg(long)]
    pub t: u32,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 7)]
    pub depth: u32,
    #[arg(long, default_value_t = 16384)]
    pub nodes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// "p:lambda,p:lambda,..."; may be empty.
    #[arg(long, default_value = "")]
    pub grid: String,
    /// Orders "t,t,..."; may be empty.
    #[arg(long, default_value = "0,1,2")]
    pub ts: String,
    /// CSV table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads(cli.threads);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("caplab: {e}");
            if e.is_parameter_error() {
                2
            } else {
                3
            }
        }
    }
}

fn configure_threads(flag: Option<usize>) {
    let n = flag.or_else(|| std::env::var("CAPLAB_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = n.filter(|n| *n > 0) {
        // a pool built earlier in the process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Content(a) => content(a, cli.seed),
        Command::Criterion(a) => criterion(a, cli.seed),
        Command::Witness(a) => witness(a, cli.seed),
        Command::Seminorm(a) => seminorm(a),
        Command::SufficiencyCheck(a) => sufficiency(a),
        Command::Sweep(a) => sweep_cmd(a),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = to_json(value)?;
    match out {
        Some(p) => write_atomic(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad {what}: {s:?}")))
}

pub fn parse_point(s: &str) -> Result<Point> {
    let (a, b) = s.split_once(',').ok_or_else(|| Error::Config(format!("point must be \"re,im\": {s:?}")))?;
    Ok(Point::new(num(a, "point")?, num(b, "point")?))
}

/// Roadrunner shorthand; `harness` without arguments takes `t` and the
/// content dimension of the run.
pub fn parse_roadrunner(s: &str, n_max: u32, harness: Option<(u32, f64)>) -> Result<RoadrunnerSpec> {
    let parts: Vec<&str> = s.split(':').collect();
    let law = match parts.as_slice() {
        ["factorial"] => RadiusLaw::Factorial,
        ["geometric", q] => RadiusLaw::Geometric { q: num(q, "q")? },
        ["power", a, s] => RadiusLaw::PowerScaled { a: num(a, "a")?, s: num(s, "s")? },
        ["harness", t, d] => RadiusLaw::Harness {
            t: t.parse().map_err(|_| Error::Config(format!("bad harness order {t:?}")))?,
            content_dim: num(d, "content dimension")?,
        },
        ["harness"] => {
            let (t, content_dim) = harness.ok_or_else(|| Error::Config("harness needs harness:T:DIM here".into()))?;
            RadiusLaw::Harness { t, content_dim }
        }
        _ => return Err(Error::Config(format!("unknown roadrunner {s:?}"))),
    };
    let spec = RoadrunnerSpec::new(law, n_max);
    spec.validate()?;
    Ok(spec)
}

fn read_region(path: &Path) -> Result<Region> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Region::from_json(&text)
}

fn load_set(set: &SetArgs, default_nmax: u32, harness: Option<(u32, f64)>) -> Result<(Region, Option<RoadrunnerSpec>)> {
    let n_max = set.nmax.unwrap_or(default_nmax);
    match (&set.region, &set.roadrunner) {
        (Some(p), None) => Ok((read_region(p)?, None)),
        (None, Some(r)) => {
            let spec = parse_roadrunner(r, n_max, harness)?;
            Ok((build_roadrunner(&spec)?, Some(spec)))
        }
        _ => Err(Error::Config("give exactly one of --region or --roadrunner".into())),
    }
}

fn content_config(seed: u64) -> LowerContentConfig {
    LowerContentConfig { sampling: GrowthSampling { seed, ..GrowthSampling::default() }, ..Default::default() }
}

#[derive(Serialize)]
struct ContentOut {
    alpha: f64,
    depth: u32,
    seed: u64,
    estimate: IntervalEstimate,
}

fn content(a: &ContentArgs, seed: u64) -> Result<()> {
    let (region, _) = load_set(&a.set, 40, None)?;
    let grid = DyadicGrid::unit(a.depth);
    let estimate = lower_content_interval(&region, a.alpha, &grid, &content_config(seed))?;
    emit(&ContentOut { alpha: a.alpha, depth: a.depth, seed, estimate }, a.out.as_deref())
}

fn parse_range(s: &str) -> Result<(u32, u32)> {
    let (a, b) = s.split_once("..").ok_or_else(|| Error::Config(format!("range must be FIRST..LAST: {s:?}")))?;
    let p = |v: &str| v.trim().parse::<u32>().map_err(|_| Error::Config(format!("bad range bound {v:?}")));
    Ok((p(a)?, p(b)?))
}

pub fn terms_csv(r: &CriterionReport) -> Result<String> {
    let rows: Vec<Vec<String>> = r
        .rows()
        .into_iter()
        .map(|(n, l, u, pl, pu)| vec![n.to_string(), fmt_g12(l), fmt_g12(u), fmt_g12(pl), fmt_g12(pu)])
        .collect();
    to_csv(&["n", "lower", "upper", "partial_lower", "partial_upper"], &rows)
}

fn criterion(a: &CriterionArgs, seed: u64) -> Result<()> {
    let params = CampanatoParams::new(a.params.p, a.params.lambda)?;
    let harness = Some((a.t, params.content_dim()));
    let report = match &a.set.roadrunner {
        Some(r) if a.set.region.is_none() => {
            let spec = parse_roadrunner(r, a.set.nmax.unwrap_or(40), harness)?;
            roadrunner_report(&spec, a.t, &params)?
        }
        _ => {
            let (region, _) = load_set(&a.set, 40, harness)?;
            let range = match &a.n_range {
                Some(s) => parse_range(s)?,
                None => (1, a.set.nmax.unwrap_or(12)),
            };
            let cfg = CriterionConfig {
                depth: a.depth,
                content: content_config(seed),
                assume_tail: a.assume_tail,
                ..Default::default()
            };
            criterion_series(&region, parse_point(&a.x)?, a.t, &params, range, &cfg)?
        }
    };
    for w in &report.warnings {
        eprintln!("caplab: warning: {w}");
    }
    if let Some(p) = &a.csv {
        write_atomic(p, &terms_csv(&report)?)?;
    }
    emit(&report, a.out.as_deref())
}

fn witness(a: &WitnessArgs, seed: u64) -> Result<()> {
    let params = CampanatoParams::new(a.params.p, a.params.lambda)?;
    let harness = Some((a.t, params.content_dim()));
    let (region, spec) = load_set(&a.set, 200, harness)?;
    let mut cfg = NecessityConfig { seed, m_range: (1, a.m_max.max(1)), ..Default::default() };
    if let Some(spec) = &spec {
        cfg.terms = Some(roadrunner_terms(spec, a.t, params.alpha())?);
        cfg.n_max = spec.n_max;
    }
    let report = necessity_suite(&region, Point::ORIGIN, a.t, &params, &cfg)?;
    emit(&report, a.out.as_deref())
}

fn parse_function(s: &str) -> Result<Builtin> {
    let parts: Vec<&str> = s.split(':').collect();
    Ok(match parts.as_slice() {
        ["re_z"] => Builtin::RealPart,
        ["z"] => Builtin::Identity,
        ["conj"] => Builtin::Conjugate,
        ["const", re] => Builtin::Constant { value: Complex64::new(num(re, "constant")?, 0.0) },
        ["const", re, im] => Builtin::Constant { value: Complex64::new(num(re, "constant")?, num(im, "constant")?) },
        _ => return Err(Error::Config(format!("unknown function {s:?}"))),
    })
}

#[derive(Serialize)]
struct SeminormOut {
    function: String,
    params: CampanatoParams,
    estimate: SeminormEstimate,
}

fn seminorm(a: &SeminormArgs) -> Result<()> {
    let params = CampanatoParams { p: a.params.p, lambda: a.params.lambda };
    params.check_exponents()?;
    let f = FunctionHandle::builtin(parse_function(&a.function)?, Region::square(-2.0, -2.0, 4.0)?);
    let levels = 4;
    let per_level = a.balls.div_ceil(levels).max(1);
    let cps = (per_level as f64).sqrt().ceil() as usize;
    let mode = match a.mode {
        ModeArg::Mean => OscillationMode::MeanBased,
        ModeArg::Infc => OscillationMode::InfC,
    };
    let window = Rect { x0: -1.0, y0: -1.0, x1: 1.0, y1: 1.0 };
    let sampling = BallSamplingSpec::dyadic(window, cps, 1, levels, a.nodes).with_mode(mode);
    let estimate = seminorm_estimate(&f, &params, &sampling)?;
    emit(&SeminormOut { function: a.function.clone(), params, estimate }, a.out.as_deref())
}

fn parse_pole(s: &str) -> Result<Pole> {
    let parts: Vec<&str> = s.split(',').collect();
    let (at, order) = match parts.as_slice() {
        [x, y] => (Point::new(num(x, "pole")?, num(y, "pole")?), 1),
        [x, y, m] => (
            Point::new(num(x, "pole")?, num(y, "pole")?),
            m.trim().parse().map_err(|_| Error::Config(format!("bad pole order {m:?}")))?,
        ),
        _ => return Err(Error::Config(format!("pole must be \"re,im[,order]\": {s:?}"))),
    };
    Ok(Pole { at, residue: Complex64::new(1.0, 0.0), order })
}

#[derive(Serialize)]
struct SufficiencyOut {
    x: Point,
    t: u32,
    params: CampanatoParams,
    poles: Vec<Pole>,
    depth: u32,
    nodes: usize,
    report: GreenReport,
}

fn sufficiency(a: &SufficiencyArgs) -> Result<()> {
    let params = CampanatoParams::new(a.params.p, a.params.lambda)?;
    let poles: Vec<Pole> = a.pole.iter().map(|s| parse_pole(s)).collect::<Result<_>>()?;
    let k = match &a.region {
        Some(p) => read_region(p)?,
        None => Region::Union(poles.iter().map(|p| Region::disk(p.at.re, p.at.im, a.radius)).collect::<Result<_>>()?),
    };
    let h = MeasureFunction::power(params.content_dim())?;
    let cover = dyadic_cover(&k, &DyadicGrid::unit(a.depth), &h)?;
    let f = FunctionHandle::builtin(Builtin::Poles(poles.clone()), Region::square(-1.0, -1.0, 2.0)?);
    let x = parse_point(&a.x)?;
    let at: Vec<Point> = poles.iter().map(|p| p.at).collect();
    let report = sufficiency_check(&f, &at, x, a.t, &params, &cover, a.nodes)?;
    emit(&SufficiencyOut { x, t: a.t, params, poles, depth: a.depth, nodes: a.nodes, report }, a.out.as_deref())
}

fn parse_list<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|v| !v.is_empty()).map(f).collect()
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    let r = a.set.roadrunner.as_deref().ok_or_else(|| Error::Config("sweep needs --roadrunner".into()))?;
    let spec = parse_roadrunner(r, a.set.nmax.unwrap_or(40), None)?;
    let pl = parse_list(&a.grid, |v| {
        let (p, l) = v.split_once(':').ok_or_else(|| Error::Config(format!("grid entry must be p:lambda: {v:?}")))?;
        Ok((num(p, "p")?, num(l, "lambda")?))
    })?;
    let ts = parse_list(&a.ts, |v| v.parse::<u32>().map_err(|_| Error::Config(format!("bad order {v:?}"))))?;
    let grid: Vec<(f64, f64, u32)> = pl.iter().flat_map(|&(p, l)| ts.iter().map(move |&t| (p, l, t))).collect();
    let rows = sweep(&spec, &grid);
    let opt = |v: Option<f64>| v.map(fmt_g12).unwrap_or_default();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                fmt_g12(r.p),
                fmt_g12(r.lambda),
                r.t.to_string(),
                r.verdict.map(|v| format!("{v:?}")).unwrap_or_else(|| "Error".into()),
                opt(r.sum_lower),
                opt(r.sum_upper),
                opt(r.ratio_limit),
            ]
        })
        .collect();
    let csv = to_csv(&["p", "lambda", "t", "verdict", "sum_lower", "sum_upper", "ratio_limit"], &table)?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("caplab: row p={} lambda={} t={}: {e}", fmt_g12(r.p), fmt_g12(r.lambda), r.t);
        }
    }
    if let Some(p) = &a.json {
        write_atomic(p, &to_json(&rows)?)?;
    }
    match &a.out {
        Some(p) => write_atomic(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}
