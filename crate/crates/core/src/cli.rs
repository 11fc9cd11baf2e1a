//! Command-line driver: binds a geometry file to an analysis and renders the
//! result as CSV (JSON for `validate` and `generate`).
//!
//! Every command writes one artifact to `--out` or standard output. Floats are
//! printed with 17 significant digits so the text round-trips to the same
//! doubles, and identical arguments give byte-identical output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{solve_modes, track, uniform_expectation, Discretization, TaylorModel, TrackOptions};
use crate::assembly::{assemble, AssembledSystem};
use crate::eigen::frequency;
use crate::error::{Error, Result};
use crate::geometry::MorphGeometry;
use crate::jets::{a_jet, c_jet, closed_form_first, closed_form_second_c, closed_form_third_c, MatrixJet};
use crate::quadrature::QuadratureRule;
use crate::sensitivity::eigenpair_derivatives;
use crate::shapes::{self, DiskParams};
use crate::space::{DiscreteSpace, SpaceKind};

#[derive(Debug, Clone, Parser)]
#[command(name = "igamorph", version, about = "Isogeometric eigenvalue analysis on morphing domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: RunConfig,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample the Jacobian determinant over a grid of t values (JSON report).
    Validate,
    /// Eigenvalues and frequencies at t0: `mode,lambda,frequency_hz`.
    Eig,
    /// Eigenvalue derivatives at t0: `mode,order,lambda_deriv`.
    Sens,
    /// Taylor predictions of orders 0..N against fresh solves on a t grid.
    Taylor,
    /// Expected eigenvalue under r = a + (b − a) t uniform on [a, b].
    Uq,
    /// Follow modes from t = 0 to 1 by correlation matching.
    Track,
    /// Compare closed-form Jacobian-term derivatives with jet arithmetic on random cases.
    CheckJets,
    /// Write a built-in geometry as JSON.
    Generate(GenerateArgs),
}

/// Run configuration shared by all commands.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Geometry file (JSON).
    #[arg(long, global = true)]
    pub geometry: Option<PathBuf>,
    /// Problem: `h1` (Laplace) or `hcurl` (Maxwell).
    #[arg(long, global = true, default_value = "h1")]
    pub problem: SpaceKind,
    /// Solution degree, one value or one per direction.
    #[arg(long, global = true, value_delimiter = ',', default_value = "2")]
    pub degree: Vec<usize>,
    /// Equal parts each geometry element is split into per direction.
    #[arg(long, global = true, default_value_t = 1)]
    pub refine: usize,
    /// Gauss points per direction; degree + 1 when omitted.
    #[arg(long, global = true)]
    pub quad: Option<usize>,
    /// Expansion point; 0 by default, 0.5 for `uq`.
    #[arg(long, global = true)]
    pub t0: Option<f64>,
    /// Highest derivative order.
    #[arg(long, global = true, default_value_t = 2)]
    pub order: usize,
    /// Modes (1-based), e.g. `1,3-5`.
    #[arg(long, global = true, default_value = "1")]
    pub modes: String,
    /// Lower end of the physical parameter range for `uq`.
    #[arg(long, global = true, default_value_t = 0.0)]
    pub a: f64,
    /// Upper end of the physical parameter range for `uq`.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub b: f64,
    /// Number of t steps over [0, 1].
    #[arg(long, global = true, default_value_t = 10)]
    pub steps: usize,
    /// Minimum correlation accepted when tracking.
    #[arg(long, global = true, default_value_t = 0.8)]
    pub threshold: f64,
    /// Relative gap below which an eigenvalue counts as multiple.
    #[arg(long, global = true, default_value_t = crate::sensitivity::DEFAULT_GAP_TOL)]
    pub gap_tol: f64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Number of randomized cases for `check-jets`.
    #[arg(long, global = true, default_value_t = 200)]
    pub cases: usize,
    /// Determinant samples per direction per element for `validate`.
    #[arg(long, global = true, default_value_t = 5)]
    pub samples: usize,
    /// Reference expectation for the `uq` relative-error column.
    #[arg(long, global = true)]
    pub exact: Option<f64>,
    /// Directory receiving the assembled matrices as `i j value` triplets.
    #[arg(long, global = true)]
    pub dump_matrices: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    pub shape: Shape,
    /// Shape parameters; see the shape list for their meaning.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub params: Vec<f64>,
}

/// Built-in geometries and their `--params`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Shape {
    /// dim, degree, elements (default 2,1,1); static unit cube.
    Identity,
    /// start and end length (default 1,1).
    Interval,
    /// start lengths then end lengths (default 1,1,1,1).
    Box,
    /// inner radius, outer radius, end scale factor (default 1,2,1).
    Annulus,
    /// two unit squares sharing an edge; no parameters.
    TwoSquares,
    /// start radius, end radius, start core, end core (default 0.5,0.5,0.4,0.4).
    Disk,
    /// edge length, perturbation amplitude (default π,0).
    Cube,
}

/// Rendered artifact. `error` is set when the artifact itself reports a
/// failure (an invalid geometry) and is still worth writing.
#[derive(Debug)]
pub struct Outcome {
    pub text: String,
    pub error: Option<Error>,
}

impl From<String> for Outcome {
    fn from(text: String) -> Self {
        Self { text, error: None }
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Parses `1,3-5` into sorted distinct 1-based modes.
pub fn parse_modes(list: &str) -> Result<Vec<usize>> {
    let mut modes = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Validation(format!("bad mode list entry '{item}'"));
        match item.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo > hi {
                    return Err(bad());
                }
                modes.extend(lo..=hi);
            }
            None => modes.push(item.parse().map_err(|_| bad())?),
        }
    }
    if modes.is_empty() {
        return Err(Error::Validation("empty mode list".into()));
    }
    if modes.contains(&0) {
        return Err(Error::Validation("modes are numbered from 1".into()));
    }
    modes.sort_unstable();
    modes.dedup();
    Ok(modes)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.degree.is_empty() || self.degree.contains(&0) {
            return bad("degrees must be at least 1".into());
        }
        if self.refine == 0 {
            return bad("--refine must be at least 1".into());
        }
        if self.quad == Some(0) {
            return bad("--quad must be positive".into());
        }
        if let Some(t0) = self.t0 {
            if !(0.0..=1.0).contains(&t0) {
                return bad(format!("--t0 {t0} lies outside [0, 1]"));
            }
        }
        if !(self.a < self.b) {
            return bad(format!("--a {} must be below --b {}", self.a, self.b));
        }
        if self.steps == 0 {
            return bad("--steps must be positive".into());
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return bad(format!("--threshold {} lies outside (0, 1]", self.threshold));
        }
        if !(self.gap_tol >= 0.0) {
            return bad("--gap-tol must be nonnegative".into());
        }
        if self.samples == 0 {
            return bad("--samples must be positive".into());
        }
        parse_modes(&self.modes)?;
        Ok(())
    }

    fn discretization(&self) -> Discretization {
        Discretization {
            kind: self.problem,
            degrees: self.degree.clone(),
            refine: self.refine,
            quad: self.quad,
        }
    }

    fn load_geometry(&self) -> Result<MorphGeometry> {
        let path = self
            .geometry
            .as_ref()
            .ok_or_else(|| Error::Validation("--geometry is required".into()))?;
        let text = fs::read_to_string(path)?;
        MorphGeometry::from_json(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn t_grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| i as f64 / self.steps as f64).collect()
    }
}

struct Setup {
    geom: MorphGeometry,
    space: DiscreteSpace,
    quad: QuadratureRule,
}

impl Setup {
    fn new(config: &RunConfig) -> Result<Self> {
        let geom = config.load_geometry()?;
        let (space, quad) = config.discretization().build(&geom)?;
        log::info!("{} dofs, quadrature {:?}", space.n_dof(), quad.points_per_dir());
        Ok(Self { geom, space, quad })
    }

    fn assemble(&self, config: &RunConfig, t: f64, order: usize) -> Result<AssembledSystem> {
        let system = assemble(&self.space, &self.geom, t, order, &self.quad)?;
        if let Some(dir) = &config.dump_matrices {
            dump(dir, &system)?;
        }
        Ok(system)
    }
}

fn dump(dir: &Path, system: &AssembledSystem) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, stack) in [("K", &system.k), ("M", &system.m)] {
        for (k, mat) in stack.iter().enumerate() {
            let file = fs::File::create(dir.join(format!("{name}{k}.txt")))?;
            let mut out = std::io::BufWriter::new(file);
            mat.write_lower_triplets(&mut out)?;
        }
    }
    Ok(())
}

fn single_mode(config: &RunConfig, command: &str) -> Result<usize> {
    match parse_modes(&config.modes)?.as_slice() {
        [m] => Ok(*m),
        _ => Err(Error::Validation(format!("{command} takes exactly one mode"))),
    }
}

/// Runs a command and returns its artifact.
pub fn execute(command: &Command, config: &RunConfig) -> Result<Outcome> {
    config.validate()?;
    match command {
        Command::Validate => cmd_validate(config),
        Command::Eig => cmd_eig(config).map(Outcome::from),
        Command::Sens => cmd_sens(config).map(Outcome::from),
        Command::Taylor => cmd_taylor(config).map(Outcome::from),
        Command::Uq => cmd_uq(config).map(Outcome::from),
        Command::Track => cmd_track(config).map(Outcome::from),
        Command::CheckJets => cmd_check_jets(config).map(Outcome::from),
        Command::Generate(args) => cmd_generate(args).map(Outcome::from),
    }
}

/// Executes and writes the artifact, then reports any failure it carries.
pub fn run(cli: &Cli) -> Result<()> {
    let outcome = execute(&cli.command, &cli.config)?;
    match &cli.config.out {
        Some(path) => fs::write(path, &outcome.text)?,
        None => print!("{}", outcome.text),
    }
    outcome.error.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct ValidationJson {
    t: Vec<f64>,
    min_det: Vec<f64>,
    valid: bool,
}

pub fn cmd_validate(config: &RunConfig) -> Result<Outcome> {
    let geom = config.load_geometry()?;
    let t = config.t_grid();
    let mut min_det = Vec::with_capacity(t.len());
    let mut valid = true;
    for &ti in &t {
        let report = geom.validate_mapping(ti, config.samples)?;
        min_det.push(report.min_det);
        valid &= report.valid;
    }
    let worst = min_det.iter().copied().fold(f64::INFINITY, f64::min);
    let mut text = serde_json::to_string_pretty(&ValidationJson { t, min_det, valid })
        .map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    let error = (!valid).then(|| Error::Geometry(format!("minimum sampled Jacobian determinant {worst:e}")));
    Ok(Outcome { text, error })
}

pub fn cmd_eig(config: &RunConfig) -> Result<String> {
    let setup = Setup::new(config)?;
    let modes = parse_modes(&config.modes)?;
    let t0 = config.t0.unwrap_or(0.0);
    let system = setup.assemble(config, t0, 0)?;
    let sol = solve_modes(&system, *modes.last().unwrap_or(&1))?;
    let mut out = String::from("mode,lambda,frequency_hz\n");
    for &m in &modes {
        let lambda = sol.eigenvalue(m)?;
        let f = frequency(lambda.max(0.0))?;
        let _ = writeln!(out, "{m},{},{}", fmt_f64(lambda), fmt_f64(f));
    }
    Ok(out)
}

pub fn cmd_sens(config: &RunConfig) -> Result<String> {
    let setup = Setup::new(config)?;
    let modes = parse_modes(&config.modes)?;
    let t0 = config.t0.unwrap_or(0.0);
    let system = setup.assemble(config, t0, config.order)?;
    let sol = solve_modes(&system, *modes.last().unwrap_or(&1))?;
    let mut out = String::from("mode,order,lambda_deriv\n");
    for &m in &modes {
        let jet = eigenpair_derivatives(&system, &sol, m, config.order, config.gap_tol)?;
        for (k, l) in jet.lambda.iter().enumerate() {
            let _ = writeln!(out, "{m},{k},{}", fmt_f64(*l));
        }
    }
    Ok(out)
}

fn mode_model(setup: &Setup, config: &RunConfig, mode: usize, t0: f64) -> Result<TaylorModel> {
    let system = setup.assemble(config, t0, config.order)?;
    let sol = solve_modes(&system, mode)?;
    let jet = eigenpair_derivatives(&system, &sol, mode, config.order, config.gap_tol)?;
    Ok(TaylorModel::from_jet(&jet))
}

pub fn cmd_taylor(config: &RunConfig) -> Result<String> {
    let setup = Setup::new(config)?;
    let mode = single_mode(config, "taylor")?;
    let t0 = config.t0.unwrap_or(0.0);
    let model = mode_model(&setup, config, mode, t0)?;
    let truncations: Vec<TaylorModel> = (0..=config.order).map(|n| model.truncated(n)).collect();
    let mut out = String::from("t");
    for n in 0..=config.order {
        let _ = write!(out, ",lambda_taylor_n{n}");
    }
    out.push_str(",lambda_solved\n");
    for t in config.t_grid() {
        let system = assemble(&setup.space, &setup.geom, t, 0, &setup.quad)?;
        let solved = solve_modes(&system, mode)?.eigenvalue(mode)?;
        out.push_str(&fmt_f64(t));
        for m in &truncations {
            let _ = write!(out, ",{}", fmt_f64(m.eval(t)));
        }
        let _ = writeln!(out, ",{}", fmt_f64(solved));
    }
    Ok(out)
}

pub fn cmd_uq(config: &RunConfig) -> Result<String> {
    let setup = Setup::new(config)?;
    let mode = single_mode(config, "uq")?;
    let t0 = config.t0.unwrap_or(0.5);
    let model = mode_model(&setup, config, mode, t0)?;
    let mut out = String::from("order,expectation");
    if config.exact.is_some() {
        out.push_str(",rel_error_vs_closed_form");
    }
    out.push('\n');
    for n in 0..=config.order {
        let physical = model.truncated(n).reparametrize(config.a, config.b)?;
        let e = uniform_expectation(&physical, config.a, config.b)?;
        let _ = write!(out, "{n},{}", fmt_f64(e));
        if let Some(exact) = config.exact {
            let _ = write!(out, ",{}", fmt_f64(((e - exact) / exact).abs()));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_track(config: &RunConfig) -> Result<String> {
    let geom = config.load_geometry()?;
    let opts = TrackOptions {
        modes: parse_modes(&config.modes)?,
        steps: config.steps,
        order: config.order,
        threshold: config.threshold,
        gap_tol: config.gap_tol,
    };
    let run = track(&geom, &config.discretization(), &opts)?;
    let mut out = String::from("step,t,mode,lambda,correlation\n");
    for r in &run.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            fmt_f64(r.t),
            r.mode,
            fmt_f64(r.lambda),
            fmt_f64(r.correlation)
        );
    }
    Ok(out)
}

fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn cmd_check_jets(config: &RunConfig) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = String::from("case,dim,t,first_a,first_c,second_c,third_c\n");
    let mut case = 0;
    while case < config.cases {
        let d = if rng.gen_bool(0.5) { 2 } else { 3 };
        let g0 = DMatrix::from_fn(d, d, |i, j| f64::from(u8::from(i == j)) + rng.gen_range(-0.3..0.3));
        let jv = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.4..0.4));
        let t: f64 = rng.gen_range(0.0..1.0);
        if (&g0 + &jv * t).determinant() < 0.2 {
            continue;
        }
        let g = MatrixJet::from_affine(&g0, &jv, t, 3);
        let a = a_jet(&g)?;
        let c = c_jet(&g)?;
        let first = closed_form_first(&g0, &jv, t)?;
        let errors = [
            rel_fro(&first.d_a, &a.coeffs()[1]),
            rel_fro(&first.d_c, &c.coeffs()[1]),
            rel_fro(&closed_form_second_c(&g0, &jv, t)?, &c.coeffs()[2]),
            rel_fro(&closed_form_third_c(&g0, &jv, t)?, &c.coeffs()[3]),
        ];
        let _ = write!(out, "{case},{d},{}", fmt_f64(t));
        for e in errors {
            let _ = write!(out, ",{}", fmt_f64(e));
        }
        out.push('\n');
        case += 1;
    }
    Ok(out)
}

fn params_or(given: &[f64], default: &[f64]) -> Vec<f64> {
    let mut p = default.to_vec();
    for (slot, v) in p.iter_mut().zip(given) {
        *slot = *v;
    }
    p
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(Error::Validation(format!("{what} must be a nonnegative integer, got {x}")))
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<String> {
    let g = &args.params;
    let too_many = |n: usize| {
        if g.len() > n {
            Err(Error::Validation(format!("{:?} takes at most {n} parameters", args.shape)))
        } else {
            Ok(())
        }
    };
    let geom = match args.shape {
        Shape::Identity => {
            too_many(3)?;
            let p = params_or(g, &[2.0, 1.0, 1.0]);
            shapes::identity(as_count(p[0], "dim")?, as_count(p[1], "degree")?, as_count(p[2], "elements")?)?
        }
        Shape::Interval => {
            too_many(2)?;
            let p = params_or(g, &[1.0, 1.0]);
            shapes::interval(p[0], p[1])?
        }
        Shape::Box => {
            let p = if g.is_empty() { vec![1.0; 4] } else { g.clone() };
            if p.len() % 2 != 0 {
                return Err(Error::Validation("box takes start and end lengths of equal count".into()));
            }
            let (start, end) = p.split_at(p.len() / 2);
            shapes::axis_box(start, end)?
        }
        Shape::Annulus => {
            too_many(3)?;
            let p = params_or(g, &[1.0, 2.0, 1.0]);
            shapes::quarter_annulus_scaled(p[0], p[1], p[2])?
        }
        Shape::TwoSquares => {
            too_many(0)?;
            shapes::two_squares()?
        }
        Shape::Disk => {
            too_many(4)?;
            let core = DiskParams::DEFAULT_CORE;
            let mut p = params_or(g, &[0.5, 0.5, core, core]);
            if g.len() == 3 {
                p[3] = p[2];
            }
            shapes::disk(&DiskParams {
                radius_start: p[0],
                radius_end: p[1],
                core_start: p[2],
                core_end: p[3],
            })?
        }
        Shape::Cube => {
            too_many(2)?;
            let p = params_or(g, &[std::f64::consts::PI, 0.0]);
            shapes::perturbed_cube(p[0], p[1])?
        }
    };
    let mut text = geom.to_json();
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_lists() {
        assert_eq!(parse_modes("1").unwrap(), vec![1]);
        assert_eq!(parse_modes("3-5,1").unwrap(), vec![1, 3, 4, 5]);
        assert_eq!(parse_modes(" 2 , 2 ").unwrap(), vec![2]);
        assert!(parse_modes("0").is_err());
        assert!(parse_modes("4-2").is_err());
        assert!(parse_modes("x").is_err());
        assert!(parse_modes("").is_err());
    }

    #[test]
    fn seventeen_digits() {
        let x = 0.1 + 0.2;
        let s = fmt_f64(x);
        assert_eq!(s.parse::<f64>().unwrap(), x);
        assert_eq!(s.split('e').next().unwrap().chars().filter(char::is_ascii_digit).count(), 17);
    }

    #[test]
    fn config_checks() {
        let cli = Cli::parse_from(["igamorph", "eig", "--a", "1", "--b", "0"]);
        assert_eq!(cli.config.validate().unwrap_err().exit_code(), 2);
        let cli = Cli::parse_from(["igamorph", "eig", "--threshold", "1.5"]);
        assert!(cli.config.validate().is_err());
        let cli = Cli::parse_from(["igamorph", "uq", "--degree", "2,3", "--modes", "1-3"]);
        assert_eq!(cli.config.degree, vec![2, 3]);
        assert!(single_mode(&cli.config, "uq").is_err());
    }

    #[test]
    fn generated_shapes_parse_back() {
        for shape in Shape::value_variants() {
            let text = cmd_generate(&GenerateArgs {
                shape: *shape,
                params: Vec::new(),
            })
            .unwrap();
            let geom = MorphGeometry::from_json(&text).unwrap();
            assert_eq!(geom.to_json() + "\n", text);
        }
    }

    #[test]
    fn jet_check_is_seeded() {
        let cli = Cli::parse_from(["igamorph", "check-jets", "--cases", "5", "--seed", "7"]);
        let a = cmd_check_jets(&cli.config).unwrap();
        let b = cmd_check_jets(&cli.config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 6);
        for line in a.lines().skip(1) {
            for v in line.split(',').skip(3) {
                assert!(v.parse::<f64>().unwrap() <= 1e-11, "{line}");
            }
        }
    }
}
