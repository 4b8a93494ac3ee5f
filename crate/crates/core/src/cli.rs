//! Configuration and subcommand dispatch for the `stiffspec` binary.
//!
//! A TOML file supplies flat sections `[geometry]`, `[sweep]`, `[mesh]`, `[cusp]`
//! and `[output]`; every field has a command-line flag, and flags win.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::asymptotics::{predict_all, LimitMeshes, RTOL_CLUSTER};
use crate::cusp::{
    dirichlet_exterior_divergence_check, dyadic_ladder, fit_decay, kissing_mesh, sample_profile, solve_cusp_problem,
    CuspBc, CuspProfile, CuspSpectral, DecayModel, ThicknessModel,
};
use crate::eigensolver::SolverOptions;
use crate::error::{Error, Result};
use crate::geometry::{build_domain, CuspGeometry, DomainKind, DomainSpec};
use crate::mesh::{generate_mesh, GradingSpec};
use crate::verification::{emit_report, fmt_num, run_sweep, ConvergenceReport, ReportFormat, SweepConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub const DEFAULT_H: f64 = 0.05;
pub const DEFAULT_NEV: usize = 6;
pub const DEFAULT_GRADING_RATIO: f64 = 0.5;
pub const REPORT_JSON: &str = "report.json";

#[derive(Parser, Debug)]
#[command(name = "stiffspec", version, about = "Eigenvalue asymptotics of stiff transmission problems on disks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Limit spectrum and first-order corrections for one m.
    Limit(Flags),
    /// ε-sweep of the full problem with rate fits.
    Sweep(Flags),
    /// Cusp studies on kissing disks.
    Cusp(Flags),
    /// Re-emit CSV, plot data and summary from a saved sweep.
    Report(Flags),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Concentric,
    Offset,
    Kissing,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub m: Option<f64>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub geometry: Option<GeometryKind>,
    #[arg(long)]
    pub r0: Option<f64>,
    #[arg(long)]
    pub r1: Option<f64>,
    /// Centre distance for offset disks.
    #[arg(long)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
    /// Finer mesh size for Richardson extrapolation.
    #[arg(long)]
    pub h2: Option<f64>,
    #[arg(long)]
    pub nev: Option<usize>,
    #[arg(long)]
    pub rtol_cluster: Option<f64>,
    #[arg(long)]
    pub delta_trunc: Option<f64>,
    #[arg(long)]
    pub grading_ratio: Option<f64>,
    /// λ of the constant-trace cusp problem.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub c0: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory holding report.json (report subcommand).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Seed of the eigensolver start block.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    geometry: GeometrySection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    mesh: MeshSection,
    #[serde(default)]
    cusp: CuspSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct GeometrySection {
    kind: Option<GeometryKind>,
    r0: Option<f64>,
    r1: Option<f64>,
    offset: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    m: Option<f64>,
    eps: Option<Vec<f64>>,
    nev: Option<usize>,
    rtol_cluster: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct MeshSection {
    h: Option<f64>,
    h2: Option<f64>,
    grading_ratio: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct CuspSection {
    delta_trunc: Option<f64>,
    lambda: Option<f64>,
    c0: Option<f64>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    input: Option<PathBuf>,
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SubcommandKind {
    Limit,
    Sweep,
    Cusp,
    Report,
}

/// Fully validated run description.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub subcommand: SubcommandKind,
    pub geometry: Option<DomainSpec>,
    pub m: Option<f64>,
    pub eps_list: Vec<f64>,
    pub h: f64,
    pub h2: Option<f64>,
    pub nev: usize,
    pub rtol_cluster: f64,
    pub delta_trunc: Option<f64>,
    pub grading_ratio: f64,
    pub lambda: f64,
    pub c0: f64,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    pub fn solver(&self) -> SolverOptions {
        SolverOptions { seed: self.seed, ..SolverOptions::default() }
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let m = self.m.ok_or(Error::MissingField("m"))?;
        let geometry = self.geometry.ok_or(Error::MissingField("geometry"))?;
        let mut c = SweepConfig::new(m, self.eps_list.clone(), self.h, self.nev, geometry)?;
        c.mesh_h2 = self.h2;
        c.rtol_cluster = self.rtol_cluster;
        c.solver = self.solver();
        c.grading = self.grading()?;
        c.validate()?;
        Ok(c)
    }

    fn grading(&self) -> Result<Option<GradingSpec>> {
        match (self.geometry.map(|g| g.kind), self.delta_trunc) {
            (Some(DomainKind::Kissing), Some(d)) => Ok(Some(GradingSpec::new(d, self.grading_ratio)?)),
            (Some(DomainKind::Kissing), None) => Err(Error::MissingField("delta_trunc")),
            _ => Ok(None),
        }
    }

    pub fn cusp_geometry(&self) -> Result<CuspGeometry> {
        let g = self.geometry.ok_or(Error::MissingField("geometry"))?;
        if g.kind != DomainKind::Kissing {
            return Err(Error::InvalidConfig("geometry: the cusp subcommand needs kind = kissing".into()));
        }
        let d = self.delta_trunc.ok_or(Error::MissingField("delta_trunc"))?;
        CuspGeometry::new(g.core.radius, g.outer.radius, d)
    }
}

fn field<T>(name: &'static str, v: Option<T>) -> Result<T> {
    v.ok_or(Error::MissingField(name))
}

fn invalid(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("{name}: {msg}"))
}

/// Merges the optional file with the flags (flags win) and validates for `subcommand`.
pub fn parse_config(subcommand: SubcommandKind, flags: &Flags) -> Result<RunConfig> {
    let file = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("config {}: {e}", p.display())))?;
            toml::from_str::<FileConfig>(&text).map_err(|e| Error::Parse(format!("config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let kind = flags.geometry.or(file.geometry.kind);
    let r0 = flags.r0.or(file.geometry.r0);
    let r1 = flags.r1.or(file.geometry.r1);
    let offset = flags.offset.or(file.geometry.offset);
    let geometry = match kind {
        None => None,
        Some(k) => {
            let r0 = field("geometry.r0", r0)?;
            let r1 = field("geometry.r1", r1)?;
            let spec = match k {
                GeometryKind::Concentric => DomainSpec::concentric(r0, r1),
                GeometryKind::Offset => DomainSpec::offset(r0, r1, field("geometry.offset", offset)?),
                GeometryKind::Kissing => DomainSpec::kissing(r0, r1),
            };
            build_domain(spec).map_err(|e| invalid("geometry", e))?;
            Some(spec)
        }
    };
    let cfg = RunConfig {
        subcommand,
        geometry,
        m: flags.m.or(file.sweep.m),
        eps_list: flags.eps.clone().or(file.sweep.eps).unwrap_or_default(),
        h: flags.h.or(file.mesh.h).unwrap_or(DEFAULT_H),
        h2: flags.h2.or(file.mesh.h2),
        nev: flags.nev.or(file.sweep.nev).unwrap_or(DEFAULT_NEV),
        rtol_cluster: flags.rtol_cluster.or(file.sweep.rtol_cluster).unwrap_or(RTOL_CLUSTER),
        delta_trunc: flags.delta_trunc.or(file.cusp.delta_trunc),
        grading_ratio: flags.grading_ratio.or(file.mesh.grading_ratio).unwrap_or(DEFAULT_GRADING_RATIO),
        lambda: flags.lambda.or(file.cusp.lambda).unwrap_or(1.0),
        c0: flags.c0.or(file.cusp.c0).unwrap_or(1.0),
        out: flags.out.clone().or(file.output.dir).unwrap_or_else(|| PathBuf::from("out")),
        input: flags.input.clone().or(file.output.input),
        seed: flags.seed.or(file.output.seed).unwrap_or_else(|| SolverOptions::default().seed),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(c: &RunConfig) -> Result<()> {
    if !(c.h > 0.0) {
        return Err(invalid("h", format!("must be positive, got {}", c.h)));
    }
    if let Some(h2) = c.h2 {
        if !(h2 > 0.0 && h2 < c.h) {
            return Err(invalid("h2", format!("must lie in (0, h), got {h2}")));
        }
    }
    if c.nev == 0 {
        return Err(invalid("nev", "must be at least 1"));
    }
    if !(c.rtol_cluster > 0.0) {
        return Err(invalid("rtol_cluster", "must be positive"));
    }
    if !(c.grading_ratio > 0.0 && c.grading_ratio < 1.0) {
        return Err(invalid("grading_ratio", "must lie in (0, 1)"));
    }
    if let Some(m) = c.m {
        if !m.is_finite() {
            return Err(invalid("m", "must be finite"));
        }
    }
    match c.subcommand {
        SubcommandKind::Limit => {
            field("geometry", c.geometry)?;
            field("m", c.m)?;
            if c.geometry.map(|g| g.kind) == Some(DomainKind::Kissing) {
                return Err(invalid("geometry", "limit spectra are computed on concentric or offset disks"));
            }
        }
        SubcommandKind::Sweep => {
            if c.eps_list.is_empty() {
                return Err(Error::MissingField("eps_list"));
            }
            c.sweep_config().map_err(|e| match e {
                Error::InvalidConfig(s) if s.starts_with("eps_list") => Error::InvalidConfig(s),
                Error::InvalidConfig(s) => Error::InvalidConfig(format!("sweep: {s}")),
                other => other,
            })?;
        }
        SubcommandKind::Cusp => {
            c.cusp_geometry()?;
            if !(c.lambda >= 0.0) {
                return Err(invalid("lambda", "must be nonnegative"));
            }
        }
        SubcommandKind::Report => {}
    }
    Ok(())
}

/// Whether every check of a run passed, and the files written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
}

pub fn run(config: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&config.out)?;
    match config.subcommand {
        SubcommandKind::Limit => run_limit(config),
        SubcommandKind::Sweep => {
            let report = run_sweep(&config.sweep_config()?)?;
            let json = config.out.join(REPORT_JSON);
            fs::write(&json, serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?)?;
            let mut files = vec![json];
            files.extend(emit_all(&report, &config.out)?);
            Ok(Outcome { passed: report.all_pass(), files })
        }
        SubcommandKind::Cusp => run_cusp(config),
        SubcommandKind::Report => {
            let dir = config.input.clone().unwrap_or_else(|| config.out.clone());
            let path = dir.join(REPORT_JSON);
            let text = fs::read_to_string(&path)?;
            let report: ConvergenceReport =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let files = emit_all(&report, &config.out)?;
            Ok(Outcome { passed: report.all_pass(), files })
        }
    }
}

fn emit_all(report: &ConvergenceReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for f in [ReportFormat::Csv, ReportFormat::PlotData, ReportFormat::Summary] {
        files.extend(emit_report(report, f, dir)?);
    }
    Ok(files)
}

fn run_limit(config: &RunConfig) -> Result<Outcome> {
    let m = field("m", config.m)?;
    let domain = build_domain(field("geometry", config.geometry)?)?;
    let meshes = LimitMeshes::new(generate_mesh(&domain, config.h, None)?)?;
    let preds = predict_all(m, &meshes, config.nev, config.rtol_cluster, &config.solver())?;
    let mut s = String::from("m,n,lambda0,lambda_prime,lambda_prime_alt,multiplicity,cluster,source,c0,alpha,beta,gamma\n");
    for p in &preds {
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:?},{},{},{},{}",
            fmt_num(m),
            p.n,
            fmt_num(p.lambda0),
            fmt_num(p.lambda_prime),
            opt(p.lambda_prime_alt),
            p.multiplicity,
            p.cluster,
            p.source,
            opt(p.c0),
            fmt_num(p.alpha),
            fmt_num(p.beta),
            fmt_num(p.gamma)
        );
    }
    let path = config.out.join("limit.csv");
    fs::write(&path, s)?;
    Ok(Outcome { passed: true, files: vec![path] })
}

/// Ladder for the exponential fit: x₁ = 1/k, k = 3, …, 8, kept inside (2δ, R0).
pub fn dirichlet_ladder(geom: &CuspGeometry) -> Vec<f64> {
    (3..=8).map(|k| 1.0 / k as f64).filter(|&x| x < geom.r0 && x > 2.0 * geom.delta_trunc).collect()
}

/// δ values for the divergence integral.
pub fn divergence_deltas() -> Vec<f64> {
    dyadic_ladder(0.02, 0.00125)
}

fn profile_csv(p: &CuspProfile) -> String {
    let mut s = String::from("x1,value\n");
    for &(x, v) in &p.samples {
        let _ = writeln!(s, "{},{}", fmt_num(x), fmt_num(v));
    }
    s
}

fn run_cusp(config: &RunConfig) -> Result<Outcome> {
    let geom = config.cusp_geometry()?;
    let mesh = kissing_mesh(&geom, config.h, config.grading_ratio)?;
    let mut files = Vec::new();
    let mut summary = String::new();
    let mut passed = true;
    let mut verdict = |ok: bool, line: String, summary: &mut String| {
        passed &= ok;
        let _ = writeln!(summary, "{} {line}", if ok { "PASS" } else { "FAIL" });
    };

    let bvp = solve_cusp_problem(&mesh, CuspBc::ConstantOnGamma0(config.c0), CuspSpectral::Lambda(config.lambda))?;
    let ladder = dyadic_ladder(0.25 * geom.r0, geom.delta_trunc);
    let dev = bvp.deviation.as_ref().expect("constant-trace solve returns u - c0");
    let prof = sample_profile(&geom, &bvp.annulus.mesh, dev, &ladder, 0.5)?;
    let path = config.out.join("cusp_profile.csv");
    fs::write(&path, profile_csv(&prof))?;
    files.push(path);
    match fit_decay(&prof, DecayModel::Power) {
        Ok(f) => verdict(
            (3.5..=4.5).contains(&f.exponent) && f.r_squared >= 0.98,
            format!("power decay of u - c0: exponent {:.4}, r2 {:.5}{}", f.exponent, f.r_squared, if bvp.resonance { " (near resonance)" } else { "" }),
            &mut summary,
        ),
        Err(e) => verdict(false, format!("power decay of u - c0: {e}"), &mut summary),
    }

    let eig = solve_cusp_problem(&mesh, CuspBc::ZeroOnGamma0, CuspSpectral::Spectrum(1))?;
    let prof = sample_profile(&geom, &eig.annulus.mesh, &eig.fields[0], &dirichlet_ladder(&geom), 0.5)?;
    let path = config.out.join("cusp_dirichlet_profile.csv");
    fs::write(&path, profile_csv(&prof))?;
    files.push(path);
    match fit_decay(&prof, DecayModel::Exponential) {
        Ok(f) => verdict(
            f.exponent < 0.0 && f.r_squared >= 0.99,
            format!("exponential decay of the first mixed eigenfunction (lambda {:.6}): rate {:.4}, r2 {:.5}", eig.lambdas[0], f.exponent, f.r_squared),
            &mut summary,
        ),
        Err(e) => verdict(false, format!("exponential decay: {e}"), &mut summary),
    }

    let div = dirichlet_exterior_divergence_check(&geom, config.c0, &divergence_deltas(), ThicknessModel::Exact)?;
    let mut s = String::from("delta,integral\n");
    for &(d, i) in &div.points {
        let _ = writeln!(s, "{},{}", fmt_num(d), fmt_num(i));
    }
    let path = config.out.join("cusp_divergence.csv");
    fs::write(&path, s)?;
    files.push(path);
    match div.exponent {
        Some(e) => verdict((e - 3.0).abs() <= 0.05, format!("divergence integral growth exponent {e:.4}"), &mut summary),
        None => verdict(config.c0 == 0.0, "divergence integral vanishes (c0 = 0)".into(), &mut summary),
    }

    let path = config.out.join("cusp_summary.txt");
    fs::write(&path, summary)?;
    files.push(path);
    Ok(Outcome { passed, files })
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let (kind, flags) = match &cli.command {
        Command::Limit(f) => (SubcommandKind::Limit, f),
        Command::Sweep(f) => (SubcommandKind::Sweep, f),
        Command::Cusp(f) => (SubcommandKind::Cusp, f),
        Command::Report(f) => (SubcommandKind::Report, f),
    };
    let outcome = parse_config(kind, flags).and_then(|c| run(&c));
    match outcome {
        Ok(o) => {
            for f in &o.files {
                println!("{}", f.display());
            }
            if o.passed {
                EXIT_PASS
            } else {
                eprintln!("one or more checks failed");
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep_flags() -> Flags {
        Flags {
            m: Some(0.25),
            eps: Some(vec![0.1, 0.05, 0.025, 0.0125]),
            geometry: Some(GeometryKind::Concentric),
            r0: Some(0.5),
            r1: Some(1.0),
            ..Flags::default()
        }
    }

    #[test]
    fn minimal_sweep_flags_validate() {
        let c = parse_config(SubcommandKind::Sweep, &sweep_flags()).unwrap();
        assert_eq!(c.eps_list.len(), 4);
        assert_eq!(c.nev, DEFAULT_NEV);
    }

    #[test]
    fn increasing_eps_names_the_field() {
        let f = Flags { eps: Some(vec![0.0125, 0.025, 0.05, 0.1]), ..sweep_flags() };
        let e = parse_config(SubcommandKind::Sweep, &f).unwrap_err().to_string();
        assert!(e.contains("eps_list"), "{e}");
    }

    #[test]
    fn missing_geometry_is_reported() {
        let f = Flags { geometry: None, ..sweep_flags() };
        let e = parse_config(SubcommandKind::Sweep, &f).unwrap_err();
        assert!(matches!(e, Error::MissingField("geometry")));
    }

    #[test]
    fn negative_m_parses_from_the_command_line() {
        let cli = Cli::try_parse_from(["stiffspec", "limit", "--m", "-1", "--eps", "0.1,0.05"]).unwrap();
        match cli.command {
            Command::Limit(f) => {
                assert_eq!(f.m, Some(-1.0));
                assert_eq!(f.eps, Some(vec![0.1, 0.05]));
            }
            _ => unreachable!(),
        }
    }
}
