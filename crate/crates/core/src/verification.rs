//! ε-sweeps of the full stiff problem, matching to limit predictions, and rate fits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{classify_regime, cluster_runs, exponents, predict_all, LimitMeshes, LimitSource, Prediction, RegimeKind};
use crate::eigensolver::{solve_gevp, EigenPair, SolverOptions};
use crate::error::{Error, Result};
use crate::fem::{assemble_mass_full, assemble_stiffness_full, dot, CoefficientField, SparseSymmetricMatrix};
use crate::geometry::{build_domain, DomainSpec};
use crate::mesh::{generate_mesh, GradingSpec};

/// A fit passes when its slope is at least γ minus this slack.
pub const SLOPE_SLACK: f64 = 0.15;
pub const MIN_R_SQUARED: f64 = 0.98;
/// Residuals below this multiple of the numerical error estimate are not fitted.
pub const FLOOR_FACTOR: f64 = 10.0;
/// A matched eigenvector must have at least this share of its M-norm in the limit cluster span.
pub const MIN_OVERLAP: f64 = 0.25;
/// Extra discrete eigenpairs computed beyond the predicted ones.
const EXTRA_PAIRS: usize = 3;

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub m: f64,
    pub eps_list: Vec<f64>,
    pub mesh_h: f64,
    /// Second, finer mesh size for Richardson extrapolation.
    pub mesh_h2: Option<f64>,
    pub nev: usize,
    pub geometry: DomainSpec,
    pub grading: Option<GradingSpec>,
    pub rtol_cluster: f64,
    pub solver: SolverOptions,
}

impl SweepConfig {
    pub fn new(m: f64, eps_list: Vec<f64>, mesh_h: f64, nev: usize, geometry: DomainSpec) -> Result<Self> {
        let c = SweepConfig {
            m,
            eps_list,
            mesh_h,
            mesh_h2: None,
            nev,
            geometry,
            grading: None,
            rtol_cluster: crate::asymptotics::RTOL_CLUSTER,
            solver: SolverOptions::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_h2(mut self, h2: f64) -> Result<Self> {
        self.mesh_h2 = Some(h2);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidConfig(s));
        if !self.m.is_finite() {
            return bad(format!("m must be finite, got {}", self.m));
        }
        if self.eps_list.len() < 4 {
            return bad(format!("eps_list needs at least 4 values, got {}", self.eps_list.len()));
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return bad("eps_list values must lie in (0, 1)".into());
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps_list must be strictly decreasing".into());
        }
        if !(self.mesh_h > 0.0) {
            return bad(format!("h must be positive, got {}", self.mesh_h));
        }
        if let Some(h2) = self.mesh_h2 {
            if !(h2 > 0.0 && h2 < self.mesh_h) {
                return bad(format!("h2 must lie in (0, h), got {h2}"));
            }
        }
        if self.nev == 0 {
            return bad("nev must be at least 1".into());
        }
        if !(self.rtol_cluster > 0.0) {
            return bad("rtol_cluster must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Pass,
    Fail,
    /// Every residual sits below the numerical floor; counted as a pass.
    BelowFloor,
    /// Fewer than three usable points although some were above the floor.
    Insufficient,
}

impl FitStatus {
    pub fn passed(self) -> bool {
        matches!(self, FitStatus::Pass | FitStatus::BelowFloor)
    }

    pub fn label(self) -> &'static str {
        match self {
            FitStatus::Pass => "PASS",
            FitStatus::Fail => "FAIL",
            FitStatus::BelowFloor => "PASS (below floor)",
            FitStatus::Insufficient => "FAIL (insufficient points)",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    /// Discrete eigenvalue, Richardson-extrapolated when two meshes are used.
    pub lambda_eps: f64,
    pub lambda_hat: f64,
    /// λᵋ − λ̂ᵋ.
    pub signed_residual: f64,
    pub residual: f64,
    /// Numerical error level; points with residual ≤ floor are not fitted.
    pub floor: f64,
    pub used: bool,
    /// Overlap of the matched eigenvector with the limit cluster (coarse mesh).
    pub overlap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexReport {
    pub n: usize,
    pub lambda0: f64,
    pub lambda_prime: f64,
    pub multiplicity: usize,
    pub cluster: usize,
    pub source: LimitSource,
    pub fit_only: bool,
    pub points: Vec<SweepPoint>,
    pub fit: Option<RateFit>,
    pub status: FitStatus,
}

impl IndexReport {
    /// 2·stderr band around the fitted slope.
    pub fn slope_band(&self) -> Option<(f64, f64)> {
        self.fit.map(|f| (f.slope - 2.0 * f.stderr, f.slope + 2.0 * f.stderr))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub m: f64,
    pub regime: RegimeKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mesh_h: f64,
    pub mesh_h2: Option<f64>,
    pub eps_list: Vec<f64>,
    pub indices: Vec<IndexReport>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.indices.iter().all(|r| r.status.passed())
    }

    pub fn index(&self, n: usize) -> Option<&IndexReport> {
        self.indices.iter().find(|r| r.n == n)
    }
}

/// Maximal runs of sorted values with consecutive relative gaps ≤ rtol (indices).
pub fn cluster_eigenvalues(values: &[f64], rtol: f64) -> Vec<Vec<usize>> {
    cluster_runs(values, rtol)
}

/// Least squares line through (ln ε, ln r); non-positive or non-finite r are dropped.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(e, r)| e > 0.0 && r > 0.0 && e.is_finite() && r.is_finite())
        .map(|&(e, r)| (e.ln(), r.ln()))
        .collect();
    line_fit(&usable)
}

/// Ordinary least squares y = a + b x with r² and the slope standard error.
pub(crate) fn line_fit(xy: &[(f64, f64)]) -> Result<RateFit> {
    let n = xy.len();
    if n < 3 {
        return Err(Error::DegenerateFit { needed: 3, got: n });
    }
    let nf = n as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit { needed: 3, got: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xy.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let stderr = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(RateFit { slope, intercept, r_squared, stderr, points: n })
}

/// Discrete eigenvalues of one ε matched to the predictions of one mesh.
struct Matched {
    /// Per prediction (same order): eigenvalue and overlap.
    lambda: Vec<f64>,
    overlap: Vec<f64>,
    tol: f64,
}

struct MeshLevel {
    h: f64,
    predictions: Vec<Prediction>,
    stiff: [SparseSymmetricMatrix; 2],
    mass: [SparseSymmetricMatrix; 2],
}

impl MeshLevel {
    fn build(config: &SweepConfig, h: f64) -> Result<Self> {
        let domain = build_domain(config.geometry)?;
        let mesh = generate_mesh(&domain, h, config.grading.as_ref())?;
        let meshes = LimitMeshes::new(mesh)?;
        let predictions = predict_all(config.m, &meshes, config.nev, config.rtol_cluster, &config.solver)?;
        // K(ε) = ε⁻¹ K₀ + K₁ and M(ε) = ε^{−2m} M₀ + M₁ from the per-region parts.
        let part = |core: bool| CoefficientField {
            a: if core { [1.0, 0.0] } else { [0.0, 1.0] },
            b: if core { [1.0, 0.0] } else { [0.0, 1.0] },
        };
        let full = &meshes.full;
        let stiff = [assemble_stiffness_full(full, &part(true)), assemble_stiffness_full(full, &part(false))];
        let mass = [assemble_mass_full(full, &part(true)), assemble_mass_full(full, &part(false))];
        Ok(MeshLevel { h, predictions, stiff, mass })
    }

    fn operators(&self, eps: f64, m: f64) -> Result<(SparseSymmetricMatrix, SparseSymmetricMatrix)> {
        let c = CoefficientField::stiff(eps, m)?;
        let k = SparseSymmetricMatrix::lincomb(c.a[0], &self.stiff[0], c.a[1], &self.stiff[1])?;
        let mm = SparseSymmetricMatrix::lincomb(c.b[0], &self.mass[0], c.b[1], &self.mass[1])?;
        Ok((k, mm))
    }

    fn solve_and_match(&self, config: &SweepConfig, eps: f64) -> Result<Matched> {
        let (k, m) = self.operators(eps, config.m)?;
        let opts = SolverOptions { nev: self.predictions.len() + EXTRA_PAIRS, ..config.solver.clone() };
        let pairs = solve_gevp(&k, &m, &opts)?;
        let (lambda, overlap) = match_predictions(&self.predictions, &pairs, &m, eps)?;
        let scale = lambda.iter().fold(1.0f64, |a, &l| a.max(l.abs()));
        Ok(Matched { lambda, overlap, tol: opts.tol * scale })
    }
}

/// Greedy one-to-one assignment of eigenpairs to limit clusters by overlap.
///
/// The overlap of x with a cluster spanned by v₁..v_τ is sᵀG⁻¹s/(xᵀMx) with
/// s = Vᵀ M x and G = Vᵀ M V, all in the M_ε inner product. Inside a cluster the
/// assigned eigenvalues are paired with the predictions in ascending order.
fn match_predictions(preds: &[Prediction], pairs: &[EigenPair], m: &SparseSymmetricMatrix, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_clusters = preds.iter().map(|p| p.cluster + 1).max().unwrap_or(0);
    let members: Vec<Vec<usize>> = (0..n_clusters).map(|c| (0..preds.len()).filter(|&i| preds[i].cluster == c).collect()).collect();
    let mv: Vec<Vec<f64>> = preds.iter().map(|p| m.matvec(&p.full_vector)).collect();
    let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
    for (c, mem) in members.iter().enumerate() {
        let tau = mem.len();
        let g = DMatrix::from_fn(tau, tau, |i, j| dot(&preds[mem[i]].full_vector, &mv[mem[j]]));
        let ginv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::MatchingAmbiguity(format!("limit cluster {c} has a singular Gram matrix")))?;
        let lhat = preds[mem[0]].lambda_hat(eps);
        for (j, p) in pairs.iter().enumerate() {
            let s = DVector::from_iterator(tau, mem.iter().map(|&i| dot(&mv[i], &p.vector)));
            let xx = m.bilinear(&p.vector, &p.vector);
            let score = (s.transpose() * &ginv * &s)[(0, 0)] / xx;
            candidates.push((score, (p.lambda - lhat).abs(), c, j));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
    let mut taken = vec![false; pairs.len()];
    let mut assigned: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_clusters];
    for &(score, _, c, j) in &candidates {
        if taken[j] || assigned[c].len() == members[c].len() {
            continue;
        }
        taken[j] = true;
        assigned[c].push((j, score));
    }
    let mut lambda = vec![0.0; preds.len()];
    let mut overlap = vec![0.0; preds.len()];
    for (c, mem) in members.iter().enumerate() {
        let got = &mut assigned[c];
        if let Some(&(j, s)) = got.iter().find(|&&(_, s)| s < MIN_OVERLAP) {
            return Err(Error::MatchingAmbiguity(format!(
                "eigenpair {} (λ = {:.6}) overlaps limit cluster {c} only by {s:.3} at ε = {eps}",
                j + 1,
                pairs[j].lambda
            )));
        }
        got.sort_by(|a, b| pairs[a.0].lambda.total_cmp(&pairs[b.0].lambda));
        let mut order = mem.clone();
        order.sort_by(|&a, &b| preds[a].lambda_hat(eps).total_cmp(&preds[b].lambda_hat(eps)).then(a.cmp(&b)));
        for (&i, &(j, s)) in order.iter().zip(got.iter()) {
            lambda[i] = pairs[j].lambda;
            overlap[i] = s;
        }
    }
    Ok((lambda, overlap))
}

/// Runs the ε-sweep and fits residual rates for the first `nev` limit indices.
pub fn run_sweep(config: &SweepConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let regime = classify_regime(config.m);
    let ex = exponents(regime);
    let mut hs = vec![config.mesh_h];
    hs.extend(config.mesh_h2);
    let levels: Vec<MeshLevel> = hs.iter().map(|&h| MeshLevel::build(config, h)).collect::<Result<_>>()?;
    let matched: Vec<Vec<Matched>> = levels
        .iter()
        .map(|lvl| config.eps_list.par_iter().map(|&e| lvl.solve_and_match(config, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;

    let coarse = &levels[0];
    let n_report = config.nev.min(coarse.predictions.len());
    for lvl in &levels[1..] {
        if lvl.predictions.len() < n_report {
            return Err(Error::MatchingAmbiguity(format!("mesh h = {} yields fewer limit entries", lvl.h)));
        }
    }
    let q = config.mesh_h2.map(|h2| (config.mesh_h / h2).powi(2));

    let mut indices = Vec::with_capacity(n_report);
    for i in 0..n_report {
        let p = &coarse.predictions[i];
        let mut points = Vec::with_capacity(config.eps_list.len());
        for (k, &eps) in config.eps_list.iter().enumerate() {
            let m1 = &matched[0][k];
            let (l1, hat1) = (m1.lambda[i], p.lambda_hat(eps));
            let (lambda_eps, lambda_hat, floor) = match q {
                None => (l1, hat1, FLOOR_FACTOR * m1.tol),
                Some(q) => {
                    let m2 = &matched[1][k];
                    let p2 = &levels[1].predictions[i];
                    let (l2, hat2) = (m2.lambda[i], p2.lambda_hat(eps));
                    let (r1, r2) = (l1 - hat1, l2 - hat2);
                    let ext = |a: f64, b: f64| (q * b - a) / (q - 1.0);
                    let disc = (r2 - r1).abs() / (q - 1.0);
                    (ext(l1, l2), ext(hat1, hat2), FLOOR_FACTOR * (m1.tol.max(m2.tol) + disc))
                }
            };
            let signed = lambda_eps - lambda_hat;
            let residual = signed.abs();
            points.push(SweepPoint {
                eps,
                lambda_eps,
                lambda_hat,
                signed_residual: signed,
                residual,
                floor,
                used: residual > floor,
                overlap: m1.overlap[i],
            });
        }
        let usable: Vec<(f64, f64)> = points.iter().filter(|p| p.used).map(|p| (p.eps, p.residual)).collect();
        let fit = fit_rate(&usable).ok();
        let status = match fit {
            Some(f) if f.slope >= ex.gamma - SLOPE_SLACK && f.r_squared >= MIN_R_SQUARED => FitStatus::Pass,
            Some(_) => FitStatus::Fail,
            None if usable.is_empty() => FitStatus::BelowFloor,
            None => {
                // the curve dives under the floor after fewer than three points
                let last_used = points.iter().rposition(|p| p.used).unwrap_or(0);
                if points[last_used + 1..].iter().all(|p| !p.used) && last_used + 1 < points.len() {
                    FitStatus::BelowFloor
                } else {
                    FitStatus::Insufficient
                }
            }
        };
        indices.push(IndexReport {
            n: p.n,
            lambda0: p.lambda0,
            lambda_prime: p.lambda_prime,
            multiplicity: p.multiplicity,
            cluster: p.cluster,
            source: p.source,
            fit_only: p.fit_only,
            points,
            fit,
            status,
        });
    }
    Ok(ConvergenceReport {
        m: config.m,
        regime: regime.kind,
        alpha: ex.alpha,
        beta: ex.beta,
        gamma: ex.gamma,
        mesh_h: config.mesh_h,
        mesh_h2: config.mesh_h2,
        eps_list: config.eps_list.clone(),
        indices,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    PlotData,
    Summary,
}

pub const CSV_HEADER: &str = "m,n,eps,lambda_eps,lambda_hat,residual,slope,gamma_target";

/// Fixed-width scientific formatting for reproducible files.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.15e}")
}

pub fn csv_string(report: &ConvergenceReport) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &report.indices {
        let slope = r.fit.map(|f| fmt_num(f.slope)).unwrap_or_default();
        for p in &r.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                fmt_num(report.m),
                r.n,
                fmt_num(p.eps),
                fmt_num(p.lambda_eps),
                fmt_num(p.lambda_hat),
                fmt_num(p.residual),
                slope,
                fmt_num(report.gamma)
            );
        }
    }
    s
}

pub fn plot_string(r: &IndexReport) -> String {
    let mut s = format!("# n = {}; columns: log10(eps) log10(residual); used flag\n", r.n);
    for p in r.points.iter().filter(|p| p.residual > 0.0) {
        let _ = writeln!(s, "{} {} {}", fmt_num(p.eps.log10()), fmt_num(p.residual.log10()), u8::from(p.used));
    }
    s
}

pub fn summary_string(report: &ConvergenceReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "m = {}  regime {:?}  alpha = {}  beta = {}  gamma = {}  h = {}{}",
        report.m,
        report.regime,
        report.alpha,
        report.beta,
        report.gamma,
        report.mesh_h,
        report.mesh_h2.map(|h| format!(", h2 = {h}")).unwrap_or_default()
    );
    let _ = writeln!(s, "{:>3} {:>12} {:>12} {:>4} {:>8} {:>17} {:>7} {:>6}  status", "n", "lambda0", "lambda'", "mult", "slope", "2se band", "r2", "used");
    for r in &report.indices {
        let (slope, band, r2) = match (r.fit, r.slope_band()) {
            (Some(f), Some((lo, hi))) => (format!("{:.3}", f.slope), format!("[{lo:.3}, {hi:.3}]"), format!("{:.4}", f.r_squared)),
            _ => ("-".into(), "-".into(), "-".into()),
        };
        let used = r.points.iter().filter(|p| p.used).count();
        let note = if r.fit_only { " (rate only)" } else { "" };
        let _ = writeln!(
            s,
            "{:>3} {:>12.6} {:>12.6} {:>4} {:>8} {:>17} {:>7} {:>3}/{:<2}  {}{}",
            r.n,
            r.lambda0,
            r.lambda_prime,
            r.multiplicity,
            slope,
            band,
            r2,
            used,
            r.points.len(),
            r.status.label(),
            note
        );
    }
    let _ = writeln!(s, "overall: {}", if report.all_pass() { "PASS" } else { "FAIL" });
    s
}

/// Writes the report into `dir`; returns the files written.
pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    match format {
        ReportFormat::Csv => {
            let p = dir.join("sweep.csv");
            fs::write(&p, csv_string(report))?;
            out.push(p);
        }
        ReportFormat::PlotData => {
            for r in &report.indices {
                let p = dir.join(format!("residual_n{}.dat", r.n));
                fs::write(&p, plot_string(r))?;
                out.push(p);
            }
        }
        ReportFormat::Summary => {
            let p = dir.join("summary.txt");
            fs::write(&p, summary_string(report))?;
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_exact_power() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&e: &f64| (e, e * e)).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_with_constant() {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125].iter().map(|&e: &f64| (e, 3.0 * e.powf(0.75))).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope - 0.75).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_drops_zero_and_needs_three() {
        let pts = [(0.1, 0.01), (0.05, 0.0), (0.025, 0.000625), (0.0125, 0.00015625)];
        let f = fit_rate(&pts).unwrap();
        assert_eq!(f.points, 3);
        assert!(matches!(fit_rate(&pts[..3]), Err(Error::DegenerateFit { needed: 3, got: 2 })));
    }

    #[test]
    fn clusters() {
        assert_eq!(cluster_eigenvalues(&[0.0, 3.39, 3.39], 1e-6), vec![vec![0], vec![1, 2]]);
        assert_eq!(cluster_eigenvalues(&[1.0, 2.0, 3.0], 1e-6).len(), 3);
        assert!(cluster_eigenvalues(&[], 1e-6).is_empty());
    }

    #[test]
    fn config_rejects_short_or_increasing_ladders() {
        let g = DomainSpec::concentric(0.5, 1.0);
        assert!(SweepConfig::new(0.25, vec![0.1, 0.05, 0.025], 0.1, 3, g).is_err());
        assert!(SweepConfig::new(0.25, vec![0.1, 0.05, 0.06, 0.01], 0.1, 3, g).is_err());
        assert!(SweepConfig::new(0.25, vec![0.1, 0.05, 0.025, 0.0125], 0.1, 3, g).is_ok());
    }
}
