//! Limit spectra, first-order corrections and exponents for the five regimes of m.
//!
//! All limit quantities are computed on the core and annulus sub-meshes of one
//! conforming mesh, so that predictions and the full stiff problem share the same
//! discrete spaces.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::eigensolver::{solve_gevp, EigenPair, LdlFactor, SolverOptions};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_mass_full, assemble_stiffness, assemble_stiffness_full, boundary_load, dot,
    region_norms, CoefficientField, DofMap, DofMode, SparseSymmetricMatrix,
};
use crate::geometry::{BoundaryTag, RegionTag};
use crate::mesh::{Mesh, RegionMesh};

pub const RTOL_CLUSTER: f64 = 1e-6;
/// Relative tolerance of the discrete compatibility check in [`solve_correction_core`].
pub const COMPATIBILITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeKind {
    MNeg,
    MZero,
    MSmall,
    MHalf,
    MLarge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Regime {
    pub kind: RegimeKind,
    pub m: f64,
}

pub fn classify_regime(m: f64) -> Regime {
    let kind = if m < 0.0 {
        RegimeKind::MNeg
    } else if m == 0.0 {
        RegimeKind::MZero
    } else if m < 0.5 {
        RegimeKind::MSmall
    } else if m == 0.5 {
        RegimeKind::MHalf
    } else {
        RegimeKind::MLarge
    };
    Regime { kind, m }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Exponents {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

pub fn exponents(regime: Regime) -> Exponents {
    let m = regime.m;
    let (alpha, beta, gamma) = match regime.kind {
        RegimeKind::MNeg => (0.0, 1.0, (1.0 - m).min(2.0)),
        RegimeKind::MZero => (0.0, 1.0, 1.5),
        RegimeKind::MSmall => (0.0, 2.0 * m, (3.0 * m).min(1.0)),
        RegimeKind::MHalf => (0.0, 0.5, 1.0),
        RegimeKind::MLarge => {
            let gamma = if m >= 1.0 { 2.0 * m + 1.0 } else { (4.0 * m - 1.0).min(1.0 + m) };
            (2.0 * m - 1.0, 2.0 * m, gamma)
        }
    };
    Exponents { alpha, beta, gamma }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LimitSource {
    MixedAnnulus,
    ConstantTraceAnnulus,
    ModifiedConstantTrace,
    NeumannCore,
}

/// Core and annulus sub-meshes of one conforming mesh, with cached solvers.
pub struct LimitMeshes {
    pub full: Mesh,
    pub core: RegionMesh,
    pub annulus: RegionMesh,
    pub core_area: f64,
    full_to_core: Vec<Option<usize>>,
    full_to_annulus: Vec<Option<usize>>,
    extender: OnceLock<std::result::Result<HarmonicExtender, String>>,
    core_solver: OnceLock<std::result::Result<CoreNeumannSolver, String>>,
}

impl LimitMeshes {
    pub fn new(full: Mesh) -> Result<Self> {
        let core = full.submesh(RegionTag::Core);
        let annulus = full.submesh(RegionTag::Annulus);
        if core.mesh.triangles.is_empty() || annulus.mesh.triangles.is_empty() {
            return Err(Error::MeshFailure("mesh must contain both core and annulus triangles".into()));
        }
        let invert = |r: &RegionMesh| {
            let mut inv = vec![None; full.vertices.len()];
            for (i, &p) in r.parent.iter().enumerate() {
                inv[p] = Some(i);
            }
            inv
        };
        let full_to_core = invert(&core);
        let full_to_annulus = invert(&annulus);
        let core_area = core.mesh.area(None);
        Ok(LimitMeshes {
            full,
            core,
            annulus,
            core_area,
            full_to_core,
            full_to_annulus,
            extender: OnceLock::new(),
            core_solver: OnceLock::new(),
        })
    }

    /// Annulus-sized vector carrying core values on the shared Γ₀ vertices.
    pub fn core_trace_on_annulus(&self, core_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.annulus.parent.len()];
        for (i, &p) in self.annulus.parent.iter().enumerate() {
            if let Some(c) = self.full_to_core[p] {
                out[i] = core_values[c];
            }
        }
        out
    }

    /// Core-sized vector carrying annulus values on the shared Γ₀ vertices.
    pub fn annulus_trace_on_core(&self, annulus_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.core.parent.len()];
        for (i, &p) in self.core.parent.iter().enumerate() {
            if let Some(a) = self.full_to_annulus[p] {
                out[i] = annulus_values[a];
            }
        }
        out
    }

    /// Full-mesh vector from region values (they must agree on Γ₀).
    pub fn join(&self, core_values: &[f64], annulus_values: &[f64]) -> Vec<f64> {
        let mut out = self.annulus.scatter(annulus_values, self.full.vertices.len());
        for (i, &p) in self.core.parent.iter().enumerate() {
            out[p] = core_values[i];
        }
        out
    }

    fn extender(&self) -> Result<&HarmonicExtender> {
        self.extender
            .get_or_init(|| HarmonicExtender::new(&self.annulus.mesh).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::MeshFailure(e.clone()))
    }

    fn core_solver(&self) -> Result<&CoreNeumannSolver> {
        self.core_solver
            .get_or_init(|| CoreNeumannSolver::new(&self.core.mesh).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::MeshFailure(e.clone()))
    }
}

#[derive(Clone, Debug)]
pub struct LimitEntry {
    pub lambda0: f64,
    pub source: LimitSource,
    /// System vector on the region dof map of `source`.
    pub vector: Vec<f64>,
    /// Region vertex values (annulus or core sub-mesh).
    pub values: Vec<f64>,
    pub cluster: usize,
    pub multiplicity: usize,
}

#[derive(Clone, Debug)]
pub struct LimitEigenSet {
    pub regime: Regime,
    pub entries: Vec<LimitEntry>,
    /// Entry indices of each cluster, in ascending λ⁰.
    pub clusters: Vec<Vec<usize>>,
}

fn region_dofmap(meshes: &LimitMeshes, source: LimitSource) -> Result<DofMap> {
    match source {
        LimitSource::MixedAnnulus => DofMap::new(&meshes.annulus.mesh, DofMode::DirichletOnGamma0),
        LimitSource::ConstantTraceAnnulus | LimitSource::ModifiedConstantTrace => {
            DofMap::new(&meshes.annulus.mesh, DofMode::ConstantTraceOnGamma0)
        }
        LimitSource::NeumannCore => Ok(DofMap::free(&meshes.core.mesh)),
    }
}

fn region_mesh(meshes: &LimitMeshes, source: LimitSource) -> &Mesh {
    match source {
        LimitSource::NeumannCore => &meshes.core.mesh,
        _ => &meshes.annulus.mesh,
    }
}

fn solve_family(meshes: &LimitMeshes, source: LimitSource, nev: usize, opts: &SolverOptions) -> Result<Vec<(EigenPair, Vec<f64>)>> {
    let mesh = region_mesh(meshes, source);
    let dm = region_dofmap(meshes, source)?;
    let unit = CoefficientField::unit();
    let k = assemble_stiffness(mesh, &dm, &unit)?;
    let mut m = assemble_mass(mesh, &dm, &unit)?;
    if source == LimitSource::ModifiedConstantTrace {
        let e = dm.trace_dof().expect("constant-trace map");
        let bump = SparseSymmetricMatrix::from_triplets(dm.n_dofs(), vec![(e, e, meshes.core_area)]);
        m = SparseSymmetricMatrix::lincomb(1.0, &m, 1.0, &bump)?;
    }
    let nev = nev.min(dm.n_dofs());
    let pairs = solve_gevp(&k, &m, &SolverOptions { nev, ..opts.clone() })?;
    Ok(pairs.into_iter().map(|p| {
        let values = dm.expand(&p.vector);
        (p, values)
    }).collect())
}

/// Maximal runs of sorted values whose consecutive relative gaps are ≤ `rtol`
/// (values below 1e-12 in magnitude count as equal to zero).
pub fn cluster_runs(values: &[f64], rtol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let joins = i > 0 && {
            let u = values[i - 1];
            (v - u).abs() <= rtol * u.abs().max(v.abs()).max(1e-12)
        };
        if joins {
            out.last_mut().unwrap().push(i);
        } else {
            out.push(vec![i]);
        }
    }
    out
}

/// Limit spectrum of the regime, at least `nev` entries in complete clusters.
pub fn solve_limit_spectrum(regime: Regime, meshes: &LimitMeshes, nev: usize, rtol_cluster: f64, opts: &SolverOptions) -> Result<LimitEigenSet> {
    let extra = nev + 4;
    let mut raw: Vec<(f64, LimitSource, Vec<f64>, Vec<f64>)> = Vec::new();
    // entries at or above a truncated family's largest value may be incomplete
    let mut cutoff = f64::INFINITY;
    let mut take = |src: LimitSource, raw: &mut Vec<_>| -> Result<()> {
        let pairs = solve_family(meshes, src, extra, opts)?;
        if pairs.len() == extra {
            cutoff = cutoff.min(pairs[extra - 1].0.lambda * (1.0 - 2.0 * rtol_cluster));
        }
        for (p, values) in pairs {
            raw.push((p.lambda, src, p.vector, values));
        }
        Ok(())
    };
    match regime.kind {
        RegimeKind::MNeg => take(LimitSource::ConstantTraceAnnulus, &mut raw)?,
        RegimeKind::MZero => take(LimitSource::ModifiedConstantTrace, &mut raw)?,
        RegimeKind::MSmall => {
            // the constant mode concentrates in the core: λ⁰ = 0
            let n = meshes.core.mesh.vertices.len();
            let c = 1.0 / meshes.core_area.sqrt();
            raw.push((0.0, LimitSource::NeumannCore, vec![c; n], vec![c; n]));
            take(LimitSource::MixedAnnulus, &mut raw)?;
        }
        RegimeKind::MHalf => {
            take(LimitSource::NeumannCore, &mut raw)?;
            take(LimitSource::MixedAnnulus, &mut raw)?;
        }
        RegimeKind::MLarge => take(LimitSource::NeumannCore, &mut raw)?,
    }
    // the constant eigenvalue is zero up to round-off
    for r in raw.iter_mut() {
        if r.0.abs() < 1e-11 {
            r.0 = 0.0;
        }
    }
    raw.retain(|r| r.0 < cutoff);
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lambdas: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let clusters = cluster_runs(&lambdas, rtol_cluster);
    let mut entries = Vec::new();
    let mut kept = Vec::new();
    for (c, members) in clusters.iter().enumerate() {
        if entries.len() >= nev {
            break;
        }
        let mut idx = Vec::new();
        for &i in members {
            let (lambda0, source, ref vector, ref values) = raw[i];
            idx.push(entries.len());
            entries.push(LimitEntry {
                lambda0,
                source,
                vector: vector.clone(),
                values: values.clone(),
                cluster: c,
                multiplicity: members.len(),
            });
        }
        kept.push(idx);
    }
    Ok(LimitEigenSet { regime, entries, clusters: kept })
}

/// c₀ of a limit entry: the consistent Γ₀ flux over λ⁰|Ω₀| for mixed and modified
/// constant-trace modes, the common trace value for constant-trace modes.
pub fn compute_c0(entry: &LimitEntry, meshes: &LimitMeshes) -> Result<f64> {
    match entry.source {
        LimitSource::ConstantTraceAnnulus => Ok(trace_value(entry, meshes)),
        LimitSource::NeumannCore => Err(Error::InvalidConfig("c0 is not defined for core modes".into())),
        _ => {
            if entry.lambda0 == 0.0 {
                return Err(Error::ZeroEigenvalue);
            }
            Ok(gamma0_flux(entry, meshes)? / (entry.lambda0 * meshes.core_area))
        }
    }
}

/// Volume route to c₀ for mixed modes: −∫_{Ω₁} u⁰₁ / |Ω₀| (divergence theorem).
pub fn c0_volume(entry: &LimitEntry, meshes: &LimitMeshes) -> f64 {
    let m = assemble_mass_full(&meshes.annulus.mesh, &CoefficientField::unit());
    let integral: f64 = m.matvec(&entry.values).iter().sum();
    -integral / meshes.core_area
}

fn trace_value(entry: &LimitEntry, meshes: &LimitMeshes) -> f64 {
    let g0 = meshes.annulus.mesh.vertices_with_tag(BoundaryTag::Gamma0);
    entry.values[g0[0]]
}

/// Consistent Γ₀ load of the annulus part, per annulus vertex.
fn gamma0_load(entry: &LimitEntry, meshes: &LimitMeshes) -> Result<Vec<f64>> {
    let dm = region_dofmap(meshes, entry.source)?;
    boundary_load(&meshes.annulus.mesh, &dm, &entry.vector, entry.lambda0, BoundaryTag::Gamma0)
}

/// ∫_{Γ₀} ∂_{ν₀} u⁰₁ ds with ν₀ pointing from the annulus into the core.
pub fn gamma0_flux(entry: &LimitEntry, meshes: &LimitMeshes) -> Result<f64> {
    Ok(gamma0_load(entry, meshes)?.iter().sum())
}

/// Neumann problem on the core with the pinned stiffness factored once.
struct CoreNeumannSolver {
    pin: usize,
    mass: SparseSymmetricMatrix,
    factor: LdlFactor,
}

impl CoreNeumannSolver {
    fn new(core: &Mesh) -> Result<Self> {
        let unit = CoefficientField::unit();
        let k = assemble_stiffness_full(core, &unit);
        let mass = assemble_mass_full(core, &unit);
        let n = k.dim();
        let pin = 0;
        let mut trip = Vec::with_capacity(k.nnz_upper());
        for i in 0..n {
            for (j, v) in k.row(i) {
                if i == pin || j == pin {
                    if i == j {
                        trip.push((i, j, 1.0));
                    }
                } else {
                    trip.push((i, j, v));
                }
            }
        }
        let factor = LdlFactor::new(&SparseSymmetricMatrix::from_triplets(n, trip))?;
        Ok(CoreNeumannSolver { pin, mass, factor })
    }

    /// Solves (∇w, ∇φ) = bᵀφ for compatible b; returns the mass-weighted mean-zero solution.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = b.to_vec();
        rhs[self.pin] = 0.0;
        let mut w = self.factor.solve(&rhs);
        let m1 = self.mass.matvec(&vec![1.0; w.len()]);
        let mean = dot(&w, &m1) / m1.iter().sum::<f64>();
        w.iter_mut().for_each(|v| *v -= mean);
        w
    }
}

/// u′₀ on the core: (∇u′₀, ∇φ) = rhs_const·λ⁰(1, φ) − ⟨flux_data, φ⟩, mean zero.
///
/// `flux_data` holds the consistent annulus Γ₀ load per core vertex; the
/// compatibility condition is rhs_const·λ⁰|Ω₀| = Σ flux_data.
pub fn solve_correction_core(mesh0: &Mesh, flux_data: &[f64], lambda0: f64, rhs_const: f64) -> Result<Vec<f64>> {
    let solver = CoreNeumannSolver::new(mesh0)?;
    correction_with(&solver, flux_data, lambda0, rhs_const)
}

fn correction_with(solver: &CoreNeumannSolver, flux_data: &[f64], lambda0: f64, rhs_const: f64) -> Result<Vec<f64>> {
    let n = solver.mass.dim();
    if flux_data.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: flux_data.len() });
    }
    let m1 = solver.mass.matvec(&vec![1.0; n]);
    let mut b: Vec<f64> = m1.iter().zip(flux_data).map(|(m, r)| rhs_const * lambda0 * m - r).collect();
    let total: f64 = b.iter().sum();
    let scale = (rhs_const * lambda0).abs() * m1.iter().sum::<f64>() + flux_data.iter().map(|r| r.abs()).sum::<f64>();
    // round-off data (e.g. the constant mode) gives u′₀ = 0
    if scale <= 1e-10 {
        return Ok(vec![0.0; n]);
    }
    if total.abs() > COMPATIBILITY_TOL * scale {
        return Err(Error::CompatibilityViolation(total.abs() / scale));
    }
    // remove the round-off defect along the constants
    let area: f64 = m1.iter().sum();
    b.iter_mut().zip(&m1).for_each(|(bi, mi)| *bi -= total / area * mi);
    Ok(solver.solve(&b))
}

struct HarmonicExtender {
    dofmap: DofMap,
    stiffness: SparseSymmetricMatrix,
    factor: LdlFactor,
}

impl HarmonicExtender {
    fn new(annulus: &Mesh) -> Result<Self> {
        let dofmap = DofMap::new(annulus, DofMode::DirichletOnGamma0)?;
        let stiffness = assemble_stiffness_full(annulus, &CoefficientField::unit());
        let factor = LdlFactor::new(&dofmap.restrict_matrix(&stiffness)?)?;
        Ok(HarmonicExtender { dofmap, stiffness, factor })
    }

    fn extend(&self, trace: &[f64]) -> Result<Vec<f64>> {
        let mut dm = self.dofmap.clone();
        dm.set_boundary_values(trace)?;
        let x = self.factor.solve(&dm.lift_rhs(&self.stiffness));
        Ok(dm.expand(&x))
    }
}

/// Discrete harmonic function on the annulus with the given Γ₀ values (taken from an
/// annulus-vertex vector) and natural conditions elsewhere.
pub fn harmonic_extension(mesh1: &Mesh, trace_values_on_gamma0: &[f64]) -> Result<Vec<f64>> {
    HarmonicExtender::new(mesh1)?.extend(trace_values_on_gamma0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClusterMatrixKind {
    RankOneM,
    GramG,
    GramAdjusted,
    GramExtension,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterMatrix {
    pub kind: ClusterMatrixKind,
    pub entries: DMatrix<f64>,
}

impl ClusterMatrix {
    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v: Vec<f64> = SymmetricEigen::new(self.entries.clone()).eigenvalues.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Correction data of one limit entry; absent fields are not needed by its regime.
#[derive(Clone, Debug, Default)]
pub struct CorrectionFields {
    pub flux: Option<f64>,
    pub c0: Option<f64>,
    /// Mean-zero u′₀ on core vertices.
    pub u_prime0: Option<Vec<f64>>,
    /// Harmonic extension of a core mode on annulus vertices.
    pub extension: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaPrime {
    /// Ascending within the cluster.
    pub values: Vec<f64>,
    /// Second, independently computed expression (simple mixed modes).
    pub alternative: Option<Vec<f64>>,
    pub matrix: Option<ClusterMatrix>,
    /// No closed formula; the value only anchors a rate fit.
    pub fit_only: bool,
}

/// Gradient Gram matrix (∇v_i, ∇v_j) over a region mesh.
fn gram(vectors: &[&Vec<f64>], mesh: &Mesh) -> DMatrix<f64> {
    let k = assemble_stiffness_full(mesh, &CoefficientField::unit());
    let t = vectors.len();
    let kv: Vec<Vec<f64>> = vectors.iter().map(|v| k.matvec(v)).collect();
    let mut g = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            g[(i, j)] = 0.5 * (dot(vectors[i], &kv[j]) + dot(vectors[j], &kv[i]));
        }
    }
    g
}

/// λ′ of one cluster, ascending.
pub fn lambda_prime(regime: Regime, cluster: &[&LimitEntry], fields: &[&CorrectionFields], meshes: &LimitMeshes) -> Result<LambdaPrime> {
    let tau = cluster.len();
    let area = meshes.core_area;
    let lambda0 = cluster[0].lambda0;
    let zero = || LambdaPrime { values: vec![0.0; tau], alternative: None, matrix: None, fit_only: false };
    let need = |f: &CorrectionFields, name: &'static str| -> Result<()> {
        let ok = match name {
            "flux" => f.flux.is_some(),
            "c0" => f.c0.is_some(),
            "u_prime0" => f.u_prime0.is_some(),
            _ => f.extension.is_some(),
        };
        ok.then_some(()).ok_or(Error::MissingField(name))
    };
    match regime.kind {
        RegimeKind::MSmall => {
            if cluster.iter().all(|e| e.source == LimitSource::NeumannCore) {
                return Ok(zero());
            }
            for f in fields {
                need(f, "flux")?;
                need(f, "c0")?;
            }
            let fl: Vec<f64> = fields.iter().map(|f| f.flux.unwrap()).collect();
            let m = DMatrix::from_fn(tau, tau, |i, j| fl[i] * fl[j] / (lambda0 * area));
            let matrix = ClusterMatrix { kind: ClusterMatrixKind::RankOneM, entries: m };
            if tau == 1 {
                let c0 = fields[0].c0.unwrap();
                Ok(LambdaPrime {
                    values: vec![c0 * c0 * lambda0 * area],
                    alternative: Some(vec![fl[0] * fl[0] / (lambda0 * area)]),
                    matrix: Some(matrix),
                    fit_only: false,
                })
            } else {
                let values = matrix.eigenvalues();
                Ok(LambdaPrime { values, alternative: None, matrix: Some(matrix), fit_only: false })
            }
        }
        RegimeKind::MNeg | RegimeKind::MZero => {
            for f in fields {
                need(f, "u_prime0")?;
            }
            let us: Vec<&Vec<f64>> = fields.iter().map(|f| f.u_prime0.as_ref().unwrap()).collect();
            let mut g = gram(&us, &meshes.core.mesh);
            let mut kind = ClusterMatrixKind::GramG;
            if regime.kind == RegimeKind::MNeg && -2.0 * regime.m <= 1.0 {
                for f in fields {
                    need(f, "c0")?;
                }
                let c: Vec<f64> = fields.iter().map(|f| f.c0.unwrap()).collect();
                g += DMatrix::from_fn(tau, tau, |i, j| lambda0 * area * c[i] * c[j]);
                kind = ClusterMatrixKind::GramAdjusted;
            }
            let matrix = ClusterMatrix { kind, entries: g };
            let mut values: Vec<f64> = matrix.eigenvalues().into_iter().map(|v| -v).collect();
            values.sort_by(f64::total_cmp);
            Ok(LambdaPrime { values, alternative: None, matrix: Some(matrix), fit_only: false })
        }
        RegimeKind::MHalf => {
            let mixed = cluster.iter().any(|e| e.source != cluster[0].source);
            Ok(LambdaPrime { fit_only: mixed, ..zero() })
        }
        RegimeKind::MLarge => {
            for f in fields {
                need(f, "extension")?;
            }
            let ext: Vec<&Vec<f64>> = fields.iter().map(|f| f.extension.as_ref().unwrap()).collect();
            let matrix = ClusterMatrix {
                kind: ClusterMatrixKind::GramExtension,
                entries: gram(&ext, &meshes.annulus.mesh),
            };
            Ok(LambdaPrime { values: matrix.eigenvalues(), alternative: None, matrix: Some(matrix), fit_only: false })
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// 1-based position in the limit spectrum.
    pub n: usize,
    pub lambda0: f64,
    pub lambda_prime: f64,
    pub lambda_prime_alt: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub multiplicity: usize,
    pub cluster: usize,
    pub source: LimitSource,
    pub c0: Option<f64>,
    pub fit_only: bool,
    pub correction_fields: CorrectionFields,
    /// Limit eigenfunction extended to the full mesh (vertex values).
    pub full_vector: Vec<f64>,
}

impl Prediction {
    /// ε^α λ⁰ + ε^β λ′.
    pub fn lambda_hat(&self, eps: f64) -> f64 {
        eps.powf(self.alpha) * self.lambda0 + eps.powf(self.beta) * self.lambda_prime
    }
}

fn fields_for(regime: Regime, entry: &LimitEntry, meshes: &LimitMeshes) -> Result<(CorrectionFields, Vec<f64>)> {
    let mut f = CorrectionFields::default();
    let full;
    match entry.source {
        LimitSource::NeumannCore => {
            let trace = meshes.core_trace_on_annulus(&entry.values);
            let ext = meshes.extender()?.extend(&trace)?;
            full = meshes.join(&entry.values, &ext);
            f.extension = Some(ext);
        }
        LimitSource::MixedAnnulus => {
            full = meshes.join(&vec![0.0; meshes.core.parent.len()], &entry.values);
            if entry.lambda0 > 0.0 {
                f.flux = Some(gamma0_flux(entry, meshes)?);
                f.c0 = Some(c0_volume(entry, meshes));
            }
        }
        LimitSource::ConstantTraceAnnulus | LimitSource::ModifiedConstantTrace => {
            let ubar = trace_value(entry, meshes);
            full = meshes.join(&vec![ubar; meshes.core.parent.len()], &entry.values);
            let load = gamma0_load(entry, meshes)?;
            let flux: f64 = load.iter().sum();
            f.flux = Some(flux);
            // MNeg: zero volume load (compatibility Σ load = 0); MZero: load λ⁰ū
            let rhs_const = if regime.kind == RegimeKind::MZero { ubar } else { 0.0 };
            f.c0 = Some(ubar);
            let data = meshes.annulus_trace_on_core(&load);
            f.u_prime0 = Some(correction_with(meshes.core_solver()?, &data, entry.lambda0, rhs_const)?);
        }
    }
    Ok((f, full))
}

/// Predictions for the first `nev` limit entries (complete clusters).
pub fn predict_all(m: f64, meshes: &LimitMeshes, nev: usize, rtol_cluster: f64, opts: &SolverOptions) -> Result<Vec<Prediction>> {
    let regime = classify_regime(m);
    let ex = exponents(regime);
    let set = solve_limit_spectrum(regime, meshes, nev, rtol_cluster, opts)?;
    let mut out = Vec::with_capacity(set.entries.len());
    for (c, members) in set.clusters.iter().enumerate() {
        let entries: Vec<&LimitEntry> = members.iter().map(|&i| &set.entries[i]).collect();
        let computed: Vec<(CorrectionFields, Vec<f64>)> =
            entries.iter().map(|e| fields_for(regime, e, meshes)).collect::<Result<_>>()?;
        let fields: Vec<&CorrectionFields> = computed.iter().map(|c| &c.0).collect();
        let lp = lambda_prime(regime, &entries, &fields, meshes)?;
        for (k, (&i, (f, full))) in members.iter().zip(computed.iter()).enumerate() {
            let e = &set.entries[i];
            out.push(Prediction {
                n: i + 1,
                lambda0: e.lambda0,
                lambda_prime: lp.values[k],
                lambda_prime_alt: lp.alternative.as_ref().map(|a| a[k]),
                alpha: ex.alpha,
                beta: ex.beta,
                gamma: ex.gamma,
                multiplicity: members.len(),
                cluster: c,
                source: e.source,
                c0: f.c0,
                fit_only: lp.fit_only,
                correction_fields: f.clone(),
                full_vector: full.clone(),
            });
        }
    }
    Ok(out)
}

pub fn predict(m: f64, n: usize, meshes: &LimitMeshes) -> Result<Prediction> {
    if n == 0 {
        return Err(Error::InvalidConfig("limit indices start at 1".into()));
    }
    predict_all(m, meshes, n, RTOL_CLUSTER, &SolverOptions::default())?
        .into_iter()
        .find(|p| p.n == n)
        .ok_or_else(|| Error::InvalidConfig(format!("limit index {n} not available")))
}

/// ‖∇w‖² over the triangles of `region` for full-mesh vertex values.
pub fn gradient_energy(mesh: &Mesh, w: &[f64], region: RegionTag) -> f64 {
    let (_, h1) = region_norms(mesh, w, region);
    h1 * h1
}
