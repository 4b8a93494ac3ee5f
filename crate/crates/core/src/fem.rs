//! P1 finite elements: sparse symmetric storage, constraint maps, assembly and
//! post-processing functionals.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Point, RegionTag};
use crate::mesh::Mesh;

/// Relative eigen-residual accepted by [`boundary_flux_integral`].
pub const FLUX_RESIDUAL_TOL: f64 = 1e-6;

/// Upper triangle (diagonal included) in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetricMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymmetricMatrix {
    /// Sums duplicate entries; entries below the diagonal are mirrored up.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        for t in triplets.iter_mut() {
            if t.0 > t.1 {
                *t = (t.1, t.0, t.2);
            }
        }
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_ptr[i + 1] += 1;
                col_idx.push(j);
                values.push(v);
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseSymmetricMatrix { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_upper(&self) -> usize {
        self.values.len()
    }

    /// Stored entries (i ≤ j) of row i.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                let v = self.values[k];
                acc += v * x[j];
                if j != i {
                    y[j] += v * x[i];
                }
            }
            y[i] += acc;
        }
    }

    /// xᵀ A y.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// a·A + b·B on the union pattern.
    pub fn lincomb(a: f64, am: &Self, b: f64, bm: &Self) -> Result<Self> {
        if am.n != bm.n {
            return Err(Error::DimensionMismatch { expected: am.n, got: bm.n });
        }
        let mut trip = Vec::with_capacity(am.nnz_upper() + bm.nnz_upper());
        for i in 0..am.n {
            trip.extend(am.row(i).map(|(j, v)| (i, j, a * v)));
            trip.extend(bm.row(i).map(|(j, v)| (i, j, b * v)));
        }
        Ok(Self::from_triplets(am.n, trip))
    }

    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[i] += v.abs();
                if j != i {
                    rows[j] += v.abs();
                }
            }
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Coordinate text export of the stored triangle, one `row col value` per line.
    pub fn write_coo(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(fs::File::create(path)?);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(f, "{i} {j} {v:.17e}")?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofMode {
    Free,
    DirichletOnGamma0,
    ConstantTraceOnGamma0,
    DirichletOnGamma1,
}

/// Vertex → system-index map. Constrained vertices carry a stored boundary value;
/// in constant-trace mode all Γ₀ vertices share the last system index.
#[derive(Clone, Debug, PartialEq)]
pub struct DofMap {
    pub mode: DofMode,
    dof_of: Vec<Option<usize>>,
    boundary_values: Vec<f64>,
    n_dofs: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, mode: DofMode) -> Result<Self> {
        let nv = mesh.vertices.len();
        let tagged = |t| mesh.tag_mask(t);
        let (constrained, grouped) = match mode {
            DofMode::Free => (vec![false; nv], vec![false; nv]),
            DofMode::DirichletOnGamma0 => (tagged(BoundaryTag::Gamma0), vec![false; nv]),
            DofMode::DirichletOnGamma1 => (tagged(BoundaryTag::Gamma1), vec![false; nv]),
            DofMode::ConstantTraceOnGamma0 => (vec![false; nv], tagged(BoundaryTag::Gamma0)),
        };
        if mode != DofMode::Free && !constrained.iter().chain(&grouped).any(|&b| b) {
            return Err(Error::InvalidConfig(format!("{mode:?} needs tagged boundary vertices")));
        }
        let mut dof_of = vec![None; nv];
        let mut n = 0;
        for v in 0..nv {
            if !constrained[v] && !grouped[v] {
                dof_of[v] = Some(n);
                n += 1;
            }
        }
        if grouped.iter().any(|&g| g) {
            for v in 0..nv {
                if grouped[v] {
                    dof_of[v] = Some(n);
                }
            }
            n += 1;
        }
        Ok(DofMap { mode, dof_of, boundary_values: vec![0.0; nv], n_dofs: n })
    }

    pub fn free(mesh: &Mesh) -> Self {
        DofMap::new(mesh, DofMode::Free).expect("free dof map")
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_vertices(&self) -> usize {
        self.dof_of.len()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of[vertex]
    }

    /// System index of the shared Γ₀ value in constant-trace mode.
    pub fn trace_dof(&self) -> Option<usize> {
        (self.mode == DofMode::ConstantTraceOnGamma0).then(|| self.n_dofs - 1)
    }

    /// Prescribes the same value on every constrained vertex.
    pub fn with_boundary_value(mut self, value: f64) -> Self {
        for (v, d) in self.dof_of.iter().enumerate() {
            if d.is_none() {
                self.boundary_values[v] = value;
            }
        }
        self
    }

    pub fn set_boundary_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_vertices() {
            return Err(Error::DimensionMismatch { expected: self.n_vertices(), got: values.len() });
        }
        for (v, d) in self.dof_of.iter().enumerate() {
            if d.is_none() {
                self.boundary_values[v] = values[v];
            }
        }
        Ok(())
    }

    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary_values
    }

    /// Vertex values of a system vector; constrained vertices take their boundary value.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.expand_with(x, true)
    }

    /// As [`expand`](Self::expand) with zero on constrained vertices.
    pub fn expand_homogeneous(&self, x: &[f64]) -> Vec<f64> {
        self.expand_with(x, false)
    }

    fn expand_with(&self, x: &[f64], lift: bool) -> Vec<f64> {
        assert_eq!(x.len(), self.n_dofs);
        self.dof_of
            .iter()
            .enumerate()
            .map(|(v, d)| match d {
                Some(i) => x[*i],
                None if lift => self.boundary_values[v],
                None => 0.0,
            })
            .collect()
    }

    /// System vector from vertex values; grouped vertices are averaged.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs];
        let mut count = vec![0usize; self.n_dofs];
        for (v, d) in self.dof_of.iter().enumerate() {
            if let Some(i) = d {
                x[*i] += values[v];
                count[*i] += 1;
            }
        }
        for (xi, c) in x.iter_mut().zip(count) {
            if c > 1 {
                *xi /= c as f64;
            }
        }
        x
    }

    /// Transposed prolongation: sums vertex values into their system index.
    pub fn accumulate(&self, values: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n_dofs];
        for (v, d) in self.dof_of.iter().enumerate() {
            if let Some(i) = d {
                x[*i] += values[v];
            }
        }
        x
    }

    /// Pᵀ A P for a matrix assembled on all vertices.
    pub fn restrict_matrix(&self, full: &SparseSymmetricMatrix) -> Result<SparseSymmetricMatrix> {
        if full.dim() != self.n_vertices() {
            return Err(Error::DimensionMismatch { expected: self.n_vertices(), got: full.dim() });
        }
        let mut trip = Vec::with_capacity(full.nnz_upper());
        for i in 0..full.dim() {
            let Some(a) = self.dof_of[i] else { continue };
            for (j, v) in full.row(i) {
                if let Some(b) = self.dof_of[j] {
                    trip.push((a, b, v));
                    if a == b && i != j {
                        // both (i,j) and (j,i) land on the same grouped diagonal
                        trip.push((a, b, v));
                    }
                }
            }
        }
        Ok(SparseSymmetricMatrix::from_triplets(self.n_dofs, trip))
    }

    /// −Pᵀ A g, the right-hand side contributed by the stored boundary values.
    pub fn lift_rhs(&self, full: &SparseSymmetricMatrix) -> Vec<f64> {
        let g: Vec<f64> =
            (0..self.n_vertices()).map(|v| if self.dof_of[v].is_none() { self.boundary_values[v] } else { 0.0 }).collect();
        let ag = full.matvec(&g);
        self.accumulate(&ag).into_iter().map(|v| -v).collect()
    }
}

/// Piecewise-constant stiffness coefficient `a` and mass weight `b`, indexed by region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientField {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl CoefficientField {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Result<Self> {
        if a.iter().chain(&b).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("coefficients must be positive, got a={a:?} b={b:?}")));
        }
        Ok(CoefficientField { a, b })
    }

    pub fn unit() -> Self {
        CoefficientField { a: [1.0; 2], b: [1.0; 2] }
    }

    /// a = (ε⁻¹, 1), b = (ε^{−2m}, 1).
    pub fn stiff(eps: f64, m: f64) -> Result<Self> {
        Self::new([1.0 / eps, 1.0], [eps.powf(-2.0 * m), 1.0])
    }

    pub fn stiffness(&self, r: RegionTag) -> f64 {
        self.a[r.code() as usize]
    }

    pub fn weight(&self, r: RegionTag) -> f64 {
        self.b[r.code() as usize]
    }
}

/// Gradients of the three hat functions and the triangle area.
pub fn p1_gradients(p: [Point; 3]) -> ([[f64; 2]; 3], f64) {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for i in 0..3 {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        g[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    (g, 0.5 * det)
}

fn tri_points(mesh: &Mesh, v: [usize; 3]) -> [Point; 3] {
    v.map(|i| mesh.vertices[i])
}

/// Stiffness on all vertices.
pub fn assemble_stiffness_full(mesh: &Mesh, coeff: &CoefficientField) -> SparseSymmetricMatrix {
    let mut trip = Vec::with_capacity(6 * mesh.triangles.len());
    for t in &mesh.triangles {
        let (g, area) = p1_gradients(tri_points(mesh, t.v));
        let c = coeff.stiffness(t.region) * area;
        for i in 0..3 {
            for j in i..3 {
                trip.push((t.v[i], t.v[j], c * (g[i][0] * g[j][0] + g[i][1] * g[j][1])));
            }
        }
    }
    SparseSymmetricMatrix::from_triplets(mesh.vertices.len(), trip)
}

/// Consistent mass on all vertices.
pub fn assemble_mass_full(mesh: &Mesh, weight: &CoefficientField) -> SparseSymmetricMatrix {
    let mut trip = Vec::with_capacity(6 * mesh.triangles.len());
    for t in &mesh.triangles {
        let (_, area) = p1_gradients(tri_points(mesh, t.v));
        let c = weight.weight(t.region) * area / 12.0;
        for i in 0..3 {
            for j in i..3 {
                trip.push((t.v[i], t.v[j], if i == j { 2.0 * c } else { c }));
            }
        }
    }
    SparseSymmetricMatrix::from_triplets(mesh.vertices.len(), trip)
}

fn check_map(mesh: &Mesh, dofmap: &DofMap) -> Result<()> {
    if dofmap.n_vertices() != mesh.vertices.len() {
        return Err(Error::DimensionMismatch { expected: mesh.vertices.len(), got: dofmap.n_vertices() });
    }
    Ok(())
}

pub fn assemble_stiffness(mesh: &Mesh, dofmap: &DofMap, coeff: &CoefficientField) -> Result<SparseSymmetricMatrix> {
    check_map(mesh, dofmap)?;
    dofmap.restrict_matrix(&assemble_stiffness_full(mesh, coeff))
}

pub fn assemble_mass(mesh: &Mesh, dofmap: &DofMap, weight: &CoefficientField) -> Result<SparseSymmetricMatrix> {
    check_map(mesh, dofmap)?;
    dofmap.restrict_matrix(&assemble_mass_full(mesh, weight))
}

/// Per-vertex residual (K u − λ M u) on the whole mesh with unit coefficients.
/// On a boundary these entries are the consistent Neumann data ∫ ∂_ν u φ_i ds
/// for the outward normal of the meshed region.
pub fn residual_vertices(mesh: &Mesh, u_vertices: &[f64], lambda: f64) -> Vec<f64> {
    let unit = CoefficientField::unit();
    let ku = assemble_stiffness_full(mesh, &unit).matvec(u_vertices);
    let mu = assemble_mass_full(mesh, &unit).matvec(u_vertices);
    ku.iter().zip(&mu).map(|(k, m)| k - lambda * m).collect()
}

/// Consistent boundary data on the `tag` vertices of a region mesh, zero elsewhere.
///
/// Checks that `(u, λ)` is an eigenpair of the constrained problem first.
pub fn boundary_load(mesh: &Mesh, dofmap: &DofMap, u: &[f64], lambda: f64, tag: BoundaryTag) -> Result<Vec<f64>> {
    check_map(mesh, dofmap)?;
    if u.len() != dofmap.n_dofs() {
        return Err(Error::DimensionMismatch { expected: dofmap.n_dofs(), got: u.len() });
    }
    let uv = dofmap.expand(u);
    let unit = CoefficientField::unit();
    let k = assemble_stiffness_full(mesh, &unit);
    let m = assemble_mass_full(mesh, &unit);
    let ku = k.matvec(&uv);
    let mu = m.matvec(&uv);
    let on_tag = mesh.tag_mask(tag);
    let scale = (k.norm_inf() + lambda.abs() * m.norm_inf()) * norm2(&uv) + f64::MIN_POSITIVE;
    let mut interior = 0.0;
    let mut out = vec![0.0; uv.len()];
    for v in 0..uv.len() {
        let r = ku[v] - lambda * mu[v];
        if on_tag[v] {
            out[v] = r;
        } else if dofmap.dof(v).is_some() && dofmap.trace_dof() != dofmap.dof(v) {
            interior += r * r;
        }
    }
    let rel = interior.sqrt() / scale;
    if rel > FLUX_RESIDUAL_TOL {
        return Err(Error::NotConverged { residual: rel, tol: FLUX_RESIDUAL_TOL });
    }
    Ok(out)
}

/// F = Σ_{i on tag} (K u − λ M u)_i over the region mesh: the flux ∫ ∂_ν u ds with ν
/// the outward normal of the meshed region (for the annulus on Γ₀, pointing into the core).
pub fn boundary_flux_integral(mesh: &Mesh, dofmap: &DofMap, u: &[f64], lambda: f64, tag: BoundaryTag) -> Result<f64> {
    Ok(boundary_load(mesh, dofmap, u, lambda, tag)?.iter().sum())
}

/// (‖u‖_{L²}, |u|_{H¹}) over the triangles of `region`, u given by vertex values.
pub fn region_norms(mesh: &Mesh, u: &[f64], region: RegionTag) -> (f64, f64) {
    let (mut l2, mut h1) = (0.0, 0.0);
    for t in mesh.triangles.iter().filter(|t| t.region == region) {
        let (g, area) = p1_gradients(tri_points(mesh, t.v));
        let w = t.v.map(|i| u[i]);
        let s: f64 = w.iter().sum();
        let sq: f64 = w.iter().map(|x| x * x).sum();
        l2 += area / 12.0 * (sq + s * s);
        let grad = [0, 1].map(|d| (0..3).map(|i| w[i] * g[i][d]).sum::<f64>());
        h1 += area * (grad[0] * grad[0] + grad[1] * grad[1]);
    }
    (l2.sqrt(), h1.sqrt())
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
