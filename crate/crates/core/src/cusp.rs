//! Kissing-disk computations near the cusp: the mixed problem on the truncated
//! annulus, the explicit first corrector, decay fits and the divergence integral.
//!
//! Everything works in the cusp chart: tangency point at the origin, core centre
//! (0, R0), outer centre (0, R1). Near the cusp the annulus is the strip
//! H₁(x₁) < x₂ < H₀(x₁), with Γ₁ below and Γ₀ above.

use serde::Serialize;

use crate::eigensolver::{count_below, solve_gevp, LdlFactor, SolverOptions};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_mass_full, assemble_stiffness, CoefficientField, DofMap, DofMode, SparseSymmetricMatrix,
};
use crate::geometry::{circle_height, thickness_profiles, CuspGeometry, Point, RegionTag};
use crate::mesh::{build_kissing_mesh, GradingSpec, Mesh, RegionMesh};
use crate::verification::line_fit;

/// Relative window around λ in which a mixed eigenvalue makes the solve near-singular.
pub const RESONANCE_RTOL: f64 = 1e-3;
/// Minimum number of ladder points for a decay fit.
pub const MIN_DECAY_POINTS: usize = 5;

pub fn kissing_mesh(geom: &CuspGeometry, h: f64, ratio: f64) -> Result<Mesh> {
    build_kissing_mesh(geom, h, &GradingSpec::new(geom.delta_trunc, ratio)?)
}

/// 𝒰₁(x) = −(λc₀/2)[(x₂ − H₁ᵖ)² − (Hᵖ)²] with the principal parts
/// H₁ᵖ = x₁²/(2R₁) and Hᵖ = (1/R₀ − 1/R₁)x₁²/2.
///
/// This solves −(Hᵖ)⁻² ∂²_η 𝒰₁ = λc₀ with ∂_η𝒰₁ = 0 at η = 0 and 𝒰₁ = 0 at η = 1.
pub fn compute_u1(geom: &CuspGeometry, lambda: f64, c0: f64, x: Point) -> Result<f64> {
    let t = thickness_profiles(geom, x[0])?;
    let h1p = x[0] * x[0] / (2.0 * geom.r1);
    let s = x[1] - h1p;
    Ok(-0.5 * lambda * c0 * (s * s - t.hp * t.hp))
}

/// Boundary data on Γ₀ for [`solve_cusp_problem`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CuspBc {
    ConstantOnGamma0(f64),
    ZeroOnGamma0,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CuspSpectral {
    /// Solve the boundary value problem at this λ.
    Lambda(f64),
    /// Compute this many eigenpairs.
    Spectrum(usize),
}

#[derive(Clone, Debug)]
pub struct CuspFields {
    /// Annulus sub-mesh; field values are indexed by its vertices.
    pub annulus: RegionMesh,
    pub lambdas: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    /// u − c₀ for the constant-trace problem, computed without cancellation.
    pub deviation: Option<Vec<f64>>,
    /// A mixed eigenvalue lies within [`RESONANCE_RTOL`] of λ.
    pub resonance: bool,
}

/// Helmholtz problem −Δu = λu on the annulus of a kissing mesh, Neumann on Γ₁ and
/// on the truncation cuts.
///
/// With u = c₀ on Γ₀ the solution is c₀ + w, where w vanishes on Γ₀ and solves
/// (∇w, ∇v) − λ(w, v) = λc₀(1, v). With zero data the mixed eigenpairs are returned.
pub fn solve_cusp_problem(mesh: &Mesh, bc: CuspBc, spectral: CuspSpectral) -> Result<CuspFields> {
    let annulus = mesh.submesh(RegionTag::Annulus);
    let am = &annulus.mesh;
    let dofs = DofMap::new(am, DofMode::DirichletOnGamma0)?;
    let unit = CoefficientField::unit();
    let k = assemble_stiffness(am, &dofs, &unit)?;
    let m = assemble_mass(am, &dofs, &unit)?;
    match (bc, spectral) {
        (CuspBc::ConstantOnGamma0(c0), CuspSpectral::Lambda(lambda)) => {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
            }
            let resonance = lambda > 0.0 && {
                let lo = count_below(&k, &m, lambda * (1.0 - RESONANCE_RTOL))?;
                let hi = count_below(&k, &m, lambda * (1.0 + RESONANCE_RTOL))?;
                hi > lo
            };
            let a = SparseSymmetricMatrix::lincomb(1.0, &k, -lambda, &m)?;
            let ones = vec![1.0; am.vertices.len()];
            let m1 = assemble_mass_full(am, &unit).matvec(&ones);
            let mut rhs = vec![0.0; dofs.n_dofs()];
            for (v, &val) in m1.iter().enumerate() {
                if let Some(d) = dofs.dof(v) {
                    rhs[d] += lambda * c0 * val;
                }
            }
            let w = LdlFactor::new(&a)?.solve(&rhs);
            let w = dofs.expand_homogeneous(&w);
            let u = w.iter().map(|x| c0 + x).collect();
            Ok(CuspFields { annulus, lambdas: vec![lambda], fields: vec![u], deviation: Some(w), resonance })
        }
        (CuspBc::ZeroOnGamma0, CuspSpectral::Spectrum(nev)) => {
            let pairs = solve_gevp(&k, &m, &SolverOptions::with_nev(nev))?;
            let mut lambdas = Vec::with_capacity(nev);
            let mut fields = Vec::with_capacity(nev);
            for p in pairs {
                let x = polish(&k, &m, p.lambda, p.vector)?;
                lambdas.push(p.lambda);
                fields.push(dofs.expand_homogeneous(&x));
            }
            Ok(CuspFields { annulus, lambdas, fields, deviation: None, resonance: false })
        }
        _ => Err(Error::InvalidConfig(
            "constant Γ₀ data needs a value of λ; zero Γ₀ data needs a number of eigenpairs".into(),
        )),
    }
}

/// Two steps of shifted inverse iteration, which resolve the exponentially small
/// tail of an eigenvector far below the Lanczos residual level.
fn polish(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix, lambda: f64, mut x: Vec<f64>) -> Result<Vec<f64>> {
    let sigma = lambda * (1.0 - 1e-7);
    let f = LdlFactor::new(&SparseSymmetricMatrix::lincomb(1.0, k, -sigma, m)?)?;
    for _ in 0..2 {
        let y = f.solve(&m.matvec(&x));
        let nrm = m.bilinear(&y, &y).sqrt();
        x = y.into_iter().map(|v| v / nrm).collect();
    }
    let (imax, _) = x.iter().enumerate().fold((0, 0.0f64), |a, (i, v)| if v.abs() > a.1 { (i, v.abs()) } else { a });
    if x[imax] < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(x)
}

/// x₁ = start, start/2, … down to `stop` (inclusive within round-off).
pub fn dyadic_ladder(start: f64, stop: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut x = start;
    while x >= stop * (1.0 - 1e-12) {
        out.push(x);
        x *= 0.5;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CuspProfile {
    pub eta: f64,
    /// (x₁, value), x₁ strictly decreasing.
    pub samples: Vec<(f64, f64)>,
}

/// Samples vertex values of `mesh` along x₂ = H₁(x₁) + η H(x₁) by barycentric interpolation.
pub fn sample_profile(geom: &CuspGeometry, mesh: &Mesh, values: &[f64], ladder: &[f64], eta: f64) -> Result<CuspProfile> {
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("profile ladder must be strictly decreasing".into()));
    }
    let mut samples = Vec::with_capacity(ladder.len());
    for &x1 in ladder {
        let t = thickness_profiles(geom, x1)?;
        let p = [x1, t.h1 + eta * t.h];
        let v = mesh.interpolate(values, p).ok_or(Error::OutsideDomain(p[0], p[1]))?;
        samples.push((x1, v));
    }
    Ok(CuspProfile { eta, samples })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DecayModel {
    /// |v| ≈ C|x₁|^p; the fitted exponent is p.
    Power,
    /// |v| ≈ C e^{b/|x₁|}; the fitted rate is b.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub exponent: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_decay(profile: &CuspProfile, model: DecayModel) -> Result<DecayFit> {
    let xy: Vec<(f64, f64)> = profile
        .samples
        .iter()
        .filter(|&&(x, v)| x != 0.0 && v != 0.0 && v.is_finite())
        .map(|&(x, v)| {
            let x = x.abs();
            let t = match model {
                DecayModel::Power => x.ln(),
                DecayModel::Exponential => 1.0 / x,
            };
            (t, v.abs().ln())
        })
        .collect();
    if xy.len() < MIN_DECAY_POINTS {
        return Err(Error::DegenerateFit { needed: MIN_DECAY_POINTS, got: xy.len() });
    }
    let f = line_fit(&xy)?;
    Ok(DecayFit { model, exponent: f.slope, r_squared: f.r_squared, points: f.points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ThicknessModel {
    /// H = H₀ − H₁ from the circles.
    Exact,
    /// Hᵖ = (1/R₀ − 1/R₁)x₁²/2.
    Principal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceCheck {
    /// (δ, I(δ)).
    pub points: Vec<(f64, f64)>,
    /// Slope of ln I against ln(1/δ) over the positive values, when at least three exist.
    pub exponent: Option<f64>,
    pub r_squared: Option<f64>,
}

/// Upper end of the integration interval.
pub const DIVERGENCE_UPPER: f64 = 1.0 / 3.0;

/// I(δ) = 2c₀² ∫_δ^{1/3} H(x₁)⁻² dx₁, integrated by double-exponential quadrature on
/// dyadic pieces [δ, 2δ], [2δ, 4δ], … so the x₁⁻⁴ growth never dominates a piece.
pub fn dirichlet_exterior_divergence_check(geom: &CuspGeometry, c0: f64, delta_list: &[f64], model: ThicknessModel) -> Result<DivergenceCheck> {
    if delta_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig("delta_list must be decreasing".into()));
    }
    let kappa = geom.kappa();
    let thickness = |x: f64| match model {
        ThicknessModel::Exact => circle_height(geom.r0, x) - circle_height(geom.r1, x),
        ThicknessModel::Principal => 0.5 * kappa * x * x,
    };
    let mut points = Vec::with_capacity(delta_list.len());
    for &delta in delta_list {
        if !(delta > 0.0 && delta <= DIVERGENCE_UPPER) {
            return Err(Error::InvalidConfig(format!("delta must lie in (0, 1/3], got {delta}")));
        }
        if DIVERGENCE_UPPER >= geom.r0 {
            return Err(Error::OutOfChart { x1: DIVERGENCE_UPPER, limit: geom.r0 });
        }
        let mut total = 0.0;
        let mut a = delta;
        while a < DIVERGENCE_UPPER {
            let b = (2.0 * a).min(DIVERGENCE_UPPER);
            let scale = (b - a) / thickness(a).powi(2);
            let out = quadrature::integrate(|x| thickness(x).powi(-2), a, b, 1e-13 * scale);
            total += out.integral;
            a = b;
        }
        points.push((delta, 2.0 * c0 * c0 * total));
    }
    let xy: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(d, i)| ((1.0 / d).ln(), i.ln())).collect();
    let fit = line_fit(&xy).ok();
    Ok(DivergenceCheck { points, exponent: fit.map(|f| f.slope), r_squared: fit.map(|f| f.r_squared) })
}

/// Closed form of the integral with the principal thickness: 8c₀²/(3κ²)(δ⁻³ − 27).
pub fn divergence_oracle(geom: &CuspGeometry, c0: f64, delta: f64) -> f64 {
    let k = geom.kappa();
    8.0 * c0 * c0 / (3.0 * k * k) * (delta.powi(-3) - DIVERGENCE_UPPER.powi(-3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> CuspGeometry {
        CuspGeometry::new(0.5, 1.0, 0.05).unwrap()
    }

    #[test]
    fn corrector_boundary_values() {
        let g = geom();
        let x1 = 0.1;
        let hp = 0.5 * g.kappa() * x1 * x1;
        let h1p = x1 * x1 / (2.0 * g.r1);
        assert!((hp - 0.005).abs() < 1e-15);
        assert!(compute_u1(&g, 1.0, 1.0, [x1, h1p + hp]).unwrap().abs() < 1e-18);
        let top = compute_u1(&g, 1.0, 1.0, [x1, h1p]).unwrap();
        assert!((top - 0.5 * 0.005f64.powi(2)).abs() < 1e-18);
        assert!(compute_u1(&g, 1.0, 1.0, [0.6, 0.0]).is_err());
    }

    /// RK4 for U'' = −λc₀(Hᵖ)² in η from η = 0 with U'(0) = 0, shooting on U(0) so that U(1) = 0.
    fn shoot(f: f64, n: usize) -> Vec<f64> {
        let run = |u0: f64| {
            let (mut u, mut v) = (u0, 0.0);
            let dt = 1.0 / n as f64;
            let mut out = vec![u];
            for _ in 0..n {
                let k1 = (v, f);
                let k2 = (v + 0.5 * dt * k1.1, f);
                let k3 = (v + 0.5 * dt * k2.1, f);
                let k4 = (v + dt * k3.1, f);
                u += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
                out.push(u);
            }
            out
        };
        let end = *run(0.0).last().unwrap();
        run(-end)
    }

    #[test]
    fn corrector_matches_shooting_in_eta() {
        let g = geom();
        let (lambda, c0, x1) = (2.5, 0.7, 0.08);
        let hp = 0.5 * g.kappa() * x1 * x1;
        let h1p = x1 * x1 / (2.0 * g.r1);
        let f = -lambda * c0 * hp * hp;
        let n = 400;
        let u = shoot(f, n);
        for i in [0, 100, 200, 399] {
            let eta = i as f64 / n as f64;
            let v = compute_u1(&g, lambda, c0, [x1, h1p + eta * hp]).unwrap();
            assert!((v - u[i]).abs() < 1e-10 * f.abs(), "{v} {}", u[i]);
        }
    }

    #[test]
    fn ladder_and_fits() {
        let l = dyadic_ladder(0.125, 0.005);
        assert_eq!(l, vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125]);
        let p = CuspProfile { eta: 0.5, samples: l.iter().map(|&x| (x, x.powi(4))).collect() };
        let f = fit_decay(&p, DecayModel::Power).unwrap();
        assert!((f.exponent - 4.0).abs() < 1e-12);
        let q = CuspProfile { eta: 0.5, samples: l.iter().map(|&x| (x, (-2.0 / x).exp())).collect() };
        let f = fit_decay(&q, DecayModel::Exponential).unwrap();
        assert!((f.exponent + 2.0).abs() < 1e-12);
        let short = CuspProfile { eta: 0.5, samples: p.samples[..4].to_vec() };
        assert!(matches!(fit_decay(&short, DecayModel::Power), Err(Error::DegenerateFit { .. })));
    }

    #[test]
    fn divergence_against_closed_form() {
        let g = geom();
        let deltas = [0.02, 0.01, 0.005, 0.0025];
        let d = dirichlet_exterior_divergence_check(&g, 1.0, &deltas, ThicknessModel::Principal).unwrap();
        for &(delta, i) in &d.points {
            let exact = divergence_oracle(&g, 1.0, delta);
            assert!((i - exact).abs() <= 1e-9 * exact, "{i} {exact}");
        }
        assert!((d.exponent.unwrap() - 3.0).abs() < 0.05);
        let z = dirichlet_exterior_divergence_check(&g, 0.0, &deltas, ThicknessModel::Exact).unwrap();
        assert!(z.points.iter().all(|p| p.1 == 0.0));
        let e = dirichlet_exterior_divergence_check(&g, 1.0, &[1.0 / 3.0], ThicknessModel::Exact).unwrap();
        assert_eq!(e.points[0].1, 0.0);
    }
}
