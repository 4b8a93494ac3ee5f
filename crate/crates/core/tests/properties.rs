//! Structural invariants of every module, as randomized properties where cheap and
//! as fixed-geometry checks where a mesh solve is involved.

mod common;

use common::{concentric, limit_meshes};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stiffspec::asymptotics::{predict_all, ClusterMatrix, ClusterMatrixKind, LimitSource};
use stiffspec::cusp::{
    compute_u1, dyadic_ladder, fit_decay, kissing_mesh, sample_profile, solve_cusp_problem, CuspBc, CuspProfile, CuspSpectral,
    DecayModel,
};
use stiffspec::eigensolver::{count_below, solve_gevp, SolverOptions};
use stiffspec::fem::{
    assemble_mass, assemble_mass_full, assemble_stiffness, assemble_stiffness_full, dot, CoefficientField, DofMap, DofMode,
};
use stiffspec::geometry::{build_domain, thickness_profiles, CuspGeometry, DomainSpec, RegionTag};
use stiffspec::mesh::{generate_mesh, tri_area, validate_mesh};
use stiffspec::verification::{cluster_eigenvalues, fit_rate, run_sweep, SweepConfig};

proptest! {
    #[test]
    fn thickness_is_positive_off_the_cusp(r0 in 0.2f64..0.9, gap in 0.05f64..1.0, t in 1e-4f64..0.999) {
        let g = CuspGeometry::new(r0, r0 + gap, 0.1 * r0).unwrap();
        let x1 = t * r0;
        let th = thickness_profiles(&g, x1).unwrap();
        prop_assert!(th.h > 0.0);
        prop_assert!(thickness_profiles(&g, -x1).unwrap().h > 0.0);
    }

    #[test]
    fn rate_fit_recovers_power_laws(slope in 0.1f64..4.0, c in 0.01f64..100.0) {
        let pts: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125, 0.00625].iter().map(|&e: &f64| (e, c * e.powf(slope))).collect();
        let f = fit_rate(&pts).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        prop_assert!(f.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn clusters_partition_sorted_values(mut v in proptest::collection::vec(0.0f64..10.0, 0..30), rtol in 1e-8f64..1e-2) {
        v.sort_by(f64::total_cmp);
        let c = cluster_eigenvalues(&v, rtol);
        let flat: Vec<usize> = c.iter().flatten().copied().collect();
        prop_assert_eq!(flat, (0..v.len()).collect::<Vec<_>>());
        for run in &c {
            for w in run.windows(2) {
                let (a, b) = (v[w[0]], v[w[1]]);
                prop_assert!(b - a <= rtol * a.abs().max(b.abs()).max(1e-12));
            }
        }
        for w in c.windows(2) {
            let (a, b) = (v[*w[0].last().unwrap()], v[w[1][0]]);
            prop_assert!(b - a > rtol * a.abs().max(b.abs()).max(1e-12));
        }
    }

    #[test]
    fn rank_one_cluster_matrix_spectrum(f in proptest::collection::vec(-5.0f64..5.0, 2..5), lambda0 in 0.5f64..50.0) {
        let tau = f.len();
        let area = std::f64::consts::PI * 0.25;
        let entries = DMatrix::from_fn(tau, tau, |i, j| f[i] * f[j] / (lambda0 * area));
        let trace = entries.trace();
        let ev = ClusterMatrix { kind: ClusterMatrixKind::RankOneM, entries }.eigenvalues();
        prop_assert!(trace >= 0.0);
        let scale = trace.max(1.0);
        for v in &ev[..tau - 1] {
            prop_assert!(v.abs() <= 1e-10 * scale);
        }
        prop_assert!((ev[tau - 1] - trace).abs() <= 1e-10 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn assembly_is_symmetric_and_scales(a0 in 0.01f64..100.0, a1 in 0.01f64..100.0, k in -4i32..5, c in 0.1f64..10.0) {
        let mesh = concentric(0.2);
        let coeff = CoefficientField::new([a0, a1], [a1, a0]).unwrap();
        let kmat = assemble_stiffness_full(&mesh, &coeff).to_dense();
        prop_assert!(kmat == kmat.transpose());
        let mmat = assemble_mass_full(&mesh, &coeff).to_dense();
        prop_assert!(mmat == mmat.transpose());
        // powers of two scale exactly in floating point
        let p = 2f64.powi(k);
        let scaled = assemble_stiffness_full(&mesh, &CoefficientField::new([p * a0, p * a1], [1.0, 1.0]).unwrap()).to_dense();
        prop_assert!(scaled == &kmat * p);
        let general = assemble_stiffness_full(&mesh, &CoefficientField::new([c * a0, c * a1], [1.0, 1.0]).unwrap()).to_dense();
        let diff = (general - &kmat * c).abs().max();
        prop_assert!(diff <= 1e-13 * c * a0.max(a1) * 10.0);
    }

    #[test]
    fn neumann_stiffness_annihilates_constants(a0 in 1e-3f64..1e3, a1 in 1e-3f64..1e3) {
        let mesh = concentric(0.2);
        let k = assemble_stiffness_full(&mesh, &CoefficientField::new([a0, a1], [1.0, 1.0]).unwrap());
        let ones = vec![1.0; k.dim()];
        let r = k.matvec(&ones);
        prop_assert!(r.iter().all(|v| v.abs() <= 1e-12 * k.norm_inf()));
    }

    #[test]
    fn eigenvalue_count_matches_inertia(t in 0.05f64..0.95) {
        let mesh = concentric(0.2);
        let d = DofMap::free(&mesh);
        let k = assemble_stiffness(&mesh, &d, &CoefficientField::unit()).unwrap();
        let m = assemble_mass(&mesh, &d, &CoefficientField::unit()).unwrap();
        let pairs = solve_gevp(&k, &m, &SolverOptions::with_nev(8)).unwrap();
        let sigma = t * pairs[7].lambda;
        // keep the test level away from eigenvalues
        prop_assume!(pairs.iter().all(|p| (p.lambda - sigma).abs() > 1e-6 * pairs[7].lambda));
        let expected = pairs.iter().filter(|p| p.lambda < sigma).count();
        prop_assert_eq!(count_below(&k, &m, sigma).unwrap(), expected);
    }

    #[test]
    fn shift_inside_the_gap_does_not_change_eigenvalues(s in 0.01f64..5.0) {
        let mesh = concentric(0.1);
        let d = DofMap::free(&mesh);
        let k = assemble_stiffness(&mesh, &d, &CoefficientField::unit()).unwrap();
        let m = assemble_mass(&mesh, &d, &CoefficientField::unit()).unwrap();
        let opts = SolverOptions { nev: 5, dense_fallback_threshold: 0, ..SolverOptions::default() };
        let a = solve_gevp(&k, &m, &opts).unwrap();
        let b = solve_gevp(&k, &m, &SolverOptions { shift: Some(-s), ..opts }).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.lambda - y.lambda).abs() <= 1e-9 * x.lambda.abs().max(1.0));
        }
    }

    #[test]
    fn full_spectrum_is_monotone(le in 1.0f64..3.0, m in -1.0f64..1.5) {
        let eps = 10f64.powf(-le);
        let mesh = concentric(0.2);
        let d = DofMap::free(&mesh);
        let c = CoefficientField::stiff(eps, m).unwrap();
        let k = assemble_stiffness(&mesh, &d, &c).unwrap();
        let mm = assemble_mass(&mesh, &d, &c).unwrap();
        let pairs = solve_gevp(&k, &mm, &SolverOptions::with_nev(6)).unwrap();
        prop_assert!(pairs[0].lambda.abs() <= 1e-9);
        for w in pairs.windows(2) {
            prop_assert!(w[1].lambda >= w[0].lambda);
        }
    }

    #[test]
    fn msmall_corrections_are_nonnegative(m in 0.05f64..0.45) {
        let p = predict_all(m, &limit_meshes(0.1), 4, 1e-6, &SolverOptions::default()).unwrap();
        prop_assert!(p.iter().all(|q| q.lambda_prime >= -1e-12));
    }

    #[test]
    fn mneg_corrections_are_negative(m in -2.0f64..-0.05) {
        let p = predict_all(m, &limit_meshes(0.1), 4, 1e-6, &SolverOptions::default()).unwrap();
        // G is positive definite on concentric clusters, so every non-constant mode moves down
        prop_assert!(p.iter().filter(|q| q.lambda0 > 1e-9).all(|q| q.lambda_prime < 0.0));
    }
}

#[test]
fn classify_point_agrees_with_squared_distances() {
    let spec = DomainSpec::offset(0.4, 1.0, 0.3);
    let dom = build_domain(spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let p = [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)];
        let d2 = |c: [f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        let got = dom.classify_point(p);
        if d2(spec.outer.center) > spec.outer.radius.powi(2) {
            assert!(got.is_err());
        } else if d2(spec.core.center) < spec.core.radius.powi(2) {
            assert_eq!(got.unwrap(), RegionTag::Core);
        } else {
            assert_eq!(got.unwrap(), RegionTag::Annulus);
        }
    }
}

#[test]
fn meshes_have_no_edges_across_the_interface() {
    for spec in [DomainSpec::concentric(0.5, 1.0), DomainSpec::offset(0.4, 1.0, 0.3)] {
        let m = generate_mesh(&build_domain(spec).unwrap(), 0.1, None).unwrap();
        let d = validate_mesh(&m);
        assert_eq!(d.cross_region_edges, 0);
        assert!(d.passed(), "{:?}", d.issues());
    }
}

#[test]
fn constrained_eigenpairs_satisfy_the_green_identity() {
    let mesh = concentric(0.1).submesh(RegionTag::Annulus).mesh;
    let d = DofMap::new(&mesh, DofMode::DirichletOnGamma0).unwrap();
    let unit = CoefficientField::unit();
    let k = assemble_stiffness(&mesh, &d, &unit).unwrap();
    let m = assemble_mass(&mesh, &d, &unit).unwrap();
    let pairs = solve_gevp(&k, &m, &SolverOptions::with_nev(3)).unwrap();
    let kf = assemble_stiffness_full(&mesh, &unit);
    let mf = assemble_mass_full(&mesh, &unit);
    let on_gamma0 = mesh.tag_mask(stiffspec::geometry::BoundaryTag::Gamma0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in &pairs {
        let u = d.expand_homogeneous(&p.vector);
        let ku = kf.matvec(&u);
        let mu = mf.matvec(&u);
        let r: Vec<f64> = ku.iter().zip(&mu).map(|(a, b)| a - p.lambda * b).collect();
        for _ in 0..5 {
            let v: Vec<f64> = (0..u.len()).map(|i| if on_gamma0[i] { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
            let scale = dot(&v, &v).sqrt() * (kf.norm_inf() + p.lambda * mf.norm_inf()) * dot(&u, &u).sqrt();
            assert!(dot(&v, &r).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn eigenvalues_scale_with_the_stiffness() {
    let mesh = concentric(0.1);
    let d = DofMap::free(&mesh);
    let k = assemble_stiffness(&mesh, &d, &CoefficientField::unit()).unwrap();
    let m = assemble_mass(&mesh, &d, &CoefficientField::unit()).unwrap();
    let opts = SolverOptions { nev: 4, dense_fallback_threshold: 0, ..SolverOptions::default() };
    let a = solve_gevp(&k, &m, &opts).unwrap();
    let b = solve_gevp(&k.scaled(7.0), &m, &opts).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((7.0 * x.lambda - y.lambda).abs() <= 1e-9 * y.lambda.max(1.0));
    }
    // the simple radial-free pair is degenerate, so compare the simple modes only
    let (x, y) = (&a[0], &b[0]);
    let mv = m.matvec(&x.vector);
    assert!((dot(&mv, &y.vector).abs() - 1.0).abs() < 1e-8);
}

#[test]
fn limit_cluster_pattern_is_stable_under_refinement() {
    for m in [-1.0, 0.25, 0.5, 1.0] {
        let pattern = |h: f64| -> Vec<(usize, LimitSource)> {
            predict_all(m, &limit_meshes(h), 6, 1e-6, &SolverOptions::default())
                .unwrap()
                .iter()
                .map(|q| (q.multiplicity, q.source))
                .collect()
        };
        assert_eq!(pattern(0.1), pattern(0.05), "m = {m}");
    }
}

#[test]
fn mhalf_entries_come_from_exactly_one_family() {
    let meshes = limit_meshes(0.1);
    let opts = SolverOptions::default();
    let half = predict_all(0.5, &meshes, 8, 1e-6, &opts).unwrap();
    let core = predict_all(1.0, &meshes, 12, 1e-6, &opts).unwrap();
    let mixed = predict_all(0.25, &meshes, 12, 1e-6, &opts).unwrap();
    for q in half.iter().filter(|q| q.lambda0 > 1e-9) {
        let near = |v: &[stiffspec::asymptotics::Prediction]| v.iter().any(|p| (p.lambda0 - q.lambda0).abs() < 1e-8 * q.lambda0);
        let in_core = near(&core);
        let in_mixed = near(&mixed);
        assert!(in_core ^ in_mixed, "λ⁰ = {}", q.lambda0);
        let expected = if in_core { LimitSource::NeumannCore } else { LimitSource::MixedAnnulus };
        assert_eq!(q.source, expected);
    }
}

fn small_sweep(h: f64, h2: Option<f64>, shift: Option<f64>) -> stiffspec::verification::ConvergenceReport {
    let mut c = SweepConfig::new(0.25, vec![0.1, 0.05, 0.025, 0.0125], h, 3, DomainSpec::concentric(0.5, 1.0)).unwrap();
    c.mesh_h2 = h2;
    c.solver.shift = shift;
    run_sweep(&c).unwrap()
}

#[test]
fn matching_is_stable_under_shift_perturbation() {
    let a = small_sweep(0.1, None, None);
    let b = small_sweep(0.1, None, Some(-0.37));
    for (x, y) in a.indices.iter().zip(&b.indices) {
        for (p, q) in x.points.iter().zip(&y.points) {
            assert!((p.lambda_eps - q.lambda_eps).abs() <= 1e-8 * p.lambda_eps.abs().max(1.0));
        }
    }
}

#[test]
fn richardson_value_stays_within_the_mesh_gap() {
    let coarse = small_sweep(0.1, None, None);
    let fine = small_sweep(0.05, None, None);
    let ext = small_sweep(0.1, Some(0.05), None);
    for ((c, f), e) in coarse.indices.iter().zip(&fine.indices).zip(&ext.indices) {
        for ((pc, pf), pe) in c.points.iter().zip(&f.points).zip(&e.points) {
            let gap = (pf.lambda_eps - pc.lambda_eps).abs();
            assert!((pe.lambda_eps - pf.lambda_eps).abs() <= gap + 1e-12, "n={}", c.n);
        }
    }
}

fn finite_difference_laplacian(f: &impl Fn(f64, f64) -> f64, x: f64, y: f64, dx: f64, dy: f64) -> f64 {
    let c = f(x, y);
    (f(x + dx, y) + f(x - dx, y) - 2.0 * c) / (dx * dx) + (f(x, y + dy) + f(x, y - dy) - 2.0 * c) / (dy * dy)
}

#[test]
fn corrector_pde_residual_is_quadratic_in_x1() {
    let g = CuspGeometry::new(0.5, 1.0, 0.01).unwrap();
    let (lambda, c0) = (1.3, 0.8);
    let ratios: Vec<f64> = dyadic_ladder(0.2, 0.01)
        .iter()
        .map(|&x1| {
            let t = thickness_profiles(&g, x1).unwrap();
            let y = t.h1 + 0.5 * t.h;
            let u = |a: f64, b: f64| c0 + compute_u1(&g, lambda, c0, [a, b]).unwrap();
            // quadratic in x2, so a wide vertical stencil is exact; x1 varies on the scale x1
            let res = -finite_difference_laplacian(&u, x1, y, 1e-2 * x1, 0.25 * t.h) - lambda * u(x1, y);
            res.abs() / (lambda * c0) / (x1 * x1)
        })
        .collect();
    let cmax = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(cmax < 10.0, "{ratios:?}");
}

#[test]
fn corrector_has_zero_eta_slope_on_gamma1() {
    let g = CuspGeometry::new(0.5, 1.0, 0.01).unwrap();
    for x1 in dyadic_ladder(0.2, 0.01) {
        let h1p = x1 * x1 / (2.0 * g.r1);
        let d = 1e-3 * x1 * x1;
        let up = compute_u1(&g, 2.0, 1.0, [x1, h1p + d]).unwrap();
        let dn = compute_u1(&g, 2.0, 1.0, [x1, h1p - d]).unwrap();
        assert!((up - dn).abs() <= 1e-15 * up.abs().max(1e-300) + 1e-300);
    }
}

#[test]
fn constant_trace_solution_is_insensitive_to_truncation() {
    let (lambda, c0) = (1.0, 1.0);
    let solve = |delta: f64| {
        let g = CuspGeometry::new(0.5, 1.0, delta).unwrap();
        let mesh = kissing_mesh(&g, 0.05, 0.5).unwrap();
        let f = solve_cusp_problem(&mesh, CuspBc::ConstantOnGamma0(c0), CuspSpectral::Lambda(lambda)).unwrap();
        (g, f)
    };
    let (g1, f1) = solve(0.02);
    let (g2, f2) = solve(0.01);
    let ladder = dyadic_ladder(0.16, 0.04);
    let p1 = sample_profile(&g1, &f1.annulus.mesh, &f1.fields[0], &ladder, 0.5).unwrap();
    let p2 = sample_profile(&g2, &f2.annulus.mesh, &f2.fields[0], &ladder, 0.5).unwrap();
    for (a, b) in p1.samples.iter().zip(&p2.samples) {
        // the two meshes differ everywhere, so the change is bounded by δ⁴ plus the mesh error
        assert!((a.1 - b.1).abs() <= 0.02f64.powi(4) + 1e-4, "x1 = {}: {} vs {}", a.0, a.1, b.1);
    }
}

#[test]
fn dirichlet_band_mass_decays_exponentially() {
    let g = CuspGeometry::new(0.5, 1.0, 0.02).unwrap();
    let mesh = kissing_mesh(&g, 0.05, 0.5).unwrap();
    let f = solve_cusp_problem(&mesh, CuspBc::ZeroOnGamma0, CuspSpectral::Spectrum(1)).unwrap();
    let am = &f.annulus.mesh;
    let u = &f.fields[0];
    let ladder: Vec<f64> = (3..=8).map(|k| 1.0 / k as f64).collect();
    let samples = ladder
        .iter()
        .map(|&t| {
            let mass: f64 = am
                .triangles
                .iter()
                .filter(|tri| tri.v.iter().all(|&v| am.vertices[v][0].abs() < t && am.vertices[v][1] < 0.5))
                .map(|tri| {
                    let [a, b, c] = tri.v.map(|v| am.vertices[v]);
                    let w = tri.v.map(|v| u[v]);
                    let s = w[0] * w[0] + w[1] * w[1] + w[2] * w[2] + w[0] * w[1] + w[1] * w[2] + w[0] * w[2];
                    tri_area(a, b, c) * s / 6.0
                })
                .sum();
            (t, mass)
        })
        .collect();
    let fit = fit_decay(&CuspProfile { eta: f64::NAN, samples }, DecayModel::Exponential).unwrap();
    assert!(fit.exponent < 0.0 && fit.r_squared >= 0.99, "{fit:?}");
}
