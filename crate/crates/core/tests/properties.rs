//! Property tests for the invariants of kernels, spherical functionals,
//! geometry, convolution and the dyadic machinery.

use std::f64::consts::PI;
use std::sync::Arc;

use phi_lab::besov::{besov_sum, build_cube_chain, cube_mass, default_epsilon, second_core_ratio, EnergyLedger};
use phi_lab::fit::fit_line;
use phi_lab::geometry::{is_boundary_cube, BoundaryProfile, Domain, DyadicCube};
use phi_lab::integrate::{integrate_over_domain, IntegrateOpts};
use phi_lab::kernel::{
    dyadic, kernel_eval, kernel_piece_eval, m_p, phi_perturbation_probe_with, HomogeneousKernel, KernelPiece, KernelSel,
    KernelSphereMap, PhiIntegrand, PhiSphereMap, PieceMode,
};
use phi_lab::source::{convolve_at, PointMass, SourceFunction};
use phi_lab::spherical::{hemisphere_functional, psi_profile, SphereRule};
use proptest::prelude::*;

fn trig_kernel(c: &[f64]) -> HomogeneousKernel {
    let cos = vec![vec![c[0], c[1], c[2]], vec![c[3], c[4], c[5]]];
    let sin = vec![vec![0.0, c[6], c[7]], vec![0.0, c[8], c[9]]];
    HomogeneousKernel::new(2, 2, 1.0, KernelSphereMap::Trig2 { cos, sin }).unwrap()
}

fn rel(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(1e-300)
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    (0.05f64..20.0, 0.0f64..2.0 * PI).prop_map(|(r, t)| vec![r * t.cos(), r * t.sin()])
}

fn masses_in(lo: [f64; 2], side: f64, max: usize) -> impl Strategy<Value = SourceFunction> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0), 1..=max).prop_map(move |v| {
        SourceFunction::point_masses(
            v.into_iter().map(|(a, b, m)| PointMass { location: vec![lo[0] + a * side, lo[1] + b * side], mass: m }).collect(),
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn kernel_homogeneity(c in prop::collection::vec(-1.0f64..1.0, 10), x in point(), lam in 1e-3f64..1e3) {
        let k = trig_kernel(&c);
        let a = kernel_eval(&k, &[lam * x[0], lam * x[1]]).unwrap();
        let b = kernel_eval(&k, &x).unwrap();
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!(rel(u * lam, *v, scale) < 1e-12);
        }
    }

    #[test]
    fn phi_homogeneity(cs in prop::collection::vec(-1.0f64..1.0, 4), v in point(), lam in 1e-3f64..1e3, p in 1.2f64..4.0) {
        let phi = PhiIntegrand::new(2, p, PhiSphereMap::Harmonic2 { cos: cs[..2].to_vec(), sin: cs[2..].to_vec() }).unwrap();
        let a = phi.eval(&[lam * v[0], lam * v[1]]);
        let b = phi.eval(&v);
        let scale = lam.powf(p) * (v[0].hypot(v[1])).powf(p);
        prop_assert!(rel(a, lam.powf(p) * b, scale) < 1e-12);
    }

    #[test]
    fn pieces_partition_kernel(x in point(), n_max in 1i32..6) {
        let k = HomogeneousKernel::identity(2, 1.0);
        let r = x[0].hypot(x[1]);
        prop_assume!(r >= dyadic(-n_max - 1) && r < dyadic(n_max));
        let mut sum = [0.0, 0.0];
        let mut nonzero = 0;
        for n in -n_max..=n_max {
            let v = kernel_piece_eval(&KernelPiece { kernel: &k, n, mode: PieceMode::Single }, &x).unwrap();
            if v.iter().any(|t| *t != 0.0) {
                nonzero += 1;
            }
            sum[0] += v[0];
            sum[1] += v[1];
        }
        prop_assert_eq!(nonzero, 1);
        prop_assert_eq!(sum.to_vec(), kernel_eval(&k, &x).unwrap());
    }

    #[test]
    fn piece_scaling(c in prop::collection::vec(-1.0f64..1.0, 10), x in point(), n in -4i32..8) {
        let k = trig_kernel(&c);
        let s = dyadic(n);
        let a = kernel_piece_eval(&KernelPiece { kernel: &k, n, mode: PieceMode::Single }, &x).unwrap();
        let b = kernel_piece_eval(&KernelPiece { kernel: &k, n: 0, mode: PieceMode::Single }, &[s * x[0], s * x[1]]).unwrap();
        let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max) * s;
        for (u, v) in a.iter().zip(&b) {
            prop_assert!(rel(*u, s * v, scale) < 1e-12 || scale == 0.0 && *u == 0.0);
        }
    }

    #[test]
    fn interaction_function(p in 1.1f64..4.0, x in 0.0f64..10.0, y in 0.0f64..10.0, dx in 0.0f64..1.0, lam in 1e-2f64..1e2) {
        let a = m_p(p, x, y).unwrap();
        prop_assert!(rel(a, m_p(p, y, x).unwrap(), a.abs().max(1e-12)) < 1e-14);
        prop_assert!(m_p(p, x + dx, y).unwrap() >= a * (1.0 - 1e-14));
        prop_assert!(m_p(p, x, y + dx).unwrap() >= a * (1.0 - 1e-14));
        prop_assert!(rel(m_p(p, lam * x, lam * y).unwrap(), lam.powf(p) * a, lam.powf(p) * a.max(1e-12)) < 1e-12);
    }

    #[test]
    fn dyadic_containing(g in -4i32..10, x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let q = DyadicCube::containing(g, &x);
        prop_assert!(q.contains(&x));
        prop_assert_eq!(q.parent(), DyadicCube::containing(g - 1, &x));
        prop_assert_eq!(q.children().iter().filter(|c| c.contains(&x)).count(), 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rotation_equivariance(c in prop::collection::vec(-1.0f64..1.0, 10), t in 0.0f64..2.0 * PI, s in 0.0f64..2.0 * PI) {
        let k = trig_kernel(&c);
        let base = k.clone();
        let (ct, st) = (t.cos(), t.sin());
        let rotated = HomogeneousKernel::new(
            2,
            2,
            1.0,
            KernelSphereMap::Custom(Arc::new(move |z: &[f64], out: &mut [f64]| {
                let w = [ct * z[0] + st * z[1], -st * z[0] + ct * z[1]];
                let v = kernel_eval(&base, &w).unwrap();
                out[..2].copy_from_slice(&v);
            })),
        )
        .unwrap();
        let phi = PhiIntegrand::trace_free_quadratic();
        let rule = SphereRule::circle(4096);
        let xi = [s.cos(), s.sin()];
        let xr = [(s + t).cos(), (s + t).sin()];
        let a = hemisphere_functional(&k, &phi, 1.0, &xi, &rule).unwrap();
        let b = hemisphere_functional(&rotated, &phi, 1.0, &xr, &rule).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn energy_ledger_monotone(f in masses_in([0.0, 0.0], 1.0, 8), p in 1.2f64..3.5) {
        let d = Domain::ball(vec![0.2, 0.7], 0.6).unwrap();
        let q = DyadicCube::new(0, vec![0, 0]);
        prop_assert!((cube_mass(&f, &q) - f.l1_norm()).abs() <= 1e-12 * f.l1_norm());
        let l = EnergyLedger::build(&f, &q, &d, p, 10);
        prop_assert!(l.check().is_ok(), "{:?}", l.check());
    }

    #[test]
    fn chain_bounds(f in masses_in([0.0, 0.0], 1.0, 6), delta in 0.05f64..0.5) {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let q = DyadicCube::new(0, vec![0, 0]);
        prop_assume!(!f.is_zero());
        let ch = build_cube_chain(&f, &q, &d, delta, 2.0).unwrap();
        prop_assert!(ch.mass_bound_holds());
        prop_assert!(ch.containment_holds(), "{}", ch.containment_ratio());
    }

    #[test]
    fn second_core_scale_invariant(f in masses_in([0.0, 0.0], 1.0, 4), lam in 1e-3f64..1e3) {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let q = DyadicCube::new(0, vec![0, 0]);
        let eps = default_epsilon(2.0, 0.2).unwrap();
        let a = second_core_ratio(&f, &q, &d, 2.0, eps, 0.2);
        let b = second_core_ratio(&f.scaled(lam), &q, &d, 2.0, eps, 0.2);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!(rel(a.ratio, b.ratio, a.ratio.abs().max(1e-300)) < 1e-10 || a.ratio == b.ratio),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn support_containment(cx in -0.5f64..0.5, cy in -0.5f64..0.5, n in 0i32..4, t in 0.0f64..2.0 * PI, extra in 1e-6f64..1.0) {
        let k = HomogeneousKernel::identity(2, 1.0);
        let scale = 8.0;
        let f = SourceFunction::bump([cx, cy], scale, 1.0).unwrap();
        let r = 1.0 / scale + dyadic(-n) + extra;
        let x = [cx + r * t.cos(), cy + r * t.sin()];
        let v = convolve_at(&k, KernelSel::single(n), &f, &x, 1e-10).unwrap().value;
        prop_assert!(v.iter().all(|c| *c == 0.0), "{:?}", v);
    }

    #[test]
    fn besov_ratio_scale_invariant(lam in 1e-3f64..1e3) {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let k = HomogeneousKernel::identity(2, 1.0);
        let f = SourceFunction::point_masses(vec![
            PointMass { location: vec![0.8, 0.1], mass: 1.0 },
            PointMass { location: vec![-0.2, 0.3], mass: -0.5 },
        ])
        .unwrap();
        let phi = PhiIntegrand::trace_free_quadratic();
        let opts = IntegrateOpts::default();
        let a = besov_sum(&f, &d, &k, &phi, (0, 4), &opts).unwrap().ratio;
        let b = besov_sum(&f.scaled(lam), &d, &k, &phi, (0, 4), &opts).unwrap().ratio;
        prop_assert!(rel(a, b, a) < 1e-10, "{} vs {}", a, b);
    }
}

#[test]
fn perturbation_probe_tightens() {
    for phi in [PhiIntegrand::trace_free_quadratic(), PhiIntegrand::first_component_norm(), PhiIntegrand::norm_squared(2)] {
        let loose = phi_perturbation_probe_with(&phi, 20_000, 5, 2.0);
        let tight = phi_perturbation_probe_with(&phi, 20_000, 5, 4.0);
        assert!(tight <= loose, "{tight} > {loose}");
    }
}

#[test]
fn boundary_cube_parent_closure() {
    let domains = [
        Domain::ball(vec![0.1, -0.2], 0.9).unwrap(),
        Domain::half_space(vec![0.6, 0.8], 0.25).unwrap(),
        Domain::graph_disk([0.0, 0.0], 1.0, 0.1, BoundaryProfile::Cos { k: 3 }).unwrap(),
    ];
    for d in &domains {
        for g in 1..=8 {
            let span = 2i64.pow(g as u32) * 2;
            for i in -span..span {
                for j in -span..span {
                    let q = DyadicCube::new(g, vec![i, j]);
                    if is_boundary_cube(d, &q) {
                        assert!(is_boundary_cube(d, &q.parent()), "{d:?} {q:?}");
                    }
                }
            }
        }
    }
}

#[test]
fn boundary_cube_count_growth() {
    let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let gens: Vec<i32> = (3..=9).collect();
    let counts: Vec<f64> = gens
        .iter()
        .map(|&g| {
            let span = 2i64.pow(g as u32) * 2;
            let mut c = 0usize;
            for i in -span..span {
                for j in -span..span {
                    c += usize::from(is_boundary_cube(&d, &DyadicCube::new(g, vec![i, j])));
                }
            }
            c as f64
        })
        .collect();
    let x: Vec<f64> = gens.iter().map(|&g| g as f64 * 2f64.ln()).collect();
    let y: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let slope = fit_line(&x, &y).unwrap().slope;
    assert!((slope - 1.0).abs() <= 0.2, "{slope}");
}

#[test]
fn psi_nonincreasing_on_disk() {
    let d = Domain::ball(vec![0.0, 1.0], 1.0).unwrap();
    let k = HomogeneousKernel::identity(2, 1.0);
    let phi = PhiIntegrand::norm_squared(2);
    let rule = SphereRule::circle(4096);
    let mut prev = f64::INFINITY;
    for i in 0..80 {
        let rho = 1e-3 * (2.2e3f64).powf(i as f64 / 79.0);
        let v = psi_profile(&d, &[0.0, 0.0], &k, &phi, 1.0, rho, &rule).unwrap();
        assert!(v <= prev + 1e-12, "ρ={rho}: {v} > {prev}");
        prev = v;
    }
    assert_eq!(prev, 0.0);
}

#[test]
fn domain_integral_additive_over_half_planes() {
    // H ∪ H' covers the plane up to a null set; a large ball sees the whole support.
    let k = HomogeneousKernel::identity(2, 1.0);
    let phi = PhiIntegrand::norm_squared(2);
    let f = SourceFunction::point_masses(vec![
        PointMass { location: vec![0.1, 0.2], mass: 1.0 },
        PointMass { location: vec![-0.3, 0.05], mass: -0.7 },
    ])
    .unwrap();
    let opts = IntegrateOpts { rel_tol: 1e-8, ..IntegrateOpts::default() };
    let h = Domain::half_space(vec![0.6, 0.8], 0.1).unwrap();
    let hc = Domain::half_space(vec![-0.6, -0.8], -0.1).unwrap();
    let big = Domain::ball(vec![0.0, 0.0], 50.0).unwrap();
    for n in [0, 2] {
        let sel = KernelSel::single(n);
        let a = integrate_over_domain(&h, &k, sel, &f, &phi, 1.0, &opts).unwrap();
        let b = integrate_over_domain(&hc, &k, sel, &f, &phi, 1.0, &opts).unwrap();
        let c = integrate_over_domain(&big, &k, sel, &f, &phi, 1.0, &opts).unwrap();
        let tol = 2.0 * (a.error + b.error + c.error).max(1e-8 * c.value.abs());
        assert!((a.value + b.value - c.value).abs() <= tol, "n={n}: {} + {} vs {}", a.value, b.value, c.value);
    }
}
