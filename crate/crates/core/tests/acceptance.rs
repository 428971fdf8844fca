//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line to stderr (uncaptured) before asserting.

use std::f64::consts::PI;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use phi_lab::besov::{
    besov_sum, boundary_defect, build_cube_chain, containment_constant, new_simple_probe, telescope_energy_sum, theorem41_cube_sums, theorem41_sides,
    CubeDilation, EnergyLedger,
};
use phi_lab::experiments::{necessity_blowup, BlowupAnchor, BlowupOpts};
use phi_lab::fit::{fit_line, fit_loglog};
use phi_lab::geometry::{is_boundary_cube, Domain, DyadicCube};
use phi_lab::integrate::IntegrateOpts;
use phi_lab::kernel::{kernel_eval, random_unit, HomogeneousKernel, KernelSel, KernelSphereMap, PhiIntegrand, PhiSphereMap};
use phi_lab::source::{convolve_at, GridSource, PointMass, SourceFunction};
use phi_lab::spherical::{cancellation_sweep, full_functional, hemisphere_functional, SphereRule};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {id} [{tag}] {name}: {detail}");
}

fn random_trig_kernel(rng: &mut ChaCha8Rng) -> HomogeneousKernel {
    let row = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let cos = vec![row(rng), row(rng)];
    let sin = vec![row(rng), row(rng)];
    HomogeneousKernel::new(2, 2, 1.0, KernelSphereMap::Trig2 { cos, sin }).unwrap()
}

fn random_harmonic_phi(rng: &mut ChaCha8Rng) -> PhiIntegrand {
    let cos = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sin = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PhiIntegrand::new(2, 2.0, PhiSphereMap::Harmonic2 { cos, sin }).unwrap()
}

fn random_masses(rng: &mut ChaCha8Rng, lo: [f64; 2], hi: [f64; 2], max_atoms: usize) -> SourceFunction {
    let n = rng.gen_range(1..=max_atoms);
    let masses = (0..n)
        .map(|_| PointMass {
            location: vec![rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])],
            mass: rng.gen_range(-1.0..1.0),
        })
        .collect();
    SourceFunction::point_masses(masses).unwrap()
}

fn masses_in_disk(rng: &mut ChaCha8Rng, max_atoms: usize) -> SourceFunction {
    let n = rng.gen_range(1..=max_atoms);
    let masses = (0..n)
        .map(|_| {
            let r = 0.98 * rng.gen::<f64>().sqrt();
            let t = rng.gen_range(0.0..2.0 * PI);
            PointMass { location: vec![r * t.cos(), r * t.sin()], mass: rng.gen_range(-1.0..1.0) }
        })
        .collect();
    SourceFunction::point_masses(masses).unwrap()
}

#[test]
fn criterion_1_cancellation() {
    let rule = SphereRule::circle(4096);
    let k = HomogeneousKernel::identity(2, 1.0);
    let rep = cancellation_sweep(&k, &PhiIntegrand::trace_free_quadratic(), 360, &rule, Some(1e-9)).unwrap();
    let fc = PhiIntegrand::first_component_norm();
    let full = full_functional(&k, &fc, 1.0, &rule).unwrap().abs().max(full_functional(&k, &fc, -1.0, &rule).unwrap().abs());
    let hemi = hemisphere_functional(&k, &fc, 1.0, &[1.0, 0.0], &rule).unwrap();
    let pass = rep.pass && rep.max_abs < 1e-9 && full < 1e-10 && (hemi - 2.0).abs() < 1e-6;
    report(1, "cancellation", pass, format!("trace-free max_abs={:.2e}; v1|v| full={full:.2e} hemi(1,0)={hemi:.12}", rep.max_abs));
    assert!(pass);
}

#[test]
fn criterion_2_reflection() {
    let rule = SphereRule::circle(4096);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let k = random_trig_kernel(&mut rng);
        let phi = random_harmonic_phi(&mut rng);
        let full = full_functional(&k, &phi, 1.0, &rule).unwrap();
        for _ in 0..100 {
            let xi = random_unit(&mut rng, 2);
            let m: Vec<f64> = xi.iter().map(|v| -v).collect();
            let s = hemisphere_functional(&k, &phi, 1.0, &xi, &rule).unwrap() + hemisphere_functional(&k, &phi, 1.0, &m, &rule).unwrap();
            worst = worst.max((s - full).abs());
        }
    }
    let pass = worst < 1e-9;
    report(2, "reflection identity", pass, format!("max |hemi(ξ)+hemi(−ξ)−full| = {worst:.2e} over 5 pairs × 100 ξ"));
    assert!(pass);
}

#[test]
fn criterion_3_asymptotics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = random_trig_kernel(&mut rng);
    let f = SourceFunction::bump([0.3, -0.2], 4.0, 1.0).unwrap();
    let dir = random_unit(&mut rng, 2);
    let radii: Vec<f64> = (3..=8).map(|j| 2f64.powi(j)).collect();
    let diffs: Vec<f64> = radii
        .iter()
        .map(|&r| {
            let x = [r * dir[0], r * dir[1]];
            let c = convolve_at(&k, KernelSel::Full, &f, &x, 1e-11).unwrap().value;
            let kx = kernel_eval(&k, &x).unwrap();
            c.iter().zip(&kx).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    let slope = fit_loglog(&radii, &diffs).unwrap().slope;
    // Dilation: K(λx) = λ^{α−d} K(x), and (K∗f_n)(x/n) = n·(K∗f)(x) for f_n = n²f(n·).
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let lam: f64 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let a = kernel_eval(&k, &[lam * x[0], lam * x[1]]).unwrap();
        let b = kernel_eval(&k, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u * lam - v).abs() / v.abs().max(1e-300).max(b.iter().map(|t| t.abs()).fold(0.0, f64::max)));
        }
        let n = rng.gen_range(1.5..6.0);
        let fc = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let s = rng.gen_range(2.0..5.0);
        let f1 = SourceFunction::bump(fc, s, 1.0).unwrap();
        let fnn = SourceFunction::bump([fc[0] / n, fc[1] / n], s * n, 1.0).unwrap();
        let u = convolve_at(&k, KernelSel::Full, &fnn, &[x[0] / n, x[1] / n], 1e-12).unwrap().value;
        let v = convolve_at(&k, KernelSel::Full, &f1, &x, 1e-12).unwrap().value;
        let scale = v.iter().map(|t| t.abs()).fold(0.0, f64::max);
        for (a, b) in u.iter().zip(&v) {
            worst = worst.max((a - n * b).abs() / scale);
        }
    }
    let pass = (-2.1..=-1.9).contains(&slope) && worst < 1e-8;
    report(3, "asymptotics", pass, format!("decay exponent {slope:.4}; dilation max rel dev {worst:.2e} over 20 probes"));
    assert!(pass);
}

#[test]
fn criterion_4_blowup() {
    let start = Instant::now();
    let disk = Domain::ball(vec![0.0, 1.0], 1.0).unwrap();
    let k = HomogeneousKernel::identity(2, 1.0);
    let n_list: Vec<f64> = (4..=10).map(|j| 2f64.powi(j)).collect();
    let anchor = BlowupAnchor::Boundary(vec![0.0, 0.0]);
    let opts = BlowupOpts { cross_checks: 3, ..BlowupOpts::default() };
    let sq = necessity_blowup(&disk, &k, &PhiIntegrand::norm_squared(2), &anchor, &n_list, &opts).unwrap();
    let tf = necessity_blowup(&disk, &k, &PhiIntegrand::trace_free_quadratic(), &anchor, &n_list, &opts).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let s1 = sq.slope.unwrap();
    let s2 = tf.slope.unwrap();
    let cross = |r: &phi_lab::experiments::ExperimentResult| r.details["cross_check_pass"].as_bool() == Some(true);
    let cross_dev = sq.details["cross_check_max_rel"].as_f64().unwrap().max(tf.details["cross_check_max_rel"].as_f64().unwrap());
    // Bounded: the second half of the trace-free series never exceeds the first half by more than the slope budget.
    let vals: Vec<f64> = tf.series.iter().map(|s| s.1.abs()).collect();
    let half = vals.len() / 2;
    let first = vals[..half].iter().cloned().fold(0.0, f64::max);
    let second = vals[half..].iter().cloned().fold(0.0, f64::max);
    let bounded = second <= first + 0.05 * 2.0 * PI * (n_list[n_list.len() - 1] / n_list[half]).ln();
    let pass = (s1 - PI).abs() <= 0.1 * PI && s2.abs() < 0.05 * 2.0 * PI && bounded && cross(&sq) && cross(&tf) && secs < 300.0;
    report(
        4,
        "necessity blow-up",
        pass,
        format!("|v|² slope {s1:.4} (I=π); trace-free slope {s2:.4}, max|value| {second:.4}; cross-check max rel {cross_dev:.2e}; {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_besov() {
    let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let k = HomogeneousKernel::identity(2, 1.0);
    let opts = IntegrateOpts::default();
    let f = SourceFunction::point_masses(vec![
        PointMass { location: vec![0.85, 0.1], mass: 1.0 },
        PointMass { location: vec![-0.3, 0.4], mass: -0.6 },
        PointMass { location: vec![0.1, -0.9], mass: 0.4 },
    ])
    .unwrap();
    let tf = PhiIntegrand::trace_free_quadratic();
    let ratios: Vec<f64> = [4, 6, 8, 10].iter().map(|&m| besov_sum(&f, &disk, &k, &tf, (0, m), &opts).unwrap().ratio).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    let stable = hi <= 1.25 * lo;
    let center = SourceFunction::point_mass(vec![0.0, 0.0], 1.0);
    let s = besov_sum(&center, &disk, &k, &PhiIntegrand::norm_squared(2), (0, 8), &opts).unwrap();
    let exact = 2.0 * PI * 2f64.ln();
    let term_dev = s.terms.iter().map(|t| (t - exact).abs()).fold(0.0, f64::max);
    let ns: Vec<f64> = s.n.iter().map(|&n| n as f64).collect();
    let lin = fit_line(&ns, &s.cumulative).unwrap();
    let linear = (lin.slope - exact).abs() < 1e-6 && lin.rms < 1e-8;
    let pass = stable && term_dev < 1e-6 && linear;
    report(
        5,
        "Besov dichotomy",
        pass,
        format!("trace-free ratios {ratios:.4?} (max/min {:.3}); |v|² central term dev {term_dev:.2e}, cumulative slope {:.8}", hi / lo, lin.slope),
    );
    assert!(pass);
}

#[test]
fn criterion_6_discrete() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let half = Domain::half_space(vec![0.6, 0.8], 0.7).unwrap();
    let mut ledger_fail = 0;
    let mut telescope_fail = 0;
    let mut chains = 0;
    let mut chain_fail = 0;
    let mut above_naive = 0;
    let mut worst_containment: f64 = 0.0;
    for case in 0..1000 {
        let domain = if case % 2 == 0 { &disk } else { &half };
        let gen = rng.gen_range(-1..=2);
        let side = 2f64.powi(-gen);
        let idx = vec![rng.gen_range(-2i64..2), rng.gen_range(-2i64..2)];
        let q = DyadicCube::new(gen, idx);
        let lo = q.lower();
        let f = if case % 50 == 0 {
            let h = side / 16.0;
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let g = GridSource::sample([lo[0], lo[1]], h, [16, 16], |y| {
                ((y[0] - lo[0]) / side - c[0]).sin() + ((y[1] - lo[1]) / side * 7.0 - c[1]).cos()
            })
            .unwrap();
            SourceFunction::grid(g).unwrap()
        } else {
            random_masses(&mut rng, [lo[0], lo[1]], [lo[0] + side, lo[1] + side], 8)
        };
        let p = [1.5, 2.0, 3.0][case % 3];
        let ledger = EnergyLedger::build(&f, &q, domain, p, 12);
        ledger_fail += usize::from(ledger.check().is_err());
        let norm = f.l1_norm().powf(p);
        let (_, raw) = telescope_energy_sum(&f, &q, domain, p, 0.25, 12).unwrap();
        telescope_fail += usize::from(raw > norm * (1.0 + 1e-12));
        if is_boundary_cube(domain, &q) && !f.is_zero() {
            let ch = build_cube_chain(&f, &q, domain, 0.2, p).unwrap();
            chains += 1;
            chain_fail += usize::from(!(ch.mass_bound_holds() && ch.containment_holds()));
            let r = ch.containment_ratio();
            above_naive += usize::from(r > 2f64.sqrt() + 1.0);
            worst_containment = worst_containment.max(r);
        }
    }
    let ns = new_simple_probe(100_000, 6, &[1.5, 2.0, 3.0], 6).unwrap();
    let pass = ledger_fail == 0 && telescope_fail == 0 && chain_fail == 0 && chains > 0 && ns.per_p.iter().all(|x| x.1 > 0.0);
    report(
        6,
        "discrete machinery",
        pass,
        format!(
            "ledger failures {ledger_fail}/1000; telescope failures {telescope_fail}; chains {chains}, bound failures {chain_fail}, \
             worst containment {worst_containment:.3} (C={:.3}, {above_naive} above √2+1); new_simple min ratio {:.3e}",
            containment_constant(2),
            ns.min_ratio
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_theorem41_constant() {
    let disk = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
    let k = HomogeneousKernel::identity(2, 1.0);
    let tf = PhiIntegrand::trace_free_quadratic();
    let opts = IntegrateOpts::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ratios = Vec::new();
    let mut unbounded = 0;
    for _ in 0..100 {
        let f = masses_in_disk(&mut rng, 4);
        let mut worst: f64 = 0.0;
        for n in 0..=6 {
            let s = theorem41_sides(&f, n, &disk, &k, &tf, CubeDilation::Triple, &opts).unwrap();
            if s.rhs() > 0.0 {
                worst = worst.max(s.lhs / s.rhs());
            } else if s.lhs > 1e-9 * f.l1_norm().powi(2) {
                unbounded += 1;
            }
        }
        ratios.push(worst);
    }
    let c_first = ratios[..50].iter().cloned().fold(0.0, f64::max);
    let c_second = ratios[50..].iter().cloned().fold(0.0, f64::max);
    let single_c = unbounded == 0 && c_second <= 2.0 * c_first;
    // The boundary-layer defect behind the third sum decays like 2^{−βn}.
    let ns: Vec<i32> = (2..=7).collect();
    let defects: Vec<f64> = ns.iter().map(|&n| boundary_defect(&disk, &k, &tf, n, 16, &opts).unwrap()).collect();
    let x: Vec<f64> = ns.iter().map(|&n| n as f64 * 2f64.ln()).collect();
    let y: Vec<f64> = defects.iter().map(|d| d.ln()).collect();
    let decay = -fit_line(&x, &y).unwrap().slope;
    // Third sum itself for a fixed Lipschitz f: a narrow bump touching the boundary.
    let bump = SourceFunction::bump([0.995, 0.0], 256.0, 1.0).unwrap();
    let t3: Vec<f64> = (0..=6).map(|n| theorem41_cube_sums(&bump, n, &disk, 2.0, CubeDilation::Triple).unwrap().2).collect();
    let xs: Vec<f64> = (0..=6).map(|n| n as f64 * 2f64.ln()).collect();
    let term3_decay = -fit_line(&xs, &t3.iter().map(|t| t.ln()).collect::<Vec<_>>()).unwrap().slope;
    let pass = single_c && (decay - disk.beta()).abs() <= 0.3 && (term3_decay - disk.beta()).abs() <= 0.3;
    report(
        7,
        "dyadic bound constant",
        pass,
        format!("C first half {c_first:.4}, second half {c_second:.4}, unbounded {unbounded}; term3 decay exponent {term3_decay:.4}, defect decay exponent {decay:.4} (β=1)"),
    );
    assert!(pass);
}

fn strip_timestamp(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    text.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n").into_bytes()
}

#[test]
fn criterion_8_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ratio.toml");
    std::fs::write(
        &cfg,
        "[kernel]\nkind = \"identity\"\n\n[phi]\nkind = \"trace_free\"\n\n[domain]\nkind = \"ball\"\ncenter = [0.0, 0.0]\nradius = 1.0\n\n\
         [experiment]\nseed = 11\ntrials = 12\n\n[experiment.sampler]\nmax_atoms = 3\n",
    )
    .unwrap();
    let run = |threads: &str, out: &str| -> Vec<u8> {
        let out = dir.path().join(out);
        let status = Command::new(env!("CARGO_BIN_EXE_phi-lab"))
            .args(["ratio", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .output()
            .unwrap()
            .status;
        assert!(status.code() == Some(0) || status.code() == Some(2), "{status}");
        let json: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "json")).collect();
        assert_eq!(json.len(), 1);
        strip_timestamp(&std::fs::read(&json[0]).unwrap())
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("8", "c");
    let pass = a == b && a == c && !a.is_empty();
    report(8, "reproducibility", pass, format!("{} bytes; repeat identical {}; threads 1 vs 8 identical {}", a.len(), a == b, a == c));
    assert!(pass);
}
