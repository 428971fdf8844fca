//! Command-line driver: parses flags, resolves the config, runs one
//! subcommand and writes `<experiment>-<hash>.{json,csv}` artifacts.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::besov::{
    besov_sum, build_cube_chain, containment_constant, default_epsilon, mp_interaction_sum, new_simple_probe, second_core_ratio, theorem41_sides,
    EnergyLedger,
};
use crate::config::{Resolved, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    inequality_ratio_sweep, mazya_gradient_demo, necessity_blowup, resolve_anchor, BlowupAnchor, BlowupOpts, ExperimentResult,
};
use crate::geometry::{is_boundary_cube, Domain, DyadicCube};
use crate::kernel::{random_unit, HomogeneousKernel, KernelSel, PhiIntegrand};
use crate::source::{convolve_field, PointMass, SourceFunction};
use crate::spherical::{cancellation_sweep, fmt17, full_functional, hemisphere_functional, psi_profile, SphereRule};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Cancel,
    Psi,
    Conv,
    Blowup,
    Ratio,
    Besov,
    Interaction,
    Chain,
    Theorem41,
    DemoGradient,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Cancel => "cancel",
            Command::Psi => "psi",
            Command::Conv => "conv",
            Command::Blowup => "blowup",
            Command::Ratio => "ratio",
            Command::Besov => "besov",
            Command::Interaction => "interaction",
            Command::Chain => "chain",
            Command::Theorem41 => "theorem41",
            Command::DemoGradient => "demo-gradient",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "phi-lab", version, about = "Numerical experiments for Φ-inequalities with homogeneous kernels")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Validate and print the resolved config without computing.
    #[arg(long)]
    pub dry_run: bool,
    /// Overrides `numerics.rel_tol`.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// What a subcommand hands back to the driver.
pub struct Outcome {
    pub result: Value,
    pub csv: Vec<u8>,
    pub pass: bool,
    pub warnings: Vec<String>,
    pub summary: String,
}

impl Outcome {
    fn from_experiment(r: ExperimentResult, summary: String) -> Result<Self> {
        let mut csv = Vec::new();
        r.write_csv(&mut csv)?;
        Ok(Self { pass: r.pass, warnings: r.warnings.clone(), result: serde_json::to_value(&r)?, csv, summary })
    }
}

/// Paths of the written artifacts.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub hash: String,
}

/// Hash of the subcommand and resolved config; the timestamp never enters it.
pub fn config_hash(command: Command, cfg: &RunConfig) -> Result<String> {
    let canon = serde_json::to_string(&json!({ "subcommand": command.name(), "config": cfg }))?;
    let digest = Sha256::digest(canon.as_bytes());
    Ok(hex::encode(digest)[..16].to_string())
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn default_config() -> RunConfig {
    RunConfig::from_toml_str("[kernel]\nkind = \"identity\"\n").expect("built-in config")
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::from_toml_str(&text)?, base)
        }
        None if cli.command == Command::Selftest => (default_config(), PathBuf::new()),
        None => return Err(Error::Config(format!("`{}` needs --config", cli.command.name()))),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0) {
            return Err(Error::Config("--tol must be positive".into()));
        }
        cfg.numerics.rel_tol = t;
    }
    Ok((cfg, base))
}

/// Checks done before any computation, beyond what `resolve` covers.
fn prevalidate(command: Command, r: &Resolved) -> Result<()> {
    let e = &r.config.experiment;
    match command {
        Command::Ratio => e.sampler.validate(r.domain()?)?,
        Command::Conv if e.grid.is_none() => return Err(Error::Config("conv needs experiment.grid".into())),
        Command::Chain if e.cube.is_none() => return Err(Error::Config("chain needs experiment.cube".into())),
        Command::Besov | Command::Interaction | Command::Theorem41 if e.n_max < e.n_min => {
            return Err(Error::Config("experiment.n_max must be ≥ n_min".into()))
        }
        _ => {}
    }
    Ok(())
}

/// Runs the parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run_inner(cli: &Cli) -> Result<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be ≥ 1".into()));
        }
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (cfg, base) = load_config(cli)?;
    let resolved = cfg.resolve(&base)?;
    prevalidate(cli.command, &resolved)?;
    if cli.dry_run {
        println!("# {} (dry run)\n{}", cli.command.name(), cfg.to_toml_string()?);
        return Ok(0);
    }
    let outcome = execute(cli.command, &resolved)?;
    let art = write_artifacts(cli.command, &cfg, &outcome, &cli.out)?;
    println!("{} pass={} {} -> {}", cli.command.name(), outcome.pass, outcome.summary, art.json.display());
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if outcome.warnings.is_empty() { 0 } else { 2 })
}

pub fn write_artifacts(command: Command, cfg: &RunConfig, o: &Outcome, out: &Path) -> Result<Artifacts> {
    std::fs::create_dir_all(out)?;
    let hash = config_hash(command, cfg)?;
    let stem = format!("{}-{}", command.name(), hash);
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "subcommand": command.name(),
        "config_hash": hash,
        "config": cfg,
        "pass": o.pass,
        "warnings": o.warnings,
        "summary": o.summary,
        "result": o.result,
        "timestamp": timestamp(),
    });
    let json_path = out.join(format!("{stem}.json"));
    let csv_path = out.join(format!("{stem}.csv"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    std::fs::write(&csv_path, &o.csv)?;
    Ok(Artifacts { json: json_path, csv: csv_path, hash })
}

fn csv_rows(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        wr.write_record(header)?;
        for r in rows {
            wr.write_record(&r)?;
        }
        wr.flush()?;
    }
    Ok(buf)
}

fn anchor_of(r: &Resolved) -> Result<BlowupAnchor> {
    let e = &r.config.experiment;
    Ok(match (&e.point, &e.direction) {
        (Some(p), _) => BlowupAnchor::Boundary(p.clone()),
        (None, Some(d)) => BlowupAnchor::Direction(d.clone()),
        (None, None) => {
            let mut xi = vec![0.0; r.kernel.dim];
            xi[r.kernel.dim - 1] = 1.0;
            BlowupAnchor::Direction(xi)
        }
    })
}

/// Runs one subcommand on a resolved config.
pub fn execute(command: Command, r: &Resolved) -> Result<Outcome> {
    let cfg = &r.config;
    let e = &cfg.experiment;
    let opts = cfg.integrate_opts();
    match command {
        Command::Cancel => {
            let rule = cfg.sphere_rule(r.kernel.dim)?;
            let rep = cancellation_sweep(&r.kernel, r.phi()?, e.xi_count, &rule, cfg.numerics.cancel_tol)?;
            let mut csv = Vec::new();
            rep.write_csv(&mut csv)?;
            let summary = format!("max_abs={:.3e} tol={:.3e}", rep.max_abs, rep.tolerance);
            Ok(Outcome { pass: rep.pass, warnings: Vec::new(), result: serde_json::to_value(&rep)?, csv, summary })
        }
        Command::Psi => {
            let domain = r.domain()?;
            let phi = r.phi()?;
            let (z, xi) = resolve_anchor(domain, &anchor_of(r)?)?;
            let rule = cfg.sphere_rule(2)?;
            let rho: Vec<f64> = if e.rho.is_empty() {
                let top = if domain.is_bounded() { 1.05 * domain.max_distance_from([z[0], z[1]]) } else { 10.0 };
                (0..64).map(|i| 1e-3 * (top / 1e-3).powf(i as f64 / 63.0)).collect()
            } else {
                e.rho.clone()
            };
            let vals: Vec<f64> = rho.iter().map(|&p| psi_profile(domain, &z, &r.kernel, phi, 1.0, p, &rule)).collect::<Result<_>>()?;
            let reference = hemisphere_functional(&r.kernel, phi, 1.0, &xi, &rule)?;
            let csv = csv_rows(&["rho", "psi"], rho.iter().zip(&vals).map(|(a, b)| vec![fmt17(*a), fmt17(*b)]))?;
            let small = rho.iter().zip(&vals).filter(|(p, _)| **p <= 1e-2).map(|(_, v)| (v - reference).abs()).fold(0.0, f64::max);
            let pass = small <= 0.05 * reference.abs().max(1.0);
            let result = json!({ "anchor": z, "normal": xi, "rho": rho, "psi": vals, "reference": reference, "max_dev_small_rho": small });
            Ok(Outcome { result, csv, pass, warnings: Vec::new(), summary: format!("I={reference:.6} max_dev(ρ≤1e-2)={small:.3e}") })
        }
        Command::Conv => {
            let f = r.source()?;
            let spec = e.grid.expect("checked");
            let sel = e.piece.unwrap_or(KernelSel::Full);
            let field = convolve_field(&r.kernel, sel, &f, &spec, cfg.numerics.conv_tol)?;
            let mut csv = Vec::new();
            field.write_csv(&mut csv)?;
            let warnings = if field.warning { vec!["grid convolution hit the subdivision cap".into()] } else { Vec::new() };
            let summary = format!("cells={} l1={:.6e}", spec.extents[0] * spec.extents[1], field.l1_norm());
            let result = json!({ "grid": spec, "piece": sel, "components": field.components, "l1_norm": field.l1_norm(), "warning": field.warning });
            Ok(Outcome { result, csv, pass: !field.warning, warnings, summary })
        }
        Command::Blowup => {
            let bo = BlowupOpts { offset: e.offset, mechanism: e.mechanism, cross_checks: e.cross_checks, direct: e.direct, sign: 1.0 };
            let mut res = necessity_blowup(r.domain()?, &r.kernel, r.phi()?, &anchor_of(r)?, &e.n_list, &bo)?;
            res.config = serde_json::to_value(cfg)?;
            let summary = format!("slope={:.6} I={:.6}", res.slope.unwrap_or(f64::NAN), res.reference.unwrap_or(f64::NAN));
            Outcome::from_experiment(res, summary)
        }
        Command::Ratio => {
            let mut res = inequality_ratio_sweep(r.domain()?, &r.kernel, r.phi()?, &e.sampler, e.trials, e.seed, &opts)?;
            res.config = serde_json::to_value(cfg)?;
            let summary = format!("max_ratio={:.6e}", res.series.last().map_or(0.0, |s| s.1));
            Outcome::from_experiment(res, summary)
        }
        Command::Besov | Command::Interaction => {
            let f = r.source()?;
            let s = if command == Command::Besov {
                besov_sum(&f, r.domain()?, &r.kernel, r.phi()?, (e.n_min, e.n_max), &opts)?
            } else {
                let p = r.phi.as_ref().map_or(r.kernel.dim as f64 / (r.kernel.dim as f64 - r.kernel.alpha), |p| p.p);
                mp_interaction_sum(&f, r.domain()?, &r.kernel, p, (e.n_min, e.n_max), &opts)?
            };
            let mut csv = Vec::new();
            s.write_csv(&mut csv)?;
            let warnings = if s.converged { Vec::new() } else { vec!["some piece integrals did not reach tolerance".into()] };
            let summary = format!("sum={:.6e} ratio={:.6e}", s.sum, s.ratio);
            Ok(Outcome { pass: s.converged && s.sum.is_finite(), result: serde_json::to_value(&s)?, csv, warnings, summary })
        }
        Command::Chain => {
            let f = r.source()?;
            let domain = r.domain()?;
            let q: DyadicCube = e.cube.clone().expect("checked");
            let p = r.phi.as_ref().map_or(r.kernel.dim as f64 / (r.kernel.dim as f64 - r.kernel.alpha), |p| p.p);
            let chain = build_cube_chain(&f, &q, domain, e.delta, p)?;
            let ledger = EnergyLedger::build(&f, &q, domain, p, e.m_max);
            let ledger_ok = ledger.check();
            let eps = default_epsilon(p, e.delta)?;
            let core = match second_core_ratio(&f, &q, domain, p, eps, e.delta) {
                Ok(c) => Some(c),
                Err(Error::Domain(_)) => None,
                Err(err) => return Err(err),
            };
            let containment = chain.containment_ratio();
            let bound = containment_constant(q.dim());
            let mut csv = Vec::new();
            ledger.write_csv(&mut csv)?;
            let pass = ledger_ok.is_ok() && chain.mass_bound_holds() && chain.containment_holds();
            let result = json!({
                "chain": chain,
                "containment_ratio": containment,
                "containment_bound": bound,
                "containment_within_bound": containment <= bound,
                "mass_bound_holds": chain.mass_bound_holds(),
                "ledger": ledger,
                "ledger_error": ledger_ok.err().map(|x| x.to_string()),
                "epsilon": eps,
                "second_core": core,
            });
            let summary = format!("generations={} stop={:?} containment={containment:.4}", chain.cubes.len(), chain.stop);
            Ok(Outcome { result, csv, pass, warnings: Vec::new(), summary })
        }
        Command::Theorem41 => {
            let f = r.source()?;
            let rows: Vec<_> = (e.n_min..=e.n_max)
                .map(|n| theorem41_sides(&f, n, r.domain()?, &r.kernel, r.phi()?, e.dilation, &opts))
                .collect::<Result<_>>()?;
            let ratio = |s: &crate::besov::Theorem41Sides| if s.rhs() > 0.0 { s.lhs / s.rhs() } else { 0.0 };
            let csv = csv_rows(
                &["n", "lhs", "term1", "term2", "term3", "ratio"],
                rows.iter().map(|s| vec![s.n.to_string(), fmt17(s.lhs), fmt17(s.term1), fmt17(s.term2), fmt17(s.term3), fmt17(ratio(s))]),
            )?;
            let c = rows.iter().map(ratio).fold(0.0, f64::max);
            let unbounded = rows.iter().any(|s| s.rhs() == 0.0 && s.lhs > 1e-9 * f.l1_norm().powf(r.phi().map_or(2.0, |p| p.p)));
            let result = json!({ "rows": rows, "max_ratio": c, "dilation": e.dilation });
            Ok(Outcome { result, csv, pass: !unbounded, warnings: Vec::new(), summary: format!("max lhs/rhs={c:.4e}") })
        }
        Command::DemoGradient => {
            let phi = r.phi()?;
            let masses = if e.masses.is_empty() {
                return Err(Error::Config("demo-gradient needs experiment.masses".into()));
            } else {
                e.masses.clone()
            };
            let mut res = mazya_gradient_demo(r.domain()?, phi, &masses, &e.excision_sweep, &opts)?;
            res.config = serde_json::to_value(cfg)?;
            let summary = match res.slope {
                Some(s) => format!("slope={s:.6} reference={:.6}", res.reference.unwrap_or(f64::NAN)),
                None => format!("lhs={:.6e}", res.series[0].1),
            };
            Outcome::from_experiment(res, summary)
        }
        Command::Selftest => selftest(e.seed),
    }
}

/// A quick pass over the core invariants.
pub fn selftest(seed: u64) -> Result<Outcome> {
    let mut checks: Vec<(String, bool, f64)> = Vec::new();
    let rule = SphereRule::circle(4096);
    let k = HomogeneousKernel::identity(2, 1.0);
    let tf = PhiIntegrand::trace_free_quadratic();
    let rep = cancellation_sweep(&k, &tf, 360, &rule, Some(1e-9))?;
    checks.push(("cancel_trace_free".into(), rep.pass, rep.max_abs));
    let fc = PhiIntegrand::first_component_norm();
    let full = full_functional(&k, &fc, 1.0, &rule)?.abs().max(full_functional(&k, &fc, -1.0, &rule)?.abs());
    checks.push(("full_sphere_first_component".into(), full < 1e-10, full));
    let hemi = hemisphere_functional(&k, &fc, 1.0, &[1.0, 0.0], &rule)?;
    checks.push(("hemisphere_first_component".into(), (hemi - 2.0).abs() < 1e-6, hemi));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut refl: f64 = 0.0;
    for _ in 0..20 {
        let xi = random_unit(&mut rng, 2);
        let m: Vec<f64> = xi.iter().map(|v| -v).collect();
        let s = hemisphere_functional(&k, &fc, 1.0, &xi, &rule)? + hemisphere_functional(&k, &fc, 1.0, &m, &rule)?;
        refl = refl.max((s - full_functional(&k, &fc, 1.0, &rule)?).abs());
    }
    checks.push(("reflection_identity".into(), refl < 1e-9, refl));
    let disk = Domain::ball(vec![0.0, 0.0], 1.0)?;
    let q = DyadicCube::new(0, vec![0, 0]);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..100 {
        use rand::Rng;
        let n = rng.gen_range(1..8);
        let masses: Vec<PointMass> = (0..n)
            .map(|_| PointMass { location: vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], mass: rng.gen_range(-1.0..1.0) })
            .collect();
        let f = SourceFunction::point_masses(masses)?;
        let l = EnergyLedger::build(&f, &q, &disk, 2.0, 12);
        ok &= l.check().is_ok();
        for w in l.e_b.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    checks.push(("boundary_energy_monotone".into(), ok, worst));
    let ns = new_simple_probe(10_000, 6, &[1.5, 2.0, 3.0], seed)?;
    checks.push(("new_simple_min_ratio".into(), ns.min_ratio > 0.0, ns.min_ratio));
    let d2 = Domain::ball(vec![0.0, 1.0], 1.0)?;
    let n_list: Vec<f64> = (4..=10).map(|j| 2f64.powi(j)).collect();
    let b = necessity_blowup(&d2, &k, &PhiIntegrand::norm_squared(2), &BlowupAnchor::Boundary(vec![0.0, 0.0]), &n_list, &BlowupOpts { cross_checks: 1, ..BlowupOpts::default() })?;
    let slope = b.slope.unwrap_or(f64::NAN);
    checks.push(("blowup_slope_pi".into(), (slope - PI).abs() <= 0.1 * PI, slope));
    checks.push(("boundary_cube_rule".into(), is_boundary_cube(&disk, &DyadicCube::new(0, vec![0, 0])), 0.0));
    let pass = checks.iter().all(|c| c.1);
    let csv = csv_rows(&["check", "pass", "value"], checks.iter().map(|c| vec![c.0.clone(), c.1.to_string(), fmt17(c.2)]))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let summary = format!("checks={} failed={}", checks.len(), failed.len());
    let result = json!({ "checks": checks.iter().map(|c| json!({"check": c.0, "pass": c.1, "value": c.2})).collect::<Vec<_>>() });
    Ok(Outcome { result, csv, pass, warnings: Vec::new(), summary })
}

/// Entry point shared by the binary: parse errors exit 1, help/version exit 0.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
