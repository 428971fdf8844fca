//! Quadrature on the unit sphere `S^{d−1}` (d = 2, 3) and the cancellation
//! functionals built from it.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::kernel::{norm, HomogeneousKernel, PhiIntegrand, MAX_TARGET};
use crate::quad::{adaptive, AdaptiveOpts, GaussLegendre};

/// Dead band around the equator `⟨ζ, ξ⟩ = 0`.
pub const EQUATOR_EPS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RuleKind {
    /// Composite trapezoid in angle with `n` nodes.
    Circle { n: usize },
    /// Gauss–Legendre in polar angle on each half `[0, π/2]`, `[π/2, π]`
    /// (`n_polar` nodes each) times an `n_azimuth`-point trapezoid.
    Sphere { n_polar: usize, n_azimuth: usize },
}

/// Nodes and weights on `S^{d−1}`.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    pub kind: RuleKind,
    /// Flattened unit vectors, `dim` entries per node.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// Trapezoid rule on the circle, first node at angle `offset`.
    pub fn circle(n: usize) -> Self {
        Self::circle_from(n, 0.0)
    }

    fn circle_from(n: usize, offset: f64) -> Self {
        assert!(n >= 4, "circle rule needs at least 4 nodes");
        let mut nodes = Vec::with_capacity(2 * n);
        for i in 0..n {
            let t = offset + 2.0 * PI * i as f64 / n as f64;
            nodes.push(t.cos());
            nodes.push(t.sin());
        }
        Self { dim: 2, kind: RuleKind::Circle { n }, nodes, weights: vec![2.0 * PI / n as f64; n] }
    }

    /// Product rule on `S²` with the polar axis `e₃`.
    pub fn sphere(n_polar: usize, n_azimuth: usize) -> Self {
        Self::sphere_about([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], n_polar, n_azimuth)
    }

    fn sphere_about(frame: [[f64; 3]; 3], n_polar: usize, n_azimuth: usize) -> Self {
        let gl = GaussLegendre::new(n_polar);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (lo, hi) in [(0.0, 0.5 * PI), (0.5 * PI, PI)] {
            let half = 0.5 * (hi - lo);
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                let th: f64 = lo + half * (x + 1.0);
                for j in 0..n_azimuth {
                    let ph = 2.0 * PI * j as f64 / n_azimuth as f64;
                    let local = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
                    nodes.extend((0..3).map(|k| local[0] * frame[0][k] + local[1] * frame[1][k] + local[2] * frame[2][k]));
                    weights.push(w * half * th.sin() * 2.0 * PI / n_azimuth as f64);
                }
            }
        }
        Self { dim: 3, kind: RuleKind::Sphere { n_polar, n_azimuth }, nodes, weights }
    }

    /// Default rule for a dimension: 4096-node circle or 32×128 sphere.
    pub fn default_for(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(Self::circle(4096)),
            3 => Ok(Self::sphere(32, 128)),
            _ => Err(Error::Unsupported(format!("sphere quadrature in d = {dim}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Same rule type rotated so that `xi` is a distinguished direction:
    /// in the plane the first node sits at `ξ`, on `S²` the polar axis is `ξ`.
    /// Hemispheres about `ξ` are then unions of whole panels.
    pub fn aligned(&self, xi: &[f64]) -> Self {
        match self.kind {
            RuleKind::Circle { n } => Self::circle_from(n, xi[1].atan2(xi[0])),
            RuleKind::Sphere { n_polar, n_azimuth } => Self::sphere_about(frame_with_axis(xi), n_polar, n_azimuth),
        }
    }

    /// The rule with its node count doubled.
    pub fn refined(&self) -> Self {
        match self.kind {
            RuleKind::Circle { n } => Self::circle(2 * n),
            RuleKind::Sphere { n_polar, n_azimuth } => Self::sphere(2 * n_polar, 2 * n_azimuth),
        }
    }

    pub fn total_measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn frame_with_axis(xi: &[f64]) -> [[f64; 3]; 3] {
    let a = [xi[0], xi[1], xi[2]];
    let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = helper[0] * a[0] + helper[1] * a[1] + helper[2] * a[2];
    let mut e1 = [helper[0] - dot * a[0], helper[1] - dot * a[1], helper[2] - dot * a[2]];
    let n1 = norm(&e1);
    for v in e1.iter_mut() {
        *v /= n1;
    }
    let e2 = [a[1] * e1[2] - a[2] * e1[1], a[2] * e1[0] - a[0] * e1[2], a[0] * e1[1] - a[1] * e1[0]];
    [e1, e2, a]
}

/// `Σ wᵢ g(ζᵢ)` in node order.
pub fn sphere_integral<F: Fn(&[f64]) -> f64>(g_dim: usize, g: F, rule: &SphereRule) -> Result<f64> {
    if g_dim != rule.dim {
        return Err(Error::DimensionMismatch { expected: rule.dim, got: g_dim });
    }
    Ok((0..rule.len()).map(|i| rule.weights[i] * g(rule.node(i))).sum())
}

fn phi_of_kernel(kernel: &HomogeneousKernel, phi: &PhiIntegrand, sign: f64, zeta: &[f64]) -> f64 {
    let mut v = [0.0; MAX_TARGET];
    kernel.sphere_into(zeta, &mut v);
    for x in v.iter_mut() {
        *x *= sign;
    }
    phi.eval(&v[..kernel.target_dim])
}

fn check_pair(kernel: &HomogeneousKernel, phi: &PhiIntegrand, rule: &SphereRule) -> Result<()> {
    if kernel.dim != rule.dim {
        return Err(Error::DimensionMismatch { expected: rule.dim, got: kernel.dim });
    }
    if kernel.target_dim != phi.target_dim {
        return Err(Error::DimensionMismatch { expected: kernel.target_dim, got: phi.target_dim });
    }
    Ok(())
}

/// `∫_{S^{d−1}} Φ(sign·K(ζ)) dσ`.
pub fn full_functional(kernel: &HomogeneousKernel, phi: &PhiIntegrand, sign: f64, rule: &SphereRule) -> Result<f64> {
    check_pair(kernel, phi, rule)?;
    sphere_integral(rule.dim, |z| phi_of_kernel(kernel, phi, sign, z), rule)
}

/// `∫_{S^{d−1}} |Φ(K(ζ))| dσ`, the scale of every cancellation test.
pub fn abs_functional(kernel: &HomogeneousKernel, phi: &PhiIntegrand, rule: &SphereRule) -> Result<f64> {
    check_pair(kernel, phi, rule)?;
    sphere_integral(rule.dim, |z| phi_of_kernel(kernel, phi, 1.0, z).abs(), rule)
}

/// `∫_{⟨ζ,ξ⟩>0} Φ(sign·K(ζ)) dσ(ζ)`; equator nodes carry half weight.
pub fn hemisphere_functional(
    kernel: &HomogeneousKernel,
    phi: &PhiIntegrand,
    sign: f64,
    xi: &[f64],
    rule: &SphereRule,
) -> Result<f64> {
    check_pair(kernel, phi, rule)?;
    if xi.len() != rule.dim {
        return Err(Error::DimensionMismatch { expected: rule.dim, got: xi.len() });
    }
    let xn = norm(xi);
    let xi: Vec<f64> = xi.iter().map(|v| v / xn).collect();
    let aligned = rule.aligned(&xi);
    let mut acc = 0.0;
    for i in 0..aligned.len() {
        let z = aligned.node(i);
        let s: f64 = z.iter().zip(&xi).map(|(a, b)| a * b).sum();
        let w = if s > EQUATOR_EPS {
            aligned.weights[i]
        } else if s >= -EQUATOR_EPS {
            0.5 * aligned.weights[i]
        } else {
            continue;
        };
        acc += w * phi_of_kernel(kernel, phi, sign, z);
    }
    Ok(acc)
}

/// Sweep of both hemispherical conditions over a grid of directions.
#[derive(Debug, Clone, Serialize)]
pub struct CancellationReport {
    pub xi_grid: Vec<Vec<f64>>,
    pub values_plus: Vec<f64>,
    pub values_minus: Vec<f64>,
    pub full_plus: f64,
    pub full_minus: f64,
    pub max_abs: f64,
    pub pass: bool,
    pub tolerance: f64,
    /// `∫|Φ(K)| dσ`.
    pub abs_integral: f64,
}

impl CancellationReport {
    /// One row per ξ: components, value_plus, value_minus.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let d = self.xi_grid.first().map_or(0, |x| x.len());
        let mut header: Vec<String> = (0..d).map(|i| format!("xi{}", i + 1)).collect();
        header.push("value_plus".into());
        header.push("value_minus".into());
        wr.write_record(&header)?;
        for ((x, p), m) in self.xi_grid.iter().zip(&self.values_plus).zip(&self.values_minus) {
            let mut row: Vec<String> = x.iter().map(|v| fmt17(*v)).collect();
            row.push(fmt17(*p));
            row.push(fmt17(*m));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Floats in artifacts: 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Equispaced directions in the plane; Fibonacci lattice on `S²`.
pub fn xi_grid(dim: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    match dim {
        2 => Ok((0..count)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect()),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            Ok((0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let ph = golden * k as f64;
                    vec![r * ph.cos(), r * ph.sin(), z]
                })
                .collect())
        }
        _ => Err(Error::Unsupported(format!("direction grids in d = {dim}"))),
    }
}

/// Evaluates both hemisphere functionals over `xi_count` directions plus
/// both full-sphere integrals. `tol = None` uses `1e−8·∫|Φ(K)|`.
pub fn cancellation_sweep(
    kernel: &HomogeneousKernel,
    phi: &PhiIntegrand,
    xi_count: usize,
    rule: &SphereRule,
    tol: Option<f64>,
) -> Result<CancellationReport> {
    if xi_count == 0 {
        return Err(Error::Domain("xi_count must be at least 1".into()));
    }
    check_pair(kernel, phi, rule)?;
    let grid = xi_grid(rule.dim, xi_count)?;
    let values: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|xi| {
            Ok((
                hemisphere_functional(kernel, phi, 1.0, xi, rule)?,
                hemisphere_functional(kernel, phi, -1.0, xi, rule)?,
            ))
        })
        .collect::<Result<_>>()?;
    let full_plus = full_functional(kernel, phi, 1.0, rule)?;
    let full_minus = full_functional(kernel, phi, -1.0, rule)?;
    let abs_integral = abs_functional(kernel, phi, rule)?;
    let tolerance = tol.unwrap_or(1e-8 * abs_integral);
    let (values_plus, values_minus): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
    let max_abs = values_plus
        .iter()
        .chain(&values_minus)
        .chain([&full_plus, &full_minus])
        .fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(CancellationReport {
        xi_grid: grid,
        values_plus,
        values_minus,
        full_plus,
        full_minus,
        max_abs,
        pass: max_abs <= tolerance,
        tolerance,
        abs_integral,
    })
}

/// Angular intervals of the unit circle (as `(start, end)`, `end > start`)
/// on which `z + ρζ ∈ Ω`.
pub fn arcs_inside(domain: &Domain, z: [f64; 2], rho: f64) -> Vec<(f64, f64)> {
    let cuts = domain.circle_crossings(z, rho);
    arcs_between(cuts, |t| domain.contains2([z[0] + rho * t.cos(), z[1] + rho * t.sin()]))
}

/// Splits the circle at `cuts` and keeps the arcs whose midpoint satisfies `keep`.
pub fn arcs_between<F: Fn(f64) -> bool>(cuts: Vec<f64>, keep: F) -> Vec<(f64, f64)> {
    let mut c: Vec<f64> = cuts.into_iter().map(|t| t.rem_euclid(2.0 * PI)).collect();
    c.sort_by(f64::total_cmp);
    c.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if c.is_empty() {
        return if keep(0.0) { vec![(0.0, 2.0 * PI)] } else { Vec::new() };
    }
    let n = c.len();
    let mut out = Vec::new();
    for i in 0..n {
        let a = c[i];
        let b = if i + 1 < n { c[i + 1] } else { c[0] + 2.0 * PI };
        if b - a <= 0.0 {
            continue;
        }
        if keep(0.5 * (a + b)) {
            out.push((a, b));
        }
    }
    out
}

/// `Ψ(ρ) = ∫_{S¹ ∩ ρ^{−1}(Ω − z)} Φ(sign·K(ζ)) dσ(ζ)` (planar domains).
pub fn psi_profile(
    domain: &Domain,
    z: &[f64],
    kernel: &HomogeneousKernel,
    phi: &PhiIntegrand,
    sign: f64,
    rho: f64,
    rule: &SphereRule,
) -> Result<f64> {
    check_pair(kernel, phi, rule)?;
    if rule.dim != 2 || domain.dim() != 2 {
        return Err(Error::Unsupported("Ψ profile is implemented for planar domains".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("ρ must be positive, got {rho}")));
    }
    let arcs = arcs_inside(domain, [z[0], z[1]], rho);
    let opts = AdaptiveOpts::new(1e-13, 1e-12);
    let g = |t: f64| phi_of_kernel(kernel, phi, sign, &[t.cos(), t.sin()]);
    Ok(arcs.iter().map(|(a, b)| adaptive(g, *a, *b, opts).value).sum())
}
