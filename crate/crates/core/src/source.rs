//! Compactly supported sources `f` and the convolutions `K∗f`, `K_n∗f`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{norm, HomogeneousKernel, KVec, KernelSel, KernelSphereMap, MAX_TARGET};
use crate::quad::{adaptive, AdaptiveOpts, GaussLegendre};
use crate::spherical::fmt17;

/// `∫_{B(0,1)} (1 − |t|²)² dt` in the plane.
pub const BUMP_NORMALIZER: f64 = PI / 3.0;
/// Depth cap of the singular-cell subdivision for grid sources.
pub const GRID_DEPTH_CAP: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    pub location: Vec<f64>,
    pub mass: f64,
}

/// `mass · n² φ(n(y − center)) / Z` with `φ(t) = (1 − |t|²)²₊`, supported in
/// the disk of radius `1/scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub scale: f64,
    pub mass: f64,
}

impl Bump {
    pub fn radius(&self) -> f64 {
        1.0 / self.scale
    }

    #[inline]
    pub fn density(&self, y: [f64; 2]) -> f64 {
        let t2 = ((y[0] - self.center[0]).powi(2) + (y[1] - self.center[1]).powi(2)) * self.scale * self.scale;
        if t2 >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - t2;
        self.mass * self.scale * self.scale * w * w / BUMP_NORMALIZER
    }

    /// Fraction of the mass within distance `s` of the center.
    pub fn mass_fraction_within(&self, s: f64) -> f64 {
        let u2 = (s * self.scale).powi(2);
        if u2 >= 1.0 {
            1.0
        } else {
            1.0 - (1.0 - u2).powi(3)
        }
    }

    pub fn sup_density(&self) -> f64 {
        self.mass.abs() * self.scale * self.scale / BUMP_NORMALIZER
    }
}

/// Piecewise-constant density on a uniform planar grid of square cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSource {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub extents: [usize; 2],
    /// Row-major (`x` fastest) cell densities.
    pub values: Vec<f64>,
}

impl GridSource {
    pub fn new(origin: [f64; 2], spacing: f64, extents: [usize; 2], values: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) || extents[0] == 0 || extents[1] == 0 {
            return Err(Error::Config("grid needs positive spacing and extents".into()));
        }
        if values.len() != extents[0] * extents[1] {
            return Err(Error::Config(format!(
                "grid of {}×{} cells needs {} values, got {}",
                extents[0],
                extents[1],
                extents[0] * extents[1],
                values.len()
            )));
        }
        Ok(Self { origin, spacing, extents, values })
    }

    /// Samples `g` at cell centers.
    pub fn sample<G: Fn([f64; 2]) -> f64>(origin: [f64; 2], spacing: f64, extents: [usize; 2], g: G) -> Result<Self> {
        let mut values = Vec::with_capacity(extents[0] * extents[1]);
        for j in 0..extents[1] {
            for i in 0..extents[0] {
                values.push(g([origin[0] + (i as f64 + 0.5) * spacing, origin[1] + (j as f64 + 0.5) * spacing]));
            }
        }
        Self::new(origin, spacing, extents, values)
    }

    fn cell_lower(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + i as f64 * self.spacing, self.origin[1] + j as f64 * self.spacing]
    }

    pub fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + self.extents[0] as f64 * self.spacing,
            self.origin[1] + self.extents[1] as f64 * self.spacing,
        ]
    }

    fn density(&self, y: [f64; 2]) -> f64 {
        let i = ((y[0] - self.origin[0]) / self.spacing).floor();
        let j = ((y[1] - self.origin[1]) / self.spacing).floor();
        if i < 0.0 || j < 0.0 || i >= self.extents[0] as f64 || j >= self.extents[1] as f64 {
            return 0.0;
        }
        self.values[j as usize * self.extents[0] + i as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum SourceKind {
    PointMasses { masses: Vec<PointMass> },
    GridField { grid: GridSource },
    Bumps { bumps: Vec<Bump> },
}

/// A bounded (or atomic) compactly supported source `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub kind: SourceKind,
    /// `∫ f`.
    pub mass: f64,
    pub mean_zero: bool,
}

fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

impl SourceFunction {
    pub fn new(kind: SourceKind) -> Result<Self> {
        let (mass, scale) = match &kind {
            SourceKind::PointMasses { masses } => {
                let d = masses.first().map_or(0, |m| m.location.len());
                if masses.iter().any(|m| m.location.len() != d || !m.mass.is_finite()) {
                    return Err(Error::Config("point masses need a common dimension and finite masses".into()));
                }
                (neumaier(masses.iter().map(|m| m.mass)), masses.iter().map(|m| m.mass.abs()).sum::<f64>())
            }
            SourceKind::GridField { grid } => {
                let a = grid.spacing * grid.spacing;
                (neumaier(grid.values.iter().map(|v| v * a)), grid.values.iter().map(|v| v.abs() * a).sum())
            }
            SourceKind::Bumps { bumps } => {
                if bumps.iter().any(|b| !(b.scale > 0.0)) {
                    return Err(Error::Config("bump scale must be positive".into()));
                }
                (neumaier(bumps.iter().map(|b| b.mass)), bumps.iter().map(|b| b.mass.abs()).sum())
            }
        };
        let mean_zero = mass.abs() <= 1e-12 * scale.max(1.0);
        Ok(Self { kind, mass, mean_zero })
    }

    pub fn point_masses(masses: Vec<PointMass>) -> Result<Self> {
        Self::new(SourceKind::PointMasses { masses })
    }

    pub fn point_mass(location: Vec<f64>, mass: f64) -> Self {
        Self::point_masses(vec![PointMass { location, mass }]).expect("valid point mass")
    }

    pub fn bumps(bumps: Vec<Bump>) -> Result<Self> {
        Self::new(SourceKind::Bumps { bumps })
    }

    pub fn bump(center: [f64; 2], scale: f64, mass: f64) -> Result<Self> {
        Self::bumps(vec![Bump { center, scale, mass }])
    }

    pub fn grid(grid: GridSource) -> Result<Self> {
        Self::new(SourceKind::GridField { grid })
    }

    pub fn zero(dim: usize) -> Self {
        let _ = dim;
        Self::point_masses(Vec::new()).expect("empty source")
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SourceKind::PointMasses { masses } => masses.first().map_or(2, |m| m.location.len()),
            _ => 2,
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            SourceKind::PointMasses { masses } => masses.iter().all(|m| m.mass == 0.0),
            SourceKind::GridField { grid } => grid.values.iter().all(|v| *v == 0.0),
            SourceKind::Bumps { bumps } => bumps.iter().all(|b| b.mass == 0.0),
        }
    }

    /// `λ f`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let kind = match &self.kind {
            SourceKind::PointMasses { masses } => SourceKind::PointMasses {
                masses: masses.iter().map(|m| PointMass { location: m.location.clone(), mass: lambda * m.mass }).collect(),
            },
            SourceKind::GridField { grid } => {
                let mut g = grid.clone();
                g.values.iter_mut().for_each(|v| *v *= lambda);
                SourceKind::GridField { grid: g }
            }
            SourceKind::Bumps { bumps } => SourceKind::Bumps {
                bumps: bumps.iter().map(|b| Bump { mass: lambda * b.mass, ..*b }).collect(),
            },
        };
        Self::new(kind).expect("scaling keeps validity")
    }

    /// `f(· − shift)`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let kind = match &self.kind {
            SourceKind::PointMasses { masses } => SourceKind::PointMasses {
                masses: masses
                    .iter()
                    .map(|m| PointMass { location: m.location.iter().zip(shift).map(|(a, b)| a + b).collect(), mass: m.mass })
                    .collect(),
            },
            SourceKind::GridField { grid } => {
                let mut g = grid.clone();
                g.origin = [g.origin[0] + shift[0], g.origin[1] + shift[1]];
                SourceKind::GridField { grid: g }
            }
            SourceKind::Bumps { bumps } => SourceKind::Bumps {
                bumps: bumps
                    .iter()
                    .map(|b| Bump { center: [b.center[0] + shift[0], b.center[1] + shift[1]], ..*b })
                    .collect(),
            },
        };
        Self::new(kind).expect("translation keeps validity")
    }

    /// Axis-aligned box containing the support.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            SourceKind::PointMasses { masses } => {
                let d = self.dim();
                let mut lo = vec![f64::INFINITY; d];
                let mut hi = vec![f64::NEG_INFINITY; d];
                for m in masses {
                    for k in 0..d {
                        lo[k] = lo[k].min(m.location[k]);
                        hi[k] = hi[k].max(m.location[k]);
                    }
                }
                if masses.is_empty() {
                    return (vec![0.0; d], vec![0.0; d]);
                }
                (lo, hi)
            }
            SourceKind::GridField { grid } => (grid.origin.to_vec(), grid.upper().to_vec()),
            SourceKind::Bumps { bumps } => {
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for b in bumps {
                    for k in 0..2 {
                        lo[k] = lo[k].min(b.center[k] - b.radius());
                        hi[k] = hi[k].max(b.center[k] + b.radius());
                    }
                }
                if bumps.is_empty() {
                    return (vec![0.0; 2], vec![0.0; 2]);
                }
                (lo, hi)
            }
        }
    }

    /// Density at `y` (zero for atomic sources).
    pub fn density(&self, y: [f64; 2]) -> f64 {
        match &self.kind {
            SourceKind::PointMasses { .. } => 0.0,
            SourceKind::GridField { grid } => grid.density(y),
            SourceKind::Bumps { bumps } => bumps.iter().map(|b| b.density(y)).sum(),
        }
    }

    /// `‖f‖_{L¹}`.
    pub fn l1_norm(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        self.abs_mass_in_box(&lo, &hi, true)
    }

    /// `∫_B |f|` over the box `B = [lo, hi)` (half-open for atoms; the closed
    /// box when `closed` is set).
    pub fn abs_mass_in_box(&self, lo: &[f64], hi: &[f64], closed: bool) -> f64 {
        match &self.kind {
            SourceKind::PointMasses { masses } => neumaier(masses.iter().filter_map(|m| {
                let inside = m.location.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| {
                    if closed {
                        *l <= *x && *x <= *h
                    } else {
                        *l <= *x && *x < *h
                    }
                });
                inside.then_some(m.mass.abs())
            })),
            SourceKind::GridField { grid } => {
                let h = grid.spacing;
                let mut acc = Vec::new();
                for j in 0..grid.extents[1] {
                    for i in 0..grid.extents[0] {
                        let v = grid.values[j * grid.extents[0] + i];
                        if v == 0.0 {
                            continue;
                        }
                        let c = grid.cell_lower(i, j);
                        let ox = (c[0] + h).min(hi[0]) - c[0].max(lo[0]);
                        let oy = (c[1] + h).min(hi[1]) - c[1].max(lo[1]);
                        if ox > 0.0 && oy > 0.0 {
                            acc.push(v.abs() * ox * oy);
                        }
                    }
                }
                neumaier(acc)
            }
            SourceKind::Bumps { bumps } => bump_abs_integral(bumps, [lo[0], lo[1]], [hi[0], hi[1]], None),
        }
    }

    /// `∫_B |x − c| |f(x)| dx` over the half-open box `B = [lo, hi)`.
    pub fn abs_moment_in_box(&self, lo: &[f64], hi: &[f64], c: &[f64]) -> f64 {
        match &self.kind {
            SourceKind::PointMasses { masses } => neumaier(masses.iter().filter_map(|m| {
                let inside = m.location.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *l <= *x && *x < *h);
                let d: f64 = m.location.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                inside.then_some(m.mass.abs() * d)
            })),
            SourceKind::GridField { grid } => {
                let gl = GaussLegendre::new(4);
                let h = grid.spacing;
                let mut acc = Vec::new();
                for j in 0..grid.extents[1] {
                    for i in 0..grid.extents[0] {
                        let v = grid.values[j * grid.extents[0] + i];
                        if v == 0.0 {
                            continue;
                        }
                        let cl = grid.cell_lower(i, j);
                        let (x0, x1) = (cl[0].max(lo[0]), (cl[0] + h).min(hi[0]));
                        let (y0, y1) = (cl[1].max(lo[1]), (cl[1] + h).min(hi[1]));
                        if x1 > x0 && y1 > y0 {
                            let w = gl.integrate(x0, x1, |x| gl.integrate(y0, y1, |y| ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt()));
                            acc.push(v.abs() * w);
                        }
                    }
                }
                neumaier(acc)
            }
            SourceKind::Bumps { bumps } => bump_abs_integral(bumps, [lo[0], lo[1]], [hi[0], hi[1]], Some([c[0], c[1]])),
        }
    }
}

fn bump_abs_integral(bumps: &[Bump], lo: [f64; 2], hi: [f64; 2], weight_center: Option<[f64; 2]>) -> f64 {
    let live: Vec<&Bump> = bumps
        .iter()
        .filter(|b| {
            b.mass != 0.0
                && b.center[0] + b.radius() > lo[0]
                && b.center[0] - b.radius() < hi[0]
                && b.center[1] + b.radius() > lo[1]
                && b.center[1] - b.radius() < hi[1]
        })
        .collect();
    if live.is_empty() {
        return 0.0;
    }
    let opts = AdaptiveOpts::new(1e-15, 1e-11);
    let single_sign = live.iter().all(|b| b.mass > 0.0) || live.iter().all(|b| b.mass < 0.0);
    let gl = GaussLegendre::new(5);
    let inner = |x: f64| -> f64 {
        let mut cuts = vec![lo[1], hi[1]];
        for b in &live {
            let dx = x - b.center[0];
            let w2 = b.radius().powi(2) - dx * dx;
            if w2 > 0.0 {
                cuts.push(b.center[1] - w2.sqrt());
                cuts.push(b.center[1] + w2.sqrt());
            }
        }
        cuts.retain(|c| *c >= lo[1] && *c <= hi[1]);
        cuts.sort_by(f64::total_cmp);
        let f = |y: f64| live.iter().map(|b| b.density([x, y])).sum::<f64>();
        cuts.windows(2)
            .map(|w| {
                if let Some(c) = weight_center {
                    let dx2 = (x - c[0]).powi(2);
                    adaptive(|y| f(y).abs() * (dx2 + (y - c[1]).powi(2)).sqrt(), w[0], w[1], opts).value
                } else if single_sign {
                    // Degree-4 polynomial on each piece: 5-point Gauss is exact.
                    gl.integrate(w[0], w[1], f).abs()
                } else {
                    adaptive(|y| f(y).abs(), w[0], w[1], opts).value
                }
            })
            .sum()
    };
    let mut xs = vec![lo[0], hi[0]];
    for b in &live {
        xs.push(b.center[0] - b.radius());
        xs.push(b.center[0] + b.radius());
    }
    xs.retain(|c| *c >= lo[0] && *c <= hi[0]);
    xs.sort_by(f64::total_cmp);
    xs.windows(2).map(|w| adaptive(inner, w[0], w[1], opts).value).sum()
}

/// Result of a convolution evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvValue {
    pub value: Vec<f64>,
    /// Set when the requested tolerance could not be certified.
    pub warning: bool,
}

/// `(K_sel ∗ f)(x)` to relative tolerance `tol`.
pub fn convolve_at(kernel: &HomogeneousKernel, sel: KernelSel, f: &SourceFunction, x: &[f64], tol: f64) -> Result<ConvValue> {
    let c = Convolver::new(kernel, sel, f, tol)?;
    let mut out = [0.0; MAX_TARGET];
    let warning = c.eval(x, &mut out)?;
    Ok(ConvValue { value: out[..kernel.target_dim].to_vec(), warning })
}

/// Reusable evaluator of `K_sel ∗ f`.
pub struct Convolver<'a> {
    pub kernel: &'a HomogeneousKernel,
    pub sel: KernelSel,
    pub source: &'a SourceFunction,
    pub tol: f64,
    fast_newton: bool,
}

impl<'a> Convolver<'a> {
    pub fn new(kernel: &'a HomogeneousKernel, sel: KernelSel, source: &'a SourceFunction, tol: f64) -> Result<Self> {
        if !source.is_zero() && source.dim() != kernel.dim {
            return Err(Error::DimensionMismatch { expected: kernel.dim, got: source.dim() });
        }
        if !matches!(source.kind, SourceKind::PointMasses { .. }) && kernel.dim != 2 {
            return Err(Error::Unsupported("bump and grid sources are planar".into()));
        }
        let fast_newton =
            kernel.dim == 2 && sel == KernelSel::Full && matches!(kernel.sphere_map, KernelSphereMap::Identity { .. });
        Ok(Self { kernel, sel, source, tol: tol.max(1e-15), fast_newton })
    }

    /// Writes the value into `out`; returns the warning flag.
    pub fn eval(&self, x: &[f64], out: &mut KVec) -> Result<bool> {
        *out = [0.0; MAX_TARGET];
        match &self.source.kind {
            SourceKind::PointMasses { masses } => {
                let mut k = [0.0; MAX_TARGET];
                let mut diff = vec![0.0; x.len()];
                for m in masses {
                    for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(&m.location)) {
                        *d = a - b;
                    }
                    let r = norm(&diff);
                    if r == 0.0 {
                        if self.sel == KernelSel::Full {
                            return Err(Error::PointMassSingularity(x.to_vec()));
                        }
                        continue;
                    }
                    if !self.sel.contains_radius(r) {
                        continue;
                    }
                    self.kernel.eval_into(&diff, &mut k)?;
                    for (o, v) in out.iter_mut().zip(&k) {
                        *o += m.mass * v;
                    }
                }
                Ok(false)
            }
            SourceKind::Bumps { bumps } => {
                let x2 = [x[0], x[1]];
                let mut warn = false;
                for b in bumps {
                    let mut v = [0.0; MAX_TARGET];
                    warn |= if self.fast_newton { self.bump_newton(b, x2, &mut v) } else { self.bump_generic(b, x2, &mut v) };
                    for (o, vi) in out.iter_mut().zip(&v) {
                        *o += vi;
                    }
                }
                Ok(warn)
            }
            SourceKind::GridField { grid } => Ok(self.grid_eval(grid, [x[0], x[1]], out)),
        }
    }

    /// Radially symmetric source against `x/|x|²`: only the mass inside
    /// `|y − c| < |x − c|` contributes, as if concentrated at `c`.
    fn bump_newton(&self, b: &Bump, x: [f64; 2], out: &mut KVec) -> bool {
        let d = [x[0] - b.center[0], x[1] - b.center[1]];
        let s = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if s == 0.0 {
            return false;
        }
        self.kernel.eval2(d, out);
        let m = b.mass * b.mass_fraction_within(s);
        for o in out.iter_mut() {
            *o *= m;
        }
        false
    }

    /// `∫_{S¹} s(−ζ) ∫ r^{α−1} f(x + rζ) dr dθ` over the admissible radii.
    pub(crate) fn bump_generic(&self, b: &Bump, x: [f64; 2], out: &mut KVec) -> bool {
        let k = self.kernel;
        let alpha = k.alpha;
        let (r_in, r_out) = self.sel.radii();
        let rho = b.radius();
        let w = [x[0] - b.center[0], x[1] - b.center[1]];
        let dist = (w[0] * w[0] + w[1] * w[1]).sqrt();
        if dist - rho >= r_out || dist + rho <= r_in {
            return false;
        }
        let gl = GaussLegendre::new(6);
        let degree_ok = (alpha - 1.0).abs() < 1e-15;
        let radial = |zeta: [f64; 2]| -> f64 {
            // |w + rζ|² < ρ² ⇔ r² + 2r⟨ζ,w⟩ + |w|² − ρ² < 0.
            let bq = zeta[0] * w[0] + zeta[1] * w[1];
            let cq = dist * dist - rho * rho;
            let disc = bq * bq - cq;
            if disc <= 0.0 {
                return 0.0;
            }
            let sq = disc.sqrt();
            let lo = (-bq - sq).max(r_in).max(0.0);
            let hi = (-bq + sq).min(r_out);
            if hi <= lo {
                return 0.0;
            }
            let fr = |r: f64| b.density([x[0] + r * zeta[0], x[1] + r * zeta[1]]);
            if degree_ok {
                gl.integrate(lo, hi, fr)
            } else if lo == 0.0 {
                // r = u^{1/α}, r^{α−1} dr = du/α.
                let e = 1.0 / alpha;
                adaptive(|u| fr(u.powf(e)) / alpha, 0.0, hi.powf(alpha), AdaptiveOpts::new(1e-15, 1e-12)).value
            } else {
                adaptive(|r| r.powf(alpha - 1.0) * fr(r), lo, hi, AdaptiveOpts::new(1e-15, 1e-12)).value
            }
        };
        let mut warn = false;
        let opts = AdaptiveOpts { abs_tol: 1e-300, rel_tol: self.tol, max_panels: 4000 };
        let mut sv = [0.0; MAX_TARGET];
        for comp in 0..k.target_dim {
            let g = |theta: f64| -> f64 {
                let zeta = [theta.cos(), theta.sin()];
                let mut s = [0.0; MAX_TARGET];
                k.sphere_into(&[-zeta[0], -zeta[1]], &mut s);
                s[comp] * radial(zeta)
            };
            let inside = dist < rho;
            let mut cuts: Vec<f64> = Vec::new();
            for r in [r_in, r_out] {
                if r > 0.0 && r.is_finite() {
                    cuts.extend(crate::geometry::circle_circle_angles(x, r, b.center, rho));
                }
            }
            let value = if inside {
                cuts.push(0.0);
                let pieces = crate::spherical::arcs_between(cuts, |_| true);
                let mut acc = 0.0;
                for (a, c) in pieces {
                    let r = adaptive(g, a, c, opts);
                    warn |= !r.converged;
                    acc += r.value;
                }
                acc
            } else {
                // Cone toward the disk, with sin(θ − θ₀) = (ρ/d) sin u removing
                // the square-root behaviour at the tangent directions.
                let th0 = (-w[1]).atan2(-w[0]);
                let kappa = rho / dist;
                let map = |u: f64| th0 + (kappa * u.sin()).asin();
                let jac = |u: f64| kappa * u.cos() / (1.0 - (kappa * u.sin()).powi(2)).sqrt();
                let mut us = vec![-0.5 * PI, 0.5 * PI];
                for c in cuts {
                    let s = (c - th0).sin() / kappa;
                    let delta = (c - th0 + PI).rem_euclid(2.0 * PI) - PI;
                    if s.abs() < 1.0 && delta.abs() < 0.5 * PI {
                        us.push(s.asin());
                    }
                }
                us.sort_by(f64::total_cmp);
                let mut acc = 0.0;
                for wdw in us.windows(2) {
                    let r = adaptive(|u| g(map(u)) * jac(u), wdw[0], wdw[1], opts);
                    warn |= !r.converged;
                    acc += r.value;
                }
                acc
            };
            sv[comp] = value;
        }
        *out = sv;
        warn
    }

    fn grid_eval(&self, grid: &GridSource, x: [f64; 2], out: &mut KVec) -> bool {
        let h = grid.spacing;
        let mut err = 0.0;
        let mut parts: Vec<KVec> = Vec::with_capacity(grid.values.len());
        let mut total_abs = 0.0;
        for j in 0..grid.extents[1] {
            for i in 0..grid.extents[0] {
                let v = grid.values[j * grid.extents[0] + i];
                if v == 0.0 {
                    continue;
                }
                let lo = grid.cell_lower(i, j);
                let mut acc = [0.0; MAX_TARGET];
                self.cell_integral(x, lo, h, 0, &mut acc, &mut err, v.abs());
                for a in acc.iter_mut() {
                    *a *= v;
                }
                total_abs += acc.iter().map(|a| a.abs()).sum::<f64>();
                parts.push(acc);
            }
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o = neumaier(parts.iter().map(|p| p[c]));
        }
        err > self.tol * total_abs.max(f64::MIN_POSITIVE)
    }

    /// `∫_cell K_sel(x − y) dy`: midpoint rule on cells well separated from
    /// `x` and from the support circles, dyadic subdivision otherwise.
    #[allow(clippy::too_many_arguments)]
    fn cell_integral(&self, x: [f64; 2], lo: [f64; 2], h: f64, depth: u32, acc: &mut KVec, err: &mut f64, weight: f64) {
        let c = [lo[0] + 0.5 * h, lo[1] + 0.5 * h];
        let d = [x[0] - c[0], x[1] - c[1]];
        let dc = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let half_diag = h * std::f64::consts::FRAC_1_SQRT_2;
        let (r_in, r_out) = self.sel.radii();
        let dmin = (dc - half_diag).max(0.0);
        let dmax = dc + half_diag;
        if dmax <= r_in || dmin >= r_out {
            return;
        }
        let near = dc < 4.0 * half_diag;
        let straddles = (dmin < r_in && r_in < dmax) || (dmin < r_out && r_out < dmax);
        if (near || straddles) && depth < GRID_DEPTH_CAP {
            let hh = 0.5 * h;
            for (a, b) in [(0.0, 0.0), (hh, 0.0), (0.0, hh), (hh, hh)] {
                self.cell_integral(x, [lo[0] + a, lo[1] + b], hh, depth + 1, acc, err, weight);
            }
            return;
        }
        let sup = self.kernel.sphere_sup();
        if near || straddles {
            // Unresolved at the cap: bound the neglected or misjudged part.
            let rad = dmin.max(r_in).max(1e-300);
            let bound = if dmin == 0.0 {
                2.0 * PI * sup * (dmax.powf(self.kernel.alpha)) / self.kernel.alpha
            } else {
                sup * rad.powf(self.kernel.degree()) * h * h
            };
            *err += weight * bound;
            if dmin == 0.0 {
                return;
            }
        }
        if dc == 0.0 || !self.sel.contains_radius(dc) {
            return;
        }
        let mut k = [0.0; MAX_TARGET];
        self.kernel.eval2(d, &mut k);
        for (a, v) in acc.iter_mut().zip(&k) {
            *a += v * h * h;
        }
    }
}

/// Uniform planar grid of cell-center samples with `ℓ` components per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldOnGrid {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub extents: [usize; 2],
    pub components: usize,
    /// Row-major, `components` consecutive entries per cell.
    pub values: Vec<f64>,
    pub piece: Option<i32>,
    pub warning: bool,
}

impl FieldOnGrid {
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [self.origin[0] + (i as f64 + 0.5) * self.spacing, self.origin[1] + (j as f64 + 0.5) * self.spacing]
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let k = (j * self.extents[0] + i) * self.components;
        &self.values[k..k + self.components]
    }

    /// `Σ |v| h²` with `|·|` the Euclidean norm of each cell value.
    pub fn l1_norm(&self) -> f64 {
        neumaier(self.values.chunks(self.components).map(|v| norm(v) * self.spacing * self.spacing))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["x1".to_string(), "x2".to_string()];
        header.extend((0..self.components).map(|c| format!("v{}", c + 1)));
        wr.write_record(&header)?;
        for j in 0..self.extents[1] {
            for i in 0..self.extents[0] {
                let c = self.cell_center(i, j);
                let mut row = vec![fmt17(c[0]), fmt17(c[1])];
                row.extend(self.at(i, j).iter().map(|v| fmt17(*v)));
                wr.write_record(&row)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Header `dims, components, origin, spacing, extents`, then values; all
    /// little-endian (`u64` for counts, `f64` for reals).
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&2u64.to_le_bytes())?;
        w.write_all(&(self.components as u64).to_le_bytes())?;
        for o in self.origin {
            w.write_all(&o.to_le_bytes())?;
        }
        w.write_all(&self.spacing.to_le_bytes())?;
        for e in self.extents {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        let mut u = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let dims = u(&mut r)?;
        if dims != 2 {
            return Err(Error::Config(format!("binary field has {dims} dimensions, expected 2")));
        }
        let components = u(&mut r)? as usize;
        let f = |r: &mut R| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let origin = [f(&mut r)?, f(&mut r)?];
        let spacing = f(&mut r)?;
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let nx = u64::from_le_bytes(b) as usize;
        r.read_exact(&mut b)?;
        let ny = u64::from_le_bytes(b) as usize;
        let mut values = Vec::with_capacity(nx * ny * components);
        for _ in 0..nx * ny * components {
            values.push(f(&mut r)?);
        }
        Ok(Self { origin, spacing, extents: [nx, ny], components, values, piece: None, warning: false })
    }
}

/// Grid specification for `convolve_field`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub extents: [usize; 2],
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || self.extents[0] == 0 || self.extents[1] == 0 {
            return Err(Error::Config("grid needs positive spacing and extents".into()));
        }
        Ok(())
    }
}

/// Samples `K_sel ∗ f` at the cell centers of `spec`.
pub fn convolve_field(kernel: &HomogeneousKernel, sel: KernelSel, f: &SourceFunction, spec: &GridSpec, tol: f64) -> Result<FieldOnGrid> {
    spec.validate()?;
    if kernel.dim != 2 {
        return Err(Error::Unsupported("field dumps are planar".into()));
    }
    let conv = Convolver::new(kernel, sel, f, tol)?;
    let l = kernel.target_dim;
    let cells: Vec<(usize, usize)> = (0..spec.extents[1]).flat_map(|j| (0..spec.extents[0]).map(move |i| (i, j))).collect();
    let rows: Vec<(Vec<f64>, bool)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let x = [spec.origin[0] + (i as f64 + 0.5) * spec.spacing, spec.origin[1] + (j as f64 + 0.5) * spec.spacing];
            let mut out = [0.0; MAX_TARGET];
            let w = conv.eval(&x, &mut out)?;
            Ok((out[..l].to_vec(), w))
        })
        .collect::<Result<_>>()?;
    let warning = rows.iter().any(|r| r.1);
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    let piece = match sel {
        KernelSel::Piece { n, .. } => Some(n),
        KernelSel::Full => None,
    };
    Ok(FieldOnGrid { origin: spec.origin, spacing: spec.spacing, extents: spec.extents, components: l, values, piece, warning })
}

/// `(max over probes of |K_{≤0}∗f|, 2^{d−α}·sup|s|·‖f‖₁)`.
pub fn low_freq_sup_check(kernel: &HomogeneousKernel, f: &SourceFunction) -> Result<(f64, f64)> {
    let rhs = 2f64.powf(-kernel.degree()) * kernel.sphere_sup() * f.l1_norm();
    if f.is_zero() {
        return Ok((0.0, rhs));
    }
    let sel = KernelSel::cumulative(0);
    let conv = Convolver::new(kernel, sel, f, 1e-10)?;
    let d = kernel.dim;
    let (lo, hi) = f.bounding_box();
    let mut probes: Vec<Vec<f64>> = Vec::new();
    // Rings just outside |x − y| = 1/2, where the truncated kernel peaks.
    let centers: Vec<Vec<f64>> = match &f.kind {
        SourceKind::PointMasses { masses } => masses.iter().map(|m| m.location.clone()).collect(),
        SourceKind::Bumps { bumps } => bumps.iter().map(|b| b.center.to_vec()).collect(),
        SourceKind::GridField { grid } => vec![vec![
            0.5 * (grid.origin[0] + grid.upper()[0]),
            0.5 * (grid.origin[1] + grid.upper()[1]),
        ]],
    };
    let rule = crate::spherical::SphereRule::default_for(d)?;
    let stride = (rule.len() / 720).max(1);
    for c in &centers {
        for i in (0..rule.len()).step_by(stride) {
            let z = rule.node(i);
            probes.push(c.iter().zip(z).map(|(a, b)| a + 0.5 * b).collect());
        }
    }
    if d == 2 {
        let m = 81;
        for j in 0..m {
            for i in 0..m {
                let t = [i as f64 / (m - 1) as f64, j as f64 / (m - 1) as f64];
                probes.push(vec![lo[0] - 1.0 + t[0] * (hi[0] - lo[0] + 2.0), lo[1] - 1.0 + t[1] * (hi[1] - lo[1] + 2.0)]);
            }
        }
    }
    let vals: Vec<f64> = probes
        .par_iter()
        .map(|x| {
            let mut out = [0.0; MAX_TARGET];
            conv.eval(x, &mut out)?;
            Ok(norm(&out[..kernel.target_dim]))
        })
        .collect::<Result<_>>()?;
    Ok((vals.into_iter().fold(0.0, f64::max), rhs))
}
