//! Integrals of `Φ(K∗f)` and related fields over planar domains.
//!
//! The region is swept in polar coordinates about a focus point. Angular
//! breakpoints are placed at every direction where the ray geometry changes
//! (tangencies, circle–circle and circle–boundary crossings, peaks) and the
//! radial integral along each ray is split at every circle crossing, so each
//! one-dimensional piece is smooth.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{circle_circle_angles, Domain, P2};
use crate::kernel::{norm, HomogeneousKernel, KVec, KernelSel, PhiIntegrand, MAX_TARGET};
use crate::quad::{adaptive, adaptive_log, AdaptiveOpts};
use crate::source::{Convolver, SourceFunction, SourceKind};
use crate::spherical::{abs_functional, SphereRule};

/// A planar region `(Ω ∩ B(focus, cap)) ∖ ⋃ holes`, star-shaped about `focus`.
#[derive(Debug, Clone)]
pub struct PolarRegion<'a> {
    pub domain: &'a Domain,
    pub focus: P2,
    pub cap: f64,
    /// Circles across which the integrand jumps or kinks.
    pub circles: Vec<(P2, f64)>,
    /// Points near which the integrand is sharply peaked.
    pub peaks: Vec<P2>,
    /// Disks removed from the region.
    pub holes: Vec<(P2, f64)>,
    /// Length below which radial segments are not log-mapped.
    pub inner_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegrateOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
    /// Constant `C` of the tail bound `C·R^{p(α−d−1)+d}` (half-space only).
    pub tail_constant: Option<f64>,
    /// Radius of the disks removed around point masses instead of the
    /// principal-value treatment.
    pub excision: Option<f64>,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-10, max_panels: 4000, tail_constant: None, excision: None }
    }
}

impl IntegrateOpts {
    /// The same options with `abs_tol` multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self { abs_tol: self.abs_tol * scale.max(f64::MIN_POSITIVE), ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainIntegral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
    pub truncation_radius: Option<f64>,
}

impl DomainIntegral {
    fn zero() -> Self {
        Self { value: 0.0, error: 0.0, converged: true, truncation_radius: None }
    }
}

fn dist(a: P2, b: P2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn angle_of(c: P2, p: P2) -> f64 {
    (p[1] - c[1]).atan2(p[0] - c[0])
}

impl PolarRegion<'_> {
    /// Distance from the focus to the exit of `Ω ∩ B(focus, cap)` along `u`.
    fn exit(&self, u: P2) -> f64 {
        let c = self.focus;
        let s = match self.domain {
            Domain::Ball { center, radius } => {
                let w = [c[0] - center[0], c[1] - center[1]];
                let b = u[0] * w[0] + u[1] * w[1];
                let disc = b * b - (w[0] * w[0] + w[1] * w[1]) + radius * radius;
                if disc <= 0.0 {
                    0.0
                } else {
                    (-b + disc.sqrt()).max(0.0)
                }
            }
            Domain::HalfSpace { normal, offset } => {
                let un = u[0] * normal[0] + u[1] * normal[1];
                let h = c[0] * normal[0] + c[1] * normal[1] - offset;
                if un > 0.0 {
                    if h >= -1e-15 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                } else if un < 0.0 {
                    (h / -un).max(0.0)
                } else if h > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Domain::GraphDisk(g) => {
                let t = u[1].atan2(u[0]);
                debug_assert!(dist(c, g.center) < 1e-12);
                g.r(t)
            }
        };
        s.min(self.cap)
    }

    fn angular_breakpoints(&self) -> Vec<f64> {
        let c = self.focus;
        let mut out = vec![0.0];
        let mut all: Vec<(P2, f64)> = self.circles.clone();
        all.extend(self.holes.iter().copied());
        if self.cap.is_finite() {
            for t in self.domain.circle_crossings(c, self.cap) {
                out.push(t);
            }
        }
        if let Domain::HalfSpace { normal, .. } = self.domain {
            let t = normal[1].atan2(normal[0]);
            out.push(t - 0.5 * PI);
            out.push(t + 0.5 * PI);
        }
        for (i, &(a, r)) in all.iter().enumerate() {
            let d = dist(a, c);
            if d > r {
                let base = angle_of(c, a);
                let w = (r / d).asin();
                out.push(base - w);
                out.push(base + w);
            }
            for t in self.domain.circle_crossings(a, r) {
                out.push(angle_of(c, [a[0] + r * t.cos(), a[1] + r * t.sin()]));
            }
            if self.cap.is_finite() {
                for t in circle_circle_angles(a, r, c, self.cap) {
                    out.push(angle_of(c, [a[0] + r * t.cos(), a[1] + r * t.sin()]));
                }
            }
            for &(b, rb) in &all[i + 1..] {
                for t in circle_circle_angles(a, r, b, rb) {
                    out.push(angle_of(c, [a[0] + r * t.cos(), a[1] + r * t.sin()]));
                }
            }
        }
        for &p in &self.peaks {
            if dist(p, c) > 0.0 {
                out.push(angle_of(c, p));
            }
        }
        let mut out: Vec<f64> = out.into_iter().map(|t| t.rem_euclid(2.0 * PI)).collect();
        out.push(2.0 * PI);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        out
    }

    /// `∫ g(focus + s u) s ds` over the part of the ray inside the region.
    fn ray<F: Fn(P2) -> f64>(&self, u: P2, g: &F, opts: AdaptiveOpts) -> (f64, f64, bool) {
        let c = self.focus;
        let s1 = self.exit(u);
        if s1 <= 0.0 {
            return (0.0, 0.0, true);
        }
        let mut cuts = vec![0.0, s1];
        let mut removed: Vec<(f64, f64)> = Vec::new();
        let line_circle = |a: P2, r: f64| -> Option<(f64, f64)> {
            let w = [a[0] - c[0], a[1] - c[1]];
            let b = u[0] * w[0] + u[1] * w[1];
            let disc = b * b - (w[0] * w[0] + w[1] * w[1]) + r * r;
            if disc <= 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            Some((b - sq, b + sq))
        };
        for &(a, r) in &self.circles {
            if let Some((lo, hi)) = line_circle(a, r) {
                cuts.push(lo);
                cuts.push(hi);
            }
        }
        for &(a, r) in &self.holes {
            if let Some((lo, hi)) = line_circle(a, r) {
                cuts.push(lo);
                cuts.push(hi);
                removed.push((lo, hi));
            }
        }
        for &p in &self.peaks {
            cuts.push((p[0] - c[0]) * u[0] + (p[1] - c[1]) * u[1]);
        }
        cuts.retain(|s| *s >= 0.0 && *s <= s1);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
        let f = |s: f64| s * g([c[0] + s * u[0], c[1] + s * u[1]]);
        let (mut v, mut e, mut ok) = (0.0, 0.0, true);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            if b <= a || removed.iter().any(|(lo, hi)| mid > *lo && mid < *hi) {
                continue;
            }
            let scale = self.inner_scale;
            let r = if a > 0.0 && b > 20.0 * a {
                adaptive_log(f, a, b, opts)
            } else if a == 0.0 && b > 20.0 * scale {
                let r1 = adaptive(f, 0.0, scale, opts);
                let r2 = adaptive_log(f, scale, b, opts);
                crate::quad::QuadResult { value: r1.value + r2.value, error: r1.error + r2.error, converged: r1.converged && r2.converged }
            } else {
                adaptive(f, a, b, opts)
            };
            v += r.value;
            e += r.error;
            ok &= r.converged;
        }
        (v, e, ok)
    }
}

/// `∫_region g` by nested adaptive Gauss–Kronrod in polar coordinates.
/// The angular panels between breakpoints are processed in parallel and
/// summed in angular order.
pub fn integrate_polar<F: Fn(P2) -> f64 + Sync>(region: &PolarRegion<'_>, g: F, opts: &IntegrateOpts) -> DomainIntegral {
    let bps = region.angular_breakpoints();
    let inner = AdaptiveOpts { abs_tol: 0.02 * opts.abs_tol / (2.0 * PI), rel_tol: 0.05 * opts.rel_tol, max_panels: 2000 };
    let panels: Vec<(f64, f64)> = bps.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| b > a).collect();
    let results: Vec<(f64, f64, bool)> = panels
        .par_iter()
        .map(|&(a, b)| {
            let share = (b - a) / (2.0 * PI);
            let conv = std::cell::Cell::new(true);
            let h = |t: f64| {
                let (v, _, ok) = region.ray([t.cos(), t.sin()], &g, inner);
                if !ok {
                    conv.set(false);
                }
                v
            };
            let o = AdaptiveOpts { abs_tol: 0.5 * opts.abs_tol * share, rel_tol: opts.rel_tol, max_panels: opts.max_panels };
            let r = adaptive(h, a, b, o);
            (r.value, r.error, r.converged && conv.get())
        })
        .collect();
    let mut out = DomainIntegral::zero();
    for (v, e, ok) in results {
        out.value += v;
        out.error += e;
        out.converged &= ok;
    }
    out
}

/// `∫_0^ε r ∫_{S¹} g(y + rζ) dθ dr` with a self-refining trapezoid rule in
/// angle; used for the principal value at a point mass.
pub fn integrate_disk_pv<F: Fn(P2) -> f64>(y: P2, eps: f64, g: &F, opts: &IntegrateOpts) -> DomainIntegral {
    let conv = std::cell::Cell::new(true);
    let ring = |r: f64| -> f64 {
        let mut n = 64usize;
        let eval = |n: usize| -> (f64, f64) {
            let mut s = 0.0;
            let mut sa = 0.0;
            for i in 0..n {
                let t = 2.0 * PI * i as f64 / n as f64;
                let v = g([y[0] + r * t.cos(), y[1] + r * t.sin()]);
                s += v;
                sa += v.abs();
            }
            (s * 2.0 * PI / n as f64, sa * 2.0 * PI / n as f64)
        };
        let (mut prev, _) = eval(n);
        loop {
            n *= 2;
            let (cur, abs) = eval(n);
            if (cur - prev).abs() <= 1e-12 * abs + 1e-3 * opts.abs_tol / eps.max(1e-300) {
                return r * cur;
            }
            if n >= 1 << 16 {
                conv.set(false);
                return r * cur;
            }
            prev = cur;
        }
    };
    let r = adaptive(ring, 0.0, eps, AdaptiveOpts { abs_tol: 0.1 * opts.abs_tol, rel_tol: 0.1 * opts.rel_tol, max_panels: 500 });
    DomainIntegral { value: r.value, error: r.error, converged: r.converged && conv.get(), truncation_radius: None }
}

fn focus_for(domain: &Domain, f: &SourceFunction) -> Result<P2> {
    match domain {
        Domain::Ball { center, .. } => Ok([center[0], center[1]]),
        Domain::GraphDisk(g) => Ok(g.center),
        Domain::HalfSpace { .. } => {
            let (lo, hi) = f.bounding_box();
            let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
            let p = domain.closest_boundary_point(&mid);
            Ok([p[0], p[1]])
        }
    }
}

/// Sup of `|∇K|` on the unit circle, by central differences.
fn kernel_gradient_sup(kernel: &HomogeneousKernel) -> f64 {
    let h = 1e-5;
    let mut best: f64 = 0.0;
    let (mut a, mut b) = ([0.0; MAX_TARGET], [0.0; MAX_TARGET]);
    for i in 0..720 {
        let t = 2.0 * PI * i as f64 / 720.0;
        let x = [t.cos(), t.sin()];
        for e in [[h, 0.0], [0.0, h]] {
            kernel.eval2([x[0] + e[0], x[1] + e[1]], &mut a);
            kernel.eval2([x[0] - e[0], x[1] - e[1]], &mut b);
            let g: f64 = (0..kernel.target_dim).map(|k| ((a[k] - b[k]) / (2.0 * h)).powi(2)).sum::<f64>().sqrt();
            best = best.max(g);
        }
    }
    std::f64::consts::SQRT_2 * best
}

/// Collects the breakpoint geometry of `K_sel ∗ f` for each selection.
fn source_geometry(f: &SourceFunction, sels: &[KernelSel]) -> (Vec<(P2, f64)>, Vec<P2>) {
    let mut circles = Vec::new();
    let mut peaks = Vec::new();
    match &f.kind {
        SourceKind::PointMasses { masses } => {
            for m in masses {
                let y = [m.location[0], m.location[1]];
                peaks.push(y);
                for sel in sels {
                    let (a, b) = sel.radii();
                    for r in [a, b] {
                        if r > 0.0 && r.is_finite() && !circles.contains(&(y, r)) {
                            circles.push((y, r));
                        }
                    }
                }
            }
        }
        SourceKind::Bumps { bumps } => {
            for b in bumps {
                peaks.push(b.center);
                circles.push((b.center, b.radius()));
                for sel in sels {
                    let (a, c) = sel.radii();
                    for r in [a, c] {
                        if r > 0.0 && r.is_finite() {
                            circles.push((b.center, r + b.radius()));
                            if r > b.radius() {
                                circles.push((b.center, r - b.radius()));
                            }
                        }
                    }
                }
            }
        }
        SourceKind::GridField { .. } => {}
    }
    (circles, peaks)
}

/// `∫_Ω combine(K_{sel₀}∗f(x), K_{sel₁}∗f(x), …) dx` over a planar domain.
///
/// Point masses inside Ω are handled as principal values when the full
/// kernel is among the selections: a disk around each mass is integrated in
/// polar coordinates about the mass, which converges exactly when the
/// leading singular term cancels over circles. Unbounded domains are
/// truncated at a radius chosen from the tail bound. `support`, when given,
/// declares that the integrand vanishes outside `supp(K_support ∗ f)`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_combo<C>(
    domain: &Domain,
    kernel: &HomogeneousKernel,
    f: &SourceFunction,
    sels: &[KernelSel],
    support: Option<KernelSel>,
    phi_for_tail: Option<&PhiIntegrand>,
    combine: C,
    opts: &IntegrateOpts,
) -> Result<DomainIntegral>
where
    C: Fn(&[KVec]) -> f64 + Sync,
{
    if domain.dim() != 2 || kernel.dim != 2 {
        return Err(Error::Unsupported("domain integration is implemented in the plane".into()));
    }
    if matches!(f.kind, SourceKind::GridField { .. }) {
        return Err(Error::Unsupported("domain integrals of grid-source convolutions".into()));
    }
    if f.is_zero() {
        return Ok(DomainIntegral::zero());
    }
    let convs: Vec<Convolver<'_>> =
        sels.iter().map(|s| Convolver::new(kernel, *s, f, 0.01 * opts.rel_tol)).collect::<Result<_>>()?;
    let support_sels: Vec<KernelSel> = match support {
        Some(s) => vec![s],
        None => sels.to_vec(),
    };
    let has_full = support_sels.contains(&KernelSel::Full);
    let unbounded_support = support_sels.iter().any(|s| s.radii().1.is_infinite());
    let focus = focus_for(domain, f)?;
    let (circles, peaks) = source_geometry(f, sels);
    let (lo, hi) = f.bounding_box();
    let spread = dist([lo[0], lo[1]], focus).max(dist([hi[0], hi[1]], focus)).max(dist([lo[0], hi[1]], focus)).max(dist([hi[0], lo[1]], focus));
    let mut truncation = None;
    let cap = if domain.is_bounded() {
        f64::INFINITY
    } else if !unbounded_support {
        let outer = support_sels.iter().map(|s| s.radii().1).fold(0.0, f64::max);
        let bump_r = match &f.kind {
            SourceKind::Bumps { bumps } => bumps.iter().map(|b| b.radius()).fold(0.0, f64::max),
            _ => 0.0,
        };
        spread + outer + bump_r + 1e-9
    } else {
        if !f.mean_zero {
            return Err(Error::Divergent(
                "half-space integral with an unbounded kernel needs a mean-zero source".into(),
            ));
        }
        let phi = phi_for_tail.ok_or_else(|| Error::Config("tail bound needs Φ".into()))?;
        let d = 2.0;
        let q = phi.p * (kernel.alpha - d - 1.0) + d;
        let c = opts.tail_constant.unwrap_or_else(|| {
            let lip = kernel_gradient_sup(kernel) * 2f64.powf(-(kernel.degree() - 1.0));
            phi.sphere_sup() * (lip * f.l1_norm() * spread.max(1e-3)).powf(phi.p) * PI / (-q)
        });
        let r = ((2.0 * c / opts.abs_tol).powf(1.0 / -q)).max(4.0 * spread + 4.0);
        truncation = Some(r);
        r
    };
    let field = |x: P2| -> f64 {
        let mut vals = [[0.0; MAX_TARGET]; 4];
        for (v, cv) in vals.iter_mut().zip(&convs) {
            if cv.eval(&x, v).is_err() {
                return 0.0;
            }
        }
        combine(&vals[..convs.len()])
    };

    let mut holes = Vec::new();
    let mut pv_disks: Vec<(P2, f64)> = Vec::new();
    if has_full {
        if let SourceKind::PointMasses { masses } = &f.kind {
            let pts: Vec<P2> = masses.iter().filter(|m| m.mass != 0.0).map(|m| [m.location[0], m.location[1]]).collect();
            for (j, &y) in pts.iter().enumerate() {
                let sd = domain.signed_distance(&y);
                if sd.abs() <= 1e-12 {
                    return Err(Error::PointMassSingularity(y.to_vec()));
                }
                if sd > 0.0 {
                    continue;
                }
                if let Some(eps) = opts.excision {
                    holes.push((y, eps));
                    continue;
                }
                let mut eps = 0.25 * (-sd);
                for (k, &z) in pts.iter().enumerate() {
                    if k != j {
                        eps = eps.min(0.25 * dist(y, z));
                    }
                }
                holes.push((y, eps));
                pv_disks.push((y, eps));
            }
            if !pv_disks.is_empty() {
                let rule = SphereRule::circle(4096);
                let scale = abs_functional(kernel, phi_for_tail.unwrap_or(&PhiIntegrand::norm_squared(kernel.target_dim)), &rule)?;
                // The combined integrand is tested against both signs of the kernel.
                let test = |sign: f64| -> f64 {
                    let mut acc = 0.0;
                    for i in 0..rule.len() {
                        let z = rule.node(i);
                        let mut k = [0.0; MAX_TARGET];
                        kernel.sphere_into(z, &mut k);
                        for v in k.iter_mut() {
                            *v *= sign;
                        }
                        let vals = [k; 4];
                        acc += rule.weights[i] * combine(&vals[..convs.len()]);
                    }
                    acc
                };
                for sign in [1.0, -1.0] {
                    let v = test(sign);
                    if v.abs() > 1e-8 * scale.max(1.0) {
                        return Err(Error::Divergent(format!(
                            "integrand does not cancel over circles around a point mass (∫ = {v:.3e}); pass an excision radius"
                        )));
                    }
                }
            }
        }
    }
    let inner_scale = circles
        .iter()
        .map(|c| c.1)
        .chain(holes.iter().map(|h| h.1))
        .fold(1.0f64, f64::min)
        .max(1e-6);
    let region = PolarRegion { domain, focus, cap, circles, peaks, holes, inner_scale };
    let mut out = integrate_polar(&region, field, opts);
    for (y, eps) in pv_disks {
        let d = integrate_disk_pv(y, eps, &field, opts);
        out.value += d.value;
        out.error += d.error;
        out.converged &= d.converged;
    }
    out.truncation_radius = truncation;
    Ok(out)
}

/// `∫_Ω Φ(sign · K_sel ∗ f)`.
pub fn integrate_over_domain(
    domain: &Domain,
    kernel: &HomogeneousKernel,
    sel: KernelSel,
    f: &SourceFunction,
    phi: &PhiIntegrand,
    sign: f64,
    opts: &IntegrateOpts,
) -> Result<DomainIntegral> {
    crate::kernel::validate_pair(kernel, phi)?;
    let l = kernel.target_dim;
    integrate_combo(
        domain,
        kernel,
        f,
        &[sel],
        None,
        Some(phi),
        |v| {
            let mut w = v[0];
            for x in w.iter_mut() {
                *x *= sign;
            }
            phi.eval(&w[..l])
        },
        opts,
    )
}

/// `|v|` of the first `l` entries.
pub(crate) fn vnorm(v: &KVec, l: usize) -> f64 {
    norm(&v[..l])
}

/// Natural magnitude of `∫ Φ(K∗f)`: `‖f‖₁^p · sup|Φ| · sup|s|^p`.
pub fn natural_scale(kernel: &HomogeneousKernel, phi: &PhiIntegrand, f: &SourceFunction) -> f64 {
    f.l1_norm().powf(phi.p) * phi.sphere_sup() * kernel.sphere_sup().powf(phi.p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::PointMass;
    use approx::assert_abs_diff_eq;

    fn ident() -> HomogeneousKernel {
        HomogeneousKernel::identity(2, 1.0)
    }

    #[test]
    fn region_area() {
        let d = Domain::ball(vec![0.3, -0.2], 1.5).unwrap();
        let reg = PolarRegion { domain: &d, focus: [0.3, -0.2], cap: f64::INFINITY, circles: vec![([1.0, 0.0], 0.3)], peaks: vec![], holes: vec![([0.0, 0.0], 0.25)], inner_scale: 1.0 };
        let r = integrate_polar(&reg, |_| 1.0, &IntegrateOpts::default());
        assert_abs_diff_eq!(r.value, PI * (2.25 - 0.0625), epsilon = 1e-9);
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        let reg = PolarRegion { domain: &h, focus: [0.0, 0.0], cap: 2.0, circles: vec![], peaks: vec![], holes: vec![], inner_scale: 1.0 };
        assert_abs_diff_eq!(integrate_polar(&reg, |_| 1.0, &IntegrateOpts::default()).value, 2.0 * PI, epsilon = 1e-9);
    }

    #[test]
    fn annulus_oracle() {
        // Φ = |v|², centred unit mass, piece fully inside: ∫ |x|^{-2} over the annulus.
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let f = SourceFunction::point_mass(vec![0.0, 0.0], 1.0);
        let phi = PhiIntegrand::norm_squared(2);
        for n in [1, 3, 6] {
            let r = integrate_over_domain(&d, &ident(), KernelSel::single(n), &f, &phi, 1.0, &IntegrateOpts::default()).unwrap();
            assert_abs_diff_eq!(r.value, 2.0 * PI * 2f64.ln(), epsilon = 1e-8);
        }
        let off = SourceFunction::point_mass(vec![0.3, 0.1], 1.0);
        let r = integrate_over_domain(&d, &ident(), KernelSel::single(3), &off, &phi, 1.0, &IntegrateOpts::default()).unwrap();
        assert_abs_diff_eq!(r.value, 2.0 * PI * 2f64.ln(), epsilon = 1e-8);
    }

    #[test]
    fn piece_cut_by_boundary() {
        // Mass on the inside at distance 0.3 from a straight boundary; the
        // piece annulus 0.25 < |x| < 0.5 is cut by the line.
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        let f = SourceFunction::point_mass(vec![0.0, 0.3], 1.0);
        let phi = PhiIntegrand::norm_squared(2);
        let r = integrate_over_domain(&h, &ident(), KernelSel::single(1), &f, &phi, 1.0, &IntegrateOpts::default()).unwrap();
        // ∫ r^{-1} · (angular measure of the arc above the line) dr.
        let oracle = crate::quad::adaptive(
            |r: f64| {
                let ang = if r <= 0.3 { 2.0 * PI } else { 2.0 * PI - 2.0 * (0.3 / r).acos() };
                ang / r
            },
            0.25,
            0.5,
            AdaptiveOpts::new(1e-14, 1e-13),
        );
        assert_abs_diff_eq!(r.value, oracle.value, epsilon = 1e-8);
    }

    #[test]
    fn principal_value_with_cancelling_phi() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let phi = PhiIntegrand::trace_free_quadratic();
        let f = SourceFunction::point_mass(vec![0.0, 0.0], 1.0);
        let r = integrate_over_domain(&d, &ident(), KernelSel::Full, &f, &phi, 1.0, &IntegrateOpts::default()).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-9);
        let g = SourceFunction::point_masses(vec![
            PointMass { location: vec![0.2, 0.1], mass: 1.0 },
            PointMass { location: vec![-0.3, 0.2], mass: -0.5 },
        ])
        .unwrap();
        let a = integrate_over_domain(&d, &ident(), KernelSel::Full, &g, &phi, 1.0, &IntegrateOpts::default()).unwrap();
        let b = integrate_over_domain(&d, &ident(), KernelSel::Full, &g.scaled(2.0), &phi, 1.0, &IntegrateOpts::default()).unwrap();
        assert!(a.converged);
        assert_abs_diff_eq!(b.value, 4.0 * a.value, epsilon = 1e-7 * (1.0 + a.value.abs()));
        assert!(matches!(
            integrate_over_domain(&d, &ident(), KernelSel::Full, &g, &PhiIntegrand::norm_squared(2), 1.0, &IntegrateOpts::default()),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn odd_phi_negates() {
        let d = Domain::ball(vec![0.0, 1.0], 1.0).unwrap();
        let phi = PhiIntegrand::first_component_norm();
        let f = SourceFunction::point_masses(vec![
            PointMass { location: vec![0.1, 0.5], mass: 1.0 },
            PointMass { location: vec![-0.2, 1.3], mass: 0.4 },
        ])
        .unwrap();
        let o = IntegrateOpts::default();
        let a = integrate_over_domain(&d, &ident(), KernelSel::Full, &f, &phi, 1.0, &o).unwrap();
        let b = integrate_over_domain(&d, &ident(), KernelSel::Full, &f.scaled(-1.0), &phi, 1.0, &o).unwrap();
        assert_abs_diff_eq!(a.value, -b.value, epsilon = 1e-9);
        assert!(a.value.abs() > 1e-3);
    }

    #[test]
    fn additivity_under_splitting() {
        // Disk = left half ∪ right half, realised as disk ∩ half-planes via
        // the explicit polar region.
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let f = SourceFunction::point_mass(vec![0.4, 0.2], 1.0);
        let phi = PhiIntegrand::norm_squared(2);
        let o = IntegrateOpts::default();
        let whole = integrate_over_domain(&d, &ident(), KernelSel::single(2), &f, &phi, 1.0, &o).unwrap();
        let k = ident();
        let conv = Convolver::new(&k, KernelSel::single(2), &f, 1e-12).unwrap();
        let g = |x: P2, right: bool| {
            if (x[0] >= 0.0) != right {
                return 0.0;
            }
            let mut v = [0.0; MAX_TARGET];
            conv.eval(&x, &mut v).unwrap();
            phi.eval(&v[..2])
        };
        let mk = |extra: Vec<(P2, f64)>| PolarRegion { domain: &d, focus: [0.0, 0.0], cap: f64::INFINITY, circles: extra, peaks: vec![[0.4, 0.2]], holes: vec![], inner_scale: 1.0 };
        let circ = vec![([0.4, 0.2], 0.125), ([0.4, 0.2], 0.25)];
        let l = integrate_polar(&mk(circ.clone()), |x| g(x, false), &o);
        let r = integrate_polar(&mk(circ), |x| g(x, true), &o);
        assert_abs_diff_eq!(l.value + r.value, whole.value, epsilon = 2e-6);
    }

    #[test]
    fn half_space_mean_zero_rules() {
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        let phi = PhiIntegrand::trace_free_quadratic();
        let f = SourceFunction::point_mass(vec![0.0, 1.0], 1.0);
        assert!(matches!(
            integrate_over_domain(&h, &ident(), KernelSel::Full, &f, &phi, 1.0, &IntegrateOpts::default()),
            Err(Error::Divergent(_))
        ));
        let pair = SourceFunction::point_masses(vec![
            PointMass { location: vec![0.0, 1.0], mass: 1.0 },
            PointMass { location: vec![0.5, 2.0], mass: -1.0 },
        ])
        .unwrap();
        let o = IntegrateOpts { abs_tol: 1e-7, ..IntegrateOpts::default() };
        let r = integrate_over_domain(&h, &ident(), KernelSel::Full, &pair, &phi, 1.0, &o).unwrap();
        assert!(r.truncation_radius.unwrap() > 10.0);
        assert!(r.value.is_finite());
    }

    #[test]
    fn zero_source() {
        let d = Domain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let r = integrate_over_domain(&d, &ident(), KernelSel::Full, &SourceFunction::zero(2), &PhiIntegrand::norm_squared(2), 1.0, &IntegrateOpts::default()).unwrap();
        assert_eq!(r.value, 0.0);
    }
}
