//! Domains described by signed distance, the dyadic cube lattice, and
//! boundary-cube classification.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::norm;

pub type P2 = [f64; 2];

/// Boundary profile `s(θ)` of a perturbed disk `r(θ) = R(1 + a·s(θ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BoundaryProfile {
    /// `cos(kθ)`: smooth.
    Cos { k: u32 },
    /// `|sin θ|^{1+β}`: gradient is exactly β-Hölder at θ = 0, π.
    Holder { beta: f64 },
}

impl BoundaryProfile {
    fn value(&self, t: f64) -> f64 {
        match *self {
            BoundaryProfile::Cos { k } => (k as f64 * t).cos(),
            BoundaryProfile::Holder { beta } => t.sin().abs().powf(1.0 + beta),
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        match *self {
            BoundaryProfile::Cos { k } => -(k as f64) * (k as f64 * t).sin(),
            BoundaryProfile::Holder { beta } => {
                let s = t.sin();
                (1.0 + beta) * s.abs().powf(beta) * s.signum() * t.cos()
            }
        }
    }

    fn derivative_sup(&self) -> f64 {
        match *self {
            BoundaryProfile::Cos { k } => k as f64,
            BoundaryProfile::Holder { beta } => 1.0 + beta,
        }
    }

    pub fn beta(&self) -> f64 {
        match *self {
            BoundaryProfile::Cos { .. } => 1.0,
            BoundaryProfile::Holder { beta } => beta,
        }
    }
}

const GRAPH_SAMPLES: usize = 4096;

/// A planar disk with a radially perturbed boundary, star-shaped about its center.
#[derive(Debug, Clone)]
pub struct GraphDisk {
    pub center: P2,
    pub radius: f64,
    pub amplitude: f64,
    pub profile: BoundaryProfile,
    samples: Vec<P2>,
}

impl GraphDisk {
    pub fn new(center: P2, radius: f64, amplitude: f64, profile: BoundaryProfile) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Config("graph disk radius must be positive".into()));
        }
        if amplitude.abs() * profile.derivative_sup() >= 1.0 || amplitude.abs() >= 1.0 {
            return Err(Error::Config("graph disk perturbation too large: need |a|·sup|s′| < 1".into()));
        }
        if let BoundaryProfile::Holder { beta } = profile {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::Config("Hölder exponent must lie in (0, 1]".into()));
            }
        }
        let mut g = Self { center, radius, amplitude, profile, samples: Vec::new() };
        g.samples = (0..GRAPH_SAMPLES).map(|i| g.point(2.0 * PI * i as f64 / GRAPH_SAMPLES as f64)).collect();
        Ok(g)
    }

    pub fn r(&self, t: f64) -> f64 {
        self.radius * (1.0 + self.amplitude * self.profile.value(t))
    }

    fn dr(&self, t: f64) -> f64 {
        self.radius * self.amplitude * self.profile.derivative(t)
    }

    pub fn point(&self, t: f64) -> P2 {
        let r = self.r(t);
        [self.center[0] + r * t.cos(), self.center[1] + r * t.sin()]
    }

    fn contains(&self, x: P2) -> bool {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let rho = (dx * dx + dy * dy).sqrt();
        rho < self.r(dy.atan2(dx))
    }

    /// Parameter of the closest boundary point (sample scan, then golden section).
    fn closest_param(&self, x: P2) -> f64 {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, s) in self.samples.iter().enumerate() {
            let d = (s[0] - x[0]).powi(2) + (s[1] - x[1]).powi(2);
            if d < bd {
                bd = d;
                best = i;
            }
        }
        let h = 2.0 * PI / GRAPH_SAMPLES as f64;
        let t0 = best as f64 * h;
        let dist2 = |t: f64| {
            let p = self.point(t);
            (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)
        };
        golden_min(dist2, t0 - 1.5 * h, t0 + 1.5 * h, 80)
    }
}

pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// A domain Ω ⊂ ℝ^d.
#[derive(Debug, Clone)]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    /// `{x : ⟨x, ξ⟩ > offset}` with unit ξ.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    GraphDisk(GraphDisk),
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || center.len() < 2 {
            return Err(Error::Config("ball needs positive radius and d ≥ 2".into()));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n = norm(&normal);
        if normal.len() < 2 || (n - 1.0).abs() > 1e-12 {
            return Err(Error::Config("half-space normal must be a unit vector in d ≥ 2".into()));
        }
        Ok(Domain::HalfSpace { normal, offset })
    }

    pub fn graph_disk(center: P2, radius: f64, amplitude: f64, profile: BoundaryProfile) -> Result<Self> {
        Ok(Domain::GraphDisk(GraphDisk::new(center, radius, amplitude, profile)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::HalfSpace { normal, .. } => normal.len(),
            Domain::GraphDisk(_) => 2,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Domain::HalfSpace { .. })
    }

    /// Hölder exponent of the boundary gradient.
    pub fn beta(&self) -> f64 {
        match self {
            Domain::GraphDisk(g) if g.amplitude != 0.0 => g.profile.beta(),
            _ => 1.0,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 2.0 * radius,
            Domain::HalfSpace { .. } => f64::INFINITY,
            Domain::GraphDisk(g) => {
                let mut best: f64 = 0.0;
                for (i, a) in g.samples.iter().enumerate().step_by(8) {
                    for b in g.samples.iter().skip(i).step_by(8) {
                        best = best.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                    }
                }
                best
            }
        }
    }

    /// Negative inside, positive outside, zero on ∂Ω.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Domain::Ball { center, radius } => {
                let d: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                d - radius
            }
            Domain::HalfSpace { normal, offset } => {
                let s: f64 = x.iter().zip(normal).map(|(a, b)| a * b).sum();
                offset - s
            }
            Domain::GraphDisk(g) => {
                let p = [x[0], x[1]];
                let t = g.closest_param(p);
                let q = g.point(t);
                let d = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                if g.contains(p) {
                    -d
                } else {
                    d
                }
            }
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::GraphDisk(g) => g.contains([x[0], x[1]]),
            _ => self.signed_distance(x) < 0.0,
        }
    }

    #[inline]
    pub(crate) fn contains2(&self, x: P2) -> bool {
        match self {
            Domain::Ball { center, radius } => {
                (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) < radius * radius
            }
            Domain::HalfSpace { normal, offset } => x[0] * normal[0] + x[1] * normal[1] > *offset,
            Domain::GraphDisk(g) => g.contains(x),
        }
    }

    /// Closest point of ∂Ω to `x`.
    pub fn closest_boundary_point(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Domain::Ball { center, radius } => {
                let v: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
                let n = norm(&v);
                if n == 0.0 {
                    let mut p = center.clone();
                    p[0] += radius;
                    return p;
                }
                center.iter().zip(&v).map(|(c, vi)| c + radius * vi / n).collect()
            }
            Domain::HalfSpace { normal, .. } => {
                let sd = self.signed_distance(x);
                x.iter().zip(normal).map(|(a, n)| a + sd * n).collect()
            }
            Domain::GraphDisk(g) => g.point(g.closest_param([x[0], x[1]])).to_vec(),
        }
    }

    /// Unit vector pointing into Ω at the boundary point `z`.
    pub fn inward_normal(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        if self.signed_distance(z).abs() > 1e-9 {
            return Err(Error::NotOnBoundary(z.to_vec()));
        }
        Ok(match self {
            Domain::Ball { center, radius } => center.iter().zip(z).map(|(c, zi)| (c - zi) / radius).collect(),
            Domain::HalfSpace { normal, .. } => normal.clone(),
            Domain::GraphDisk(g) => {
                let t = (z[1] - g.center[1]).atan2(z[0] - g.center[0]);
                let (r, dr) = (g.r(t), g.dr(t));
                let tx = dr * t.cos() - r * t.sin();
                let ty = dr * t.sin() + r * t.cos();
                let n = (tx * tx + ty * ty).sqrt();
                // Counterclockwise tangent rotated by +90° points inward.
                vec![-ty / n, tx / n]
            }
        })
    }

    /// Boundary point whose inward normal is `xi` (minimizer of ⟨z, ξ⟩ over Ω̄).
    pub fn support_point(&self, xi: &[f64]) -> Result<Vec<f64>> {
        match self {
            Domain::Ball { center, radius } => Ok(center.iter().zip(xi).map(|(c, x)| c - radius * x).collect()),
            Domain::HalfSpace { normal, offset } => {
                let dot: f64 = normal.iter().zip(xi).map(|(a, b)| a * b).sum();
                if (dot - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain("half-space has a single inward normal".into()));
                }
                Ok(normal.iter().map(|n| n * offset).collect())
            }
            Domain::GraphDisk(g) => {
                let f = |t: f64| {
                    let p = g.point(t);
                    p[0] * xi[0] + p[1] * xi[1]
                };
                let (mut best, mut bv) = (0, f64::INFINITY);
                for i in 0..GRAPH_SAMPLES {
                    let v = f(2.0 * PI * i as f64 / GRAPH_SAMPLES as f64);
                    if v < bv {
                        bv = v;
                        best = i;
                    }
                }
                let h = 2.0 * PI / GRAPH_SAMPLES as f64;
                let t = golden_min(f, best as f64 * h - 1.5 * h, best as f64 * h + 1.5 * h, 80);
                Ok(g.point(t).to_vec())
            }
        }
    }

    /// Angles (radians) where the circle `center + ρ(cos θ, sin θ)` crosses ∂Ω.
    pub fn circle_crossings(&self, center: P2, rho: f64) -> Vec<f64> {
        match self {
            Domain::Ball { center: c, radius } => circle_circle_angles(center, rho, [c[0], c[1]], *radius),
            Domain::HalfSpace { normal, offset } => {
                let s = center[0] * normal[0] + center[1] * normal[1];
                let t = (offset - s) / rho;
                if t.abs() >= 1.0 {
                    return Vec::new();
                }
                let phi = normal[1].atan2(normal[0]);
                let a = t.acos();
                vec![phi - a, phi + a]
            }
            Domain::GraphDisk(g) => {
                const M: usize = 512;
                let h = 2.0 * PI / M as f64;
                let inside = |t: f64| g.contains([center[0] + rho * t.cos(), center[1] + rho * t.sin()]);
                let mut out = Vec::new();
                let mut prev = inside(0.0);
                for i in 1..=M {
                    let t = i as f64 * h;
                    let cur = inside(t);
                    if cur != prev {
                        let (mut a, mut b) = (t - h, t);
                        for _ in 0..60 {
                            let m = 0.5 * (a + b);
                            if inside(m) == prev {
                                a = m;
                            } else {
                                b = m;
                            }
                        }
                        out.push(0.5 * (a + b));
                    }
                    prev = cur;
                }
                out
            }
        }
    }

    /// Radii from `center` at which circles about `center` may start or stop
    /// crossing ∂Ω (tangencies); used as breakpoints in radial integrals.
    pub fn radial_breakpoints(&self, center: P2) -> Vec<f64> {
        match self {
            Domain::Ball { center: c, radius } => {
                let d = ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt();
                vec![(d - radius).abs(), d + radius]
            }
            Domain::HalfSpace { .. } => vec![self.signed_distance(&center).abs()],
            Domain::GraphDisk(g) => {
                let mut lo = f64::INFINITY;
                let mut hi: f64 = 0.0;
                for s in &g.samples {
                    let d = ((s[0] - center[0]).powi(2) + (s[1] - center[1]).powi(2)).sqrt();
                    lo = lo.min(d);
                    hi = hi.max(d);
                }
                vec![lo, hi * (1.0 + 1e-9)]
            }
        }
    }

    /// Largest distance from `center` to a point of Ω̄ (∞ for the half-space).
    pub fn max_distance_from(&self, center: P2) -> f64 {
        match self {
            Domain::Ball { center: c, radius } => {
                ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt() + radius
            }
            Domain::HalfSpace { .. } => f64::INFINITY,
            Domain::GraphDisk(_) => self.radial_breakpoints(center)[1],
        }
    }

    /// Points on ∂Ω within Euclidean distance `reach` of `x` (planar domains).
    pub fn boundary_samples_near(&self, x: P2, reach: f64, count: usize) -> Vec<P2> {
        match self {
            Domain::Ball { center, radius } => {
                let c = [center[0], center[1]];
                let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
                let phi = (x[1] - c[1]).atan2(x[0] - c[0]);
                // Angular window covering the boundary inside B(x, reach).
                let half = if d == 0.0 || reach >= d + radius {
                    PI
                } else {
                    let cosw = (d * d + radius * radius - reach * reach) / (2.0 * d * radius);
                    if cosw >= 1.0 {
                        0.0
                    } else {
                        cosw.max(-1.0).acos()
                    }
                };
                (0..count)
                    .map(|i| {
                        let t = phi - half + 2.0 * half * (i as f64 + 0.5) / count as f64;
                        [c[0] + radius * t.cos(), c[1] + radius * t.sin()]
                    })
                    .collect()
            }
            Domain::HalfSpace { normal, .. } => {
                let p = self.closest_boundary_point(&x);
                let tan = [-normal[1], normal[0]];
                (0..count)
                    .map(|i| {
                        let s = -reach + 2.0 * reach * (i as f64 + 0.5) / count as f64;
                        [p[0] + s * tan[0], p[1] + s * tan[1]]
                    })
                    .collect()
            }
            Domain::GraphDisk(g) => {
                let step = (GRAPH_SAMPLES / count.max(1)).max(1);
                let mut pts: Vec<P2> = g
                    .samples
                    .iter()
                    .copied()
                    .filter(|s| ((s[0] - x[0]).powi(2) + (s[1] - x[1]).powi(2)).sqrt() <= reach)
                    .collect();
                if pts.len() > count {
                    pts = pts.into_iter().step_by(step).collect();
                }
                pts
            }
        }
    }

    /// Whether the closed box `[lo, hi]` meets ∂Ω.
    pub fn box_meets_boundary(&self, lo: &[f64], hi: &[f64]) -> bool {
        match self {
            Domain::Ball { center, radius } => {
                let mut min2 = 0.0;
                let mut max2 = 0.0;
                for ((l, h), c) in lo.iter().zip(hi).zip(center) {
                    let near = c.clamp(*l, *h);
                    min2 += (near - c).powi(2);
                    max2 += (l - c).abs().max((h - c).abs()).powi(2);
                }
                min2 <= radius * radius && radius * radius <= max2
            }
            Domain::HalfSpace { normal, offset } => {
                let mut mn = 0.0;
                let mut mx = 0.0;
                for ((l, h), n) in lo.iter().zip(hi).zip(normal) {
                    mn += (l * n).min(h * n);
                    mx += (l * n).max(h * n);
                }
                mn <= *offset && *offset <= mx
            }
            Domain::GraphDisk(_) => self.box_meets_boundary_rec([lo[0], lo[1]], [hi[0], hi[1]], 0),
        }
    }

    fn box_meets_boundary_rec(&self, lo: P2, hi: P2, depth: u32) -> bool {
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half_diag = 0.5 * ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
        let sd = self.signed_distance(&c);
        if sd.abs() > half_diag {
            return false;
        }
        if sd == 0.0 {
            return true;
        }
        let corners = [[lo[0], lo[1]], [hi[0], lo[1]], [lo[0], hi[1]], [hi[0], hi[1]]];
        let inside_c = sd < 0.0;
        if corners.iter().any(|p| self.contains2(*p) != inside_c) {
            return true;
        }
        if depth >= 6 {
            // Unresolved: boundary passes within half a diagonal of a tiny box.
            return true;
        }
        let quads = [
            ([lo[0], lo[1]], c),
            ([c[0], lo[1]], [hi[0], c[1]]),
            ([lo[0], c[1]], [c[0], hi[1]]),
            (c, hi),
        ];
        quads.iter().any(|(l, h)| self.box_meets_boundary_rec(*l, *h, depth + 1))
    }

    /// Numerical estimate of the constant `C(Ω)` in `|h(y)| ≤ C|y|^{1+β}`
    /// for the local graph parametrization of the boundary.
    pub fn holder_constant(&self) -> f64 {
        match self {
            Domain::Ball { radius, .. } => 1.0 / radius,
            Domain::HalfSpace { .. } => 0.0,
            Domain::GraphDisk(g) => {
                let beta = self.beta();
                let mut best: f64 = 0.0;
                for i in (0..GRAPH_SAMPLES).step_by(16) {
                    let t0 = 2.0 * PI * i as f64 / GRAPH_SAMPLES as f64;
                    let z = g.point(t0);
                    let nrm = self.inward_normal(&z).unwrap_or_else(|_| vec![0.0, 1.0]);
                    let tan = [nrm[1], -nrm[0]];
                    for k in 1..=32 {
                        let dt = 0.2 * k as f64 / 32.0;
                        for s in [-1.0, 1.0] {
                            let p = g.point(t0 + s * dt);
                            let v = [p[0] - z[0], p[1] - z[1]];
                            let y = v[0] * tan[0] + v[1] * tan[1];
                            let h = v[0] * nrm[0] + v[1] * nrm[1];
                            if y.abs() > 1e-9 {
                                best = best.max(h.abs() / y.abs().powf(1.0 + beta));
                            }
                        }
                    }
                }
                best
            }
        }
    }
}

/// Angles on the circle `(c1, r1)` where it crosses the circle `(c2, r2)`.
pub fn circle_circle_angles(c1: P2, r1: f64, c2: P2, r2: f64) -> Vec<f64> {
    let dx = c2[0] - c1[0];
    let dy = c2[1] - c1[1];
    let d = (dx * dx + dy * dy).sqrt();
    if d == 0.0 || d >= r1 + r2 || d <= (r1 - r2).abs() {
        return Vec::new();
    }
    let cosw = ((r1 * r1 + d * d - r2 * r2) / (2.0 * r1 * d)).clamp(-1.0, 1.0);
    let phi = dy.atan2(dx);
    let w = cosw.acos();
    vec![phi - w, phi + w]
}

/// A dyadic cube `∏ [2^{−k} j_i, 2^{−k}(j_i + 1))`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub generation: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn new(generation: i32, index: Vec<i64>) -> Self {
        Self { generation, index }
    }

    /// The cube of the given generation containing `x`.
    pub fn containing(generation: i32, x: &[f64]) -> Self {
        let s = 2f64.powi(generation);
        Self { generation, index: x.iter().map(|v| (v * s).floor() as i64).collect() }
    }

    pub fn dim(&self) -> usize {
        self.index.len()
    }

    pub fn side(&self) -> f64 {
        2f64.powi(-self.generation)
    }

    pub fn lower(&self) -> Vec<f64> {
        let s = self.side();
        self.index.iter().map(|j| *j as f64 * s).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        let s = self.side();
        self.index.iter().map(|j| (*j as f64 + 0.5) * s).collect()
    }

    /// Box of the dilation `λQ` (same center, side `λℓ(Q)`).
    pub fn dilated_box(&self, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let h = 0.5 * lambda * self.side();
        let c = self.center();
        (c.iter().map(|v| v - h).collect(), c.iter().map(|v| v + h).collect())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let s = 2f64.powi(self.generation);
        x.iter().zip(&self.index).all(|(v, j)| (v * s).floor() as i64 == *j)
    }

    /// Whether `x` lies in the half-open dilation `λQ`.
    pub fn dilated_contains(&self, lambda: f64, x: &[f64]) -> bool {
        let (lo, hi) = self.dilated_box(lambda);
        x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= *l && *v < *h)
    }

    pub fn parent(&self) -> Self {
        Self { generation: self.generation - 1, index: self.index.iter().map(|j| j.div_euclid(2)).collect() }
    }

    /// The `2^d` children in lexicographic index order.
    pub fn children(&self) -> Vec<Self> {
        let d = self.dim();
        (0..(1usize << d))
            .map(|mask| {
                let index = (0..d)
                    .map(|i| 2 * self.index[i] + ((mask >> (d - 1 - i)) & 1) as i64)
                    .collect();
                Self { generation: self.generation + 1, index }
            })
            .collect()
    }

    /// Dyadic subcubes of relative generation `m` (Q itself at m = 0), lexicographic.
    pub fn descendants(&self, m: u32) -> Vec<Self> {
        let mut cur = vec![self.clone()];
        for _ in 0..m {
            cur = cur.iter().flat_map(|c| c.children()).collect();
        }
        cur.sort();
        cur
    }
}

/// `Q ∈ 𝔅` iff the closed cube `(d+2)Q` meets ∂Ω.
pub fn is_boundary_cube(domain: &Domain, q: &DyadicCube) -> bool {
    is_boundary_dilated(domain, q, 1.0)
}

/// Boundary test for the cube `λQ`: whether `(d+2)·λQ` meets ∂Ω.
pub fn is_boundary_dilated(domain: &Domain, q: &DyadicCube, lambda: f64) -> bool {
    let (lo, hi) = q.dilated_box(lambda * (q.dim() as f64 + 2.0));
    domain.box_meets_boundary(&lo, &hi)
}

/// `signed_distance` free function form.
pub fn signed_distance(domain: &Domain, x: &[f64]) -> f64 {
    domain.signed_distance(x)
}

/// `inward_normal` free function form.
pub fn inward_normal(domain: &Domain, z: &[f64]) -> Result<Vec<f64>> {
    domain.inward_normal(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_disk() -> Domain {
        Domain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        assert_eq!(unit_disk().signed_distance(&[0.0, 0.0]), -1.0);
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        assert_eq!(h.signed_distance(&[5.0, -2.0]), 2.0);
    }

    #[test]
    fn graph_disk_degenerates_to_ball() {
        let g = Domain::graph_disk([0.3, -0.2], 1.5, 0.0, BoundaryProfile::Cos { k: 3 }).unwrap();
        let b = Domain::ball(vec![0.3, -0.2], 1.5).unwrap();
        for x in [[0.0, 0.0], [2.0, 1.0], [-1.1, 0.4], [0.3, 1.2]] {
            assert!((g.signed_distance(&x) - b.signed_distance(&x)).abs() < 1e-12);
        }
        let n = g.inward_normal(&[0.3, 1.3]).unwrap();
        assert_relative_eq!(n[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(n[1], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn normals() {
        let n = unit_disk().inward_normal(&[1.0, 0.0]).unwrap();
        assert_eq!(n, vec![-1.0, 0.0]);
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        assert_eq!(h.inward_normal(&[3.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(unit_disk().inward_normal(&[0.5, 0.0]), Err(Error::NotOnBoundary(_))));
    }

    #[test]
    fn boundary_cube_examples() {
        let d = unit_disk();
        assert!(!is_boundary_cube(&d, &DyadicCube::new(2, vec![0, 0])));
        assert!(is_boundary_cube(&d, &DyadicCube::new(2, vec![3, 0])));
        let h = Domain::half_space(vec![0.0, 1.0], 0.0).unwrap();
        assert!(!is_boundary_cube(&h, &DyadicCube::new(2, vec![0, 4])));
        assert!(is_boundary_cube(&h, &DyadicCube::new(2, vec![0, 1])));
    }

    #[test]
    fn cube_children_and_parent() {
        let q = DyadicCube::new(1, vec![-1, 2]);
        let kids = q.children();
        assert_eq!(kids.len(), 4);
        assert!(kids.iter().all(|k| k.parent() == q));
        assert_eq!(kids[0].index, vec![-2, 4]);
        assert_eq!(kids[3].index, vec![-1, 5]);
    }

    #[test]
    fn circle_crossings_on_ball() {
        let d = Domain::ball(vec![0.0, 1.0], 1.0).unwrap();
        let mut c = d.circle_crossings([0.0, 0.0], 1.0);
        c.sort_by(f64::total_cmp);
        // |ζ − (0,1)| = 1 at ζ₂ = 1/2.
        assert_relative_eq!(c[0], PI / 6.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 5.0 * PI / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn support_point_of_shifted_disk() {
        let d = Domain::ball(vec![0.0, 1.0], 1.0).unwrap();
        assert_eq!(d.support_point(&[0.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn holder_constant_of_disk() {
        let g = Domain::graph_disk([0.0, 0.0], 1.0, 0.1, BoundaryProfile::Cos { k: 2 }).unwrap();
        let c = g.holder_constant();
        assert!(c > 0.3 && c < 5.0, "C = {c}");
    }
}
