//! Homogeneous kernels `K`, homogeneous integrands `Φ`, the dyadic kernel
//! pieces `K_n` / `K_{≤n}`, and the scalar helpers built on them.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest supported target dimension of a kernel.
pub const MAX_TARGET: usize = 4;

/// Fixed-capacity value in `ℝ^ℓ`, `ℓ ≤ MAX_TARGET`. Unused slots stay zero.
pub type KVec = [f64; MAX_TARGET];

pub type SphereFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarSphereFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Periodic piecewise-linear table in the polar angle of a planar unit vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleTable {
    /// Strictly increasing angles in `[0, 2π)`.
    pub angles: Vec<f64>,
    /// One row of component values per angle.
    pub values: Vec<Vec<f64>>,
}

impl AngleTable {
    pub fn new(angles: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if angles.len() < 2 || angles.len() != values.len() {
            return Err(Error::Config("angle table needs at least two rows".into()));
        }
        let width = values[0].len();
        if width == 0 || values.iter().any(|r| r.len() != width) {
            return Err(Error::Config("angle table rows have inconsistent widths".into()));
        }
        for w in angles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("angle table angles must be strictly increasing".into()));
            }
        }
        if angles[0] < 0.0 || *angles.last().unwrap() >= 2.0 * PI {
            return Err(Error::Config("angle table angles must lie in [0, 2π)".into()));
        }
        Ok(Self { angles, values })
    }

    /// Reads a CSV with a header row: first column angle (radians), rest values.
    pub fn from_csv_path(path: &std::path::Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut angles = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.trim().parse::<f64>()).collect();
            let nums = nums.map_err(|e| Error::Config(format!("bad number in {}: {e}", path.display())))?;
            if nums.len() < 2 {
                return Err(Error::Config("angle table needs an angle and a value column".into()));
            }
            angles.push(nums[0]);
            values.push(nums[1..].to_vec());
        }
        Self::new(angles, values)
    }

    pub fn width(&self) -> usize {
        self.values[0].len()
    }

    fn eval(&self, theta: f64, out: &mut [f64]) {
        let t = theta.rem_euclid(2.0 * PI);
        let n = self.angles.len();
        // First index with angle > t.
        let hi = self.angles.partition_point(|&a| a <= t);
        let (i0, i1, a0, a1) = if hi == 0 || hi == n {
            let a0 = self.angles[n - 1];
            let a1 = self.angles[0] + 2.0 * PI;
            let tt = if hi == 0 { t + 2.0 * PI } else { t };
            let w = (tt - a0) / (a1 - a0);
            for (k, o) in out.iter_mut().enumerate().take(self.width()) {
                *o = (1.0 - w) * self.values[n - 1][k] + w * self.values[0][k];
            }
            return;
        } else {
            (hi - 1, hi, self.angles[hi - 1], self.angles[hi])
        };
        let w = (t - a0) / (a1 - a0);
        for (k, o) in out.iter_mut().enumerate().take(self.width()) {
            *o = (1.0 - w) * self.values[i0][k] + w * self.values[i1][k];
        }
    }
}

/// Restriction of a kernel to the unit sphere.
#[derive(Clone)]
pub enum KernelSphereMap {
    /// `ζ ↦ scale·ζ`; with `scale = 1/(2π)` in the plane this is the gradient
    /// of the fundamental solution of the Laplacian.
    Identity { scale: f64 },
    /// Planar trigonometric polynomial per component:
    /// `c_j(θ) = Σ_k a[j][k] cos kθ + b[j][k] sin kθ`.
    Trig2 { cos: Vec<Vec<f64>>, sin: Vec<Vec<f64>> },
    /// Planar sample table, piecewise linear in angle.
    Table(AngleTable),
    Custom(SphereFn),
}

impl fmt::Debug for KernelSphereMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity { scale } => write!(f, "Identity({scale})"),
            Self::Trig2 { cos, .. } => write!(f, "Trig2({} comps)", cos.len()),
            Self::Table(t) => write!(f, "Table({} rows)", t.angles.len()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A positively `(α−d)`-homogeneous kernel `ℝ^d∖{0} → ℝ^ℓ`.
#[derive(Debug, Clone)]
pub struct HomogeneousKernel {
    pub dim: usize,
    pub target_dim: usize,
    pub alpha: f64,
    pub sphere_map: KernelSphereMap,
    pub lipschitz_hint: Option<f64>,
}

impl HomogeneousKernel {
    pub fn new(dim: usize, target_dim: usize, alpha: f64, sphere_map: KernelSphereMap) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("kernel dimension must be ≥ 2, got {dim}")));
        }
        if target_dim == 0 || target_dim > MAX_TARGET {
            return Err(Error::Config(format!("kernel target dimension must be in 1..={MAX_TARGET}")));
        }
        if !(alpha > 0.0 && alpha < dim as f64) {
            return Err(Error::Config(format!("alpha must lie in (0, {dim}), got {alpha}")));
        }
        match &sphere_map {
            KernelSphereMap::Identity { .. } if target_dim != dim => {
                return Err(Error::Config("identity kernel needs target_dim = dim".into()))
            }
            KernelSphereMap::Trig2 { cos, sin } if dim != 2 || cos.len() != target_dim || sin.len() != target_dim => {
                return Err(Error::Config("trigonometric kernel needs d = 2 and one row per component".into()));
            }
            KernelSphereMap::Table(t) if dim != 2 || t.width() != target_dim => {
                return Err(Error::Config("kernel table needs d = 2 and ℓ value columns".into()));
            }
            _ => {}
        }
        Ok(Self { dim, target_dim, alpha, sphere_map, lipschitz_hint: None })
    }

    /// `K(x) = x/|x|^d` up to the factor `scale` (α = 1).
    pub fn identity(dim: usize, scale: f64) -> Self {
        Self::new(dim, dim, 1.0, KernelSphereMap::Identity { scale }).expect("valid identity kernel")
    }

    /// `x / (2π|x|²)` in the plane: `∇u = K * Δu`.
    pub fn riesz_gradient_2d() -> Self {
        Self::identity(2, 1.0 / (2.0 * PI))
    }

    /// Homogeneity degree `α − d`.
    pub fn degree(&self) -> f64 {
        self.alpha - self.dim as f64
    }

    /// Evaluates the sphere map at a unit vector.
    pub fn sphere_into(&self, zeta: &[f64], out: &mut KVec) {
        *out = [0.0; MAX_TARGET];
        match &self.sphere_map {
            KernelSphereMap::Identity { scale } => {
                for (o, z) in out.iter_mut().zip(zeta) {
                    *o = scale * z;
                }
            }
            KernelSphereMap::Trig2 { cos, sin } => {
                let th = zeta[1].atan2(zeta[0]);
                for j in 0..self.target_dim {
                    let mut acc = 0.0;
                    for (k, (a, b)) in cos[j].iter().zip(&sin[j]).enumerate() {
                        let kt = k as f64 * th;
                        acc += a * kt.cos() + b * kt.sin();
                    }
                    out[j] = acc;
                }
            }
            KernelSphereMap::Table(t) => t.eval(zeta[1].atan2(zeta[0]), &mut out[..self.target_dim]),
            KernelSphereMap::Custom(f) => f(zeta, &mut out[..self.target_dim]),
        }
    }

    /// `K(x) = |x|^{α−d}·sphere_map(x/|x|)` written into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut KVec) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::SingularAtOrigin);
        }
        let mut zeta = [0.0; 3];
        let zeta: &mut [f64] = if self.dim <= 3 { &mut zeta[..self.dim] } else { return self.eval_slow(x, r, out) };
        for (z, xi) in zeta.iter_mut().zip(x) {
            *z = xi / r;
        }
        self.sphere_into(zeta, out);
        let s = r.powf(self.degree());
        for o in out.iter_mut().take(self.target_dim) {
            *o *= s;
        }
        Ok(())
    }

    fn eval_slow(&self, x: &[f64], r: f64, out: &mut KVec) -> Result<()> {
        let zeta: Vec<f64> = x.iter().map(|v| v / r).collect();
        self.sphere_into(&zeta, out);
        let s = r.powf(self.degree());
        for o in out.iter_mut().take(self.target_dim) {
            *o *= s;
        }
        Ok(())
    }

    /// Planar fast path: the caller guarantees `dim == 2` and `x ≠ 0`.
    #[inline]
    pub(crate) fn eval2(&self, x: [f64; 2], out: &mut KVec) {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let zeta = [x[0] / r, x[1] / r];
        self.sphere_into(&zeta, out);
        let s = if self.alpha == 1.0 { 1.0 / r } else { r.powf(self.degree()) };
        for o in out.iter_mut().take(self.target_dim) {
            *o *= s;
        }
    }

    /// Sup of `|sphere_map|` estimated on a dense sample (exact for the identity map).
    pub fn sphere_sup(&self) -> f64 {
        if let KernelSphereMap::Identity { scale } = self.sphere_map {
            return scale.abs();
        }
        let mut best: f64 = 0.0;
        let mut out = [0.0; MAX_TARGET];
        for_each_sample_direction(self.dim, |z| {
            self.sphere_into(z, &mut out);
            best = best.max(norm(&out[..self.target_dim]));
        });
        best
    }
}

/// Calls `f` on a deterministic quasi-uniform set of unit vectors.
pub(crate) fn for_each_sample_direction<F: FnMut(&[f64])>(dim: usize, mut f: F) {
    match dim {
        2 => {
            for i in 0..4096 {
                let t = 2.0 * PI * i as f64 / 4096.0;
                f(&[t.cos(), t.sin()]);
            }
        }
        3 => {
            for i in 0..64 {
                let th = PI * (i as f64 + 0.5) / 64.0;
                for j in 0..128 {
                    let ph = 2.0 * PI * j as f64 / 128.0;
                    f(&[th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]);
                }
            }
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..20000 {
                let v = random_unit(&mut rng, dim);
                f(&v);
            }
        }
    }
}

pub fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Sphere restriction of a homogeneous integrand.
#[derive(Clone)]
pub enum PhiSphereMap {
    /// `c` everywhere: `Φ(v) = c|v|^p`.
    NormPower { c: f64 },
    /// `ζ ↦ ζᵀAζ`; `A = diag(1, −1)` gives the trace-free quadratic `v₁² − v₂²` at p = 2.
    Quadratic { a: Vec<Vec<f64>> },
    /// `ζ ↦ ζ_k`, i.e. `Φ(v) = v_k|v|^{p−1}`.
    Component { index: usize },
    /// Planar harmonic series in the angle φ of v: `Σ (a_k cos kφ + b_k sin kφ)`.
    Harmonic2 { cos: Vec<f64>, sin: Vec<f64> },
    Table(AngleTable),
    Custom(ScalarSphereFn),
}

impl fmt::Debug for PhiSphereMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NormPower { c } => write!(f, "NormPower({c})"),
            Self::Quadratic { a } => write!(f, "Quadratic({a:?})"),
            Self::Component { index } => write!(f, "Component({index})"),
            Self::Harmonic2 { cos, sin } => write!(f, "Harmonic2({cos:?}, {sin:?})"),
            Self::Table(t) => write!(f, "Table({} rows)", t.angles.len()),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// A positively p-homogeneous integrand `Φ: ℝ^ℓ → ℝ`.
#[derive(Debug, Clone)]
pub struct PhiIntegrand {
    pub target_dim: usize,
    pub p: f64,
    pub sphere_map: PhiSphereMap,
}

impl PhiIntegrand {
    pub fn new(target_dim: usize, p: f64, sphere_map: PhiSphereMap) -> Result<Self> {
        if target_dim == 0 || target_dim > MAX_TARGET {
            return Err(Error::Config(format!("Φ target dimension must be in 1..={MAX_TARGET}")));
        }
        if !(p > 1.0) {
            return Err(Error::Config(format!("Φ homogeneity p must exceed 1, got {p}")));
        }
        match &sphere_map {
            PhiSphereMap::Quadratic { a } => {
                if a.len() != target_dim || a.iter().any(|r| r.len() != target_dim) {
                    return Err(Error::Config("quadratic Φ needs an ℓ×ℓ matrix".into()));
                }
            }
            PhiSphereMap::Component { index } if *index >= target_dim => {
                return Err(Error::Config("component index out of range".into()));
            }
            PhiSphereMap::Harmonic2 { cos, sin } if target_dim != 2 || cos.len() != sin.len() => {
                return Err(Error::Config("harmonic Φ needs ℓ = 2 and matching coefficient lists".into()));
            }
            PhiSphereMap::Table(t) if target_dim != 2 || t.width() != 1 => {
                return Err(Error::Config("Φ table needs ℓ = 2 and a single value column".into()));
            }
            _ => {}
        }
        Ok(Self { target_dim, p, sphere_map })
    }

    /// `v₁² − v₂²` (p = 2, ℓ = 2).
    pub fn trace_free_quadratic() -> Self {
        Self::new(2, 2.0, PhiSphereMap::Quadratic { a: vec![vec![1.0, 0.0], vec![0.0, -1.0]] }).unwrap()
    }

    /// `|v|²` (p = 2).
    pub fn norm_squared(target_dim: usize) -> Self {
        Self::new(target_dim, 2.0, PhiSphereMap::NormPower { c: 1.0 }).unwrap()
    }

    /// `v₁|v|` (p = 2, ℓ = 2).
    pub fn first_component_norm() -> Self {
        Self::new(2, 2.0, PhiSphereMap::Component { index: 0 }).unwrap()
    }

    pub fn sphere(&self, zeta: &[f64]) -> f64 {
        match &self.sphere_map {
            PhiSphereMap::NormPower { c } => *c,
            PhiSphereMap::Quadratic { a } => {
                let mut acc = 0.0;
                for (i, row) in a.iter().enumerate() {
                    for (j, aij) in row.iter().enumerate() {
                        acc += aij * zeta[i] * zeta[j];
                    }
                }
                acc
            }
            PhiSphereMap::Component { index } => zeta[*index],
            PhiSphereMap::Harmonic2 { cos, sin } => {
                let ph = zeta[1].atan2(zeta[0]);
                cos.iter()
                    .zip(sin)
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let kp = k as f64 * ph;
                        a * kp.cos() + b * kp.sin()
                    })
                    .sum()
            }
            PhiSphereMap::Table(t) => {
                let mut out = [0.0];
                t.eval(zeta[1].atan2(zeta[0]), &mut out);
                out[0]
            }
            PhiSphereMap::Custom(f) => f(zeta),
        }
    }

    /// `Φ(v)`; `Φ(0) = 0`.
    pub fn eval(&self, v: &[f64]) -> f64 {
        let v = &v[..self.target_dim];
        let r = norm(v);
        if r == 0.0 {
            return 0.0;
        }
        let rp = if self.p == 2.0 { r * r } else { r.powf(self.p) };
        match &self.sphere_map {
            PhiSphereMap::NormPower { c } => c * rp,
            PhiSphereMap::Quadratic { a } if self.p == 2.0 => {
                let mut acc = 0.0;
                for (i, row) in a.iter().enumerate() {
                    for (j, aij) in row.iter().enumerate() {
                        acc += aij * v[i] * v[j];
                    }
                }
                acc
            }
            PhiSphereMap::Component { index } => v[*index] * rp / r,
            _ => {
                let mut z = [0.0; MAX_TARGET];
                for (zi, vi) in z.iter_mut().zip(v) {
                    *zi = vi / r;
                }
                rp * self.sphere(&z[..self.target_dim])
            }
        }
    }

    /// Sup of `|Φ|` on the unit sphere, from a dense sample.
    pub fn sphere_sup(&self) -> f64 {
        if let PhiSphereMap::NormPower { c } = self.sphere_map {
            return c.abs();
        }
        let mut best: f64 = 0.0;
        for_each_sample_direction(self.target_dim.max(2), |z| {
            if self.target_dim == 1 {
                best = best.max(self.sphere(&[1.0]).abs()).max(self.sphere(&[-1.0]).abs());
            } else {
                best = best.max(self.sphere(&z[..self.target_dim]).abs());
            }
        });
        best
    }
}

/// Checks the pairing `p·(d − α) = d` and matching target dimensions.
pub fn validate_pair(kernel: &HomogeneousKernel, phi: &PhiIntegrand) -> Result<()> {
    if kernel.target_dim != phi.target_dim {
        return Err(Error::DimensionMismatch { expected: kernel.target_dim, got: phi.target_dim });
    }
    let d = kernel.dim as f64;
    let lhs = phi.p * (d - kernel.alpha);
    if (lhs - d).abs() > 1e-12 * d {
        return Err(Error::Homogeneity { p: phi.p, d: kernel.dim, alpha: kernel.alpha, lhs });
    }
    Ok(())
}

/// Which dyadic part of the kernel is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceMode {
    /// `K_n`: support `|x| ∈ [2^{−n−1}, 2^{−n})`.
    Single,
    /// `K_{≤n}`: support `|x| ≥ 2^{−n−1}`.
    Cumulative,
}

/// Selects the full kernel or one of its dyadic pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSel {
    Full,
    Piece { n: i32, mode: PieceMode },
}

impl KernelSel {
    pub fn single(n: i32) -> Self {
        Self::Piece { n, mode: PieceMode::Single }
    }

    pub fn cumulative(n: i32) -> Self {
        Self::Piece { n, mode: PieceMode::Cumulative }
    }

    /// Support radii `(inner, outer)`; `outer = ∞` when unbounded.
    pub fn radii(&self) -> (f64, f64) {
        match *self {
            KernelSel::Full => (0.0, f64::INFINITY),
            KernelSel::Piece { n, mode } => {
                let inner = dyadic(-n - 1);
                match mode {
                    PieceMode::Single => (inner, dyadic(-n)),
                    PieceMode::Cumulative => (inner, f64::INFINITY),
                }
            }
        }
    }

    #[inline]
    pub fn contains_radius(&self, r: f64) -> bool {
        let (a, b) = self.radii();
        r >= a && r < b
    }
}

/// `2^k` exactly.
pub fn dyadic(k: i32) -> f64 {
    2f64.powi(k)
}

/// A dyadic kernel piece bound to its base kernel.
#[derive(Debug, Clone)]
pub struct KernelPiece<'a> {
    pub kernel: &'a HomogeneousKernel,
    pub n: i32,
    pub mode: PieceMode,
}

impl KernelPiece<'_> {
    pub fn sel(&self) -> KernelSel {
        KernelSel::Piece { n: self.n, mode: self.mode }
    }
}

/// `K(x)`.
pub fn kernel_eval(kernel: &HomogeneousKernel, x: &[f64]) -> Result<Vec<f64>> {
    let mut out = [0.0; MAX_TARGET];
    kernel.eval_into(x, &mut out)?;
    Ok(out[..kernel.target_dim].to_vec())
}

/// `K_n(x)` or `K_{≤n}(x)`; zero outside the support annulus.
pub fn kernel_piece_eval(piece: &KernelPiece<'_>, x: &[f64]) -> Result<Vec<f64>> {
    let r = norm(x);
    if !piece.sel().contains_radius(r) {
        if x.len() != piece.kernel.dim {
            return Err(Error::DimensionMismatch { expected: piece.kernel.dim, got: x.len() });
        }
        return Ok(vec![0.0; piece.kernel.target_dim]);
    }
    kernel_eval(piece.kernel, x)
}

/// `Φ(v)`.
pub fn phi_eval(phi: &PhiIntegrand, v: &[f64]) -> f64 {
    phi.eval(v)
}

/// The interaction function `𝓜_p(x, y)`.
pub fn m_p(p: f64, x: f64, y: f64) -> Result<f64> {
    if x < 0.0 || y < 0.0 || x.is_nan() || y.is_nan() {
        return Err(Error::Domain(format!("m_p needs non-negative arguments, got ({x}, {y})")));
    }
    if p < 1.0 {
        return Err(Error::Domain(format!("m_p needs p ≥ 1, got {p}")));
    }
    Ok(m_p_unchecked(p, x, y))
}

#[inline]
pub(crate) fn m_p_unchecked(p: f64, x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        return 0.0;
    }
    let a = x.powf(p - 1.0) * y;
    let b = x * y.powf(p - 1.0);
    if p <= 2.0 {
        a.min(b)
    } else {
        0.5 * (a + b)
    }
}

/// Empirical constant in `|Φ(a+b) − Φ(a)| ≤ C|a|^{p−1}|b|` over random pairs
/// with `k|b| ≤ |a|` (`k = 2` is the standard constraint). `|a|` is
/// log-uniform in `[1e−3, 1e3]`.
pub fn phi_perturbation_probe(phi: &PhiIntegrand, trials: usize, seed: u64) -> f64 {
    phi_perturbation_probe_with(phi, trials, seed, 2.0)
}

pub fn phi_perturbation_probe_with(phi: &PhiIntegrand, trials: usize, seed: u64, k: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = phi.target_dim;
    let mut best: f64 = 0.0;
    let dim = l.max(2);
    for _ in 0..trials {
        let ra = 10f64.powf(rng.gen_range(-3.0..3.0));
        let rb = ra / k * rng.gen::<f64>();
        let da = unit_in(&mut rng, l, dim);
        let db = unit_in(&mut rng, l, dim);
        if rb == 0.0 {
            continue;
        }
        let a: Vec<f64> = da.iter().map(|x| x * ra).collect();
        let ab: Vec<f64> = a.iter().zip(&db).map(|(x, y)| x + y * rb).collect();
        let ratio = (phi.eval(&ab) - phi.eval(&a)).abs() / (ra.powf(phi.p - 1.0) * rb);
        if ratio.is_finite() {
            best = best.max(ratio);
        }
    }
    best
}

fn unit_in<R: Rng>(rng: &mut R, l: usize, dim: usize) -> Vec<f64> {
    if l == 1 {
        return vec![if rng.gen::<bool>() { 1.0 } else { -1.0 }];
    }
    let mut v = random_unit(rng, dim);
    v.truncate(l);
    v
}
