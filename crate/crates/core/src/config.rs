//! Run configuration: a TOML file with sections `[kernel]`, `[phi]`,
//! `[domain]`, `[experiment]` and `[numerics]`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::besov::CubeDilation;
use crate::error::{Error, Result};
use crate::experiments::{BlowupMechanism, SamplerSpec};
use crate::geometry::{BoundaryProfile, Domain, DyadicCube};
use crate::integrate::IntegrateOpts;
use crate::kernel::{validate_pair, AngleTable, HomogeneousKernel, KernelSel, KernelSphereMap, PhiIntegrand, PhiSphereMap};
use crate::source::{GridSpec, PointMass, SourceFunction, SourceKind};
use crate::spherical::SphereRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// `identity`, `riesz_gradient`, `trig` or `table`.
    pub kind: String,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSpec {
    /// `trace_free`, `norm_squared`, `first_component_norm`, `norm_power`,
    /// `quadratic`, `component`, `harmonic` or `table`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cos: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// `ball`, `half_space` or `graph_disk`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<BoundaryProfile>,
}

/// Per-subcommand parameters; each subcommand reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub source: Option<SourceKind>,
    /// Number of ξ directions (`cancel`).
    pub xi_count: usize,
    /// Boundary anchor (`psi`, `blowup`); overrides `direction`.
    pub point: Option<Vec<f64>>,
    pub direction: Option<Vec<f64>>,
    /// Radii for `psi`; default is a log grid.
    pub rho: Vec<f64>,
    /// Grid of `conv`.
    pub grid: Option<GridSpec>,
    /// Kernel piece of `conv`; full kernel when absent.
    pub piece: Option<KernelSel>,
    pub n_list: Vec<f64>,
    pub offset: f64,
    pub mechanism: BlowupMechanism,
    pub cross_checks: usize,
    pub direct: bool,
    pub trials: usize,
    pub sampler: SamplerSpec,
    pub n_min: i32,
    pub n_max: i32,
    pub cube: Option<DyadicCube>,
    pub delta: f64,
    pub m_max: u32,
    pub dilation: CubeDilation,
    pub masses: Vec<PointMass>,
    pub excision_sweep: Vec<f64>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            source: None,
            xi_count: 360,
            point: None,
            direction: None,
            rho: Vec::new(),
            grid: None,
            piece: None,
            n_list: (4..=10).map(|k| 2f64.powi(k)).collect(),
            offset: 2.0,
            mechanism: BlowupMechanism::Boundary,
            cross_checks: 3,
            direct: false,
            trials: 64,
            sampler: SamplerSpec::default(),
            n_min: 0,
            n_max: 6,
            cube: None,
            delta: crate::besov::DELTA_DEFAULT,
            m_max: crate::besov::M_MAX_DEFAULT,
            dilation: CubeDilation::Triple,
            masses: Vec::new(),
            excision_sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
    /// Nodes of the circle rule.
    pub circle_nodes: usize,
    pub sphere_polar: usize,
    pub sphere_azimuth: usize,
    /// Absolute tolerance of the cancellation test; relative default when absent.
    pub cancel_tol: Option<f64>,
    /// Tolerance of the grid-source convolution.
    pub conv_tol: f64,
    pub tail_constant: Option<f64>,
}

impl Default for NumericsSpec {
    fn default() -> Self {
        let o = IntegrateOpts::default();
        Self {
            rel_tol: o.rel_tol,
            abs_tol: o.abs_tol,
            max_panels: o.max_panels,
            circle_nodes: 4096,
            sphere_polar: 32,
            sphere_azimuth: 128,
            cancel_tol: None,
            conv_tol: 1e-8,
            tail_constant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelSpec,
    pub phi: Option<PhiSpec>,
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub numerics: NumericsSpec,
}

fn two() -> usize {
    2
}

fn need<T: Clone>(v: &Option<T>, what: &str) -> Result<T> {
    v.clone().ok_or_else(|| Error::Config(format!("missing field {what}")))
}

impl KernelSpec {
    pub fn build(&self, base: &Path) -> Result<HomogeneousKernel> {
        let k = match self.kind.as_str() {
            "identity" => HomogeneousKernel::new(self.dim, self.dim, 1.0, KernelSphereMap::Identity { scale: self.scale.unwrap_or(1.0) })?,
            "riesz_gradient" => {
                if self.dim != 2 {
                    return Err(Error::Config("riesz_gradient kernel is planar".into()));
                }
                HomogeneousKernel::identity(2, self.scale.unwrap_or(1.0) / (2.0 * PI))
            }
            "trig" => {
                let cos = need(&self.cos, "kernel.cos")?;
                let sin = need(&self.sin, "kernel.sin")?;
                HomogeneousKernel::new(self.dim, cos.len(), self.alpha.unwrap_or(1.0), KernelSphereMap::Trig2 { cos, sin })?
            }
            "table" => {
                let path = base.join(need(&self.table, "kernel.table")?);
                let t = AngleTable::from_csv_path(&path)?;
                HomogeneousKernel::new(self.dim, t.width(), self.alpha.unwrap_or(1.0), KernelSphereMap::Table(t))?
            }
            other => return Err(Error::Config(format!("unknown kernel kind {other:?}"))),
        };
        if self.kind != "identity" && self.kind != "riesz_gradient" {
            if let Some(t) = self.target_dim {
                if t != k.target_dim {
                    return Err(Error::Config(format!("kernel target_dim {t} does not match its data ({})", k.target_dim)));
                }
            }
        }
        if (self.kind == "identity" || self.kind == "riesz_gradient") && self.alpha.is_some_and(|a| a != 1.0) {
            return Err(Error::Config("identity kernels have alpha = 1".into()));
        }
        Ok(k)
    }
}

impl PhiSpec {
    pub fn build(&self, base: &Path, target_dim: usize) -> Result<PhiIntegrand> {
        let l = self.target_dim.unwrap_or(target_dim);
        let p = self.p.unwrap_or(2.0);
        let map = match self.kind.as_str() {
            "trace_free" => {
                if self.p.is_some_and(|q| q != 2.0) || l != 2 {
                    return Err(Error::Config("trace_free Φ has p = 2 and ℓ = 2".into()));
                }
                return Ok(PhiIntegrand::trace_free_quadratic());
            }
            "norm_squared" => {
                if self.p.is_some_and(|q| q != 2.0) {
                    return Err(Error::Config("norm_squared Φ has p = 2".into()));
                }
                return Ok(PhiIntegrand::norm_squared(l));
            }
            "first_component_norm" => PhiSphereMap::Component { index: 0 },
            "norm_power" => PhiSphereMap::NormPower { c: self.c.unwrap_or(1.0) },
            "quadratic" => PhiSphereMap::Quadratic { a: need(&self.matrix, "phi.matrix")? },
            "component" => PhiSphereMap::Component { index: need(&self.index, "phi.index")? },
            "harmonic" => PhiSphereMap::Harmonic2 { cos: need(&self.cos, "phi.cos")?, sin: need(&self.sin, "phi.sin")? },
            "table" => PhiSphereMap::Table(AngleTable::from_csv_path(&base.join(need(&self.table, "phi.table")?))?),
            other => return Err(Error::Config(format!("unknown phi kind {other:?}"))),
        };
        PhiIntegrand::new(l, p, map)
    }
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        match self.kind.as_str() {
            "ball" => Domain::ball(need(&self.center, "domain.center")?, need(&self.radius, "domain.radius")?),
            "half_space" => Domain::half_space(need(&self.normal, "domain.normal")?, self.offset.unwrap_or(0.0)),
            "graph_disk" => {
                let c = need(&self.center, "domain.center")?;
                if c.len() != 2 {
                    return Err(Error::Config("graph_disk is planar".into()));
                }
                Domain::graph_disk(
                    [c[0], c[1]],
                    need(&self.radius, "domain.radius")?,
                    self.amplitude.unwrap_or(0.0),
                    self.profile.unwrap_or(BoundaryProfile::Cos { k: 3 }),
                )
            }
            other => Err(Error::Config(format!("unknown domain kind {other:?}"))),
        }
    }
}

/// A configuration with its built objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub kernel: HomogeneousKernel,
    pub phi: Option<PhiIntegrand>,
    pub domain: Option<Domain>,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds and validates every object; `base` resolves table paths.
    pub fn resolve(&self, base: &Path) -> Result<Resolved> {
        let kernel = self.kernel.build(base)?;
        let phi = match &self.phi {
            Some(p) => {
                let phi = p.build(base, kernel.target_dim)?;
                validate_pair(&kernel, &phi)?;
                Some(phi)
            }
            None => None,
        };
        let domain = match &self.domain {
            Some(d) => {
                let dom = d.build()?;
                if dom.dim() != kernel.dim {
                    return Err(Error::DimensionMismatch { expected: kernel.dim, got: dom.dim() });
                }
                Some(dom)
            }
            None => None,
        };
        let n = &self.numerics;
        if !(n.rel_tol > 0.0 && n.abs_tol > 0.0) || n.max_panels == 0 {
            return Err(Error::Config("tolerances must be positive and max_panels ≥ 1".into()));
        }
        if n.circle_nodes < 4 || n.sphere_polar < 2 || n.sphere_azimuth < 4 {
            return Err(Error::Config("sphere rule too coarse".into()));
        }
        if let Some(src) = &self.experiment.source {
            SourceFunction::new(src.clone())?;
        }
        Ok(Resolved { config: self.clone(), kernel, phi, domain })
    }

    pub fn integrate_opts(&self) -> IntegrateOpts {
        IntegrateOpts {
            rel_tol: self.numerics.rel_tol,
            abs_tol: self.numerics.abs_tol,
            max_panels: self.numerics.max_panels,
            tail_constant: self.numerics.tail_constant,
            excision: None,
        }
    }

    pub fn sphere_rule(&self, dim: usize) -> Result<SphereRule> {
        match dim {
            2 => Ok(SphereRule::circle(self.numerics.circle_nodes)),
            3 => Ok(SphereRule::sphere(self.numerics.sphere_polar, self.numerics.sphere_azimuth)),
            _ => Err(Error::Unsupported(format!("sphere rules for d = {dim}"))),
        }
    }
}

impl Resolved {
    pub fn phi(&self) -> Result<&PhiIntegrand> {
        self.phi.as_ref().ok_or_else(|| Error::Config("this subcommand needs a [phi] section".into()))
    }

    pub fn domain(&self) -> Result<&Domain> {
        self.domain.as_ref().ok_or_else(|| Error::Config("this subcommand needs a [domain] section".into()))
    }

    pub fn source(&self) -> Result<SourceFunction> {
        let s = self.config.experiment.source.clone().ok_or_else(|| Error::Config("this subcommand needs experiment.source".into()))?;
        SourceFunction::new(s)
    }
}
