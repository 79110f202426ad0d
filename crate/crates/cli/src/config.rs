//! JSON run configuration. Unknown keys anywhere in the document are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use nlad_core::adhesion::AdhesionForce;
use nlad_core::fields::{BoundaryMode, BoxDomain, ScalarField};
use nlad_core::fractal::{dim_condition, dyadic_schedule, upper_box_dim, CompactSet, DimGate};
use nlad_core::initial::InitialCondition;
use nlad_core::solver::{AdvectionScheme, Region, SolverConfig};
use nlad_core::tensor::{TensorKind, TensorSpec};
use nlad_core::weakform::TestMode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainBlock,
    pub tensor: TensorBlock,
    pub force: AdhesionForce<f64>,
    pub model: ModelBlock,
    pub initial: InitialCondition<f64>,
    #[serde(default)]
    pub audit: AuditBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainBlock {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub cells: Vec<usize>,
    pub boundary_mode: BoundaryMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorBlock {
    pub spec: TensorKind<f64>,
    /// Declared boundary margin `a`; defaults to `dist(K, ∂Ω)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

fn default_cfl() -> f64 {
    0.5
}

fn default_stride() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub mu: f64,
    pub r: f64,
    pub eps: f64,
    /// Explicit ε values for `sweep --axis eps` and `tensor-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_schedule: Option<Vec<f64>>,
    pub t_final: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub advection: AdvectionScheme,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub allow_unstable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaSchedule {
    pub k_min: i32,
    pub k_max: i32,
}

impl DeltaSchedule {
    pub fn deltas(&self) -> Vec<f64> {
        dyadic_schedule(self.k_min, self.k_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedDim {
    pub value: f64,
    pub tolerance: f64,
}

fn default_clearance() -> f64 {
    0.2
}

fn default_modes() -> Vec<TestMode> {
    vec![TestMode::Constant, TestMode::PolynomialInterior]
}

pub const DEFAULT_SEED: u64 = 0x5eed;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_schedule: Option<DeltaSchedule>,
    /// Subdomain `B` of the localized diagnostics.
    #[serde(default)]
    pub subdomain: Region<f64>,
    /// Required distance between `B` and `K`.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
    #[serde(default = "default_modes")]
    pub eta_modes: Vec<TestMode>,
    /// Temporal support of `η`; defaults to `t_final`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_support: Option<f64>,
    /// Set audited by `dim` and `cutoff`; defaults to the degeneracy set of the tensor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<CompactSet<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_dim: Option<ExpectedDim>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for AuditBlock {
    fn default() -> Self {
        Self {
            delta_schedule: None,
            subdomain: Region::Whole,
            clearance: default_clearance(),
            eta_modes: default_modes(),
            eta_support: None,
            set: None,
            expected_dim: None,
            seed: DEFAULT_SEED,
        }
    }
}

/// Outcome of the admissibility gates for `(d, r, dim K)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Admissibility {
    pub d: usize,
    pub r: f64,
    /// `d − 2r/(r−1)`
    pub threshold: f64,
    /// Upper box dimension estimate of `K` (0 for finite and empty sets).
    pub dim_estimate: f64,
    pub admissible: bool,
    pub failed: Vec<String>,
    pub warnings: Vec<String>,
}

/// A validated configuration with everything derived from it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub domain: BoxDomain<f64>,
    pub spec: TensorSpec<f64>,
    pub solver: SolverConfig<f64>,
    pub c0: ScalarField<f64>,
    /// Verified boundary margin `a`.
    pub margin: f64,
    pub admissibility: Admissibility,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn core(ctx: &str) -> impl Fn(nlad_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{ctx}: {e}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("schema: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn solver_config(&self) -> SolverConfig<f64> {
        let m = &self.model;
        SolverConfig {
            eps: m.eps,
            mu: m.mu,
            r: m.r,
            cfl: m.cfl,
            t_final: m.t_final,
            snapshot_stride: m.snapshot_stride,
            advection: m.advection,
            dt: m.dt,
            allow_unstable: m.allow_unstable,
            region: self.audit.subdomain.clone(),
        }
    }

    /// ε values of the schedule: the explicit list, or `count` halvings of `eps`.
    pub fn eps_values(&self, count: usize, factor: f64) -> Vec<f64> {
        match &self.model.eps_schedule {
            Some(s) => s.clone(),
            None => (0..count).map(|j| self.model.eps / factor.powi(j as i32)).collect(),
        }
    }

    /// Set audited by `dim` and `cutoff`.
    pub fn audit_set(&self, spec: &TensorSpec<f64>) -> Option<CompactSet<f64>> {
        self.audit.set.clone().or_else(|| spec.degeneracy().cloned())
    }

    /// Schema-level checks, domain and tensor assembly, admissibility gates.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let d = &self.domain;
        if d.extent.len() != d.dim || d.cells.len() != d.dim {
            return Err(invalid(format!(
                "domain: dim = {} but extent has {} and cells {} entries",
                d.dim,
                d.extent.len(),
                d.cells.len()
            )));
        }
        let domain = BoxDomain::new(d.extent.clone(), d.cells.clone(), d.boundary_mode).map_err(core("domain"))?;

        let m = &self.model;
        if !(m.mu >= 0.0) || !m.mu.is_finite() {
            return Err(invalid(format!("model.mu = {} must be finite and nonnegative", m.mu)));
        }
        if let Some(s) = &m.eps_schedule {
            if s.is_empty() || s.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
                return Err(invalid("model.eps_schedule: entries must be positive"));
            }
        }
        let solver = self.solver_config();
        solver.validate().map_err(core("model"))?;

        let mut spec = TensorSpec::from_kind(&self.tensor.spec, d.dim).map_err(core("tensor"))?;
        if let Some(a) = self.tensor.margin {
            spec = spec.with_margin(a);
        }
        let margin = spec.margin(&domain).map_err(core("tensor"))?;
        self.force.validate().map_err(core("force"))?;
        let c0 = self.initial.sample(&domain).map_err(core("initial"))?;

        let a = &self.audit;
        if !(a.clearance >= 0.0) {
            return Err(invalid("audit.clearance must be nonnegative"));
        }
        match &a.subdomain {
            Region::Whole => {}
            Region::Box { lo, hi } if lo.len() != d.dim || hi.len() != d.dim => {
                return Err(invalid("audit.subdomain: box corners do not match the dimension"))
            }
            Region::Ball { center, radius } if center.len() != d.dim || !(*radius > 0.0) => {
                return Err(invalid("audit.subdomain: ball needs a matching center and a positive radius"))
            }
            _ => {}
        }
        if !a.subdomain.mask(&domain).iter().any(|&v| v) {
            return Err(invalid("audit.subdomain selects no cell"));
        }
        if let Some(k) = spec.degeneracy() {
            let dist = a.subdomain.distance_to(&domain, k).map_err(core("audit.subdomain"))?;
            if a.subdomain != Region::Whole && dist < a.clearance {
                return Err(invalid(format!(
                    "audit.subdomain comes within {dist} of the degeneracy set (clearance {})",
                    a.clearance
                )));
            }
        }
        if let Some(s) = a.delta_schedule {
            if s.k_min < 1 || s.k_max < s.k_min {
                return Err(invalid("audit.delta_schedule: need 1 <= k_min <= k_max"));
            }
        }
        if let Some(s) = &a.set {
            s.validate().map_err(core("audit.set"))?;
            if s.dim() != d.dim {
                return Err(invalid("audit.set does not match the dimension"));
            }
        }
        if let Some(ts) = a.eta_support {
            if !(ts > 0.0 && ts <= m.t_final) {
                return Err(invalid("audit.eta_support must lie in (0, t_final]"));
            }
        }

        let admissibility = admissibility(&spec, &solver, d.dim);
        Ok(Prepared {
            config: self.clone(),
            domain,
            spec,
            solver,
            c0,
            margin,
            admissibility,
        })
    }
}

fn admissibility(spec: &TensorSpec<f64>, cfg: &SolverConfig<f64>, d: usize) -> Admissibility {
    let dim_estimate = match spec.degeneracy() {
        Some(k) if k.finite_points().is_none() => upper_box_dim(k, &dyadic_schedule::<f64>(1, 8))
            .map(|e| e.estimate)
            .unwrap_or(f64::NAN),
        _ => 0.0,
    };
    let cond = dim_condition(dim_estimate, d, cfg.r);
    Admissibility {
        d,
        r: cfg.r,
        threshold: cond.threshold,
        dim_estimate,
        admissible: cond.admissible,
        failed: cond.failed.iter().map(DimGate::to_string).collect(),
        warnings: cfg.admissibility_warnings(d, spec.degeneracy()),
    }
}

impl Prepared {
    pub fn output_dir(&self, flag: Option<&Path>, command: &str) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.config.output.clone())
            .unwrap_or_else(|| PathBuf::from("nlad-out").join(command))
    }
}
