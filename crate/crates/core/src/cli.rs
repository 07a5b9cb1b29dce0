//! Run configuration, experiment pipelines and result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::coeff::{builtin_example, check_assumption, BuiltinExample, CoefficientField, TableField};
use crate::diagnostics::{carleman_audit, estimate_observability_constant, AuditConfig, AuditContext};
use crate::domain::{build_regions, validate_nesting, BoundaryPiece, DomainKind, DomainSpec, RegionSet};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SpaceTimeField};
use crate::hum::{solve_hum, HumConfig};
use crate::pde::{assemble_for_domain, check_energy_estimate, energy_norms, BoundaryCondition, Propagator};
use crate::weights::{build_eta, check_weight_bounds, default_peak, validate_eta, CarlemanWeights};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Solve,
    Control,
    Observability,
    CarlemanAudit,
}

impl Subcommand {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "solve" => Some(Self::Solve),
            "control" => Some(Self::Control),
            "observability" => Some(Self::Observability),
            "carleman-audit" => Some(Self::CarlemanAudit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Control => "control",
            Self::Observability => "observability",
            Self::CarlemanAudit => "carleman-audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub kind: DomainKind,
    /// Defaults to the coefficient's dimension (2 for tables).
    pub dimension: Option<usize>,
    /// Defaults to every face `{x_i = 0}` plus the far vertex.
    pub gamma0: Option<Vec<BoundaryPiece>>,
    pub rho: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { kind: DomainKind::UnitHypercube, dimension: None, gamma0: None, rho: 0.3, horizon: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientConfig {
    /// One of `ex1`, `ex2`, `ex3`, `table`.
    pub id: String,
    pub alpha: Option<Vec<f64>>,
    /// CSV table, relative paths resolved against the config file.
    pub table: Option<PathBuf>,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self { id: "ex1".into(), alpha: None, table: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSize {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: GridSize,
    #[serde(rename = "N_t")]
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: GridSize::Uniform(33), steps: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `Π sin(πx_i)`.
    Sine,
    /// `Π cos(πx_i)`.
    Cosine,
    Constant,
    /// Gaussian centered in the middle of the domain.
    Bump,
}

impl InitialState {
    pub fn sample(self, grid: &Grid) -> GridFunction {
        use std::f64::consts::PI;
        match self {
            Self::Sine => grid.sample(|x| x.iter().map(|c| (PI * c).sin()).product()),
            Self::Cosine => grid.sample(|x| x.iter().map(|c| (PI * c).cos()).product()),
            Self::Constant => vec![1.0; grid.len()],
            Self::Bump => grid.sample(|x| (-40.0 * x.iter().map(|c| (c - 0.5).powi(2)).sum::<f64>()).exp()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservabilityConfig {
    pub iters: usize,
    pub samples: usize,
    /// Observe on the whole domain instead of the collar.
    pub control_everywhere: bool,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self { iters: 100, samples: 8, control_everywhere: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanConfig {
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub calibration_samples: usize,
    pub samples: usize,
    /// λ used for the reported weight bounds.
    pub lambda: f64,
    /// Rescales η so that `|η|∞` equals this value.
    pub eta_amplitude: Option<f64>,
    pub x_star: Option<Vec<f64>>,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        let a = AuditConfig::default();
        Self {
            s_grid: a.s_grid,
            lambda_grid: a.lambda_grid,
            calibration_samples: a.calibration_samples,
            samples: a.samples,
            lambda: 2.0,
            eta_amplitude: None,
            x_star: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub coefficient: CoefficientConfig,
    pub grid: GridConfig,
    pub bc: BoundaryCondition,
    pub initial_state: InitialState,
    /// Constant control amplitude inside ω₀ for `solve`.
    pub source_amplitude: f64,
    pub hum: HumConfig,
    pub observability: ObservabilityConfig,
    pub carleman: CarlemanConfig,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig::default(),
            coefficient: CoefficientConfig::default(),
            grid: GridConfig::default(),
            bc: BoundaryCondition::Dirichlet,
            initial_state: InitialState::Sine,
            source_amplitude: 0.0,
            hum: HumConfig::default(),
            observability: ObservabilityConfig::default(),
            carleman: CarlemanConfig::default(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }
}

const COEFFICIENT_IDS: &str = "ex1, ex2, ex3, table";

fn field_error(field: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {e}"))
}

impl RunConfig {
    /// Parses JSON text; relative paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("invalid config JSON at line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Fills dimension-dependent defaults and validates every field.
    fn resolve(&mut self) -> Result<()> {
        let builtin = match self.coefficient.id.as_str() {
            "table" => None,
            id => Some(BuiltinExample::parse(id).ok_or_else(|| {
                field_error("coefficient.id", format!("unknown coefficient `{id}` (valid ids: {COEFFICIENT_IDS})"))
            })?),
        };
        let dim = self.domain.dimension.unwrap_or_else(|| builtin.map_or(2, BuiltinExample::dimension));
        self.domain.dimension = Some(dim);
        if let Some(b) = builtin {
            if b.dimension() != dim {
                return Err(field_error(
                    "domain.dimension",
                    format!("coefficient {} is {}-dimensional, domain has dimension {dim}", self.coefficient.id, b.dimension()),
                ));
            }
            if self.coefficient.alpha.is_none() {
                self.coefficient.alpha = Some(vec![1.0; dim]);
            }
        } else {
            let path = self
                .coefficient
                .table
                .as_ref()
                .ok_or_else(|| field_error("coefficient.table", "required when coefficient.id = table"))?;
            let full = self.base_dir.join(path);
            if !full.is_file() {
                return Err(field_error("coefficient.table", format!("file {} does not exist", full.display())));
            }
        }
        if self.domain.gamma0.is_none() {
            self.domain.gamma0 = Some(DomainSpec::default_gamma0(self.domain.kind, dim));
        }
        if !(self.domain.rho > 0.0) {
            return Err(field_error("rho", format!("must be positive, got {}", self.domain.rho)));
        }
        if !(self.domain.horizon > 0.0) {
            return Err(field_error("T", format!("must be positive, got {}", self.domain.horizon)));
        }
        self.domain_spec().map_err(|e| field_error("domain", e))?;
        let n = self.grid_sizes();
        if n.len() != dim {
            return Err(field_error("grid.n", format!("{} sizes for a {dim}-dimensional domain", n.len())));
        }
        Grid::new(&n).map_err(|e| field_error("grid.n", e))?;
        if self.grid.steps == 0 {
            return Err(field_error("grid.N_t", "must be at least 1"));
        }
        let alpha = self.coefficient.alpha.clone();
        if let (Some(b), Some(a)) = (builtin, alpha) {
            builtin_example(b, &a).map_err(|e| field_error("coefficient.alpha", e))?;
        }
        self.hum.validate().map_err(|e| field_error("hum", e))?;
        if self.observability.iters == 0 || self.observability.samples == 0 {
            return Err(field_error("observability", "iters and samples must be at least 1"));
        }
        self.audit_config().validate().map_err(|e| field_error("carleman", e))?;
        if !(self.carleman.lambda > 0.0) {
            return Err(field_error("carleman.lambda", "must be positive"));
        }
        if let Some(a) = self.carleman.eta_amplitude {
            if !(a > 0.0 && a.is_finite()) {
                return Err(field_error("carleman.eta_amplitude", "must be positive"));
            }
        }
        if !self.source_amplitude.is_finite() {
            return Err(field_error("source_amplitude", "must be finite"));
        }
        Ok(())
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        let dim = self.domain.dimension.unwrap_or(2);
        let gamma0 = self.domain.gamma0.clone().unwrap_or_else(|| DomainSpec::default_gamma0(self.domain.kind, dim));
        DomainSpec::new(self.domain.kind, dim, gamma0, self.domain.rho, self.domain.horizon)
    }

    pub fn grid_sizes(&self) -> Vec<usize> {
        match &self.grid.n {
            GridSize::Uniform(n) => vec![*n; self.domain.dimension.unwrap_or(2)],
            GridSize::PerAxis(v) => v.clone(),
        }
    }

    pub fn coefficient_field(&self) -> Result<CoefficientField> {
        match self.coefficient.id.as_str() {
            "table" => {
                let path = self.base_dir.join(self.coefficient.table.as_ref().expect("validated"));
                Ok(CoefficientField::from_table(TableField::load(&path)?))
            }
            id => {
                let b = BuiltinExample::parse(id).expect("validated");
                builtin_example(b, self.coefficient.alpha.as_deref().unwrap_or(&vec![1.0; b.dimension()]))
            }
        }
    }

    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig {
            s_grid: self.carleman.s_grid.clone(),
            lambda_grid: self.carleman.lambda_grid.clone(),
            calibration_samples: self.carleman.calibration_samples,
            samples: self.carleman.samples,
            seed: self.seed,
        }
    }
}

/// Geometry, coefficients and operator assembled from a config.
pub struct Setup {
    pub spec: DomainSpec,
    pub grid: Grid,
    pub regions: RegionSet,
    pub field: CoefficientField,
    pub operator: crate::pde::DiscreteOperator,
}

impl Setup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let spec = cfg.domain_spec()?;
        let grid = Grid::new(&cfg.grid_sizes())?;
        let regions = build_regions(&spec, &grid)?;
        let field = cfg.coefficient_field()?;
        let operator = assemble_for_domain(&grid, &field, cfg.bc, &spec)?;
        Ok(Self { spec, grid, regions, field, operator })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    RunConfig::from_json(&text, &base)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: RunConfig,
    pub timings: Vec<PhaseTiming>,
    pub files: Vec<String>,
    pub status: String,
    pub failure_phase: Option<String>,
    pub error: Option<String>,
}

/// A failed run: the phase that failed and the underlying error.
#[derive(Debug)]
pub struct RunFailure {
    pub phase: String,
    pub error: Error,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} phase failed: {}", self.phase, self.error)
    }
}

impl std::error::Error for RunFailure {}

struct Recorder {
    dir: PathBuf,
    files: Vec<String>,
    timings: Vec<PhaseTiming>,
    phase: String,
    started: Instant,
}

impl Recorder {
    fn phase(&mut self, name: &str) {
        self.close_phase();
        self.phase = name.to_string();
        self.started = Instant::now();
    }

    fn close_phase(&mut self) {
        if !self.phase.is_empty() {
            self.timings.push(PhaseTiming {
                phase: self.phase.clone(),
                seconds: self.started.elapsed().as_secs_f64(),
            });
        }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("serializing {name}: {e}")))?;
        self.write(name, &(text + "\n"))
    }
}

/// Runs one pipeline and writes its outputs plus `manifest.json` into `out_dir`.
pub fn run(sub: Subcommand, cfg: &RunConfig, out_dir: &Path) -> std::result::Result<RunManifest, RunFailure> {
    let fail = |phase: &str, error: Error| RunFailure { phase: phase.to_string(), error };
    std::fs::create_dir_all(out_dir)
        .map_err(|source| fail("output", Error::Io { path: out_dir.display().to_string(), source }))?;
    let mut rec = Recorder {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
        timings: Vec::new(),
        phase: String::new(),
        started: Instant::now(),
    };
    let outcome = pipeline(sub, cfg, &mut rec);
    rec.close_phase();
    let mut manifest = RunManifest {
        version: VERSION.to_string(),
        subcommand: sub.name().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        timings: rec.timings.clone(),
        files: rec.files.clone(),
        status: "ok".into(),
        failure_phase: None,
        error: None,
    };
    if let Err(e) = &outcome {
        manifest.status = "failed".into();
        manifest.failure_phase = Some(rec.phase.clone());
        manifest.error = Some(e.to_string());
    }
    let written = rec.write_json("manifest.json", &manifest);
    match (outcome, written) {
        (Err(e), _) => Err(fail(&rec.phase, e)),
        (Ok(()), Err(e)) => Err(fail("output", e)),
        (Ok(()), Ok(())) => Ok(manifest),
    }
}

fn pipeline(sub: Subcommand, cfg: &RunConfig, rec: &mut Recorder) -> Result<()> {
    rec.phase("domain");
    let spec = cfg.domain_spec()?;
    let grid = Grid::new(&cfg.grid_sizes())?;
    let rs = build_regions(&spec, &grid)?;
    rec.write("regions.csv", &rs.to_csv(&grid))?;

    rec.phase("coefficients");
    let field = cfg.coefficient_field()?;
    let assumption = check_assumption(&field, &rs, &grid);
    #[derive(Serialize)]
    struct AssumptionOut<'a> {
        assumption: &'a crate::coeff::AssumptionReport,
        passes: bool,
        nesting: crate::domain::NestingReport,
    }
    rec.write_json(
        "assumption.json",
        &AssumptionOut { assumption: &assumption, passes: assumption.passes(), nesting: validate_nesting(&rs) },
    )?;
    if !assumption.passes() {
        return Err(Error::Construction("coefficient field fails the ellipticity assumption".into()));
    }

    rec.phase("operator");
    let op = assemble_for_domain(&grid, &field, cfg.bc, &spec)?;
    let (horizon, steps) = (spec.horizon, cfg.grid.steps);

    rec.phase("compute");
    match sub {
        Subcommand::Solve => {
            let z0 = cfg.initial_state.sample(&grid);
            let chi = rs.control_indicator();
            let g = (cfg.source_amplitude != 0.0)
                .then(|| SpaceTimeField::from_fn(&grid, steps, horizon, |_, _| cfg.source_amplitude));
            let z = Propagator::new(&op, horizon, steps)?.forward(&z0, g.as_ref(), Some(&chi))?;
            let estimate = check_energy_estimate(&op, &z, g.as_ref(), Some(&chi));
            let norms = energy_norms(&op, &z);
            rec.phase("output");
            rec.write("trajectory.csv", &trajectory_csv(&grid, &rs, &z))?;
            #[derive(Serialize)]
            struct EnergyOut<'a> {
                estimate: &'a crate::pde::EnergyEstimateReport,
                norms: &'a [crate::pde::EnergyNorms],
            }
            rec.write_json("energy.json", &EnergyOut { estimate: &estimate, norms: &norms })?;
        }
        Subcommand::Control => {
            let z0 = cfg.initial_state.sample(&grid);
            let res = solve_hum(&op, &rs, &z0, &cfg.hum, horizon, steps)?;
            rec.phase("output");
            #[derive(Serialize)]
            struct ControlOut {
                #[serde(flatten)]
                summary: crate::hum::ControlSummary,
                epsilon: f64,
                cg_tol: f64,
                residual_history: Vec<f64>,
            }
            rec.write_json(
                "control_summary.json",
                &ControlOut {
                    summary: res.summary(&op),
                    epsilon: cfg.hum.epsilon,
                    cg_tol: cfg.hum.cg_tol,
                    residual_history: res.residual_history.clone(),
                },
            )?;
            rec.write("z_final.csv", &field_csv(&grid, &rs, "z_final", res.z.last()))?;
            rec.write("w_T_star.csv", &field_csv(&grid, &rs, "w_T_star", &res.w_t_star))?;
            rec.write("control_slices.csv", &trajectory_csv(&grid, &rs, &res.g))?;
        }
        Subcommand::Observability => {
            let obs_rs: RegionSet =
                if cfg.observability.control_everywhere { rs.clone().with_control_everywhere() } else { rs.clone() };
            let report = estimate_observability_constant(
                &op,
                &obs_rs,
                horizon,
                steps,
                cfg.observability.iters,
                cfg.observability.samples,
                cfg.seed,
            )?;
            rec.phase("output");
            rec.write_json("observability.json", &report)?;
        }
        Subcommand::CarlemanAudit => {
            rec.phase("weights");
            let x_star = cfg.carleman.x_star.clone().unwrap_or_else(|| default_peak(&spec, &grid));
            let mut eta = build_eta(&spec, &rs, &grid, &x_star)?;
            if let Some(a) = cfg.carleman.eta_amplitude {
                eta = eta.with_amplitude(a)?;
            }
            let eta_report = validate_eta(&eta, &rs, &grid);
            let eta = Arc::new(eta);
            let weights = CarlemanWeights::new(1.0, cfg.carleman.lambda, horizon, eta.clone())?;
            let bounds = check_weight_bounds(&weights, &rs, steps)?;
            rec.write("eta.csv", &eta.to_csv(&grid, &rs))?;

            rec.phase("compute");
            let ctx = AuditContext::new(&op, &rs, &field, eta.clone(), horizon, steps)?;
            let report = carleman_audit(&ctx, &cfg.audit_config())?;
            rec.phase("output");
            #[derive(Serialize)]
            struct AuditOut<'a> {
                bc: BoundaryCondition,
                c_fit: f64,
                calibration_point: (f64, f64),
                s0_hat: &'a [crate::diagnostics::ThresholdEstimate],
                lambda0_hat: Option<f64>,
                monotone_fraction: f64,
                calibration_violations: usize,
                product_identity_defect: f64,
                eta_inf: f64,
                x_star: &'a [f64],
                eta: &'a crate::weights::EtaReport,
                weight_bounds: crate::weights::WeightBoundsReport,
            }
            rec.write_json(
                "carleman_summary.json",
                &AuditOut {
                    bc: report.bc,
                    c_fit: report.c_fit,
                    calibration_point: report.calibration_point,
                    s0_hat: &report.s0_hat,
                    lambda0_hat: report.lambda0_hat,
                    monotone_fraction: report.monotone_fraction,
                    calibration_violations: report.calibration_violations,
                    product_identity_defect: report.product_identity_defect,
                    eta_inf: report.eta_inf,
                    x_star: &eta.x_star,
                    eta: &eta_report,
                    weight_bounds: bounds,
                },
            )?;
            rec.write("carleman_surface.csv", &report.surface_csv())?;
        }
    }
    Ok(())
}

fn header(grid: &Grid, lead: &str, value: &str) -> String {
    let mut out = String::from(lead);
    for a in 0..grid.dim() {
        let _ = write!(out, ",x{a}");
    }
    let _ = writeln!(out, ",{value}");
    out
}

fn field_csv(grid: &Grid, rs: &RegionSet, name: &str, f: &[f64]) -> String {
    let mut out = header(grid, "node", name);
    for i in (0..grid.len()).filter(|&i| rs.in_domain[i]) {
        let _ = write!(out, "{i}");
        for c in grid.coord(i) {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(out, ",{:e}", f[i]);
    }
    out
}

/// Time slices at k = 0, N/4, N/2, 3N/4, N.
fn trajectory_csv(grid: &Grid, rs: &RegionSet, field: &SpaceTimeField) -> String {
    let n = field.steps();
    let mut ks: Vec<usize> = (0..=4).map(|q| q * n / 4).collect();
    ks.dedup();
    let mut out = String::from("step,t,node");
    for a in 0..grid.dim() {
        let _ = write!(out, ",x{a}");
    }
    out.push_str(",value\n");
    for k in ks {
        for i in (0..grid.len()).filter(|&i| rs.in_domain[i]) {
            let _ = write!(out, "{k},{},{i}", field.time(k));
            for c in grid.coord(i) {
                let _ = write!(out, ",{c}");
            }
            let _ = writeln!(out, ",{:e}", field.snapshots[k][i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"domain": {"kind": "unit_hypercube", "rho": 0.3, "T": 1.0},
                "coefficient": {"id": "ex1", "alpha": [1.0, 1.0]}, "grid": {"n": 17}}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(cfg.grid.steps, 64);
        assert_eq!(cfg.bc, BoundaryCondition::Dirichlet);
        assert_eq!(cfg.hum.epsilon, 1e-6);
        assert_eq!(cfg.carleman.s_grid, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(cfg.carleman.lambda_grid, vec![1.0, 2.0, 4.0]);
        assert_eq!(cfg.carleman.lambda, 2.0);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.grid_sizes(), vec![17, 17]);
        assert_eq!(cfg.domain.gamma0.as_ref().unwrap().len(), 3);
        let empty = RunConfig::from_json("{}", Path::new(".")).unwrap();
        assert_eq!(empty.grid_sizes(), vec![33, 33]);
        assert_eq!(empty.domain.rho, 0.3);
    }

    #[test]
    fn validation_names_the_field() {
        let err = RunConfig::from_json(r#"{"domain": {"rho": -1.0}}"#, Path::new(".")).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.starts_with("rho")), "{err}");
        let err = RunConfig::from_json(r#"{"coefficient": {"id": "ex9"}}"#, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("ex1, ex2, ex3, table"));
        let err = RunConfig::from_json("{\n \"grid\": }", Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = RunConfig::from_json(r#"{"coefficient": {"id": "table", "table": "missing.csv"}}"#, Path::new("."))
            .unwrap_err();
        assert!(err.to_string().contains("coefficient.table"));
        assert!(err.is_config());
    }

    #[test]
    fn ex3_defaults_to_four_dimensions() {
        let cfg = RunConfig::from_json(r#"{"coefficient": {"id": "ex3"}, "grid": {"n": 9}}"#, Path::new(".")).unwrap();
        assert_eq!(cfg.grid_sizes(), vec![9; 4]);
        assert_eq!(cfg.coefficient.alpha, Some(vec![1.0; 4]));
    }
}
