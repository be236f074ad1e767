//! Run configurations, subcommand drivers and result writers for the
//! `qbundle` binary.
//!
//! Every subcommand produces rows of the same shape,
//! `t,q1..qn,observable,value_re,value_im,flag`, in grid order.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::curvature::{cross_relation_residuals, f_ij_component_with, f_ti_component, DerivativeScheme};
use crate::error::Error;
use crate::generator::{CanonicalField, GeneratorField};
use crate::linalg::{biorthogonal_eigensystem, c, ComplexMatrix, ComplexVector, EigenOptions};
use crate::metric::{default_stationary_metric, metric_parameter_derivative, metric_time_derivative, MetricOperator};
use crate::models::{
    make_linear_family, make_pt_dimer_family, make_spin_half_family, make_spin_half_reference_generators,
    HamiltonianFamily, ParameterPoint, SpinHalfGauge, SpinHalfReferenceGenerators,
};
use crate::observables::{
    berry_curvature_with, chern_number_with, fidelity_susceptibility_with, scan_cells, scan_point, EpThresholds,
    SphereGrid,
};
use crate::transport::{Axis, Segment, StateVector, Transport};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Io = 1,
    Schema = 2,
    ExceptionalPoint = 3,
    Numerical = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn schema(message: impl Into<String>) -> Self {
        CliError {
            code: ExitCode::Schema,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonDiagonalizable { .. } | Error::EpOnPath { .. } => ExitCode::ExceptionalPoint,
            _ => ExitCode::Numerical,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    SweepChi,
    BerryMap,
    Chern,
    Transport,
    Residuals,
}

impl Subcommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subcommand::SweepChi => "sweep-chi",
            Subcommand::BerryMap => "berry-map",
            Subcommand::Chern => "chern",
            Subcommand::Transport => "transport",
            Subcommand::Residuals => "residuals",
        }
    }
}

/// A complex number as `[re, im]`.
pub type JsonComplex = [f64; 2];

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    PtDimer,
    SpinHalf {
        #[serde(default = "unit")]
        mu_b: f64,
    },
    /// `H(q) = h0 + Σ q_i couplings[i]`, matrices as rows of `[re, im]`.
    Linear {
        h0: Vec<Vec<JsonComplex>>,
        couplings: Vec<Vec<Vec<JsonComplex>>>,
    },
}

fn unit() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|k| {
                let s = k as f64 / last;
                self.min * (1.0 - s) + self.max * s
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative eigenvalue clustering tolerance.
    pub degeneracy_tol: f64,
    /// Condition number above which an EP scan flags a cell.
    pub ep_condition_threshold: f64,
    /// `|χ|` above which an EP scan flags a cell.
    pub chi_threshold: f64,
    pub fd_step: f64,
    pub integrator_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            degeneracy_tol: crate::linalg::DEFAULT_DEGENERACY_REL,
            ep_condition_threshold: EpThresholds::default().condition,
            chi_threshold: EpThresholds::default().chi,
            fd_step: crate::curvature::DEFAULT_FD_STEP,
            integrator_steps: 1000,
        }
    }
}

impl Tolerances {
    fn eigen(&self) -> EigenOptions {
        EigenOptions {
            degeneracy_rel: self.degeneracy_tol,
            ..EigenOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// Which generator field drives transport and residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorChoice {
    #[default]
    Canonical,
    /// Spin-½ reference generators with gauge functions solving the flatness constraints.
    ReferenceFlat,
    /// Spin-½ reference generators with all gauge functions zero.
    ReferenceZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricChoice {
    /// Unit-weight stationary metric at the start point.
    #[default]
    Stationary,
    Identity,
    None,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Eigenstate { eigenstate: usize },
    Amplitudes { amplitudes: Vec<JsonComplex> },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    /// `t`, `q1`, `q2`, ... or a parameter name of the model.
    pub axis: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSpec {
    pub start: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub state: StateSpec,
    pub segments: Vec<SegmentSpec>,
    pub steps_per_segment: Option<usize>,
    #[serde(default)]
    pub metric: MetricChoice,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualSpec {
    pub t_samples: Vec<f64>,
}

impl Default for ResidualSpec {
    fn default() -> Self {
        ResidualSpec {
            t_samples: vec![0.0, 1.0, 5.0],
        }
    }
}

/// One JSON run configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    /// Optional; when present it must match the subcommand being run.
    #[serde(default)]
    pub subcommand: Option<Subcommand>,
    #[serde(default)]
    pub grid: Vec<GridSpec>,
    /// Time coordinate of every grid point.
    #[serde(default)]
    pub t: f64,
    /// Levels to report; all levels when absent.
    #[serde(default)]
    pub levels: Option<Vec<usize>>,
    /// Swept direction for `sweep-chi`; inferred from the grid when absent.
    #[serde(default)]
    pub direction: Option<usize>,
    #[serde(default)]
    pub generators: GeneratorChoice,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub transport: Option<TransportSpec>,
    #[serde(default)]
    pub residuals: ResidualSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default = "one")]
    pub threads: usize,
}

impl FromStr for RunConfig {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        serde_json::from_str(s).map_err(|e| CliError::schema(format!("invalid config: {e}")))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::schema(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    /// Structural checks that serde cannot express.
    pub fn validate(&self, sub: Subcommand) -> CliResult<()> {
        if let Some(s) = self.subcommand {
            if s != sub {
                return Err(CliError::schema(format!(
                    "config is for `{}` but `{}` was requested",
                    s.as_str(),
                    sub.as_str()
                )));
            }
        }
        for (k, g) in self.grid.iter().enumerate() {
            if g.count < 1 {
                return Err(CliError::schema(format!("grid[{k}].count must be at least 1")));
            }
            if !(g.min.is_finite() && g.max.is_finite()) || g.min > g.max {
                return Err(CliError::schema(format!("grid[{k}] needs finite min ≤ max")));
            }
        }
        let tol = &self.tolerances;
        let positive = [
            tol.degeneracy_tol,
            tol.ep_condition_threshold,
            tol.chi_threshold,
            tol.fd_step,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) || tol.integrator_steps < 1 {
            return Err(CliError::schema("tolerances must be positive"));
        }
        if self.threads < 1 {
            return Err(CliError::schema("threads must be at least 1"));
        }
        if !self.t.is_finite() {
            return Err(CliError::schema("t must be finite"));
        }
        Ok(())
    }
}

/// One output row; `q` is empty for rows not tied to a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: Option<f64>,
    pub q: Vec<f64>,
    pub observable: String,
    pub value_re: Option<f64>,
    pub value_im: Option<f64>,
    pub flag: String,
}

impl Record {
    fn at(p: &ParameterPoint, observable: impl Into<String>, value: Complex64, flag: &str) -> Self {
        Record {
            t: Some(p.t),
            q: p.q.clone(),
            observable: observable.into(),
            value_re: Some(value.re),
            value_im: Some(value.im),
            flag: flag.into(),
        }
    }

    fn real(p: &ParameterPoint, observable: impl Into<String>, value: f64, flag: &str) -> Self {
        Record::at(p, observable, c(value, 0.0), flag)
    }

    fn missing(p: &ParameterPoint, observable: impl Into<String>, flag: &str) -> Self {
        Record {
            value_re: None,
            value_im: None,
            ..Record::at(p, observable, c(0., 0.), flag)
        }
    }
}

/// Rows plus the exit code they warrant (success or exceptional point).
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub n_params: usize,
    pub records: Vec<Record>,
    pub code: ExitCode,
}

fn matrix_from_json(rows: &[Vec<JsonComplex>], what: &str) -> CliResult<ComplexMatrix> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::schema(format!("{what} must be a non-empty square matrix")));
    }
    Ok(ComplexMatrix::from_fn(n, n, |r, k| c(rows[r][k][0], rows[r][k][1])))
}

pub fn build_family(model: &ModelSpec) -> CliResult<Box<dyn HamiltonianFamily>> {
    Ok(match model {
        ModelSpec::PtDimer => Box::new(make_pt_dimer_family()),
        ModelSpec::SpinHalf { mu_b } => {
            Box::new(make_spin_half_family(*mu_b).map_err(|e| CliError::schema(e.to_string()))?)
        }
        ModelSpec::Linear { h0, couplings } => {
            let h0 = matrix_from_json(h0, "h0")?;
            let couplings = couplings
                .iter()
                .enumerate()
                .map(|(k, m)| matrix_from_json(m, &format!("couplings[{k}]")))
                .collect::<CliResult<Vec<_>>>()?;
            Box::new(make_linear_family(h0, couplings).map_err(|e| CliError::schema(e.to_string()))?)
        }
    })
}

enum Field<'a> {
    Canonical(CanonicalField<'a>),
    Reference(SpinHalfReferenceGenerators),
}

impl Field<'_> {
    fn get(&self) -> &dyn GeneratorField {
        match self {
            Field::Canonical(f) => f,
            Field::Reference(f) => f,
        }
    }
}

fn build_field<'a>(cfg: &RunConfig, family: &'a dyn HamiltonianFamily) -> CliResult<Field<'a>> {
    let spin = matches!(cfg.model, ModelSpec::SpinHalf { .. });
    let gauge = match cfg.generators {
        GeneratorChoice::Canonical => {
            return Ok(Field::Canonical(CanonicalField::with_options(
                family,
                cfg.tolerances.eigen(),
            )));
        }
        GeneratorChoice::ReferenceFlat => SpinHalfGauge::flat(),
        GeneratorChoice::ReferenceZero => SpinHalfGauge::zero(),
    };
    if !spin {
        return Err(CliError::schema(
            "reference generators exist only for the spin_half model",
        ));
    }
    Ok(Field::Reference(make_spin_half_reference_generators(gauge)))
}

fn check_grid_arity(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<()> {
    if cfg.grid.len() != family.n_params() {
        return Err(CliError::schema(format!(
            "grid needs one entry per parameter ({}), found {}",
            family.n_params(),
            cfg.grid.len()
        )));
    }
    Ok(())
}

fn levels(cfg: &RunConfig, dim: usize) -> CliResult<Vec<usize>> {
    let lv = cfg.levels.clone().unwrap_or_else(|| (0..dim).collect());
    if let Some(bad) = lv.iter().find(|&&n| n >= dim) {
        return Err(CliError::schema(format!(
            "level {bad} out of range for dimension {dim}"
        )));
    }
    Ok(lv)
}

/// Cartesian product of the grid axes, last axis fastest.
fn grid_points(cfg: &RunConfig) -> Vec<ParameterPoint> {
    let axes: Vec<Vec<f64>> = cfg.grid.iter().map(GridSpec::points).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut v = prefix.clone();
                    v.push(x);
                    v
                })
            })
            .collect();
    }
    out.into_iter().map(|q| ParameterPoint::new(cfg.t, q)).collect()
}

fn is_ep(e: &Error) -> bool {
    matches!(e, Error::NonDiagonalizable { .. } | Error::EpOnPath { .. })
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError {
            code: ExitCode::Io,
            message: format!("cannot start worker pool: {e}"),
        })?;
    Ok(pool.install(f))
}

/// Per-point rows, or an EP marker, in grid order.
fn collect_points(
    results: Vec<Result<Vec<Record>, (ParameterPoint, Error)>>,
    n_params: usize,
    ep_observable: &str,
) -> CliResult<RunOutput> {
    let mut records = Vec::new();
    let mut code = ExitCode::Success;
    for r in results {
        match r {
            Ok(rows) => records.extend(rows),
            Err((p, e)) if is_ep(&e) => {
                code = ExitCode::ExceptionalPoint;
                records.push(Record::missing(&p, ep_observable, "ep"));
            }
            Err((_, e)) => return Err(e.into()),
        }
    }
    Ok(RunOutput {
        n_params,
        records,
        code,
    })
}

fn sweep_chi(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<RunOutput> {
    check_grid_arity(cfg, family)?;
    let swept: Vec<usize> = (0..cfg.grid.len()).filter(|&k| cfg.grid[k].count > 1).collect();
    let dir = match (cfg.direction, swept.as_slice()) {
        (Some(d), _) if d >= family.n_params() => return Err(CliError::schema(format!("direction {d} out of range"))),
        (Some(d), s) if s.iter().all(|&k| k == d) => d,
        (None, []) => 0,
        (None, [d]) => *d,
        _ => return Err(CliError::schema("sweep-chi needs a 1-D grid (one axis with count > 1)")),
    };
    let lv = levels(cfg, family.dim())?;
    let opts = cfg.tolerances.eigen();
    let thresholds = EpThresholds {
        condition: cfg.tolerances.ep_condition_threshold,
        chi: cfg.tolerances.chi_threshold,
    };
    let points = grid_points(cfg);
    let scans = in_pool(cfg.threads, || {
        points
            .par_iter()
            .map(|p| {
                let scan = scan_point(family, p, dir, p.q[dir], &opts)?;
                let chis = if scan.condition.is_finite() {
                    Some(
                        lv.iter()
                            .map(|&n| fidelity_susceptibility_with(family, p, dir, n, &opts).map(|r| r.chi))
                            .collect::<crate::error::Result<Vec<_>>>()?,
                    )
                } else {
                    None
                };
                Ok((scan, chis))
            })
            .collect::<crate::error::Result<Vec<_>>>()
    })??;
    let scan_points: Vec<_> = scans.iter().map(|(s, _)| *s).collect();
    let cells = scan_cells(&scan_points, &thresholds);
    let mut records = Vec::new();
    let mut code = ExitCode::Success;
    for (k, (p, (scan, chis))) in points.iter().zip(&scans).enumerate() {
        let near = (k > 0 && cells[k - 1].flagged) || cells.get(k).is_some_and(|c| c.flagged);
        let flag = match (chis, near) {
            (None, _) => "ep",
            (Some(_), true) => "near_ep",
            _ => "",
        };
        match chis {
            Some(chis) => {
                for (&n, chi) in lv.iter().zip(chis) {
                    records.push(Record::at(p, format!("chi_{n}"), *chi, flag));
                }
            }
            None => {
                code = ExitCode::ExceptionalPoint;
                for &n in &lv {
                    records.push(Record::missing(p, format!("chi_{n}"), flag));
                }
            }
        }
        records.push(Record::real(p, "condition_number", scan.condition, flag));
        records.push(Record::real(p, "gap_min", scan.gap_min, flag));
    }
    Ok(RunOutput {
        n_params: family.n_params(),
        records,
        code,
    })
}

fn require_two_params(family: &dyn HamiltonianFamily, what: &str) -> CliResult<()> {
    if family.n_params() != 2 {
        return Err(CliError::schema(format!("{what} needs a two-parameter model")));
    }
    Ok(())
}

fn berry_map(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<RunOutput> {
    require_two_params(family, "berry-map")?;
    check_grid_arity(cfg, family)?;
    let lv = levels(cfg, family.dim())?;
    let opts = cfg.tolerances.eigen();
    let points = grid_points(cfg);
    let results = in_pool(cfg.threads, || {
        points
            .par_iter()
            .map(|p| {
                lv.iter()
                    .map(|&n| {
                        berry_curvature_with(family, p, 0, 1, n, &opts)
                            .map(|w| Record::at(p, format!("omega_{n}"), w, ""))
                    })
                    .collect::<crate::error::Result<Vec<_>>>()
                    .map_err(|e| (p.clone(), e))
            })
            .collect::<Vec<_>>()
    })?;
    collect_points(results, family.n_params(), "omega")
}

fn chern(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<RunOutput> {
    use std::f64::consts::PI;
    require_two_params(family, "chern")?;
    check_grid_arity(cfg, family)?;
    let covers = |g: &GridSpec, hi: f64| g.min.abs() < 1e-12 && (g.max - hi).abs() < 1e-12;
    if !covers(&cfg.grid[0], PI) || !covers(&cfg.grid[1], 2.0 * PI) {
        return Err(CliError::schema(
            "chern integrates over θ ∈ [0, π] × φ ∈ [0, 2π]; set the grid ranges accordingly",
        ));
    }
    let grid = SphereGrid {
        n_theta: cfg.grid[0].count,
        n_phi: cfg.grid[1].count,
    };
    let lv = levels(cfg, family.dim())?;
    let opts = cfg.tolerances.eigen();
    let values = in_pool(cfg.threads, || {
        lv.iter()
            .map(|&n| chern_number_with(family, grid, n, &opts))
            .collect::<crate::error::Result<Vec<_>>>()
    })??;
    let records = lv
        .iter()
        .zip(values)
        .map(|(&n, v)| Record {
            t: Some(cfg.t),
            q: Vec::new(),
            observable: format!("chern_{n}"),
            value_re: Some(v),
            value_im: Some(0.0),
            flag: String::new(),
        })
        .collect();
    Ok(RunOutput {
        n_params: family.n_params(),
        records,
        code: ExitCode::Success,
    })
}

fn parse_axis(name: &str, family: &dyn HamiltonianFamily) -> CliResult<Axis> {
    if name == "t" {
        return Ok(Axis::Time);
    }
    if let Some(k) = name.strip_prefix('q').and_then(|s| s.parse::<usize>().ok()) {
        if (1..=family.n_params()).contains(&k) {
            return Ok(Axis::Parameter(k - 1));
        }
    }
    family
        .parameter_names()
        .iter()
        .position(|n| n == name)
        .map(Axis::Parameter)
        .ok_or_else(|| CliError::schema(format!("unknown axis `{name}`")))
}

fn transport(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<RunOutput> {
    let plan = cfg
        .transport
        .as_ref()
        .ok_or_else(|| CliError::schema("transport needs a `transport` section"))?;
    if plan.start.len() != family.n_params() {
        return Err(CliError::schema(format!(
            "transport.start needs {} coordinates",
            family.n_params()
        )));
    }
    let steps = plan.steps_per_segment.unwrap_or(cfg.tolerances.integrator_steps);
    if steps < 1 {
        return Err(CliError::schema("steps_per_segment must be at least 1"));
    }
    let segments = plan
        .segments
        .iter()
        .map(|s| {
            if !s.delta.is_finite() {
                return Err(CliError::schema("segment delta must be finite"));
            }
            Ok(Segment {
                axis: parse_axis(&s.axis, family)?,
                delta: s.delta,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let start = ParameterPoint::new(plan.t0, plan.start.clone());
    let opts = cfg.tolerances.eigen();
    let amplitudes = match &plan.state {
        StateSpec::Eigenstate { eigenstate } => {
            let es = biorthogonal_eigensystem(&family.evaluate(&start)?, &opts)?;
            if *eigenstate >= es.dim() {
                return Err(CliError::schema(format!("eigenstate {eigenstate} out of range")));
            }
            es.right_vector(*eigenstate)
        }
        StateSpec::Amplitudes { amplitudes } => {
            if amplitudes.len() != family.dim() {
                return Err(CliError::schema(format!("state needs {} amplitudes", family.dim())));
            }
            ComplexVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|z| c(z[0], z[1])))
        }
    };
    let state = StateVector::new(amplitudes, start.clone()).map_err(|e| CliError::schema(e.to_string()))?;
    let metric = match plan.metric {
        MetricChoice::None => None,
        MetricChoice::Identity => Some(MetricOperator::identity(family.dim(), start.clone())),
        MetricChoice::Stationary => {
            let es = biorthogonal_eigensystem(&family.evaluate(&start)?, &opts)?;
            Some(default_stationary_metric(&es, start.clone())?)
        }
    };
    let field = build_field(cfg, family)?;
    let engine = match &field {
        Field::Canonical(_) => Transport::canonical(family).eigen_options(opts),
        Field::Reference(r) => Transport::with_field(family, r),
    };

    let norm_rows = |psi: &StateVector, g: Option<&MetricOperator>, tag: &str| {
        let mut rows = vec![Record::real(&psi.at, "norm", psi.amplitudes.norm(), tag)];
        if let Some(g) = g {
            rows.push(Record::real(
                &psi.at,
                "generalized_norm",
                g.norm_sq(&psi.amplitudes),
                tag,
            ));
        }
        rows
    };
    let mut records = norm_rows(&state, metric.as_ref(), "start");
    let mut psi = state;
    let mut g = metric;
    let mut code = ExitCode::Success;
    for (k, seg) in segments.iter().enumerate() {
        let path = crate::transport::BasePath {
            segments: vec![*seg],
            steps_per_segment: steps,
        };
        match engine.path(&psi, g.as_ref(), &path) {
            Ok(out) => {
                psi = out.state;
                g = out.metric;
                records.extend(norm_rows(&psi, g.as_ref(), &format!("segment_{}", k + 1)));
            }
            Err(Error::EpOnPath { q, .. }) => {
                let mut at = psi.at.clone();
                if let Axis::Parameter(i) = seg.axis {
                    at.q[i] = q;
                }
                records.push(Record::missing(&at, "ep_on_path", "ep"));
                code = ExitCode::ExceptionalPoint;
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    for (a, z) in psi.amplitudes.iter().enumerate() {
        records.push(Record::at(&psi.at, format!("amplitude_{a}"), *z, "final"));
    }
    Ok(RunOutput {
        n_params: family.n_params(),
        records,
        code,
    })
}

fn residual_rows(
    cfg: &RunConfig,
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
) -> crate::error::Result<Vec<Record>> {
    let d = family.n_params();
    let h_step = cfg.tolerances.fd_step;
    let scheme = DerivativeScheme::default();
    let mut rows = Vec::new();
    for i in 0..d {
        let pair = field.pair(p, i)?;
        for &t in &cfg.residuals.t_samples {
            let v = f_ti_component(family, p, &pair, t)?;
            rows.push(Record::real(&p.with_t(t), format!("f_ti_q{}", i + 1), v, ""));
        }
    }
    if d >= 2 {
        for i in 0..d {
            for j in i + 1..d {
                let v = f_ij_component_with(field, p, i, j, h_step, scheme)?;
                rows.push(Record::real(p, format!("f_ij_q{}_q{}", i + 1, j + 1), v, ""));
            }
        }
        for cr in cross_relation_residuals(field, p, h_step, scheme)? {
            rows.push(Record::real(
                p,
                format!("tterm_q{}_q{}", cr.i + 1, cr.j + 1),
                cr.tterm,
                "",
            ));
            rows.push(Record::real(
                p,
                format!("constterm_q{}_q{}", cr.i + 1, cr.j + 1),
                cr.constterm,
                "",
            ));
        }
    }
    // compatibility of the unit-weight stationary metric with H and with K_i
    let opts = cfg.tolerances.eigen();
    let metric_at = |q: &ParameterPoint| -> crate::error::Result<ComplexMatrix> {
        let es = biorthogonal_eigensystem(&family.evaluate(q)?, &opts)?;
        Ok(default_stationary_metric(&es, q.clone())?.value)
    };
    match metric_at(p) {
        Ok(g) => {
            let h = family.evaluate(p)?;
            rows.push(Record::real(
                p,
                "metric_time",
                metric_time_derivative(&g, &h).norm(),
                "",
            ));
            for i in 0..d {
                let up = metric_at(&p.shifted(i, h_step))?;
                let dn = metric_at(&p.shifted(i, -h_step))?;
                let dg = (up - dn) * Complex64::from(0.5 / h_step);
                let k = field.generator(p, i)?;
                let v = (dg - metric_parameter_derivative(&g, &k)).norm();
                rows.push(Record::real(p, format!("metric_q{}", i + 1), v, ""));
            }
        }
        Err(Error::ComplexSpectrum { .. }) => rows.push(Record::missing(p, "metric_time", "complex_spectrum")),
        Err(e) => return Err(e),
    }
    Ok(rows)
}

fn residuals(cfg: &RunConfig, family: &dyn HamiltonianFamily) -> CliResult<RunOutput> {
    check_grid_arity(cfg, family)?;
    if !family.time_independent() {
        return Err(CliError::schema("residuals needs a time-independent model"));
    }
    let field = build_field(cfg, family)?;
    let points = grid_points(cfg);
    let results = in_pool(cfg.threads, || {
        points
            .par_iter()
            .map(|p| residual_rows(cfg, family, field.get(), p).map_err(|e| (p.clone(), e)))
            .collect::<Vec<_>>()
    })?;
    collect_points(results, family.n_params(), "residuals")
}

/// Execute a validated configuration.
pub fn run(sub: Subcommand, cfg: &RunConfig) -> CliResult<RunOutput> {
    cfg.validate(sub)?;
    let family = build_family(&cfg.model)?;
    let family = family.as_ref();
    match sub {
        Subcommand::SweepChi => sweep_chi(cfg, family),
        Subcommand::BerryMap => berry_map(cfg, family),
        Subcommand::Chern => chern(cfg, family),
        Subcommand::Transport => transport(cfg, family),
        Subcommand::Residuals => residuals(cfg, family),
    }
}

fn number(x: Option<f64>) -> String {
    match x {
        // shortest round-trip form, exponent notation for very small or large values
        Some(v) if v.is_finite() => format!("{v:?}"),
        Some(v) if v.is_infinite() => if v > 0.0 { "inf" } else { "-inf" }.into(),
        _ => String::new(),
    }
}

pub fn header(n_params: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n_params).map(|k| format!("q{k}")));
    h.extend(["observable", "value_re", "value_im", "flag"].map(String::from));
    h
}

pub fn write_csv<W: Write>(out: &RunOutput, w: W) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(out.n_params))?;
    for r in &out.records {
        let mut row = vec![number(r.t)];
        row.extend((0..out.n_params).map(|k| number(r.q.get(k).copied())));
        row.extend([
            r.observable.clone(),
            number(r.value_re),
            number(r.value_im),
            r.flag.clone(),
        ]);
        wr.write_record(&row)?;
    }
    wr.flush()
}

fn json_number(x: Option<f64>) -> Value {
    x.and_then(serde_json::Number::from_f64)
        .map_or(Value::Null, Value::Number)
}

pub fn to_json(out: &RunOutput) -> Value {
    let rows = out
        .records
        .iter()
        .map(|r| {
            let mut m = Map::new();
            m.insert("t".into(), json_number(r.t));
            for k in 0..out.n_params {
                m.insert(format!("q{}", k + 1), json_number(r.q.get(k).copied()));
            }
            m.insert("observable".into(), Value::String(r.observable.clone()));
            m.insert("value_re".into(), json_number(r.value_re));
            m.insert("value_im".into(), json_number(r.value_im));
            m.insert("flag".into(), Value::String(r.flag.clone()));
            Value::Object(m)
        })
        .collect();
    Value::Array(rows)
}

pub fn write_json<W: Write>(out: &RunOutput, mut w: W) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut w, &to_json(out))?;
    writeln!(w)
}

/// Output format: explicit config setting, else the `.json` extension, else CSV.
pub fn output_format(cfg: &RunConfig, path: Option<&Path>) -> OutputFormat {
    cfg.output
        .format
        .unwrap_or_else(|| match path.and_then(|p| p.extension()) {
            Some(ext) if ext == "json" => OutputFormat::Json,
            _ => OutputFormat::Csv,
        })
}

/// Load, run and write. Returns the process exit code.
pub fn execute(sub: Subcommand, config: &Path, out: Option<&Path>) -> ExitCode {
    let result = RunConfig::load(config).and_then(|cfg| {
        let output = run(sub, &cfg)?;
        let path = out.map(Path::to_path_buf).or_else(|| cfg.output.path.clone());
        let format = output_format(&cfg, path.as_deref());
        let io = |e: std::io::Error| CliError {
            code: ExitCode::Io,
            message: format!("cannot write output: {e}"),
        };
        match &path {
            Some(p) => {
                let file = std::io::BufWriter::new(std::fs::File::create(p).map_err(io)?);
                match format {
                    OutputFormat::Csv => write_csv(&output, file),
                    OutputFormat::Json => write_json(&output, file),
                }
                .map_err(io)?;
            }
            None => {
                let stdout = std::io::stdout().lock();
                match format {
                    OutputFormat::Csv => write_csv(&output, stdout),
                    OutputFormat::Json => write_json(&output, stdout),
                }
                .map_err(io)?;
            }
        }
        Ok(output.code)
    });
    match result {
        Ok(code) => {
            if code == ExitCode::ExceptionalPoint {
                eprintln!("exceptional point encountered; affected rows are flagged `ep`");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
