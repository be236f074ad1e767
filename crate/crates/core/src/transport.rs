//! Parallel transport of states over the extended base space `(t, q)`.
//!
//! Along `t` the connection is `H` (`∂_t ψ = −iHψ`), along `q_i` it is the
//! generator `K_i(t, q)` (`∂_i ψ = −iK_i ψ`). A metric can be carried along
//! with the state, in which case `⟨ψ|G|ψ⟩` is logged after every segment.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{CanonicalField, GeneratorField};
use crate::linalg::{
    biorthogonal_eigensystem, matrix_exponential_propagator, ComplexMatrix, ComplexVector, EigenOptions,
    PropagatorMethod, I,
};
use crate::metric::{evolve_metric, metric_parameter_derivative, metric_time_derivative, symmetrize, MetricOperator};
use crate::models::{HamiltonianFamily, ParameterPoint};
use crate::ode::rk4;

/// Imaginary parts above this (relative to `‖H‖`) count as a complex eigenvalue
/// when watching for a real-to-complex transition along a path.
const COMPLEX_LEVEL_REL: f64 = 1e-8;

/// A state attached to a base-space point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: ComplexVector,
    pub at: ParameterPoint,
}

impl StateVector {
    pub fn new(amplitudes: ComplexVector, at: ParameterPoint) -> Result<Self> {
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        if amplitudes.norm() == 0.0 {
            return Err(Error::InvalidArgument("state vector is zero".into()));
        }
        Ok(StateVector { amplitudes, at })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }
}

/// A base-space coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Time,
    Parameter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub axis: Axis,
    pub delta: f64,
}

/// A piecewise path of axis-aligned segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePath {
    pub segments: Vec<Segment>,
    pub steps_per_segment: usize,
}

impl BasePath {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_segment < 1 {
            return Err(Error::InvalidArgument("steps_per_segment must be at least 1".into()));
        }
        if self.segments.iter().any(|s| !s.delta.is_finite()) {
            return Err(Error::InvalidArgument("segment displacement is not finite".into()));
        }
        Ok(())
    }
}

/// Norms recorded at the end of a segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormSample {
    pub segment: usize,
    pub at: ParameterPoint,
    pub euclidean: f64,
    /// `⟨ψ|G|ψ⟩` when a metric is carried.
    pub generalized: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Transported {
    pub state: StateVector,
    pub metric: Option<MetricOperator>,
    pub log: Vec<NormSample>,
}

impl Transported {
    /// Largest `|⟨ψ|G|ψ⟩ − ⟨ψ|G|ψ⟩_start|` over the log.
    pub fn generalized_drift(&self, start: f64) -> Option<f64> {
        self.log
            .iter()
            .map(|s| s.generalized.map(|g| (g - start).abs()))
            .try_fold(0.0_f64, |acc, d| d.map(|d| acc.max(d)))
    }
}

/// Closed rectangle `a → b → −a → −b` in the base space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub a: Axis,
    pub da: f64,
    pub b: Axis,
    pub db: f64,
}

/// Transport engine for one family and one generator field.
///
/// Without an explicit field the canonical adiabatic-gauge generators of the
/// family are solved at every integrator stage.
pub struct Transport<'a> {
    family: &'a dyn HamiltonianFamily,
    field: Option<&'a dyn GeneratorField>,
    eigen: EigenOptions,
}

impl<'a> Transport<'a> {
    pub fn canonical(family: &'a dyn HamiltonianFamily) -> Self {
        Transport {
            family,
            field: None,
            eigen: EigenOptions::default(),
        }
    }

    pub fn with_field(family: &'a dyn HamiltonianFamily, field: &'a dyn GeneratorField) -> Self {
        Transport {
            family,
            field: Some(field),
            eigen: EigenOptions::default(),
        }
    }

    pub fn eigen_options(mut self, opts: EigenOptions) -> Self {
        self.eigen = opts;
        self
    }

    fn generator(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        match self.field {
            Some(f) => f.generator(p, i),
            None => CanonicalField::with_options(self.family, self.eigen).generator(p, i),
        }
    }

    fn check_inputs(&self, state: &StateVector, metric: Option<&MetricOperator>, steps: usize) -> Result<()> {
        if steps < 1 {
            return Err(Error::InvalidArgument("step count must be at least 1".into()));
        }
        self.family.check_point(&state.at)?;
        if state.dim() != self.family.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.family.dim(),
                found: state.dim(),
            });
        }
        if let Some(g) = metric {
            if g.value.nrows() != state.dim() {
                return Err(Error::DimensionMismatch {
                    expected: state.dim(),
                    found: g.value.nrows(),
                });
            }
        }
        Ok(())
    }

    /// Advance by `dt` along time.
    pub fn time(
        &self,
        state: &StateVector,
        metric: Option<&MetricOperator>,
        dt: f64,
        steps: usize,
    ) -> Result<(StateVector, Option<MetricOperator>)> {
        self.check_inputs(state, metric, steps)?;
        let end = state.at.with_t(state.at.t + dt);
        if dt == 0.0 {
            return Ok((state.clone(), metric.cloned()));
        }
        if self.family.time_independent() {
            let h = self.family.evaluate(&state.at)?;
            let u = matrix_exponential_propagator(&h, dt, PropagatorMethod::Auto, &self.eigen)?;
            let g = metric
                .map(|g| evolve_metric(g, self.family, &state.at, end.t, steps))
                .transpose()?;
            let psi = StateVector {
                amplitudes: u * &state.amplitudes,
                at: end,
            };
            return Ok((psi, g));
        }
        let y = stacked(state, metric);
        let y = rk4(
            |t, y| stacked_rhs(y, &self.family.evaluate(&state.at.with_t(t))?, Flow::Time),
            symmetrize_tail,
            state.at.t,
            y,
            end.t,
            steps,
        )?;
        Ok(unstack(y, end, metric))
    }

    /// Advance by `dq` along parameter `i` at fixed time `state.at.t`.
    ///
    /// Encountering or crossing an exceptional point is an `EpOnPath` error.
    pub fn parameter(
        &self,
        state: &StateVector,
        metric: Option<&MetricOperator>,
        i: usize,
        dq: f64,
        steps: usize,
    ) -> Result<(StateVector, Option<MetricOperator>)> {
        self.check_inputs(state, metric, steps)?;
        self.family.check_direction(i)?;
        if dq == 0.0 {
            return Ok((state.clone(), metric.cloned()));
        }
        let q0 = state.at.q[i];
        let h = dq / steps as f64;
        let point = |s: f64| {
            let mut p = state.at.clone();
            p.q[i] = s;
            p
        };
        let ep = |step: usize, s: f64| Error::EpOnPath { step, q: s };
        let mut complex_levels = self.complex_levels(&state.at).map_err(|_| ep(0, q0))?;
        let mut y = stacked(state, metric);
        for k in 0..steps {
            let (s0, s1) = (q0 + k as f64 * h, q0 + (k + 1) as f64 * h);
            y = rk4(
                |s, y| {
                    let kmat = self.generator(&point(s), i).map_err(|e| match e {
                        Error::NonDiagonalizable { .. } => ep(k, s),
                        other => other,
                    })?;
                    stacked_rhs(y, &kmat, Flow::Parameter)
                },
                symmetrize_tail,
                s0,
                y,
                s1,
                1,
            )?;
            let levels = self.complex_levels(&point(s1)).map_err(|_| ep(k, s1))?;
            if levels != complex_levels {
                return Err(ep(k, s1));
            }
            complex_levels = levels;
        }
        Ok(unstack(y, point(q0 + dq), metric))
    }

    /// Number of eigenvalues off the real axis; errors at exceptional points.
    fn complex_levels(&self, p: &ParameterPoint) -> Result<usize> {
        let hm = self.family.evaluate(p)?;
        let es = biorthogonal_eigensystem(&hm, &self.eigen)?;
        let scale = hm.norm().max(1.0);
        Ok(es
            .eigenvalues
            .iter()
            .filter(|z| z.im.abs() > COMPLEX_LEVEL_REL * scale)
            .count())
    }

    fn segment(
        &self,
        state: &StateVector,
        metric: Option<&MetricOperator>,
        seg: &Segment,
        steps: usize,
    ) -> Result<(StateVector, Option<MetricOperator>)> {
        match seg.axis {
            Axis::Time => self.time(state, metric, seg.delta, steps),
            Axis::Parameter(i) => self.parameter(state, metric, i, seg.delta, steps),
        }
    }

    /// Compose segment transports in order, logging norms after each segment.
    pub fn path(&self, state: &StateVector, metric: Option<&MetricOperator>, path: &BasePath) -> Result<Transported> {
        path.validate()?;
        let mut psi = state.clone();
        let mut g = metric.cloned();
        let mut log = Vec::with_capacity(path.segments.len());
        for (n, seg) in path.segments.iter().enumerate() {
            let (next, next_g) = self.segment(&psi, g.as_ref(), seg, path.steps_per_segment)?;
            psi = next;
            g = next_g;
            log.push(NormSample {
                segment: n,
                at: psi.at.clone(),
                euclidean: psi.amplitudes.norm(),
                generalized: g.as_ref().map(|g| g.norm_sq(&psi.amplitudes)),
            });
        }
        Ok(Transported {
            state: psi,
            metric: g,
            log,
        })
    }

    /// `‖ψ_final − ψ_initial‖` after going around `rect`.
    pub fn holonomy(&self, state: &StateVector, rect: &Rectangle, steps: usize) -> Result<f64> {
        let path = BasePath {
            segments: vec![
                Segment {
                    axis: rect.a,
                    delta: rect.da,
                },
                Segment {
                    axis: rect.b,
                    delta: rect.db,
                },
                Segment {
                    axis: rect.a,
                    delta: -rect.da,
                },
                Segment {
                    axis: rect.b,
                    delta: -rect.db,
                },
            ],
            steps_per_segment: steps,
        };
        let out = self.path(state, None, &path)?;
        Ok((&out.state.amplitudes - &state.amplitudes).norm())
    }
}

#[derive(Clone, Copy)]
enum Flow {
    Time,
    Parameter,
}

/// `[ψ | G]` as one `n × (1 + n)` block, or just `ψ`.
fn stacked(state: &StateVector, metric: Option<&MetricOperator>) -> ComplexMatrix {
    let n = state.dim();
    let cols = if metric.is_some() { n + 1 } else { 1 };
    let mut y = ComplexMatrix::zeros(n, cols);
    y.set_column(0, &state.amplitudes);
    if let Some(g) = metric {
        y.view_mut((0, 1), (n, n)).copy_from(&g.value);
    }
    y
}

fn stacked_rhs(y: &ComplexMatrix, x: &ComplexMatrix, flow: Flow) -> Result<ComplexMatrix> {
    let n = y.nrows();
    let mut out = ComplexMatrix::zeros(n, y.ncols());
    let psi = y.columns(0, 1);
    out.set_column(0, &(x * psi * Complex64::from(-I)).column(0));
    if y.ncols() > 1 {
        let g = y.view((0, 1), (n, n)).into_owned();
        let dg = match flow {
            Flow::Time => metric_time_derivative(&g, x),
            Flow::Parameter => metric_parameter_derivative(&g, x),
        };
        out.view_mut((0, 1), (n, n)).copy_from(&dg);
    }
    Ok(out)
}

fn symmetrize_tail(y: &mut ComplexMatrix) {
    if y.ncols() > 1 {
        let n = y.nrows();
        let mut g = y.view((0, 1), (n, n)).into_owned();
        symmetrize(&mut g);
        y.view_mut((0, 1), (n, n)).copy_from(&g);
    }
}

fn unstack(
    y: ComplexMatrix,
    at: ParameterPoint,
    metric: Option<&MetricOperator>,
) -> (StateVector, Option<MetricOperator>) {
    let n = y.nrows();
    let g = metric.map(|m| MetricOperator {
        value: y.view((0, 1), (n, n)).into_owned(),
        at: at.clone(),
        weights: m.weights.clone(),
    });
    (
        StateVector {
            amplitudes: y.column(0).into_owned(),
            at,
        },
        g,
    )
}

/// Time transport with the canonical engine.
pub fn transport_time(
    state: &StateVector,
    family: &dyn HamiltonianFamily,
    dt: f64,
    steps: usize,
) -> Result<StateVector> {
    Ok(Transport::canonical(family).time(state, None, dt, steps)?.0)
}

/// Parameter transport along `q_i` at time `t_fixed` with canonical generators.
pub fn transport_parameter(
    state: &StateVector,
    family: &dyn HamiltonianFamily,
    i: usize,
    dq: f64,
    t_fixed: f64,
    steps: usize,
) -> Result<StateVector> {
    let at_t = StateVector {
        amplitudes: state.amplitudes.clone(),
        at: state.at.with_t(t_fixed),
    };
    Ok(Transport::canonical(family).parameter(&at_t, None, i, dq, steps)?.0)
}

pub fn transport_path(state: &StateVector, family: &dyn HamiltonianFamily, path: &BasePath) -> Result<StateVector> {
    Ok(Transport::canonical(family).path(state, None, path)?.state)
}

pub fn loop_holonomy(
    state: &StateVector,
    family: &dyn HamiltonianFamily,
    rect: &Rectangle,
    steps: usize,
) -> Result<f64> {
    Transport::canonical(family).holonomy(state, rect, steps)
}
