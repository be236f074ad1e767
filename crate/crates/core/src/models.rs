//! Hamiltonian families `H(t, q)` with parameter derivatives.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, check_same_dim, check_square, from_rows, ComplexMatrix};

/// A point `(t, q_1 … q_n)` of the extended base space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub t: f64,
    pub q: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(t: f64, q: Vec<f64>) -> Self {
        ParameterPoint { t, q }
    }

    /// Point at `t = 0`.
    pub fn at(q: Vec<f64>) -> Self {
        ParameterPoint { t: 0.0, q }
    }

    pub fn with_t(&self, t: f64) -> Self {
        ParameterPoint { t, q: self.q.clone() }
    }

    /// Copy with `q_i` displaced by `dq`.
    pub fn shifted(&self, i: usize, dq: f64) -> Self {
        let mut q = self.q.clone();
        q[i] += dq;
        ParameterPoint { t: self.t, q }
    }
}

/// A family of square matrices `H(t, q)` with exact parameter partials.
pub trait HamiltonianFamily: Send + Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn parameter_names(&self) -> Vec<String>;
    /// True when `evaluate` does not depend on `t`.
    fn time_independent(&self) -> bool;
    fn evaluate(&self, p: &ParameterPoint) -> Result<ComplexMatrix>;
    /// `∂H/∂q_i` at `p`.
    fn partial(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix>;

    /// Whether `p` lies in the region where the model's eigenframe is regular.
    fn in_domain(&self, _p: &ParameterPoint) -> bool {
        true
    }

    /// Check the point has the right arity and lies in the model's domain.
    fn check_point(&self, p: &ParameterPoint) -> Result<()> {
        if p.q.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.n_params(),
                found: p.q.len(),
            });
        }
        if !p.t.is_finite() || p.q.iter().any(|x| !x.is_finite()) {
            return Err(Error::OutOfDomain("non-finite coordinate".into()));
        }
        Ok(())
    }

    fn check_direction(&self, i: usize) -> Result<()> {
        if i >= self.n_params() {
            return Err(Error::InvalidArgument(format!(
                "parameter index {i} out of range for a {}-parameter family",
                self.n_params()
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for dyn HamiltonianFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianFamily")
            .field("dim", &self.dim())
            .field("params", &self.parameter_names())
            .finish()
    }
}

/// `H(q) = H0 + Σ_i q_i V_i`.
#[derive(Debug, Clone)]
pub struct LinearFamily {
    h0: ComplexMatrix,
    couplings: Vec<ComplexMatrix>,
}

pub fn make_linear_family(h0: ComplexMatrix, couplings: Vec<ComplexMatrix>) -> Result<LinearFamily> {
    check_square(&h0)?;
    for v in &couplings {
        check_same_dim(&h0, v)?;
    }
    Ok(LinearFamily { h0, couplings })
}

impl LinearFamily {
    pub fn base(&self) -> &ComplexMatrix {
        &self.h0
    }

    pub fn couplings(&self) -> &[ComplexMatrix] {
        &self.couplings
    }
}

impl HamiltonianFamily for LinearFamily {
    fn dim(&self) -> usize {
        self.h0.nrows()
    }

    fn n_params(&self) -> usize {
        self.couplings.len()
    }

    fn parameter_names(&self) -> Vec<String> {
        (1..=self.couplings.len()).map(|k| format!("q{k}")).collect()
    }

    fn time_independent(&self) -> bool {
        true
    }

    fn evaluate(&self, p: &ParameterPoint) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        let mut h = self.h0.clone();
        for (q, v) in p.q.iter().zip(&self.couplings) {
            h += v * Complex64::from(*q);
        }
        Ok(h)
    }

    fn partial(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        self.check_direction(i)?;
        Ok(self.couplings[i].clone())
    }
}

/// Spin-½ in a field of fixed magnitude, parameters `(θ, φ)`:
/// `H = μB [[cosθ, e^{−iφ} sinθ], [e^{iφ} sinθ, −cosθ]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinHalfFamily {
    pub mu_b: f64,
}

pub fn make_spin_half_family(mu_b: f64) -> Result<SpinHalfFamily> {
    if mu_b == 0.0 || !mu_b.is_finite() {
        return Err(Error::InvalidArgument("μB must be finite and non-zero".into()));
    }
    Ok(SpinHalfFamily { mu_b })
}

impl HamiltonianFamily for SpinHalfFamily {
    fn dim(&self) -> usize {
        2
    }

    fn n_params(&self) -> usize {
        2
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["theta".into(), "phi".into()]
    }

    fn time_independent(&self) -> bool {
        true
    }

    /// Open domain `θ ∈ (0, π)`.
    fn in_domain(&self, p: &ParameterPoint) -> bool {
        p.q.len() == 2 && p.q[0] > 0.0 && p.q[0] < PI
    }

    fn evaluate(&self, p: &ParameterPoint) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        let (th, ph) = (p.q[0], p.q[1]);
        let m = self.mu_b;
        let e = Complex64::from_polar(m * th.sin(), -ph);
        Ok(from_rows(2, &[c(m * th.cos(), 0.), e, e.conj(), c(-m * th.cos(), 0.)]))
    }

    fn partial(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        self.check_direction(i)?;
        let (th, ph) = (p.q[0], p.q[1]);
        let m = self.mu_b;
        Ok(match i {
            0 => {
                let e = Complex64::from_polar(m * th.cos(), -ph);
                from_rows(2, &[c(-m * th.sin(), 0.), e, e.conj(), c(m * th.sin(), 0.)])
            }
            _ => {
                let e = Complex64::from_polar(m * th.sin(), -ph) * c(0., -1.);
                from_rows(2, &[c(0., 0.), e, e.conj(), c(0., 0.)])
            }
        })
    }
}

/// PT-symmetric dimer `H(γ) = [[iγ, 1], [1, −iγ]]`, exceptional points at `γ = ±1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PtDimerFamily;

pub fn make_pt_dimer_family() -> PtDimerFamily {
    PtDimerFamily
}

impl HamiltonianFamily for PtDimerFamily {
    fn dim(&self) -> usize {
        2
    }

    fn n_params(&self) -> usize {
        1
    }

    fn parameter_names(&self) -> Vec<String> {
        vec!["gamma".into()]
    }

    fn time_independent(&self) -> bool {
        true
    }

    fn evaluate(&self, p: &ParameterPoint) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        let g = p.q[0];
        Ok(from_rows(2, &[c(0., g), c(1., 0.), c(1., 0.), c(0., -g)]))
    }

    fn partial(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        self.check_direction(i)?;
        Ok(from_rows(2, &[c(0., 1.), c(0., 0.), c(0., 0.), c(0., -1.)]))
    }
}

type MatrixFn = dyn Fn(&ParameterPoint) -> ComplexMatrix + Send + Sync;
type PartialFn = dyn Fn(&ParameterPoint, usize) -> ComplexMatrix + Send + Sync;

/// Closure-backed family, for time-dependent or ad hoc models.
#[derive(Clone)]
pub struct FnFamily {
    dim: usize,
    names: Vec<String>,
    time_independent: bool,
    evaluate: Arc<MatrixFn>,
    partial: Arc<PartialFn>,
}

impl FnFamily {
    pub fn new(
        dim: usize,
        names: Vec<String>,
        time_independent: bool,
        evaluate: impl Fn(&ParameterPoint) -> ComplexMatrix + Send + Sync + 'static,
        partial: impl Fn(&ParameterPoint, usize) -> ComplexMatrix + Send + Sync + 'static,
    ) -> Self {
        FnFamily {
            dim,
            names,
            time_independent,
            evaluate: Arc::new(evaluate),
            partial: Arc::new(partial),
        }
    }
}

impl HamiltonianFamily for FnFamily {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_params(&self) -> usize {
        self.names.len()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn time_independent(&self) -> bool {
        self.time_independent
    }

    fn evaluate(&self, p: &ParameterPoint) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        let h = (self.evaluate)(p);
        if check_square(&h)? != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: h.nrows(),
            });
        }
        Ok(h)
    }

    fn partial(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        self.check_point(p)?;
        self.check_direction(i)?;
        Ok((self.partial)(p, i))
    }
}

/// Central difference of `H` along `q_i` with one Richardson step (error `O(h⁴)`).
pub fn numerical_partial(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    h: f64,
) -> Result<ComplexMatrix> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    family.check_point(p)?;
    family.check_direction(i)?;
    let central = |step: f64| -> Result<ComplexMatrix> {
        let plus = family.evaluate(&p.shifted(i, step))?;
        let minus = family.evaluate(&p.shifted(i, -step))?;
        Ok((plus - minus) * Complex64::from(0.5 / step))
    };
    let coarse = central(h)?;
    let fine = central(0.5 * h)?;
    Ok((fine * Complex64::from(4.0) - coarse) * Complex64::from(1.0 / 3.0))
}

/// Scalar gauge function `f(θ, φ)`.
pub type GaugeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// The four scalar gauge functions of the closed-form spin-½ generators.
#[derive(Clone)]
pub struct SpinHalfGauge {
    pub alpha1: GaugeFn,
    pub alpha2: GaugeFn,
    pub beta1: GaugeFn,
    pub beta2: GaugeFn,
}

impl SpinHalfGauge {
    pub fn new(
        alpha1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        alpha2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        beta1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        beta2: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SpinHalfGauge {
            alpha1: Arc::new(alpha1),
            alpha2: Arc::new(alpha2),
            beta1: Arc::new(beta1),
            beta2: Arc::new(beta2),
        }
    }

    /// All four functions identically zero.
    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |_, _| 0.0)
    }

    /// `α₁ = α₂ = β₁ = 0`, `β₂ = 1/(2cosθ)`: solves both gauge constraints.
    pub fn flat() -> Self {
        Self::new(|_, _| 0.0, |_, _| 0.0, |_, _| 0.0, |th, _| 0.5 / th.cos())
    }

    /// Residuals of the two integrability constraints on the gauge functions,
    /// `∂_φα₁ − ∂_θβ₁` and `2cos²θ(∂_θβ₂ − ∂_φα₂) − sinθ`, by central differences.
    pub fn constraint_residuals(&self, theta: f64, phi: f64, h: f64) -> (f64, f64) {
        let d = |f: &GaugeFn, dth: f64, dph: f64| {
            (f(theta + dth * h, phi + dph * h) - f(theta - dth * h, phi - dph * h)) / (2.0 * h)
        };
        let r1 = d(&self.alpha1, 0.0, 1.0) - d(&self.beta1, 1.0, 0.0);
        let r2 = 2.0 * theta.cos().powi(2) * (d(&self.beta2, 1.0, 0.0) - d(&self.alpha2, 0.0, 1.0)) - theta.sin();
        (r1, r2)
    }
}

impl fmt::Debug for SpinHalfGauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpinHalfGauge { .. }")
    }
}

/// Closed-form adiabatic-gauge generators `(K_θ, K_φ)` of the spin-½ family.
///
/// The gauge functions enter through `α₁ 1 + α₂ Ĥ` and `β₁ 1 + β₂ Ĥ` with
/// `Ĥ = H/μB`, i.e. as residual shifts commuting with `H`.
#[derive(Debug, Clone)]
pub struct SpinHalfReferenceGenerators {
    pub gauge: SpinHalfGauge,
}

pub fn make_spin_half_reference_generators(gauge: SpinHalfGauge) -> SpinHalfReferenceGenerators {
    SpinHalfReferenceGenerators { gauge }
}

/// `tanθ` is treated as singular within this distance of `cosθ = 0`.
const TAN_POLE_TOL: f64 = 1e-8;

impl SpinHalfReferenceGenerators {
    pub fn k_theta(&self, theta: f64, phi: f64) -> Result<ComplexMatrix> {
        let a1 = (self.gauge.alpha1)(theta, phi);
        let a2 = (self.gauge.alpha2)(theta, phi);
        check_gauge_values(&[a1, a2])?;
        let e = Complex64::from_polar(1.0, -phi);
        Ok(from_rows(
            2,
            &[
                c(a1 + a2 * theta.cos(), 0.),
                e * c(a2 * theta.sin(), -0.5),
                e.conj() * c(a2 * theta.sin(), 0.5),
                c(a1 - a2 * theta.cos(), 0.),
            ],
        ))
    }

    pub fn k_phi(&self, theta: f64, phi: f64) -> Result<ComplexMatrix> {
        if theta.cos().abs() < TAN_POLE_TOL {
            return Err(Error::OutOfDomain(format!("K_φ has a tanθ pole at θ = {theta}")));
        }
        let b1 = (self.gauge.beta1)(theta, phi);
        let b2 = (self.gauge.beta2)(theta, phi);
        check_gauge_values(&[b1, b2])?;
        let e = Complex64::from_polar(1.0, -phi);
        let off = -0.5 * theta.tan() + b2 * theta.sin();
        Ok(from_rows(
            2,
            &[
                c(b1 + b2 * theta.cos(), 0.),
                e * off,
                e.conj() * off,
                c(b1 - b2 * theta.cos(), 0.),
            ],
        ))
    }

    /// Generator along direction `i` (0 = θ, 1 = φ).
    pub fn generator(&self, theta: f64, phi: f64, i: usize) -> Result<ComplexMatrix> {
        match i {
            0 => self.k_theta(theta, phi),
            1 => self.k_phi(theta, phi),
            _ => Err(Error::InvalidArgument(format!("spin-½ has two directions, got {i}"))),
        }
    }
}

fn check_gauge_values(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::OutOfDomain("gauge function is not finite".into()))
    }
}

/// The model ids accepted by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Linear,
    SpinHalf,
    PtDimer,
}

impl ModelId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Linear => "linear",
            ModelId::SpinHalf => "spin_half",
            ModelId::PtDimer => "pt_dimer",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelId::Linear),
            "spin_half" => Ok(ModelId::SpinHalf),
            "pt_dimer" => Ok(ModelId::PtDimer),
            other => Err(Error::InvalidArgument(format!("unknown model id {other:?}"))),
        }
    }
}

/// `σ_z + q σ_x`, the Hermitian reference model used throughout the tests.
pub fn transverse_field_family() -> LinearFamily {
    make_linear_family(crate::linalg::pauli_z(), vec![crate::linalg::pauli_x()]).expect("2x2 matrices")
}
