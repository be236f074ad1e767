//! Hilbert-space metric operators `G(t, q)`.
//!
//! A metric is Hermitian and positive definite and is covariantly constant
//! along every base direction:
//!
//! * time: `∂_t G = i(G H − H† G)`
//! * parameter `q_i`: `∂_i G = i(G K_i − K_i† G)`
//!
//! For a real spectrum a time-independent solution is
//! `G = Σ_n w_n |χ_n⟩⟨χ_n|` with left eigenvectors `χ_n`; the positive weights
//! `w_n` are the gauge handle of that construction.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{
    check_same_dim, check_square, condition_number, hermiticity_deviation, matrix_exponential_propagator,
    positive_definiteness_check, ComplexMatrix, ComplexVector, EigenOptions, EigenSystem, PropagatorMethod, I,
};
use crate::models::{HamiltonianFamily, ParameterPoint};
use crate::ode::rk4;

/// Eigenvalues with `|Im h| ≤ REAL_SPECTRUM_REL · max(1, max|h|)` count as real.
pub const REAL_SPECTRUM_REL: f64 = 1e-10;
/// Gauge transforms with a larger condition number are rejected as singular.
pub const SINGULAR_TRANSFORM_THRESHOLD: f64 = 1e12;

/// A validated metric operator.
#[derive(Debug, Clone)]
pub struct MetricOperator {
    pub value: ComplexMatrix,
    pub at: ParameterPoint,
    /// Construction weights; empty for metrics not built by [`stationary_metric`].
    pub weights: Vec<f64>,
}

impl MetricOperator {
    /// Wrap `value` after checking Hermiticity and positivity to `tol` (relative).
    pub fn new(value: ComplexMatrix, at: ParameterPoint, tol: f64) -> Result<Self> {
        check_square(&value)?;
        let scale = value.norm().max(1.0);
        let report = positive_definiteness_check(&value, tol * scale)?;
        if report.hermiticity_deviation > tol * scale {
            return Err(Error::NotHermitian {
                deviation: report.hermiticity_deviation,
            });
        }
        if !report.positive_definite {
            return Err(Error::PositivityLoss {
                min_eigenvalue: report.min_eigenvalue,
            });
        }
        Ok(MetricOperator {
            value,
            at,
            weights: Vec::new(),
        })
    }

    pub fn identity(dim: usize, at: ParameterPoint) -> Self {
        MetricOperator {
            value: ComplexMatrix::identity(dim, dim),
            at,
            weights: vec![1.0; dim],
        }
    }

    /// `⟨φ|G|ψ⟩`.
    pub fn inner(&self, phi: &ComplexVector, psi: &ComplexVector) -> Complex64 {
        (phi.adjoint() * &self.value * psi)[(0, 0)]
    }

    /// `⟨ψ|G|ψ⟩`, real for a Hermitian metric.
    pub fn norm_sq(&self, psi: &ComplexVector) -> f64 {
        self.inner(psi, psi).re
    }
}

/// `G = Σ_n w_n |χ_n⟩⟨χ_n|`, the time-independent metric of a real spectrum.
pub fn stationary_metric(es: &EigenSystem, weights: &[f64], at: ParameterPoint) -> Result<MetricOperator> {
    if weights.len() != es.dim() {
        return Err(Error::DimensionMismatch {
            expected: es.dim(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::InvalidArgument(
            "metric weights must be positive and finite".into(),
        ));
    }
    let scale = es.eigenvalues.iter().map(|h| h.norm()).fold(1.0, f64::max);
    let max_imag = es.max_imag();
    if max_imag > REAL_SPECTRUM_REL * scale {
        return Err(Error::ComplexSpectrum { max_imag });
    }
    let w = ComplexVector::from_iterator(weights.len(), weights.iter().map(|&x| Complex64::from(x)));
    let mut g = &es.left * ComplexMatrix::from_diagonal(&w) * es.left.adjoint();
    symmetrize(&mut g);
    Ok(MetricOperator {
        value: g,
        at,
        weights: weights.to_vec(),
    })
}

/// Stationary metric with unit weights.
pub fn default_stationary_metric(es: &EigenSystem, at: ParameterPoint) -> Result<MetricOperator> {
    stationary_metric(es, &vec![1.0; es.dim()], at)
}

/// `G ← (G + G†)/2`.
pub fn symmetrize(g: &mut ComplexMatrix) {
    let h = (&*g + g.adjoint()) * Complex64::from(0.5);
    *g = h;
}

/// Right-hand side of the time equation, `i(G H − H† G)`.
pub fn metric_time_derivative(g: &ComplexMatrix, h: &ComplexMatrix) -> ComplexMatrix {
    (g * h - h.adjoint() * g) * I
}

/// Right-hand side of the parameter equation, `i(G K − K† G)`.
pub fn metric_parameter_derivative(g: &ComplexMatrix, k: &ComplexMatrix) -> ComplexMatrix {
    (g * k - k.adjoint() * g) * I
}

/// How [`evolve_metric_with`] advances the metric in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricEvolution {
    /// `G(t) = exp(−iH†Δt) G0 exp(iHΔt)`; time-independent families only.
    ClosedForm,
    /// Fixed-step RK4 with re-symmetrization after every step.
    Integrator,
}

/// Evolve `g0` from `p0.t` to `t_final` under `∂_t G = i(G H − H† G)`.
///
/// Time-independent families use the closed form, others RK4 with `steps` steps.
pub fn evolve_metric(
    g0: &MetricOperator,
    family: &dyn HamiltonianFamily,
    p0: &ParameterPoint,
    t_final: f64,
    steps: usize,
) -> Result<MetricOperator> {
    let method = if family.time_independent() {
        MetricEvolution::ClosedForm
    } else {
        MetricEvolution::Integrator
    };
    evolve_metric_with(g0, family, p0, t_final, steps, method)
}

pub fn evolve_metric_with(
    g0: &MetricOperator,
    family: &dyn HamiltonianFamily,
    p0: &ParameterPoint,
    t_final: f64,
    steps: usize,
    method: MetricEvolution,
) -> Result<MetricOperator> {
    if steps < 1 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    let dt = t_final - p0.t;
    let mut g = match method {
        MetricEvolution::ClosedForm => {
            if !family.time_independent() {
                return Err(Error::Inapplicable(
                    "closed-form metric evolution needs a time-independent family".into(),
                ));
            }
            let h = family.evaluate(p0)?;
            check_same_dim(&h, &g0.value)?;
            // exp(iHΔt) = propagator evaluated at −Δt
            let v = matrix_exponential_propagator(&h, -dt, PropagatorMethod::Auto, &EigenOptions::default())?;
            v.adjoint() * &g0.value * v
        }
        MetricEvolution::Integrator => rk4(
            |t, g| Ok(metric_time_derivative(g, &family.evaluate(&p0.with_t(t))?)),
            symmetrize,
            p0.t,
            g0.value.clone(),
            t_final,
            steps,
        )?,
    };
    symmetrize(&mut g);
    let report = positive_definiteness_check(&g, 0.0)?;
    if report.min_eigenvalue.is_nan() || report.min_eigenvalue <= 0.0 {
        return Err(Error::PositivityLoss {
            min_eigenvalue: report.min_eigenvalue,
        });
    }
    Ok(MetricOperator {
        value: g,
        at: p0.with_t(t_final),
        weights: g0.weights.clone(),
    })
}

/// Which base direction a compatibility residual refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Time,
    Parameter,
}

/// `‖dG − i G X + i X† G‖` with `X = H` (time) or `X = K` (parameter).
pub fn metric_compatibility_residual(
    g: &ComplexMatrix,
    dg: &ComplexMatrix,
    generator: &ComplexMatrix,
    _direction: Direction,
) -> Result<f64> {
    check_same_dim(g, dg)?;
    check_same_dim(g, generator)?;
    Ok((dg - metric_parameter_derivative(g, generator)).norm())
}

/// `G' = T† G T`.
pub fn gauge_transform_metric(g: &ComplexMatrix, t: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_dim(g, t)?;
    let condition = condition_number(t);
    if condition.is_nan() || condition > SINGULAR_TRANSFORM_THRESHOLD {
        return Err(Error::SingularTransform { condition });
    }
    let mut out = t.adjoint() * g * t;
    if hermiticity_deviation(g) <= 1e-12 * g.norm().max(1.0) {
        symmetrize(&mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{biorthogonal_eigensystem, c, expm, from_rows, identity, pauli_x, pauli_y, pauli_z};
    use crate::models::{make_pt_dimer_family, make_spin_half_family, FnFamily};

    fn dimer_es(g: f64) -> EigenSystem {
        let h = make_pt_dimer_family().evaluate(&ParameterPoint::at(vec![g])).unwrap();
        biorthogonal_eigensystem(&h, &EigenOptions::default()).unwrap()
    }

    fn driven_qubit() -> FnFamily {
        // Hermitian, explicitly time-dependent
        FnFamily::new(
            2,
            vec!["q".into()],
            false,
            |p| pauli_z() * c(1.0 + p.q[0], 0.) + pauli_x() * c((2.0 * p.t).cos(), 0.),
            |_, _| pauli_z(),
        )
    }

    #[test]
    fn hermitian_stationary_metric_is_identity() {
        let h = from_rows(2, &[c(0.3, 0.), c(0.5, -0.2), c(0.5, 0.2), c(-1.0, 0.)]);
        let es = biorthogonal_eigensystem(&h, &EigenOptions::default()).unwrap();
        let g = default_stationary_metric(&es, ParameterPoint::at(vec![])).unwrap();
        assert!((g.value - identity(2)).norm() < 1e-14);
    }

    #[test]
    fn dimer_stationary_metric_is_stationary() {
        let es = dimer_es(0.5);
        let g = default_stationary_metric(&es, ParameterPoint::at(vec![0.5])).unwrap();
        let h = es.reconstruct();
        assert!(metric_time_derivative(&g.value, &h).norm() <= 1e-10);
        assert!(positive_definiteness_check(&g.value, 1e-12).unwrap().positive_definite);
    }

    #[test]
    fn complex_spectrum_has_no_stationary_metric() {
        let es = dimer_es(1.5);
        let err = default_stationary_metric(&es, ParameterPoint::at(vec![1.5])).unwrap_err();
        assert!(matches!(err, Error::ComplexSpectrum { .. }));
    }

    #[test]
    fn weights_are_validated() {
        let es = dimer_es(0.2);
        assert!(stationary_metric(&es, &[1.0, 0.0], ParameterPoint::at(vec![0.2])).is_err());
        assert!(stationary_metric(&es, &[1.0], ParameterPoint::at(vec![0.2])).is_err());
    }

    #[test]
    fn different_weights_both_stationary() {
        let es = dimer_es(0.6);
        let h = es.reconstruct();
        for w in [[1.0, 1.0], [0.2, 5.0], [3.0, 0.7]] {
            let g = stationary_metric(&es, &w, ParameterPoint::at(vec![0.6])).unwrap();
            assert!(metric_time_derivative(&g.value, &h).norm() < 1e-12 * g.value.norm());
        }
    }

    #[test]
    fn identity_stays_identity_for_hermitian_families() {
        let spin = make_spin_half_family(1.0).unwrap();
        let p = ParameterPoint::at(vec![0.8, 0.3]);
        let g0 = MetricOperator::identity(2, p.clone());
        for t in [0.5, 3.0, 10.0] {
            let g = evolve_metric(&g0, &spin, &p, t, 1).unwrap();
            assert!((g.value - identity(2)).norm() < 1e-12);
        }
        let drive = driven_qubit();
        let p = ParameterPoint::at(vec![0.1]);
        let g = evolve_metric(&MetricOperator::identity(2, p.clone()), &drive, &p, 4.0, 400).unwrap();
        assert!((g.value - identity(2)).norm() < 1e-12);
    }

    #[test]
    fn stationary_metric_survives_evolution() {
        let es = dimer_es(0.5);
        let p = ParameterPoint::at(vec![0.5]);
        let g0 = default_stationary_metric(&es, p.clone()).unwrap();
        let g = evolve_metric(&g0, &make_pt_dimer_family(), &p, 3.0, 1).unwrap();
        assert!((g.value - &g0.value).norm() < 1e-10);
    }

    #[test]
    fn integrator_matches_closed_form() {
        let fam = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.5]);
        let g0 = MetricOperator::identity(2, p.clone());
        let closed = evolve_metric_with(&g0, &fam, &p, 0.1, 1, MetricEvolution::ClosedForm).unwrap();
        let integrated = evolve_metric_with(&g0, &fam, &p, 0.1, 100, MetricEvolution::Integrator).unwrap();
        assert!((closed.value.clone() - integrated.value).norm() < 1e-9);
        // the identity is not stationary for a non-Hermitian H
        assert!((closed.value - identity(2)).norm() > 1e-3);
    }

    #[test]
    fn evolved_metric_conserves_norm() {
        let fam = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.5]);
        let h = fam.evaluate(&p).unwrap();
        let g0 = MetricOperator::identity(2, p.clone());
        let psi0 = ComplexVector::from_vec(vec![c(0.6, 0.1), c(-0.2, 0.7)]);
        let t = 1.7;
        let g = evolve_metric(&g0, &fam, &p, t, 1).unwrap();
        let psi = expm(&(&h * c(0., -t))) * &psi0;
        assert!((g.norm_sq(&psi) - g0.norm_sq(&psi0)).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_rejected() {
        let p = ParameterPoint::at(vec![0.5]);
        let g0 = MetricOperator::identity(2, p.clone());
        assert!(evolve_metric(&g0, &make_pt_dimer_family(), &p, 1.0, 0).is_err());
    }

    #[test]
    fn compatibility_residual_simple_cases() {
        let k = from_rows(2, &[c(0.2, 0.), c(0.1, 0.4), c(0.1, -0.4), c(-1.0, 0.)]);
        let r =
            metric_compatibility_residual(&identity(2), &ComplexMatrix::zeros(2, 2), &k, Direction::Parameter).unwrap();
        assert!(r < 1e-15);
        let g = from_rows(2, &[c(2.0, 0.), c(0.3, 0.2), c(0.3, -0.2), c(1.0, 0.)]);
        let dg = from_rows(2, &[c(0.5, 0.), c(0.1, 0.1), c(0.1, -0.1), c(-0.2, 0.)]);
        let r = metric_compatibility_residual(&g, &dg, &ComplexMatrix::zeros(2, 2), Direction::Parameter).unwrap();
        assert!((r - dg.norm()).abs() < 1e-15);
    }

    #[test]
    fn gauge_transform_cases() {
        let g = from_rows(2, &[c(2.0, 0.), c(0.3, 0.2), c(0.3, -0.2), c(1.0, 0.)]);
        assert!((gauge_transform_metric(&g, &identity(2)).unwrap() - &g).norm() < 1e-15);
        let scaled = gauge_transform_metric(&g, &(identity(2) * c(-1.5, 0.))).unwrap();
        assert!((scaled - &g * c(2.25, 0.)).norm() < 1e-14);
        let singular = from_rows(2, &[c(1., 0.), c(2., 0.), c(2., 0.), c(4., 0.)]);
        assert!(matches!(
            gauge_transform_metric(&g, &singular),
            Err(Error::SingularTransform { .. })
        ));
        let t = from_rows(2, &[c(1., 0.5), c(2., 0.), c(0.3, 0.), c(-1., 1.)]);
        let gp = gauge_transform_metric(&g, &t).unwrap();
        assert!(positive_definiteness_check(&gp, 1e-12).unwrap().positive_definite);
    }

    #[test]
    fn conjugated_transform_solves_gauge_equation() {
        // T(t) = exp(−iHt) T0 exp(iHt) satisfies ∂_t T + i[H, T] = 0
        let h = make_pt_dimer_family().evaluate(&ParameterPoint::at(vec![0.4])).unwrap();
        let t0 = identity(2) + pauli_y() * c(0.3, 0.);
        assert!((&t0 * &h - &h * &t0).norm() > 0.1);
        let tt = |t: f64| expm(&(&h * c(0., -t))) * &t0 * expm(&(&h * c(0., t)));
        let t = 0.9;
        let mut prev = f64::INFINITY;
        for step in [1e-2, 5e-3] {
            let dt = (tt(t + step) - tt(t - step)) * c(0.5 / step, 0.);
            let x = tt(t);
            let res = (dt + (&h * &x - &x * &h) * I).norm();
            assert!(res < 1e-3);
            if prev.is_finite() {
                assert!((prev / res - 4.0).abs() < 0.2, "O(h²): {prev} -> {res}");
            }
            prev = res;
        }
        // G'(t) = T(t)† G T(t) of a stationary G solves the time equation
        let es = dimer_es(0.4);
        let g = default_stationary_metric(&es, ParameterPoint::at(vec![0.4])).unwrap();
        let gp = |t: f64| gauge_transform_metric(&g.value, &tt(t)).unwrap();
        let step = 1e-3;
        let dgp = (gp(t + step) - gp(t - step)) * c(0.5 / step, 0.);
        let res = metric_compatibility_residual(&gp(t), &dgp, &h, Direction::Time).unwrap();
        assert!(res < 1e-5, "{res}");
    }
}
