//! Curvature two-form components on the extended base space `(t, q)`.
//!
//! All quantities here are residual norms: zero means locally flat.
//! Parameter derivatives of generator fields are finite differences of
//! pointwise solutions.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{assemble_generator, GeneratorField, GeneratorPair};
use crate::linalg::{check_same_dim, comm, ComplexMatrix, I};
use crate::models::{HamiltonianFamily, ParameterPoint};

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Finite-difference rule for parameter derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum DerivativeScheme {
    /// Second-order central difference.
    Central,
    /// Central difference at `h` and `h/2` combined by one Richardson step.
    #[default]
    Richardson,
}

/// `‖K_i⁽¹⁾ − ∂_i H − i[K_i(t), H]‖`, i.e. `F_ti` with `∂_t K_i = K_i⁽¹⁾`.
pub fn f_ti_component(family: &dyn HamiltonianFamily, p: &ParameterPoint, pair: &GeneratorPair, t: f64) -> Result<f64> {
    let at = p.with_t(t);
    let h = family.evaluate(&at)?;
    let dh = family.partial(&at, pair.direction)?;
    check_same_dim(&h, &pair.k1)?;
    let k = assemble_generator(pair, t);
    Ok((&pair.k1 - &dh - comm(&k, &h) * I).norm())
}

/// Scale used to judge an `F_ti` residual: `‖∂_i H‖ + ‖[K_i(t), H]‖`.
pub fn f_ti_scale(family: &dyn HamiltonianFamily, p: &ParameterPoint, pair: &GeneratorPair, t: f64) -> Result<f64> {
    let at = p.with_t(t);
    let h = family.evaluate(&at)?;
    let dh = family.partial(&at, pair.direction)?;
    Ok(dh.norm() + comm(&assemble_generator(pair, t), &h).norm())
}

/// `∂_i` of the pair `(K_j⁽¹⁾, K_j⁽⁰⁾)` of `field` at `p`.
pub fn field_derivative(
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    j: usize,
    i: usize,
    h: f64,
    scheme: DerivativeScheme,
) -> Result<(ComplexMatrix, ComplexMatrix)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if i >= p.q.len() {
        return Err(Error::InvalidArgument(format!("direction {i} out of range")));
    }
    let central = |step: f64| -> Result<(ComplexMatrix, ComplexMatrix)> {
        let up = field.pair(&p.shifted(i, step), j)?;
        let dn = field.pair(&p.shifted(i, -step), j)?;
        let s = Complex64::from(0.5 / step);
        Ok(((up.k1 - dn.k1) * s, (up.k0 - dn.k0) * s))
    };
    let (d1, d0) = central(h)?;
    match scheme {
        DerivativeScheme::Central => Ok((d1, d0)),
        DerivativeScheme::Richardson => {
            let (e1, e0) = central(0.5 * h)?;
            let (four, third) = (Complex64::from(4.0), Complex64::from(1.0 / 3.0));
            Ok(((e1 * four - d1) * third, (e0 * four - d0) * third))
        }
    }
}

fn require_pair_directions(field: &dyn GeneratorField, i: usize, j: usize) -> Result<()> {
    let n = field.n_directions();
    if n < 2 {
        return Err(Error::Inapplicable("F_ij needs at least two parameters".into()));
    }
    if i >= n || j >= n || i == j {
        return Err(Error::InvalidArgument(format!(
            "need two distinct directions below {n}, got ({i}, {j})"
        )));
    }
    Ok(())
}

/// `‖∂_i K_j − ∂_j K_i − i[K_j, K_i]‖` at `p` (time `p.t`).
pub fn f_ij_component(field: &dyn GeneratorField, p: &ParameterPoint, i: usize, j: usize, h: f64) -> Result<f64> {
    f_ij_component_with(field, p, i, j, h, DerivativeScheme::default())
}

pub fn f_ij_component_with(
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    i: usize,
    j: usize,
    h: f64,
    scheme: DerivativeScheme,
) -> Result<f64> {
    require_pair_directions(field, i, j)?;
    let t = Complex64::from(p.t);
    let (di1, di0) = field_derivative(field, p, j, i, h, scheme)?;
    let (dj1, dj0) = field_derivative(field, p, i, j, h, scheme)?;
    let ki = field.generator(p, i)?;
    let kj = field.generator(p, j)?;
    let di_kj = di1 * t + di0;
    let dj_ki = dj1 * t + dj0;
    Ok((di_kj - dj_ki - comm(&kj, &ki) * I).norm())
}

/// The `t¹` and `t⁰` parts of `F_ij` for one pair of directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossRelation {
    pub i: usize,
    pub j: usize,
    /// `‖∂_i K_j⁽¹⁾ − ∂_j K_i⁽¹⁾ − i[K_j⁽⁰⁾, K_i⁽¹⁾] + i[K_i⁽⁰⁾, K_j⁽¹⁾]‖`
    pub tterm: f64,
    /// `‖∂_i K_j⁽⁰⁾ − ∂_j K_i⁽⁰⁾ − i[K_j⁽⁰⁾, K_i⁽⁰⁾]‖`
    pub constterm: f64,
}

/// Cross relations for every pair `i < j`.
pub fn cross_relation_residuals(
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    h: f64,
    scheme: DerivativeScheme,
) -> Result<Vec<CrossRelation>> {
    let n = field.n_directions();
    if n < 2 {
        return Err(Error::Inapplicable(
            "cross relations need at least two parameters".into(),
        ));
    }
    let pairs = (0..n).map(|i| field.pair(p, i)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (di1, di0) = field_derivative(field, p, j, i, h, scheme)?;
            let (dj1, dj0) = field_derivative(field, p, i, j, h, scheme)?;
            let (pi, pj) = (&pairs[i], &pairs[j]);
            let tterm = (&di1 - &dj1 - comm(&pj.k0, &pi.k1) * I + comm(&pi.k0, &pj.k1) * I).norm();
            let constterm = (&di0 - &dj0 - comm(&pj.k0, &pi.k0) * I).norm();
            out.push(CrossRelation { i, j, tterm, constterm });
        }
    }
    Ok(out)
}

/// `F_ij` norm for one pair of directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairNorm {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// All curvature residuals of a field at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub at: ParameterPoint,
    /// `F_ti` per direction, at `at.t`.
    pub f_ti_norms: Vec<f64>,
    pub f_ij_norms: Vec<PairNorm>,
    pub cross: Vec<CrossRelation>,
    pub fd_step: f64,
}

/// Evaluate every component. Pair quantities are empty for one-parameter fields.
pub fn curvature_report(
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    h: f64,
    scheme: DerivativeScheme,
) -> Result<CurvatureReport> {
    let n = field.n_directions();
    let f_ti_norms = (0..n)
        .map(|i| f_ti_component(family, p, &field.pair(p, i)?, p.t))
        .collect::<Result<Vec<_>>>()?;
    let mut f_ij_norms = Vec::new();
    let mut cross = Vec::new();
    if n >= 2 {
        for i in 0..n {
            for j in i + 1..n {
                f_ij_norms.push(PairNorm {
                    i,
                    j,
                    value: f_ij_component_with(field, p, i, j, h, scheme)?,
                });
            }
        }
        cross = cross_relation_residuals(field, p, h, scheme)?;
    }
    Ok(CurvatureReport {
        at: p.clone(),
        f_ti_norms,
        f_ij_norms,
        cross,
        fd_step: h,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::generator::{solve_adiabatic_generator, CanonicalField};
    use crate::linalg::{c, from_rows, pauli_z};
    use crate::models::{
        make_pt_dimer_family, make_spin_half_family, make_spin_half_reference_generators, FnFamily, SpinHalfGauge,
    };

    #[test]
    fn f_ti_vanishes_for_canonical_pairs() {
        let fam = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.4]);
        let pair = solve_adiabatic_generator(&fam, &p, 0).unwrap();
        for t in [0.0, 1.0, 5.0] {
            assert!(f_ti_component(&fam, &p, &pair, t).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn f_ti_zero_family_and_detector() {
        let fam = FnFamily::new(
            2,
            vec!["q".into()],
            true,
            |_| pauli_z(),
            |_, _| ComplexMatrix::zeros(2, 2),
        );
        let p = ParameterPoint::at(vec![0.0]);
        let pair = solve_adiabatic_generator(&fam, &p, 0).unwrap();
        assert_eq!(f_ti_component(&fam, &p, &pair, 2.0).unwrap(), 0.0);

        let dimer = make_pt_dimer_family();
        let q = ParameterPoint::at(vec![0.4]);
        let good = solve_adiabatic_generator(&dimer, &q, 0).unwrap();
        let noise = from_rows(2, &[c(0., 0.), c(0.2, 0.1), c(-0.3, 0.), c(0.05, 0.)]);
        let bad = GeneratorPair {
            k0: &good.k0 + &noise,
            ..good
        };
        let h = dimer.evaluate(&q).unwrap();
        let injected = (comm(&noise, &h) * I).norm();
        assert!((f_ti_component(&dimer, &q, &bad, 1.0).unwrap() - injected).abs() < 1e-12);
    }

    #[test]
    fn flat_reference_gauge_has_vanishing_f_theta_phi() {
        let field = make_spin_half_reference_generators(SpinHalfGauge::flat());
        let p = ParameterPoint::at(vec![PI / 3.0, 0.7]);
        let r = f_ij_component(&field, &p, 0, 1, 1e-4).unwrap();
        assert!(r <= 1e-6, "residual {r}");
        let coarse = f_ij_component_with(&field, &p, 0, 1, 1e-2, DerivativeScheme::Central).unwrap();
        let fine = f_ij_component_with(&field, &p, 0, 1, 5e-3, DerivativeScheme::Central).unwrap();
        let ratio = coarse / fine;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn unconstrained_reference_gauge_is_curved() {
        let field = make_spin_half_reference_generators(SpinHalfGauge::zero());
        for th in [0.4, PI / 3.0, 2.5] {
            let p = ParameterPoint::at(vec![th, 0.7]);
            let r = f_ij_component(&field, &p, 0, 1, 1e-4).unwrap();
            // spectral norm sinθ/(2cos²θ); the Frobenius norm is √2 larger
            let expected = th.sin().abs() / (2.0_f64.sqrt() * th.cos().powi(2));
            assert!(
                (r - expected).abs() < 1e-8 * expected.max(1.0),
                "θ = {th}: {r} vs {expected}"
            );
        }
    }

    #[test]
    fn one_parameter_is_inapplicable() {
        let fam = make_pt_dimer_family();
        let field = CanonicalField::new(&fam);
        let p = ParameterPoint::at(vec![0.2]);
        assert!(matches!(
            f_ij_component(&field, &p, 0, 1, 1e-4),
            Err(Error::Inapplicable(_))
        ));
        assert!(matches!(
            cross_relation_residuals(&field, &p, 1e-4, DerivativeScheme::Central),
            Err(Error::Inapplicable(_))
        ));
        let report = curvature_report(&fam, &field, &p, 1e-4, DerivativeScheme::Central).unwrap();
        assert_eq!(report.f_ti_norms.len(), 1);
        assert!(report.f_ij_norms.is_empty());
    }

    #[test]
    fn stencil_outside_domain_is_an_error() {
        let fam = make_spin_half_family(1.0).unwrap();
        let field = CanonicalField::new(&fam);
        let p = ParameterPoint::at(vec![5e-5, 0.3]);
        assert!(matches!(
            f_ij_component(&field, &p, 0, 1, 1e-4),
            Err(Error::OutOfDomain(_))
        ));
        let reference = make_spin_half_reference_generators(SpinHalfGauge::flat());
        let pole = ParameterPoint::at(vec![PI / 2.0 + 1e-4, 0.3]);
        assert!(matches!(
            f_ij_component(&reference, &pole, 0, 1, 1e-4),
            Err(Error::OutOfDomain(_))
        ));
        assert!(f_ij_component(&reference, &pole, 0, 1, 0.0).is_err());
    }

    #[test]
    fn flat_reference_gauge_cross_relations() {
        let field = make_spin_half_reference_generators(SpinHalfGauge::flat());
        let p = ParameterPoint::at(vec![1.1, 2.0]);
        let cr = cross_relation_residuals(&field, &p, 1e-4, DerivativeScheme::Richardson).unwrap();
        assert_eq!(cr.len(), 1);
        assert_eq!(cr[0].tterm, 0.0);
        assert!(cr[0].constterm <= 1e-6);
    }

    #[test]
    fn canonical_spin_half_tterm_vanishes() {
        // eigenvalues ±μB do not depend on (θ, φ), so every K⁽¹⁾ is zero
        let fam = make_spin_half_family(1.0).unwrap();
        let field = CanonicalField::new(&fam);
        let p = ParameterPoint::at(vec![0.9, 0.4]);
        let cr = cross_relation_residuals(&field, &p, 1e-4, DerivativeScheme::Richardson).unwrap();
        assert!(cr[0].tterm <= 1e-10);
    }

    #[test]
    fn canonical_spin_half_is_not_flat() {
        // The canonical gauge has zero Berry connection everywhere, so the
        // diagonal of F_θφ in the eigenbasis is ∓Ω = ±sinθ/2.
        let fam = make_spin_half_family(1.0).unwrap();
        let field = CanonicalField::new(&fam);
        let p = ParameterPoint::at(vec![PI / 3.0, 0.7]);
        let r = f_ij_component(&field, &p, 0, 1, 1e-4).unwrap();
        let th = PI / 3.0;
        assert!((r - th.sin() / 2.0_f64.sqrt()).abs() < 1e-6, "{r}");
        let report = curvature_report(&fam, &field, &p, 1e-4, DerivativeScheme::Richardson).unwrap();
        assert!(report.f_ti_norms.iter().all(|&x| x <= 1e-10));
        assert_eq!(report.f_ij_norms.len(), 1);
        assert!((report.cross[0].constterm - r).abs() < 1e-9);
    }
}
