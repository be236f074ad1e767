//! Gauge-invariant outputs: Berry connection and curvature, Chern numbers,
//! fidelities, fidelity susceptibility and exceptional-point scans.
//!
//! Dual states are taken from the unit-weight stationary metric when the
//! spectrum is real (`G ψ_n = χ_n`); for complex spectra, where no positive
//! stationary metric exists, the biorthogonal left vectors are used directly.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{assemble_generator, canonical_generator, CanonicalField, GeneratorField, GeneratorPair};
use crate::linalg::{
    biorthogonal_eigensystem, check_same_dim, comm, is_hermitian, ComplexMatrix, ComplexVector, EigenOptions,
    EigenSystem, I,
};
use crate::metric::{default_stationary_metric, MetricOperator};
use crate::models::{HamiltonianFamily, ParameterPoint};

/// Hermiticity tolerance (relative to `‖H‖`) for the Hermitian-only routines.
const HERMITIAN_REL: f64 = 1e-12;

fn eigensystem_at(family: &dyn HamiltonianFamily, p: &ParameterPoint) -> Result<EigenSystem> {
    eigensystem_with(family, p, &EigenOptions::default())
}

fn eigensystem_with(family: &dyn HamiltonianFamily, p: &ParameterPoint, opts: &EigenOptions) -> Result<EigenSystem> {
    biorthogonal_eigensystem(&family.evaluate(p)?, opts)
}

fn check_level(es: &EigenSystem, n: usize) -> Result<()> {
    if n >= es.dim() {
        return Err(Error::InvalidArgument(format!(
            "level {n} out of range for dimension {}",
            es.dim()
        )));
    }
    if es.is_degenerate(n) {
        return Err(Error::DegenerateLevel { level: n });
    }
    Ok(())
}

/// Metric-normalized right vector and its dual row `ψ†G` (or `χ_n†` for a
/// complex spectrum). The pair satisfies `dual · ψ = 1`.
fn dual_pair(es: &EigenSystem, n: usize, at: &ParameterPoint) -> Result<(ComplexVector, ComplexVector)> {
    let psi = es.right_vector(n);
    match default_stationary_metric(es, at.clone()) {
        Ok(g) => {
            let norm = g.norm_sq(&psi).sqrt();
            let psi = psi / Complex64::from(norm);
            let dual = (g.value.adjoint() * &psi).conjugate();
            Ok((psi, dual))
        }
        Err(Error::ComplexSpectrum { .. }) => Ok((psi, es.left_vector(n).conjugate())),
        Err(e) => Err(e),
    }
}

/// `dual · X · ψ`, with the dual row stored as a column.
fn sandwich(dual: &ComplexVector, x: &ComplexMatrix, psi: &ComplexVector) -> Complex64 {
    dual.dot(&(x * psi))
}

/// `⟨ψ_n|K_i⁽⁰⁾|ψ_n⟩` for a Hermitian family, in the gauge of `field`.
///
/// The canonical field gives zero; pass a [`ConventionField`] to obtain the
/// connection of a particular eigenvector convention.
pub fn berry_connection(
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    i: usize,
    n: usize,
) -> Result<f64> {
    let h = family.evaluate(p)?;
    if !is_hermitian(&h, HERMITIAN_REL * h.norm().max(1.0)) {
        return Err(Error::Inapplicable(
            "Berry connection with ⟨ψ| needs a Hermitian family; use berry_connection_generalized".into(),
        ));
    }
    Ok(berry_connection_generalized(family, field, p, i, n)?.re)
}

/// `⟨χ_n|K_i⁽⁰⁾|ψ_n⟩` with biorthonormal dual.
pub fn berry_connection_generalized(
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    i: usize,
    n: usize,
) -> Result<Complex64> {
    let es = eigensystem_at(family, p)?;
    check_level(&es, n)?;
    let pair = field.pair(&p.with_t(0.0), i)?;
    Ok(es.to_eigenbasis(&pair.k0)[(n, n)])
}

/// `i⟨χ_n|[K_i(t), K_j(t)]|ψ_n⟩` from generators given at `p` (time `p.t`).
pub fn berry_curvature_from_generators(
    es: &EigenSystem,
    ki: &ComplexMatrix,
    kj: &ComplexMatrix,
    n: usize,
) -> Result<Complex64> {
    check_level(es, n)?;
    check_same_dim(ki, kj)?;
    Ok(es.to_eigenbasis(&comm(ki, kj))[(n, n)] * I)
}

pub fn berry_curvature_complex(
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    i: usize,
    j: usize,
    n: usize,
) -> Result<Complex64> {
    let es = eigensystem_at(family, p)?;
    berry_curvature_from_generators(&es, &field.generator(p, i)?, &field.generator(p, j)?, n)
}

/// `Ω_ij^n` of the canonical generators, real part.
pub fn berry_curvature(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    j: usize,
    n: usize,
) -> Result<f64> {
    Ok(berry_curvature_with(family, p, i, j, n, &EigenOptions::default())?.re)
}

/// Complex `Ω_ij^n` of the canonical generators under explicit solver options.
pub fn berry_curvature_with(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    j: usize,
    n: usize,
    opts: &EigenOptions,
) -> Result<Complex64> {
    let es = eigensystem_with(family, p, opts)?;
    let field = CanonicalField::with_options(family, *opts);
    berry_curvature_from_generators(&es, &field.generator(p, i)?, &field.generator(p, j)?, n)
}

/// Connection and curvature of one level at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerryRecord {
    pub state_index: usize,
    pub connection: Vec<f64>,
    /// `(i, j, Ω_ij)` for `i < j`.
    pub curvature: Vec<(usize, usize, f64)>,
    pub at: ParameterPoint,
}

pub fn berry_record(
    family: &dyn HamiltonianFamily,
    field: &dyn GeneratorField,
    p: &ParameterPoint,
    n: usize,
) -> Result<BerryRecord> {
    let d = family.n_params();
    let es = eigensystem_at(family, p)?;
    let gens = (0..d).map(|i| field.generator(p, i)).collect::<Result<Vec<_>>>()?;
    let connection = (0..d)
        .map(|i| berry_connection_generalized(family, field, p, i, n).map(|a| a.re))
        .collect::<Result<Vec<_>>>()?;
    let mut curvature = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            curvature.push((i, j, berry_curvature_from_generators(&es, &gens[i], &gens[j], n)?.re));
        }
    }
    Ok(BerryRecord {
        state_index: n,
        connection,
        curvature,
        at: p.clone(),
    })
}

type Convention = dyn Fn(&ParameterPoint) -> Result<ComplexMatrix> + Send + Sync;

/// Canonical generators shifted by the residual gauge that makes parallel
/// transport follow a prescribed eigenvector convention.
///
/// `convention(p)` returns right eigenvectors of `H(p)` as columns, in the
/// eigensystem's level order. The shift is `Σ_n a_n |ψ_n⟩⟨χ_n|` with
/// `a_n = i⟨χ_n|∂_i ψ_n⟩`, differenced with step `fd_step`.
#[derive(Clone)]
pub struct ConventionField<'a> {
    pub family: &'a dyn HamiltonianFamily,
    pub convention: Arc<Convention>,
    pub fd_step: f64,
}

impl<'a> ConventionField<'a> {
    pub fn new(
        family: &'a dyn HamiltonianFamily,
        convention: impl Fn(&ParameterPoint) -> Result<ComplexMatrix> + Send + Sync + 'static,
    ) -> Self {
        ConventionField {
            family,
            convention: Arc::new(convention),
            fd_step: 1e-5,
        }
    }

    fn frame(&self, p: &ParameterPoint) -> Result<(ComplexMatrix, ComplexMatrix)> {
        let v = (self.convention)(p)?;
        let h = self.family.evaluate(p)?;
        check_same_dim(&h, &v)?;
        let inv = v
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("convention eigenvectors are linearly dependent".into()))?;
        let mut lambda = &inv * &h * &v;
        lambda.fill_diagonal(Complex64::from(0.0));
        let off = lambda.norm();
        if off > 1e-8 * h.norm().max(1.0) {
            return Err(Error::InvalidArgument(
                "convention columns are not eigenvectors of H".into(),
            ));
        }
        Ok((v, inv))
    }
}

impl GeneratorField for ConventionField<'_> {
    fn n_directions(&self) -> usize {
        self.family.n_params()
    }

    fn pair(&self, p: &ParameterPoint, i: usize) -> Result<GeneratorPair> {
        let es = eigensystem_at(self.family, p)?;
        let (k1, k0) = canonical_generator(&es, &self.family.partial(p, i)?)?;
        let (v, inv) = self.frame(p)?;
        let up = (self.convention)(&p.shifted(i, self.fd_step))?;
        let dn = (self.convention)(&p.shifted(i, -self.fd_step))?;
        let dv = (up - dn) * Complex64::from(0.5 / self.fd_step);
        let proj = &inv * dv;
        let diag = ComplexVector::from_iterator(v.ncols(), (0..v.ncols()).map(|m| proj[(m, m)] * I));
        let shift = &v * ComplexMatrix::from_diagonal(&diag) * &inv;
        let gap = es.min_gap();
        Ok(GeneratorPair {
            k1,
            k0: k0 + shift,
            direction: i,
            at: p.clone(),
            min_gap: gap.is_finite().then_some(gap),
        })
    }
}

/// Midpoint grid on `θ ∈ (0, π) × φ ∈ (0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
}

impl SphereGrid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let (dt, dp) = self.steps();
        (0..self.n_theta)
            .flat_map(|a| (0..self.n_phi).map(move |b| ((a as f64 + 0.5) * dt, (b as f64 + 0.5) * dp)))
            .collect()
    }

    pub fn steps(&self) -> (f64, f64) {
        (PI / self.n_theta as f64, 2.0 * PI / self.n_phi as f64)
    }
}

/// `(1/2π) Σ Ω_θφ^n Δθ Δφ` over a midpoint grid; parameters 0 and 1 are `(θ, φ)`.
pub fn chern_number(family: &dyn HamiltonianFamily, grid: SphereGrid, n: usize) -> Result<f64> {
    chern_number_with(family, grid, n, &EigenOptions::default())
}

pub fn chern_number_with(
    family: &dyn HamiltonianFamily,
    grid: SphereGrid,
    n: usize,
    opts: &EigenOptions,
) -> Result<f64> {
    if family.n_params() != 2 {
        return Err(Error::Inapplicable("Chern integration needs a (θ, φ) family".into()));
    }
    if grid.n_theta == 0 || grid.n_phi == 0 {
        return Err(Error::InvalidArgument("grid counts must be at least 1".into()));
    }
    let values = grid
        .points()
        .into_par_iter()
        .map(|(th, ph)| berry_curvature_with(family, &ParameterPoint::at(vec![th, ph]), 0, 1, n, opts).map(|z| z.re))
        .collect::<Result<Vec<_>>>()?;
    let (dt, dp) = grid.steps();
    Ok(values.iter().sum::<f64>() * dt * dp / (2.0 * PI))
}

/// `|⟨a|b⟩|² / (‖a‖² ‖b‖²)`.
pub fn fidelity_hermitian(a: &ComplexVector, b: &ComplexVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (a.norm_squared(), b.norm_squared());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("fidelity of a zero vector".into()));
    }
    Ok((a.dotc(b).norm_sqr() / (na * nb)).min(1.0))
}

/// `⟪ψ_n(q)|ψ_n(q+ε)⟫ ⟪ψ_n(q+ε)|ψ_n(q)⟫`, each bracket taken with the metric
/// of its bra's point; `ε` is applied along direction `i`.
pub fn fidelity_generalized(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    eps: f64,
    n: usize,
) -> Result<Complex64> {
    family.check_direction(i)?;
    let q = p.shifted(i, eps);
    let es_a = eigensystem_at(family, p)?;
    let es_b = eigensystem_at(family, &q)?;
    check_level(&es_a, n)?;
    check_level(&es_b, n)?;
    let (psi_a, dual_a) = dual_pair(&es_a, n, p)?;
    let (psi_b, dual_b) = dual_pair(&es_b, n, &q)?;
    Ok(dual_a.dot(&psi_b) * dual_b.dot(&psi_a))
}

/// Susceptibility of one level along one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SusceptibilityRecord {
    pub state_index: usize,
    pub direction: usize,
    pub chi: Complex64,
    pub at: ParameterPoint,
    /// Smallest eigenvalue gap entering the generator.
    pub gap_min: f64,
}

/// `⟪ψ_n|K²|ψ_n⟫ − ⟪ψ_n|K|ψ_n⟫²` for `K = K(t)` of `pair`.
pub fn susceptibility_from_pair(es: &EigenSystem, pair: &GeneratorPair, t: f64, n: usize) -> Result<Complex64> {
    check_level(es, n)?;
    let (psi, dual) = dual_pair(es, n, &pair.at)?;
    let k = assemble_generator(pair, t);
    let mean = sandwich(&dual, &k, &psi);
    Ok(sandwich(&dual, &(&k * &k), &psi) - mean * mean)
}

/// Canonical `χ_n` along `q_i` at `p`.
pub fn fidelity_susceptibility(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    n: usize,
) -> Result<SusceptibilityRecord> {
    fidelity_susceptibility_with(family, p, i, n, &EigenOptions::default())
}

pub fn fidelity_susceptibility_with(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    n: usize,
    opts: &EigenOptions,
) -> Result<SusceptibilityRecord> {
    let es = eigensystem_with(family, p, opts)?;
    let pair = crate::generator::solve_with_eigensystem(family, &es, p, i)?;
    Ok(SusceptibilityRecord {
        state_index: n,
        direction: i,
        chi: susceptibility_from_pair(&es, &pair, p.t, n)?,
        at: p.clone(),
        gap_min: es.min_gap(),
    })
}

/// `(1 − ℱ_G(q, q+ε)) / ε²`.
pub fn susceptibility_fd_oracle(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    n: usize,
    eps: f64,
) -> Result<Complex64> {
    if !(eps != 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ε must be finite and non-zero, got {eps}"
        )));
    }
    let f = fidelity_generalized(family, p, i, eps, n)?;
    Ok((Complex64::from(1.0) - f) / (eps * eps))
}

/// Flagging thresholds for [`ep_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpThresholds {
    pub condition: f64,
    pub chi: f64,
}

impl Default for EpThresholds {
    fn default() -> Self {
        EpThresholds {
            condition: 1e3,
            chi: 1e3,
        }
    }
}

/// Diagnostics at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub q: f64,
    /// Infinite at a non-diagonalizable point.
    pub condition: f64,
    pub gap_min: f64,
    /// Largest `|χ_n|` over levels.
    pub max_abs_chi: f64,
    pub complex_levels: usize,
}

/// One grid cell `[lo, hi]` of an EP scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpCell {
    pub lo: f64,
    pub hi: f64,
    pub gap_min: f64,
    pub max_condition: f64,
    pub max_abs_chi: f64,
    /// The spectrum changes between real and complex across the cell.
    pub reality_change: bool,
    pub flagged: bool,
}

/// Evaluate the EP diagnostics of `family` at `base` with `q_i = q`.
pub fn scan_point(
    family: &dyn HamiltonianFamily,
    base: &ParameterPoint,
    i: usize,
    q: f64,
    opts: &EigenOptions,
) -> Result<ScanPoint> {
    let mut p = base.clone();
    p.q[i] = q;
    let h = family.evaluate(&p)?;
    let es = match biorthogonal_eigensystem(&h, opts) {
        Ok(es) => es,
        Err(Error::NonDiagonalizable { .. }) => {
            return Ok(ScanPoint {
                q,
                condition: f64::INFINITY,
                gap_min: 0.0,
                max_abs_chi: f64::INFINITY,
                complex_levels: usize::MAX,
            })
        }
        Err(e) => return Err(e),
    };
    let scale = h.norm().max(1.0);
    let mut max_abs_chi = 0.0_f64;
    if es.clusters().len() == es.dim() {
        let pair = crate::generator::solve_with_eigensystem(family, &es, &p, i)?;
        for n in 0..es.dim() {
            max_abs_chi = max_abs_chi.max(susceptibility_from_pair(&es, &pair, 0.0, n)?.norm());
        }
    }
    Ok(ScanPoint {
        q,
        condition: es.condition_number,
        gap_min: es.min_gap(),
        max_abs_chi,
        complex_levels: es.eigenvalues.iter().filter(|z| z.im.abs() > 1e-8 * scale).count(),
    })
}

/// Scan a 1-D grid in `q_i` (other coordinates from `base`). Every cell is
/// reported; `flagged` marks cells whose endpoints exceed a threshold, fail to
/// diagonalize, or straddle a real-to-complex transition.
pub fn ep_scan(
    family: &dyn HamiltonianFamily,
    base: &ParameterPoint,
    i: usize,
    grid: &[f64],
    thresholds: &EpThresholds,
) -> Result<Vec<EpCell>> {
    ep_scan_with(family, base, i, grid, thresholds, &EigenOptions::default())
}

pub fn ep_scan_with(
    family: &dyn HamiltonianFamily,
    base: &ParameterPoint,
    i: usize,
    grid: &[f64],
    thresholds: &EpThresholds,
    opts: &EigenOptions,
) -> Result<Vec<EpCell>> {
    family.check_direction(i)?;
    family.check_point(base)?;
    let points = grid
        .par_iter()
        .map(|&q| scan_point(family, base, i, q, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(scan_cells(&points, thresholds))
}

/// Group consecutive scan points into flagged cells.
pub fn scan_cells(points: &[ScanPoint], thresholds: &EpThresholds) -> Vec<EpCell> {
    let hot = |s: &ScanPoint| s.condition > thresholds.condition || s.max_abs_chi > thresholds.chi;
    points
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let reality_change = a.complex_levels != b.complex_levels;
            EpCell {
                lo: a.q,
                hi: b.q,
                gap_min: a.gap_min.min(b.gap_min),
                max_condition: a.condition.max(b.condition),
                max_abs_chi: a.max_abs_chi.max(b.max_abs_chi),
                reality_change,
                flagged: reality_change || hot(a) || hot(b),
            }
        })
        .collect()
}

/// `[lo, hi]` of every flagged cell.
pub fn flagged_intervals(cells: &[EpCell]) -> Vec<(f64, f64)> {
    cells.iter().filter(|c| c.flagged).map(|c| (c.lo, c.hi)).collect()
}

/// `ψ_−`, `ψ_+` of the spin-½ family in the polar gauge,
/// `ψ_− = (sin(θ/2) e^{−iφ}, −cos(θ/2))`, `ψ_+ = (cos(θ/2) e^{−iφ}, sin(θ/2))`,
/// as columns ordered by energy for field strength of sign `sign_mu_b`.
pub fn spin_half_polar_eigenvectors(theta: f64, phi: f64, sign_mu_b: f64) -> ComplexMatrix {
    let (s, c) = ((0.5 * theta).sin(), (0.5 * theta).cos());
    let e = Complex64::from_polar(1.0, -phi);
    let minus = [e * s, Complex64::from(-c)];
    let plus = [e * c, Complex64::from(s)];
    let (lo, hi) = if sign_mu_b >= 0.0 { (minus, plus) } else { (plus, minus) };
    ComplexMatrix::from_column_slice(2, 2, &[lo[0], lo[1], hi[0], hi[1]])
}

/// Metric used for dual states at `p`, when the spectrum is real.
pub fn dual_metric(family: &dyn HamiltonianFamily, p: &ParameterPoint) -> Result<MetricOperator> {
    default_stationary_metric(&eigensystem_at(family, p)?, p.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{apply_residual_gauge, residual_gauge_from_eigenbasis, solve_with_eigensystem};
    use crate::linalg::c;
    use crate::models::{make_pt_dimer_family, make_spin_half_family, transverse_field_family, FnFamily};
    use rand::{Rng, SeedableRng};

    fn closed_form_chi(g: f64) -> f64 {
        -1.0 / (4.0 * (1.0 - g * g).powi(2))
    }

    fn polar_field(fam: &dyn HamiltonianFamily) -> ConventionField<'_> {
        ConventionField::new(fam, |p| Ok(spin_half_polar_eigenvectors(p.q[0], p.q[1], 1.0)))
    }

    #[test]
    fn polar_convention_connection() {
        let fam = make_spin_half_family(1.0).unwrap();
        let field = polar_field(&fam);
        for (th, ph) in [(0.4, 0.0), (1.2, 2.0), (2.6, 5.0)] {
            let p = ParameterPoint::at(vec![th, ph]);
            let a_phi = berry_connection(&fam, &field, &p, 1, 0).unwrap();
            assert!((a_phi - (0.5 * th).sin().powi(2)).abs() < 1e-8, "{a_phi}");
            let a_phi_up = berry_connection(&fam, &field, &p, 1, 1).unwrap();
            assert!((a_phi_up - (0.5 * th).cos().powi(2)).abs() < 1e-8);
            for n in 0..2 {
                assert!(berry_connection(&fam, &field, &p, 0, n).unwrap().abs() < 1e-8);
                assert!(
                    berry_connection(&fam, &CanonicalField::new(&fam), &p, 1, n)
                        .unwrap()
                        .abs()
                        < 1e-14
                );
            }
        }
    }

    #[test]
    fn connection_of_constant_family_is_zero() {
        let fam = FnFamily::new(
            2,
            vec!["q".into()],
            true,
            |_| crate::linalg::pauli_z(),
            |_, _| ComplexMatrix::zeros(2, 2),
        );
        let p = ParameterPoint::at(vec![0.5]);
        assert_eq!(
            berry_connection(&fam, &CanonicalField::new(&fam), &p, 0, 0).unwrap(),
            0.0
        );
        let dimer = make_pt_dimer_family();
        assert!(matches!(
            berry_connection(
                &dimer,
                &CanonicalField::new(&dimer),
                &ParameterPoint::at(vec![0.3]),
                0,
                0
            ),
            Err(Error::Inapplicable(_))
        ));
    }

    #[test]
    fn spin_half_curvature() {
        let fam = make_spin_half_family(0.7).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let th = rng.gen_range(0.1..PI - 0.1);
            let ph = rng.gen_range(0.0..2.0 * PI);
            let p = ParameterPoint::at(vec![th, ph]);
            let lower = berry_curvature(&fam, &p, 0, 1, 0).unwrap();
            let upper = berry_curvature(&fam, &p, 0, 1, 1).unwrap();
            assert!((lower - th.sin() / 2.0).abs() < 1e-10);
            assert!((upper + th.sin() / 2.0).abs() < 1e-10);
            assert!(
                berry_curvature_complex(&fam, &CanonicalField::new(&fam), &p, 0, 1, 0)
                    .unwrap()
                    .im
                    .abs()
                    < 1e-12
            );
        }
        let tiny = berry_curvature(&fam, &ParameterPoint::at(vec![1e-9, 0.3]), 0, 1, 0).unwrap();
        assert!(tiny.abs() < 1e-8);
    }

    #[test]
    fn curvature_is_the_same_in_the_convention_gauge() {
        let fam = make_spin_half_family(1.0).unwrap();
        let field = polar_field(&fam);
        let p = ParameterPoint::new(2.0, vec![1.0, 0.5]);
        let a = berry_curvature_complex(&fam, &field, &p, 0, 1, 0).unwrap();
        assert!((a.re - 1f64.sin() / 2.0).abs() < 1e-10);
        let rec = berry_record(&fam, &field, &p, 0).unwrap();
        assert_eq!(rec.curvature.len(), 1);
        assert!((rec.connection[1] - 0.5f64.sin().powi(2)).abs() < 1e-8);
    }

    #[test]
    fn chern_numbers() {
        let fam = make_spin_half_family(1.0).unwrap();
        let grid = SphereGrid { n_theta: 20, n_phi: 40 };
        let lower = chern_number(&fam, grid, 0).unwrap();
        let upper = chern_number(&fam, grid, 1).unwrap();
        // midpoint rule on ∫ sinθ/2: (π/2N) / sin(π/2N)
        let n = 20.0;
        let predicted = (PI / (2.0 * n)) / (PI / (2.0 * n)).sin();
        assert!((lower - predicted).abs() < 1e-12, "{lower}");
        assert!((upper + predicted).abs() < 1e-12);
        assert!((lower + upper).abs() < 1e-12);
        let fine = chern_number(&fam, SphereGrid { n_theta: 40, n_phi: 80 }, 0).unwrap();
        assert!((fine - lower).abs() < 1e-3);
        assert!(chern_number(&make_pt_dimer_family(), grid, 0).is_err());
    }

    #[test]
    fn hermitian_fidelity() {
        let a = ComplexVector::from_vec(vec![c(0.6, 0.), c(0., 0.8)]);
        let b = ComplexVector::from_vec(vec![c(0., 0.8), c(0.6, 0.)]);
        assert!((fidelity_hermitian(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity_hermitian(&a, &b).unwrap() < 1e-15);
        let psi = |th: f64| spin_half_polar_eigenvectors(th, 0.4, 1.0).column(0).into_owned();
        let eps = 1e-3;
        let f = fidelity_hermitian(&psi(1.0), &psi(1.0 + eps)).unwrap();
        assert!((f - (1.0 - eps * eps / 4.0)).abs() < 1e-9);
    }

    #[test]
    fn generalized_fidelity() {
        let dimer = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.3]);
        assert!((fidelity_generalized(&dimer, &p, 0, 0.0, 0).unwrap() - 1.0).norm() < 1e-14);
        let eps = 1e-3;
        let f = fidelity_generalized(&dimer, &p, 0, eps, 0).unwrap();
        let expected = 1.0 - eps * eps * closed_form_chi(0.3);
        assert!((f.re - expected).abs() / expected < 1e-4 && f.im.abs() < 1e-10);

        let spin = make_spin_half_family(1.0).unwrap();
        let sp = ParameterPoint::at(vec![0.8, 0.1]);
        let fg = fidelity_generalized(&spin, &sp, 0, 0.01, 0).unwrap();
        let es0 = eigensystem_at(&spin, &sp).unwrap();
        let es1 = eigensystem_at(&spin, &sp.shifted(0, 0.01)).unwrap();
        let fh = fidelity_hermitian(&es0.right_vector(0), &es1.right_vector(0)).unwrap();
        assert!((fg.re - fh).abs() < 1e-14 && fg.im.abs() < 1e-14);
    }

    #[test]
    fn susceptibility_values() {
        let dimer = make_pt_dimer_family();
        for (g, expected) in [(0.0, -0.25), (0.5, -4.0 / 9.0)] {
            for n in 0..2 {
                let rec = fidelity_susceptibility(&dimer, &ParameterPoint::at(vec![g]), 0, n).unwrap();
                assert!(
                    (rec.chi.re - expected).abs() < 1e-12 && rec.chi.im.abs() < 1e-12,
                    "{:?}",
                    rec.chi
                );
            }
        }
        let tf = transverse_field_family();
        let rec = fidelity_susceptibility(&tf, &ParameterPoint::at(vec![0.0]), 0, 0).unwrap();
        assert!((rec.chi.re - 0.25).abs() < 1e-14);
        assert!((rec.gap_min - 2.0).abs() < 1e-14);
    }

    #[test]
    fn complex_spectrum_uses_biorthogonal_duals() {
        let dimer = make_pt_dimer_family();
        let g = 1.5;
        let rec = fidelity_susceptibility(&dimer, &ParameterPoint::at(vec![g]), 0, 0).unwrap();
        assert!((rec.chi - c(closed_form_chi(g), 0.)).norm() < 1e-10, "{:?}", rec.chi);
    }

    #[test]
    fn perturbation_theory_oracle() {
        // χ_n = Σ_{m≠n} |⟨m|∂H|n⟩|² / (E_n − E_m)² for Hermitian H(q) = σ_z + q σ_x
        let tf = transverse_field_family();
        for q in [-0.7, 0.0, 0.4, 1.3] {
            let p = ParameterPoint::at(vec![q]);
            let es = eigensystem_at(&tf, &p).unwrap();
            let dh = tf.partial(&p, 0).unwrap();
            for n in 0..2 {
                let m = 1 - n;
                let num = (es.right_vector(m).adjoint() * &dh * es.right_vector(n))[(0, 0)].norm_sqr();
                let oracle = num / (es.eigenvalues[n] - es.eigenvalues[m]).norm_sqr();
                let chi = fidelity_susceptibility(&tf, &p, 0, n).unwrap().chi;
                assert!(chi.re >= 0.0 && (chi.re - oracle).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn residual_gauge_and_time_invariance() {
        let dimer = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.45]);
        let es = eigensystem_at(&dimer, &p).unwrap();
        let pair = solve_with_eigensystem(&dimer, &es, &p, 0).unwrap();
        let base = susceptibility_from_pair(&es, &pair, 0.0, 0).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let d = ComplexMatrix::from_fn(2, 2, |_, _| c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
            let delta = residual_gauge_from_eigenbasis(&es, &d).unwrap();
            let moved = apply_residual_gauge(&pair, &es, &delta).unwrap();
            for t in [0.0, 3.0, 17.0] {
                let chi = susceptibility_from_pair(&es, &moved, t, 0).unwrap();
                assert!((chi - base).norm() <= 1e-10 * base.norm());
            }
        }
    }

    #[test]
    fn fd_oracle() {
        let dimer = make_pt_dimer_family();
        let p = ParameterPoint::at(vec![0.3]);
        let chi = closed_form_chi(0.3);
        let o = susceptibility_fd_oracle(&dimer, &p, 0, 0, 1e-4).unwrap();
        assert!(((o.re - chi) / chi).abs() < 1e-3);
        let tf = transverse_field_family();
        let o = susceptibility_fd_oracle(&tf, &ParameterPoint::at(vec![0.0]), 0, 0, 1e-4).unwrap();
        assert!((o.re - 0.25).abs() < 1e-4);
        assert!(susceptibility_fd_oracle(&tf, &ParameterPoint::at(vec![0.0]), 0, 0, 0.0).is_err());
    }

    #[test]
    fn ep_scan_dimer() {
        let dimer = make_pt_dimer_family();
        let grid: Vec<f64> = (0..=48).map(|k| -1.2 + 0.05 * k as f64).collect();
        let cells = ep_scan(
            &dimer,
            &ParameterPoint::at(vec![0.0]),
            0,
            &grid,
            &EpThresholds::default(),
        )
        .unwrap();
        assert_eq!(cells.len(), 48);
        let flagged = flagged_intervals(&cells);
        for ep in [-1.0, 1.0] {
            assert!(
                flagged.iter().any(|&(lo, hi)| lo <= ep + 1e-9 && ep - 1e-9 <= hi),
                "{ep} not flagged"
            );
        }
        assert!(flagged.iter().all(|&(lo, hi)| (lo - 1.0).abs() < 0.06
            || (hi + 1.0).abs() < 0.06
            || (hi - 1.0).abs() < 0.06
            || (lo + 1.0).abs() < 0.06));
        let far = cells.iter().find(|c| c.lo.abs() < 0.01).unwrap();
        assert!(!far.flagged && far.gap_min > 1.9);
    }

    #[test]
    fn ep_scan_hermitian_and_empty() {
        let tf = transverse_field_family();
        let grid: Vec<f64> = (0..=40).map(|k| -1.0 + 0.05 * k as f64).collect();
        let cells = ep_scan(&tf, &ParameterPoint::at(vec![0.0]), 0, &grid, &EpThresholds::default()).unwrap();
        assert!(flagged_intervals(&cells).is_empty());
        assert!(cells
            .iter()
            .all(|c| c.gap_min >= 2.0 - 1e-12 && c.max_abs_chi <= 0.25 + 1e-12));
        assert!(
            ep_scan(&tf, &ParameterPoint::at(vec![0.0]), 0, &[], &EpThresholds::default())
                .unwrap()
                .is_empty()
        );
    }
}
