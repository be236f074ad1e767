//! Emergent-dimension generators `K_i` in the adiabatic gauge.
//!
//! For a time-independent `H(q)` the generator along `q_i` is affine in time,
//! `K_i(t) = t K_i⁽¹⁾ + K_i⁽⁰⁾`, with
//!
//! ```text
//! K⁽¹⁾ = i[K⁽⁰⁾, H] + ∂_i H,      [K⁽¹⁾, H] = 0.
//! ```
//!
//! In the biorthonormal eigenbasis (`D_mn = ⟨χ_m|∂_i H|ψ_n⟩`) the zero modes
//! of `[·, H]` are the matrices that are block diagonal over degenerate
//! clusters, so `K⁽¹⁾` is the block-diagonal part of `D` and the inter-block
//! entries of `K⁽⁰⁾` are `−i D_mn / (h_m − h_n)`. The intra-block part of
//! `K⁽⁰⁾` is the residual gauge freedom; the canonical gauge sets it to zero.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{biorthogonal_eigensystem, check_same_dim, comm, ComplexMatrix, EigenOptions, EigenSystem, I};
use crate::models::{HamiltonianFamily, ParameterPoint, SpinHalfReferenceGenerators};
use crate::ode::rk4;

/// Relative tolerance for "commutes with H" checks on residual gauge shifts.
pub const RESIDUAL_GAUGE_REL: f64 = 1e-10;

/// `(K⁽¹⁾, K⁽⁰⁾)` along one parameter direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorPair {
    pub k1: ComplexMatrix,
    pub k0: ComplexMatrix,
    pub direction: usize,
    pub at: ParameterPoint,
    /// Smallest inter-cluster eigenvalue gap entering the denominators.
    pub min_gap: Option<f64>,
}

/// One generator pair per parameter direction at a common point.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub pairs: Vec<GeneratorPair>,
    pub at: ParameterPoint,
}

impl GeneratorSet {
    /// Largest `‖[K_i⁽¹⁾, K_j⁽¹⁾]‖` over all pairs.
    pub fn k1_commutator_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (a, pa) in self.pairs.iter().enumerate() {
            for pb in &self.pairs[a + 1..] {
                worst = worst.max(comm(&pa.k1, &pb.k1).norm());
            }
        }
        worst
    }
}

/// Canonical `(K⁽¹⁾, K⁽⁰⁾)` for source `∂H` given the eigensystem of `H`.
pub fn canonical_generator(es: &EigenSystem, dh: &ComplexMatrix) -> Result<(ComplexMatrix, ComplexMatrix)> {
    check_same_dim(&es.right, dh)?;
    let n = es.dim();
    let d = es.to_eigenbasis(dh);
    let labels = es.cluster_labels();
    let mut k1 = ComplexMatrix::zeros(n, n);
    let mut k0 = ComplexMatrix::zeros(n, n);
    for m in 0..n {
        for l in 0..n {
            if labels[m] == labels[l] {
                k1[(m, l)] = d[(m, l)];
            } else {
                k0[(m, l)] = -I * d[(m, l)] / (es.eigenvalues[m] - es.eigenvalues[l]);
            }
        }
    }
    Ok((es.from_eigenbasis(&k1), es.from_eigenbasis(&k0)))
}

fn require_time_independent(family: &dyn HamiltonianFamily) -> Result<()> {
    if family.time_independent() {
        Ok(())
    } else {
        Err(Error::Inapplicable(
            "the adiabatic gauge solver needs a time-independent family".into(),
        ))
    }
}

/// Canonical adiabatic-gauge generator along `q_i` at `p`.
pub fn solve_adiabatic_generator(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
) -> Result<GeneratorPair> {
    solve_adiabatic_generator_with(family, p, i, &EigenOptions::default())
}

pub fn solve_adiabatic_generator_with(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    opts: &EigenOptions,
) -> Result<GeneratorPair> {
    require_time_independent(family)?;
    family.check_direction(i)?;
    let h = family.evaluate(p)?;
    let es = biorthogonal_eigensystem(&h, opts)?;
    solve_with_eigensystem(family, &es, p, i)
}

/// Same as [`solve_adiabatic_generator`] but reusing an eigensystem of `H(p)`.
pub fn solve_with_eigensystem(
    family: &dyn HamiltonianFamily,
    es: &EigenSystem,
    p: &ParameterPoint,
    i: usize,
) -> Result<GeneratorPair> {
    let dh = family.partial(p, i)?;
    let (k1, k0) = canonical_generator(es, &dh)?;
    let gap = es.min_gap();
    Ok(GeneratorPair {
        k1,
        k0,
        direction: i,
        at: p.clone(),
        min_gap: gap.is_finite().then_some(gap),
    })
}

/// Canonical pairs for every parameter direction.
pub fn solve_all_generators(family: &dyn HamiltonianFamily, p: &ParameterPoint) -> Result<GeneratorSet> {
    solve_all_generators_with(family, p, &EigenOptions::default())
}

pub fn solve_all_generators_with(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    opts: &EigenOptions,
) -> Result<GeneratorSet> {
    require_time_independent(family)?;
    let h = family.evaluate(p)?;
    let es = biorthogonal_eigensystem(&h, opts)?;
    let pairs = (0..family.n_params())
        .map(|i| solve_with_eigensystem(family, &es, p, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratorSet { pairs, at: p.clone() })
}

/// `K(t) = t K⁽¹⁾ + K⁽⁰⁾`.
pub fn assemble_generator(pair: &GeneratorPair, t: f64) -> ComplexMatrix {
    &pair.k1 * Complex64::from(t) + &pair.k0
}

/// Residuals of the generator equations at a set of times.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorResiduals {
    pub t: Vec<f64>,
    /// `‖∂_t K − i[K, H] − ∂_i H‖` with `∂_t K = K⁽¹⁾`.
    pub k_equation: Vec<f64>,
    /// `‖[∂_t K, H]‖ = ‖[K⁽¹⁾, H]‖`.
    pub gauge_condition: Vec<f64>,
}

pub fn generator_residuals(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    pair: &GeneratorPair,
    t_samples: &[f64],
) -> Result<GeneratorResiduals> {
    require_time_independent(family)?;
    let h = family.evaluate(p)?;
    let dh = family.partial(p, pair.direction)?;
    check_same_dim(&h, &pair.k0)?;
    let gauge = comm(&pair.k1, &h).norm();
    let k_equation = t_samples
        .iter()
        .map(|&t| (&pair.k1 - comm(&assemble_generator(pair, t), &h) * I - &dh).norm())
        .collect();
    Ok(GeneratorResiduals {
        t: t_samples.to_vec(),
        k_equation,
        gauge_condition: vec![gauge; t_samples.len()],
    })
}

/// Integrate `∂_t K = i[K, H(t)] + ∂_i H(t)` from `p.t` to `t_final` (RK4).
pub fn integrate_generator_ode(
    family: &dyn HamiltonianFamily,
    p: &ParameterPoint,
    i: usize,
    k_initial: &ComplexMatrix,
    t_final: f64,
    steps: usize,
) -> Result<ComplexMatrix> {
    family.check_direction(i)?;
    let h0 = family.evaluate(p)?;
    check_same_dim(&h0, k_initial)?;
    let frozen = family.time_independent();
    let dh0 = family.partial(p, i)?;
    rk4(
        |t, k| {
            if frozen {
                Ok(comm(k, &h0) * I + &dh0)
            } else {
                let at = p.with_t(t);
                Ok(comm(k, &family.evaluate(&at)?) * I + family.partial(&at, i)?)
            }
        },
        |_| {},
        p.t,
        k_initial.clone(),
        t_final,
        steps,
    )
}

/// Shift `K⁽⁰⁾` by a residual gauge `ΔK` with `[ΔK, H] = 0`.
///
/// `delta` is given in the original basis; `es` is the eigensystem of `H`.
pub fn apply_residual_gauge(pair: &GeneratorPair, es: &EigenSystem, delta: &ComplexMatrix) -> Result<GeneratorPair> {
    check_same_dim(&pair.k0, delta)?;
    let h = es.reconstruct();
    let residual = comm(delta, &h).norm();
    if residual > RESIDUAL_GAUGE_REL * (delta.norm() * h.norm()).max(1.0) {
        return Err(Error::GaugeViolation { residual });
    }
    Ok(GeneratorPair {
        k0: &pair.k0 + delta,
        ..pair.clone()
    })
}

/// Map an eigenbasis matrix to a residual gauge shift: entries outside the
/// degenerate blocks are dropped, the rest is transformed to the original basis.
pub fn residual_gauge_from_eigenbasis(es: &EigenSystem, blocks: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_dim(&es.right, blocks)?;
    let labels = es.cluster_labels();
    let mut masked = blocks.clone();
    for m in 0..es.dim() {
        for l in 0..es.dim() {
            if labels[m] != labels[l] {
                masked[(m, l)] = Complex64::from(0.0);
            }
        }
    }
    Ok(es.from_eigenbasis(&masked))
}

/// A generator field `q ↦ (K_i⁽¹⁾(q), K_i⁽⁰⁾(q))` over parameter space.
pub trait GeneratorField: Sync {
    fn n_directions(&self) -> usize;

    fn pair(&self, p: &ParameterPoint, i: usize) -> Result<GeneratorPair>;

    /// `K_i(p.t, q)`.
    fn generator(&self, p: &ParameterPoint, i: usize) -> Result<ComplexMatrix> {
        Ok(assemble_generator(&self.pair(p, i)?, p.t))
    }
}

/// The canonical adiabatic-gauge solution of a family, solved point by point.
pub struct CanonicalField<'a> {
    pub family: &'a dyn HamiltonianFamily,
    pub opts: EigenOptions,
}

impl<'a> CanonicalField<'a> {
    pub fn new(family: &'a dyn HamiltonianFamily) -> Self {
        CanonicalField {
            family,
            opts: EigenOptions::default(),
        }
    }

    pub fn with_options(family: &'a dyn HamiltonianFamily, opts: EigenOptions) -> Self {
        CanonicalField { family, opts }
    }
}

impl GeneratorField for CanonicalField<'_> {
    fn n_directions(&self) -> usize {
        self.family.n_params()
    }

    fn pair(&self, p: &ParameterPoint, i: usize) -> Result<GeneratorPair> {
        if !self.family.in_domain(p) {
            return Err(Error::OutOfDomain(format!("{:?} is outside the model domain", p.q)));
        }
        solve_adiabatic_generator_with(self.family, p, i, &self.opts)
    }
}

impl GeneratorField for SpinHalfReferenceGenerators {
    fn n_directions(&self) -> usize {
        2
    }

    fn pair(&self, p: &ParameterPoint, i: usize) -> Result<GeneratorPair> {
        if p.q.len() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: p.q.len(),
            });
        }
        let k0 = self.generator(p.q[0], p.q[1], i)?;
        Ok(GeneratorPair {
            k1: ComplexMatrix::zeros(2, 2),
            k0,
            direction: i,
            at: p.clone(),
            min_gap: None,
        })
    }
}
