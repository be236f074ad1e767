//! Dense complex matrix primitives.
//!
//! Everything here works on small dense `DMatrix<Complex64>` values. The
//! eigensolver returns a *biorthonormal* system: right eigenvectors `ψ_n`
//! (columns of `right`) and left eigenvectors `χ_n` (columns of `left`) with
//! `χ_m† ψ_n = δ_mn`. Left vectors come from the inverse of the right
//! eigenvector matrix, so biorthonormality holds to machine precision.
//!
//! Non-diagonalizable input (an exceptional point) is reported as
//! [`Error::NonDiagonalizable`], either because the Schur form exposes a
//! Jordan coupling inside a degenerate cluster or because the eigenvector
//! matrix is too ill-conditioned.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default EP threshold on the eigenvector condition number.
pub const DEFAULT_EP_THRESHOLD: f64 = 1e8;
/// Default degeneracy clustering tolerance, relative to `‖H‖`.
pub const DEFAULT_DEGENERACY_REL: f64 = 1e-9;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Build a matrix from row-major complex entries.
pub fn from_rows(dim: usize, entries: &[Complex64]) -> ComplexMatrix {
    assert_eq!(entries.len(), dim * dim, "need dim*dim entries");
    ComplexMatrix::from_row_slice(dim, dim, entries)
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> ComplexMatrix {
    ComplexMatrix::zeros(dim, dim)
}

pub fn pauli_x() -> ComplexMatrix {
    from_rows(2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> ComplexMatrix {
    from_rows(2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> ComplexMatrix {
    from_rows(2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

/// Check that `m` is square with finite entries; returns its dimension.
pub fn check_square(m: &ComplexMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(m.nrows())
}

pub fn check_same_dim(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<usize> {
    let n = check_square(a)?;
    let m = check_square(b)?;
    if n != m {
        return Err(Error::DimensionMismatch { expected: n, found: m });
    }
    Ok(n)
}

/// `AB − BA`.
pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same_dim(a, b)?;
    Ok(a * b - b * a)
}

/// Unchecked commutator for internal use on matrices already validated.
#[inline]
pub(crate) fn comm(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a * b - b * a
}

/// Frobenius norm.
#[inline]
pub fn norm(m: &ComplexMatrix) -> f64 {
    m.norm()
}

pub fn hermiticity_deviation(m: &ComplexMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

pub fn is_hermitian(m: &ComplexMatrix, tol: f64) -> bool {
    hermiticity_deviation(m) <= tol
}

/// 2-norm condition number `σ_max / σ_min`; infinite for singular input.
pub fn condition_number(m: &ComplexMatrix) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Options controlling the eigensolver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Eigenvalues closer than `degeneracy_rel * max(‖H‖, 1)` form one cluster.
    pub degeneracy_rel: f64,
    /// Condition number of the right-eigenvector matrix above which the input
    /// is treated as an exceptional point.
    pub ep_threshold: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            degeneracy_rel: DEFAULT_DEGENERACY_REL,
            ep_threshold: DEFAULT_EP_THRESHOLD,
        }
    }
}

/// Biorthonormal eigen-decomposition of a diagonalizable matrix.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<Complex64>,
    /// Right eigenvectors `ψ_n` as columns.
    pub right: ComplexMatrix,
    /// Left eigenvectors `χ_n` as columns, `left.adjoint() * right = 1`.
    pub left: ComplexMatrix,
    /// Condition number of `right`.
    pub condition_number: f64,
    /// Absolute clustering tolerance used for this system.
    pub degeneracy_tol: f64,
    /// Whether the Hermitian solver path was taken.
    pub hermitian: bool,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn right_vector(&self, n: usize) -> ComplexVector {
        self.right.column(n).into_owned()
    }

    pub fn left_vector(&self, n: usize) -> ComplexVector {
        self.left.column(n).into_owned()
    }

    /// `Σ_n h_n |ψ_n⟩⟨χ_n|`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(self.eigenvalues.clone()));
        &self.right * d * self.left.adjoint()
    }

    /// Express `m` in the eigenbasis: entry `(a, b)` is `⟨χ_a|m|ψ_b⟩`.
    pub fn to_eigenbasis(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self.left.adjoint() * m * &self.right
    }

    /// Inverse of [`EigenSystem::to_eigenbasis`].
    pub fn from_eigenbasis(&self, m: &ComplexMatrix) -> ComplexMatrix {
        &self.right * m * self.left.adjoint()
    }

    /// Degenerate clusters as sorted index lists (transitive closure of
    /// `|h_m − h_n| < degeneracy_tol`).
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        cluster_indices(&self.eigenvalues, self.degeneracy_tol)
    }

    /// Cluster id for each level.
    pub fn cluster_labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.dim()];
        for (id, members) in self.clusters().iter().enumerate() {
            for &m in members {
                labels[m] = id;
            }
        }
        labels
    }

    pub fn is_degenerate(&self, n: usize) -> bool {
        self.clusters().iter().any(|cl| cl.len() > 1 && cl.contains(&n))
    }

    /// Smallest separation between eigenvalues in different clusters.
    pub fn min_gap(&self) -> f64 {
        let labels = self.cluster_labels();
        let mut gap = f64::INFINITY;
        for m in 0..self.dim() {
            for n in 0..self.dim() {
                if labels[m] != labels[n] {
                    gap = gap.min((self.eigenvalues[m] - self.eigenvalues[n]).norm());
                }
            }
        }
        gap
    }

    pub fn max_imag(&self) -> f64 {
        self.eigenvalues.iter().map(|h| h.im.abs()).fold(0.0, f64::max)
    }

    /// Rephase each right vector so its overlap with the matching vector of
    /// `reference` is real and non-negative; left vectors get the inverse phase.
    ///
    /// Removes phase jumps between nearby points before finite differencing.
    pub fn align_phases(&mut self, reference: &EigenSystem) -> Result<()> {
        check_same_dim(&self.right, &reference.right)?;
        for n in 0..self.dim() {
            let overlap = reference.right.column(n).dotc(&self.right.column(n));
            if overlap.norm() == 0.0 {
                continue;
            }
            let phase = overlap.conj() / overlap.norm();
            for r in 0..self.dim() {
                self.right[(r, n)] *= phase;
                self.left[(r, n)] *= phase;
            }
        }
        Ok(())
    }
}

fn cluster_indices(values: &[Complex64], tol: f64) -> Vec<Vec<usize>> {
    let n = values.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for a in 0..n {
        for b in a + 1..n {
            if (values[a] - values[b]).norm() < tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_of_group: Vec<usize> = Vec::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_of_group.iter().position(|&x| x == r) {
            Some(g) => groups[g].push(i),
            None => {
                root_of_group.push(r);
                groups.push(vec![i]);
            }
        }
    }
    groups
}

/// Order eigenvalues by real part, breaking near-ties (within `tol`) by
/// imaginary part.
fn eigen_order(values: &[Complex64], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].re.total_cmp(&values[b].re));
    let mut out = Vec::with_capacity(idx.len());
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]].re - values[idx[end - 1]].re <= tol {
            end += 1;
        }
        let mut run = idx[start..end].to_vec();
        run.sort_by(|&a, &b| values[a].im.total_cmp(&values[b].im));
        out.extend(run);
        start = end;
    }
    out
}

/// Scale a vector to unit norm with its first (near-)largest amplitude real
/// positive.
pub(crate) fn normalize_phase(v: &mut ComplexVector) {
    let nrm = v.norm();
    if nrm == 0.0 {
        return;
    }
    *v /= Complex64::from(nrm);
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(pivot) = v.iter().find(|z| z.norm() >= max * (1.0 - 1e-8)) {
        let phase = pivot.conj() / pivot.norm();
        *v *= phase;
    }
}

/// Biorthonormal eigensystem of `h`, eigenvalues sorted by (Re, Im).
pub fn biorthogonal_eigensystem(h: &ComplexMatrix, opts: &EigenOptions) -> Result<EigenSystem> {
    let n = check_square(h)?;
    let scale = norm(h).max(1.0);
    let degeneracy_tol = opts.degeneracy_rel * scale;

    let herm_dev = hermiticity_deviation(h);
    let (values, mut right, hermitian) = if herm_dev <= 64.0 * f64::EPSILON * scale {
        let sym = (h + h.adjoint()) * Complex64::from(0.5);
        let eig = SymmetricEigen::new(sym);
        let values: Vec<Complex64> = eig.eigenvalues.iter().map(|&x| Complex64::from(x)).collect();
        (values, eig.eigenvectors, true)
    } else {
        let (values, vecs) = schur_eigenvectors(h, degeneracy_tol)?;
        (values, vecs, false)
    };

    let order = eigen_order(&values, degeneracy_tol);
    let eigenvalues: Vec<Complex64> = order.iter().map(|&k| values[k]).collect();
    let mut sorted = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = right.column(src).into_owned();
        normalize_phase(&mut col);
        sorted.set_column(dst, &col);
    }
    right = sorted;

    let condition = condition_number(&right);
    if condition.is_nan() || condition > opts.ep_threshold {
        return Err(Error::NonDiagonalizable { condition });
    }
    let inv = right.clone().try_inverse().ok_or(Error::NonDiagonalizable {
        condition: f64::INFINITY,
    })?;
    let left = inv.adjoint();

    Ok(EigenSystem {
        eigenvalues,
        right,
        left,
        condition_number: condition,
        degeneracy_tol,
        hermitian,
    })
}

/// Eigenvalues and right eigenvectors from the complex Schur form
/// `H = Q T Q†` by back substitution on `T`.
fn schur_eigenvectors(h: &ComplexMatrix, degeneracy_tol: f64) -> Result<(Vec<Complex64>, ComplexMatrix)> {
    let n = h.nrows();
    let schur = Schur::try_new(h.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|k| t[(k, k)]).collect();
    let t_scale = norm(&t).max(f64::MIN_POSITIVE);

    let mut vecs = ComplexMatrix::zeros(n, n);
    for k in 0..n {
        let mut x = ComplexVector::zeros(n);
        x[k] = Complex64::from(1.0);
        for j in (0..k).rev() {
            let mut s = Complex64::from(0.0);
            for l in j + 1..=k {
                s += t[(j, l)] * x[l];
            }
            let d = t[(j, j)] - t[(k, k)];
            if d.norm() < degeneracy_tol {
                let xmax = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
                // Inside a degenerate cluster a non-vanishing coupling is a Jordan block.
                if s.norm() > 1e-8 * t_scale * xmax {
                    return Err(Error::NonDiagonalizable {
                        condition: f64::INFINITY,
                    });
                }
                x[j] = Complex64::from(0.0);
            } else {
                x[j] = -s / d;
            }
        }
        vecs.set_column(k, &(&q * x));
    }
    Ok((values, vecs))
}

/// Result of [`positive_definiteness_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityReport {
    pub positive_definite: bool,
    pub min_eigenvalue: f64,
    pub hermiticity_deviation: f64,
}

/// True iff `‖G − G†‖ ≤ tol` and every eigenvalue of `(G + G†)/2` exceeds `tol`.
pub fn positive_definiteness_check(g: &ComplexMatrix, tol: f64) -> Result<PositivityReport> {
    check_square(g)?;
    let dev = hermiticity_deviation(g);
    let sym = (g + g.adjoint()) * Complex64::from(0.5);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PositivityReport {
        positive_definite: dev <= tol && min > tol,
        min_eigenvalue: min,
        hermiticity_deviation: dev,
    })
}

/// How [`matrix_exponential_propagator`] evaluates `exp(−iHt)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PropagatorMethod {
    /// Eigen-decomposition; fails at exceptional points.
    Eigen,
    /// Scaling and squaring of a truncated Taylor series; always defined.
    Series,
    /// Eigen-decomposition when available, series otherwise.
    #[default]
    Auto,
}

/// `exp(−iHt)`.
pub fn matrix_exponential_propagator(
    h: &ComplexMatrix,
    t: f64,
    method: PropagatorMethod,
    opts: &EigenOptions,
) -> Result<ComplexMatrix> {
    let n = check_square(h)?;
    if t == 0.0 {
        return Ok(identity(n));
    }
    match method {
        PropagatorMethod::Eigen => eigen_propagator(h, t, opts),
        PropagatorMethod::Series => Ok(expm(&(h * Complex64::new(0.0, -t)))),
        PropagatorMethod::Auto => match eigen_propagator(h, t, opts) {
            Ok(u) => Ok(u),
            Err(Error::NonDiagonalizable { .. }) => Ok(expm(&(h * Complex64::new(0.0, -t)))),
            Err(e) => Err(e),
        },
    }
}

fn eigen_propagator(h: &ComplexMatrix, t: f64, opts: &EigenOptions) -> Result<ComplexMatrix> {
    let es = biorthogonal_eigensystem(h, opts)?;
    let phases: Vec<Complex64> = es
        .eigenvalues
        .iter()
        .map(|&e| (Complex64::new(0.0, -t) * e).exp())
        .collect();
    Ok(es.from_eigenbasis(&ComplexMatrix::from_diagonal(&ComplexVector::from_vec(phases))))
}

/// Matrix exponential by scaling and squaring with a Taylor kernel.
pub fn expm(a: &ComplexMatrix) -> ComplexMatrix {
    let n = a.nrows();
    let nrm = a.norm();
    let mut squarings = 0u32;
    if nrm > 0.5 {
        squarings = (nrm / 0.5).log2().ceil() as u32;
    }
    let scaled = a * Complex64::from(0.5_f64.powi(squarings as i32));
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=30 {
        term = &term * &scaled * Complex64::from(1.0 / k as f64);
        result += &term;
        if term.norm() <= f64::EPSILON * result.norm() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pt_dimer(g: f64) -> ComplexMatrix {
        from_rows(2, &[c(0., g), c(1., 0.), c(1., 0.), c(0., -g)])
    }

    #[test]
    fn commutator_pauli_identities() {
        let x = pauli_x();
        assert_eq!(commutator(&x, &x).unwrap(), zeros(2));
        let xy = commutator(&x, &pauli_y()).unwrap();
        assert!((xy - pauli_z() * c(0., 2.)).norm() < 1e-15);
        // K0 at γ = 0 against σ_x, multiplied out by hand: −σ_z
        let k0 = from_rows(2, &[c(0., 0.), c(-0.5, 0.), c(0.5, 0.), c(0., 0.)]);
        let r = commutator(&k0, &x).unwrap();
        assert!((r + pauli_z()).norm() < 1e-15);
    }

    #[test]
    fn commutator_dimension_mismatch() {
        let err = commutator(&identity(2), &identity(3)).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 3 });
    }

    #[test]
    fn eigensystem_of_sigma_z() {
        let es = biorthogonal_eigensystem(&pauli_z(), &EigenOptions::default()).unwrap();
        assert_eq!(es.eigenvalues, vec![c(-1., 0.), c(1., 0.)]);
        assert!((es.right_vector(0) - ComplexVector::from_vec(vec![c(0., 0.), c(1., 0.)])).norm() < 1e-15);
        assert!((es.right_vector(1) - ComplexVector::from_vec(vec![c(1., 0.), c(0., 0.)])).norm() < 1e-15);
        assert!(es.hermitian);
    }

    #[test]
    fn eigensystem_of_pt_dimer_half() {
        let h = pt_dimer(0.5);
        let es = biorthogonal_eigensystem(&h, &EigenOptions::default()).unwrap();
        let e = 0.75_f64.sqrt();
        assert!((es.eigenvalues[0] - c(-e, 0.)).norm() < 1e-14);
        assert!((es.eigenvalues[1] - c(e, 0.)).norm() < 1e-14);
        assert!((es.left.adjoint() * &es.right - identity(2)).norm() < 1e-14);
        assert!((es.reconstruct() - &h).norm() < 1e-14);
        assert!(!es.hermitian);
    }

    #[test]
    fn jordan_block_is_rejected() {
        let j = from_rows(2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        let err = biorthogonal_eigensystem(&j, &EigenOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonDiagonalizable { .. }));
    }

    #[test]
    fn pt_dimer_at_ep_is_rejected() {
        for g in [1.0, -1.0] {
            let err = biorthogonal_eigensystem(&pt_dimer(g), &EigenOptions::default()).unwrap_err();
            assert!(matches!(err, Error::NonDiagonalizable { .. }), "γ = {g}: {err:?}");
        }
    }

    #[test]
    fn degenerate_diagonalizable_matrix() {
        // diag(2, 2, −1) in a non-unitary basis
        let s = from_rows(
            3,
            &[
                c(1., 0.),
                c(2., 0.),
                c(0., 1.),
                c(0., 0.),
                c(1., 0.),
                c(1., 0.),
                c(1., 0.),
                c(0., 0.),
                c(3., 0.),
            ],
        );
        let d = ComplexMatrix::from_diagonal(&ComplexVector::from_vec(vec![c(2., 0.), c(2., 0.), c(-1., 0.)]));
        let h = &s * d * s.clone().try_inverse().unwrap();
        let es = biorthogonal_eigensystem(&h, &EigenOptions::default()).unwrap();
        assert_eq!(es.clusters(), vec![vec![0], vec![1, 2]]);
        assert!((es.reconstruct() - &h).norm() < 1e-12);
        assert!((es.left.adjoint() * &es.right - identity(3)).norm() < 1e-12);
        assert!(es.is_degenerate(2) && !es.is_degenerate(0));
    }

    #[test]
    fn ordering_breaks_real_ties_by_imaginary_part() {
        // γ = 1.5: eigenvalues ±i√1.25
        let es = biorthogonal_eigensystem(&pt_dimer(1.5), &EigenOptions::default()).unwrap();
        let e = 1.25_f64.sqrt();
        assert!((es.eigenvalues[0] - c(0., -e)).norm() < 1e-13);
        assert!((es.eigenvalues[1] - c(0., e)).norm() < 1e-13);
    }

    #[test]
    fn propagator_special_cases() {
        let opts = EigenOptions::default();
        let u0 = matrix_exponential_propagator(&pt_dimer(0.3), 0.0, PropagatorMethod::Eigen, &opts).unwrap();
        assert_eq!(u0, identity(2));
        let u = matrix_exponential_propagator(&pauli_z(), PI / 2.0, PropagatorMethod::Eigen, &opts).unwrap();
        let expected = from_rows(2, &[c(0., -1.), c(0., 0.), c(0., 0.), c(0., 1.)]);
        assert!((u - expected).norm() < 1e-15);
    }

    #[test]
    fn propagator_matches_plain_taylor_series() {
        let h = pt_dimer(0.5);
        let a = &h * c(0., -1.);
        let mut oracle = identity(2);
        let mut term = identity(2);
        for k in 1..20 {
            term = &term * &a * c(1.0 / k as f64, 0.);
            oracle += &term;
        }
        let opts = EigenOptions::default();
        for method in [
            PropagatorMethod::Eigen,
            PropagatorMethod::Series,
            PropagatorMethod::Auto,
        ] {
            let u = matrix_exponential_propagator(&h, 1.0, method, &opts).unwrap();
            assert!((&u - &oracle).norm() < 1e-10, "{method:?}");
        }
    }

    #[test]
    fn propagator_at_ep_needs_series() {
        let h = pt_dimer(1.0);
        let opts = EigenOptions::default();
        assert!(matrix_exponential_propagator(&h, 0.7, PropagatorMethod::Eigen, &opts).is_err());
        // H² = 0 at the EP, so exp(−iHt) = 1 − iHt exactly
        let u = matrix_exponential_propagator(&h, 0.7, PropagatorMethod::Auto, &opts).unwrap();
        assert!((u - (identity(2) - &h * c(0., 0.7))).norm() < 1e-14);
    }

    #[test]
    fn positivity_checks() {
        let r = positive_definiteness_check(&identity(2), 1e-12).unwrap();
        assert!(r.positive_definite);
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-15);
        assert!(
            !positive_definiteness_check(&pauli_z(), 1e-12)
                .unwrap()
                .positive_definite
        );
        let skew = from_rows(2, &[c(1., 0.), c(0.5, 0.), c(0., 0.), c(1., 0.)]);
        assert!(!positive_definiteness_check(&skew, 1e-12).unwrap().positive_definite);
    }

    #[test]
    fn non_square_and_non_finite_inputs() {
        let m = ComplexMatrix::zeros(2, 3);
        assert!(matches!(check_square(&m), Err(Error::NotSquare { .. })));
        let mut h = identity(2);
        h[(0, 1)] = c(f64::NAN, 0.);
        assert_eq!(
            biorthogonal_eigensystem(&h, &EigenOptions::default()).unwrap_err(),
            Error::NonFinite
        );
    }
}
