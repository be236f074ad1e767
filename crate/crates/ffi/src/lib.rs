//! C ABI over `qbundle`.
//!
//! Families are opaque heap handles created by the `qb_family_*` constructors
//! and released with [`qb_family_free`]. Complex numbers cross the boundary as
//! interleaved `(re, im)` doubles; matrices are row-major. Every fallible call
//! returns a [`QbStatus`]; on failure [`qb_last_error`] holds a message for the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qbundle::error::Error;
use qbundle::generator::solve_adiabatic_generator_with;
use qbundle::linalg::{biorthogonal_eigensystem, c, ComplexMatrix, EigenOptions};
use qbundle::models::{
    make_linear_family, make_pt_dimer_family, make_spin_half_family, HamiltonianFamily, ParameterPoint,
};
use qbundle::observables::{berry_curvature_with, chern_number_with, fidelity_susceptibility_with, SphereGrid};

/// Opaque Hamiltonian family.
pub struct QbFamily {
    inner: Box<dyn HamiltonianFamily>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// Exceptional point: the Hamiltonian cannot be diagonalized.
    NonDiagonalizable = 4,
    ComplexSpectrum = 5,
    DegenerateLevel = 6,
    OutOfDomain = 7,
    Numerical = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> QbStatus {
    match e {
        Error::NotSquare { .. } | Error::DimensionMismatch { .. } => QbStatus::DimensionMismatch,
        Error::NonDiagonalizable { .. } | Error::EpOnPath { .. } => QbStatus::NonDiagonalizable,
        Error::ComplexSpectrum { .. } => QbStatus::ComplexSpectrum,
        Error::DegenerateLevel { .. } => QbStatus::DegenerateLevel,
        Error::OutOfDomain(_) => QbStatus::OutOfDomain,
        Error::InvalidArgument(_) | Error::Inapplicable(_) | Error::NonFinite => QbStatus::InvalidArgument,
        _ => QbStatus::Numerical,
    }
}

struct Fail(QbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(QbStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QbStatus::Internal
        }
    }
}

fn boxed(family: Result<Box<dyn HamiltonianFamily>, Fail>) -> *mut QbFamily {
    match catch_unwind(AssertUnwindSafe(|| family)) {
        Ok(Ok(inner)) => Box::into_raw(Box::new(QbFamily { inner })),
        Ok(Err(Fail(_, msg))) => {
            set_error(msg);
            ptr::null_mut()
        }
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

unsafe fn handle<'a>(f: *const QbFamily) -> Result<&'a dyn HamiltonianFamily, Fail> {
    f.as_ref().map(|f| f.inner.as_ref()).ok_or_else(|| null("family"))
}

unsafe fn point(t: f64, q: *const f64, n_q: usize, fam: &dyn HamiltonianFamily) -> Result<ParameterPoint, Fail> {
    if n_q != fam.n_params() {
        return Err(Fail(
            QbStatus::DimensionMismatch,
            format!("expected {} parameters, got {n_q}", fam.n_params()),
        ));
    }
    let q = if n_q == 0 {
        Vec::new()
    } else if q.is_null() {
        return Err(null("q"));
    } else {
        std::slice::from_raw_parts(q, n_q).to_vec()
    };
    Ok(ParameterPoint::new(t, q))
}

unsafe fn read_matrix(data: *const f64, dim: usize) -> ComplexMatrix {
    let s = std::slice::from_raw_parts(data, 2 * dim * dim);
    ComplexMatrix::from_fn(dim, dim, |r, k| c(s[2 * (r * dim + k)], s[2 * (r * dim + k) + 1]))
}

unsafe fn write_matrix(m: &ComplexMatrix, out: *mut f64) {
    let dim = m.nrows();
    let s = std::slice::from_raw_parts_mut(out, 2 * dim * dim);
    for r in 0..dim {
        for k in 0..dim {
            s[2 * (r * dim + k)] = m[(r, k)].re;
            s[2 * (r * dim + k) + 1] = m[(r, k)].im;
        }
    }
}

/// `H(γ) = [[iγ, 1], [1, −iγ]]`.
#[no_mangle]
pub extern "C" fn qb_family_pt_dimer() -> *mut QbFamily {
    boxed(Ok(Box::new(make_pt_dimer_family())))
}

/// Spin-½ in a magnetic field with parameters (θ, φ). Null if `mu_b` is zero or not finite.
#[no_mangle]
pub extern "C" fn qb_family_spin_half(mu_b: f64) -> *mut QbFamily {
    boxed(
        make_spin_half_family(mu_b)
            .map(|f| Box::new(f) as Box<dyn HamiltonianFamily>)
            .map_err(Fail::from),
    )
}

/// `H(q) = h0 + Σ q_i V_i`.
///
/// `h0` holds `2·dim²` doubles and `couplings` holds `n_params` such matrices back to back.
///
/// # Safety
/// Both buffers must be valid for the lengths above.
#[no_mangle]
pub unsafe extern "C" fn qb_family_linear(
    dim: usize,
    h0: *const f64,
    n_params: usize,
    couplings: *const f64,
) -> *mut QbFamily {
    let build = || -> Result<Box<dyn HamiltonianFamily>, Fail> {
        if dim == 0 {
            return Err(Fail(QbStatus::InvalidArgument, "dim must be positive".into()));
        }
        if h0.is_null() || (n_params > 0 && couplings.is_null()) {
            return Err(null("matrix buffer"));
        }
        let base = read_matrix(h0, dim);
        let vs = (0..n_params)
            .map(|k| read_matrix(couplings.add(2 * dim * dim * k), dim))
            .collect();
        Ok(Box::new(make_linear_family(base, vs)?))
    };
    boxed(build())
}

/// # Safety
/// `family` must come from a `qb_family_*` constructor and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn qb_family_free(family: *mut QbFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Hilbert-space dimension, or 0 for a null handle.
///
/// # Safety
/// `family` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_family_dim(family: *const QbFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.dim())
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `family` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_family_n_params(family: *const QbFamily) -> usize {
    family.as_ref().map_or(0, |f| f.inner.n_params())
}

/// Eigenvalues at `(t, q)` in ascending real part, written as `2·dim` doubles.
///
/// # Safety
/// `q` must hold `n_q` doubles and `out` must have room for `2·dim`.
#[no_mangle]
pub unsafe extern "C" fn qb_eigenvalues(
    family: *const QbFamily,
    t: f64,
    q: *const f64,
    n_q: usize,
    out: *mut f64,
) -> QbStatus {
    guard(|| {
        let fam = handle(family)?;
        let p = point(t, q, n_q, fam)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let es = biorthogonal_eigensystem(&fam.evaluate(&p)?, &EigenOptions::default())?;
        let s = std::slice::from_raw_parts_mut(out, 2 * es.dim());
        for (k, e) in es.eigenvalues.iter().enumerate() {
            s[2 * k] = e.re;
            s[2 * k + 1] = e.im;
        }
        Ok(())
    })
}

/// Canonical adiabatic generator `K_i = t·K1 + K0` at `q`; each output takes `2·dim²` doubles.
///
/// # Safety
/// `q` must hold `n_q` doubles; `k1` and `k0` must have room for `2·dim²` each.
#[no_mangle]
pub unsafe extern "C" fn qb_generator(
    family: *const QbFamily,
    q: *const f64,
    n_q: usize,
    direction: usize,
    k1: *mut f64,
    k0: *mut f64,
) -> QbStatus {
    guard(|| {
        let fam = handle(family)?;
        let p = point(0.0, q, n_q, fam)?;
        if k1.is_null() || k0.is_null() {
            return Err(null("output buffer"));
        }
        let pair = solve_adiabatic_generator_with(fam, &p, direction, &EigenOptions::default())?;
        write_matrix(&pair.k1, k1);
        write_matrix(&pair.k0, k0);
        Ok(())
    })
}

/// Fidelity susceptibility of `level` along `direction`, written as `(re, im)`.
///
/// # Safety
/// `q` must hold `n_q` doubles and `out` must have room for 2.
#[no_mangle]
pub unsafe extern "C" fn qb_susceptibility(
    family: *const QbFamily,
    q: *const f64,
    n_q: usize,
    direction: usize,
    level: usize,
    out: *mut f64,
) -> QbStatus {
    guard(|| {
        let fam = handle(family)?;
        let p = point(0.0, q, n_q, fam)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let chi = fidelity_susceptibility_with(fam, &p, direction, level, &EigenOptions::default())?.chi;
        *out = chi.re;
        *out.add(1) = chi.im;
        Ok(())
    })
}

/// Berry curvature `Ω_ij` of `level`, written as `(re, im)`; the imaginary part vanishes for Hermitian families.
///
/// # Safety
/// `q` must hold `n_q` doubles and `out` must have room for 2.
#[no_mangle]
pub unsafe extern "C" fn qb_berry_curvature(
    family: *const QbFamily,
    q: *const f64,
    n_q: usize,
    i: usize,
    j: usize,
    level: usize,
    out: *mut f64,
) -> QbStatus {
    guard(|| {
        let fam = handle(family)?;
        let p = point(0.0, q, n_q, fam)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let w = berry_curvature_with(fam, &p, i, j, level, &EigenOptions::default())?;
        *out = w.re;
        *out.add(1) = w.im;
        Ok(())
    })
}

/// Chern number of `level` for a two-parameter family over θ ∈ [0, π] × φ ∈ [0, 2π] (midpoint rule).
///
/// # Safety
/// `out` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn qb_chern_number(
    family: *const QbFamily,
    n_theta: usize,
    n_phi: usize,
    level: usize,
    out: *mut f64,
) -> QbStatus {
    guard(|| {
        let fam = handle(family)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if fam.n_params() != 2 || n_theta == 0 || n_phi == 0 {
            return Err(Fail(
                QbStatus::InvalidArgument,
                "needs a two-parameter family and a non-empty grid".into(),
            ));
        }
        *out = chern_number_with(fam, SphereGrid { n_theta, n_phi }, level, &EigenOptions::default())?;
        Ok(())
    })
}

/// Copies the calling thread's last error message (NUL-terminated, truncated to `len`).
/// Returns the full message length excluding the terminator.
///
/// # Safety
/// `buf` must be null or have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn qb_status_name(status: QbStatus) -> *const c_char {
    let s: &'static CStr = match status {
        QbStatus::Ok => c"ok",
        QbStatus::NullPointer => c"null pointer",
        QbStatus::InvalidArgument => c"invalid argument",
        QbStatus::DimensionMismatch => c"dimension mismatch",
        QbStatus::NonDiagonalizable => c"non-diagonalizable (exceptional point)",
        QbStatus::ComplexSpectrum => c"complex spectrum",
        QbStatus::DegenerateLevel => c"degenerate level",
        QbStatus::OutOfDomain => c"out of domain",
        QbStatus::Numerical => c"numerical failure",
        QbStatus::Internal => c"internal error",
    };
    s.as_ptr()
}
