//! Fixed-step classical Runge–Kutta for matrix-valued ODEs.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

/// Integrate `dy/ds = f(s, y)` from `s0` to `s1` in `steps` equal RK4 steps.
///
/// `post` runs on the state after every step (e.g. to re-symmetrize).
pub fn rk4<F, P>(mut f: F, mut post: P, s0: f64, y0: ComplexMatrix, s1: f64, steps: usize) -> Result<ComplexMatrix>
where
    F: FnMut(f64, &ComplexMatrix) -> Result<ComplexMatrix>,
    P: FnMut(&mut ComplexMatrix),
{
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    let h = (s1 - s0) / steps as f64;
    let half = Complex64::from(0.5 * h);
    let full = Complex64::from(h);
    let sixth = Complex64::from(h / 6.0);
    let two = Complex64::from(2.0);
    let mut y = y0;
    for k in 0..steps {
        let s = s0 + k as f64 * h;
        let k1 = f(s, &y)?;
        let k2 = f(s + 0.5 * h, &(&y + &k1 * half))?;
        let k3 = f(s + 0.5 * h, &(&y + &k2 * half))?;
        let k4 = f(s + h, &(&y + &k3 * full))?;
        y += (k1 + k2 * two + k3 * two + k4) * sixth;
        post(&mut y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, expm, pauli_x};

    #[test]
    fn fourth_order_convergence() {
        // y' = -i σ_x y, y(0) = 1  →  y(1) = exp(-i σ_x)
        let a = pauli_x() * c(0., -1.);
        let exact = expm(&a);
        let err = |steps| {
            let y = rk4(
                |_, y| Ok(&a * y),
                |_| {},
                0.0,
                ComplexMatrix::identity(2, 2),
                1.0,
                steps,
            )
            .unwrap();
            (y - &exact).norm()
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn zero_steps_rejected() {
        assert!(rk4(|_, y| Ok(y.clone()), |_| {}, 0.0, ComplexMatrix::identity(1, 1), 1.0, 0).is_err());
    }
}
