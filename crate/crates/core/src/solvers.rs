//! Dense linear-algebra kernels shared by the learners.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Size above which [`SolveMethod::Auto`] switches to conjugate gradients.
pub const DIRECT_LIMIT: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    #[default]
    Auto,
    Direct,
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T: Real> {
    pub method: SolveMethod,
    /// Relative residual target for conjugate gradients.
    pub tol: T,
    /// Iteration cap for conjugate gradients; `10·S` when `None`.
    pub max_iter: Option<usize>,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            method: SolveMethod::Auto,
            tol: T::of(1e-8),
            max_iter: None,
        }
    }
}

/// `(A + ridge·I) x = b` with `A` symmetric.
#[derive(Debug, Clone)]
pub struct SpdSystem<T: Real> {
    pub matrix: DMatrix<T>,
    pub rhs: DVector<T>,
    pub ridge: T,
}

#[derive(Debug, Clone)]
pub struct Solution<T: Real> {
    pub x: DVector<T>,
    pub relative_residual: T,
    pub iterations: usize,
    pub method: SolveMethod,
}

impl<T: Real> SpdSystem<T> {
    pub fn new(matrix: DMatrix<T>, rhs: DVector<T>, ridge: T) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::dims("system matrix columns", n, matrix.ncols()));
        }
        if rhs.len() != n {
            return Err(Error::dims("system right-hand side", n, rhs.len()));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > T::of(1e-10) * scale {
            return Err(Error::Numerical(format!(
                "system matrix is not symmetric (max asymmetry {asym})"
            )));
        }
        Ok(Self { matrix, rhs, ridge })
    }

    fn apply(&self, v: &DVector<T>) -> DVector<T> {
        &self.matrix * v + v * self.ridge
    }

    fn relative_residual(&self, x: &DVector<T>) -> T {
        let bn = self.rhs.norm();
        let r = (self.apply(x) - &self.rhs).norm();
        if bn > T::zero() {
            r / bn
        } else {
            r
        }
    }
}

pub fn solve_spd<T: Real>(system: &SpdSystem<T>, opts: &SolveOptions<T>) -> Result<DVector<T>> {
    solve_spd_detailed(system, opts).map(|s| s.x)
}

pub fn solve_spd_detailed<T: Real>(system: &SpdSystem<T>, opts: &SolveOptions<T>) -> Result<Solution<T>> {
    let n = system.rhs.len();
    let method = match opts.method {
        SolveMethod::Auto if n <= DIRECT_LIMIT => SolveMethod::Direct,
        SolveMethod::Auto => SolveMethod::ConjugateGradient,
        m => m,
    };
    if system.rhs.iter().all(|v| *v == T::zero()) {
        return Ok(Solution {
            x: DVector::zeros(n),
            relative_residual: T::zero(),
            iterations: 0,
            method,
        });
    }
    let sol = match method {
        SolveMethod::ConjugateGradient => conjugate_gradient(system, opts)?,
        _ => {
            let mut a = system.matrix.clone();
            for i in 0..n {
                a[(i, i)] += system.ridge;
            }
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("system matrix plus ridge".into()))?;
            let x = chol.solve(&system.rhs);
            let relative_residual = system.relative_residual(&x);
            Solution {
                x,
                relative_residual,
                iterations: 1,
                method,
            }
        }
    };
    if !sol.relative_residual.is_finite() || sol.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("solution is not finite".into()));
    }
    Ok(sol)
}

/// Jacobi-preconditioned conjugate gradients.
fn conjugate_gradient<T: Real>(system: &SpdSystem<T>, opts: &SolveOptions<T>) -> Result<Solution<T>> {
    let n = system.rhs.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);
    let diag = DVector::from_fn(n, |i, _| system.matrix[(i, i)] + system.ridge);
    if diag.iter().any(|d| !(*d > T::zero())) {
        return Err(Error::NotPositiveDefinite("non-positive diagonal entry".into()));
    }
    let bnorm = system.rhs.norm();
    let mut x = DVector::zeros(n);
    let mut r = system.rhs.clone();
    let mut z = r.component_div(&diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut rel = T::one();
    for it in 1..=max_iter {
        let ap = system.apply(&p);
        let pap = p.dot(&ap);
        if !(pap > T::zero()) {
            return Err(Error::NotPositiveDefinite("curvature pᵀAp ≤ 0 in conjugate gradients".into()));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, T::one());
        r.axpy(-alpha, &ap, T::one());
        rel = r.norm() / bnorm;
        if rel <= opts.tol {
            // confirm against the true residual, not the recurrence
            let true_rel = system.relative_residual(&x);
            if true_rel <= opts.tol {
                return Ok(Solution {
                    x,
                    relative_residual: true_rel,
                    iterations: it,
                    method: SolveMethod::ConjugateGradient,
                });
            }
            r = &system.rhs - system.apply(&x);
        }
        z = r.component_div(&diag);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &p * beta;
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel.as_f64(),
    })
}

/// Result of the Lyapunov solve: `X = Σ⁻¹` and `Σ`.
#[derive(Debug, Clone)]
pub struct LyapunovSolution<T: Real> {
    pub precision: DMatrix<T>,
    pub covariance: DMatrix<T>,
    pub relative_residual: T,
}

/// Solves `Σ̄X + XΣ̄ = Q` through `vec(X) = (Σ̄ ⊗ I + I ⊗ Σ̄)⁻¹ vec(Q)` and
/// returns `X` together with `Σ = X⁻¹`.
///
/// The Kronecker system is `d²×d²`, so the cost is `O(d⁶)`.
pub fn solve_lyapunov<T: Real>(sigma_bar: &DMatrix<T>, q: &DMatrix<T>) -> Result<LyapunovSolution<T>> {
    let d = sigma_bar.nrows();
    if sigma_bar.ncols() != d {
        return Err(Error::dims("Σ̄ columns", d, sigma_bar.ncols()));
    }
    if q.nrows() != d || q.ncols() != d {
        return Err(Error::dims("Q", d, q.nrows()));
    }
    let eye = DMatrix::<T>::identity(d, d);
    let kron = sigma_bar.kronecker(&eye) + eye.kronecker(sigma_bar);
    let vec_q = DVector::from_column_slice(q.as_slice());
    let vec_x = kron
        .lu()
        .solve(&vec_q)
        .ok_or_else(|| Error::Singular("Kronecker form of the Lyapunov equation".into()))?;
    let x = DMatrix::from_column_slice(d, d, vec_x.as_slice());
    let x = (&x + x.transpose()) * T::of(0.5);
    let resid = (sigma_bar * &x + &x * sigma_bar - q).norm();
    let qn = q.norm();
    let relative_residual = if qn > T::zero() { resid / qn } else { resid };
    let chol = x.clone().cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite("Lyapunov solution Σ⁻¹ is not positive definite".into())
    })?;
    let cov = chol.inverse();
    let covariance = (&cov + cov.transpose()) * T::of(0.5);
    Ok(LyapunovSolution {
        precision: x,
        covariance,
        relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        &g * g.transpose() / n as f64 + DMatrix::identity(n, n)
    }

    fn random_vec(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_and_zero_rhs() {
        let b = random_vec(5, 1);
        for method in [SolveMethod::Direct, SolveMethod::ConjugateGradient] {
            let opts = SolveOptions { method, ..Default::default() };
            let sys = SpdSystem::new(DMatrix::identity(5, 5), b.clone(), 0.0).unwrap();
            assert!((solve_spd(&sys, &opts).unwrap() - &b).amax() < 1e-12);
            let sys0 = SpdSystem::new(random_spd(5, 2), DVector::zeros(5), 0.0).unwrap();
            assert_eq!(solve_spd(&sys0, &opts).unwrap(), DVector::zeros(5));
        }
    }

    #[test]
    fn direct_and_cg_agree() {
        let a = random_spd(50, 3);
        let b = random_vec(50, 4);
        let sys = SpdSystem::new(a, b, 0.0).unwrap();
        let direct = solve_spd(&sys, &SolveOptions { method: SolveMethod::Direct, ..Default::default() }).unwrap();
        let cg = solve_spd_detailed(
            &sys,
            &SolveOptions {
                method: SolveMethod::ConjugateGradient,
                tol: 1e-10,
                max_iter: None,
            },
        )
        .unwrap();
        assert!(cg.relative_residual <= 1e-10);
        assert!((&direct - &cg.x).norm() / direct.norm() < 1e-8);
    }

    #[test]
    fn ridge_is_added() {
        let sys = SpdSystem::new(DMatrix::identity(3, 3), DVector::from_element(3, 3.0), 2.0).unwrap();
        let x = solve_spd(&sys, &SolveOptions::default()).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn failures_are_reported() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let sys = SpdSystem::new(indefinite, DVector::from_element(2, 1.0), 0.0).unwrap();
        assert!(matches!(
            solve_spd(&sys, &SolveOptions { method: SolveMethod::Direct, ..Default::default() }),
            Err(Error::NotPositiveDefinite(_))
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(SpdSystem::new(asym, DVector::zeros(2), 0.0).is_err());
        let sys = SpdSystem::new(random_spd(40, 9), random_vec(40, 10), 0.0).unwrap();
        let capped = SolveOptions {
            method: SolveMethod::ConjugateGradient,
            tol: 1e-14,
            max_iter: Some(2),
        };
        assert!(matches!(solve_spd(&sys, &capped), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let sol = solve_lyapunov(&DMatrix::<f64>::identity(3, 3), &(DMatrix::identity(3, 3) * 2.0)).unwrap();
        assert!((sol.precision - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert!((sol.covariance - DMatrix::identity(3, 3)).amax() < 1e-14);
        let sol = solve_lyapunov(&DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(sol.precision[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(sol.covariance[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lyapunov_residual_random() {
        let sb = random_spd(3, 11);
        let mut q = random_spd(3, 12);
        q += DMatrix::identity(3, 3);
        let sol = solve_lyapunov(&sb, &q).unwrap();
        let resid = (&sb * &sol.precision + &sol.precision * &sb - &q).norm() / q.norm();
        assert!(resid <= 1e-10);
        assert!((&sol.precision - sol.precision.transpose()).amax() <= 1e-12);
        assert!((&sol.precision * &sol.covariance - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_rejects_indefinite_solution() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_lyapunov(&DMatrix::identity(2, 2), &q),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
