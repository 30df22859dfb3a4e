//! The limiting Tikhonov-regularized objective and its minimizers.
//!
//! `J(z) = 1/2 (z - z*)^T A (z - z*) + alpha/2 |z|^2`, whose gradient is
//! `(A + alpha I) z - A z*`. The DEKI drift is a preconditioned stochastic
//! estimate of exactly this gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, DekiError, Result};

/// Symmetry tolerance (relative to the largest entry) for supplied `A`.
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    alpha: f64,
    z_star: DVector<f64>,
    a: DMatrix<f64>,
    a_max: f64,
}

impl RegularizedProblem {
    /// `a` must be symmetric positive semidefinite; `alpha > 0`.
    pub fn new(alpha: f64, z_star: DVector<f64>, a: DMatrix<f64>, a_max: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(a_max >= 0.0 && a_max.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "a_max must be nonnegative, got {a_max}"
            )));
        }
        let d = z_star.len();
        if a.nrows() != d || a.ncols() != d {
            return Err(DekiError::Dimension(format!(
                "A is {}x{} but z* has length {d}",
                a.nrows(),
                a.ncols()
            )));
        }
        ensure_finite(a.iter(), "A")?;
        ensure_finite(z_star.iter(), "z*")?;
        let scale = a.amax().max(1.0);
        if (&a - a.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(DekiError::InvalidArgument("A is not symmetric".into()));
        }
        let a = (&a + a.transpose()) * 0.5;
        if let Some(min) = a
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .reduce(f64::min)
        {
            if min < -SYMMETRY_TOL * scale {
                return Err(DekiError::NotPositiveDefinite(format!(
                    "A has eigenvalue {min}"
                )));
            }
        }
        Ok(Self {
            alpha,
            z_star,
            a,
            a_max,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z_star(&self) -> &DVector<f64> {
        &self.z_star
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn dim(&self) -> usize {
        self.z_star.len()
    }

    /// Whether the spectrum of `A` lies in `[0, 1]`, as the convergence
    /// theory assumes. Callers report a warning when this is false.
    pub fn spectrum_within_unit_interval(&self) -> bool {
        let eig = self.a.clone().symmetric_eigenvalues();
        eig.iter().all(|&l| l <= 1.0 + 1e-12)
    }

    pub fn loss(&self, z: &DVector<f64>) -> Result<f64> {
        loss_j(z, self)
    }

    pub fn gradient(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        Ok(&self.a * (z - &self.z_star) + z * self.alpha)
    }

    pub fn optimal_point(&self) -> Result<DVector<f64>> {
        optimal_point(self)
    }

    fn check_dim(&self, z: &DVector<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(DekiError::Dimension(format!(
                "vector has length {} but problem dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `J(z) = 1/2 (z - z*)^T A (z - z*) + alpha/2 |z|^2`.
pub fn loss_j(z: &DVector<f64>, prob: &RegularizedProblem) -> Result<f64> {
    prob.check_dim(z)?;
    let v = z - &prob.z_star;
    Ok(0.5 * v.dot(&(&prob.a * &v)) + 0.5 * prob.alpha * z.norm_squared())
}

/// Solves `(A + alpha I) z = A z*`.
pub fn optimal_point(prob: &RegularizedProblem) -> Result<DVector<f64>> {
    let d = prob.dim();
    let lhs = &prob.a + DMatrix::identity(d, d) * prob.alpha;
    let rhs = &prob.a * &prob.z_star;
    spd_solve(lhs, &rhs)
}

pub(crate) fn spd_solve(lhs: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    lhs.cholesky().map(|c| c.solve(rhs)).ok_or_else(|| {
        DekiError::Solver("Cholesky factorization of the normal matrix failed".into())
    })
}

/// Running sums of `S_t^T S_t` and `S_t^T u_t` for the empirical objective
/// `(1/2N) sum_t |S_t z - u_t|^2 + alpha/2 |z|^2`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    count: usize,
}

impl NormalEquations {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: DMatrix::zeros(dim, dim),
            rhs: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn push(&mut self, operator: &DMatrix<f64>, data: &DVector<f64>) -> Result<()> {
        let d = self.rhs.len();
        if operator.ncols() != d || operator.nrows() != data.len() {
            return Err(DekiError::Dimension(format!(
                "operator {}x{} and data of length {} do not match dimension {d}",
                operator.nrows(),
                operator.ncols(),
                data.len()
            )));
        }
        self.gram.gemm_tr(1.0, operator, operator, 1.0);
        self.rhs.gemv_tr(1.0, operator, data, 1.0);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Empirical average of `S_t^T S_t`.
    pub fn average_gram(&self) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(DekiError::InvalidArgument(
                "no observations accumulated".into(),
            ));
        }
        let g = &self.gram / self.count as f64;
        Ok((&g + g.transpose()) * 0.5)
    }

    pub fn solve(&self, alpha: f64) -> Result<DVector<f64>> {
        if !(alpha > 0.0) {
            return Err(DekiError::InvalidArgument(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let d = self.rhs.len();
        let lhs = self.average_gram()? + DMatrix::identity(d, d) * alpha;
        spd_solve(lhs, &(&self.rhs / self.count as f64))
    }
}

/// Minimizer of the empirical objective over a recorded history of
/// `(S_t, u_t)` pairs.
pub fn reference_solution(
    history: &[(DMatrix<f64>, DVector<f64>)],
    alpha: f64,
) -> Result<DVector<f64>> {
    let (first, _) = history.first().ok_or_else(|| {
        DekiError::InvalidArgument("reference solution needs a nonempty history".into())
    })?;
    let mut normal = NormalEquations::new(first.ncols());
    for (s, u) in history {
        normal.push(s, u)?;
    }
    normal.solve(alpha)
}

/// Largest constant step admitted by the ensemble-collapse analysis:
/// `min(alpha / (J (A_max + alpha)^2), J / alpha) / E_0`.
pub fn step_size_bound(e0: f64, alpha: f64, a_max: f64, ensemble_size: usize) -> Result<f64> {
    if !(e0 > 0.0 && e0.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "E0 must be positive, got {e0}"
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(a_max >= 0.0 && a_max.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "A_max must be nonnegative, got {a_max}"
        )));
    }
    if ensemble_size == 0 {
        return Err(DekiError::InvalidArgument(
            "ensemble size must be positive".into(),
        ));
    }
    let j = ensemble_size as f64;
    let bound = (alpha / (j * (a_max + alpha).powi(2))).min(j / alpha);
    Ok(bound / e0)
}
