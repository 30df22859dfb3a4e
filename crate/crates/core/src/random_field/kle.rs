//! Discrete Karhunen-Loève expansion of a Matérn field on the grid.
//!
//! The grid covariance `C_ik = c(|x_i - x_k|)` is weighted by the cell area
//! `h^2` and diagonalized. Modes `phi_j` are orthonormal for the inner
//! product `h^2 sum_i f_i g_i`, so `sum_j lambda_j phi_j phi_j^T = C` at full
//! rank.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{matern_cov, MaternParams};
use crate::darcy::{GridField, GridSpec};
use crate::error::{DekiError, Result};

/// Default number of retained modes.
pub const DEFAULT_TRUNCATION: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct KleBasis {
    grid: GridSpec,
    eigenvalues: DVector<f64>,
    /// Column `j` is `phi_j` on the interior nodes.
    modes: DMatrix<f64>,
}

/// Grid covariance matrix `[c(|x_i - x_k|)]`.
pub fn covariance_matrix(grid: GridSpec, params: MaternParams) -> Result<DMatrix<f64>> {
    let d = grid.dim();
    let mut c = DMatrix::zeros(d, d);
    // the kernel depends only on the lattice offset; tabulate it once
    let n = grid.n();
    let h = grid.spacing();
    let mut table = vec![0.0; n * n];
    for di in 0..n {
        for dj in 0..n {
            let r = h * ((di * di + dj * dj) as f64).sqrt();
            table[di * n + dj] = matern_cov(r, params)?;
        }
    }
    for a in 0..d {
        for b in 0..=a {
            let (ia, ja) = (a % n, a / n);
            let (ib, jb) = (b % n, b / n);
            let v = table[ia.abs_diff(ib) * n + ja.abs_diff(jb)];
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    Ok(c)
}

/// Leading `truncation` eigenpairs of the weighted grid covariance.
pub fn build_kle(grid: GridSpec, params: MaternParams, truncation: usize) -> Result<KleBasis> {
    let d = grid.dim();
    if truncation == 0 || truncation > d {
        return Err(DekiError::InvalidArgument(format!(
            "KLE truncation must lie in 1..={d}, got {truncation}"
        )));
    }
    let h = grid.spacing();
    let weighted = covariance_matrix(grid, params)? * (h * h);
    let eig = SymmetricEigen::try_new(weighted, 1e-14, 10_000)
        .ok_or_else(|| DekiError::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = DVector::zeros(truncation);
    let mut modes = DMatrix::zeros(d, truncation);
    for (slot, &src) in order.iter().take(truncation).enumerate() {
        eigenvalues[slot] = eig.eigenvalues[src].max(0.0);
        let v = eig.eigenvectors.column(src);
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        modes.set_column(slot, &(v * (sign / h)));
    }
    Ok(KleBasis {
        grid,
        eigenvalues,
        modes,
    })
}

impl KleBasis {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// Standard deviations `sqrt(lambda_j)` of the coefficients.
    pub fn coefficient_scales(&self) -> DVector<f64> {
        self.eigenvalues.map(f64::sqrt)
    }

    /// `h^2 Phi^T Phi`, the identity for an exact basis.
    pub fn gram(&self) -> DMatrix<f64> {
        let h = self.grid.spacing();
        self.modes.tr_mul(&self.modes) * (h * h)
    }

    /// `sum_j lambda_j phi_j phi_j^T`.
    pub fn reconstruct_covariance(&self) -> DMatrix<f64> {
        let scaled = &self.modes * DMatrix::from_diagonal(&self.eigenvalues);
        scaled * self.modes.transpose()
    }

    /// Pointwise variance `sum_j lambda_j phi_j(x)^2`.
    pub fn pointwise_variance(&self) -> DVector<f64> {
        let sq = self.modes.map(|v| v * v);
        sq * &self.eigenvalues
    }

    /// `mean + sum_j phi_j y_j` for coefficients `y`.
    pub fn field_from_coefficients(&self, mean: f64, coeffs: &DVector<f64>) -> Result<GridField> {
        if coeffs.len() != self.truncation() {
            return Err(DekiError::Dimension(format!(
                "expected {} coefficients, got {}",
                self.truncation(),
                coeffs.len()
            )));
        }
        let values = (&self.modes * coeffs).add_scalar(mean);
        GridField::new(self.grid, values)
    }

    /// `y_j = sqrt(lambda_j) xi_j` with `xi ~ N(0, I)`.
    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.eigenvalues
            .map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal))
    }

    pub fn sample_field<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> Result<GridField> {
        let y = self.sample_coefficients(rng);
        self.field_from_coefficients(mean, &y)
    }

    /// One mode per row: `lambda_j` followed by `phi_j` at every node.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for j in 0..self.truncation() {
            write!(out, "{}", self.eigenvalues[j])?;
            for v in self.modes.column(j).iter() {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: GridSpec, input: R) -> Result<Self> {
        let bad = |detail: String| DekiError::Format {
            what: "KLE basis CSV",
            detail,
        };
        let d = grid.dim();
        let mut eigenvalues = Vec::new();
        let mut columns = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            if vals.len() != d + 1 {
                return Err(bad(format!(
                    "line {} has {} values, expected {}",
                    i + 1,
                    vals.len(),
                    d + 1
                )));
            }
            eigenvalues.push(vals[0]);
            columns.push(DVector::from_row_slice(&vals[1..]));
        }
        if columns.is_empty() {
            return Err(bad("no modes".into()));
        }
        Ok(Self {
            grid,
            eigenvalues: DVector::from_vec(eigenvalues),
            modes: DMatrix::from_columns(&columns),
        })
    }
}
