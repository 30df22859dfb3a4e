//! Particle ensembles and their sample statistics.
//!
//! Members are stored column-wise in a `d x J` matrix. All statistics use the
//! population normalization (divisor `J`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_finite, DekiError, Result};

/// Relative threshold below which singular values of the deviation matrix
/// count as zero when whitening.
const RANK_TOL: f64 = 1e-10;

/// `J >= 2` parameter vectors of common dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

/// Mean, covariance and spread of an ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean: DVector<f64>,
    /// `(1/J) sum_j e_j e_j^T`.
    pub covariance: DMatrix<f64>,
    /// Column `j` holds the deviation `e_j = z_j - mean`.
    pub deviations: DMatrix<f64>,
    /// `E = (1/J) sum_j |e_j|^2`, the trace of the covariance.
    pub spread_energy: f64,
}

impl Ensemble {
    /// Wraps a `d x J` matrix whose columns are the members.
    pub fn from_columns(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(DekiError::InvalidArgument(format!(
                "ensemble needs at least 2 members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(DekiError::InvalidArgument(
                "ensemble members have dimension 0".into(),
            ));
        }
        ensure_finite(members.iter(), "ensemble members")?;
        Ok(Self { members })
    }

    pub fn from_members(members: &[DVector<f64>]) -> Result<Self> {
        let d = members.first().map(|m| m.len()).unwrap_or(0);
        if let Some((j, m)) = members.iter().enumerate().find(|(_, m)| m.len() != d) {
            return Err(DekiError::Dimension(format!(
                "member {j} has dimension {} but member 0 has {d}",
                m.len()
            )));
        }
        Self::from_columns(DMatrix::from_columns(members))
    }

    /// Members drawn i.i.d. from `N(0, sigma0^2 I)`.
    pub fn gaussian<R: Rng + ?Sized>(
        dim: usize,
        size: usize,
        sigma0: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        let members = DMatrix::from_fn(dim, size, |_, _| {
            sigma0 * rng.sample::<f64, _>(StandardNormal)
        });
        Self::from_columns(members)
    }

    /// Gaussian draw whose deviations are rescaled so that the sample
    /// covariance equals `sigma0^2` times the orthogonal projector onto their
    /// span. The sample mean of the draw is kept. For `J > d` this gives
    /// `C_0 = sigma0^2 I` exactly.
    pub fn whitened<R: Rng + ?Sized>(
        dim: usize,
        size: usize,
        sigma0: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let raw = Self::gaussian(dim, size, sigma0, rng)?;
        let mean = raw.mean();
        let deviations = raw.deviations_from(&mean);
        let svd = deviations.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(DekiError::Eigen("SVD of ensemble deviations failed".into())),
        };
        let top = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > RANK_TOL * top)
            .count();
        let scale = sigma0 * (size as f64).sqrt();
        let mut members = u.columns(0, rank) * v_t.rows(0, rank) * scale;
        for mut col in members.column_iter_mut() {
            col += &mean;
        }
        Self::from_columns(members)
    }

    pub fn dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, j: usize) -> DVector<f64> {
        self.members.column(j).into_owned()
    }

    pub fn into_columns(self) -> DMatrix<f64> {
        self.members
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }

    fn deviations_from(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut dev = self.members.clone();
        for mut col in dev.column_iter_mut() {
            col -= mean;
        }
        dev
    }

    pub fn stats(&self) -> EnsembleStats {
        compute_stats(self)
    }
}

/// Sample mean, covariance (divisor `J`), deviations and spread energy.
pub fn compute_stats(ens: &Ensemble) -> EnsembleStats {
    let j = ens.size() as f64;
    let mean = ens.mean();
    let deviations = ens.deviations_from(&mean);
    let mut covariance = &deviations * deviations.transpose() / j;
    // exact symmetry; the product is symmetric only up to rounding
    covariance = (&covariance + covariance.transpose()) * 0.5;
    let spread_energy = deviations.norm_squared() / j;
    EnsembleStats {
        mean,
        covariance,
        deviations,
        spread_energy,
    }
}
