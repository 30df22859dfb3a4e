//! Observation streams emitting `(S_t, u_t)` with `u_t = S_t z_* + w_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DekiError, Result};

/// One emitted pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub operator: DMatrix<f64>,
    pub data: DVector<f64>,
}

pub trait ObservationStream {
    fn param_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn noise(&self) -> NoiseModel;
    fn next_observation(&mut self) -> Result<Observation>;
    /// Number of pairs emitted so far.
    fn emitted(&self) -> usize;
}

impl<S: ObservationStream + ?Sized> ObservationStream for Box<S> {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn noise(&self) -> NoiseModel {
        (**self).noise()
    }
    fn next_observation(&mut self) -> Result<Observation> {
        (**self).next_observation()
    }
    fn emitted(&self) -> usize {
        (**self).emitted()
    }
}

/// Isotropic Gaussian noise, `Gamma = sigma^2 I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "noise level must be nonnegative, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn covariance(&self, dim: usize) -> DMatrix<f64> {
        DMatrix::identity(dim, dim) * (self.sigma * self.sigma)
    }

    /// Adds a draw of `w ~ N(0, Gamma)`. Nothing is drawn when `sigma = 0`.
    pub fn corrupt<R: Rng + ?Sized>(&self, clean: DVector<f64>, rng: &mut R) -> DVector<f64> {
        if self.sigma == 0.0 {
            return clean;
        }
        clean.map(|v| v + self.sigma * rng.sample::<f64, _>(StandardNormal))
    }
}

pub mod darcy_points;
pub mod ergodic;
pub mod replay;
pub mod synthetic;

pub use darcy_points::DarcyPointStream;
pub use ergodic::ErgodicStream;
pub use replay::{MemoryStream, RecordingStream};
pub use synthetic::{OperatorFamily, Selector, SyntheticStream};
