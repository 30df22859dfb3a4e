//! Fixed observation points, diffusion coefficient driven by a coefficient
//! chain: `a_t = mean + sum_j phi_j y_{t,j}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{NoiseModel, Observation, ObservationStream};
use crate::darcy::{DarcySolver, GridField, ObservationPoints};
use crate::error::{DekiError, Result};
use crate::random_field::KleBasis;
use crate::rng::DekiRng;

/// Forward matrix for the coefficient field `mean + sum_j phi_j y_j`.
pub fn chain_operator(
    basis: &KleBasis,
    mean: f64,
    coeffs: &DVector<f64>,
    points: &ObservationPoints,
) -> Result<DMatrix<f64>> {
    let a = basis.field_from_coefficients(mean, coeffs)?;
    Ok(DarcySolver::new(&a)?.forward_matrix(points))
}

pub struct ErgodicStream<I> {
    chain: I,
    basis: Arc<KleBasis>,
    field_mean: f64,
    points: ObservationPoints,
    z_star: DVector<f64>,
    noise: NoiseModel,
    rng: DekiRng,
    emitted: usize,
    last_coefficients: Option<DVector<f64>>,
}

impl<I: Iterator<Item = DVector<f64>>> ErgodicStream<I> {
    pub fn new(
        chain: I,
        basis: Arc<KleBasis>,
        field_mean: f64,
        points: ObservationPoints,
        z_star: &GridField,
        noise: NoiseModel,
        rng: DekiRng,
    ) -> Result<Self> {
        if z_star.grid() != basis.grid() {
            return Err(DekiError::Dimension(
                "ground truth and KLE basis use different grids".into(),
            ));
        }
        Ok(Self {
            chain,
            basis,
            field_mean,
            points,
            z_star: z_star.values().clone(),
            noise,
            rng,
            emitted: 0,
            last_coefficients: None,
        })
    }

    pub fn chain(&self) -> &I {
        &self.chain
    }

    pub fn points(&self) -> &ObservationPoints {
        &self.points
    }

    /// Chain state behind the most recent emission.
    pub fn last_coefficients(&self) -> Option<&DVector<f64>> {
        self.last_coefficients.as_ref()
    }

    /// Advances the chain and returns the operator for the new coefficient field.
    pub fn next_operator(&mut self) -> Result<DMatrix<f64>> {
        let coeffs = self
            .chain
            .next()
            .ok_or(DekiError::StreamExhausted(self.emitted))?;
        let s = chain_operator(&self.basis, self.field_mean, &coeffs, &self.points)?;
        self.last_coefficients = Some(coeffs);
        Ok(s)
    }
}

impl<I: Iterator<Item = DVector<f64>>> ObservationStream for ErgodicStream<I> {
    fn param_dim(&self) -> usize {
        self.z_star.len()
    }
    fn obs_dim(&self) -> usize {
        self.points.len()
    }
    fn noise(&self) -> NoiseModel {
        self.noise
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let operator = self.next_operator()?;
        let data = self.noise.corrupt(&operator * &self.z_star, &mut self.rng);
        self.emitted += 1;
        Ok(Observation { operator, data })
    }
    fn emitted(&self) -> usize {
        self.emitted
    }
}
