//! Fixed diffusion coefficient, fresh observation points at every step.
//!
//! With `p` strips, emission `t = 1, 2, ...` draws all points in
//! `((i-1)/p, i/p) x (0,1)` with `i = ((t-1) mod p) + 1`. One strip is the
//! i.i.d. model on the whole square; both share the same draws.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Open01;

use super::{NoiseModel, Observation, ObservationStream};
use crate::darcy::{DarcySolver, GridField, ObservationPoints};
use crate::error::{DekiError, Result};
use crate::rng::DekiRng;

pub struct DarcyPointStream {
    solver: Arc<DarcySolver>,
    z_star: DVector<f64>,
    points_per_step: usize,
    strips: usize,
    noise: NoiseModel,
    rng: DekiRng,
    emitted: usize,
    last_points: Option<ObservationPoints>,
}

impl DarcyPointStream {
    pub fn iid(
        solver: Arc<DarcySolver>,
        points: usize,
        z_star: &GridField,
        noise: NoiseModel,
        rng: DekiRng,
    ) -> Result<Self> {
        Self::periodic(solver, points, 1, z_star, noise, rng)
    }

    pub fn periodic(
        solver: Arc<DarcySolver>,
        points: usize,
        strips: usize,
        z_star: &GridField,
        noise: NoiseModel,
        rng: DekiRng,
    ) -> Result<Self> {
        if points == 0 {
            return Err(DekiError::InvalidArgument(
                "need at least one observation point per step".into(),
            ));
        }
        if strips == 0 {
            return Err(DekiError::InvalidArgument(
                "need at least one subdomain".into(),
            ));
        }
        if z_star.grid() != solver.grid() {
            return Err(DekiError::Dimension(
                "ground truth and coefficient field use different grids".into(),
            ));
        }
        Ok(Self {
            solver,
            z_star: z_star.values().clone(),
            points_per_step: points,
            strips,
            noise,
            rng,
            emitted: 0,
            last_points: None,
        })
    }

    /// Points behind the most recent emission.
    pub fn last_points(&self) -> Option<&ObservationPoints> {
        self.last_points.as_ref()
    }

    /// 1-based strip used by the next emission.
    pub fn next_strip(&self) -> usize {
        self.emitted % self.strips + 1
    }

    fn draw_points(&mut self) -> Result<ObservationPoints> {
        let strip = self.next_strip();
        let p = self.strips as f64;
        let pts = (0..self.points_per_step)
            .map(|_| {
                let u: f64 = self.rng.sample(Open01);
                let y: f64 = self.rng.sample(Open01);
                ((strip as f64 - 1.0 + u) / p, y)
            })
            .collect();
        ObservationPoints::new(pts)
    }

    /// Draws the next point set and operator without noise, for warm-up use.
    pub fn next_operator(&mut self) -> Result<(ObservationPoints, DMatrix<f64>)> {
        let pts = self.draw_points()?;
        let s = self.solver.forward_matrix(&pts);
        Ok((pts, s))
    }
}

impl ObservationStream for DarcyPointStream {
    fn param_dim(&self) -> usize {
        self.z_star.len()
    }
    fn obs_dim(&self) -> usize {
        self.points_per_step
    }
    fn noise(&self) -> NoiseModel {
        self.noise
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let (pts, operator) = self.next_operator()?;
        let data = self.noise.corrupt(&operator * &self.z_star, &mut self.rng);
        self.last_points = Some(pts);
        self.emitted += 1;
        Ok(Observation { operator, data })
    }
    fn emitted(&self) -> usize {
        self.emitted
    }
}
