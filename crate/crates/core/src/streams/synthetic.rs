//! Linear operator families with a known long-run average.
//!
//! Coordinates are split into `m` blocks. Operator `k` is
//! `S_k = sqrt(m) P_k B`, where `P_k` selects block `k` and `B` is symmetric
//! with `B^2 = A`. Any selector that visits the blocks uniformly on average
//! therefore has `E[S^T S] = B^T (sum_k P_k^T P_k) B = A`, and every
//! `S_k^T S_k` is bounded by `m |A|`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NoiseModel, Observation, ObservationStream};
use crate::error::{DekiError, Result};
use crate::rng::DekiRng;

/// How the next operator index is picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    /// Uniform and independent at every step.
    Iid,
    /// `0, 1, ..., m-1, 0, ...`.
    Cyclic,
    /// Jumps to a uniformly chosen different index with probability `switch`.
    Markov { switch: f64 },
}

#[derive(Debug, Clone)]
pub struct OperatorFamily {
    operators: Vec<DMatrix<f64>>,
    average: DMatrix<f64>,
    bound: f64,
}

impl OperatorFamily {
    /// `A` gets a random eigenbasis and eigenvalues spread evenly over
    /// `[a_min, a_max]`; the coordinates are split into `blocks` groups.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        blocks: usize,
        a_min: f64,
        a_max: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if blocks == 0 || blocks > dim {
            return Err(DekiError::InvalidArgument(format!(
                "need 1..={dim} blocks, got {blocks}"
            )));
        }
        if !(0.0 <= a_min && a_min <= a_max && a_max.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "bad spectrum range [{a_min}, {a_max}]"
            )));
        }
        let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let spectrum = DVector::from_fn(dim, |i, _| {
            if dim == 1 {
                a_max
            } else {
                a_min + (a_max - a_min) * i as f64 / (dim - 1) as f64
            }
        });
        let root = &q * DMatrix::from_diagonal(&spectrum.map(f64::sqrt)) * q.transpose();
        let root = (&root + root.transpose()) * 0.5;
        let scale = (blocks as f64).sqrt();
        let operators = (0..blocks)
            .map(|k| {
                let rows: Vec<usize> = (0..dim).filter(|i| i % blocks == k).collect();
                DMatrix::from_fn(rows.len(), dim, |r, c| scale * root[(rows[r], c)])
            })
            .collect::<Vec<_>>();
        let average = &root * &root;
        let bound = operators
            .iter()
            .map(|s| s.tr_mul(s).symmetric_eigenvalues().max())
            .fold(0.0, f64::max);
        Ok(Self {
            operators,
            average,
            bound,
        })
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operator(&self, k: usize) -> &DMatrix<f64> {
        &self.operators[k]
    }

    /// Long-run average `A` of `S^T S`.
    pub fn average(&self) -> &DMatrix<f64> {
        &self.average
    }

    /// `max_k lambda_max(S_k^T S_k)`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.average.nrows()
    }
}

/// Emits `(S_k, S_k z_* + w)` with `k` from a selector. Blocks must be of
/// equal size so that every emission has the same length.
pub struct SyntheticStream {
    family: std::sync::Arc<OperatorFamily>,
    selector: Selector,
    z_star: DVector<f64>,
    noise: NoiseModel,
    rng: DekiRng,
    state: Option<usize>,
    emitted: usize,
}

impl SyntheticStream {
    pub fn new(
        family: std::sync::Arc<OperatorFamily>,
        selector: Selector,
        z_star: DVector<f64>,
        noise: NoiseModel,
        rng: DekiRng,
    ) -> Result<Self> {
        if z_star.len() != family.dim() {
            return Err(DekiError::Dimension(
                "ground truth does not match the operator family".into(),
            ));
        }
        let rows = family.operator(0).nrows();
        if (0..family.len()).any(|k| family.operator(k).nrows() != rows) {
            return Err(DekiError::Dimension("blocks must be of equal size".into()));
        }
        if let Selector::Markov { switch } = selector {
            if !(0.0..=1.0).contains(&switch) {
                return Err(DekiError::InvalidArgument(format!(
                    "switch probability {switch} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            family,
            selector,
            z_star,
            noise,
            rng,
            state: None,
            emitted: 0,
        })
    }

    fn next_index(&mut self) -> usize {
        let m = self.family.len();
        let k = match (self.selector, self.state) {
            (Selector::Iid, _) => self.rng.random_range(0..m),
            (Selector::Cyclic, _) => self.emitted % m,
            (Selector::Markov { .. }, None) => self.rng.random_range(0..m),
            (Selector::Markov { switch }, Some(prev)) => {
                if m > 1 && self.rng.random::<f64>() < switch {
                    (prev + self.rng.random_range(1..m)) % m
                } else {
                    prev
                }
            }
        };
        self.state = Some(k);
        k
    }
}

impl ObservationStream for SyntheticStream {
    fn param_dim(&self) -> usize {
        self.z_star.len()
    }
    fn obs_dim(&self) -> usize {
        self.family.operator(0).nrows()
    }
    fn noise(&self) -> NoiseModel {
        self.noise
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let k = self.next_index();
        let operator = self.family.operator(k).clone();
        let data = self.noise.corrupt(&operator * &self.z_star, &mut self.rng);
        self.emitted += 1;
        Ok(Observation { operator, data })
    }
    fn emitted(&self) -> usize {
        self.emitted
    }
}
