//! Metropolis-Hastings with preconditioned Crank-Nicolson proposals in KLE
//! coefficient space, where the reference Gaussian is `N(0, diag(lambda))`.

use std::borrow::Borrow;
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DekiError, Result};

/// How the acceptance ratio is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// `min(1, pi(y') / pi(y))`. Combined with the pCN proposal this leaves
    /// `pi * N(0, C)` invariant (normalized), not `pi` itself.
    #[default]
    TargetRatio,
    /// `min(1, (pi/N(0,C))(y') / (pi/N(0,C))(y))`, the reversible choice for a
    /// pCN proposal; invariant law `pi`.
    PriorReversible,
}

pub type LogDensity = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

pub struct PcnSampler {
    beta: f64,
    /// `sqrt(lambda_j)`.
    scales: DVector<f64>,
    log_target: LogDensity,
    rule: AcceptanceRule,
}

impl PcnSampler {
    /// `beta = 0` is accepted and gives the identity proposal.
    pub fn new<F>(
        beta: f64,
        scales: DVector<f64>,
        log_target: F,
        rule: AcceptanceRule,
    ) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        if !(0.0..=1.0).contains(&beta) {
            return Err(DekiError::InvalidArgument(format!(
                "pCN beta must lie in [0, 1], got {beta}"
            )));
        }
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(DekiError::InvalidArgument(
                "proposal scales must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            beta,
            scales,
            log_target: Box::new(log_target),
            rule,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.scales.len()
    }

    pub fn log_target(&self, y: &DVector<f64>) -> f64 {
        (self.log_target)(y)
    }

    /// Log-density of `N(0, diag(scales^2))` up to a constant; components
    /// with zero scale are ignored.
    fn log_reference(&self, y: &DVector<f64>) -> f64 {
        y.iter()
            .zip(self.scales.iter())
            .filter(|(_, s)| **s > 0.0)
            .map(|(v, s)| -0.5 * (v / s).powi(2))
            .sum()
    }

    fn log_weight(&self, y: &DVector<f64>, log_pi: f64) -> f64 {
        match self.rule {
            AcceptanceRule::TargetRatio => log_pi,
            AcceptanceRule::PriorReversible => log_pi - self.log_reference(y),
        }
    }

    /// `sqrt(1 - beta^2) y + beta eps` with `eps ~ N(0, diag(scales^2))`.
    pub fn propose<R: Rng + ?Sized>(&self, y: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        pcn_propose(y, self.beta, &self.scales, rng)
    }

    /// One MH transition from `y` with cached `log_pi_y`. Returns the next
    /// state, its log target density and whether the move was accepted.
    pub fn step<R: Rng + ?Sized>(
        &self,
        y: &DVector<f64>,
        log_pi_y: f64,
        rng: &mut R,
    ) -> (DVector<f64>, f64, bool) {
        let proposal = self.propose(y, rng);
        let log_pi_new = self.log_target(&proposal);
        let u: f64 = rng.random();
        if !log_pi_new.is_finite() {
            return (y.clone(), log_pi_y, false);
        }
        let log_ratio = self.log_weight(&proposal, log_pi_new) - self.log_weight(y, log_pi_y);
        if log_ratio >= 0.0 || u < log_ratio.exp() {
            (proposal, log_pi_new, true)
        } else {
            (y.clone(), log_pi_y, false)
        }
    }
}

pub fn pcn_propose<R: Rng + ?Sized>(
    y: &DVector<f64>,
    beta: f64,
    scales: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let keep = (1.0 - beta * beta).sqrt();
    DVector::from_iterator(
        y.len(),
        y.iter()
            .zip(scales.iter())
            .map(|(v, s)| keep * v + beta * s * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Infinite Markov chain; yields the state after each transition. Owns or
/// borrows both the sampler and the generator.
pub struct PcnChain<S, R> {
    sampler: S,
    state: DVector<f64>,
    log_pi: f64,
    rng: R,
    steps: usize,
    accepted: usize,
}

impl<S: Borrow<PcnSampler>, R: Rng> PcnChain<S, R> {
    pub fn new(sampler: S, start: DVector<f64>, rng: R) -> Result<Self> {
        let s = sampler.borrow();
        if start.len() != s.dim() {
            return Err(DekiError::Dimension(format!(
                "chain start has {} coefficients, sampler expects {}",
                start.len(),
                s.dim()
            )));
        }
        let log_pi = s.log_target(&start);
        if !log_pi.is_finite() {
            return Err(DekiError::NonFinite(
                "target log-density at the chain start",
            ));
        }
        Ok(Self {
            sampler,
            state: start,
            log_pi,
            rng,
            steps: 0,
            accepted: 0,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }
}

impl<S: Borrow<PcnSampler>, R: Rng> Iterator for PcnChain<S, R> {
    type Item = DVector<f64>;

    fn next(&mut self) -> Option<DVector<f64>> {
        let (next, log_pi, accepted) =
            self.sampler
                .borrow()
                .step(&self.state, self.log_pi, &mut self.rng);
        self.state = next;
        self.log_pi = log_pi;
        self.steps += 1;
        self.accepted += accepted as usize;
        Some(self.state.clone())
    }
}

#[derive(Debug, Clone)]
pub struct ChainRun {
    pub states: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
}

/// `steps` transitions from `start`.
pub fn run_chain<R: Rng + ?Sized>(
    sampler: &PcnSampler,
    start: DVector<f64>,
    steps: usize,
    rng: &mut R,
) -> Result<ChainRun> {
    if steps == 0 {
        return Err(DekiError::InvalidArgument(
            "chain length must be at least 1".into(),
        ));
    }
    let mut chain = PcnChain::new(sampler, start, rng)?;
    let states: Vec<_> = chain.by_ref().take(steps).collect();
    Ok(ChainRun {
        states,
        acceptance_rate: chain.acceptance_rate(),
    })
}

/// Log-density of `N(mean, diag(scales^2))` up to a constant.
pub fn gaussian_log_density(
    mean: DVector<f64>,
    scales: DVector<f64>,
) -> impl Fn(&DVector<f64>) -> f64 + Send + Sync {
    move |y: &DVector<f64>| {
        y.iter()
            .zip(mean.iter().zip(scales.iter()))
            .map(|(v, (m, s))| -0.5 * ((v - m) / s).powi(2))
            .sum()
    }
}

/// One state per row, comma separated.
pub fn write_chain_csv<W: Write>(states: &[DVector<f64>], mut out: W) -> Result<()> {
    for s in states {
        let row: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn scales() -> DVector<f64> {
        DVector::from_vec(vec![1.0, 0.5, 0.2])
    }

    #[test]
    fn zero_beta_proposal_is_identity() {
        let y = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        assert_eq!(pcn_propose(&y, 0.0, &scales(), &mut seeded(1)), y);
    }

    #[test]
    fn unit_beta_proposal_ignores_current_state() {
        let a = pcn_propose(
            &DVector::from_element(3, 5.0),
            1.0,
            &scales(),
            &mut seeded(2),
        );
        let b = pcn_propose(
            &DVector::from_element(3, -9.0),
            1.0,
            &scales(),
            &mut seeded(2),
        );
        assert_eq!(a, b);
    }

    #[test]
    fn proposal_variance_from_origin() {
        let s = scales();
        let y = DVector::zeros(3);
        let n = 100_000;
        let mut rng = seeded(3);
        let mut sq = DVector::zeros(3);
        for _ in 0..n {
            let p = pcn_propose(&y, 0.9, &s, &mut rng);
            sq += p.component_mul(&p);
        }
        for j in 0..3 {
            let target = 0.81 * s[j] * s[j];
            let est = sq[j] / n as f64;
            let se = target * (2.0 / n as f64).sqrt();
            assert!(
                (est - target).abs() < 4.0 * se,
                "component {j}: {est} vs {target}"
            );
        }
    }

    #[test]
    fn equal_densities_are_always_accepted() {
        let sampler = PcnSampler::new(
            0.5,
            scales(),
            |_: &DVector<f64>| 0.0,
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let mut rng = seeded(4);
        let mut y = DVector::zeros(3);
        for _ in 0..1000 {
            let (next, _, accepted) = sampler.step(&y, 0.0, &mut rng);
            assert!(accepted);
            y = next;
        }
    }

    #[test]
    fn impossible_proposals_are_rejected() {
        let target = |y: &DVector<f64>| if y[0] > 10.0 { 0.0 } else { f64::NEG_INFINITY };
        let sampler = PcnSampler::new(
            1.0,
            DVector::from_element(1, 1.0),
            target,
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let start = DVector::from_element(1, 11.0);
        let run = run_chain(&sampler, start.clone(), 200, &mut seeded(5)).unwrap();
        assert!(run.states.iter().all(|s| *s == start));
        assert_eq!(run.acceptance_rate, 0.0);
    }

    #[test]
    fn zero_beta_chain_is_constant_and_always_accepts() {
        let s = scales();
        let sampler = PcnSampler::new(
            0.0,
            s.clone(),
            gaussian_log_density(DVector::zeros(3), s),
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let start = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let run = run_chain(&sampler, start.clone(), 100, &mut seeded(6)).unwrap();
        assert_eq!(run.acceptance_rate, 1.0);
        assert!(run.states.iter().all(|x| *x == start));
    }

    #[test]
    fn chains_are_reproducible() {
        let s = scales();
        let sampler = PcnSampler::new(
            0.9,
            s.clone(),
            gaussian_log_density(DVector::zeros(3), s),
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let a = run_chain(&sampler, DVector::zeros(3), 500, &mut seeded(7)).unwrap();
        let b = run_chain(&sampler, DVector::zeros(3), 500, &mut seeded(7)).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
    }

    /// Batch-means standard error of the sample mean.
    fn batch_means_se(xs: &[f64], batches: usize) -> (f64, f64) {
        let len = xs.len() / batches;
        let means: Vec<f64> = xs
            .chunks(len)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / len as f64)
            .collect();
        let grand = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        (grand, (var / batches as f64).sqrt())
    }

    #[test]
    fn one_dimensional_gaussian_mean_with_batch_means() {
        let s = DVector::from_element(1, 1.0);
        let sampler = PcnSampler::new(
            0.9,
            s.clone(),
            gaussian_log_density(DVector::zeros(1), s),
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let run = run_chain(&sampler, DVector::zeros(1), 100_000, &mut seeded(8)).unwrap();
        let xs: Vec<f64> = run.states.iter().map(|v| v[0]).collect();
        let (mean, se) = batch_means_se(&xs, 50);
        assert!(mean.abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn reversible_rule_targets_shifted_gaussian() {
        let reference = DVector::from_element(1, 1.0);
        let target =
            gaussian_log_density(DVector::from_element(1, 1.0), DVector::from_element(1, 0.7));
        let sampler =
            PcnSampler::new(0.9, reference, target, AcceptanceRule::PriorReversible).unwrap();
        let run = run_chain(&sampler, DVector::zeros(1), 100_000, &mut seeded(9)).unwrap();
        let xs: Vec<f64> = run.states.iter().map(|v| v[0]).collect();
        let (mean, se) = batch_means_se(&xs, 50);
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn as_written_rule_halves_the_variance_of_a_matched_target() {
        // invariant law is proportional to N(0,1)^2, i.e. N(0, 1/2)
        let s = DVector::from_element(1, 1.0);
        let sampler = PcnSampler::new(
            0.9,
            s.clone(),
            gaussian_log_density(DVector::zeros(1), s),
            AcceptanceRule::TargetRatio,
        )
        .unwrap();
        let run = run_chain(&sampler, DVector::zeros(1), 100_000, &mut seeded(10)).unwrap();
        let sq: Vec<f64> = run.states.iter().map(|v| v[0] * v[0]).collect();
        let (var, se) = batch_means_se(&sq, 50);
        assert!((var - 0.5).abs() < 4.0 * se, "var {var} se {se}");
    }

    #[test]
    fn chain_csv_has_one_row_per_state() {
        let mut buf = Vec::new();
        write_chain_csv(
            &[
                DVector::from_vec(vec![1.0, 2.5]),
                DVector::from_vec(vec![-0.5, 0.0]),
            ],
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,2.5\n-0.5,0\n");
    }

    #[test]
    fn rejects_out_of_range_beta() {
        let f = |_: &DVector<f64>| 0.0;
        assert!(PcnSampler::new(1.5, scales(), f, AcceptanceRule::TargetRatio).is_err());
        assert!(PcnSampler::new(-0.1, scales(), f, AcceptanceRule::TargetRatio).is_err());
        let ok = PcnSampler::new(0.5, scales(), f, AcceptanceRule::TargetRatio).unwrap();
        assert!(PcnChain::new(&ok, DVector::zeros(2), seeded(0)).is_err());
    }
}
