//! The DEKI iteration loop.

use nalgebra::DVector;
use rand::Rng;

use crate::diagnostics::{covariance_extremes, RunRecord};
use crate::ensemble::Ensemble;
use crate::error::{DekiError, Result};
use crate::problem::RegularizedProblem;
use crate::schedule::StepSchedule;
use crate::streams::ObservationStream;
use crate::update::{deki_step_perturbed, deki_step_unperturbed, Variant};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub horizon: usize,
    pub schedule: StepSchedule,
    pub variant: Variant,
    pub reference: Option<DVector<f64>>,
    /// Emit a record every this many iterations (and always at the horizon).
    pub record_every: usize,
}

impl RunOptions {
    pub fn new(horizon: usize, schedule: StepSchedule) -> Self {
        Self {
            horizon,
            schedule,
            variant: Variant::Unperturbed,
            reference: None,
            record_every: 1,
        }
    }

    pub fn variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn reference(mut self, z_ref: DVector<f64>) -> Self {
        self.reference = Some(z_ref);
        self
    }
}

pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub ensemble: Ensemble,
}

/// Runs `opts.horizon` DEKI steps and records diagnostics.
///
/// `rng` drives the observation perturbations and is untouched by the
/// unperturbed variant.
pub fn run_deki<S, R>(
    stream: &mut S,
    ens0: &Ensemble,
    problem: &RegularizedProblem,
    opts: &RunOptions,
    rng: &mut R,
) -> Result<RunOutcome>
where
    S: ObservationStream + ?Sized,
    R: Rng + ?Sized,
{
    run_deki_observed(stream, ens0, problem, opts, rng, |_, _| {})
}

/// As [`run_deki`], calling `observer(t, ensemble)` after every update.
pub fn run_deki_observed<S, R, F>(
    stream: &mut S,
    ens0: &Ensemble,
    problem: &RegularizedProblem,
    opts: &RunOptions,
    rng: &mut R,
    mut observer: F,
) -> Result<RunOutcome>
where
    S: ObservationStream + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(usize, &Ensemble),
{
    opts.schedule.validate()?;
    if opts.record_every == 0 {
        return Err(DekiError::InvalidArgument(
            "record_every must be at least 1".into(),
        ));
    }
    if stream.param_dim() != ens0.dim() || problem.dim() != ens0.dim() {
        return Err(DekiError::Dimension(format!(
            "ensemble dimension {} vs stream {} vs problem {}",
            ens0.dim(),
            stream.param_dim(),
            problem.dim()
        )));
    }
    if let Some(r) = &opts.reference {
        if r.len() != ens0.dim() {
            return Err(DekiError::Dimension(
                "reference solution has wrong dimension".into(),
            ));
        }
    }
    let gamma = match opts.variant {
        Variant::Perturbed => Some(stream.noise().covariance(stream.obs_dim())),
        Variant::Unperturbed => None,
    };
    let z_opt = problem.optimal_point()?;
    let loss_opt = problem.loss(&z_opt)?;
    let alpha = problem.alpha();

    let mut ens = ens0.clone();
    let mut records = Vec::with_capacity(opts.horizon / opts.record_every + 1);
    for step in 0..opts.horizon {
        let obs = stream.next_observation()?;
        let eta = opts.schedule.eta(step);
        ens = match &gamma {
            None => deki_step_unperturbed(&ens, &obs.operator, &obs.data, alpha, eta)?,
            Some(g) => deki_step_perturbed(&ens, &obs.operator, &obs.data, g, alpha, eta, rng)?,
        };
        let t = step + 1;
        observer(t, &ens);
        if t % opts.record_every == 0 || t == opts.horizon {
            let stats = ens.stats();
            let (lambda_min_c, lambda_max_c) = covariance_extremes(&stats);
            records.push(RunRecord {
                t,
                spread_energy: stats.spread_energy,
                lambda_min_c,
                lambda_max_c,
                loss_gap: problem.loss(&stats.mean)? - loss_opt,
                err_ref: opts
                    .reference
                    .as_ref()
                    .map_or(f64::NAN, |r| (&stats.mean - r).norm()),
                err_truth: (&stats.mean - problem.z_star()).norm(),
            });
        }
    }
    Ok(RunOutcome {
        records,
        ensemble: ens,
    })
}
