//! End-to-end Darcy experiments: ground truth, streams, reference solution,
//! DEKI runs, run directories and rate summaries.

pub mod config;
pub mod replay;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::Open01;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::darcy::{DarcySolver, GridField, GridSpec, ObservationPoints};
use crate::diagnostics::{
    fit_rate, read_records_csv, smallest_positive_eigenvalue, write_records_csv, FitWindow,
    RecordField, RunRecord, TheoryReport,
};
use crate::ensemble::Ensemble;
use crate::error::{DekiError, Result};
use crate::mcmc::{gaussian_log_density, PcnChain, PcnSampler};
use crate::problem::{step_size_bound, NormalEquations, RegularizedProblem};
use crate::random_field::{build_kle, KleBasis};
use crate::rng::{purpose, sub_rng, DekiRng};
use crate::runner::{run_deki, RunOptions};
use crate::schedule::StepSchedule;
use crate::streams::{DarcyPointStream, ErgodicStream, NoiseModel, Observation, ObservationStream};

pub use config::{EnsembleSpec, ExperimentConfig, FieldSpec, StepSpec, StreamKind, StreamSpec};
use replay::{DriverKind, DriverLog, DriverRecord, DriverReplayStream, OperatorSource};

pub const RECORDS_FILE: &str = "records.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const REPLAY_FILE: &str = "replay.bin";
pub const SUMMARY_FILE: &str = "summary.json";

type CoefficientChain = PcnChain<Arc<PcnSampler>, DekiRng>;

/// Seed-independent pieces of a configuration.
pub struct Setup {
    cfg: ExperimentConfig,
    grid: GridSpec,
    truth_basis: KleBasis,
    coefficient_basis: Arc<KleBasis>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = GridSpec::new(cfg.grid_n)?;
        let truth_basis = build_kle(grid, cfg.truth.matern()?, cfg.truncation())?;
        let coefficient_modes = match cfg.stream.kind {
            StreamKind::Ergodic => cfg.stream.chain_truncation,
            _ => cfg.truncation(),
        };
        let coefficient_basis = Arc::new(build_kle(
            grid,
            cfg.coefficient.matern()?,
            coefficient_modes,
        )?);
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            truth_basis,
            coefficient_basis,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Ground truth and stream ingredients for one seed.
    pub fn world(&self, seed: u64) -> Result<World> {
        let z_star = self.truth_basis.sample_field(
            self.cfg.truth.mean,
            &mut sub_rng(seed, purpose::GROUND_TRUTH),
        )?;
        let noise = NoiseModel::new(self.cfg.noise_sigma)?;
        let driver = match self.cfg.stream.kind {
            StreamKind::Iid | StreamKind::Periodic => {
                let a = self.coefficient_basis.sample_field(
                    self.cfg.coefficient.mean,
                    &mut sub_rng(seed, purpose::COEFFICIENT_FIELD),
                )?;
                WorldDriver::Fixed(Arc::new(DarcySolver::with_dense_cache(&a)?))
            }
            StreamKind::Ergodic => {
                let mut rng = sub_rng(seed, purpose::FIXED_POINTS);
                let points = ObservationPoints::new(
                    (0..self.cfg.stream.points)
                        .map(|_| (rng.sample::<f64, _>(Open01), rng.sample::<f64, _>(Open01)))
                        .collect(),
                )?;
                let scales = self.coefficient_basis.coefficient_scales();
                let target = gaussian_log_density(DVector::zeros(scales.len()), scales.clone());
                let sampler = Arc::new(PcnSampler::new(
                    self.cfg.stream.beta,
                    scales,
                    target,
                    self.cfg.stream.acceptance,
                )?);
                WorldDriver::Chain { sampler, points }
            }
        };
        Ok(World {
            cfg: self.cfg.clone(),
            z_star,
            noise,
            basis: self.coefficient_basis.clone(),
            driver,
        })
    }
}

enum WorldDriver {
    Fixed(Arc<DarcySolver>),
    Chain {
        sampler: Arc<PcnSampler>,
        points: ObservationPoints,
    },
}

/// Everything a seed shares between its main, warm-up and reference streams.
pub struct World {
    cfg: ExperimentConfig,
    z_star: GridField,
    noise: NoiseModel,
    basis: Arc<KleBasis>,
    driver: WorldDriver,
}

/// Which copy of the observation process to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replica {
    Main,
    Warmup,
    Reference,
}

impl World {
    pub fn z_star(&self) -> &GridField {
        &self.z_star
    }

    /// A fresh stream. Warm-up and reference copies are independent of the
    /// main stream; for the point streams they use the i.i.d. model.
    pub fn stream(&self, seed: u64, replica: Replica) -> Result<DarcyStream> {
        let (stream_purpose, chain_purpose) = match replica {
            Replica::Main => (purpose::STREAM, purpose::CHAIN),
            Replica::Warmup => (purpose::WARMUP, purpose::WARMUP_CHAIN),
            Replica::Reference => (purpose::REFERENCE, purpose::REFERENCE_CHAIN),
        };
        let rng = sub_rng(seed, stream_purpose);
        let k = self.cfg.stream.points;
        match &self.driver {
            WorldDriver::Fixed(solver) => {
                let strips = match (self.cfg.stream.kind, replica) {
                    (StreamKind::Periodic, Replica::Main) => self.cfg.stream.subdomains,
                    _ => 1,
                };
                let s = DarcyPointStream::periodic(
                    solver.clone(),
                    k,
                    strips,
                    &self.z_star,
                    self.noise,
                    rng,
                )?;
                Ok(DarcyStream::Points(s))
            }
            WorldDriver::Chain { sampler, points } => {
                let mut chain_rng = sub_rng(seed, chain_purpose);
                let start = self.basis.sample_coefficients(&mut chain_rng);
                let chain = PcnChain::new(sampler.clone(), start, chain_rng)?;
                let s = ErgodicStream::new(
                    chain,
                    self.basis.clone(),
                    self.cfg.coefficient.mean,
                    points.clone(),
                    &self.z_star,
                    self.noise,
                    rng,
                )?;
                Ok(DarcyStream::Chain(s))
            }
        }
    }

    /// Rebuilds operators for a replay of this world's main stream.
    pub fn operator_source(&self) -> OperatorSource {
        match &self.driver {
            WorldDriver::Fixed(solver) => OperatorSource::Points(solver.clone()),
            WorldDriver::Chain { points, .. } => OperatorSource::Coefficients {
                basis: self.basis.clone(),
                mean: self.cfg.coefficient.mean,
                points: points.clone(),
            },
        }
    }
}

/// One of the three Darcy observation processes.
#[allow(clippy::large_enum_variant)]
pub enum DarcyStream {
    Points(DarcyPointStream),
    Chain(ErgodicStream<CoefficientChain>),
}

impl DarcyStream {
    /// What the most recent emission was built from, flattened.
    pub fn last_inputs(&self) -> Option<Vec<f64>> {
        match self {
            DarcyStream::Points(s) => s
                .last_points()
                .map(|p| p.points().iter().flat_map(|&(x, y)| [x, y]).collect()),
            DarcyStream::Chain(s) => s.last_coefficients().map(|c| c.as_slice().to_vec()),
        }
    }

    pub fn driver_kind(&self) -> DriverKind {
        match self {
            DarcyStream::Points(_) => DriverKind::Points,
            DarcyStream::Chain(_) => DriverKind::Coefficients,
        }
    }

    /// Acceptance rate of the coefficient chain so far.
    pub fn acceptance_rate(&self) -> Option<f64> {
        match self {
            DarcyStream::Points(_) => None,
            DarcyStream::Chain(s) => Some(s.chain().acceptance_rate()),
        }
    }

    fn inner(&self) -> &dyn ObservationStream {
        match self {
            DarcyStream::Points(s) => s,
            DarcyStream::Chain(s) => s,
        }
    }
}

impl ObservationStream for DarcyStream {
    fn param_dim(&self) -> usize {
        self.inner().param_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }
    fn noise(&self) -> NoiseModel {
        self.inner().noise()
    }
    fn next_observation(&mut self) -> Result<Observation> {
        match self {
            DarcyStream::Points(s) => s.next_observation(),
            DarcyStream::Chain(s) => s.next_observation(),
        }
    }
    fn emitted(&self) -> usize {
        self.inner().emitted()
    }
}

/// Wraps a Darcy stream and keeps the compact replay log.
struct LoggingStream {
    inner: DarcyStream,
    records: Vec<DriverRecord>,
}

impl ObservationStream for LoggingStream {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn noise(&self) -> NoiseModel {
        self.inner.noise()
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let obs = self.inner.next_observation()?;
        let inputs = self
            .inner
            .last_inputs()
            .expect("inputs recorded after an emission");
        self.records.push(DriverRecord {
            inputs,
            data: obs.data.clone(),
        });
        Ok(obs)
    }
    fn emitted(&self) -> usize {
        self.inner.emitted()
    }
}

/// `inflation * max_t lambda_max(S_t^T S_t)` over `draws` emissions.
pub fn estimate_a_max<S: ObservationStream + ?Sized>(
    stream: &mut S,
    draws: usize,
    inflation: f64,
) -> Result<f64> {
    if draws == 0 {
        return Err(DekiError::InvalidArgument(
            "A_max estimate needs at least one draw".into(),
        ));
    }
    let mut top = 0.0f64;
    for _ in 0..draws {
        let obs = stream.next_observation()?;
        let gram = obs.operator.tr_mul(&obs.operator);
        top = top.max(gram.symmetric_eigenvalues().max());
    }
    Ok(inflation * top)
}

/// Estimates `A_max` from a warm-up stream and checks the convergence
/// hypotheses for `ens0` under `schedule`.
pub fn validate_theory_conditions<S: ObservationStream + ?Sized>(
    ens0: &Ensemble,
    warmup: &mut S,
    draws: usize,
    inflation: f64,
    alpha: f64,
    schedule: &StepSchedule,
) -> Result<TheoryReport> {
    let a_max = estimate_a_max(warmup, draws, inflation)?;
    TheoryReport::evaluate(ens0, alpha, a_max, schedule)
}

/// Resolves the configured step rule against the initial ensemble.
pub fn resolve_schedule(
    step: StepSpec,
    ens0: &Ensemble,
    alpha: f64,
    a_max: f64,
) -> Result<StepSchedule> {
    let stats = ens0.stats();
    match step {
        StepSpec::Constant { h } => StepSchedule::constant(h),
        StepSpec::Reciprocal => Ok(StepSchedule::Reciprocal),
        StepSpec::Theory { fraction } => StepSchedule::constant(
            fraction * step_size_bound(stats.spread_energy, alpha, a_max, ens0.size())?,
        ),
        StepSpec::TargetRate { lambda } => {
            let mu = smallest_positive_eigenvalue(&stats);
            if !(mu > 0.0) {
                return Err(DekiError::Config(
                    "target_rate needs an initial ensemble with nonzero spread".into(),
                ));
            }
            StepSchedule::constant(lambda / (2.0 * alpha * mu))
        }
    }
}

/// Reference solution and long-run average operator from `draws` emissions.
pub fn reference_from_stream<S: ObservationStream + ?Sized>(
    stream: &mut S,
    draws: usize,
    alpha: f64,
) -> Result<(DVector<f64>, nalgebra::DMatrix<f64>)> {
    let mut normal = NormalEquations::new(stream.param_dim());
    for _ in 0..draws {
        let obs = stream.next_observation()?;
        normal.push(&obs.operator, &obs.data)?;
    }
    Ok((normal.solve(alpha)?, normal.average_gram()?))
}

/// A seed's run fully specified except for the main stream.
pub struct PreparedRun {
    pub seed: u64,
    pub world: World,
    pub problem: RegularizedProblem,
    pub z_ref: DVector<f64>,
    pub ens0: Ensemble,
    pub schedule: StepSchedule,
    pub theory: TheoryReport,
    pub smallest_positive_c0: f64,
    pub reference_acceptance: Option<f64>,
    pub warnings: Vec<String>,
}

pub fn prepare(setup: &Setup, seed: u64) -> Result<PreparedRun> {
    let cfg = setup.config();
    let world = setup.world(seed)?;
    let d = cfg.dim();

    let mut warmup = world.stream(seed, Replica::Warmup)?;
    let a_max = estimate_a_max(&mut warmup, cfg.warmup_draws, cfg.a_max_inflation)?;

    let mut reference = world.stream(seed, Replica::Reference)?;
    let (z_ref, a_avg) = reference_from_stream(&mut reference, cfg.reference_draws, cfg.alpha)?;
    let reference_acceptance = reference.acceptance_rate();
    let problem =
        RegularizedProblem::new(cfg.alpha, world.z_star().values().clone(), a_avg, a_max)?;

    let mut rng = sub_rng(seed, purpose::ENSEMBLE);
    let e = &cfg.ensemble;
    let ens0 = if e.whiten {
        Ensemble::whitened(d, e.size, e.sigma0, &mut rng)?
    } else {
        Ensemble::gaussian(d, e.size, e.sigma0, &mut rng)?
    };
    let schedule = resolve_schedule(cfg.step, &ens0, cfg.alpha, a_max)?;
    let theory = TheoryReport::evaluate(&ens0, cfg.alpha, a_max, &schedule)?;
    let smallest_positive_c0 = smallest_positive_eigenvalue(&ens0.stats());

    let mut warnings = Vec::new();
    if !problem.spectrum_within_unit_interval() {
        warnings.push("the estimated long-run operator A has eigenvalues above 1".to_string());
    }
    if matches!(cfg.step, StepSpec::Theory { .. }) && !theory.lambda_ok {
        warnings.push(format!(
            "theory-mode rate exponent lambda = {:?} is outside (0, 1)",
            theory.lambda
        ));
    }
    if !theory.full_rank {
        warnings.push(format!(
            "J = {} <= d = {}: the ensemble cannot span the parameter space",
            e.size, d
        ));
    }
    Ok(PreparedRun {
        seed,
        world,
        problem,
        z_ref,
        ens0,
        schedule,
        theory,
        smallest_positive_c0,
        reference_acceptance,
        warnings,
    })
}

impl PreparedRun {
    fn options(&self, cfg: &ExperimentConfig) -> RunOptions {
        let mut opts = RunOptions::new(cfg.horizon, self.schedule)
            .variant(cfg.variant)
            .reference(self.z_ref.clone());
        opts.record_every = cfg.record_every;
        opts
    }

    /// Runs DEKI on `stream`.
    pub fn run<S: ObservationStream + ?Sized>(
        &self,
        cfg: &ExperimentConfig,
        stream: &mut S,
    ) -> Result<Vec<RunRecord>> {
        let mut rng = sub_rng(self.seed, purpose::PERTURBATION);
        Ok(run_deki(
            stream,
            &self.ens0,
            &self.problem,
            &self.options(cfg),
            &mut rng,
        )?
        .records)
    }
}

/// Fitted log-log slopes over the default window; `None` when the fit is
/// impossible (too few points, nonpositive values).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Slopes {
    pub err_ref: Option<f64>,
    pub err_truth: Option<f64>,
    pub loss_gap: Option<f64>,
    pub spread_energy: Option<f64>,
}

impl Slopes {
    pub fn fit(records: &[RunRecord]) -> Self {
        let w = FitWindow::default();
        let get = |f| fit_rate(records, f, w).ok().filter(|s| s.is_finite());
        Self {
            err_ref: get(RecordField::ErrRef),
            err_truth: get(RecordField::ErrTruth),
            loss_gap: get(RecordField::LossGap),
            spread_energy: get(RecordField::SpreadEnergy),
        }
    }

    /// Field-wise mean over the runs where the fit exists.
    pub fn mean<'a>(all: impl IntoIterator<Item = &'a Slopes> + Clone) -> Self {
        let avg = |f: fn(&Slopes) -> Option<f64>| {
            let v: Vec<f64> = all.clone().into_iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Self {
            err_ref: avg(|s| s.err_ref),
            err_truth: avg(|s| s.err_truth),
            loss_gap: avg(|s| s.loss_gap),
            spread_energy: avg(|s| s.spread_energy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    /// `iid_draws` or `replica_chain`.
    pub method: String,
    pub draws: usize,
    /// `|z_ref - z*|`.
    pub distance_to_truth: f64,
    /// Largest eigenvalue of the estimated long-run average `A`.
    pub a_lambda_max: f64,
    pub chain_acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    /// Configuration of this single run (`seed` fixed, one replicate).
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub records: usize,
    pub schedule: StepSchedule,
    /// Smallest eigenvalue of `C_0` on the span of the initial deviations.
    pub smallest_positive_c0: f64,
    pub theory: TheoryReport,
    /// `A_max` estimated from the warm-up draws.
    pub a_max_estimate: f64,
    pub reference: ReferenceInfo,
    pub chain_acceptance_rate: Option<f64>,
    pub slopes: Slopes,
    pub warnings: Vec<String>,
    pub replay_file: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub slopes: Slopes,
    pub chain_acceptance_rate: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub stream: StreamKind,
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
    pub mean_slopes: Slopes,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| {
        DekiError::InvalidArgument(format!("`{}` has no file name", path.display()))
    })?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn records_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records_csv(records, &mut buf)?;
    Ok(buf)
}

/// Configuration for the single run of `seed`.
pub fn single_run_config(cfg: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed: Some(seed),
        replicates: 1,
        ..cfg.clone()
    }
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output.join(format!("seed-{seed}"))
}

/// One seed, written to `dir`. Returns the summary and the records.
pub fn run_seed(setup: &Setup, seed: u64, dir: &Path) -> Result<(RunSummary, Vec<RunRecord>)> {
    let cfg = setup.config();
    let prepared = prepare(setup, seed)?;
    let inner = prepared.world.stream(seed, Replica::Main)?;
    let kind = inner.driver_kind();
    let mut stream = LoggingStream {
        inner,
        records: Vec::with_capacity(cfg.horizon),
    };
    let records = prepared.run(cfg, &mut stream)?;
    let acceptance = stream.inner.acceptance_rate();
    let log = DriverLog {
        kind,
        noise: stream.noise(),
        records: stream.records,
    };

    let slopes = Slopes::fit(&records);
    let run_cfg = single_run_config(cfg, seed);
    let metadata = RunMetadata {
        config_hash: run_cfg.hash()?,
        config: run_cfg,
        seed,
        dim: cfg.dim(),
        records: records.len(),
        schedule: prepared.schedule,
        smallest_positive_c0: prepared.smallest_positive_c0,
        theory: prepared.theory.clone(),
        a_max_estimate: prepared.problem.a_max(),
        reference: ReferenceInfo {
            method: match cfg.stream.kind {
                StreamKind::Ergodic => "replica_chain".into(),
                _ => "iid_draws".into(),
            },
            draws: cfg.reference_draws,
            distance_to_truth: (&prepared.z_ref - prepared.world.z_star().values()).norm(),
            a_lambda_max: prepared.problem.a().clone().symmetric_eigenvalues().max(),
            chain_acceptance_rate: prepared.reference_acceptance,
        },
        chain_acceptance_rate: acceptance,
        slopes,
        warnings: prepared.warnings.clone(),
        replay_file: REPLAY_FILE.into(),
        version: env!("CARGO_PKG_VERSION").into(),
    };

    fs::create_dir_all(dir)?;
    let mut replay = Vec::new();
    log.write(&mut replay)?;
    write_atomic(&dir.join(REPLAY_FILE), &replay)?;
    write_atomic(
        &dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&metadata)?.as_bytes(),
    )?;
    write_atomic(&dir.join(RECORDS_FILE), &records_csv(&records)?)?;
    Ok((
        RunSummary {
            seed,
            dir: dir.to_path_buf(),
            slopes,
            chain_acceptance_rate: acceptance,
            warnings: prepared.warnings,
        },
        records,
    ))
}

/// Result of [`run_experiment`]: the summary plus each seed's records.
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub records: Vec<Vec<RunRecord>>,
}

/// Runs every seed of `cfg` in parallel into `output/seed-<s>/` and writes
/// `output/summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let seeds = cfg.seeds()?;
    let setup = Setup::new(cfg)?;
    let results: Vec<(RunSummary, Vec<RunRecord>)> = seeds
        .par_iter()
        .map(|&seed| run_seed(&setup, seed, &run_dir(cfg, seed)))
        .collect::<Result<_>>()?;
    let (runs, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = ExperimentSummary {
        name: cfg.name.clone(),
        stream: cfg.stream.kind,
        config_hash: cfg.hash()?,
        mean_slopes: Slopes::mean(runs.iter().map(|r| &r.slopes)),
        runs,
    };
    fs::create_dir_all(&cfg.output)?;
    write_atomic(
        &cfg.output.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(ExperimentOutcome { summary, records })
}

pub fn read_metadata(dir: &Path) -> Result<RunMetadata> {
    let text = fs::read_to_string(dir.join(METADATA_FILE))?;
    let meta: RunMetadata = serde_json::from_str(&text)?;
    meta.config.validate()?;
    Ok(meta)
}

/// Recomputes a run's records from its metadata and replay log.
pub fn rerun_from_replay(dir: &Path) -> Result<Vec<RunRecord>> {
    let meta = read_metadata(dir)?;
    let setup = Setup::new(&meta.config)?;
    let prepared = prepare(&setup, meta.seed)?;
    let log = DriverLog::read(BufReader::new(fs::File::open(dir.join(&meta.replay_file))?))?;
    let mut stream = DriverReplayStream::new(prepared.world.operator_source(), log)?;
    prepared.run(&meta.config, &mut stream)
}

/// Whether the replayed records match `records.csv` byte for byte.
pub fn verify_run(dir: &Path) -> Result<bool> {
    let stored = fs::read(dir.join(RECORDS_FILE))?;
    Ok(records_csv(&rerun_from_replay(dir)?)? == stored)
}

pub fn read_run_records(dir: &Path) -> Result<Vec<RunRecord>> {
    read_records_csv(BufReader::new(fs::File::open(dir.join(RECORDS_FILE))?))
}

pub const COMBINED_COLUMNS: [&str; 5] = ["stream", "seed", "t", "err_truth", "err_ref"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub config_hash: String,
    pub streams: Vec<ExperimentSummary>,
}

/// Runs the three stream kinds with shared ground truth and seeds under
/// `output/<kind>/`, then writes `combined.csv` and `compare.json`.
pub fn compare_streams(base: &ExperimentConfig) -> Result<CompareSummary> {
    base.seeds()?;
    let mut streams = Vec::new();
    let mut combined = COMBINED_COLUMNS.join(",");
    combined.push('\n');
    for kind in StreamKind::ALL {
        let cfg = ExperimentConfig {
            stream: StreamSpec {
                kind,
                ..base.stream
            },
            output: base.output.join(kind.name()),
            ..base.clone()
        };
        let outcome = run_experiment(&cfg)?;
        for (run, records) in outcome.summary.runs.iter().zip(&outcome.records) {
            for r in records {
                combined.push_str(&format!(
                    "{},{},{},{},{}\n",
                    kind.name(),
                    run.seed,
                    r.t,
                    crate::diagnostics::format_value(r.err_truth),
                    crate::diagnostics::format_value(r.err_ref)
                ));
            }
        }
        streams.push(outcome.summary);
    }
    let summary = CompareSummary {
        config_hash: base.hash()?,
        streams,
    };
    fs::create_dir_all(&base.output)?;
    write_atomic(&base.output.join("combined.csv"), combined.as_bytes())?;
    write_atomic(
        &base.output.join("compare.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

/// Theory report for the first seed of `cfg`, without running DEKI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub schedule: StepSchedule,
    pub smallest_positive_c0: f64,
    pub theory: TheoryReport,
    pub warnings: Vec<String>,
}

pub fn validate_config(cfg: &ExperimentConfig) -> Result<ValidationReport> {
    let seed = cfg.seeds()?[0];
    let p = prepare(&Setup::new(cfg)?, seed)?;
    Ok(ValidationReport {
        seed,
        schedule: p.schedule,
        smallest_positive_c0: p.smallest_positive_c0,
        theory: p.theory,
        warnings: p.warnings,
    })
}
