//! Per-iteration records, rate fitting and theory-side condition checks.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, EnsembleStats};
use crate::error::{DekiError, Result};
use crate::problem::step_size_bound;
use crate::schedule::StepSchedule;

pub const RECORD_COLUMNS: [&str; 7] = [
    "t",
    "E_t",
    "lambda_min_C",
    "lambda_max_C",
    "loss_gap",
    "err_ref",
    "err_truth",
];

/// Diagnostics after the `t`-th update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub spread_energy: f64,
    pub lambda_min_c: f64,
    pub lambda_max_c: f64,
    pub loss_gap: f64,
    /// NaN when no reference solution was supplied.
    pub err_ref: f64,
    pub err_truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordField {
    SpreadEnergy,
    LossGap,
    ErrRef,
    ErrTruth,
}

impl RunRecord {
    pub fn get(&self, field: RecordField) -> f64 {
        match field {
            RecordField::SpreadEnergy => self.spread_energy,
            RecordField::LossGap => self.loss_gap,
            RecordField::ErrRef => self.err_ref,
            RecordField::ErrTruth => self.err_truth,
        }
    }
}

/// Extreme eigenvalues `(min, max)` of the sample covariance.
///
/// When `J <= d` the covariance has rank at most `J - 1 < d`, so the minimum
/// is exactly zero and the maximum is taken from the `J x J` Gram matrix of
/// the deviations, which shares its nonzero spectrum.
pub fn covariance_extremes(stats: &EnsembleStats) -> (f64, f64) {
    let d = stats.deviations.nrows();
    let j = stats.deviations.ncols();
    if j <= d {
        let gram = stats.deviations.tr_mul(&stats.deviations) / j as f64;
        let gram = (&gram + gram.transpose()) * 0.5;
        let eig = SymmetricEigen::new(gram);
        (0.0, eig.eigenvalues.max().max(0.0))
    } else {
        let eig = SymmetricEigen::new(stats.covariance.clone());
        (eig.eigenvalues.min(), eig.eigenvalues.max())
    }
}

/// Smallest eigenvalue of the sample covariance restricted to the span of
/// the deviations, i.e. its smallest eigenvalue above `1e-10` times the
/// largest. Zero for a collapsed ensemble.
pub fn smallest_positive_eigenvalue(stats: &EnsembleStats) -> f64 {
    let j = stats.deviations.ncols() as f64;
    let gram = stats.deviations.tr_mul(&stats.deviations) / j;
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let top = eig.max();
    if !(top > 0.0) {
        return 0.0;
    }
    eig.iter()
        .copied()
        .filter(|&l| l > 1e-10 * top)
        .fold(f64::INFINITY, f64::min)
}

/// Orthonormal basis of the span of the initial members.
pub fn member_span_basis(ens: &Ensemble) -> DMatrix<f64> {
    let svd = ens.members().clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    if top == 0.0 {
        return DMatrix::zeros(ens.dim(), 0);
    }
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * top)
        .count();
    u.columns(0, rank).into_owned()
}

/// `|z - Q Q^T z| / |z|`, or the absolute residual when `z = 0`.
pub fn subspace_residual(basis: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    let coords = basis.tr_mul(z);
    let residual = (z - basis * coords).norm();
    let scale = z.norm();
    if scale > 0.0 {
        residual / scale
    } else {
        residual
    }
}

/// Which iterations enter a rate fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWindow {
    /// The last `fraction` of `[1, t_max]` measured in `log t`.
    LogFraction { fraction: f64 },
    /// Inclusive iteration range.
    Range { from: usize, to: usize },
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::LogFraction { fraction: 0.5 }
    }
}

impl FitWindow {
    fn contains(&self, t: usize, t_max: usize) -> bool {
        match *self {
            FitWindow::LogFraction { fraction } => {
                let start = (t_max as f64).powf(1.0 - fraction);
                t as f64 >= start * (1.0 - 1e-12)
            }
            FitWindow::Range { from, to } => t >= from && t <= to,
        }
    }
}

const MIN_FIT_POINTS: usize = 10;

/// Least-squares slope of `log value` against `log t`. NaN values are skipped.
pub fn fit_power_law(points: &[(usize, f64)], window: FitWindow) -> Result<f64> {
    if let FitWindow::LogFraction { fraction } = window {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DekiError::InvalidArgument(format!(
                "window fraction must lie in (0, 1], got {fraction}"
            )));
        }
    }
    let t_max = points.iter().map(|p| p.0).max().unwrap_or(0);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(t, v) in points {
        if t == 0 || v.is_nan() || !window.contains(t, t_max) {
            continue;
        }
        if v <= 0.0 || v.is_infinite() {
            return Err(DekiError::InvalidArgument(format!(
                "rate fit needs positive finite values, got {v} at t = {t}"
            )));
        }
        xs.push((t as f64).ln());
        ys.push(v.ln());
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(DekiError::InvalidArgument(format!(
            "rate fit needs at least {MIN_FIT_POINTS} points in the window, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    Ok(sxy / sxx)
}

pub fn fit_rate(records: &[RunRecord], field: RecordField, window: FitWindow) -> Result<f64> {
    let points: Vec<_> = records.iter().map(|r| (r.t, r.get(field))).collect();
    fit_power_law(&points, window)
}

/// Pointwise mean of one field across runs of equal length.
pub fn mean_trajectory(runs: &[Vec<RunRecord>], field: RecordField) -> Result<Vec<(usize, f64)>> {
    let first = runs
        .first()
        .ok_or_else(|| DekiError::InvalidArgument("no runs to average".into()))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(DekiError::Dimension("runs have different lengths".into()));
    }
    let k = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let s: f64 = runs.iter().map(|r| r[i].get(field)).sum();
            (first[i].t, s / k)
        })
        .collect())
}

/// Shortest round-trip decimal form; `NaN` for missing values.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", RECORD_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            format_value(r.spread_energy),
            format_value(r.lambda_min_c),
            format_value(r.lambda_max_c),
            format_value(r.loss_gap),
            format_value(r.err_ref),
            format_value(r.err_truth)
        )?;
    }
    Ok(())
}

pub fn read_records_csv<R: BufRead>(input: R) -> Result<Vec<RunRecord>> {
    let bad = |detail: String| DekiError::Format {
        what: "records.csv",
        detail,
    };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))??;
    if header.trim() != RECORD_COLUMNS.join(",") {
        return Err(bad(format!("unexpected header `{header}`")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != RECORD_COLUMNS.len() {
            return Err(bad(format!("row {} has {} columns", i + 1, cols.len())));
        }
        let num = |k: usize| {
            cols[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))
        };
        records.push(RunRecord {
            t: cols[0]
                .trim()
                .parse()
                .map_err(|e| bad(format!("row {}: {e}", i + 1)))?,
            spread_energy: num(1)?,
            lambda_min_c: num(2)?,
            lambda_max_c: num(3)?,
            loss_gap: num(4)?,
            err_ref: num(5)?,
            err_truth: num(6)?,
        });
    }
    Ok(records)
}

/// Hypotheses of the convergence theory evaluated for one initialization.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TheoryReport {
    pub ensemble_size: usize,
    pub dim: usize,
    pub alpha: f64,
    pub e0: f64,
    pub lambda_min_c0: f64,
    pub lambda_max_c0: f64,
    pub a_max: f64,
    pub h_max: f64,
    /// Constant step in use; `None` for a decaying schedule.
    pub h: Option<f64>,
    /// Lower bound on `h C_0`, i.e. `h * lambda_min(C_0)`.
    pub sigma_l: Option<f64>,
    /// Rate exponent `2 alpha sigma_l`.
    pub lambda: Option<f64>,
    pub full_rank: bool,
    pub step_ok: bool,
    pub lambda_ok: bool,
}

impl TheoryReport {
    pub fn evaluate(
        ens0: &Ensemble,
        alpha: f64,
        a_max: f64,
        schedule: &StepSchedule,
    ) -> Result<Self> {
        let stats = ens0.stats();
        let (lmin, lmax) = covariance_extremes(&stats);
        let e0 = stats.spread_energy;
        let h_max = if e0 > 0.0 {
            step_size_bound(e0, alpha, a_max, ens0.size())?
        } else {
            f64::INFINITY
        };
        // relative slack so eigenvalues of a rank-deficient C_0 read as zero
        let full_rank = ens0.size() > ens0.dim() && lmin > 1e-12 * lmax.max(f64::MIN_POSITIVE);
        let lmin = if full_rank { lmin } else { 0.0 };
        let h = schedule.constant_step();
        let sigma_l = h.map(|h| h * lmin);
        let lambda = sigma_l.map(|s| 2.0 * alpha * s);
        Ok(TheoryReport {
            ensemble_size: ens0.size(),
            dim: ens0.dim(),
            alpha,
            e0,
            lambda_min_c0: lmin,
            lambda_max_c0: lmax,
            a_max,
            h_max,
            h,
            sigma_l,
            lambda,
            full_rank,
            step_ok: h.is_some_and(|h| h <= h_max),
            lambda_ok: lambda.is_some_and(|l| l > 0.0 && l < 1.0),
        })
    }

    /// All hypotheses hold.
    pub fn passes(&self) -> bool {
        self.full_rank && self.step_ok && self.lambda_ok
    }
}
