//! Experiment configuration: presets, JSON layering and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{DekiError, Result};
use crate::mcmc::AcceptanceRule;
use crate::random_field::kle::DEFAULT_TRUNCATION;
use crate::random_field::MaternParams;
use crate::update::Variant;

/// Gaussian random field: Matérn correlation plus a constant mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub ell: f64,
    pub nu: f64,
    pub mean: f64,
}

impl FieldSpec {
    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.ell, self.nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    /// Number of members `J`.
    pub size: usize,
    /// Standard deviation of the initial draw.
    pub sigma0: f64,
    /// Rescale the initial deviations so that `C_0 = sigma0^2` on their span.
    pub whiten: bool,
}

/// How the step size is chosen once the initial ensemble is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSpec {
    /// `h = fraction * step_size_bound(E_0, alpha, A_max, J)`.
    Theory {
        fraction: f64,
    },
    Constant {
        h: f64,
    },
    /// `eta_t = 1/(t+1)`.
    Reciprocal,
    /// Constant `h` with `2 alpha h mu = lambda`, where `mu` is the smallest
    /// positive eigenvalue of `C_0`.
    TargetRate {
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Iid,
    Periodic,
    Ergodic,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Iid, StreamKind::Periodic, StreamKind::Ergodic];

    pub fn name(&self) -> &'static str {
        match self {
            StreamKind::Iid => "iid",
            StreamKind::Periodic => "periodic",
            StreamKind::Ergodic => "ergodic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub kind: StreamKind,
    /// Observation points per step `K`.
    pub points: usize,
    /// Strips for the periodic stream.
    pub subdomains: usize,
    /// pCN step parameter.
    pub beta: f64,
    /// KLE coefficients driven by the chain.
    pub chain_truncation: usize,
    pub acceptance: AcceptanceRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Interior points per axis.
    pub grid_n: usize,
    pub truth: FieldSpec,
    /// Log-diffusion field. Its mean is also the mean of the ergodic chain's fields.
    pub coefficient: FieldSpec,
    /// KLE truncation for the ground truth and the fixed coefficient; `None`
    /// means `min(d, 200)`.
    pub kle_truncation: Option<usize>,
    pub ensemble: EnsembleSpec,
    pub horizon: usize,
    pub alpha: f64,
    pub step: StepSpec,
    pub variant: Variant,
    pub noise_sigma: f64,
    pub stream: StreamSpec,
    /// First seed; required before a run.
    pub seed: Option<u64>,
    /// Runs use seeds `seed, seed + 1, ...`.
    pub replicates: usize,
    /// Draws used for the reference solution and the long-run average `A`.
    pub reference_draws: usize,
    /// Draws used to estimate `A_max`.
    pub warmup_draws: usize,
    pub a_max_inflation: f64,
    pub record_every: usize,
    pub output: PathBuf,
}

pub const PRESETS: [&str; 2] = ["desk", "paper"];

impl ExperimentConfig {
    /// Desk-scale profile: `n = 7`, `J = 50`, `T = 2000`, 20 seeds.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            grid_n: 7,
            truth: FieldSpec {
                ell: 0.07,
                nu: 3.4,
                mean: 0.0,
            },
            coefficient: FieldSpec {
                ell: 0.2,
                nu: 2.0,
                mean: -2.0,
            },
            kle_truncation: None,
            ensemble: EnsembleSpec {
                size: 50,
                sigma0: 1.0,
                whiten: true,
            },
            horizon: 2000,
            alpha: 2.0,
            step: StepSpec::TargetRate { lambda: 0.9 },
            variant: Variant::Unperturbed,
            noise_sigma: 0.01,
            stream: StreamSpec {
                kind: StreamKind::Iid,
                points: 50,
                subdomains: 10,
                beta: 0.9,
                chain_truncation: 10,
                acceptance: AcceptanceRule::TargetRatio,
            },
            seed: None,
            replicates: 20,
            reference_draws: 2000,
            warmup_draws: 100,
            a_max_inflation: 1.1,
            record_every: 1,
            output: PathBuf::from("runs/desk"),
        }
    }

    /// Larger profile following the published parameter statements.
    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            grid_n: 10,
            ensemble: EnsembleSpec {
                size: 101,
                ..Self::desk().ensemble
            },
            horizon: 10_000,
            step: StepSpec::Reciprocal,
            replicates: 1,
            reference_draws: 10_000,
            output: PathBuf::from("runs/paper"),
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(DekiError::Config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Layers `file` and then `overrides` (both JSON objects, possibly
    /// partial) over a preset. A `"preset"` key in the file selects the base
    /// unless `preset` is given.
    pub fn layered(preset: Option<&str>, file: Option<Value>, overrides: Value) -> Result<Self> {
        let mut file = file.unwrap_or_else(|| Value::Object(Default::default()));
        let file_preset = match &mut file {
            Value::Object(map) => match map.remove("preset") {
                Some(Value::String(s)) => Some(s),
                Some(other) => {
                    return Err(DekiError::Config(format!(
                        "`preset` must be a string, got {other}"
                    )))
                }
                None => None,
            },
            _ => {
                return Err(DekiError::Config(
                    "configuration file must contain a JSON object".into(),
                ))
            }
        };
        let base = Self::preset(preset.or(file_preset.as_deref()).unwrap_or("desk"))?;
        let mut value = serde_json::to_value(base)?;
        merge(&mut value, file);
        merge(&mut value, overrides);
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| DekiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| DekiError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.grid_n * self.grid_n
    }

    pub fn truncation(&self) -> usize {
        self.kle_truncation
            .unwrap_or_else(|| self.dim().min(DEFAULT_TRUNCATION))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let first = self.seed.ok_or_else(|| {
            DekiError::Config("a seed is required for reproducibility; pass --seed".into())
        })?;
        (0..self.replicates as u64)
            .map(|k| {
                first
                    .checked_add(k)
                    .ok_or_else(|| DekiError::Config("seed range overflows u64".into()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DekiError::Config(msg));
        if self.grid_n < 2 {
            return fail(format!("grid_n must be at least 2, got {}", self.grid_n));
        }
        for (what, f) in [("truth", &self.truth), ("coefficient", &self.coefficient)] {
            if f.matern().is_err() {
                return fail(format!(
                    "{what}: ell and nu must be positive, got ell = {}, nu = {}",
                    f.ell, f.nu
                ));
            }
            if !f.mean.is_finite() {
                return fail(format!("{what}: mean must be finite"));
            }
        }
        if let Some(k) = self.kle_truncation {
            if k == 0 || k > self.dim() {
                return fail(format!(
                    "kle_truncation must lie in 1..={}, got {k}",
                    self.dim()
                ));
            }
        }
        if self.ensemble.size < 2 {
            return fail(format!(
                "ensemble.size must be at least 2, got {}",
                self.ensemble.size
            ));
        }
        if !(self.ensemble.sigma0 > 0.0 && self.ensemble.sigma0.is_finite()) {
            return fail(format!(
                "ensemble.sigma0 must be positive, got {}",
                self.ensemble.sigma0
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        match self.step {
            StepSpec::Theory { fraction } if !(fraction > 0.0 && fraction.is_finite()) => {
                return fail(format!("step.fraction must be positive, got {fraction}"));
            }
            StepSpec::Constant { h } if !(h > 0.0 && h.is_finite()) => {
                return fail(format!("step.h must be positive, got {h}"));
            }
            StepSpec::TargetRate { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                return fail(format!("step.lambda must be positive, got {lambda}"));
            }
            _ => {}
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            ));
        }
        if self.variant == Variant::Perturbed && self.noise_sigma == 0.0 {
            return fail("the perturbed variant needs noise_sigma > 0".into());
        }
        let s = &self.stream;
        if s.points == 0 {
            return fail("stream.points must be at least 1".into());
        }
        if s.subdomains == 0 {
            return fail("stream.subdomains must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&s.beta) {
            return fail(format!("stream.beta must lie in [0, 1], got {}", s.beta));
        }
        if s.chain_truncation == 0 || s.chain_truncation > self.dim() {
            return fail(format!(
                "stream.chain_truncation must lie in 1..={}, got {}",
                self.dim(),
                s.chain_truncation
            ));
        }
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if self.reference_draws == 0 {
            return fail("reference_draws must be at least 1".into());
        }
        if self.warmup_draws == 0 {
            return fail("warmup_draws must be at least 1".into());
        }
        if !(self.a_max_inflation >= 1.0 && self.a_max_inflation.is_finite()) {
            return fail(format!(
                "a_max_inflation must be at least 1, got {}",
                self.a_max_inflation
            ));
        }
        if self.record_every == 0 {
            return fail("record_every must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical JSON text: compact with object keys sorted.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&serde_json::to_value(self)?)?)
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_json()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Recursive object merge; non-object values in `patch` replace `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}
