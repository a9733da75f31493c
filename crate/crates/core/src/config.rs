//! Run configuration files.
//!
//! A file is one JSON object with a single key naming what it describes:
//!
//! ```json
//! {"lambda": {"xi": 600, "strength": 1000, "sigma": 0.01, "kappa": 0.005, "t_i": 0.22}}
//! ```
//!
//! `lambda` and `n` describe one simulation, `plan` an ensemble experiment
//! (see [`ExperimentPlan`]). Unknown fields are rejected. Loading fills in
//! defaults, validates the physics and records which values were defaulted
//! so the run manifest can echo them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{default_eit_peak_time, trial_keys, DemParams, EitParams, ExperimentPlan, Resolution, Trial};
use crate::lambda::{DecayModel, LambdaConfig};
use crate::nscheme::NConfig;
use crate::propagation::Scheme;
use crate::protocol::{build_dem_attempt, EitTiming, ProbeSpec};

/// Unit convention carried by every file this crate writes.
pub const UNITS: &str = "time in tau=1/Gamma; rates and Rabi frequencies in Gamma; length in L";

const DEFAULT_SEED: u64 = 2024;
const DEFAULT_AMPLITUDE: f64 = 0.01;

/// A single Lambda-system run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaFile {
    /// Optical depth.
    pub xi: f64,
    /// Disorder strength `D_c`.
    pub strength: f64,
    /// Correlation length of the key.
    pub sigma: f64,
    /// Probe duration.
    pub kappa: f64,
    /// Inversion time.
    pub t_i: f64,
    /// Probe peak; `10 kappa` when absent.
    pub t_p: Option<f64>,
    pub amplitude: Option<f64>,
    /// End of the window; long enough for the echo when absent.
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub trial: Option<Trial>,
    pub decay: Option<DecayModel>,
    pub resolution: Option<Resolution>,
    pub snapshot_times: Option<Vec<f64>>,
}

/// A single N-system run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NFile {
    pub xi: f64,
    /// Disorder strength `D_s` of the switching pulses.
    pub switch_strength: f64,
    pub sigma: f64,
    pub kappa: Option<f64>,
    /// Probe peak; places the pulse mid-medium at `t_off` when absent.
    pub t_p: Option<f64>,
    pub amplitude: Option<f64>,
    pub timing: Option<EitTiming>,
    pub gamma4: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub trial: Option<Trial>,
    pub decay: Option<DecayModel>,
    pub resolution: Option<Resolution>,
    pub snapshot_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigFile {
    Lambda(LambdaFile),
    N(NFile),
    Plan(ExperimentPlan),
}

/// Resolved single Lambda run.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRun {
    pub params: DemParams,
    pub seed: u64,
    pub trial: Trial,
    pub snapshot_times: Vec<f64>,
}

impl LambdaRun {
    pub fn config(&self) -> Result<LambdaConfig> {
        let grid = self.params.grid()?;
        let keys = trial_keys(&grid.z, self.params.spec()?, self.seed, self.trial)?;
        let (Some(enc), Some(dec)) = (keys.encrypt, keys.decrypt) else {
            return Err(Error::invalid("trial", "the echo memory needs both keys"));
        };
        Ok(LambdaConfig {
            optical_depth: self.params.optical_depth,
            probe: self.params.probe,
            control: build_dem_attempt(&enc, &dec, self.params.t_i, grid.t.t_end())?,
            grid,
            decay: self.params.decay,
            snapshot_times: self.snapshot_times.clone(),
        })
    }
}

/// Resolved single N run.
#[derive(Debug, Clone, PartialEq)]
pub struct NRun {
    pub params: EitParams,
    pub seed: u64,
    pub trial: Trial,
    pub snapshot_times: Vec<f64>,
}

impl NRun {
    pub fn config(&self) -> Result<NConfig> {
        let grid = self.params.grid()?;
        let keys = trial_keys(&grid.z, self.params.spec()?, self.seed, self.trial)?;
        let mut cfg = self.params.config(grid, keys.encrypt.as_ref(), keys.decrypt.as_ref())?;
        cfg.snapshot_times = self.snapshot_times.clone();
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Lambda(LambdaRun),
    N(NRun),
    Plan(ExperimentPlan),
}

impl RunConfig {
    pub fn scheme(&self) -> Scheme {
        match self {
            RunConfig::Lambda(_) => Scheme::Lambda,
            RunConfig::N(_) => Scheme::N,
            RunConfig::Plan(p) => p.scheme,
        }
    }

    pub fn master_seed(&self) -> u64 {
        match self {
            RunConfig::Lambda(r) => r.seed,
            RunConfig::N(r) => r.seed,
            RunConfig::Plan(p) => p.master_seed,
        }
    }

    pub fn set_master_seed(&mut self, seed: u64) {
        match self {
            RunConfig::Lambda(r) => r.seed = seed,
            RunConfig::N(r) => r.seed = seed,
            RunConfig::Plan(p) => p.master_seed = seed,
        }
    }

    /// Back to the on-disk form with every default written out.
    pub fn to_file(&self) -> ConfigFile {
        match self {
            RunConfig::Lambda(r) => ConfigFile::Lambda(LambdaFile {
                xi: r.params.optical_depth,
                strength: r.params.strength,
                sigma: r.params.correlation_length,
                kappa: r.params.probe.duration,
                t_i: r.params.t_i,
                t_p: Some(r.params.probe.peak_time),
                amplitude: Some(r.params.probe.amplitude),
                t_end: Some(r.params.t_end),
                seed: Some(r.seed),
                trial: Some(r.trial),
                decay: Some(r.params.decay),
                resolution: Some(r.params.resolution),
                snapshot_times: Some(r.snapshot_times.clone()),
            }),
            RunConfig::N(r) => ConfigFile::N(NFile {
                xi: r.params.optical_depth,
                switch_strength: r.params.switch_strength,
                sigma: r.params.correlation_length,
                kappa: Some(r.params.probe.duration),
                t_p: Some(r.params.probe.peak_time),
                amplitude: Some(r.params.probe.amplitude),
                timing: Some(r.params.timing),
                gamma4: Some(r.params.gamma4),
                t_end: Some(r.params.t_end),
                seed: Some(r.seed),
                trial: Some(r.trial),
                decay: Some(r.params.decay),
                resolution: Some(r.params.resolution),
                snapshot_times: Some(r.snapshot_times.clone()),
            }),
            RunConfig::Plan(p) => ConfigFile::Plan(p.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::Lambda(r) => {
                r.params.validate()?;
                check_trial(r.trial, Scheme::Lambda)?;
                check_snapshots(&r.snapshot_times, r.params.t_end)
            }
            RunConfig::N(r) => {
                r.params.validate()?;
                check_snapshots(&r.snapshot_times, r.params.t_end)
            }
            RunConfig::Plan(p) => p.validate(),
        }
    }
}

fn check_trial(trial: Trial, scheme: Scheme) -> Result<()> {
    if !trial.allowed_for(scheme) {
        return Err(Error::invalid(
            "trial",
            format!("`{}` is not a valid trial for the {scheme:?} scheme", trial.name()),
        ));
    }
    Ok(())
}

fn check_snapshots(times: &[f64], t_end: f64) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0 && **t <= t_end)) {
        return Err(Error::OutsideWindow { t: *t, t_end });
    }
    Ok(())
}

impl LambdaFile {
    fn resolve(&self) -> LambdaRun {
        let d = DemParams::default();
        let t_p = self.t_p.unwrap_or(10.0 * self.kappa);
        LambdaRun {
            params: DemParams {
                optical_depth: self.xi,
                strength: self.strength,
                correlation_length: self.sigma,
                probe: ProbeSpec {
                    peak_time: t_p,
                    duration: self.kappa,
                    amplitude: self.amplitude.unwrap_or(DEFAULT_AMPLITUDE),
                },
                t_i: self.t_i,
                // Echo at 2 t_i - t_p plus room for its tail.
                t_end: self
                    .t_end
                    .unwrap_or(d.t_end.max(2.0 * self.t_i - t_p + 10.0 * self.kappa + 0.01)),
                decay: self.decay.unwrap_or_default(),
                resolution: self.resolution.unwrap_or_default(),
            },
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            trial: self.trial.unwrap_or(Trial::Key1),
            snapshot_times: self.snapshot_times.clone().unwrap_or_default(),
        }
    }
}

impl NFile {
    fn resolve(&self) -> NRun {
        let d = EitParams::default();
        let timing = self.timing.unwrap_or(d.timing);
        let kappa = self.kappa.unwrap_or(d.probe.duration);
        NRun {
            params: EitParams {
                optical_depth: self.xi,
                timing,
                switch_strength: self.switch_strength,
                correlation_length: self.sigma,
                probe: ProbeSpec {
                    peak_time: self
                        .t_p
                        .unwrap_or_else(|| default_eit_peak_time(self.xi, &timing, kappa)),
                    duration: kappa,
                    amplitude: self.amplitude.unwrap_or(DEFAULT_AMPLITUDE),
                },
                gamma4: self.gamma4.unwrap_or(d.gamma4),
                t_end: self.t_end.unwrap_or(d.t_end),
                decay: self.decay.unwrap_or_default(),
                resolution: self.resolution.unwrap_or_default(),
            },
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            trial: self.trial.unwrap_or(Trial::Key1),
            snapshot_times: self.snapshot_times.clone().unwrap_or_default(),
        }
    }
}

/// A value filled in because the file did not give one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultedField {
    /// JSON pointer into the resolved config.
    pub field: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub path: PathBuf,
    /// SHA-256 of the resolved config, hex encoded.
    pub hash: String,
    pub run: RunConfig,
    /// The resolved config in file form, every default written out.
    pub resolved: Value,
    pub defaults: Vec<DefaultedField>,
}

impl LoadedConfig {
    /// Same config with another master seed; hash and resolved form follow.
    pub fn with_master_seed(mut self, seed: u64) -> Result<Self> {
        self.run.set_master_seed(seed);
        let again = finish(self.run, None, &self.path)?;
        Ok(Self {
            defaults: self.defaults,
            ..again
        })
    }
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_config(&text, path)
}

/// Parses config text; `origin` only labels diagnostics.
pub fn parse_config(text: &str, origin: &Path) -> Result<LoadedConfig> {
    let schema_error = |field: String, e: &serde_json::Error| Error::Config {
        path: origin.to_path_buf(),
        field,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let raw: Value = serde_json::from_str(text).map_err(|e| schema_error(".".into(), &e))?;
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ConfigFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        schema_error(field, e.inner())
    })?;

    let run = match &file {
        ConfigFile::Lambda(f) => RunConfig::Lambda(f.resolve()),
        ConfigFile::N(f) => RunConfig::N(f.resolve()),
        ConfigFile::Plan(p) => RunConfig::Plan(p.clone()),
    };
    run.validate().map_err(|e| Error::ConfigRejected {
        path: origin.to_path_buf(),
        source: Box::new(e),
    })?;
    finish(run, Some(&raw), origin)
}

/// Wraps an in-memory config as if it had been loaded, for runs built in code.
pub fn from_run(run: RunConfig, origin: &Path) -> Result<LoadedConfig> {
    run.validate()?;
    finish(run, None, origin)
}

fn finish(run: RunConfig, raw: Option<&Value>, origin: &Path) -> Result<LoadedConfig> {
    let resolved = serde_json::to_value(run.to_file()).map_err(|e| Error::Format {
        context: "resolved config".into(),
        reason: e.to_string(),
    })?;
    let mut defaults = Vec::new();
    if let Some(raw) = raw {
        collect_defaults(raw, &resolved, String::new(), &mut defaults);
    }
    Ok(LoadedConfig {
        path: origin.to_path_buf(),
        hash: config_hash(&resolved),
        run,
        resolved,
        defaults,
    })
}

/// SHA-256 over the canonical JSON text (object keys sorted).
pub fn config_hash(resolved: &Value) -> String {
    hex::encode(Sha256::digest(resolved.to_string().as_bytes()))
}

fn collect_defaults(raw: &Value, resolved: &Value, prefix: String, out: &mut Vec<DefaultedField>) {
    let Value::Object(full) = resolved else {
        return;
    };
    for (key, value) in full {
        let path = format!("{prefix}/{key}");
        match raw.get(key) {
            None | Some(Value::Null) => out.push(DefaultedField {
                field: path,
                value: value.clone(),
            }),
            Some(given) => collect_defaults(given, value, path, out),
        }
    }
}
