//! Experiment configuration: a JSON file layered under command-line flags.
//!
//! Both layers share one partial shape, [`ConfigLayer`]; resolution fills
//! defaults and validates. A manifest written by a previous run is accepted
//! in place of a config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::environment::{CtrKind, LogGenParams, PriceKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::policy::DEFAULT_DELTA;

pub const DEFAULT_RUNS: usize = 24;
pub const DEFAULT_WINDOW: usize = 50;
pub const DEFAULT_ROUNDS: u64 = 20_000;
pub const DEFAULT_QUANTILE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Synthetic,
    Replay,
    BoundCheck,
    TailGuardDemo,
    GenLog,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Synthetic => "synthetic",
            Mode::Replay => "replay",
            Mode::BoundCheck => "bound_check",
            Mode::TailGuardDemo => "tail_guard_demo",
            Mode::GenLog => "gen_log",
        }
    }
}

/// An explicit ground-truth instance. Visibility defaults to the bundled profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub prices: Vec<f64>,
    pub ctrs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
}

impl InstanceSpec {
    /// Two unit-price arms at 0.8 and 0.1 under visibilities 1 and 0.5.
    pub fn reference() -> Self {
        Self {
            prices: vec![1.0, 1.0],
            ctrs: vec![0.8, 0.1],
            gammas: Some(vec![1.0, 0.5]),
        }
    }
}

/// Production-model stand-in for the tail-guard demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProductionModel {
    /// Log-normal spread of every prediction.
    pub noise: f64,
    /// Share of arms the model underestimates.
    pub cold_fraction: f64,
    /// Multiplier applied to underestimated arms.
    pub cold_discount: f64,
}

impl Default for ProductionModel {
    fn default() -> Self {
        Self {
            noise: 0.2,
            cold_fraction: 0.3,
            cold_discount: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticLayer {
    pub price_kind: Option<PriceKind>,
    pub ctr_kind: Option<CtrKind>,
    pub k: Option<usize>,
    pub real_ctr_file: Option<PathBuf>,
}

/// Every field optional; the shape of both the config file and the flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub mode: Option<Mode>,
    pub synthetic: Option<SyntheticLayer>,
    pub instance: Option<InstanceSpec>,
    pub log_path: Option<PathBuf>,
    #[serde(alias = "T")]
    pub rounds: Option<u64>,
    pub runs: Option<usize>,
    pub delta: Option<f64>,
    pub window: Option<usize>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub master_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub quantile: Option<f64>,
    pub confident_threshold: Option<u64>,
    pub production: Option<ProductionModel>,
    pub log_gen: Option<LogGenParams>,
}

impl ConfigLayer {
    /// Field-wise overlay: values set in `top` win.
    pub fn under(self, top: ConfigLayer) -> ConfigLayer {
        let synthetic = match (self.synthetic, top.synthetic) {
            (Some(base), Some(over)) => Some(SyntheticLayer {
                price_kind: over.price_kind.or(base.price_kind),
                ctr_kind: over.ctr_kind.or(base.ctr_kind),
                k: over.k.or(base.k),
                real_ctr_file: over.real_ctr_file.or(base.real_ctr_file),
            }),
            (base, over) => over.or(base),
        };
        ConfigLayer {
            mode: top.mode.or(self.mode),
            synthetic,
            instance: top.instance.or(self.instance),
            log_path: top.log_path.or(self.log_path),
            rounds: top.rounds.or(self.rounds),
            runs: top.runs.or(self.runs),
            delta: top.delta.or(self.delta),
            window: top.window.or(self.window),
            beta: top.beta.or(self.beta),
            alpha: top.alpha.or(self.alpha),
            master_seed: top.master_seed.or(self.master_seed),
            output_dir: top.output_dir.or(self.output_dir),
            quantile: top.quantile.or(self.quantile),
            confident_threshold: top.confident_threshold.or(self.confident_threshold),
            production: top.production.or(self.production),
            log_gen: top.log_gen.or(self.log_gen),
        }
    }
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub synthetic: SyntheticSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_path: Option<PathBuf>,
    pub rounds: u64,
    pub runs: usize,
    pub delta: f64,
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub quantile: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confident_threshold: Option<u64>,
    pub production: ProductionModel,
    pub log_gen: LogGenParams,
}

impl ExperimentConfig {
    pub fn resolve(layer: ConfigLayer) -> Result<Self> {
        let mode = layer
            .mode
            .ok_or_else(|| Error::Config("mode: missing required field".into()))?;
        let syn = layer.synthetic.unwrap_or_default();
        let config = Self {
            mode,
            synthetic: SyntheticSpec {
                price_kind: syn.price_kind.unwrap_or(PriceKind::FixedOne),
                ctr_kind: syn.ctr_kind.unwrap_or(CtrKind::RealSample),
                k: syn.k.unwrap_or(30),
                real_ctr_file: syn.real_ctr_file,
            },
            instance: layer.instance,
            log_path: layer.log_path,
            rounds: layer.rounds.unwrap_or(DEFAULT_ROUNDS),
            runs: layer.runs.unwrap_or(DEFAULT_RUNS),
            delta: layer.delta.unwrap_or(DEFAULT_DELTA),
            window: layer.window.unwrap_or(DEFAULT_WINDOW),
            beta: layer.beta,
            alpha: layer.alpha,
            master_seed: layer.master_seed.unwrap_or(0),
            output_dir: layer.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            quantile: layer.quantile.unwrap_or(DEFAULT_QUANTILE),
            confident_threshold: layer.confident_threshold,
            production: layer.production.unwrap_or_default(),
            log_gen: layer.log_gen.unwrap_or_default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.runs == 0 {
            return fail("runs: must be at least 1");
        }
        if self.rounds == 0 {
            return fail("rounds: must be at least 1");
        }
        if self.window == 0 {
            return fail("window: must be at least 1");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return fail("delta: must be positive and finite");
        }
        if self.synthetic.k == 0 {
            return fail("synthetic.k: must be at least 1");
        }
        if !(0.0..1.0).contains(&self.quantile) {
            return fail("quantile: must lie in [0, 1)");
        }
        let p = &self.production;
        if !(p.noise >= 0.0 && (0.0..=1.0).contains(&p.cold_fraction) && p.cold_discount >= 0.0) {
            return fail("production: noise and cold_discount must be nonnegative, cold_fraction in [0, 1]");
        }
        match self.mode {
            Mode::Replay if self.log_path.is_none() => fail("log_path: required in replay mode"),
            Mode::TailGuardDemo if self.beta.is_none() => fail("beta: required in tail_guard_demo mode"),
            Mode::TailGuardDemo if self.alpha.is_none() => fail("alpha: required in tail_guard_demo mode"),
            _ => Ok(()),
        }
    }
}

/// Parses a config file, which may also be a previously written manifest.
pub fn parse_layer(text: &str, origin: &Path) -> Result<ConfigLayer> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
    let (value, prefix) = match value {
        serde_json::Value::Object(mut map) if map.contains_key("run_seeds") => {
            (map.remove("config").unwrap_or_default(), "config.")
        }
        other => (other, ""),
    };
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { format!("{prefix}{path}: ") };
        Error::Config(format!("{}: {path}{}", origin.display(), e.inner()))
    })
}

/// Reads `file` (if any) and overlays `flags` on it.
pub fn parse_config(file: Option<&Path>, flags: ConfigLayer) -> Result<ExperimentConfig> {
    let base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_layer(&text, path)?
        }
        None => ConfigLayer::default(),
    };
    ExperimentConfig::resolve(base.under(flags))
}
