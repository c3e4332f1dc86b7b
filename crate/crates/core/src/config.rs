//! Run configuration: one flat TOML file of `key = value` lines.
//!
//! ```toml
//! # root seed; every module derives its own stream from it
//! seed = 0
//!
//! # risk
//! alpha = 0.99                 # CVaR significance level
//! cvar_variant = "standard"    # or "paper"
//! risk_off = false             # pin the risk term to zero
//! # risk_reference_hours = 2.0 # normalization scale (default: mean requested hours per EVSE)
//!
//! # training
//! episodes = 2000
//! learning_rate = 0.001
//! gamma = 0.9
//! beta = 0.05
//! hidden = 64
//! clip = 40.0
//! sessions_per_update = 5
//!
//! # site
//! site_id = "site"
//! dso_capacity_kw = 150.0
//! supply_capacity_kw = 50.0    # every EVSE
//! switching_minutes = 5.0
//! step_minutes = 15            # queue re-presentation step
//!
//! # synthetic data
//! gen_sessions = 200
//! gen_evse_count = 4
//! gen_cv_fraction = 0.7
//! gen_mean_interarrival_minutes = 180.0
//! gen_energy_kwh = [10.0, 50.0]
//! gen_power_kw = [3.0, 12.0]
//! gen_cv_idle_minutes = [30.0, 240.0]
//! gen_energy_inflation = [1.0, 2.0]
//! gen_time_inflation = [1.0, 3.0]
//! gen_receiving_capacity_kw = 50.0
//!
//! # paths (command-line flags take precedence)
//! # sessions = "sessions.json"
//! # model = "model.json"
//! # site_file = "site.json"    # full SiteConfig, overrides the site keys above
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::TrainConfig;
use crate::risk::CvarVariant;
use crate::scheduler::{DEFAULT_STEP_MINUTES, DEFAULT_SWITCHING_MINUTES};
use crate::session::{GeneratorConfig, SessionBatch, SiteConfig, DEFAULT_RECEIVING_CAPACITY_KW};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub alpha: f64,
    pub cvar_variant: CvarVariant,
    pub risk_off: bool,
    pub risk_reference_hours: Option<f64>,

    pub episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub beta: f64,
    pub hidden: usize,
    pub clip: f64,
    pub sessions_per_update: usize,

    pub site_id: String,
    pub dso_capacity_kw: f64,
    pub supply_capacity_kw: f64,
    pub switching_minutes: f64,
    pub step_minutes: i64,

    pub gen_sessions: usize,
    pub gen_evse_count: usize,
    pub gen_cv_fraction: f64,
    pub gen_mean_interarrival_minutes: f64,
    pub gen_energy_kwh: (f64, f64),
    pub gen_power_kw: (f64, f64),
    pub gen_cv_idle_minutes: (f64, f64),
    pub gen_energy_inflation: (f64, f64),
    pub gen_time_inflation: (f64, f64),
    pub gen_receiving_capacity_kw: f64,

    pub sessions: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub site_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let g = GeneratorConfig::default();
        RunConfig {
            seed: 0,
            alpha: t.alpha,
            cvar_variant: t.cvar_variant,
            risk_off: t.risk_off,
            risk_reference_hours: t.risk_reference_hours,
            episodes: t.episodes,
            learning_rate: t.learning_rate,
            gamma: t.gamma,
            beta: t.beta,
            hidden: t.hidden,
            clip: t.clip,
            sessions_per_update: t.sessions_per_update,
            site_id: "site".into(),
            dso_capacity_kw: 150.0,
            supply_capacity_kw: 50.0,
            switching_minutes: DEFAULT_SWITCHING_MINUTES,
            step_minutes: DEFAULT_STEP_MINUTES,
            gen_sessions: g.sessions,
            gen_evse_count: g.evse_count,
            gen_cv_fraction: g.cv_fraction,
            gen_mean_interarrival_minutes: g.mean_interarrival_minutes,
            gen_energy_kwh: g.energy_kwh,
            gen_power_kw: g.power_kw,
            gen_cv_idle_minutes: g.cv_idle_minutes,
            gen_energy_inflation: g.energy_inflation,
            gen_time_inflation: g.time_inflation,
            gen_receiving_capacity_kw: DEFAULT_RECEIVING_CAPACITY_KW,
            sessions: None,
            model: None,
            site_file: None,
        }
    }
}

/// Splits the root seed into an independent seed per module.
pub fn derive_seed(root: u64, module: &str) -> u64 {
    // FNV-1a over the label, then a SplitMix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in module.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.step_minutes <= 0 {
            return Err(ConfigError::Invalid(format!("step_minutes {} must be positive", self.step_minutes)));
        }
        self.train_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha,
            hidden: self.hidden,
            clip: self.clip,
            seed: derive_seed(self.seed, "train"),
            cvar_variant: self.cvar_variant,
            risk_off: self.risk_off,
            risk_reference_hours: self.risk_reference_hours,
            sessions_per_update: self.sessions_per_update,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            sessions: self.gen_sessions,
            evse_count: self.gen_evse_count,
            cv_fraction: self.gen_cv_fraction,
            mean_interarrival_minutes: self.gen_mean_interarrival_minutes,
            energy_kwh: self.gen_energy_kwh,
            power_kw: self.gen_power_kw,
            cv_idle_minutes: self.gen_cv_idle_minutes,
            energy_inflation: self.gen_energy_inflation,
            time_inflation: self.gen_time_inflation,
            receiving_capacity_kw: self.gen_receiving_capacity_kw,
            ..GeneratorConfig::default()
        }
    }

    pub fn generator_seed(&self) -> u64 {
        derive_seed(self.seed, "gen-data")
    }

    /// The site from `site_file` if set, otherwise from the flat keys; in
    /// both cases extended to every EVSE in `batch`.
    pub fn site_config(&self, batch: &SessionBatch) -> Result<SiteConfig, ConfigError> {
        let base = match &self.site_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.clone(), message: e.to_string() })?
            }
            None => SiteConfig { site_id: self.site_id.clone(), dso_capacity_kw: self.dso_capacity_kw, evses: Vec::new() },
        };
        let site = base.covering(batch, self.supply_capacity_kw, self.switching_minutes);
        site.validate().map_err(ConfigError::Invalid)?;
        Ok(site)
    }
}
