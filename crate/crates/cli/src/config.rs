//! Run configuration: TOML file, command-line overrides, defaults.

use std::path::{Path, PathBuf};

use fmdp_core::agent::{HyperParams, RewardMode};
use fmdp_core::backtest::BacktestConfig;
use fmdp_core::env::{Action, EnvConfig};
use fmdp_core::market::IndicatorConfig;
use fmdp_core::qnet::{HeadActivation, NetDims};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DAY_SECONDS: i64 = 86_400;

/// One price file to run, for multi-instrument configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSource {
    pub name: String,
    pub data_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_path: Option<PathBuf>,
    pub instrument: String,
    /// Bar length in seconds.
    pub bar_seconds: i64,
    pub window: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub head_activation: HeadActivation,
    /// Stop after this many decisions instead of at the end of the data.
    pub total_steps: Option<usize>,
    /// Replay these action codes instead of learning.
    pub scripted_actions: Option<Vec<u8>>,
    pub indicators: IndicatorConfig,
    pub env: EnvConfig,
    pub agent: HyperParams,
    pub network: NetDims,
    pub backtest: BacktestConfig,
    /// Several price files run as independent experiments.
    pub instruments: Vec<InstrumentSource>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            instrument: "instrument".into(),
            bar_seconds: DAY_SECONDS,
            window: 30,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            head_activation: HeadActivation::default(),
            total_steps: None,
            scripted_actions: None,
            indicators: IndicatorConfig::default(),
            env: EnvConfig::default(),
            agent: HyperParams::default(),
            network: NetDims::default(),
            backtest: BacktestConfig::default(),
            instruments: Vec::new(),
        }
    }
}

/// Values given on the command line; each one replaces the file value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data_path: Option<PathBuf>,
    pub instrument: Option<String>,
    pub bar_seconds: Option<i64>,
    pub window: Option<usize>,
    pub commission: Option<f64>,
    pub max_contracts: Option<u32>,
    pub reward_mode: Option<RewardMode>,
    pub head_activation: Option<HeadActivation>,
    pub total_steps: Option<usize>,
    pub memory_capacity: Option<usize>,
    pub tau: Option<f64>,
}

impl RunConfig {
    /// Reads `path` if given, otherwise starts from defaults. Relative data
    /// paths in the file are taken relative to the file's directory; the
    /// output directory stays relative to the working directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
            _ => CliError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(p) = cfg.data_path.as_mut() {
            *p = base.join(&*p);
        }
        for src in &mut cfg.instruments {
            src.data_path = base.join(&src.data_path);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(self.seed, o.seed);
        set!(self.out_dir, o.out_dir);
        set!(self.instrument, o.instrument);
        set!(self.bar_seconds, o.bar_seconds);
        set!(self.window, o.window);
        set!(self.env.commission, o.commission);
        set!(self.env.max_contracts, o.max_contracts);
        set!(self.agent.reward_mode, o.reward_mode);
        set!(self.head_activation, o.head_activation);
        set!(self.agent.memory_capacity, o.memory_capacity);
        set!(self.agent.tau, o.tau);
        if o.data_path.is_some() {
            self.data_path = o.data_path.clone();
            self.instruments.clear();
        }
        if o.total_steps.is_some() {
            self.total_steps = o.total_steps;
        }
    }

    /// Checks ranges and that every referenced data file exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |m: String| Err(CliError::Config(m));
        if self.bar_seconds <= 0 {
            return cfg(format!(
                "bar_seconds must be positive, got {}",
                self.bar_seconds
            ));
        }
        if self.window == 0 {
            return cfg("window must be at least 1".into());
        }
        self.env
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.agent
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let base = self.backtest.base_capital;
        if base.is_nan() || base <= 0.0 || self.backtest.periods_per_year == 0 {
            return cfg("backtest base_capital and periods_per_year must be positive".into());
        }
        if let Some(script) = &self.scripted_actions {
            for &code in script {
                Action::try_from(code).map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        let sources = self.sources();
        if sources.is_empty() {
            return cfg("no data file: set data_path, instruments, or pass --data".into());
        }
        for src in &sources {
            if !src.data_path.is_file() {
                return Err(CliError::MissingFile(src.data_path.clone()));
            }
        }
        Ok(())
    }

    /// The configured price files: the instrument list if present, otherwise
    /// the single `data_path`.
    pub fn sources(&self) -> Vec<InstrumentSource> {
        if !self.instruments.is_empty() {
            return self.instruments.clone();
        }
        self.data_path
            .iter()
            .map(|p| InstrumentSource {
                name: self.instrument.clone(),
                data_path: p.clone(),
            })
            .collect()
    }

    pub fn scripted(&self) -> Option<Vec<Action>> {
        self.scripted_actions.as_ref().map(|s| {
            s.iter()
                .map(|&c| Action::try_from(c).expect("validated action codes"))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.env.commission, 2.0);
        assert_eq!(c.env.max_contracts, 5);
        assert_eq!(c.agent.gamma, 0.8);
        assert_eq!(c.agent.lr, 0.001);
        assert_eq!(c.agent.epsilon, 1.0);
        assert_eq!(c.agent.epsilon_decay, 0.995);
        assert_eq!(c.agent.epsilon_min, 0.01);
        assert_eq!(c.window, 30);
    }

    #[test]
    fn file_then_flags_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "data_path = \"prices.csv\"\nseed = 4\nwindow = 10\n[env]\ncommission = 1.5\n[agent]\ntau = 0.01\n",
        )
        .unwrap();
        let mut c = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(
            c.data_path.as_deref(),
            Some(dir.path().join("prices.csv").as_path())
        );
        assert_eq!(
            (c.seed, c.window, c.env.commission, c.agent.tau),
            (4, 10, 1.5, 0.01)
        );
        assert_eq!(c.env.max_contracts, 5);

        c.apply(&Overrides {
            seed: Some(9),
            commission: Some(0.0),
            ..Overrides::default()
        });
        assert_eq!((c.seed, c.window, c.env.commission), (9, 10, 0.0));
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "windw = 3\n").unwrap();
        assert!(matches!(
            RunConfig::load(Some(&path)),
            Err(CliError::Config(_))
        ));

        let missing = dir.path().join("nope.toml");
        let err = RunConfig::load(Some(&missing)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope.toml"));

        let c = RunConfig {
            data_path: Some(dir.path().join("absent.csv")),
            ..RunConfig::default()
        };
        let err = c.validate().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("absent.csv"));
    }

    #[test]
    fn bad_script_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("p.csv");
        std::fs::write(&data, "timestamp,price\n").unwrap();
        let c = RunConfig {
            data_path: Some(data),
            scripted_actions: Some(vec![1, 3]),
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
