//! Run configuration read from TOML, with command-line overrides applied on
//! top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::mcmc::McmcConfig;
use crate::model::PredictorMode;
use crate::prior::{CoefficientPrior, DdpHyper, PartitionPrior};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "PNARM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "pnarm-out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub counts: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: PredictorMode,
    /// Population scale `c`; the mean population when absent.
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorConfig {
    Ddp { alpha: f64, h: f64 },
    Fmm {
        components: usize,
        #[serde(default = "default_gamma0")]
        gamma0: f64,
    },
}

fn default_gamma0() -> f64 {
    1.0
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Ddp { alpha: 1.0, h: 1.0 }
    }
}

impl PriorConfig {
    pub fn build(&self, net: &Network) -> Result<PartitionPrior> {
        match *self {
            PriorConfig::Ddp { alpha, h } => PartitionPrior::ddp(net, DdpHyper { alpha, h }),
            PriorConfig::Fmm { components, gamma0 } => PartitionPrior::fmm(components, gamma0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of leading time steps used for fitting; `T - 1` when absent.
    pub train_steps: Option<usize>,
    /// Validation window for chain stacking, in final training steps.
    pub window: usize,
    pub pit_seed: u64,
    pub quantiles: Vec<f64>,
    /// Cumulative mass at which forecast pmf tables stop.
    pub coverage: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            train_steps: None,
            window: 4,
            pit_seed: 0,
            quantiles: vec![0.025, 0.25, 0.5, 0.75, 0.975],
            coverage: 0.9999,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub coefficients: CoefficientPrior,
    pub mcmc: McmcConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Parses a TOML file. Relative paths inside it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut config.paths.counts,
            &mut config.paths.edges,
            &mut config.paths.covariates,
            &mut config.paths.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.mcmc.validate()?;
        self.coefficients.validate()?;
        if self.eval.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::config("quantiles must lie in [0, 1]"));
        }
        if !(self.eval.coverage > 0.0 && self.eval.coverage < 1.0) {
            return Err(Error::config("coverage must lie in (0, 1)"));
        }
        if let Some(c) = self.model.scale {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config(format!("population scale must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    pub fn counts_path(&self) -> Result<&Path> {
        self.paths.counts.as_deref().ok_or_else(|| Error::config("no counts file given"))
    }

    pub fn edges_path(&self) -> Result<&Path> {
        self.paths.edges.as_deref().ok_or_else(|| Error::config("no edges file given"))
    }

    /// Explicit output directory, else the environment default, else
    /// `pnarm-out`.
    pub fn output_dir(&self) -> PathBuf {
        self.paths
            .output
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Training length for a series of `steps` steps.
    pub fn train_steps(&self, steps: usize) -> Result<usize> {
        let train = self.eval.train_steps.unwrap_or(steps.saturating_sub(1));
        if train < 2 {
            return Err(Error::config(format!("training needs at least 2 steps, got {train}")));
        }
        if train > steps {
            return Err(Error::config(format!(
                "train_steps ({train}) exceeds the {steps} observed steps"
            )));
        }
        Ok(train)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_file() {
        let text = r#"
            [paths]
            counts = "c.csv"
            edges = "e.csv"

            [model]
            mode = "population_adjusted"
            scale = 1000.0

            [prior]
            kind = "fmm"
            components = 3

            [coefficients]
            kind = "gamma"
            shape = 2.0
            rate = 0.5

            [mcmc]
            iterations = 100
            burn_in = 50
            thinning = 5
            seed = 7

            [eval]
            train_steps = 10
            window = 2
        "#;
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.model.mode, PredictorMode::PopulationAdjusted);
        assert_eq!(c.prior, PriorConfig::Fmm { components: 3, gamma0: 1.0 });
        assert_eq!(c.coefficients, CoefficientPrior::Gamma { shape: 2.0, rate: 0.5 });
        assert_eq!(c.mcmc.retained_draws(), 10);
        assert_eq!(c.mcmc.aux_components, 3);
        assert_eq!(c.eval.window, 2);
        c.validate().unwrap();
    }

    #[test]
    fn defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c.prior, PriorConfig::Ddp { alpha: 1.0, h: 1.0 });
        assert_eq!(c.model.mode, PredictorMode::Raw);
        assert_eq!(c.train_steps(25).unwrap(), 24);
        assert!(c.train_steps(2).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[mcmc]\niteration = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[coefficients]\nkind = \"gamma\"\nshape = 1.0\nrate = 1.0\nscale = 2.0").is_err());
        assert!(toml::from_str::<RunConfig>("[prior]\nkind = \"fmm\"\ncomponents = 2\nalpha = 1.0").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "[paths]\ncounts = \"data/c.csv\"\n").unwrap();
        let c = RunConfig::load(&file).unwrap();
        assert_eq!(c.paths.counts.unwrap(), dir.path().join("data/c.csv"));
    }
}
