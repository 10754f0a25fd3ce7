//! Run configuration: one TOML file with a section per command.
//!
//! ```toml
//! seed = 7            # optional; `--seed` wins
//! out_dir = "runs/a"  # optional; `--out` wins
//! verbose = false
//!
//! [gradcheck]
//! [dt_sweep]
//! [wecs]
//! [train]
//! [dump_medium]
//! [bench]
//! ```
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wavefield::gradcheck::CheckCase;
use wavefield::training::{DtSweepSpec, TaskSpec, WecsSpec};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub verbose: bool,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub dt_sweep: DtSweepSpec,
    #[serde(default)]
    pub wecs: WecsSpec,
    pub train: Option<TrainConfig>,
    pub dump_medium: Option<DumpMediumConfig>,
    #[serde(default)]
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    /// Step for layer and model cases.
    pub eps: f64,
    /// Step for rollout cases.
    pub rollout_eps: f64,
    /// The command fails if any case exceeds this.
    pub tolerance: f64,
    /// Test hook: negate damping gradients before comparison.
    pub corrupt_gamma_sign: bool,
    /// Explicit case list; the standard suite when absent.
    pub instances: Option<Vec<CheckCase>>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            rollout_eps: 1e-6,
            tolerance: 1e-5,
            corrupt_gamma_sign: false,
            instances: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Also write the learned medium.
    #[serde(default = "yes")]
    pub dump_medium: bool,
    pub spec: TaskSpec,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpMediumConfig {
    /// Parameter file; relative paths are resolved against the config
    /// file's directory.
    pub params: PathBuf,
    /// Token input for embedding models.
    pub tokens: Option<Vec<usize>>,
    /// One value per position; broadcast to every channel of field models.
    pub values: Option<Vec<f64>>,
    /// Block whose medium is reported.
    #[serde(default)]
    pub block: usize,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub d: usize,
    pub steps: usize,
    /// Untimed calls before measuring each point.
    pub warmup: usize,
    /// Upper bound on timed repetitions per point.
    pub repetitions: usize,
    /// Repetitions are reduced (to at least one) so that one point takes
    /// roughly this long.
    pub budget_seconds: f64,
    /// Query rows per attention block.
    pub query_block: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256, 1024, 4096, 16384, 65536],
            d: 64,
            steps: 4,
            warmup: 1,
            repetitions: 5,
            budget_seconds: 10.0,
            query_block: 256,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(dm) = cfg.dump_medium.as_mut() {
            if dm.params.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                dm.params = base.join(&dm.params);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new("dir/run.toml"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse("[wecs]\nmodes = 3\n").unwrap_err().to_string();
        assert!(err.contains("unknown field `modes`"), "{err}");
        assert!(parse("colour = 1").is_err());
    }

    #[test]
    fn task_spec_section() {
        let cfg = parse(
            "[train.spec]\ntask = \"inverse-medium\"\ntrain_steps = 5\n[train.spec.adam]\nlr = 0.0\n",
        )
        .unwrap();
        let train = cfg.train.unwrap();
        assert!(train.dump_medium);
        match train.spec {
            TaskSpec::InverseMedium(s) => {
                assert_eq!(s.train_steps, 5);
                assert_eq!(s.adam.lr, 0.0);
                assert_eq!(s.n, 64);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse("[train.spec]\ntask = \"inverse-medium\"\ntrain_stepz = 5\n").is_err());
        assert!(parse("[train.spec]\ntask = \"nope\"\n").is_err());
    }

    #[test]
    fn gradcheck_instances() {
        let cfg = parse(
            "[gradcheck]\ninstances = [{ kind = \"rollout\", n = 8, steps = 2 }, { kind = \"layer\", n = 8, d = 2, steps = 1 }]\n",
        )
        .unwrap();
        assert_eq!(
            cfg.gradcheck.instances.unwrap(),
            vec![
                CheckCase::Rollout { n: 8, steps: 2 },
                CheckCase::Layer { n: 8, d: 2, steps: 1 }
            ]
        );
        let empty = parse("[gradcheck]\ninstances = []\n").unwrap();
        assert_eq!(empty.gradcheck.instances, Some(vec![]));
    }

    #[test]
    fn dump_params_resolved_against_config_dir() {
        let cfg = parse("[dump_medium]\nparams = \"p.txt\"\ntokens = [1, 2]\n").unwrap();
        assert_eq!(cfg.dump_medium.unwrap().params, Path::new("dir/p.txt"));
    }
}
