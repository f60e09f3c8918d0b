//! Flat `key = value` configuration files with `[section]` headers.
//!
//! Unknown keys and type mismatches are reported with their line number;
//! a parse leaves nothing half-applied.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mcvae::evaluation::{ISConfig, ProposalMode};
use mcvae::kernels::KernelKind;
use mcvae::training::{AdaptationKind, OptimizerKind, PreconditionerKind, TrainConfig};

use crate::{CliError, Result};

/// Raw parse: `section.key -> (value, line_number)`.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
    consumed: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<RawConfig> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CliError::Config(format!("line {line_no}: unterminated section header"))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim();
            if key.is_empty() || section.is_empty() {
                return Err(CliError::Config(format!(
                    "line {line_no}: key outside of a [section]"
                )));
            }
            let full = format!("{section}.{key}");
            if entries.contains_key(&full) {
                return Err(CliError::Config(format!(
                    "line {line_no}: duplicate key `{full}`"
                )));
            }
            entries.insert(full, (value.trim().to_string(), line_no));
        }
        Ok(RawConfig {
            entries,
            consumed: Default::default(),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.to_string(), (value.to_string(), 0));
    }

    /// Raw value lookup without schema involvement.
    pub fn value_of(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.consumed.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).map(|(v, _)| v).unwrap_or(default)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| {
                CliError::Config(format!("line {line}: key `{key}` expects a number, got `{v}`"))
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| {
                CliError::Config(format!(
                    "line {line}: key `{key}` expects a nonnegative integer, got `{v}`"
                ))
            }),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| {
                CliError::Config(format!(
                    "line {line}: key `{key}` expects an integer, got `{v}`"
                ))
            }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(("true", _)) => Ok(true),
            Some(("false", _)) => Ok(false),
            Some((v, line)) => Err(CliError::Config(format!(
                "line {line}: key `{key}` expects true|false, got `{v}`"
            ))),
        }
    }

    fn enum_or(&self, key: &str, default: &str, allowed: &[&str]) -> Result<String> {
        let (v, line) = match self.get(key) {
            None => return Ok(default.to_string()),
            Some(p) => p,
        };
        if allowed.contains(&v) {
            Ok(v.to_string())
        } else {
            Err(CliError::Config(format!(
                "line {line}: key `{key}` expects one of {allowed:?}, got `{v}`"
            )))
        }
    }

    /// After extraction, every present key must have been consumed.
    fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        for (key, (_, line)) in &self.entries {
            if !consumed.contains(key) {
                return Err(CliError::Config(format!(
                    "line {line}: unknown key `{key}`"
                )));
            }
        }
        Ok(())
    }
}

/// Dataset source.
#[derive(Debug, Clone)]
pub enum DatasetSpec {
    SyntheticLinear {
        n1: usize,
        n2: usize,
        dx: usize,
        n: usize,
        obs_sigma: f64,
        gen_seed: u64,
    },
    File(PathBuf),
}

/// Model family and sizes.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    LinearHvae {
        n1: usize,
        n2: usize,
        obs_sigma_init: f64,
    },
    HvaeStack {
        n1: usize,
        n2: usize,
        hidden: usize,
        bernoulli: bool,
        obs_sigma: f64,
    },
    MlpVae {
        dz: usize,
        hidden: usize,
        bernoulli: bool,
        obs_sigma: f64,
    },
}

/// Fully typed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: ISConfig,
    pub eval_subset: usize,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        Self::from_raw(&raw)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let dataset = match raw
            .enum_or("dataset.kind", "synthetic-linear", &["synthetic-linear", "file"])?
            .as_str()
        {
            "file" => {
                let (path, line) = raw.get("dataset.path").ok_or_else(|| {
                    CliError::Config("dataset.kind = file requires dataset.path".into())
                })?;
                let _ = line;
                DatasetSpec::File(PathBuf::from(path))
            }
            _ => DatasetSpec::SyntheticLinear {
                n1: raw.usize_or("dataset.n1", 10)?,
                n2: raw.usize_or("dataset.n2", 20)?,
                dx: raw.usize_or("dataset.dx", 60)?,
                n: raw.usize_or("dataset.n", 1000)?,
                obs_sigma: raw.f64_or("dataset.obs_sigma", 0.5)?,
                gen_seed: raw.u64_or("dataset.gen_seed", 12345)?,
            },
        };

        let model = match raw
            .enum_or(
                "model.kind",
                "linear-hvae",
                &["linear-hvae", "hvae-stack", "mlp-vae"],
            )?
            .as_str()
        {
            "hvae-stack" => ModelSpec::HvaeStack {
                n1: raw.usize_or("model.n1", 5)?,
                n2: raw.usize_or("model.n2", 10)?,
                hidden: raw.usize_or("model.hidden", 32)?,
                bernoulli: raw.enum_or("model.likelihood", "gaussian", &["gaussian", "bernoulli"])?
                    == "bernoulli",
                obs_sigma: raw.f64_or("model.obs_sigma", 0.5)?,
            },
            "mlp-vae" => ModelSpec::MlpVae {
                dz: raw.usize_or("model.dz", 4)?,
                hidden: raw.usize_or("model.hidden", 32)?,
                bernoulli: raw.enum_or("model.likelihood", "gaussian", &["gaussian", "bernoulli"])?
                    == "bernoulli",
                obs_sigma: raw.f64_or("model.obs_sigma", 0.5)?,
            },
            _ => ModelSpec::LinearHvae {
                n1: raw.usize_or("model.n1", 10)?,
                n2: raw.usize_or("model.n2", 20)?,
                obs_sigma_init: raw.f64_or("model.obs_sigma", 1.0)?,
            },
        };

        let kernel = match raw.enum_or("train.kernel", "mala", &["mala", "hmc"])?.as_str() {
            "hmc" => KernelKind::Hmc,
            _ => KernelKind::Mala,
        };
        let preconditioner = match raw
            .enum_or(
                "train.preconditioner",
                "diagonal",
                &["diagonal", "lower-triangular", "none"],
            )?
            .as_str()
        {
            "lower-triangular" => PreconditionerKind::LowerTriangular,
            "none" => PreconditionerKind::None,
            _ => PreconditionerKind::Diagonal,
        };
        let adaptation = match raw
            .enum_or(
                "train.adaptation",
                "speed-measure",
                &["speed-measure", "dual-averaging", "fixed"],
            )?
            .as_str()
        {
            "dual-averaging" => AdaptationKind::DualAveraging,
            "fixed" => AdaptationKind::Fixed,
            _ => AdaptationKind::SpeedMeasure,
        };
        let optimizer = match raw.enum_or("train.optimizer", "adam", &["adam", "sgd"])?.as_str() {
            "sgd" => OptimizerKind::Sgd,
            _ => OptimizerKind::Adam,
        };
        let alpha_star = match raw.get("train.alpha_star") {
            None => None,
            Some((v, line)) => Some(v.parse().map_err(|_| {
                CliError::Config(format!(
                    "line {line}: key `train.alpha_star` expects a number, got `{v}`"
                ))
            })?),
        };

        let train = TrainConfig {
            lr_phi0: raw.f64_or("train.lr_phi0", 1e-3)?,
            lr_phi1: raw.f64_or("train.lr_phi1", 1e-3)?,
            lr_theta: raw.f64_or("train.lr_theta", 1e-3)?,
            lr_beta: raw.f64_or("train.lr_beta", 0.05)?,
            chain_steps: raw.usize_or("train.k", 2)?,
            leapfrog: raw.usize_or("train.leapfrog", 3)?,
            pretrain_epochs: raw.usize_or("train.pretrain_epochs", 0)?,
            mcmc_epochs: raw.usize_or("train.mcmc_epochs", 0)?,
            batch_size: raw.usize_or("train.batch_size", 100)?.max(1),
            alpha_star,
            seed: raw.u64_or("train.seed", 0)?,
            kernel,
            preconditioner,
            adaptation,
            optimizer,
            init_step: raw.f64_or("train.init_step", 0.1)?,
            beta_init: raw.f64_or("train.beta_init", 1.0)?,
            freeze_prior_during_mcmc: raw.bool_or("train.freeze_prior_during_mcmc", false)?,
        };

        let proposal = match raw
            .enum_or("eval.proposal", "encoder-mean", &["encoder-mean", "chain-mean"])?
            .as_str()
        {
            "chain-mean" => ProposalMode::ChainMean {
                steps: raw.usize_or("eval.chain_steps", 8)?,
            },
            _ => {
                let _ = raw.usize_or("eval.chain_steps", 8)?;
                ProposalMode::EncoderMean
            }
        };
        let eval = ISConfig {
            samples: raw.usize_or("eval.is_samples", 10_000)?,
            tau: raw.f64_or("eval.tau", 1.5)?,
            proposal,
        };
        let eval_subset = raw.usize_or("eval.subset", 50)?;
        let out_dir = raw.get("output.dir").map(|(v, _)| PathBuf::from(v));

        raw.reject_unknown()?;
        validate(&train)?;
        Ok(ExperimentConfig {
            dataset,
            model,
            train,
            eval,
            eval_subset,
            out_dir,
        })
    }

    /// Human-readable tags for the evaluation report.
    pub fn kernel_tag(&self) -> String {
        let kernel = match self.train.kernel {
            KernelKind::Mala => "mala",
            KernelKind::Hmc => "hmc",
        };
        let precond = match self.train.preconditioner {
            PreconditionerKind::Diagonal => "diagonal",
            PreconditionerKind::LowerTriangular => "lower-triangular",
            PreconditionerKind::None => "none",
        };
        format!("{kernel}/{precond}")
    }

    pub fn adaptation_tag(&self) -> &'static str {
        match self.train.adaptation {
            AdaptationKind::SpeedMeasure => "speed-measure",
            AdaptationKind::DualAveraging => "dual-averaging",
            AdaptationKind::Fixed => "fixed",
        }
    }
}

fn validate(train: &TrainConfig) -> Result<()> {
    for (name, v) in [
        ("train.lr_phi0", train.lr_phi0),
        ("train.lr_phi1", train.lr_phi1),
        ("train.lr_theta", train.lr_theta),
        ("train.lr_beta", train.lr_beta),
        ("train.init_step", train.init_step),
        ("train.beta_init", train.beta_init),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::Config(format!("{name} must be positive")));
        }
    }
    if let Some(a) = train.alpha_star {
        if !(0.0 < a && a < 1.0) {
            return Err(CliError::Config(
                "train.alpha_star must lie strictly in (0, 1)".into(),
            ));
        }
    }
    if train.leapfrog == 0 {
        return Err(CliError::Config("train.leapfrog must be >= 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_text(
            "[dataset]\nkind = synthetic-linear\nn1 = 3\nn2 = 4\ndx = 8\nn = 100\n\n[model]\nn1 = 3\nn2 = 4\n\n[train]\npretrain_epochs = 2\n",
        )
        .unwrap();
        match cfg.dataset {
            DatasetSpec::SyntheticLinear { n1, n2, dx, n, .. } => {
                assert_eq!((n1, n2, dx, n), (3, 4, 8, 100));
            }
            _ => panic!("wrong dataset kind"),
        }
        assert_eq!(cfg.train.pretrain_epochs, 2);
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let err = ExperimentConfig::from_text("[train]\nnot_a_key = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("not_a_key"), "{msg}");
    }

    #[test]
    fn type_mismatch_is_reported_with_line() {
        let err = ExperimentConfig::from_text("[train]\nlr_phi0 = fast\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("lr_phi0"), "{msg}");
    }

    #[test]
    fn bad_enum_value_is_rejected() {
        let err = ExperimentConfig::from_text("[train]\nkernel = nuts\n").unwrap_err();
        assert!(err.to_string().contains("kernel"));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = ExperimentConfig::from_text("[train]\nseed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
