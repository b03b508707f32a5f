//! The run configuration document: one JSON file drives every subcommand.
//! Unknown keys are rejected and budgets given on the 0-255 scale are
//! converted exactly once, at resolve time.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use dsm_core::attacks::{AttackConfig, Fusion};
use dsm_core::dataset::{self, Dataset, Split, SynthSpec};
use dsm_core::evalharness::{ObjectiveKind, OptimizerKind};
use dsm_core::faceverify::MarginLossConfig;
use dsm_core::rng::Rng;
use dsm_core::training::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generated in-process from the global seed.
    Synthetic(SynthSpec),
    Idx {
        images: String,
        labels: String,
        class_count: usize,
        #[serde(default)]
        test_images: Option<String>,
        #[serde(default)]
        test_labels: Option<String>,
    },
    Csv {
        path: String,
        class_count: usize,
        #[serde(default)]
        shape: Option<(usize, usize, usize)>,
        #[serde(default)]
        test_path: Option<String>,
    },
}

impl DatasetConfig {
    /// Load or generate the train/test splits.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        match self {
            DatasetConfig::Synthetic(spec) => {
                let mut rng = Rng::new(seed, "dataset");
                let (train, test) = dataset::make_classification(spec, &mut rng)?;
                Ok((train, Some(test)))
            }
            DatasetConfig::Idx {
                images,
                labels,
                class_count,
                test_images,
                test_labels,
            } => {
                let train = dataset::load_idx_dataset(
                    Path::new(images),
                    Path::new(labels),
                    *class_count,
                    Split::Train,
                )?;
                let test = match (test_images, test_labels) {
                    (Some(ti), Some(tl)) => Some(dataset::load_idx_dataset(
                        Path::new(ti),
                        Path::new(tl),
                        *class_count,
                        Split::Test,
                    )?),
                    (None, None) => None,
                    _ => bail!("test_images and test_labels must be given together"),
                };
                Ok((train, test))
            }
            DatasetConfig::Csv {
                path,
                class_count,
                shape,
                test_path,
            } => {
                let train =
                    dataset::load_csv_dataset(Path::new(path), *class_count, *shape, Split::Train)?;
                let test = test_path
                    .as_ref()
                    .map(|p| {
                        dataset::load_csv_dataset(Path::new(p), *class_count, *shape, Split::Test)
                    })
                    .transpose()?;
                Ok((train, test))
            }
        }
    }
}

/// Attack parameters with dedicated 0-255-scale keys. Exactly one of each
/// budget pair may be set; unset budgets take the untargeted defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub epsilon: Option<f32>,
    pub epsilon_255: Option<f32>,
    pub beta: Option<f32>,
    pub beta_255: Option<f32>,
    pub mu: Option<f32>,
    pub p_t: Option<f64>,
    pub iterations: Option<usize>,
    pub objective: Option<ObjectiveKind>,
    pub optimizer: Option<OptimizerKind>,
    pub fusion: Option<Fusion>,
}

#[derive(Debug, Clone, Copy)]
pub struct ResolvedAttack {
    pub cfg: AttackConfig,
    pub objective: ObjectiveKind,
    pub optimizer: OptimizerKind,
    pub fusion: Fusion,
}

impl AttackSection {
    pub fn resolve(&self, default_eps_255: f32, default_iters_untargeted: usize) -> Result<ResolvedAttack> {
        let epsilon = match (self.epsilon, self.epsilon_255) {
            (Some(_), Some(_)) => bail!("set either epsilon or epsilon_255, not both"),
            (Some(e), None) => e,
            (None, Some(e)) => e / 255.0,
            (None, None) => default_eps_255 / 255.0,
        };
        let beta = match (self.beta, self.beta_255) {
            (Some(_), Some(_)) => bail!("set either beta or beta_255, not both"),
            (Some(b), None) => b,
            (None, Some(b)) => b / 255.0,
            (None, None) => 2.0 / 255.0,
        };
        let objective = self.objective.unwrap_or(ObjectiveKind::UntargetedCe);
        let iterations = self.iterations.unwrap_or(match objective {
            ObjectiveKind::TargetedLogit => 200,
            _ => default_iters_untargeted,
        });
        let cfg = AttackConfig {
            epsilon,
            beta,
            mu: self.mu.unwrap_or(1.0),
            iterations,
            p_t: self.p_t.unwrap_or(0.7),
            diversity: true,
        };
        cfg.validate().context("invalid attack configuration")?;
        Ok(ResolvedAttack {
            cfg,
            objective,
            optimizer: self.optimizer.unwrap_or(OptimizerKind::Mdi2Fgsm),
            fusion: self.fusion.unwrap_or(Fusion::Logits),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub optimizers: Vec<OptimizerKind>,
    pub seeds: Vec<u64>,
    /// Also attack with the equal-weight ensemble of all surrogates.
    pub include_ensemble: bool,
    /// Cap on evaluation samples drawn from the test split.
    pub eval_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            optimizers: vec![
                OptimizerKind::Fgsm,
                OptimizerKind::MiFgsm,
                OptimizerKind::Mdi2Fgsm,
            ],
            seeds: vec![1, 2, 3],
            include_ensemble: false,
            eval_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub student_architecture: String,
    pub eval_samples: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            alphas: vec![0.1, 1.0, 4.0],
            seeds: vec![1, 2, 3],
            student_architecture: "conv_a".into(),
            eval_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaceSection {
    pub n_ids: usize,
    pub per_id: usize,
    pub height: usize,
    pub width: usize,
    pub architecture: String,
    pub margin: MarginLossConfig,
    /// Surrogate checkpoint for face-attack.
    pub surrogate: Option<String>,
    /// Victim checkpoints; each is calibrated on the protocol's calibration
    /// pairs with its own threshold.
    pub victims: Vec<String>,
    pub attack: AttackSection,
}

impl Default for FaceSection {
    fn default() -> Self {
        FaceSection {
            n_ids: 16,
            per_id: 20,
            height: 12,
            width: 12,
            architecture: "conv_b".into(),
            margin: MarginLossConfig::plain(),
            surrogate: None,
            victims: vec![],
            attack: AttackSection::default(),
        }
    }
}

/// The whole run configuration. Commands use the sections they need and
/// reject runs with missing sections before writing anything.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<String>,
    pub dataset: Option<DatasetConfig>,
    /// Architecture of the model being trained (train/distill).
    pub architecture: Option<String>,
    pub train: Option<TrainConfig>,
    pub teacher_checkpoint: Option<String>,
    /// Adversarial-training budget on the `[0,1]` scale; presence selects
    /// slightly-robust training in `train`.
    pub robust_eps: Option<f32>,
    pub attack: Option<AttackSection>,
    /// Surrogate checkpoints for attack/eval; two or more form the ensemble
    /// when requested.
    pub surrogates: Vec<String>,
    /// Victim checkpoints for eval.
    pub victims: Vec<String>,
    pub eval: Option<EvalSection>,
    pub sweep: Option<SweepSection>,
    pub face: Option<FaceSection>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("config {} failed schema validation", path.display()))?;
        Ok(cfg)
    }

    /// Training config with the global seed folded in.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.train.clone().unwrap_or_default();
        t.seed = self.seed;
        t
    }
}

/// Resolve the output directory: `--out` flag, then `DSM_OUT_DIR`, then the
/// config's `out_dir`.
pub fn resolve_out_dir(flag: Option<&Path>, config: &RunConfig) -> Result<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if let Ok(env) = std::env::var("DSM_OUT_DIR") {
        if !env.is_empty() {
            return Ok(PathBuf::from(env));
        }
    }
    match &config.out_dir {
        Some(d) => Ok(PathBuf::from(d)),
        None => bail!("no output directory: pass --out, set DSM_OUT_DIR, or set out_dir"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "sed": 2}"#).unwrap_err();
        assert!(err.to_string().contains("sed"));
    }

    #[test]
    fn attack_defaults_match_untargeted_recipe() {
        let resolved = AttackSection::default().resolve(16.0, 10).unwrap();
        assert!((resolved.cfg.epsilon - 16.0 / 255.0).abs() < 1e-9);
        assert!((resolved.cfg.beta - 2.0 / 255.0).abs() < 1e-9);
        assert_eq!(resolved.cfg.mu, 1.0);
        assert_eq!(resolved.cfg.p_t, 0.7);
        assert_eq!(resolved.cfg.iterations, 10);
        assert_eq!(resolved.objective, ObjectiveKind::UntargetedCe);
    }

    #[test]
    fn targeted_logit_defaults_two_hundred_iterations() {
        let section = AttackSection {
            objective: Some(ObjectiveKind::TargetedLogit),
            ..AttackSection::default()
        };
        let resolved = section.resolve(16.0, 10).unwrap();
        assert_eq!(resolved.cfg.iterations, 200);
    }

    #[test]
    fn dual_budget_keys_are_rejected() {
        let section = AttackSection {
            epsilon: Some(0.05),
            epsilon_255: Some(16.0),
            ..AttackSection::default()
        };
        assert!(section.resolve(16.0, 10).is_err());
    }

    #[test]
    fn epsilon_255_scales_once() {
        let section = AttackSection {
            epsilon_255: Some(8.0),
            ..AttackSection::default()
        };
        let resolved = section.resolve(16.0, 10).unwrap();
        assert!((resolved.cfg.epsilon - 8.0 / 255.0).abs() < 1e-9);
    }
}
