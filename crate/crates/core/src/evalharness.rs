//! Transfer-evaluation harness: black-box victim oracles, success-rate
//! matrices over (surrogate, victim, optimizer) cells, the alpha ablation
//! sweep, and report emission.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, Ensemble, Fusion, Objective};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::model::ClassifierModel;
use crate::rng::Rng;
use crate::training::{train_dsm, TrainConfig};

/// A black-box victim: only the predicted class is reachable. The wrapped
/// model is private, so no logit or gradient path exists from attack code.
#[derive(Debug, Clone)]
pub struct VictimOracle {
    id: String,
    model: ClassifierModel,
}

impl VictimOracle {
    pub fn new(id: impl Into<String>, model: ClassifierModel) -> Self {
        VictimOracle {
            id: id.into(),
            model,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn class_count(&self) -> usize {
        self.model.class_count()
    }

    /// Argmax class per sample; the oracle's entire observable surface.
    pub fn predict(&self, x: &ImageBatch) -> Vec<u32> {
        self.model.predict(x)
    }
}

/// Per-sample untargeted success: the victim's prediction differs from the
/// true label.
pub fn untargeted_success(
    victim: &VictimOracle,
    x_adv: &ImageBatch,
    labels: &[u32],
) -> Result<Vec<bool>> {
    if labels.len() != x_adv.len() {
        return Err(Error::ShapeMismatch {
            context: "untargeted_success labels",
            expected: format!("{}", x_adv.len()),
            got: format!("{}", labels.len()),
        });
    }
    Ok(victim
        .predict(x_adv)
        .iter()
        .zip(labels.iter())
        .map(|(p, y)| p != y)
        .collect())
}

/// Per-sample targeted success: the victim predicts exactly the target.
pub fn targeted_success(
    victim: &VictimOracle,
    x_adv: &ImageBatch,
    targets: &[u32],
) -> Result<Vec<bool>> {
    if targets.len() != x_adv.len() {
        return Err(Error::ShapeMismatch {
            context: "targeted_success targets",
            expected: format!("{}", x_adv.len()),
            got: format!("{}", targets.len()),
        });
    }
    for &t in targets {
        if t as usize >= victim.class_count() {
            return Err(Error::ClassOutOfRange {
                index: t as usize,
                class_count: victim.class_count(),
            });
        }
    }
    Ok(victim
        .predict(x_adv)
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| p == t)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Fgsm,
    MiFgsm,
    Mdi2Fgsm,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Fgsm => "fgsm",
            OptimizerKind::MiFgsm => "mi_fgsm",
            OptimizerKind::Mdi2Fgsm => "mdi2_fgsm",
        }
    }

    /// Specialize a base configuration: FGSM is the single full-step,
    /// MI-FGSM disables input diversity, M-DI2-FGSM enables it.
    pub fn specialize(self, base: &AttackConfig) -> AttackConfig {
        match self {
            OptimizerKind::Fgsm => AttackConfig {
                beta: base.epsilon.max(f32::MIN_POSITIVE),
                mu: 0.0,
                iterations: 1,
                diversity: false,
                ..*base
            },
            OptimizerKind::MiFgsm => AttackConfig {
                diversity: false,
                ..*base
            },
            OptimizerKind::Mdi2Fgsm => AttackConfig {
                diversity: true,
                ..*base
            },
        }
    }
}

/// Objective selector for matrix runs; per-sample labels/targets are taken
/// from the evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    UntargetedCe,
    TargetedCe,
    TargetedLogit,
}

impl ObjectiveKind {
    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::UntargetedCe => "untargeted_ce",
            ObjectiveKind::TargetedCe => "targeted_ce",
            ObjectiveKind::TargetedLogit => "targeted_logit",
        }
    }

    pub fn is_targeted(self) -> bool {
        !matches!(self, ObjectiveKind::UntargetedCe)
    }
}

/// A surrogate entry in the matrix: a single model or an ensemble.
pub enum Surrogate<'a> {
    Single {
        id: String,
        model: &'a ClassifierModel,
    },
    Ensemble {
        id: String,
        members: Vec<&'a ClassifierModel>,
        fusion: Fusion,
    },
}

impl Surrogate<'_> {
    pub fn id(&self) -> &str {
        match self {
            Surrogate::Single { id, .. } => id,
            Surrogate::Ensemble { id, .. } => id,
        }
    }

    fn craft(
        &self,
        x: &ImageBatch,
        objective: &Objective,
        cfg: &AttackConfig,
        rng: &mut Rng,
    ) -> Result<ImageBatch> {
        let result = match self {
            Surrogate::Single { model, .. } => run_attack(*model, x, objective, cfg, rng)?,
            Surrogate::Ensemble {
                members, fusion, ..
            } => {
                let ensemble = Ensemble::new(members.clone(), *fusion)?;
                run_attack(&ensemble, x, objective, cfg, rng)?
            }
        };
        Ok(result.adversarial)
    }

    fn white_box_model(&self) -> Option<&ClassifierModel> {
        match self {
            Surrogate::Single { model, .. } => Some(model),
            Surrogate::Ensemble { .. } => None,
        }
    }
}

/// One (surrogate, victim, optimizer, seed) grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub surrogate: String,
    pub victim: String,
    pub optimizer: String,
    pub objective: String,
    pub epsilon: f32,
    pub iterations: usize,
    pub seed: u64,
    pub successes: usize,
    pub samples: usize,
}

impl ReportCell {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.samples.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanAccuracy {
    pub victim: String,
    pub accuracy: f32,
}

/// The full grid result plus context for reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub cells: Vec<ReportCell>,
    pub clean_accuracy: Vec<CleanAccuracy>,
    pub config: serde_json::Value,
}

impl TransferReport {
    /// Mean success rate over cells matching a predicate.
    pub fn mean_rate<F: Fn(&ReportCell) -> bool>(&self, keep: F) -> f64 {
        let rates: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| keep(c))
            .map(|c| c.success_rate())
            .collect();
        if rates.is_empty() {
            return f64::NAN;
        }
        rates.iter().sum::<f64>() / rates.len() as f64
    }

    /// Mean transfer success for one surrogate (white-box cells excluded).
    pub fn mean_transfer(&self, surrogate: &str, optimizer: &str) -> f64 {
        self.mean_rate(|c| {
            c.surrogate == surrogate && c.optimizer == optimizer && c.victim != c.surrogate
        })
    }
}

/// Inputs of one matrix run.
pub struct MatrixSpec<'a> {
    pub surrogates: Vec<Surrogate<'a>>,
    pub victims: &'a [VictimOracle],
    pub optimizers: Vec<OptimizerKind>,
    pub objective: ObjectiveKind,
    pub base_cfg: AttackConfig,
    pub eval_images: &'a ImageBatch,
    pub eval_labels: &'a [u32],
    /// Target labels for targeted objectives.
    pub targets: Option<Vec<u32>>,
    pub seeds: &'a [u64],
    /// Serialized into the report for reproduction.
    pub config_snapshot: serde_json::Value,
}

/// Craft adversarial examples once per (surrogate, optimizer, seed) and
/// evaluate them on every victim, plus the white-box cell.
pub fn run_matrix(spec: &MatrixSpec<'_>) -> Result<TransferReport> {
    if spec.surrogates.is_empty() || spec.victims.is_empty() || spec.optimizers.is_empty() {
        return Err(Error::EmptyInput("matrix grid"));
    }
    if spec.eval_labels.len() != spec.eval_images.len() {
        return Err(Error::ShapeMismatch {
            context: "matrix eval labels",
            expected: format!("{}", spec.eval_images.len()),
            got: format!("{}", spec.eval_labels.len()),
        });
    }
    let k = spec.victims[0].class_count();
    if spec.victims.iter().any(|v| v.class_count() != k) {
        return Err(Error::ShapeMismatch {
            context: "victim class counts",
            expected: format!("{k}"),
            got: "mixed".into(),
        });
    }
    let objective = build_objective(spec.objective, spec.eval_labels, spec.targets.as_deref())?;
    let success_labels: &[u32] = match spec.objective {
        ObjectiveKind::UntargetedCe => spec.eval_labels,
        _ => spec
            .targets
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter {
                name: "targets",
                reason: "targeted objectives need target labels".into(),
            })?,
    };

    let mut cells = Vec::new();
    for &seed in spec.seeds {
        for surrogate in &spec.surrogates {
            for &optimizer in &spec.optimizers {
                let cfg = optimizer.specialize(&spec.base_cfg);
                let mut rng = Rng::new(
                    seed,
                    &format!("attack/{}/{}", surrogate.id(), optimizer.name()),
                );
                let adversarial =
                    surrogate.craft(spec.eval_images, &objective, &cfg, &mut rng)?;
                let mut push = |victim_id: &str, predictions: Vec<u32>| {
                    let successes = predictions
                        .iter()
                        .zip(success_labels.iter())
                        .filter(|(p, y)| match spec.objective {
                            ObjectiveKind::UntargetedCe => p != y,
                            _ => p == y,
                        })
                        .count();
                    cells.push(ReportCell {
                        surrogate: surrogate.id().to_string(),
                        victim: victim_id.to_string(),
                        optimizer: optimizer.name().to_string(),
                        objective: spec.objective.name().to_string(),
                        epsilon: cfg.epsilon,
                        iterations: cfg.iterations,
                        seed,
                        successes,
                        samples: spec.eval_images.len(),
                    });
                };
                if let Some(model) = surrogate.white_box_model() {
                    push(surrogate.id(), model.predict(&adversarial));
                }
                for victim in spec.victims {
                    push(victim.id(), victim.predict(&adversarial));
                }
            }
        }
    }

    let clean_accuracy = spec
        .victims
        .iter()
        .map(|v| {
            let predictions = v.predict(spec.eval_images);
            let hits = predictions
                .iter()
                .zip(spec.eval_labels.iter())
                .filter(|(p, y)| p == y)
                .count();
            CleanAccuracy {
                victim: v.id().to_string(),
                accuracy: hits as f32 / spec.eval_labels.len().max(1) as f32,
            }
        })
        .collect();

    let report = TransferReport {
        cells,
        clean_accuracy,
        config: spec.config_snapshot.clone(),
    };

    // Sanity direction, flagged rather than asserted per cell.
    for surrogate in &spec.surrogates {
        if surrogate.white_box_model().is_none() {
            continue;
        }
        for &optimizer in &spec.optimizers {
            let wb = report.mean_rate(|c| {
                c.surrogate == surrogate.id()
                    && c.optimizer == optimizer.name()
                    && c.victim == c.surrogate
            });
            let transfer = report.mean_transfer(surrogate.id(), optimizer.name());
            if transfer > wb {
                log::warn!(
                    "mean transfer {transfer:.3} above white-box {wb:.3} for {} / {}",
                    surrogate.id(),
                    optimizer.name()
                );
            }
        }
    }
    Ok(report)
}

fn build_objective(
    kind: ObjectiveKind,
    labels: &[u32],
    targets: Option<&[u32]>,
) -> Result<Objective> {
    Ok(match kind {
        ObjectiveKind::UntargetedCe => Objective::UntargetedCe {
            labels: labels.to_vec(),
        },
        ObjectiveKind::TargetedCe => Objective::TargetedCe {
            targets: targets
                .ok_or_else(|| Error::InvalidParameter {
                    name: "targets",
                    reason: "targeted_ce needs target labels".into(),
                })?
                .to_vec(),
        },
        ObjectiveKind::TargetedLogit => Objective::TargetedLogit {
            targets: targets
                .ok_or_else(|| Error::InvalidParameter {
                    name: "targets",
                    reason: "targeted_logit needs target labels".into(),
                })?
                .to_vec(),
        },
    })
}

/// One alpha-sweep curve point: the mean transfer success of a CutMix DSM
/// trained at that alpha, averaged over victims and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub mean_success: f64,
    pub per_seed: Vec<(u64, f64)>,
}

pub struct SweepSpec<'a> {
    pub teacher: &'a ClassifierModel,
    pub student_arch: String,
    pub train: &'a Dataset,
    pub victims: &'a [VictimOracle],
    pub eval_images: &'a ImageBatch,
    pub eval_labels: &'a [u32],
    pub alphas: Vec<f64>,
    pub seeds: &'a [u64],
    pub train_cfg: TrainConfig,
    pub attack_cfg: AttackConfig,
    pub optimizer: OptimizerKind,
}

/// Train one CutMix dark-surrogate per (alpha, seed) and measure its mean
/// transfer success.
pub fn sweep_alpha(spec: &SweepSpec<'_>) -> Result<Vec<AlphaPoint>> {
    if spec.alphas.is_empty() {
        return Err(Error::EmptyInput("alpha list"));
    }
    let (c, h, w) = spec.train.images().sample_shape();
    let mut points = Vec::with_capacity(spec.alphas.len());
    for &alpha in &spec.alphas {
        let mut per_seed = Vec::with_capacity(spec.seeds.len());
        for &seed in spec.seeds {
            let mut cfg = spec.train_cfg.clone();
            cfg.seed = seed;
            cfg.alpha = alpha;
            cfg.mix = crate::augment::MixStrategy::Cutmix;
            cfg.label_strategy.kind = crate::labeling::LabelStrategyKind::Dark;
            let mut student = crate::model::build_model(
                &spec.student_arch,
                spec.train.class_count(),
                (c, h, w),
                &mut Rng::new(seed, "sweep-student-init"),
            )?;
            train_dsm(&mut student, Some(spec.teacher), spec.train, None, &cfg)?;

            let report = run_matrix(&MatrixSpec {
                surrogates: vec![Surrogate::Single {
                    id: format!("dsm_alpha{alpha}_seed{seed}"),
                    model: &student,
                }],
                victims: spec.victims,
                optimizers: vec![spec.optimizer],
                objective: ObjectiveKind::UntargetedCe,
                base_cfg: spec.attack_cfg,
                eval_images: spec.eval_images,
                eval_labels: spec.eval_labels,
                targets: None,
                seeds: &[seed],
                config_snapshot: serde_json::json!({"sweep_alpha": alpha}),
            })?;
            let mean = report
                .mean_transfer(&format!("dsm_alpha{alpha}_seed{seed}"), spec.optimizer.name());
            per_seed.push((seed, mean));
        }
        let mean_success = per_seed.iter().map(|(_, m)| m).sum::<f64>() / per_seed.len() as f64;
        points.push(AlphaPoint {
            alpha,
            mean_success,
            per_seed,
        });
    }
    Ok(points)
}

const CSV_HEADER: &str = "surrogate,victim,optimizer,objective,epsilon,N,seed,success_rate,samples";

/// Serialize the grid as CSV with a stable column order.
pub fn report_to_csv(report: &TransferReport) -> Result<String> {
    if report.cells.is_empty() {
        return Err(Error::EmptyInput("report cells"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for c in &report.cells {
        w.write_record([
            c.surrogate.as_str(),
            c.victim.as_str(),
            c.optimizer.as_str(),
            c.objective.as_str(),
            &format!("{}", c.epsilon),
            &format!("{}", c.iterations),
            &format!("{}", c.seed),
            &format!("{}", c.success_rate()),
            &format!("{}", c.samples),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Unsupported(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf8"))
}

/// Parse a grid CSV back into cells.
pub fn cells_from_csv(text: &str) -> Result<Vec<ReportCell>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::DatasetFormat(format!(
            "unexpected report columns {headers:?}"
        )));
    }
    let mut cells = Vec::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let samples: usize = field(8).parse().map_err(|_| {
            Error::DatasetFormat(format!("bad samples field {:?}", field(8)))
        })?;
        let rate: f64 = field(7).parse().map_err(|_| {
            Error::DatasetFormat(format!("bad success_rate field {:?}", field(7)))
        })?;
        cells.push(ReportCell {
            surrogate: field(0),
            victim: field(1),
            optimizer: field(2),
            objective: field(3),
            epsilon: field(4)
                .parse()
                .map_err(|_| Error::DatasetFormat("bad epsilon field".into()))?,
            iterations: field(5)
                .parse()
                .map_err(|_| Error::DatasetFormat("bad N field".into()))?,
            seed: field(6)
                .parse()
                .map_err(|_| Error::DatasetFormat("bad seed field".into()))?,
            successes: (rate * samples as f64).round() as usize,
            samples,
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Write the report in the requested format.
pub fn emit_report(report: &TransferReport, format: ReportFormat, path: &Path) -> Result<()> {
    if report.cells.is_empty() {
        return Err(Error::EmptyInput("report cells"));
    }
    match format {
        ReportFormat::Csv => std::fs::write(path, report_to_csv(report)?)?,
        ReportFormat::Json => std::fs::write(path, serde_json::to_string_pretty(report)?)?,
    }
    Ok(())
}

/// Emit the success-versus-alpha curve chart.
pub fn emit_alpha_plot(
    points: &[AlphaPoint],
    baseline: Option<f64>,
    path: &Path,
) -> Result<()> {
    let series: Vec<(f64, f64)> = points.iter().map(|p| (p.alpha, p.mean_success)).collect();
    crate::plot::line_chart_with_baseline(
        "transfer success vs alpha (CutMix DSM)",
        &series,
        baseline.map(|b| (b, "no-mixing DSM")),
        path,
    )
}

/// Emit a bar chart of mean success per labeled group.
pub fn emit_bar_plot(title: &str, bars: &[(String, f64)], path: &Path) -> Result<()> {
    crate::plot::bar_chart(title, bars, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_classification, SynthSpec};
    use crate::model::build_model;

    fn tiny_world() -> (ClassifierModel, Vec<VictimOracle>, ImageBatch, Vec<u32>) {
        let spec = SynthSpec {
            class_count: 4,
            train_per_class: 12,
            test_per_class: 6,
            height: 8,
            width: 8,
            noise_sd: 0.1,
            max_shift: 1,
        };
        let (train, test) = make_classification(&spec, &mut Rng::new(1, "world")).unwrap();
        let mut surrogate = build_model("mlp", 4, (1, 8, 8), &mut Rng::new(2, "s")).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay_epochs: vec![],
            weight_decay: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        crate::training::train_normal(&mut surrogate, &train, None, &cfg).unwrap();
        let mut victim_model = build_model("conv_b", 4, (1, 8, 8), &mut Rng::new(1004, "v")).unwrap();
        let mut vcfg = cfg.clone();
        vcfg.seed = 1005;
        crate::training::train_normal(&mut victim_model, &train, None, &vcfg).unwrap();
        let victims = vec![VictimOracle::new("victim_b", victim_model)];
        let labels = test.labels().to_vec();
        (surrogate, victims, test.images().clone(), labels)
    }

    #[test]
    fn oracle_exposes_argmax_only() {
        // The wrapped model is private: the public surface is new/id/
        // class_count/predict, so attack code cannot reach logits or
        // gradients through an oracle.
        let model = build_model("mlp", 3, (1, 6, 6), &mut Rng::new(4, "o")).unwrap();
        let oracle = VictimOracle::new("v", model);
        let x = ImageBatch::with_default_ids(ndarray::Array4::from_elem((2, 1, 6, 6), 0.4))
            .unwrap();
        let p = oracle.predict(&x);
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&c| c < 3));
    }

    #[test]
    fn success_predicates() {
        let mut model = build_model("linear", 3, (1, 2, 2), &mut Rng::new(5, "o")).unwrap();
        // Constant-class oracle: bias forces class 2.
        for layer in model.layers_mut() {
            if let crate::model::Layer::Dense { weight, bias } = layer {
                weight.fill(0.0);
                bias[2] = 5.0;
            }
        }
        let oracle = VictimOracle::new("const2", model);
        let x = ImageBatch::with_default_ids(ndarray::Array4::from_elem((3, 1, 2, 2), 0.4))
            .unwrap();
        assert_eq!(
            untargeted_success(&oracle, &x, &[2, 1, 0]).unwrap(),
            vec![false, true, true]
        );
        assert_eq!(
            targeted_success(&oracle, &x, &[2, 2, 0]).unwrap(),
            vec![true, true, false]
        );
        assert!(targeted_success(&oracle, &x, &[9, 0, 0]).is_err());
        // Untargeted success contains targeted success when targets differ
        // from the true labels.
        let untargeted = untargeted_success(&oracle, &x, &[0, 1, 1]).unwrap();
        let targeted = targeted_success(&oracle, &x, &[2, 2, 2]).unwrap();
        for (t, u) in targeted.iter().zip(untargeted.iter()) {
            assert!(!t || *u);
        }
    }

    #[test]
    fn matrix_self_cell_is_white_box_and_reproducible() {
        let (surrogate, victims, images, labels) = tiny_world();
        let spec = MatrixSpec {
            surrogates: vec![Surrogate::Single {
                id: "mlp_s".into(),
                model: &surrogate,
            }],
            victims: &victims,
            optimizers: vec![OptimizerKind::Fgsm, OptimizerKind::Mdi2Fgsm],
            objective: ObjectiveKind::UntargetedCe,
            base_cfg: AttackConfig::default(),
            eval_images: &images,
            eval_labels: &labels,
            targets: None,
            seeds: &[11, 12],
            config_snapshot: serde_json::json!({"test": true}),
        };
        let a = run_matrix(&spec).unwrap();
        let b = run_matrix(&spec).unwrap();
        assert_eq!(a, b);
        // 2 seeds x 2 optimizers x (1 white box + 1 victim) = 8 cells.
        assert_eq!(a.cells.len(), 8);
        assert!(a.cells.iter().any(|c| c.victim == c.surrogate));
        for c in &a.cells {
            assert!(c.successes <= c.samples);
        }
        assert_eq!(a.clean_accuracy.len(), 1);
    }

    #[test]
    fn zero_epsilon_matches_clean_error_rate() {
        let (surrogate, victims, images, labels) = tiny_world();
        let spec = MatrixSpec {
            surrogates: vec![Surrogate::Single {
                id: "mlp_s".into(),
                model: &surrogate,
            }],
            victims: &victims,
            optimizers: vec![OptimizerKind::MiFgsm],
            objective: ObjectiveKind::UntargetedCe,
            base_cfg: AttackConfig {
                epsilon: 0.0,
                ..AttackConfig::default()
            },
            eval_images: &images,
            eval_labels: &labels,
            targets: None,
            seeds: &[1],
            config_snapshot: serde_json::Value::Null,
        };
        let report = run_matrix(&spec).unwrap();
        let cell = report
            .cells
            .iter()
            .find(|c| c.victim == "victim_b")
            .unwrap();
        let clean = report.clean_accuracy[0].accuracy as f64;
        assert!((cell.success_rate() - (1.0 - clean)).abs() < 1e-6);
    }

    #[test]
    fn csv_round_trips_to_equal_cells() {
        let (surrogate, victims, images, labels) = tiny_world();
        let spec = MatrixSpec {
            surrogates: vec![Surrogate::Single {
                id: "mlp_s".into(),
                model: &surrogate,
            }],
            victims: &victims,
            optimizers: vec![OptimizerKind::MiFgsm],
            objective: ObjectiveKind::UntargetedCe,
            base_cfg: AttackConfig::default(),
            eval_images: &images,
            eval_labels: &labels,
            targets: None,
            seeds: &[7],
            config_snapshot: serde_json::Value::Null,
        };
        let report = run_matrix(&spec).unwrap();
        let csv_text = report_to_csv(&report).unwrap();
        let cells = cells_from_csv(&csv_text).unwrap();
        assert_eq!(cells, report.cells);
    }

    #[test]
    fn json_report_includes_config_and_seeds() {
        let (surrogate, victims, images, labels) = tiny_world();
        let spec = MatrixSpec {
            surrogates: vec![Surrogate::Single {
                id: "mlp_s".into(),
                model: &surrogate,
            }],
            victims: &victims,
            optimizers: vec![OptimizerKind::MiFgsm],
            objective: ObjectiveKind::UntargetedCe,
            base_cfg: AttackConfig::default(),
            eval_images: &images,
            eval_labels: &labels,
            targets: None,
            seeds: &[42],
            config_snapshot: serde_json::json!({"epsilon_255": 16}),
        };
        let report = run_matrix(&spec).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: TransferReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert_eq!(back.config["epsilon_255"], 16);
        assert!(back.cells.iter().all(|c| c.seed == 42));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let (surrogate, _, images, labels) = tiny_world();
        let spec = MatrixSpec {
            surrogates: vec![Surrogate::Single {
                id: "mlp_s".into(),
                model: &surrogate,
            }],
            victims: &[],
            optimizers: vec![OptimizerKind::MiFgsm],
            objective: ObjectiveKind::UntargetedCe,
            base_cfg: AttackConfig::default(),
            eval_images: &images,
            eval_labels: &labels,
            targets: None,
            seeds: &[1],
            config_snapshot: serde_json::Value::Null,
        };
        assert!(run_matrix(&spec).is_err());
        let empty = TransferReport {
            cells: vec![],
            clean_accuracy: vec![],
            config: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&empty, ReportFormat::Csv, &dir.path().join("r.csv")).is_err());
    }
}
