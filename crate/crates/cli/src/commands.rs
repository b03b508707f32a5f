//! Subcommand implementations. Every command validates its full
//! configuration and inputs first, then writes artifacts plus a manifest
//! that reproduces the run byte-for-byte.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dsm_core::attacks::{ensemble_attack, run_attack, AttackConfig, Objective};
use dsm_core::augment::MixStrategy;
use dsm_core::checkpoint::{load_checkpoint, save_checkpoint};
use dsm_core::dataset::{write_idx_images, write_idx_labels, Dataset};
use dsm_core::evalharness::{
    emit_alpha_plot, emit_bar_plot, emit_report, run_matrix, sweep_alpha, MatrixSpec,
    ObjectiveKind, ReportCell, ReportFormat, Surrogate, SweepSpec, TransferReport, VictimOracle,
};
use dsm_core::faceverify::{
    build_toy_identity_dataset, calibrate_threshold, dodging_attack, impersonate_attack,
    load_pairs, pair_indices, save_pairs, FaceVerifier, MarginKind, ProtocolPair,
};
use dsm_core::image::ImageBatch;
use dsm_core::labeling::LabelStrategyKind;
use dsm_core::model::{build_model, ClassifierModel};
use dsm_core::rng::Rng;
use dsm_core::training::{train_dsm, train_face_classifier, train_normal, train_slightly_robust};

use crate::config::{resolve_out_dir, ResolvedAttack, RunConfig};

/// Written next to every run's artifacts; re-running it reproduces them.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub artifacts: Vec<String>,
}

pub struct RunContext {
    pub config: RunConfig,
    pub out_dir: PathBuf,
}

impl RunContext {
    pub fn new(
        config_path: &Path,
        seed_override: Option<u64>,
        out_flag: Option<&Path>,
    ) -> Result<Self> {
        let mut config = RunConfig::from_path(config_path)?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        let out_dir = resolve_out_dir(out_flag, &config)?;
        Ok(RunContext { config, out_dir })
    }

    pub fn from_manifest(manifest_path: &Path, out_flag: Option<&Path>) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(manifest_path)
            .with_context(|| format!("cannot read manifest {}", manifest_path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).context("malformed manifest")?;
        let out_dir = match out_flag {
            Some(p) => p.to_path_buf(),
            None => bail!("rerun needs --out"),
        };
        Ok((
            RunContext {
                config: manifest.config,
                out_dir,
            },
            manifest.command,
        ))
    }

    fn snapshot(&self) -> RunConfig {
        // The output directory is delivery location, not run semantics;
        // strip it so reruns into other directories stay byte-identical.
        let mut c = self.config.clone();
        c.out_dir = None;
        c
    }

    fn config_json(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "command": command,
            "seed": self.config.seed,
            "config": self.snapshot(),
        })
    }

    fn finish(&self, command: &str, artifacts: Vec<String>) -> Result<()> {
        let manifest = Manifest {
            command: command.to_string(),
            seed: self.config.seed,
            config: self.snapshot(),
            artifacts,
        };
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn ensure_out_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create {}", self.out_dir.display()))
    }
}

fn stem(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

fn load_models(paths: &[String]) -> Result<Vec<(String, ClassifierModel)>> {
    paths
        .iter()
        .map(|p| {
            let model = load_checkpoint(Path::new(p))
                .with_context(|| format!("cannot load checkpoint {p}"))?;
            Ok((stem(p), model))
        })
        .collect()
}

fn require_dataset(ctx: &RunContext) -> Result<(Dataset, Option<Dataset>)> {
    let spec = ctx
        .config
        .dataset
        .as_ref()
        .context("this command needs a `dataset` section")?;
    spec.load(ctx.config.seed)
}

fn eval_subset(test: &Dataset, cap: usize) -> Result<(ImageBatch, Vec<u32>)> {
    let n = test.len().min(cap.max(1));
    let indices: Vec<usize> = (0..n).collect();
    let images = test.images().select(&indices)?;
    let labels: Vec<u32> = test.labels()[..n].to_vec();
    Ok((images, labels))
}

fn derived_targets(labels: &[u32], k: usize) -> Vec<u32> {
    labels.iter().map(|&y| (y + 1) % k as u32).collect()
}

pub fn cmd_train(ctx: &RunContext) -> Result<()> {
    let (train, test) = require_dataset(ctx)?;
    let arch = ctx
        .config
        .architecture
        .as_deref()
        .context("train needs `architecture`")?;
    let cfg = ctx.config.resolved_train();
    let (c, h, w) = train.images().sample_shape();
    let mut model = build_model(
        arch,
        train.class_count(),
        (c, h, w),
        &mut Rng::new(ctx.config.seed, "model-init"),
    )?;

    ctx.ensure_out_dir()?;
    let log = match ctx.config.robust_eps {
        Some(eps_r) => train_slightly_robust(&mut model, &train, test.as_ref(), &cfg, eps_r)?,
        None => train_normal(&mut model, &train, test.as_ref(), &cfg)?,
    };
    save_checkpoint(&model, &ctx.out_dir.join("model.ckpt"))?;
    std::fs::write(ctx.out_dir.join("trainlog.jsonl"), log.to_jsonl())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "trained {arch}: loss {:.4}, test accuracy {:?}",
            last.loss, last.test_accuracy
        );
    }
    ctx.finish("train", vec!["model.ckpt".into(), "trainlog.jsonl".into()])
}

pub fn cmd_distill(ctx: &RunContext) -> Result<()> {
    let (train, test) = require_dataset(ctx)?;
    let arch = ctx
        .config
        .architecture
        .as_deref()
        .context("distill needs `architecture`")?;
    let mut cfg = ctx.config.resolved_train();
    if ctx.config.train.is_none() {
        // Distillation defaults: dark labels over CutMix-augmented inputs.
        cfg.label_strategy.kind = LabelStrategyKind::Dark;
        cfg.mix = MixStrategy::Cutmix;
    }
    let teacher = ctx
        .config
        .teacher_checkpoint
        .as_deref()
        .map(|p| load_checkpoint(Path::new(p)).with_context(|| format!("cannot load teacher {p}")))
        .transpose()?;
    if cfg.label_strategy.kind.needs_teacher() && teacher.is_none() {
        bail!("label strategy {:?} needs `teacher_checkpoint`", cfg.label_strategy.kind);
    }

    let (c, h, w) = train.images().sample_shape();
    let mut student = build_model(
        arch,
        train.class_count(),
        (c, h, w),
        &mut Rng::new(ctx.config.seed, "model-init"),
    )?;
    ctx.ensure_out_dir()?;
    let log = train_dsm(&mut student, teacher.as_ref(), &train, test.as_ref(), &cfg)?;
    save_checkpoint(&student, &ctx.out_dir.join("student.ckpt"))?;
    std::fs::write(ctx.out_dir.join("trainlog.jsonl"), log.to_jsonl())?;
    if let Some(last) = log.epochs.last() {
        println!(
            "distilled {arch}: loss {:.4}, test accuracy {:?}",
            last.loss, last.test_accuracy
        );
    }
    ctx.finish("distill", vec!["student.ckpt".into(), "trainlog.jsonl".into()])
}

#[derive(Serialize)]
struct AttackReport {
    config: serde_json::Value,
    surrogates: Vec<String>,
    objective: String,
    optimizer: String,
    epsilon: f32,
    iterations: usize,
    samples: usize,
    max_linf: f32,
    white_box: Vec<WhiteBoxEntry>,
}

#[derive(Serialize)]
struct WhiteBoxEntry {
    surrogate: String,
    success_rate: f64,
}

pub fn cmd_attack(ctx: &RunContext) -> Result<()> {
    let (train, test) = require_dataset(ctx)?;
    let eval_set = test.unwrap_or(train);
    if ctx.config.surrogates.is_empty() {
        bail!("attack needs at least one entry in `surrogates`");
    }
    let models = load_models(&ctx.config.surrogates)?;
    let resolved = ctx
        .config
        .attack
        .clone()
        .unwrap_or_default()
        .resolve(16.0, 10)?;
    let eval_cap = ctx
        .config
        .eval
        .clone()
        .unwrap_or_default()
        .eval_samples;
    let (images, labels) = eval_subset(&eval_set, eval_cap)?;
    let k = eval_set.class_count();
    for (_, m) in &models {
        if m.class_count() != k {
            bail!("surrogate class count {} does not match dataset {k}", m.class_count());
        }
    }

    let objective = match resolved.objective {
        ObjectiveKind::UntargetedCe => Objective::UntargetedCe {
            labels: labels.clone(),
        },
        ObjectiveKind::TargetedCe => Objective::TargetedCe {
            targets: derived_targets(&labels, k),
        },
        ObjectiveKind::TargetedLogit => Objective::TargetedLogit {
            targets: derived_targets(&labels, k),
        },
    };
    let cfg = resolved.optimizer.specialize(&resolved.cfg);

    ctx.ensure_out_dir()?;
    let mut rng = Rng::new(ctx.config.seed, "attack");
    let result = if models.len() == 1 {
        run_attack(&models[0].1, &images, &objective, &cfg, &mut rng)?
    } else {
        let members: Vec<&ClassifierModel> = models.iter().map(|(_, m)| m).collect();
        ensemble_attack(members, &images, &objective, &cfg, resolved.fusion, &mut rng)?
    };

    let max_linf = result
        .adversarial
        .data()
        .iter()
        .zip(images.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    let white_box = models
        .iter()
        .map(|(id, m)| {
            let predictions = m.predict(&result.adversarial);
            let hits = predictions
                .iter()
                .zip(labels.iter())
                .filter(|(p, y)| match resolved.objective {
                    ObjectiveKind::UntargetedCe => p != y,
                    _ => **p == (*y + 1) % k as u32,
                })
                .count();
            WhiteBoxEntry {
                surrogate: id.clone(),
                success_rate: hits as f64 / labels.len() as f64,
            }
        })
        .collect();

    write_idx_images(&result.adversarial, &ctx.out_dir.join("adv_images.idx"))?;
    write_idx_labels(&labels, &ctx.out_dir.join("adv_labels.idx"))?;
    let report = AttackReport {
        config: ctx.config_json("attack"),
        surrogates: models.iter().map(|(id, _)| id.clone()).collect(),
        objective: resolved.objective.name().to_string(),
        optimizer: resolved.optimizer.name().to_string(),
        epsilon: cfg.epsilon,
        iterations: cfg.iterations,
        samples: labels.len(),
        max_linf,
        white_box,
    };
    std::fs::write(
        ctx.out_dir.join("attack_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "crafted {} adversarial samples ({} / {}), max linf {:.5}",
        labels.len(),
        report.optimizer,
        report.objective,
        max_linf
    );
    ctx.finish(
        "attack",
        vec![
            "adv_images.idx".into(),
            "adv_labels.idx".into(),
            "attack_report.json".into(),
        ],
    )
}

pub fn cmd_eval(ctx: &RunContext) -> Result<()> {
    let (train, test) = require_dataset(ctx)?;
    let eval_set = test.unwrap_or(train);
    if ctx.config.surrogates.is_empty() || ctx.config.victims.is_empty() {
        bail!("eval needs `surrogates` and `victims`");
    }
    let surrogate_models = load_models(&ctx.config.surrogates)?;
    let victim_models = load_models(&ctx.config.victims)?;
    let eval_section = ctx.config.eval.clone().unwrap_or_default();
    let resolved = ctx
        .config
        .attack
        .clone()
        .unwrap_or_default()
        .resolve(16.0, 10)?;
    let (images, labels) = eval_subset(&eval_set, eval_section.eval_samples)?;
    let k = eval_set.class_count();

    let mut surrogates: Vec<Surrogate> = surrogate_models
        .iter()
        .map(|(id, m)| Surrogate::Single {
            id: id.clone(),
            model: m,
        })
        .collect();
    if eval_section.include_ensemble && surrogate_models.len() > 1 {
        surrogates.push(Surrogate::Ensemble {
            id: "ensemble".into(),
            members: surrogate_models.iter().map(|(_, m)| m).collect(),
            fusion: resolved.fusion,
        });
    }
    let victims: Vec<VictimOracle> = victim_models
        .into_iter()
        .map(|(id, m)| VictimOracle::new(id, m))
        .collect();

    let targets = resolved
        .objective
        .is_targeted()
        .then(|| derived_targets(&labels, k));
    ctx.ensure_out_dir()?;
    let report = run_matrix(&MatrixSpec {
        surrogates,
        victims: &victims,
        optimizers: eval_section.optimizers.clone(),
        objective: resolved.objective,
        base_cfg: resolved.cfg,
        eval_images: &images,
        eval_labels: &labels,
        targets,
        seeds: &eval_section.seeds,
        config_snapshot: ctx.config_json("eval"),
    })?;

    emit_report(&report, ReportFormat::Csv, &ctx.out_dir.join("report.csv"))?;
    emit_report(&report, ReportFormat::Json, &ctx.out_dir.join("report.json"))?;
    let bars = mean_transfer_bars(&report);
    emit_bar_plot(
        "mean transfer success by surrogate/optimizer",
        &bars,
        &ctx.out_dir.join("transfer_bars.svg"),
    )?;
    for (label, value) in &bars {
        println!("{label}: {:.1}%", value * 100.0);
    }
    ctx.finish(
        "eval",
        vec![
            "report.csv".into(),
            "report.json".into(),
            "transfer_bars.svg".into(),
        ],
    )
}

fn mean_transfer_bars(report: &TransferReport) -> Vec<(String, f64)> {
    let mut keys: Vec<(String, String)> = report
        .cells
        .iter()
        .map(|c| (c.surrogate.clone(), c.optimizer.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(s, o)| {
            let mean = report.mean_transfer(&s, &o);
            (format!("{s}/{o}"), mean)
        })
        .collect()
}

pub fn cmd_sweep_alpha(ctx: &RunContext) -> Result<()> {
    let (train, test) = require_dataset(ctx)?;
    let eval_set = test.as_ref().unwrap_or(&train);
    let teacher_path = ctx
        .config
        .teacher_checkpoint
        .as_deref()
        .context("sweep-alpha needs `teacher_checkpoint`")?;
    let teacher = load_checkpoint(Path::new(teacher_path))?;
    if ctx.config.victims.is_empty() {
        bail!("sweep-alpha needs `victims`");
    }
    let victims: Vec<VictimOracle> = load_models(&ctx.config.victims)?
        .into_iter()
        .map(|(id, m)| VictimOracle::new(id, m))
        .collect();
    let sweep = ctx.config.sweep.clone().unwrap_or_default();
    let resolved = ctx
        .config
        .attack
        .clone()
        .unwrap_or_default()
        .resolve(16.0, 10)?;
    let (images, labels) = eval_subset(eval_set, sweep.eval_samples)?;
    let train_cfg = ctx.config.resolved_train();

    ctx.ensure_out_dir()?;
    let points = sweep_alpha(&SweepSpec {
        teacher: &teacher,
        student_arch: sweep.student_architecture.clone(),
        train: &train,
        victims: &victims,
        eval_images: &images,
        eval_labels: &labels,
        alphas: sweep.alphas.clone(),
        seeds: &sweep.seeds,
        train_cfg,
        attack_cfg: resolved.cfg,
        optimizer: resolved.optimizer,
    })?;

    std::fs::write(
        ctx.out_dir.join("alpha_curve.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "config": ctx.config_json("sweep-alpha"),
            "points": points,
        }))?,
    )?;
    emit_alpha_plot(&points, None, &ctx.out_dir.join("alpha_sweep.svg"))?;
    for p in &points {
        println!("alpha {}: mean transfer {:.1}%", p.alpha, p.mean_success * 100.0);
    }
    ctx.finish(
        "sweep-alpha",
        vec!["alpha_curve.json".into(), "alpha_sweep.svg".into()],
    )
}

pub fn cmd_face_train(ctx: &RunContext) -> Result<()> {
    let face = ctx.config.face.clone().unwrap_or_default();
    let data = build_toy_identity_dataset(
        face.n_ids,
        face.per_id,
        (face.height, face.width),
        &mut Rng::new(ctx.config.seed, "face-data"),
    )?;
    let mut cfg = ctx.config.resolved_train();
    let teacher = ctx
        .config
        .teacher_checkpoint
        .as_deref()
        .map(|p| load_checkpoint(Path::new(p)).with_context(|| format!("cannot load teacher {p}")))
        .transpose()?;
    if teacher.is_some() && ctx.config.train.is_none() {
        cfg.label_strategy.kind = LabelStrategyKind::Dark;
        cfg.mix = MixStrategy::Cutmix;
    }

    let mut model = build_model(
        &face.architecture,
        data.train.class_count(),
        (1, face.height, face.width),
        &mut Rng::new(ctx.config.seed, "face-model-init"),
    )?;
    ctx.ensure_out_dir()?;
    let log = if teacher.is_some() {
        if face.margin.kind != MarginKind::PlainSoftmax {
            bail!("dark-label face training uses the plain softmax head");
        }
        train_dsm(&mut model, teacher.as_ref(), &data.train, None, &cfg)?
    } else {
        train_face_classifier(&mut model, &data.train, None, &face.margin, &cfg)?
    };

    save_checkpoint(&model, &ctx.out_dir.join("face_model.ckpt"))?;
    save_pairs(&data.protocol.calibration, &ctx.out_dir.join("calibration.pairs"))?;
    save_pairs(&data.protocol.evaluation, &ctx.out_dir.join("evaluation.pairs"))?;
    let threshold = calibrate_threshold(&model, &data.bank, &data.protocol.calibration)?;
    std::fs::write(
        ctx.out_dir.join("threshold.json"),
        serde_json::to_string_pretty(&threshold)?,
    )?;
    std::fs::write(ctx.out_dir.join("trainlog.jsonl"), log.to_jsonl())?;
    println!(
        "face classifier trained; eer {:.3} at tau {:.3}",
        threshold.eer, threshold.tau
    );
    ctx.finish(
        "face-train",
        vec![
            "face_model.ckpt".into(),
            "calibration.pairs".into(),
            "evaluation.pairs".into(),
            "threshold.json".into(),
            "trainlog.jsonl".into(),
        ],
    )
}

pub fn cmd_face_attack(ctx: &RunContext) -> Result<()> {
    let face = ctx.config.face.clone().unwrap_or_default();
    let surrogate_path = face
        .surrogate
        .as_deref()
        .context("face-attack needs `face.surrogate`")?;
    if face.victims.is_empty() {
        bail!("face-attack needs `face.victims`");
    }
    let surrogate = load_checkpoint(Path::new(surrogate_path))?;
    let victims = load_models(&face.victims)?;
    // Face attacks default to the Table-7 recipe: eps 8/255, 20 iterations.
    let mut section = face.attack.clone();
    if section.iterations.is_none() {
        section.iterations = Some(20);
    }
    let resolved = section.resolve(8.0, 20)?;

    let data = build_toy_identity_dataset(
        face.n_ids,
        face.per_id,
        (face.height, face.width),
        &mut Rng::new(ctx.config.seed, "face-data"),
    )?;
    let evaluation = data.protocol.evaluation.clone();
    let resolved_pairs = pair_indices(&data.bank, &evaluation)?;
    let same: Vec<(usize, usize)> = resolved_pairs
        .iter()
        .filter(|(_, _, s)| *s)
        .map(|&(a, b, _)| (a, b))
        .collect();
    let diff: Vec<(usize, usize)> = resolved_pairs
        .iter()
        .filter(|(_, _, s)| !*s)
        .map(|&(a, b, _)| (a, b))
        .collect();
    if same.is_empty() || diff.is_empty() {
        bail!("evaluation protocol needs both same and different pairs");
    }

    ctx.ensure_out_dir()?;
    let verifiers: Vec<FaceVerifier> = std::iter::once(("white_box".to_string(), surrogate.clone()))
        .chain(victims.into_iter())
        .map(|(id, model)| {
            let threshold = calibrate_threshold(&model, &data.bank, &data.protocol.calibration)?;
            Ok(FaceVerifier::new(id, model, threshold.tau))
        })
        .collect::<Result<_>>()?;

    let gather = |pairs: &[(usize, usize)]| -> Result<(ImageBatch, ImageBatch)> {
        let xs: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
        let rs: Vec<usize> = pairs.iter().map(|&(_, b)| b).collect();
        Ok((data.bank.select(&xs)?, data.bank.select(&rs)?))
    };
    let (dodge_x, dodge_ref) = gather(&same)?;
    let (imp_x, imp_ref) = gather(&diff)?;

    let dodge_adv = dodging_attack(
        &surrogate,
        &dodge_x,
        &dodge_ref,
        &resolved.cfg,
        &mut Rng::new(ctx.config.seed, "dodge"),
    )?;
    let imp_adv = impersonate_attack(
        &surrogate,
        &imp_x,
        &imp_ref,
        &resolved.cfg,
        &mut Rng::new(ctx.config.seed, "impersonate"),
    )?;

    let mut cells: Vec<ReportCell> = Vec::new();
    let mut sim_csv = String::from("victim,attack,id1,id2,clean_sim,adv_sim,tau,success\n");
    for verifier in &verifiers {
        for (kind, pairs, clean_x, adv, refs) in [
            ("embedding_dodge", &same, &dodge_x, &dodge_adv.adversarial, &dodge_ref),
            ("embedding_impersonate", &diff, &imp_x, &imp_adv.adversarial, &imp_ref),
        ] {
            let clean_sims = verifier.similarities(clean_x, refs);
            let adv_sims = verifier.similarities(adv, refs);
            let mut successes = 0usize;
            for (i, &(a, b)) in pairs.iter().enumerate() {
                let success = if kind == "embedding_dodge" {
                    adv_sims[i] < verifier.tau()
                } else {
                    adv_sims[i] >= verifier.tau()
                };
                successes += usize::from(success);
                sim_csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    verifier.id(),
                    kind,
                    data.bank.ids()[a],
                    data.bank.ids()[b],
                    clean_sims[i],
                    adv_sims[i],
                    verifier.tau(),
                    u8::from(success)
                ));
            }
            cells.push(ReportCell {
                surrogate: stem(surrogate_path),
                victim: verifier.id().to_string(),
                optimizer: resolved.optimizer.name().to_string(),
                objective: kind.to_string(),
                epsilon: resolved.cfg.epsilon,
                iterations: resolved.cfg.iterations,
                seed: ctx.config.seed,
                successes,
                samples: pairs.len(),
            });
        }
    }

    let report = TransferReport {
        cells,
        clean_accuracy: vec![],
        config: ctx.config_json("face-attack"),
    };
    emit_report(&report, ReportFormat::Json, &ctx.out_dir.join("face_report.json"))?;
    emit_report(&report, ReportFormat::Csv, &ctx.out_dir.join("face_report.csv"))?;
    std::fs::write(ctx.out_dir.join("similarities.csv"), sim_csv)?;
    for c in &report.cells {
        println!(
            "{} vs {}: {} success {:.1}%",
            c.surrogate,
            c.victim,
            c.objective,
            100.0 * c.success_rate()
        );
    }
    ctx.finish(
        "face-attack",
        vec![
            "face_report.json".into(),
            "face_report.csv".into(),
            "similarities.csv".into(),
        ],
    )
}

/// Re-emit a stored JSON report as CSV (or JSON) plus the bar chart.
pub fn cmd_report(input: &Path, format: ReportFormat, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("cannot read report {}", input.display()))?;
    let report: TransferReport = serde_json::from_str(&text).context("malformed report JSON")?;
    std::fs::create_dir_all(out_dir)?;
    match format {
        ReportFormat::Csv => emit_report(&report, ReportFormat::Csv, &out_dir.join("report.csv"))?,
        ReportFormat::Json => {
            emit_report(&report, ReportFormat::Json, &out_dir.join("report.json"))?
        }
    }
    let bars = mean_transfer_bars(&report);
    if !bars.is_empty() {
        emit_bar_plot(
            "mean transfer success by surrogate/optimizer",
            &bars,
            &out_dir.join("transfer_bars.svg"),
        )?;
    }
    println!("re-emitted report with {} cells", report.cells.len());
    Ok(())
}

pub fn dispatch(command: &str, ctx: &RunContext) -> Result<()> {
    match command {
        "train" => cmd_train(ctx),
        "distill" => cmd_distill(ctx),
        "attack" => cmd_attack(ctx),
        "eval" => cmd_eval(ctx),
        "sweep-alpha" => cmd_sweep_alpha(ctx),
        "face-train" => cmd_face_train(ctx),
        "face-attack" => cmd_face_attack(ctx),
        other => bail!("manifest references unknown command {other:?}"),
    }
}

/// Load protocol pairs from explicit files when configured; used by tests to
/// confirm the text format round-trips through the attack path.
pub fn load_protocol_pairs(path: &Path) -> Result<Vec<ProtocolPair>> {
    Ok(load_pairs(path)?)
}
