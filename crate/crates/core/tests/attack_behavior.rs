//! Behavioral checks of the optimizers on trained toy models.

use dsm_core::attacks::{fgsm, mi_fgsm, AttackConfig, Objective};
use dsm_core::dataset::{make_classification, SynthSpec};
use dsm_core::model::build_model;
use dsm_core::rng::Rng;
use dsm_core::training::{train_normal, TrainConfig};

/// On a trained model, ten momentum steps should fool it at least as often
/// as one full-size step, averaged over seeds.
#[test]
fn white_box_mi_fgsm_beats_fgsm_on_average() {
    let spec = SynthSpec {
        class_count: 6,
        train_per_class: 40,
        test_per_class: 12,
        height: 10,
        width: 10,
        noise_sd: 0.12,
        max_shift: 1,
    };
    let eps = 16.0 / 255.0;
    let mut fgsm_mean = 0.0;
    let mut mi_mean = 0.0;
    for seed in [1u64, 2, 3] {
        let (train, test) = make_classification(&spec, &mut Rng::new(seed, "data")).unwrap();
        let mut model =
            build_model("conv_a", 6, (1, 10, 10), &mut Rng::new(seed, "model")).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 32,
            learning_rate: 0.05,
            lr_decay_epochs: vec![],
            seed,
            ..TrainConfig::default()
        };
        train_normal(&mut model, &train, None, &cfg).unwrap();

        let labels = test.labels().to_vec();
        let x = test.images();
        let one_step = fgsm(&model, x, &labels, eps).unwrap();
        let attack_cfg = AttackConfig {
            epsilon: eps,
            beta: 2.0 / 255.0,
            mu: 1.0,
            iterations: 10,
            p_t: 0.0,
            diversity: false,
        };
        let many_steps = mi_fgsm(
            &model,
            x,
            &Objective::UntargetedCe {
                labels: labels.clone(),
            },
            &attack_cfg,
        )
        .unwrap();

        let success = |adv: &dsm_core::image::ImageBatch| {
            model
                .predict(adv)
                .iter()
                .zip(labels.iter())
                .filter(|(p, y)| p != y)
                .count() as f64
                / labels.len() as f64
        };
        fgsm_mean += success(&one_step.adversarial) / 3.0;
        mi_mean += success(&many_steps.adversarial) / 3.0;
    }
    assert!(
        mi_mean >= fgsm_mean,
        "MI-FGSM {mi_mean:.3} below FGSM {fgsm_mean:.3}"
    );
}
