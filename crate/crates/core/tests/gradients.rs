//! Central-finite-difference checks of input and parameter gradients against
//! the slow f64 reference implementation.

use dsm_core::image::ImageBatch;
use dsm_core::label::LabelDistribution;
use dsm_core::loss::{input_gradient, LossSpec};
use dsm_core::model::{build_model, ClassifierModel, ParamTensor};
use dsm_core::reference::{
    central_diff_input, central_diff_param, flat_tensor, relative_error, ReferenceModel,
};
use dsm_core::rng::Rng;
use ndarray::{Array2, Array4, Axis};

const ARCHS: [&str; 3] = ["conv_a", "conv_b", "mlp"];
const INPUT_STEP: f64 = 1e-3;
const PARAM_STEP: f64 = 1e-4;
const TOL: f64 = 1e-3;

fn random_batch(rng: &mut Rng, n: usize) -> Array4<f32> {
    Array4::from_shape_fn((n, 1, 12, 12), |_| 0.05 + 0.9 * rng.next_f32())
}

fn random_simplex_rows(rng: &mut Rng, n: usize, k: usize) -> LabelDistribution {
    let mut m = Array2::<f32>::zeros((n, k));
    for mut row in m.axis_iter_mut(Axis(0)) {
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = rng.next_f32() + 0.05;
            sum += *v;
        }
        row.mapv_inplace(|v| v / sum);
    }
    LabelDistribution::new(m).unwrap()
}

fn specs_for(model: &ClassifierModel, rng: &mut Rng, n: usize) -> Vec<LossSpec> {
    let k = model.class_count();
    let d_e = model.embedding_dim();
    let reference =
        Array2::from_shape_fn((n, d_e), |_| rng.next_f32() - 0.5);
    vec![
        LossSpec::CrossEntropy {
            targets: random_simplex_rows(rng, n, k),
        },
        LossSpec::Logit {
            targets: (0..n).map(|i| (i % k) as u32).collect(),
        },
        LossSpec::CosineToReference { reference },
    ]
}

#[test]
fn input_gradients_match_central_differences() {
    for (ai, arch) in ARCHS.iter().enumerate() {
        let mut rng = Rng::new(100 + ai as u64, "fd-input");
        let model = build_model(arch, 6, (1, 12, 12), &mut rng).unwrap();
        let reference = ReferenceModel::from_model(&model);
        let x32 = random_batch(&mut rng, 2);
        let x64 = x32.mapv(f64::from);
        let batch = ImageBatch::with_default_ids(x32.clone()).unwrap();

        for spec in specs_for(&model, &mut rng, 2) {
            let analytic = input_gradient(&model, &batch, &spec).unwrap();
            for _ in 0..20 {
                let coord = (
                    rng.below(2) as usize,
                    0usize,
                    rng.below(12) as usize,
                    rng.below(12) as usize,
                );
                let fd = central_diff_input(&reference, &x64, &spec, coord, INPUT_STEP);
                let got = f64::from(analytic[coord]);
                let rel = relative_error(fd, got);
                assert!(
                    rel < TOL,
                    "{arch}: input grad at {coord:?}: fd {fd:.6e} vs analytic {got:.6e} (rel {rel:.2e})"
                );
            }
        }
    }
}

#[test]
fn parameter_gradients_match_central_differences() {
    for (ai, arch) in ARCHS.iter().enumerate() {
        let mut rng = Rng::new(200 + ai as u64, "fd-param");
        let model = build_model(arch, 5, (1, 12, 12), &mut rng).unwrap();
        let reference = ReferenceModel::from_model(&model);
        let x32 = random_batch(&mut rng, 2);
        let x64 = x32.mapv(f64::from);
        let targets = random_simplex_rows(&mut rng, 2, 5);
        let spec = LossSpec::CrossEntropy { targets };

        // Analytic parameter gradients through the production backward pass.
        let trace = model.forward_trace(&x32);
        let d_logits = dsm_core::loss::d_logits_ce(
            match &spec {
                LossSpec::CrossEntropy { targets } => targets,
                _ => unreachable!(),
            },
            trace.logits(),
        )
        .unwrap();
        let (_, grads) = model.backward(&trace, d_logits);

        let named: Vec<(String, Vec<f32>)> = model
            .param_tensors()
            .into_iter()
            .zip(flatten_grads(&model, &grads))
            .map(|((name, _), g)| (name, g))
            .collect();

        for _ in 0..20 {
            let (name, grad_flat) = &named[rng.below(named.len() as u64) as usize];
            let idx = rng.below(grad_flat.len() as u64) as usize;
            let fd = central_diff_param(&reference, &x64, &spec, name, idx, PARAM_STEP);
            let got = f64::from(grad_flat[idx]);
            let rel = relative_error(fd, got);
            assert!(
                rel < TOL,
                "{arch}: {name}[{idx}]: fd {fd:.6e} vs analytic {got:.6e} (rel {rel:.2e})"
            );
        }
    }
}

#[test]
fn distillation_gradient_matches_central_differences_on_two_layer_model() {
    // Teacher probabilities as fixed soft targets; student is the 2-dense
    // mlp. This is the training loss of the distillation step.
    let mut rng = Rng::new(300, "fd-distill");
    let teacher = build_model("mlp", 4, (1, 12, 12), &mut rng).unwrap();
    let student = build_model("mlp", 4, (1, 12, 12), &mut rng).unwrap();
    let x32 = random_batch(&mut rng, 3);
    let x64 = x32.mapv(f64::from);
    let batch = ImageBatch::with_default_ids(x32.clone()).unwrap();
    let soft = dsm_core::labeling::dark_label(&teacher, &batch, 1.0).unwrap();
    let spec = LossSpec::CrossEntropy { targets: soft };

    let trace = student.forward_trace(&x32);
    let d_logits = dsm_core::loss::d_logits_ce(
        match &spec {
            LossSpec::CrossEntropy { targets } => targets,
            _ => unreachable!(),
        },
        trace.logits(),
    )
    .unwrap();
    let (_, grads) = student.backward(&trace, d_logits);
    let reference = ReferenceModel::from_model(&student);
    let named: Vec<(String, Vec<f32>)> = student
        .param_tensors()
        .into_iter()
        .zip(flatten_grads(&student, &grads))
        .map(|((name, _), g)| (name, g))
        .collect();

    for _ in 0..10 {
        let (name, grad_flat) = &named[rng.below(named.len() as u64) as usize];
        let idx = rng.below(grad_flat.len() as u64) as usize;
        let fd = central_diff_param(&reference, &x64, &spec, name, idx, PARAM_STEP);
        let got = f64::from(grad_flat[idx]);
        let rel = relative_error(fd, got);
        assert!(rel < TOL, "{name}[{idx}]: fd {fd:.6e} vs {got:.6e}");
    }
}

fn flatten_grads(model: &ClassifierModel, grads: &dsm_core::model::Gradients) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    for (layer, grad) in model.layers().iter().zip(grads.per_layer.iter()) {
        match (layer, grad) {
            (
                dsm_core::model::Layer::Conv { .. },
                Some(dsm_core::model::LayerGrad::Conv { d_weight, d_bias }),
            ) => {
                out.push(flat_tensor(&ParamTensor::T4(d_weight)));
                out.push(flat_tensor(&ParamTensor::T1(d_bias)));
            }
            (
                dsm_core::model::Layer::Dense { .. },
                Some(dsm_core::model::LayerGrad::Dense { d_weight, d_bias }),
            ) => {
                out.push(flat_tensor(&ParamTensor::T2(d_weight)));
                out.push(flat_tensor(&ParamTensor::T1(d_bias)));
            }
            _ => {}
        }
    }
    out
}
