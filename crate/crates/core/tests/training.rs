use ecam_core::data::{Label, Split, SyntheticSpec};
use ecam_core::engine::{confusion, train_on_images, validation_score, LabelledImage, Selection, TrainParams};
use ecam_core::net::Gradients;
use ecam_core::optim::{step, OptimState};
use ecam_core::rng::SplitMix64;
use ecam_core::{Network, NetworkConfig};

fn images(split: Split, per_class: usize) -> Vec<LabelledImage> {
    let spec = SyntheticSpec {
        height: 32,
        width: 32,
        seed: 5,
        ..SyntheticSpec::default()
    };
    [Label::A, Label::B]
        .into_iter()
        .flat_map(|label| {
            let spec = &spec;
            (0..per_class).map(move |i| LabelledImage {
                image: spec.render(1, split, label, i).raster().to_tensor().unwrap(),
                label,
            })
        })
        .collect()
}

fn small_config() -> NetworkConfig {
    NetworkConfig {
        scales: 3,
        filters_per_scale: vec![4, 8, 8],
        seed: 3,
        ..NetworkConfig::default()
    }
}

fn sum_squares(net: &Network<f64>) -> f64 {
    net.params().iter().flat_map(|p| p.values.iter()).map(|v| v * v).sum()
}

#[test]
fn sgd_step_descends_quadratic() {
    // L = |theta|^2 / 2 has gradient theta and curvature 1
    let mut net = Network::<f32>::build(small_config()).unwrap().cast::<f64>();
    let before = sum_squares(&net);
    let mut state = OptimState::new(&net, 0.5, 0.0);
    let grads: Gradients<f64> = net.params().iter().map(|p| (p.name.clone(), p.values.to_vec())).collect();
    step(&mut net, &grads, &mut state).unwrap();
    let after = sum_squares(&net);
    assert!(after < before);
    assert!((after - 0.25 * before).abs() < 1e-9 * before);
}

#[test]
fn zero_learning_rate_keeps_validation_score() {
    let train = images(Split::Train, 2);
    let val = images(Split::Val, 3);
    let fresh = Network::<f32>::build(small_config()).unwrap();
    let params = TrainParams {
        learning_rate: 0.0,
        max_iterations: Some(1),
        snapshot_every: 1,
        ..TrainParams::default()
    };
    let (ckpt, run) = train_on_images(&train, &val, small_config(), &params, 1, |_| {}).unwrap();
    assert_eq!(ckpt.network, fresh);
    let before = validation_score(&fresh, &val, Selection::F1).unwrap();
    assert_eq!(run.best.score, before);
}

#[test]
fn confusion_ignores_image_order() {
    let net = Network::<f32>::build(small_config()).unwrap();
    let mut val = images(Split::Val, 4);
    let a = confusion(&net, &val).unwrap();
    SplitMix64::new(8).shuffle(&mut val);
    assert_eq!(confusion(&net, &val).unwrap(), a);
    assert_eq!(a.total(), 8);
}

#[test]
fn training_is_deterministic() {
    let train = images(Split::Train, 3);
    let val = images(Split::Val, 2);
    let params = TrainParams {
        learning_rate: 1e-2,
        max_iterations: Some(10),
        snapshot_every: 4,
        seed: 21,
        ..TrainParams::default()
    };
    let (a, run_a) = train_on_images(&train, &val, small_config(), &params, 1, |_| {}).unwrap();
    let (b, run_b) = train_on_images(&train, &val, small_config(), &params, 1, |_| {}).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(run_a, run_b);
    assert_eq!(run_a.scores.iter().map(|s| s.iteration).collect::<Vec<_>>(), vec![4, 8, 10]);
    let last = Network::<f32>::build(small_config()).unwrap();
    assert_ne!(a.network, last, "ten steps at 1e-2 move the parameters");
}
