use ecam_core::net::{total_loss, Arch, Network, NetworkConfig, ScaleTag};
use ecam_core::rng::SplitMix64;
use ecam_core::Tensor;
use proptest::prelude::*;

fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = SplitMix64::new(seed);
    let data = (0..3 * h * w).map(|_| rng.next_f64() as f32).collect();
    Tensor::from_vec((1, 3, h, w), data).unwrap()
}

fn config(arch: Arch, seed: u64) -> NetworkConfig {
    NetworkConfig {
        arch,
        seed,
        ..NetworkConfig::default()
    }
}

/// Mean of one channel, accumulated independently of the library in f64.
fn channel_mean(t: &Tensor<f32>, k: usize) -> f64 {
    let plane = t.plane(0, k);
    plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn logits_are_heatmap_means(
        seed in any::<u64>(),
        scales in 2usize..=5,
        hm in 1usize..=3,
        wm in 1usize..=3,
        extra in 0usize..8,
    ) {
        let g = 1usize << (scales - 1);
        let h = (hm * g).max(16) + extra;
        let w = (wm * g).max(16) + extra / 2;
        let cfg = NetworkConfig {
            scales,
            filters_per_scale: [8, 16, 32, 64, 64][..scales].to_vec(),
            seed,
            ..NetworkConfig::default()
        };
        let net = Network::<f32>::build(cfg).unwrap();
        let out = net.forward(&random_image(h, w, seed ^ 0x5eed)).unwrap();
        for (s, (map, logits)) in out.ecam_s.iter().zip(&out.logits_s).enumerate() {
            prop_assert_eq!((map.shape().h, map.shape().w), (h, w), "scale {}", s + 1);
            for (k, &l) in logits.iter().enumerate() {
                prop_assert!((l as f64 - channel_mean(map, k)).abs() <= 1e-5);
            }
        }
        for (k, &l) in out.logits_f.iter().enumerate() {
            prop_assert!((l as f64 - channel_mean(&out.ecam_fused, k)).abs() <= 1e-5);
        }
        for p in out.probs_s.iter().chain(std::iter::once(&out.probs_f)) {
            prop_assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn total_loss_is_mean_of_six(values in proptest::collection::vec(0.0f64..20.0, 6)) {
        let mean = values.iter().sum::<f64>() / 6.0;
        let got = total_loss(&values[..5], values[5], 5).unwrap();
        prop_assert!((got - mean).abs() <= 1e-7);
        let v = values[0];
        prop_assert!((total_loss(&[v; 5], v, 5).unwrap() - v).abs() <= 1e-7);
    }
}

#[test]
fn loss_divisor_is_six() {
    assert!((total_loss(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.6, 5).unwrap() - 0.35f64).abs() < 1e-12);
    assert_eq!(total_loss(&[0.0; 5], 6.0f64, 5).unwrap(), 1.0);
    assert!(total_loss(&[0.0; 4], 0.0f64, 5).is_err());
}

#[test]
fn heatmaps_match_input_extent() {
    let net = Network::<f32>::build(config(Arch::Proposed, 3)).unwrap();
    for (h, w) in [(308, 458), (308, 696), (64, 64)] {
        let out = net.forward(&random_image(h, w, 1)).unwrap();
        for tag in (1..=5).map(ScaleTag::Scale).chain([ScaleTag::Fused]) {
            for k in 0..2 {
                let m = out.heatmap(k, tag).unwrap();
                assert_eq!((m.height, m.width, m.values.len()), (h, w, h * w), "{tag} at {h}x{w}");
            }
        }
    }
}

#[test]
fn zero_fusion_gives_uniform_prediction() {
    let mut net = Network::<f32>::build(config(Arch::Proposed, 9)).unwrap();
    let fusion = net.fusion_mut().unwrap();
    fusion.weights.data_mut().fill(0.0);
    fusion.bias.fill(0.0);
    let out = net.forward(&random_image(64, 64, 2)).unwrap();
    assert_eq!(out.logits_f, vec![0.0, 0.0]);
    assert_eq!(out.probs_f, vec![0.5, 0.5]);
}

#[test]
fn baseline_cam_is_coarse() {
    let mut net = Network::<f32>::build(config(Arch::Baseline, 4)).unwrap();
    let image = random_image(64, 64, 5);
    let (probs, cam) = net.baseline_forward(&image).unwrap();
    assert_eq!(cam.shape().dims(), [1, 2, 4, 4]);
    let logits: Vec<f64> = (0..2).map(|k| channel_mean(&cam, k)).collect();
    let softmax0 = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    assert!((probs[0] as f64 - softmax0).abs() < 1e-6);
    assert!(net.forward(&image).is_err());

    let head = net.cam_head_mut().unwrap();
    head.weights.data_mut().fill(0.0);
    head.bias.fill(0.0);
    assert_eq!(net.baseline_forward(&image).unwrap().0, vec![0.5, 0.5]);
}

#[test]
fn extent_limits() {
    let net = Network::<f32>::build(config(Arch::Proposed, 0)).unwrap();
    assert!(net.forward(&random_image(15, 64, 0)).is_err());
    assert!(net.forward(&random_image(16, 17, 0)).is_ok());
    let gray = Tensor::<f32>::zeros((1, 1, 32, 32));
    assert!(net.forward(&gray).is_err());
}
