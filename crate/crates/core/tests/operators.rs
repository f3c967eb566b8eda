//! Operator gradients against locally computed central differences, and the
//! adjoint relation between convolution and transposed convolution.

use ecam_core::ops::{
    conv2d, conv2d_backward, cross_entropy, deconv2d, deconv2d_backward, max_pool2d, max_pool2d_backward,
    one_hot, relu, relu_backward, softmax, softmax_cross_entropy_backward, ConvSpec, DeconvSpec,
};
use ecam_core::rng::SplitMix64;
use ecam_core::{Shape, Tensor};
use proptest::prelude::*;

const H: f64 = 1e-5;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random(shape: impl Into<Shape>, rng: &mut SplitMix64) -> Tensor<f64> {
    let shape = shape.into();
    Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between `analytic` and central differences of `f`
/// over every coordinate of `x`.
fn worst(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, analytic: &[f64]) -> f64 {
    let mut probe = x.clone();
    let mut err = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - H;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        err = err.max(rel(analytic[i], (plus - minus) / (2.0 * H)));
    }
    err
}

fn conv_spec(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut SplitMix64) -> ConvSpec<f64> {
    let mut spec = ConvSpec::zeros(cin, cout, (k, k), stride, pad).unwrap();
    spec.weights = random(spec.weights.shape(), rng);
    spec.bias = (0..cout).map(|_| rng.uniform(-0.5, 0.5)).collect();
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_gradients(seed in any::<u64>(), stride in 1usize..=2, pad in 0usize..=1) {
        let mut rng = SplitMix64::new(seed);
        let x = random((1, 2, 5, 6), &mut rng);
        let spec = conv_spec(2, 3, 3, stride, pad, &mut rng);
        let y = conv2d(&x, &spec).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = conv2d_backward(&x, &spec, &r).unwrap();

        prop_assert!(worst(|x| dot(&conv2d(x, &spec).unwrap(), &r), &x, g.input.data()) < 1e-6);
        let w_err = worst(
            |w| {
                let mut s = spec.clone();
                s.weights = w.clone();
                dot(&conv2d(&x, &s).unwrap(), &r)
            },
            &spec.weights,
            g.weights.data(),
        );
        prop_assert!(w_err < 1e-6);
        let bias = Tensor::from_vec((1, 1, 1, 3), spec.bias.clone()).unwrap();
        let b_err = worst(
            |b| {
                let mut s = spec.clone();
                s.bias = b.data().to_vec();
                dot(&conv2d(&x, &s).unwrap(), &r)
            },
            &bias,
            &g.bias,
        );
        prop_assert!(b_err < 1e-6);
    }

    #[test]
    fn deconv_gradients(seed in any::<u64>(), stride in 1usize..=3) {
        let mut rng = SplitMix64::new(seed);
        let k = 2 * stride;
        let x = random((1, 2, 3, 4), &mut rng);
        let mut spec = DeconvSpec::zeros(2, 2, (k, k), stride, 0).unwrap();
        spec.weights = random(spec.weights.shape(), &mut rng);
        spec.bias = vec![0.1, -0.2];
        let (rh, rw) = spec.raw_extent(3, 4).unwrap();
        spec.output_crop = Some((stride / 2, stride / 2, rh - stride, rw - stride));
        let y = deconv2d(&x, &spec).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = deconv2d_backward(&x, &spec, &r).unwrap();

        prop_assert!(worst(|x| dot(&deconv2d(x, &spec).unwrap(), &r), &x, g.input.data()) < 1e-6);
        let w_err = worst(
            |w| {
                let mut s = spec.clone();
                s.weights = w.clone();
                dot(&deconv2d(&x, &s).unwrap(), &r)
            },
            &spec.weights,
            g.weights.data(),
        );
        prop_assert!(w_err < 1e-6);
    }

    #[test]
    fn relu_and_pool_gradients(seed in any::<u64>()) {
        let mut rng = SplitMix64::new(seed);
        // keep every value away from the kink at zero and from pooling ties
        let mut x = random((1, 2, 4, 6), &mut rng);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = v.signum() * (0.05 + v.abs()) + i as f64 * 1e-3;
        }
        let r = random(x.shape(), &mut rng);
        let g = relu_backward(&x, &r).unwrap();
        prop_assert!(worst(|x| dot(&relu(x), &r), &x, g.data()) < 1e-6);

        let (y, idx) = max_pool2d(&x).unwrap();
        let r = random(y.shape(), &mut rng);
        let g = max_pool2d_backward(&idx, &r).unwrap();
        prop_assert!(worst(|x| dot(&max_pool2d(x).unwrap().0, &r), &x, g.data()) < 1e-6);
    }

    #[test]
    fn softmax_cross_entropy_gradient(z in proptest::collection::vec(-4.0f64..4.0, 2..6), class in 0usize..6) {
        let class = class % z.len();
        let g = one_hot::<f64>(class, z.len());
        let analytic = softmax_cross_entropy_backward(&softmax(&z).unwrap(), &g);
        let zt = Tensor::from_vec((1, 1, 1, z.len()), z.clone()).unwrap();
        let err = worst(|z| cross_entropy(&softmax(z.data()).unwrap(), &g).unwrap(), &zt, &analytic);
        prop_assert!(err < 1e-5);
    }

    /// With zero bias, a transposed convolution is the adjoint of the
    /// convolution that shares its weights: <conv(x), y> = <x, deconv(y)>.
    #[test]
    fn deconv_is_adjoint_of_conv(seed in any::<u64>(), stride in 1usize..=2) {
        let mut rng = SplitMix64::new(seed);
        let x = random((1, 3, 7, 8), &mut rng);
        let mut conv = ConvSpec::zeros(3, 2, (3, 3), stride, 0).unwrap();
        conv.weights = random(conv.weights.shape(), &mut rng);
        let cx = conv2d(&x, &conv).unwrap();
        let y = random(cx.shape(), &mut rng);

        let mut de = DeconvSpec::zeros(2, 3, (3, 3), stride, 0).unwrap();
        de.weights = conv.weights.clone();
        let raw = deconv2d(&y, &de).unwrap();
        let s = raw.shape();
        // rows and columns of x past the last stride window receive nothing
        let mut dy = 0.0;
        for c in 0..3 {
            for i in 0..7 {
                for j in 0..8 {
                    if i < s.h && j < s.w {
                        dy += x.at(0, c, i, j) * raw.at(0, c, i, j);
                    }
                }
            }
        }
        prop_assert!((dot(&cx, &y) - dy).abs() < 1e-9 * (1.0 + dy.abs()));
    }
}

#[test]
fn small_conv_example() {
    let mut rng = SplitMix64::new(17);
    let x = random((1, 2, 4, 4), &mut rng);
    let spec = conv_spec(2, 1, 3, 1, 1, &mut rng);
    let y = conv2d(&x, &spec).unwrap();
    let r = Tensor::full(y.shape(), 1.0);
    let g = conv2d_backward(&x, &spec, &r).unwrap();
    let f = |x: &Tensor<f64>| conv2d(x, &spec).unwrap().data().iter().sum::<f64>();
    assert!(worst(f, &x, g.input.data()) < 1e-3);
}
