//! Finite-difference oracle suite run by `gradcheck`.
//!
//! Each operator check draws random shapes and values, forms the scalar
//! `sum(op(x) * r)` for a random upstream `r`, and compares the analytic
//! backward pass with central differences over every input coordinate.
//! Network checks promote the model to f64 and compare the loss gradient at
//! sampled coordinates of every named parameter; coordinates whose probes
//! change a ReLU state or a pooling winner are skipped, since the loss is
//! not differentiable across those boundaries.

use std::time::{Duration, Instant};

use crate::net::{Arch, Network, NetworkConfig};
use crate::ops::gradcheck::{grad_check, relative_error};
use crate::ops::{
    conv2d, conv2d_backward, cross_entropy, deconv2d, deconv2d_backward, max_pool2d, max_pool2d_backward, one_hot,
    relu, relu_backward, softmax, softmax_cross_entropy_backward, ConvSpec, DeconvSpec,
};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Larger than `FD_STEP`: network gradients reach 1e-8, where the rounding
/// noise of a 1e-5 difference quotient exceeds the tolerance.
pub const NETWORK_FD_STEP: f64 = 1e-4;
pub const FULL_TRIALS: usize = 100;
pub const QUICK_TRIALS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub trials: usize,
    /// Coordinates compared across all trials.
    pub coordinates: usize,
    /// Coordinates skipped because a probe crossed a kink.
    pub skipped: usize,
    pub max_relative_error: f64,
    pub elapsed: Duration,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE && self.coordinates > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(OracleCheck::passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub trials: usize,
    pub seed: u64,
    /// Network configuration checked; the arch field is overridden per check.
    pub network: NetworkConfig,
    pub extent: (usize, usize),
    /// Sampled coordinates per named parameter per trial.
    pub coords_per_param: usize,
    /// Finite-difference step for the network checks.
    pub network_step: f64,
}

impl OracleOptions {
    pub fn full() -> Self {
        Self {
            trials: FULL_TRIALS,
            ..Self::quick()
        }
    }

    pub fn quick() -> Self {
        Self {
            trials: QUICK_TRIALS,
            seed: 2024,
            network: NetworkConfig::default(),
            extent: (16, 16),
            coords_per_param: 2,
            network_step: NETWORK_FD_STEP,
        }
    }
}

fn random_tensor(shape: impl Into<Shape>, rng: &mut SplitMix64) -> Tensor<f64> {
    let shape = shape.into();
    let data = (0..shape.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

fn dot(a: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    a.data().iter().zip(r.data()).map(|(x, y)| x * y).sum()
}

struct Tally {
    coordinates: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Self {
            coordinates: 0,
            skipped: 0,
            worst: 0.0,
        }
    }

    fn add(&mut self, err: f64, coords: usize) {
        self.worst = self.worst.max(err);
        self.coordinates += coords;
    }
}

fn run(name: &'static str, trials: usize, seed: u64, mut trial: impl FnMut(&mut SplitMix64, &mut Tally)) -> OracleCheck {
    let start = Instant::now();
    let mut tally = Tally::new();
    for t in 0..trials {
        let mut rng = SplitMix64::derive(seed, t as u64);
        trial(&mut rng, &mut tally);
    }
    OracleCheck {
        name,
        trials,
        coordinates: tally.coordinates,
        skipped: tally.skipped,
        max_relative_error: tally.worst,
        elapsed: start.elapsed(),
    }
}

fn range(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

fn conv_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let (cin, cout) = (range(rng, 1, 3), range(rng, 1, 3));
    let kernel = (range(rng, 1, 3), range(rng, 1, 3));
    let stride = range(rng, 1, 2);
    let padding = range(rng, 0, 1);
    let n = range(rng, 1, 2);
    let h = range(rng, kernel.0, kernel.0 + 3);
    let w = range(rng, kernel.1, kernel.1 + 3);
    let mut spec = ConvSpec::<f64>::zeros(cin, cout, kernel, stride, padding).unwrap();
    spec.weights = random_tensor(spec.weights.shape(), rng);
    spec.bias = (0..cout).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = random_tensor((n, cin, h, w), rng);
    let y = conv2d(&x, &spec).unwrap();
    let r = random_tensor(y.shape(), rng);
    let g = conv2d_backward(&x, &spec, &r).unwrap();

    let f_x = |v: &[f64]| dot(&conv2d(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &spec).unwrap(), &r);
    tally.add(grad_check(f_x, x.data(), g.input.data(), FD_STEP), x.len());
    let f_w = |v: &[f64]| {
        let mut s = spec.clone();
        s.weights.data_mut().copy_from_slice(v);
        dot(&conv2d(&x, &s).unwrap(), &r)
    };
    tally.add(grad_check(f_w, spec.weights.data(), g.weights.data(), FD_STEP), spec.weights.len());
    let f_b = |v: &[f64]| {
        let mut s = spec.clone();
        s.bias.copy_from_slice(v);
        dot(&conv2d(&x, &s).unwrap(), &r)
    };
    tally.add(grad_check(f_b, &spec.bias, &g.bias, FD_STEP), cout);
}

fn deconv_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let (cin, cout) = (range(rng, 1, 3), range(rng, 1, 3));
    let kernel = (range(rng, 1, 4), range(rng, 1, 4));
    let stride = range(rng, 1, 3);
    let (h, w) = (range(rng, 1, 4), range(rng, 1, 4));
    let mut spec = DeconvSpec::<f64>::zeros(cin, cout, kernel, stride, 0).unwrap();
    let (rh, rw) = spec.raw_extent(h, w).unwrap();
    if rng.below(2) == 1 {
        let (ch, cw) = (range(rng, 1, rh), range(rng, 1, rw));
        spec.output_crop = Some((rng.below(rh - ch + 1), rng.below(rw - cw + 1), ch, cw));
    }
    spec.weights = random_tensor(spec.weights.shape(), rng);
    spec.bias = (0..cout).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = random_tensor((1, cin, h, w), rng);
    let y = deconv2d(&x, &spec).unwrap();
    let r = random_tensor(y.shape(), rng);
    let g = deconv2d_backward(&x, &spec, &r).unwrap();

    let f_x = |v: &[f64]| dot(&deconv2d(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &spec).unwrap(), &r);
    tally.add(grad_check(f_x, x.data(), g.input.data(), FD_STEP), x.len());
    let f_w = |v: &[f64]| {
        let mut s = spec.clone();
        s.weights.data_mut().copy_from_slice(v);
        dot(&deconv2d(&x, &s).unwrap(), &r)
    };
    tally.add(grad_check(f_w, spec.weights.data(), g.weights.data(), FD_STEP), spec.weights.len());
    let f_b = |v: &[f64]| {
        let mut s = spec.clone();
        s.bias.copy_from_slice(v);
        dot(&deconv2d(&x, &s).unwrap(), &r)
    };
    tally.add(grad_check(f_b, &spec.bias, &g.bias, FD_STEP), cout);
}

fn relu_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let shape = Shape::new(1, range(rng, 1, 3), range(rng, 1, 5), range(rng, 1, 5));
    // keep every entry clear of the kink at 0
    let data = (0..shape.len())
        .map(|_| {
            let m = rng.uniform(0.05, 1.0);
            if rng.below(2) == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::from_vec(shape, data).unwrap();
    let r = random_tensor(shape, rng);
    let g = relu_backward(&x, &r).unwrap();
    let f = |v: &[f64]| dot(&relu(&Tensor::from_vec(shape, v.to_vec()).unwrap()), &r);
    tally.add(grad_check(f, x.data(), g.data(), FD_STEP), x.len());
}

fn pool_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let shape = Shape::new(range(rng, 1, 2), range(rng, 1, 3), 2 * range(rng, 1, 3), 2 * range(rng, 1, 3));
    // distinct values 0.01 apart, so no probe of size FD_STEP reorders a window
    let mut data: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01 - 0.5).collect();
    rng.shuffle(&mut data);
    let x = Tensor::from_vec(shape, data).unwrap();
    let (y, idx) = max_pool2d(&x).unwrap();
    let r = random_tensor(y.shape(), rng);
    let g = max_pool2d_backward(&idx, &r).unwrap();
    let f = |v: &[f64]| dot(&max_pool2d(&Tensor::from_vec(shape, v.to_vec()).unwrap()).unwrap().0, &r);
    tally.add(grad_check(f, x.data(), g.data(), FD_STEP), x.len());
}

fn softmax_ce_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let k = range(rng, 2, 5);
    let z: Vec<f64> = (0..k).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let target = one_hot::<f64>(rng.below(k), k);
    let p = softmax(&z).unwrap();
    let analytic = softmax_cross_entropy_backward(&p, &target);
    let f = |v: &[f64]| cross_entropy(&softmax(v).unwrap(), &target).unwrap();
    tally.add(grad_check(f, &z, &analytic, FD_STEP), k);

    // softmax alone through its Jacobian-vector product: p * (r - p.r)
    let r: Vec<f64> = (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let pr: f64 = p.iter().zip(&r).map(|(a, b)| a * b).sum();
    let analytic: Vec<f64> = p.iter().zip(&r).map(|(pi, ri)| pi * (ri - pr)).collect();
    let f = |v: &[f64]| softmax(v).unwrap().iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
    tally.add(grad_check(f, &z, &analytic, FD_STEP), k);
}

fn spatial_mean_trial(rng: &mut SplitMix64, tally: &mut Tally) {
    let shape = Shape::new(1, range(rng, 1, 3), range(rng, 1, 6), range(rng, 1, 6));
    let x = random_tensor(shape, rng);
    let r = random_tensor((1, shape.c, 1, 1), rng);
    let mut analytic = vec![0.0; x.len()];
    for c in 0..shape.c {
        let v = r.data()[c] / shape.plane() as f64;
        analytic[c * shape.plane()..(c + 1) * shape.plane()].fill(v);
    }
    let f = |v: &[f64]| dot(&Tensor::from_vec(shape, v.to_vec()).unwrap().spatial_mean().unwrap(), &r);
    tally.add(grad_check(f, x.data(), &analytic, FD_STEP), x.len());
}

fn set_param(net: &mut Network<f64>, name: &str, i: usize, value: f64) {
    let mut params = net.params_mut();
    let p = params.iter_mut().find(|p| p.name == name).expect("named parameter");
    p.values[i] = value;
}

fn network_trial(opts: &OracleOptions, arch: Arch, rng: &mut SplitMix64, tally: &mut Tally) {
    let config = NetworkConfig {
        arch,
        seed: rng.next_u64(),
        ..opts.network.clone()
    };
    let mut net = Network::<f32>::build(config).unwrap().cast::<f64>();
    // move the upsamplers and fusion off their symmetric init so their
    // gradients are exercised in general position
    for p in net.params_mut() {
        if p.name.starts_with("upsample") || p.name.starts_with("fusion") {
            for v in p.values.iter_mut() {
                *v += rng.uniform(-0.05, 0.05);
            }
        }
    }
    let (h, w) = opts.extent;
    let shape = Shape::new(1, net.config().input_channels, h, w);
    let image = Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.next_f64()).collect()).unwrap();
    let class = rng.below(net.config().classes);
    let (_, grads) = net.loss_and_gradients(&image, class).unwrap();
    let (_, base_pattern) = net.loss_with_pattern(&image, class).unwrap();

    let names: Vec<(String, usize)> = net.params().iter().map(|p| (p.name.clone(), p.values.len())).collect();
    for (name, len) in names {
        for _ in 0..opts.coords_per_param {
            let i = rng.below(len);
            let orig = net.params().iter().find(|p| p.name == name).unwrap().values[i];
            let mut crossed = false;
            let mut values = [0.0; 2];
            for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                set_param(&mut net, &name, i, orig + sign * opts.network_step);
                let (loss, pattern) = net.loss_with_pattern(&image, class).unwrap();
                crossed |= pattern != base_pattern;
                values[slot] = loss;
            }
            set_param(&mut net, &name, i, orig);
            if crossed {
                tally.skipped += 1;
                continue;
            }
            let numeric = (values[0] - values[1]) / (2.0 * opts.network_step);
            tally.add(relative_error(grads[&name][i], numeric), 1);
        }
    }
}

/// Runs every operator check and the network checks for both architectures.
pub fn run_oracle_suite(opts: &OracleOptions) -> OracleReport {
    let (n, seed) = (opts.trials, opts.seed);
    let mut checks = vec![
        run("conv2d", n, seed ^ 1, conv_trial),
        run("deconv2d", n, seed ^ 2, deconv_trial),
        run("relu", n, seed ^ 3, relu_trial),
        run("max_pool2d", n, seed ^ 4, pool_trial),
        run("softmax+cross_entropy", n, seed ^ 5, softmax_ce_trial),
        run("spatial_mean", n, seed ^ 6, spatial_mean_trial),
    ];
    checks.push(run("network(proposed)", n, seed ^ 7, |rng, t| network_trial(opts, Arch::Proposed, rng, t)));
    checks.push(run("network(baseline)", n, seed ^ 8, |rng, t| network_trial(opts, Arch::Baseline, rng, t)));
    OracleReport { checks }
}
