use crate::net::{Arch, Gradients, NetError, Network, Upsampler, INPUT_CENTRE, MAX_EXTENT};
use crate::ops::{
    self, conv2d, conv2d_backward, cross_entropy, deconv2d, deconv2d_backward, max_pool2d,
    max_pool2d_backward, relu, relu_backward, softmax, DeconvSpec, PoolIndices,
};
use crate::tensor::{Scalar, Tensor};

/// Everything the proposed network produces for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutputs<T: Scalar = f32> {
    /// One `(1, K, H, W)` eCAM per scale.
    pub ecam_s: Vec<Tensor<T>>,
    pub ecam_fused: Tensor<T>,
    pub logits_s: Vec<Vec<T>>,
    pub logits_f: Vec<T>,
    pub probs_s: Vec<Vec<T>>,
    pub probs_f: Vec<T>,
}

impl<T: Scalar> ScaleOutputs<T> {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.probs_f)
    }

    /// Cross-entropy for each scale, then for the fused path.
    pub fn losses(&self, class: usize) -> Result<(Vec<T>, T), NetError> {
        let g = ops::one_hot::<T>(class, self.probs_f.len());
        let per_scale = self
            .probs_s
            .iter()
            .map(|p| loss_per_scale(p, &g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((per_scale, loss_per_scale(&self.probs_f, &g)?))
    }
}

/// First index of the maximum; ties resolve to the lower class.
pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-scale cross-entropy term; the fused term has the same form.
pub fn loss_per_scale<T: Scalar>(probs: &[T], g: &[T]) -> Result<T, NetError> {
    Ok(cross_entropy(probs, g)?)
}

/// `(L_F + sum_s L_s) / (S + 1)`.
pub fn total_loss<T: Scalar>(losses_s: &[T], loss_f: T, scales: usize) -> Result<T, NetError> {
    if losses_s.len() != scales {
        return Err(NetError::CountMismatch {
            expected: scales,
            got: losses_s.len(),
        });
    }
    let sum = losses_s.iter().fold(loss_f, |acc, &l| acc + l);
    Ok(sum / T::from_usize(scales + 1).unwrap())
}

/// ReLU on/off states and max-pool winners of one forward pass. Two inputs
/// with equal patterns lie in the same linear region of the backbone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivationPattern {
    relu_bits: Vec<u64>,
    relu_len: usize,
    pool_argmax: Vec<u32>,
}

impl ActivationPattern {
    fn push_relu<T: Scalar>(&mut self, pre: &Tensor<T>) {
        for &v in pre.data() {
            if self.relu_len % 64 == 0 {
                self.relu_bits.push(0);
            }
            if v > T::zero() {
                *self.relu_bits.last_mut().unwrap() |= 1 << (self.relu_len % 64);
            }
            self.relu_len += 1;
        }
    }
}

struct BlockCache<T: Scalar> {
    input: Tensor<T>,
    pre1: Tensor<T>,
    act1: Tensor<T>,
    pre2: Tensor<T>,
    out: Tensor<T>,
    /// Pool that produced `input` from the previous block's output.
    pool: Option<PoolIndices>,
}

struct HeadCache<T: Scalar> {
    cam: Tensor<T>,
    /// Upsampler with the crop for this input, `None` for the identity.
    upsampler: Option<DeconvSpec<T>>,
}

struct Trace<T: Scalar> {
    extent: (usize, usize),
    padded: (usize, usize),
    blocks: Vec<BlockCache<T>>,
    heads: Vec<HeadCache<T>>,
    concat: Option<Tensor<T>>,
}

impl<T: Scalar> Trace<T> {
    fn pattern(&self) -> ActivationPattern {
        let mut p = ActivationPattern::default();
        for b in &self.blocks {
            p.push_relu(&b.pre1);
            p.push_relu(&b.pre2);
            if let Some(idx) = &b.pool {
                p.pool_argmax.extend_from_slice(&idx.argmax);
            }
        }
        p
    }
}

/// Shifts `[0, 1]` pixels to `[-0.5, 0.5]` before padding, so the padding is
/// mid-grey and the first layer does not start from a large common offset.
fn centre<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let mut out = image.clone();
    let half = T::from_f64_lossy(INPUT_CENTRE);
    for v in out.data_mut() {
        *v -= half;
    }
    out
}

fn broadcast_mean_grad<T: Scalar>(dlogits: &[T], shape: crate::Shape) -> Tensor<T> {
    let scale = T::from_usize(shape.plane()).unwrap();
    let mut g = Tensor::zeros(shape);
    for (k, &d) in dlogits.iter().enumerate() {
        g.plane_mut(0, k).fill(d / scale);
    }
    g
}

fn logits_of<T: Scalar>(map: &Tensor<T>) -> Result<Vec<T>, NetError> {
    Ok(map.spatial_mean().map_err(ops::OpsError::from)?.into_data())
}

fn accumulate<T: Scalar>(grads: &mut Gradients<T>, prefix: &str, w: Tensor<T>, b: Vec<T>) {
    grads.insert(format!("{prefix}.weight"), w.into_data());
    grads.insert(format!("{prefix}.bias"), b);
}

impl<T: Scalar> Network<T> {
    fn check_image(&self, image: &Tensor<T>) -> Result<(usize, usize), NetError> {
        let s = image.shape();
        let cfg = self.config();
        if s.n != 1 || s.c != cfg.input_channels {
            return Err(NetError::BadInputShape {
                channels: cfg.input_channels,
                got: s,
            });
        }
        let min = cfg.granularity();
        if !(min..=MAX_EXTENT).contains(&s.h) || !(min..=MAX_EXTENT).contains(&s.w) {
            return Err(NetError::ExtentOutOfRange {
                h: s.h,
                w: s.w,
                min,
                max: MAX_EXTENT,
            });
        }
        Ok((s.h, s.w))
    }

    fn backbone(&self, image: &Tensor<T>) -> Result<Trace<T>, NetError> {
        let (h, w) = self.check_image(image)?;
        let (ph, pw) = self.config().padded_extent(h, w);
        let mut blocks: Vec<BlockCache<T>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (input, pool) = match blocks.last() {
                None => (centre(image).pad_to(ph, pw), None),
                Some(prev) => {
                    let (pooled, idx) = max_pool2d(&prev.out)?;
                    (pooled, Some(idx))
                }
            };
            let pre1 = conv2d(&input, &block.conv1)?;
            let act1 = relu(&pre1);
            let pre2 = conv2d(&act1, &block.conv2)?;
            let out = relu(&pre2);
            blocks.push(BlockCache {
                input,
                pre1,
                act1,
                pre2,
                out,
                pool,
            });
        }
        Ok(Trace {
            extent: (h, w),
            padded: (ph, pw),
            blocks,
            heads: Vec::new(),
            concat: None,
        })
    }

    fn upsample(&self, up: &Upsampler<T>, factor: usize, (h, w): (usize, usize)) -> Option<DeconvSpec<T>> {
        match up {
            Upsampler::Identity => None,
            Upsampler::Learnt(spec) => {
                let mut spec = spec.clone();
                spec.output_crop = Some((factor / 2, factor / 2, h, w));
                Some(spec)
            }
        }
    }

    fn run_proposed(&self, image: &Tensor<T>) -> Result<(ScaleOutputs<T>, Trace<T>), NetError> {
        if self.arch() != Arch::Proposed {
            return Err(NetError::WrongArch {
                expected: Arch::Proposed,
            });
        }
        let mut trace = self.backbone(image)?;
        let (h, w) = trace.extent;
        let mut ecam_s = Vec::with_capacity(self.heads.len());
        for (s, ((head, up), block)) in self
            .heads
            .iter()
            .zip(&self.upsamplers)
            .zip(&trace.blocks)
            .enumerate()
        {
            let cam = conv2d(&block.out, head)?;
            let upsampler = self.upsample(up, 1 << s, (h, w));
            let ecam = match &upsampler {
                None => cam.crop(0, 0, h, w),
                Some(spec) => deconv2d(&cam, spec)?,
            };
            ecam_s.push(ecam);
            trace.heads.push(HeadCache { cam, upsampler });
        }
        let fusion = self.fusion.as_ref().expect("proposed network has a fusion conv");
        let concat = Tensor::concat_channels(&ecam_s.iter().collect::<Vec<_>>());
        let ecam_fused = conv2d(&concat, fusion)?;
        trace.concat = Some(concat);

        let logits_s = ecam_s.iter().map(logits_of).collect::<Result<Vec<_>, _>>()?;
        let logits_f = logits_of(&ecam_fused)?;
        let probs_s = logits_s
            .iter()
            .map(|l| softmax(l))
            .collect::<Result<Vec<_>, _>>()?;
        let probs_f = softmax(&logits_f)?;
        Ok((
            ScaleOutputs {
                ecam_s,
                ecam_fused,
                logits_s,
                logits_f,
                probs_s,
                probs_f,
            },
            trace,
        ))
    }

    /// Proposed-architecture forward pass.
    pub fn forward(&self, image: &Tensor<T>) -> Result<ScaleOutputs<T>, NetError> {
        Ok(self.run_proposed(image)?.0)
    }

    fn run_baseline(&self, image: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>, Trace<T>), NetError> {
        let Some(head) = self.cam_head.as_ref() else {
            return Err(NetError::WrongArch {
                expected: Arch::Baseline,
            });
        };
        let trace = self.backbone(image)?;
        let cam = conv2d(&trace.blocks.last().unwrap().out, head)?;
        let probs = softmax(&logits_of(&cam)?)?;
        Ok((probs, cam, trace))
    }

    /// Baseline forward: class probabilities and the coarse last-scale CAM
    /// `(1, K, H_p / 2^(S-1), W_p / 2^(S-1))`.
    pub fn baseline_forward(&self, image: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>), NetError> {
        let (probs, cam, _) = self.run_baseline(image)?;
        Ok((probs, cam))
    }

    /// Class probabilities used for prediction: `probs_F` for the proposed
    /// network, the CAM probabilities for the baseline.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<T>, NetError> {
        match self.arch() {
            Arch::Proposed => Ok(self.forward(image)?.probs_f),
            Arch::Baseline => Ok(self.baseline_forward(image)?.0),
        }
    }

    pub fn predict_class(&self, image: &Tensor<T>) -> Result<usize, NetError> {
        Ok(argmax(&self.predict(image)?))
    }

    /// Training loss: the multi-scale mean for the proposed network, plain
    /// cross-entropy for the baseline.
    pub fn loss(&self, image: &Tensor<T>, class: usize) -> Result<T, NetError> {
        Ok(self.loss_with_pattern(image, class)?.0)
    }

    pub fn loss_with_pattern(
        &self,
        image: &Tensor<T>,
        class: usize,
    ) -> Result<(T, ActivationPattern), NetError> {
        self.check_class(class)?;
        let g = ops::one_hot::<T>(class, self.config().classes);
        match self.arch() {
            Arch::Proposed => {
                let (out, trace) = self.run_proposed(image)?;
                let (ls, lf) = out.losses(class)?;
                Ok((total_loss(&ls, lf, self.config().scales)?, trace.pattern()))
            }
            Arch::Baseline => {
                let (probs, _, trace) = self.run_baseline(image)?;
                Ok((loss_per_scale(&probs, &g)?, trace.pattern()))
            }
        }
    }

    fn check_class(&self, class: usize) -> Result<(), NetError> {
        if class >= self.config().classes {
            return Err(NetError::BadIndex(format!(
                "class {class} with {} classes",
                self.config().classes
            )));
        }
        Ok(())
    }

    /// Loss and its exact gradient with respect to every named parameter.
    pub fn loss_and_gradients(
        &self,
        image: &Tensor<T>,
        class: usize,
    ) -> Result<(T, Gradients<T>), NetError> {
        self.check_class(class)?;
        let k = self.config().classes;
        let g = ops::one_hot::<T>(class, k);
        let mut grads = Gradients::new();
        let (loss, trace, top_grads) = match self.arch() {
            Arch::Proposed => {
                let (out, trace) = self.run_proposed(image)?;
                let (ls, lf) = out.losses(class)?;
                let loss = total_loss(&ls, lf, self.config().scales)?;
                let feature_grads = self.proposed_head_backward(&out, &trace, &g, &mut grads)?;
                (loss, trace, feature_grads)
            }
            Arch::Baseline => {
                let (probs, cam, trace) = self.run_baseline(image)?;
                let loss = loss_per_scale(&probs, &g)?;
                let dl = ops::softmax_cross_entropy_backward(&probs, &g);
                let d_cam = broadcast_mean_grad(&dl, cam.shape());
                let head = self.cam_head.as_ref().unwrap();
                let last = trace.blocks.last().unwrap();
                let cg = conv2d_backward(&last.out, head, &d_cam)?;
                accumulate(&mut grads, "cam_head", cg.weights, cg.bias);
                let mut top = vec![None; trace.blocks.len()];
                *top.last_mut().unwrap() = Some(cg.input);
                (loss, trace, top)
            }
        };
        self.backbone_backward(&trace, top_grads, &mut grads)?;
        Ok((loss, grads))
    }

    /// Backward through fusion, upsamplers and heads; returns the gradient
    /// arriving at each block output.
    fn proposed_head_backward(
        &self,
        out: &ScaleOutputs<T>,
        trace: &Trace<T>,
        g: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<Vec<Option<Tensor<T>>>, NetError> {
        let k = g.len();
        let weight = T::one() / T::from_usize(self.config().scales + 1).unwrap();
        let scaled = |p: &[T]| -> Vec<T> {
            ops::softmax_cross_entropy_backward(p, g)
                .into_iter()
                .map(|v| v * weight)
                .collect()
        };
        let fusion = self.fusion.as_ref().unwrap();
        let d_fused = broadcast_mean_grad(&scaled(&out.probs_f), out.ecam_fused.shape());
        let fg = conv2d_backward(trace.concat.as_ref().unwrap(), fusion, &d_fused)?;
        accumulate(grads, "fusion", fg.weights, fg.bias);
        let d_ecams = fg.input.split_channels(k);

        let mut feature_grads = Vec::with_capacity(self.heads.len());
        for (s, (mut d_ecam, cache)) in d_ecams.into_iter().zip(&trace.heads).enumerate() {
            d_ecam.add_assign(&broadcast_mean_grad(&scaled(&out.probs_s[s]), out.ecam_s[s].shape()));
            let d_cam = match &cache.upsampler {
                None => d_ecam.embed(0, 0, trace.padded.0, trace.padded.1),
                Some(spec) => {
                    let ug = deconv2d_backward(&cache.cam, spec, &d_ecam)?;
                    accumulate(grads, &format!("upsample{}", s + 1), ug.weights, ug.bias);
                    ug.input
                }
            };
            let hg = conv2d_backward(&trace.blocks[s].out, &self.heads[s], &d_cam)?;
            accumulate(grads, &format!("head{}", s + 1), hg.weights, hg.bias);
            feature_grads.push(Some(hg.input));
        }
        Ok(feature_grads)
    }

    fn backbone_backward(
        &self,
        trace: &Trace<T>,
        mut feature_grads: Vec<Option<Tensor<T>>>,
        grads: &mut Gradients<T>,
    ) -> Result<(), NetError> {
        let mut carry: Option<Tensor<T>> = None;
        for s in (0..self.blocks.len()).rev() {
            let cache = &trace.blocks[s];
            let block = &self.blocks[s];
            let mut d_out = match (feature_grads[s].take(), carry.take()) {
                (Some(a), Some(b)) => {
                    let mut a = a;
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Tensor::zeros(cache.out.shape()),
            };
            d_out = relu_backward(&cache.pre2, &d_out)?;
            let g2 = conv2d_backward(&cache.act1, &block.conv2, &d_out)?;
            let d_act1 = relu_backward(&cache.pre1, &g2.input)?;
            let g1 = conv2d_backward(&cache.input, &block.conv1, &d_act1)?;
            accumulate(grads, &format!("block{}.conv2", s + 1), g2.weights, g2.bias);
            accumulate(grads, &format!("block{}.conv1", s + 1), g1.weights, g1.bias);
            if let Some(idx) = &cache.pool {
                carry = Some(max_pool2d_backward(idx, &g1.input)?);
            }
        }
        Ok(())
    }
}
