//! 2-D cross-correlation (no kernel flip) and its transpose.

use crate::ops::OpsError;
use crate::tensor::{Scalar, Shape, Tensor};

/// Learnable convolution. Weights are `(out, in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvSpec<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self, OpsError> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: Tensor::zeros((out_channels, in_channels, kernel.0, kernel.1)),
            bias: vec![T::zero(); out_channels],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), OpsError> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(OpsError::InvalidSpec("stride, kernel and channels must be positive"));
        }
        let want = Shape::new(self.out_channels, self.in_channels, kh, kw);
        if self.weights.shape() != want || self.bias.len() != self.out_channels {
            return Err(OpsError::InvalidSpec("weight/bias extents disagree with declared sizes"));
        }
        Ok(())
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize), OpsError> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < kh || pw < kw {
            return Err(OpsError::KernelTooLarge {
                kernel: self.kernel,
                padded: (ph, pw),
            });
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    pub fn cast<U: Scalar>(&self) -> ConvSpec<U> {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|&b| U::from_f64_lossy(b.as_f64())).collect(),
        }
    }
}

/// Transposed convolution followed by a crop. Weights are `(in, out, kh, kw)`,
/// which makes this the adjoint of [`conv2d`] for the same weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvSpec<T: Scalar = f32> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    /// `(top, left, height, width)` window of the raw output.
    pub output_crop: Option<(usize, usize, usize, usize)>,
}

impl<T: Scalar> DeconvSpec<T> {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self, OpsError> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights: Tensor::zeros((in_channels, out_channels, kernel.0, kernel.1)),
            bias: vec![T::zero(); out_channels],
            output_crop: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), OpsError> {
        let (kh, kw) = self.kernel;
        if self.stride == 0 || kh == 0 || kw == 0 || self.in_channels == 0 || self.out_channels == 0
        {
            return Err(OpsError::InvalidSpec("stride, kernel and channels must be positive"));
        }
        let want = Shape::new(self.in_channels, self.out_channels, kh, kw);
        if self.weights.shape() != want || self.bias.len() != self.out_channels {
            return Err(OpsError::InvalidSpec("weight/bias extents disagree with declared sizes"));
        }
        Ok(())
    }

    /// Extent before cropping: `(in - 1) * stride - 2 * padding + k`.
    pub fn raw_extent(&self, h: usize, w: usize) -> Result<(usize, usize), OpsError> {
        let (kh, kw) = self.kernel;
        let full_h = (h.max(1) - 1) * self.stride + kh;
        let full_w = (w.max(1) - 1) * self.stride + kw;
        if full_h <= 2 * self.padding || full_w <= 2 * self.padding {
            return Err(OpsError::InvalidSpec("padding consumes the whole output"));
        }
        Ok((full_h - 2 * self.padding, full_w - 2 * self.padding))
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize), OpsError> {
        let (rh, rw) = self.raw_extent(h, w)?;
        match self.output_crop {
            None => Ok((rh, rw)),
            Some((top, left, ch, cw)) => {
                if top + ch > rh || left + cw > rw {
                    Err(OpsError::CropOutOfBounds {
                        crop: (top, left, ch, cw),
                        raw: (rh, rw),
                    })
                } else {
                    Ok((ch, cw))
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> DeconvSpec<U> {
        DeconvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|&b| U::from_f64_lossy(b.as_f64())).collect(),
            output_crop: self.output_crop,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_channels(x: Shape, expected: usize) -> Result<(), OpsError> {
    if x.c != expected {
        return Err(OpsError::ChannelMismatch {
            expected,
            got: x.c,
        });
    }
    Ok(())
}

/// Zero-pads one plane by `pad` on every side.
fn pad_plane<T: Scalar>(src: &[T], h: usize, w: usize, pad: usize, dst: &mut [T]) {
    let pw = w + 2 * pad;
    dst.fill(T::zero());
    for y in 0..h {
        let row = (y + pad) * pw + pad;
        dst[row..row + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// Core scatter/gather kernel shared by all four directions.
///
/// For every output plane `o` and kernel tap `(ky, kx)` it accumulates
/// `dst[o][oy, ox] += w * src[i][oy * s + ky, ox * s + kx]`, where `src` is
/// already padded. Summation order per output element is fixed
/// (input channel, then ky, then kx).
#[inline]
fn correlate_plane<T: Scalar>(
    src: &[T],
    src_w: usize,
    weight: &[T],
    (kh, kw): (usize, usize),
    stride: usize,
    dst: &mut [T],
    (oh, ow): (usize, usize),
) {
    for ky in 0..kh {
        for kx in 0..kw {
            let wv = weight[ky * kw + kx];
            if wv == T::zero() {
                continue;
            }
            for oy in 0..oh {
                let srow = &src[(oy * stride + ky) * src_w + kx..];
                let drow = &mut dst[oy * ow..(oy + 1) * ow];
                if stride == 1 {
                    for (d, &s) in drow.iter_mut().zip(&srow[..ow]) {
                        *d += wv * s;
                    }
                } else {
                    for (ox, d) in drow.iter_mut().enumerate() {
                        *d += wv * srow[ox * stride];
                    }
                }
            }
        }
    }
}

/// Transposed direction of [`correlate_plane`]:
/// `dst[oy * s + ky, ox * s + kx] += w * src[oy, ox]`.
#[inline]
fn scatter_plane<T: Scalar>(
    src: &[T],
    (sh, sw): (usize, usize),
    weight: &[T],
    (kh, kw): (usize, usize),
    stride: usize,
    dst: &mut [T],
    dst_w: usize,
) {
    for ky in 0..kh {
        for kx in 0..kw {
            let wv = weight[ky * kw + kx];
            if wv == T::zero() {
                continue;
            }
            for sy in 0..sh {
                let srow = &src[sy * sw..(sy + 1) * sw];
                let drow = &mut dst[(sy * stride + ky) * dst_w + kx..];
                if stride == 1 {
                    for (d, &s) in drow[..sw].iter_mut().zip(srow) {
                        *d += wv * s;
                    }
                } else {
                    for (sx, &s) in srow.iter().enumerate() {
                        drow[sx * stride] += wv * s;
                    }
                }
            }
        }
    }
}

/// `sum_{oy, ox} a[oy, ox] * src[oy * s + ky, ox * s + kx]` for every tap.
#[inline]
fn tap_products<T: Scalar>(
    a: &[T],
    (ah, aw): (usize, usize),
    src: &[T],
    src_w: usize,
    (kh, kw): (usize, usize),
    stride: usize,
    out: &mut [T],
) {
    for ky in 0..kh {
        for kx in 0..kw {
            let mut acc = T::zero();
            for ay in 0..ah {
                let srow = &src[(ay * stride + ky) * src_w + kx..];
                let arow = &a[ay * aw..(ay + 1) * aw];
                if stride == 1 {
                    for (&u, &s) in arow.iter().zip(&srow[..aw]) {
                        acc += u * s;
                    }
                } else {
                    for (ax, &u) in arow.iter().enumerate() {
                        acc += u * srow[ax * stride];
                    }
                }
            }
            out[ky * kw + kx] += acc;
        }
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec<T>) -> Result<Tensor<T>, OpsError> {
    spec.validate()?;
    let s = x.shape();
    check_channels(s, spec.in_channels)?;
    let (oh, ow) = spec.output_extent(s.h, s.w)?;
    let p = spec.padding;
    let (ph, pw) = (s.h + 2 * p, s.w + 2 * p);
    let ksize = spec.kernel.0 * spec.kernel.1;
    let mut out = Tensor::zeros((s.n, spec.out_channels, oh, ow));
    let mut padded = vec![T::zero(); spec.in_channels * ph * pw];
    for n in 0..s.n {
        for ic in 0..spec.in_channels {
            pad_plane(
                x.plane(n, ic),
                s.h,
                s.w,
                p,
                &mut padded[ic * ph * pw..(ic + 1) * ph * pw],
            );
        }
        for oc in 0..spec.out_channels {
            let dst = out.plane_mut(n, oc);
            for ic in 0..spec.in_channels {
                let w0 = (oc * spec.in_channels + ic) * ksize;
                correlate_plane(
                    &padded[ic * ph * pw..(ic + 1) * ph * pw],
                    pw,
                    &spec.weights.data()[w0..w0 + ksize],
                    spec.kernel,
                    spec.stride,
                    dst,
                    (oh, ow),
                );
            }
            let b = spec.bias[oc];
            dst.iter_mut().for_each(|v| *v += b);
        }
    }
    out.debug_check_finite();
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &ConvSpec<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>, OpsError> {
    spec.validate()?;
    let s = x.shape();
    check_channels(s, spec.in_channels)?;
    let (oh, ow) = spec.output_extent(s.h, s.w)?;
    let expected = Shape::new(s.n, spec.out_channels, oh, ow);
    if upstream.shape() != expected {
        return Err(OpsError::ShapeMismatch {
            expected,
            got: upstream.shape(),
        });
    }
    let p = spec.padding;
    let (ph, pw) = (s.h + 2 * p, s.w + 2 * p);
    let ksize = spec.kernel.0 * spec.kernel.1;
    let mut gw = Tensor::zeros(spec.weights.shape());
    let mut gb = vec![T::zero(); spec.out_channels];
    let mut gx = Tensor::zeros(s);
    let mut padded = vec![T::zero(); spec.in_channels * ph * pw];
    let mut gpad = vec![T::zero(); ph * pw];
    for n in 0..s.n {
        for ic in 0..spec.in_channels {
            pad_plane(
                x.plane(n, ic),
                s.h,
                s.w,
                p,
                &mut padded[ic * ph * pw..(ic + 1) * ph * pw],
            );
        }
        for oc in 0..spec.out_channels {
            let up = upstream.plane(n, oc);
            gb[oc] += up.iter().copied().sum::<T>();
            for ic in 0..spec.in_channels {
                let w0 = (oc * spec.in_channels + ic) * ksize;
                tap_products(
                    up,
                    (oh, ow),
                    &padded[ic * ph * pw..(ic + 1) * ph * pw],
                    pw,
                    spec.kernel,
                    spec.stride,
                    &mut gw.data_mut()[w0..w0 + ksize],
                );
            }
        }
        for ic in 0..spec.in_channels {
            gpad.fill(T::zero());
            for oc in 0..spec.out_channels {
                let w0 = (oc * spec.in_channels + ic) * ksize;
                scatter_plane(
                    upstream.plane(n, oc),
                    (oh, ow),
                    &spec.weights.data()[w0..w0 + ksize],
                    spec.kernel,
                    spec.stride,
                    &mut gpad,
                    pw,
                );
            }
            let dst = gx.plane_mut(n, ic);
            for y in 0..s.h {
                let row = (y + p) * pw + p;
                dst[y * s.w..(y + 1) * s.w].copy_from_slice(&gpad[row..row + s.w]);
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Raw (uncropped, unpadded) canvas extent `(in - 1) * stride + k`.
fn full_extent<T: Scalar>(spec: &DeconvSpec<T>, h: usize, w: usize) -> (usize, usize) {
    ((h - 1) * spec.stride + spec.kernel.0, (w - 1) * spec.stride + spec.kernel.1)
}

/// Offset of the final output window inside the full canvas.
fn window<T: Scalar>(spec: &DeconvSpec<T>, h: usize, w: usize) -> Result<(usize, usize, usize, usize), OpsError> {
    let (oh, ow) = spec.output_extent(h, w)?;
    let (top, left) = spec.output_crop.map_or((0, 0), |(t, l, _, _)| (t, l));
    Ok((top + spec.padding, left + spec.padding, oh, ow))
}

pub fn deconv2d<T: Scalar>(x: &Tensor<T>, spec: &DeconvSpec<T>) -> Result<Tensor<T>, OpsError> {
    spec.validate()?;
    let s = x.shape();
    check_channels(s, spec.in_channels)?;
    if s.h == 0 || s.w == 0 {
        return Err(OpsError::InvalidSpec("empty input plane"));
    }
    let (top, left, oh, ow) = window(spec, s.h, s.w)?;
    let (fh, fw) = full_extent(spec, s.h, s.w);
    let ksize = spec.kernel.0 * spec.kernel.1;
    let mut out = Tensor::zeros((s.n, spec.out_channels, oh, ow));
    let mut canvas = vec![T::zero(); fh * fw];
    for n in 0..s.n {
        for oc in 0..spec.out_channels {
            canvas.fill(T::zero());
            for ic in 0..spec.in_channels {
                let w0 = (ic * spec.out_channels + oc) * ksize;
                scatter_plane(
                    x.plane(n, ic),
                    (s.h, s.w),
                    &spec.weights.data()[w0..w0 + ksize],
                    spec.kernel,
                    spec.stride,
                    &mut canvas,
                    fw,
                );
            }
            let b = spec.bias[oc];
            let dst = out.plane_mut(n, oc);
            for y in 0..oh {
                let row = (top + y) * fw + left;
                for (d, &c) in dst[y * ow..(y + 1) * ow].iter_mut().zip(&canvas[row..row + ow]) {
                    *d = c + b;
                }
            }
        }
    }
    out.debug_check_finite();
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    spec: &DeconvSpec<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>, OpsError> {
    spec.validate()?;
    let s = x.shape();
    check_channels(s, spec.in_channels)?;
    let (top, left, oh, ow) = window(spec, s.h, s.w)?;
    let expected = Shape::new(s.n, spec.out_channels, oh, ow);
    if upstream.shape() != expected {
        return Err(OpsError::ShapeMismatch {
            expected,
            got: upstream.shape(),
        });
    }
    let (fh, fw) = full_extent(spec, s.h, s.w);
    let ksize = spec.kernel.0 * spec.kernel.1;
    let mut gx = Tensor::zeros(s);
    let mut gw = Tensor::zeros(spec.weights.shape());
    let mut gb = vec![T::zero(); spec.out_channels];
    // upstream gradient embedded into the full canvas, one plane per output channel
    let mut canvas = vec![T::zero(); spec.out_channels * fh * fw];
    for n in 0..s.n {
        canvas.fill(T::zero());
        for oc in 0..spec.out_channels {
            let up = upstream.plane(n, oc);
            gb[oc] += up.iter().copied().sum::<T>();
            let dst = &mut canvas[oc * fh * fw..(oc + 1) * fh * fw];
            for y in 0..oh {
                let row = (top + y) * fw + left;
                dst[row..row + ow].copy_from_slice(&up[y * ow..(y + 1) * ow]);
            }
        }
        for ic in 0..spec.in_channels {
            let gxp = gx.plane_mut(n, ic);
            for oc in 0..spec.out_channels {
                let w0 = (ic * spec.out_channels + oc) * ksize;
                correlate_plane(
                    &canvas[oc * fh * fw..(oc + 1) * fh * fw],
                    fw,
                    &spec.weights.data()[w0..w0 + ksize],
                    spec.kernel,
                    spec.stride,
                    gxp,
                    (s.h, s.w),
                );
            }
            let xp = x.plane(n, ic);
            for oc in 0..spec.out_channels {
                let w0 = (ic * spec.out_channels + oc) * ksize;
                tap_products(
                    xp,
                    (s.h, s.w),
                    &canvas[oc * fh * fw..(oc + 1) * fh * fw],
                    fw,
                    spec.kernel,
                    spec.stride,
                    &mut gw.data_mut()[w0..w0 + ksize],
                );
            }
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Caffe-style bilinear interpolation kernel of side `k`.
pub fn bilinear_kernel(k: usize) -> Vec<f64> {
    let factor = k.div_ceil(2) as f64;
    let center = if k % 2 == 1 {
        factor - 1.0
    } else {
        factor - 0.5
    };
    let mut out = Vec::with_capacity(k * k);
    for y in 0..k {
        for x in 0..k {
            let wy = 1.0 - (y as f64 - center).abs() / factor;
            let wx = 1.0 - (x as f64 - center).abs() / factor;
            out.push(wy * wx);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn seq(shape: impl Into<Shape>) -> Tensor<f64> {
        let shape = shape.into();
        Tensor::from_vec(shape, (1..=shape.len()).map(|v| v as f64).collect()).unwrap()
    }

    fn random(shape: impl Into<Shape>, rng: &mut SplitMix64) -> Tensor<f64> {
        let shape = shape.into();
        Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn scaling_kernel_doubles() {
        let x = seq((1, 1, 3, 3));
        let mut spec = ConvSpec::zeros(1, 1, (1, 1), 1, 0).unwrap();
        spec.weights.data_mut()[0] = 2.0;
        let y = conv2d(&x, &spec).unwrap();
        let want: Vec<f64> = (1..=9).map(|v| 2.0 * v as f64).collect();
        assert_eq!(y.data(), &want[..]);
    }

    #[test]
    fn box_kernel_sums() {
        let x = seq((1, 1, 3, 3));
        let mut spec = ConvSpec::zeros(1, 1, (3, 3), 1, 0).unwrap();
        spec.weights.data_mut().fill(1.0);
        let y = conv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[45.0]);
    }

    #[test]
    fn strided_shape_formula() {
        let x = Tensor::<f32>::zeros((1, 1, 5, 5));
        let spec = ConvSpec::zeros(1, 1, (3, 3), 2, 1).unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap().shape(), Shape::new(1, 1, 3, 3));
    }

    #[test]
    fn conv_errors() {
        let spec = ConvSpec::<f32>::zeros(2, 1, (3, 3), 1, 0).unwrap();
        let x = Tensor::zeros((1, 1, 4, 4));
        assert!(matches!(conv2d(&x, &spec), Err(OpsError::ChannelMismatch { .. })));
        let x = Tensor::zeros((1, 2, 2, 2));
        assert!(matches!(conv2d(&x, &spec), Err(OpsError::KernelTooLarge { .. })));
        let x = Tensor::zeros((1, 2, 4, 4));
        let bad = Tensor::zeros((1, 1, 3, 3));
        assert!(matches!(
            conv2d_backward(&x, &spec, &bad),
            Err(OpsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = SplitMix64::new(5);
        let x = random((2, 3, 4, 5), &mut rng);
        let mut spec = ConvSpec::zeros(3, 3, (1, 1), 1, 0).unwrap();
        for c in 0..3 {
            spec.weights.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d(&x, &spec).unwrap(), x);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SplitMix64::new(1);
        let x = random((1, 2, 4, 4), &mut rng);
        let mut spec = ConvSpec::zeros(2, 3, (3, 3), 1, 1).unwrap();
        spec.weights = random((3, 2, 3, 3), &mut rng);
        let g = conv2d_backward(&x, &spec, &Tensor::zeros((1, 3, 4, 4))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pointwise_weight_grad_is_inner_product() {
        let mut rng = SplitMix64::new(2);
        let x = random((1, 1, 3, 4), &mut rng);
        let u = random((1, 1, 3, 4), &mut rng);
        let mut spec = ConvSpec::zeros(1, 1, (1, 1), 1, 0).unwrap();
        spec.weights.data_mut()[0] = 0.7;
        let g = conv2d_backward(&x, &spec, &u).unwrap();
        let dot: f64 = x.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        assert!((g.weights.data()[0] - dot).abs() < 1e-12);
        let usum: f64 = u.data().iter().sum();
        assert!((g.bias[0] - usum).abs() < 1e-12);
    }

    #[test]
    fn deconv_disjoint_blocks() {
        let x = Tensor::from_vec((1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut spec = DeconvSpec::zeros(1, 1, (2, 2), 2, 0).unwrap();
        spec.weights.data_mut().fill(1.0);
        let y = deconv2d(&x, &spec).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
        #[rustfmt::skip]
        let want = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &want);
    }

    #[test]
    fn deconv_shape_and_crop() {
        let spec = DeconvSpec::<f32>::zeros(1, 1, (4, 4), 4, 0).unwrap();
        assert_eq!(spec.raw_extent(8, 8).unwrap(), (32, 32));
        let mut cropped = spec.clone();
        cropped.output_crop = Some((4, 4, 28, 30));
        assert!(matches!(
            deconv2d(&Tensor::zeros((1, 1, 8, 8)), &cropped),
            Err(OpsError::CropOutOfBounds { .. })
        ));
        cropped.output_crop = Some((2, 2, 28, 28));
        assert_eq!(
            deconv2d(&Tensor::zeros((1, 1, 8, 8)), &cropped).unwrap().shape(),
            Shape::new(1, 1, 28, 28)
        );
    }

    /// Exact per-element brute force: out[o][oy, ox] = b + sum over (i, iy, ix, ky, kx)
    /// with iy * s + ky - p == oy.
    fn deconv_brute(x: &Tensor<f64>, spec: &DeconvSpec<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (rh, rw) = spec.raw_extent(s.h, s.w).unwrap();
        let mut raw = Tensor::zeros((s.n, spec.out_channels, rh, rw));
        let (kh, kw) = spec.kernel;
        for n in 0..s.n {
            for o in 0..spec.out_channels {
                for oy in 0..rh {
                    for ox in 0..rw {
                        let mut acc = spec.bias[o];
                        for i in 0..spec.in_channels {
                            for iy in 0..s.h {
                                for ix in 0..s.w {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let ty = (iy * spec.stride + ky) as isize - spec.padding as isize;
                                            let tx = (ix * spec.stride + kx) as isize - spec.padding as isize;
                                            if ty == oy as isize && tx == ox as isize {
                                                acc += x.at(n, i, iy, ix)
                                                    * spec.weights.at(i, o, ky, kx);
                                            }
                                        }
                                    }
                                }
                            }
                        }
                        let off = raw.shape().offset(n, o, oy, ox);
                        raw.data_mut()[off] = acc;
                    }
                }
            }
        }
        match spec.output_crop {
            None => raw,
            Some((t, l, h, w)) => raw.crop(t, l, h, w),
        }
    }

    #[test]
    fn deconv_matches_brute_force() {
        let mut rng = SplitMix64::new(8);
        for trial in 0..10 {
            let (ci, co) = (1 + trial % 2, 1 + trial % 3);
            let k = 2 + trial % 3;
            let stride = 1 + trial % 3;
            let pad = trial % 2;
            let mut spec = DeconvSpec::zeros(ci, co, (k, k), stride, pad).unwrap();
            spec.weights = random((ci, co, k, k), &mut rng);
            spec.bias = (0..co).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let x = random((1, ci, 3, 2), &mut rng);
            let (rh, rw) = spec.raw_extent(3, 2).unwrap();
            if trial % 2 == 0 {
                spec.output_crop = Some((1, 0, rh - 1, rw - 1));
            }
            let got = deconv2d(&x, &spec).unwrap();
            let want = deconv_brute(&x, &spec);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_kernel_values() {
        // k = 4 (factor 2): 1-D profile [0.25, 0.75, 0.75, 0.25]
        let k = bilinear_kernel(4);
        assert!((k[0] - 0.0625).abs() < 1e-12);
        assert!((k[5] - 0.5625).abs() < 1e-12);
        // interior rows of a stride-f upsample sum to 1 per output pixel
        let k8 = bilinear_kernel(8);
        let profile: Vec<f64> = (0..8).map(|x| k8[3 * 8 + x] / 0.875).collect();
        for phase in 0..4 {
            assert!((profile[phase] + profile[phase + 4] - 1.0).abs() < 1e-12);
        }
    }
}
