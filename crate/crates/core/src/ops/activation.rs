use crate::ops::OpsError;
use crate::tensor::{Scalar, Shape, Tensor};

/// Clamp applied to probabilities before the log in [`cross_entropy`].
pub const LOG_EPS: f64 = 1e-12;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same length")
}

/// Passes `upstream` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, OpsError> {
    if x.shape() != upstream.shape() {
        return Err(OpsError::ShapeMismatch {
            expected: x.shape(),
            got: upstream.shape(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &u)| if v > T::zero() { u } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(x.shape(), data).expect("same length"))
}

/// Flat indices (into the input) of each 2x2 window's maximum.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// 2x2 max-pool with stride 2. Ties go to the first position in row-major order.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices), OpsError> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(OpsError::OddExtent { h: s.h, w: s.w });
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros((s.n, s.c, oh, ow));
    let mut argmax = Vec::with_capacity(out.len());
    let mut o = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let base = s.offset(n, c, 0, 0);
            let src = x.plane(n, c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (2 * oy) * s.w + 2 * ox;
                    for cand in [
                        (2 * oy) * s.w + 2 * ox + 1,
                        (2 * oy + 1) * s.w + 2 * ox,
                        (2 * oy + 1) * s.w + 2 * ox + 1,
                    ] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.data_mut()[o] = src[best];
                    argmax.push((base + best) as u32);
                    o += 1;
                }
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn max_pool2d_backward<T: Scalar>(
    indices: &PoolIndices,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, OpsError> {
    if upstream.len() != indices.argmax.len() {
        return Err(OpsError::ShapeMismatch {
            expected: Shape::new(
                indices.input_shape.n,
                indices.input_shape.c,
                indices.input_shape.h / 2,
                indices.input_shape.w / 2,
            ),
            got: upstream.shape(),
        });
    }
    let mut gx = Tensor::zeros(indices.input_shape);
    let g = gx.data_mut();
    for (&i, &u) in indices.argmax.iter().zip(upstream.data()) {
        g[i as usize] += u;
    }
    Ok(gx)
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>, OpsError> {
    if logits.len() < 2 {
        return Err(OpsError::TooFewClasses(logits.len()));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(OpsError::NonFiniteLogit(i));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Index of the single 1 in a one-hot vector.
pub fn one_hot_index<T: Scalar>(g: &[T]) -> Result<usize, OpsError> {
    let mut hot = None;
    for (i, &v) in g.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(OpsError::InvalidLabel);
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(OpsError::InvalidLabel);
        }
    }
    hot.ok_or(OpsError::InvalidLabel)
}

pub fn one_hot<T: Scalar>(class: usize, classes: usize) -> Vec<T> {
    (0..classes)
        .map(|k| if k == class { T::one() } else { T::zero() })
        .collect()
}

/// `-sum_k g_k log(max(p_k, 1e-12))`.
pub fn cross_entropy<T: Scalar>(p: &[T], g: &[T]) -> Result<T, OpsError> {
    if p.len() != g.len() {
        return Err(OpsError::InvalidLabel);
    }
    let k = one_hot_index(g)?;
    let sum: f64 = p.iter().map(|v| v.as_f64()).sum();
    if (sum - 1.0).abs() > 1e-5 || p.iter().any(|&v| v < T::zero() || !v.is_finite()) {
        return Err(OpsError::InvalidDistribution(sum));
    }
    let eps = T::from_f64_lossy(LOG_EPS);
    Ok(-p[k].max(eps).min(T::one()).ln())
}

/// Gradient of `cross_entropy(softmax(z), g)` with respect to `z`: `p - g`.
pub fn softmax_cross_entropy_backward<T: Scalar>(p: &[T], g: &[T]) -> Vec<T> {
    p.iter().zip(g).map(|(&a, &b)| a - b).collect()
}
