//! SGD with classical momentum and the checkpoint format.
//!
//! Update rule, with the learning rate folded into the velocity:
//! `v <- mu * v - lr * g; theta <- theta + v`.

mod checkpoint;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::net::{Gradients, NetError, Network};
use crate::tensor::Scalar;

pub use checkpoint::{load, save, Checkpoint, FORMAT_VERSION, MAGIC};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-6;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("gradient for `{name}` has {got} entries, parameter has {expected}")]
    GradientLength {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("velocity buffers do not match the network parameters")]
    StateMismatch,
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),
    #[error("checkpoint entry disagrees with its config: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint file is truncated")]
    TruncatedFile,
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T: Scalar = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    /// Zero velocities for every parameter of `net`.
    pub fn new(net: &Network<T>, learning_rate: f64, momentum: f64) -> Self {
        let velocity = net
            .params()
            .into_iter()
            .map(|p| (p.name, vec![T::zero(); p.values.len()]))
            .collect();
        Self {
            learning_rate,
            momentum,
            velocity,
        }
    }

    pub fn with_defaults(net: &Network<T>) -> Self {
        Self::new(net, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM)
    }

    pub fn velocity(&self, name: &str) -> Option<&[T]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    pub fn velocities(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.velocity.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub(crate) fn from_parts(
        learning_rate: f64,
        momentum: f64,
        velocity: BTreeMap<String, Vec<T>>,
    ) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity,
        }
    }

    /// True when the buffers cover exactly the parameters of `net`.
    pub fn matches(&self, net: &Network<T>) -> bool {
        let params = net.params();
        params.len() == self.velocity.len()
            && params
                .iter()
                .all(|p| self.velocity.get(&p.name).is_some_and(|v| v.len() == p.values.len()))
    }
}

/// One momentum step over every parameter. Nothing is modified unless every
/// gradient is present with the right length.
pub fn step<T: Scalar>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    state: &mut OptimState<T>,
) -> Result<(), OptimError> {
    if !state.matches(net) {
        return Err(OptimError::StateMismatch);
    }
    for p in net.params() {
        let g = grads
            .get(&p.name)
            .ok_or_else(|| OptimError::MissingGradient(p.name.clone()))?;
        if g.len() != p.values.len() {
            return Err(OptimError::GradientLength {
                name: p.name,
                expected: p.values.len(),
                got: g.len(),
            });
        }
    }
    let lr = T::from_f64_lossy(state.learning_rate);
    let mu = T::from_f64_lossy(state.momentum);
    for p in net.params_mut() {
        let g = &grads[&p.name];
        let v = state.velocity.get_mut(&p.name).expect("checked by matches");
        for ((theta, vel), &grad) in p.values.iter_mut().zip(v.iter_mut()).zip(g) {
            *vel = mu * *vel - lr * grad;
            *theta += *vel;
        }
    }
    Ok(())
}
