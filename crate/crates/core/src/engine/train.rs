//! Batch-1 SGD over a seeded reshuffled sequence with periodic snapshots and
//! best-on-validation selection.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{FoldManifest, Split};
use crate::engine::metrics::{load_images, validation_score, LabelledImage, Selection};
use crate::engine::EngineError;
use crate::net::{Network, NetworkConfig};
use crate::optim::{self, Checkpoint, OptimState, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM};
use crate::rng::SplitMix64;

pub const DEFAULT_SNAPSHOT_EVERY: usize = 200;
/// Iteration budget per training image.
pub const PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub snapshot_every: usize,
    /// Defaults to `PASSES` times the training-set size.
    pub max_iterations: Option<usize>,
    /// Seeds the shuffle.
    pub seed: u64,
    pub selection: Selection,
    /// Where snapshots, `best.ckpt` and `log.csv` go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            max_iterations: None,
            seed: 0,
            selection: Selection::F1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotSchedule {
    pub max_iterations: usize,
    pub snapshot_every: usize,
}

impl SnapshotSchedule {
    pub fn new(train_size: usize, snapshot_every: usize, max_iterations: Option<usize>) -> Result<Self, EngineError> {
        if snapshot_every == 0 {
            return Err(EngineError::InvalidRun("snapshot_every must be at least 1".into()));
        }
        let max_iterations = max_iterations.unwrap_or(PASSES * train_size);
        if max_iterations == 0 {
            return Err(EngineError::InvalidRun("no iterations to run".into()));
        }
        Ok(Self {
            max_iterations,
            snapshot_every,
        })
    }

    pub fn periodic_count(&self) -> usize {
        self.max_iterations / self.snapshot_every
    }

    /// Every multiple of `snapshot_every` up to the budget, then the final
    /// iteration when it is not itself a multiple.
    pub fn snapshot_iterations(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (1..=self.periodic_count()).map(|i| i * self.snapshot_every).collect();
        if self.max_iterations % self.snapshot_every != 0 {
            out.push(self.max_iterations);
        }
        out
    }

    pub fn is_snapshot(&self, iteration: usize) -> bool {
        iteration % self.snapshot_every == 0 || iteration == self.max_iterations
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotScore {
    pub iteration: usize,
    pub score: f64,
    /// Mean training loss since the previous snapshot.
    pub mean_loss: f64,
}

/// The highest score; equal scores resolve to the earliest iteration, so the
/// order of `scores` does not matter.
pub fn select_snapshot(scores: &[SnapshotScore]) -> Option<SnapshotScore> {
    scores.iter().copied().reduce(|best, s| {
        if s.score > best.score || (s.score == best.score && s.iteration < best.iteration) {
            s
        } else {
            best
        }
    })
}

/// Training indices: consecutive passes over `0..n`, each reshuffled from
/// its own stream of `seed`.
pub fn training_order(n: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let mut order = Vec::with_capacity(iterations);
    let mut pass = 0u64;
    while order.len() < iterations {
        let mut idx: Vec<usize> = (0..n).collect();
        SplitMix64::derive(seed, pass).shuffle(&mut idx);
        order.extend(idx.into_iter().take(iterations - order.len()));
        pass += 1;
    }
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: NetworkConfig,
    pub fold: usize,
    pub max_iterations: usize,
    pub snapshot_every: usize,
    pub iteration: usize,
    pub seed: u64,
    pub scores: Vec<SnapshotScore>,
    pub best: SnapshotScore,
}

impl TrainRun {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iteration,mean_loss,val_score\n");
        for s in &self.scores {
            out.push_str(&format!("{},{:.6},{:.6}\n", s.iteration, s.mean_loss, s.score));
        }
        out
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), EngineError> {
    fs::write(path, bytes).map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))
}

/// Loads the fold's train and validation images, then trains.
pub fn train_fold(
    manifest: &FoldManifest,
    config: NetworkConfig,
    params: &TrainParams,
    progress: impl FnMut(&SnapshotScore),
) -> Result<(Checkpoint, TrainRun), EngineError> {
    let train = manifest.split(Split::Train);
    let val = manifest.split(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(EngineError::EmptySplit);
    }
    let train = load_images(&train)?;
    let val = load_images(&val)?;
    train_on_images(&train, &val, config, params, manifest.fold, progress)
}

pub fn train_on_images(
    train: &[LabelledImage],
    val: &[LabelledImage],
    config: NetworkConfig,
    params: &TrainParams,
    fold: usize,
    mut progress: impl FnMut(&SnapshotScore),
) -> Result<(Checkpoint, TrainRun), EngineError> {
    if train.is_empty() || val.is_empty() {
        return Err(EngineError::EmptySplit);
    }
    let schedule = SnapshotSchedule::new(train.len(), params.snapshot_every, params.max_iterations)?;
    if let Some(dir) = &params.out_dir {
        fs::create_dir_all(dir).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))?;
    }
    let mut net = Network::<f32>::build(config.clone())?;
    let mut state = OptimState::new(&net, params.learning_rate, params.momentum);
    let order = training_order(train.len(), schedule.max_iterations, params.seed);

    let mut scores = Vec::new();
    let mut best: Option<(SnapshotScore, Checkpoint)> = None;
    let mut loss_sum = 0.0f64;
    let mut loss_count = 0usize;
    for (i, &idx) in order.iter().enumerate() {
        let iteration = i + 1;
        let sample = &train[idx];
        let (loss, grads) = net.loss_and_gradients(&sample.image, sample.label.class_index())?;
        if !loss.is_finite() {
            return Err(EngineError::DivergedLoss {
                iteration,
                loss: loss as f64,
            });
        }
        optim::step(&mut net, &grads, &mut state)?;
        loss_sum += loss as f64;
        loss_count += 1;

        if schedule.is_snapshot(iteration) {
            let snap = SnapshotScore {
                iteration,
                score: validation_score(&net, val, params.selection)?,
                mean_loss: loss_sum / loss_count as f64,
            };
            loss_sum = 0.0;
            loss_count = 0;
            let ckpt = Checkpoint {
                iteration: iteration as u64,
                network: net.clone(),
                state: Some(state.clone()),
            };
            if let Some(dir) = &params.out_dir {
                write_file(&dir.join(format!("snapshot_{iteration:06}.ckpt")), &ckpt.to_bytes())?;
            }
            progress(&snap);
            scores.push(snap);
            if best.as_ref().map_or(true, |(b, _)| snap.score > b.score) {
                best = Some((snap, ckpt));
            }
        }
    }
    let (best_score, best_ckpt) = best.expect("the final iteration is always a snapshot");
    let run = TrainRun {
        config,
        fold,
        max_iterations: schedule.max_iterations,
        snapshot_every: schedule.snapshot_every,
        iteration: order.len(),
        seed: params.seed,
        scores,
        best: best_score,
    };
    if let Some(dir) = &params.out_dir {
        write_file(&dir.join("best.ckpt"), &best_ckpt.to_bytes())?;
        write_file(&dir.join("log.csv"), run.log_csv().as_bytes())?;
    }
    Ok((best_ckpt, run))
}
