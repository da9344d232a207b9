//! The training loop: momentum SGD on the batch Fréchet risk, a 4:1
//! train/validation split, burn-in + patience early stopping with
//! best-weight restoration, grid search, and checkpoint serialization.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::gradients::{loss_and_grad, GradOptions, GradientBundle, ProjectionAdjoint};
use crate::head::{self, FittedHead, RidgePolicy};
use crate::network::{forward_eval, Architecture, NetworkParams};
use crate::numerics::RngState;
use crate::spaces::MetricSpace;
use crate::{Error, Result};

/// Sub-stream tags for the seed of one training run.
const STREAM_SPLIT: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_BATCH: u64 = 3;

/// Whether an epoch steps on the whole training split or on shuffled
/// minibatches (batch statistics are then batch-local).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    Full,
    Minibatch(usize),
}

impl Serialize for BatchMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchMode::Full => s.serialize_str("full"),
            BatchMode::Minibatch(size) => s.serialize_u64(*size as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Size(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Text(t) if t == "full" => Ok(BatchMode::Full),
            Repr::Text(t) => t
                .parse::<usize>()
                .map(BatchMode::Minibatch)
                .map_err(|_| serde::de::Error::custom(format!("bad batch mode {t:?}"))),
            Repr::Size(v) => Ok(BatchMode::Minibatch(v as usize)),
        }
    }
}

/// Everything one training run needs besides the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_mode: BatchMode,
    pub max_epochs: usize,
    /// Epochs before validation tracking starts.
    pub burn_in: usize,
    /// Minimum per-epoch validation improvement that counts as progress.
    pub tolerance: f64,
    /// Consecutive non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub ridge_policy: RidgePolicy,
    /// Treat batch statistics as constants in the backward pass (ablation).
    pub detached_stats: bool,
}

impl TrainConfig {
    pub fn new(arch: Architecture) -> Self {
        Self {
            arch,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_mode: BatchMode::Full,
            max_epochs: 5000,
            burn_in: 50,
            tolerance: 1e-5,
            patience: 150,
            seed: 0,
            ridge_policy: RidgePolicy::Auto,
            detached_stats: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be nonnegative, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if let BatchMode::Minibatch(size) = self.batch_mode {
            if size < 2 {
                return Err(Error::Config(
                    "minibatch size must be at least 2 (batch statistics)".into(),
                ));
            }
        }
        Ok(())
    }

    fn grad_options(&self) -> GradOptions {
        GradOptions {
            dropout: self.arch.dropout_rate > 0.0,
            detached_stats: self.detached_stats,
            projection_adjoint: ProjectionAdjoint::StraightThrough,
            ridge_policy: self.ridge_policy,
        }
    }
}

/// Per-coordinate z-scoring fitted on the training predictors; constant
/// coordinates get unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub sd: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = x - &mean;
        let sd = centered
            .map_axis(Axis(0), |col| (col.mapv(|v| v * v).sum() / n).sqrt())
            .mapv(|s| if s < 1e-12 { 1.0 } else { s });
        Self { mean, sd }
    }

    pub fn apply_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.sd
    }

    pub fn apply_row(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        (x - &self.mean) / &self.sd
    }
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

/// Per-epoch record of one training run.
#[derive(Debug, Clone)]
pub struct TrainHistory {
    /// Risk of the parameters entering each epoch (index 0 = epoch 1).
    pub train_risk: Vec<f64>,
    /// Validation MSPE after each epoch's update; `None` during burn-in.
    pub val_mspe: Vec<Option<f64>>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_risk.len()
    }

    /// Validation MSPE of the restored parameters, when validation ran.
    pub fn best_val_mspe(&self) -> Option<f64> {
        self.val_mspe.get(self.best_epoch - 1).copied().flatten()
    }
}

/// A trained model: restored parameters plus everything prediction needs.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub space: MetricSpace,
    pub config: TrainConfig,
    pub standardizer: Standardizer,
    pub params: NetworkParams,
    pub head: FittedHead,
}

impl Checkpoint {
    pub fn predict(&self, x: &ArrayView1<f64>) -> Result<crate::spaces::Point> {
        if x.len() != self.config.arch.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.config.arch.input_dim
            )));
        }
        let standardized = self.standardizer.apply_row(x);
        head::predict(
            &standardized.view(),
            &self.params,
            &self.config.arch,
            &self.head,
        )
    }

    pub fn predict_batch(&self, x: &ArrayView2<f64>) -> Result<Vec<crate::spaces::Point>> {
        if x.ncols() != self.config.arch.input_dim {
            return Err(Error::Dimension(format!(
                "inputs have {} columns, model expects {}",
                x.ncols(),
                self.config.arch.input_dim
            )));
        }
        let standardized = self.standardizer.apply_batch(x);
        let reps = forward_eval(&self.params, &self.config.arch, &standardized.view())?;
        let mut out = Vec::with_capacity(x.nrows());
        for row in reps.axis_iter(Axis(0)) {
            out.push(self.head.predict_from_rep(&row)?);
        }
        Ok(out)
    }
}

/// Uniformly random 4:1 split. Both sides keep the original record order.
pub fn split_train_val(data: &Dataset, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
    let (train_idx, val_idx) = split_indices(data.len(), rng)?;
    Ok((data.subset(&train_idx)?, data.subset(&val_idx)?))
}

fn split_indices(n: usize, rng: &mut RngState) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::SampleSize { need: 5, got: n });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut indices);
    let n_val = (n / 5).max(1);
    let mut val: Vec<usize> = indices[..n_val].to_vec();
    let mut train: Vec<usize> = indices[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// Classical momentum update: `v <- momentum v + g`, `theta <- theta - lr v`.
pub fn sgd_step(
    params: &mut NetworkParams,
    velocity: &mut NetworkParams,
    grads: &GradientBundle,
    learning_rate: f64,
    momentum: f64,
) {
    for ((p, v), g) in params
        .layers
        .iter_mut()
        .zip(velocity.layers.iter_mut())
        .zip(grads.layers.iter())
    {
        v.weight *= momentum;
        v.weight += &g.weight;
        v.bias *= momentum;
        v.bias += &g.bias;
        p.weight.scaled_add(-learning_rate, &v.weight);
        p.bias.scaled_add(-learning_rate, &v.bias);
    }
}

/// Validation MSPE of `params` using a head fitted on the training split.
fn validation_mspe(
    params: &NetworkParams,
    config: &TrainConfig,
    space: MetricSpace,
    x_train: &Array2<f64>,
    train_responses: &[crate::spaces::Point],
    x_val: &Array2<f64>,
    val_responses: &[crate::spaces::Point],
) -> Result<f64> {
    let reps_train = forward_eval(params, &config.arch, &x_train.view())?;
    let head = FittedHead::fit(
        space,
        reps_train,
        train_responses.to_vec(),
        config.ridge_policy,
    )?;
    let reps_val = forward_eval(params, &config.arch, &x_val.view())?;
    let mut total = 0.0;
    for (row, truth) in reps_val.axis_iter(Axis(0)).zip(val_responses) {
        let prediction = head.predict_from_rep(&row)?;
        let d = space.distance(&prediction, truth)?;
        total += d * d;
    }
    Ok(total / val_responses.len() as f64)
}

/// Trains on `data`: 4:1 split, epoch loop of gradient + momentum steps,
/// validation-based early stopping after the burn-in, restoration of the
/// best-validation parameters, and a final head fitted on the whole training
/// split with the restored weights. Predictors are z-scored by statistics of
/// `data` and the scaler is stored in the checkpoint.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(Checkpoint, TrainHistory)> {
    config.validate()?;
    let space = data.space();
    let n = data.len();
    let min_size = 5.max(config.arch.representation_dim() + 2);
    if n < min_size {
        return Err(Error::SampleSize {
            need: min_size,
            got: n,
        });
    }
    if data.predictor_dim() != config.arch.input_dim {
        return Err(Error::Dimension(format!(
            "data has {} predictors, architecture expects {}",
            data.predictor_dim(),
            config.arch.input_dim
        )));
    }

    let standardizer = Standardizer::fit(&data.predictors().view());
    let x_all = standardizer.apply_batch(&data.predictors().view());

    let mut split_rng = RngState::derive(config.seed, STREAM_SPLIT);
    let (train_idx, val_idx) = split_indices(n, &mut split_rng)?;
    let select = |indices: &[usize]| -> (Array2<f64>, Vec<crate::spaces::Point>) {
        let mut x = Array2::<f64>::zeros((indices.len(), x_all.ncols()));
        let mut responses = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            x.row_mut(row).assign(&x_all.row(i));
            responses.push(data.responses()[i].clone());
        }
        (x, responses)
    };
    let (x_train, train_responses) = select(&train_idx);
    let (x_val, val_responses) = select(&val_idx);
    let n_train = x_train.nrows();

    let mut init_rng = RngState::derive(config.seed, STREAM_INIT);
    let mut dropout_rng = RngState::derive(config.seed, STREAM_DROPOUT);
    let mut batch_rng = RngState::derive(config.seed, STREAM_BATCH);
    let mut params = NetworkParams::init(&config.arch, &mut init_rng);
    let mut velocity = NetworkParams::zeros(&config.arch);
    let opts = config.grad_options();

    let mut history = TrainHistory {
        train_risk: Vec::new(),
        val_mspe: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best: Option<(f64, usize, NetworkParams)> = None;
    let mut previous_val: Option<f64> = None;
    let mut fails = 0usize;

    // Non-finite values inside the loss are divergence, not data errors.
    let wrap_divergence = |e: Error, epoch: usize| match e {
        Error::Numeric(detail) => Error::Diverged { epoch, detail },
        other => other,
    };

    for epoch in 1..=config.max_epochs {
        let epoch_risk = match config.batch_mode {
            BatchMode::Full => {
                let (report, grads) = loss_and_grad(
                    &x_train.view(),
                    &train_responses,
                    &params,
                    &config.arch,
                    space,
                    &opts,
                    Some(&mut dropout_rng),
                )
                .map_err(|e| wrap_divergence(e, epoch))?;
                sgd_step(
                    &mut params,
                    &mut velocity,
                    &grads,
                    config.learning_rate,
                    config.momentum,
                );
                report.risk
            }
            BatchMode::Minibatch(size) => {
                let mut order: Vec<usize> = (0..n_train).collect();
                batch_rng.shuffle(&mut order);
                let mut chunks: Vec<&[usize]> = order.chunks(size).collect();
                // A trailing singleton cannot carry batch statistics; fold it
                // into the previous chunk by re-slicing.
                let merged_tail;
                if chunks.len() >= 2 && chunks.last().is_some_and(|c| c.len() < 2) {
                    let start = order.len() - size - 1;
                    merged_tail = &order[start..];
                    chunks.pop();
                    chunks.pop();
                    chunks.push(merged_tail);
                }
                let mut weighted = 0.0;
                for chunk in chunks {
                    let mut xb = Array2::<f64>::zeros((chunk.len(), x_train.ncols()));
                    let mut yb = Vec::with_capacity(chunk.len());
                    for (row, &i) in chunk.iter().enumerate() {
                        xb.row_mut(row).assign(&x_train.row(i));
                        yb.push(train_responses[i].clone());
                    }
                    let (report, grads) = loss_and_grad(
                        &xb.view(),
                        &yb,
                        &params,
                        &config.arch,
                        space,
                        &opts,
                        Some(&mut dropout_rng),
                    )
                    .map_err(|e| wrap_divergence(e, epoch))?;
                    sgd_step(
                        &mut params,
                        &mut velocity,
                        &grads,
                        config.learning_rate,
                        config.momentum,
                    );
                    weighted += report.risk * chunk.len() as f64;
                }
                weighted / n_train as f64
            }
        };
        if !epoch_risk.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training risk became {epoch_risk}"),
            });
        }
        history.train_risk.push(epoch_risk);

        if epoch > config.burn_in {
            let val = validation_mspe(
                &params,
                config,
                space,
                &x_train,
                &train_responses,
                &x_val,
                &val_responses,
            )?;
            if !val.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("validation MSPE became {val}"),
                });
            }
            history.val_mspe.push(Some(val));
            let improved_best = best.as_ref().map_or(true, |(b, _, _)| val < *b);
            if improved_best {
                match &mut best {
                    Some((b, e, p)) => {
                        *b = val;
                        *e = epoch;
                        p.clone_from(&params);
                    }
                    slot => *slot = Some((val, epoch, params.clone())),
                }
            }
            if let Some(prev) = previous_val {
                if prev - val < config.tolerance {
                    fails += 1;
                } else {
                    fails = 0;
                }
            }
            previous_val = Some(val);
            if fails >= config.patience {
                history.stop_reason = StopReason::EarlyStopping;
                break;
            }
        } else {
            history.val_mspe.push(None);
        }
    }

    let (best_epoch, restored) = match best {
        Some((_, epoch, p)) => (epoch, p),
        None => (history.train_risk.len(), params),
    };
    history.best_epoch = best_epoch;

    let reps = forward_eval(&restored, &config.arch, &x_train.view())?;
    let fitted = FittedHead::fit(space, reps, train_responses, config.ridge_policy)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        space,
        config: config.clone(),
        standardizer,
        params: restored,
        head: fitted,
    };
    Ok((checkpoint, history))
}

/// Candidate values for the architecture and regularization search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperGrid {
    pub depth: Vec<usize>,
    pub width: Vec<usize>,
    pub last_width: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
}

impl HyperGrid {
    pub fn cardinality(&self) -> usize {
        self.depth.len()
            * self.width.len()
            * self.last_width.len()
            * self.learning_rate.len()
            * self.dropout.len()
    }
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub struct GridScore {
    pub depth: usize,
    pub width: usize,
    pub last_width: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    /// Best validation MSPE of the run; `None` when the run failed or never
    /// reached validation.
    pub val_mspe: Option<f64>,
    pub error: Option<String>,
}

/// Trains one model per grid point (all with the same seed), scores each by
/// its best validation MSPE, and returns the winning configuration with the
/// full score table. Ties break toward smaller depth, then width, then
/// learning rate, then dropout.
pub fn grid_search(
    data: &Dataset,
    base: &TrainConfig,
    grid: &HyperGrid,
) -> Result<(TrainConfig, Vec<GridScore>)> {
    if grid.cardinality() == 0 {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut candidates = Vec::with_capacity(grid.cardinality());
    for &depth in &grid.depth {
        for &width in &grid.width {
            for &last_width in &grid.last_width {
                for &lr in &grid.learning_rate {
                    for &dropout in &grid.dropout {
                        candidates.push((depth, width, last_width, lr, dropout));
                    }
                }
            }
        }
    }
    let scores: Vec<GridScore> = candidates
        .par_iter()
        .map(|&(depth, width, last_width, lr, dropout)| {
            let mut score = GridScore {
                depth,
                width,
                last_width,
                learning_rate: lr,
                dropout,
                val_mspe: None,
                error: None,
            };
            let arch = match Architecture::with_uniform_widths(
                data.predictor_dim(),
                depth,
                width,
                last_width,
                dropout,
            ) {
                Ok(a) => a,
                Err(e) => {
                    score.error = Some(e.to_string());
                    return score;
                }
            };
            let mut config = base.clone();
            config.arch = arch;
            config.learning_rate = lr;
            match train(data, &config) {
                Ok((_, history)) => score.val_mspe = history.best_val_mspe(),
                Err(e) => score.error = Some(e.to_string()),
            }
            score
        })
        .collect();

    let mut best: Option<&GridScore> = None;
    for score in &scores {
        let Some(val) = score.val_mspe else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bv = b.val_mspe.expect("selected scores have values");
                (
                    val,
                    score.depth,
                    score.width,
                    score.last_width,
                    score.learning_rate,
                    score.dropout,
                ) < (
                    bv,
                    b.depth,
                    b.width,
                    b.last_width,
                    b.learning_rate,
                    b.dropout,
                )
            }
        };
        if better {
            best = Some(score);
        }
    }
    let best = best.ok_or_else(|| Error::Config("every grid point failed".into()))?;
    let mut config = base.clone();
    config.arch = Architecture::with_uniform_widths(
        data.predictor_dim(),
        best.depth,
        best.width,
        best.last_width,
        best.dropout,
    )?;
    config.learning_rate = best.learning_rate;
    Ok((config, scores))
}

// ---------------------------------------------------------------------------
// Checkpoint file format (see docs/formats.md for the byte layout).
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 8] = b"FRNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64_slice<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.f64(*v);
        }
    }
}

struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("truncated checkpoint file".into()));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn space_tag(space: MetricSpace) -> u8 {
    match space {
        MetricSpace::Euclidean { .. } => 0,
        MetricSpace::Wasserstein { .. } => 1,
        MetricSpace::Laplacian { .. } => 2,
        MetricSpace::Aitchison { .. } => 3,
    }
}

fn space_from_tag(tag: u8, dim: usize) -> Result<MetricSpace> {
    let kind = match tag {
        0 => "euclidean",
        1 => "wasserstein",
        2 => "laplacian",
        3 => "aitchison",
        other => return Err(Error::Format(format!("unknown space tag {other}"))),
    };
    MetricSpace::from_kind_dim(kind, dim)
}

/// Writes a checkpoint to disk; the round trip is bit-exact.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(ckpt.version);
    w.u8(space_tag(ckpt.space));
    w.u32(ckpt.space.header_dim() as u32);

    let config = &ckpt.config;
    w.u32(config.arch.input_dim as u32);
    w.u32(config.arch.depth() as u32);
    for &width in &config.arch.hidden_widths {
        w.u32(width as u32);
    }
    w.f64(config.arch.dropout_rate);
    w.f64(config.learning_rate);
    w.f64(config.momentum);
    match config.batch_mode {
        BatchMode::Full => {
            w.u8(0);
            w.u32(0);
        }
        BatchMode::Minibatch(size) => {
            w.u8(1);
            w.u32(size as u32);
        }
    }
    w.u32(config.max_epochs as u32);
    w.u32(config.burn_in as u32);
    w.f64(config.tolerance);
    w.u32(config.patience as u32);
    w.u64(config.seed);
    match config.ridge_policy {
        RidgePolicy::Auto => {
            w.u8(0);
            w.f64(0.0);
        }
        RidgePolicy::Fixed(r) => {
            w.u8(1);
            w.f64(r);
        }
    }
    w.u8(config.detached_stats as u8);

    w.f64_slice(ckpt.standardizer.mean.iter());
    w.f64_slice(ckpt.standardizer.sd.iter());
    for layer in &ckpt.params.layers {
        w.f64_slice(layer.weight.iter());
        w.f64_slice(layer.bias.iter());
    }

    let head = &ckpt.head;
    w.u32(head.sample_size() as u32);
    w.f64_slice(head.representations().iter());
    for point in head.responses() {
        let natural = ckpt.space.to_natural(point)?;
        w.f64_slice(natural.iter());
    }
    w.f64(head.stats().ridge);

    let mut file = std::fs::File::create(path)?;
    file.write_all(&w.buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = ByteReader::new(&bytes);
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let tag = r.u8()?;
    let space_dim = r.u32()? as usize;
    let space = space_from_tag(tag, space_dim)?;

    let input_dim = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let mut widths = Vec::with_capacity(depth);
    for _ in 0..depth {
        widths.push(r.u32()? as usize);
    }
    let dropout_rate = r.f64()?;
    let arch = Architecture::new(input_dim, widths, dropout_rate)?;
    let learning_rate = r.f64()?;
    let momentum = r.f64()?;
    let batch_mode = match r.u8()? {
        0 => {
            r.u32()?;
            BatchMode::Full
        }
        1 => BatchMode::Minibatch(r.u32()? as usize),
        other => return Err(Error::Format(format!("unknown batch mode tag {other}"))),
    };
    let max_epochs = r.u32()? as usize;
    let burn_in = r.u32()? as usize;
    let tolerance = r.f64()?;
    let patience = r.u32()? as usize;
    let seed = r.u64()?;
    let ridge_policy = match r.u8()? {
        0 => {
            r.f64()?;
            RidgePolicy::Auto
        }
        1 => RidgePolicy::Fixed(r.f64()?),
        other => return Err(Error::Format(format!("unknown ridge tag {other}"))),
    };
    let detached_stats = r.u8()? != 0;
    let config = TrainConfig {
        arch: arch.clone(),
        learning_rate,
        momentum,
        batch_mode,
        max_epochs,
        burn_in,
        tolerance,
        patience,
        seed,
        ridge_policy,
        detached_stats,
    };
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Format(format!("invalid stored config: {msg}")),
        other => other,
    })?;

    let mean = Array1::from_vec(r.f64_vec(input_dim)?);
    let sd = Array1::from_vec(r.f64_vec(input_dim)?);
    let standardizer = Standardizer { mean, sd };

    let mut params = NetworkParams::zeros(&arch);
    for layer in &mut params.layers {
        let (rows, cols) = (layer.weight.nrows(), layer.weight.ncols());
        layer.weight =
            Array2::from_shape_vec((rows, cols), r.f64_vec(rows * cols)?).expect("shape");
        layer.bias = Array1::from_vec(r.f64_vec(rows)?);
    }

    let n = r.u32()? as usize;
    let rep_dim = arch.representation_dim();
    let reps = Array2::from_shape_vec((n, rep_dim), r.f64_vec(n * rep_dim)?).expect("shape");
    let natural_len = space.embed_dim();
    let mut responses = Vec::with_capacity(n);
    for _ in 0..n {
        let natural = Array1::from_vec(r.f64_vec(natural_len)?);
        responses.push(space.from_natural(natural)?);
    }
    let ridge = r.f64()?;
    r.finish()?;

    let head = FittedHead::fit(space, reps, responses, RidgePolicy::Fixed(ridge))?;
    Ok(Checkpoint {
        version,
        space,
        config,
        standardizer,
        params,
        head,
    })
}
