//! Tiny two-head convnet trained with the multi-task loss.

mod checkpoint;
mod net;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use net::{
    backprop, backward, batch_gradient, batch_loss, forward, forward_f64, init_params, predict,
    Activations, BatchGradient, TinyNet, BLOCK_NAMES, CONV1_OUT, CONV2_OUT,
};

use crate::benchmark::{evaluate, Evaluation, MatchParams};
use crate::error::{Error, Result};
use crate::losses::{AttentionParams, BoundaryLoss, MultiTaskParams};
use crate::maps::{DatasetManifest, GroundTruth, OrientationMap, ProbabilityMap, ScalarMap};
use crate::parallel::Execution;
use crate::thinning::{adjust_orientations, nms_thin, support, NmsParams};

/// Horizontal-flip augmentation policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FlipMode {
    /// Fair coin per sample.
    #[default]
    Random,
    Never,
    Always,
}

impl fmt::Display for FlipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipMode::Random => "random",
            FlipMode::Never => "never",
            FlipMode::Always => "always",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Side of the square training crop.
    pub crop: usize,
    pub iters: usize,
    /// Batches whose gradients are averaged before each update.
    pub iter_size: usize,
    pub seed: u64,
    pub flip: FlipMode,
    pub loss: MultiTaskParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            momentum: 0.9,
            weight_decay: 2e-4,
            batch_size: 5,
            crop: 32,
            iters: 2000,
            iter_size: 1,
            seed: 0,
            flip: FlipMode::Random,
            loss: MultiTaskParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::param(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if self.crop < 8 {
            return Err(Error::param(format!("crop must be at least 8, got {}", self.crop)));
        }
        if self.iters == 0 {
            return Err(Error::param("iters must be at least 1"));
        }
        if self.iter_size == 0 {
            return Err(Error::param("iter size must be at least 1"));
        }
        Ok(())
    }

    fn sgd(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Momentum SGD hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v ← momentum·v − lr·(g + weight_decay·param)`, then `param ← param + v`.
pub fn sgd_step(net: &mut TinyNet, grads: &TinyNet, velocity: &mut TinyNet, sgd: &Sgd) {
    let params = net.blocks_mut();
    let vel = velocity.blocks_mut();
    for ((p, g), v) in params.into_iter().zip(grads.blocks()).zip(vel) {
        for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = sgd.momentum * *v - sgd.lr * (g + sgd.weight_decay * *p);
            *p += *v;
        }
    }
}

/// Where one training sample comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleDraw {
    pub record: usize,
    pub flip: bool,
    pub row: usize,
    pub col: usize,
}

const SAMPLER_KEY: u64 = 0x6f63_6362_6f75_6e64;

/// Draw number `counter` for a dataset of `n` records of size `w`×`h`.
///
/// Each draw comes from its own ChaCha stream, so samples depend only on
/// `(seed, counter)`. The flip coin is consumed even when the policy
/// overrides it, so different policies see identical crops.
pub fn sample_draw(
    seed: u64,
    counter: u64,
    n: usize,
    dims: impl Fn(usize) -> (usize, usize),
    crop: usize,
    flip: FlipMode,
) -> SampleDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_KEY);
    rng.set_stream(counter);
    let record = rng.random_range(0..n);
    let coin = rng.random_bool(0.5);
    let (w, h) = dims(record);
    let row = rng.random_range(0..=h - crop);
    let col = rng.random_range(0..=w - crop);
    let flip = match flip {
        FlipMode::Random => coin,
        FlipMode::Never => false,
        FlipMode::Always => true,
    };
    SampleDraw { record, flip, row, col }
}

fn make_sample(
    records: &[(ScalarMap, GroundTruth)],
    draw: SampleDraw,
    crop: usize,
) -> Result<(ScalarMap, GroundTruth)> {
    let (img, gt) = &records[draw.record];
    let (img, gt) = if draw.flip {
        (img.flip_horizontal(), gt.flip_horizontal())
    } else {
        (img.clone(), gt.clone())
    };
    Ok((img.crop(draw.row, draw.col, crop, crop)?, gt.crop(draw.row, draw.col, crop, crop)?))
}

/// One row of the training log; losses are averaged over the accumulated
/// batches of the iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    pub loss: f64,
    pub loss_boundary: f64,
    pub loss_orient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub net: TinyNet,
    pub history: Vec<HistoryRow>,
}

/// `iter,loss,loss_boundary,loss_orient`
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("iter,loss,loss_boundary,loss_orient\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            r.iter, r.loss, r.loss_boundary, r.loss_orient
        ));
    }
    out
}

pub fn train(manifest: &DatasetManifest, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(manifest, config, Execution::default())
}

pub fn train_with(
    manifest: &DatasetManifest,
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    if manifest.is_empty() {
        return Err(Error::validation("manifest has no records"));
    }
    config.validate()?;
    let records = manifest.load_all()?;
    train_records(&records, config, exec)
}

/// Trains on in-memory records. Results do not depend on `exec`.
pub fn train_records(
    records: &[(ScalarMap, GroundTruth)],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    for (i, (img, gt)) in records.iter().enumerate() {
        if !img.same_dims(&gt.boundary) {
            return Err(Error::validation(format!("record {i}: image and ground truth sizes differ")));
        }
        if img.width() < config.crop || img.height() < config.crop {
            return Err(Error::validation(format!(
                "record {i}: {}x{} image is smaller than the {} crop",
                img.width(),
                img.height(),
                config.crop
            )));
        }
    }
    let mut net = init_params(config.seed);
    let mut velocity = TinyNet::zeros();
    let sgd = config.sgd();
    let mut history = Vec::with_capacity(config.iters);
    let per_iter = config.batch_size * config.iter_size;
    for it in 0..config.iters {
        let mut grads = TinyNet::zeros();
        let mut row = HistoryRow {
            iter: it + 1,
            loss: 0.0,
            loss_boundary: 0.0,
            loss_orient: 0.0,
        };
        for acc in 0..config.iter_size {
            let base = (it * per_iter + acc * config.batch_size) as u64;
            let batch = (0..config.batch_size)
                .map(|j| {
                    let draw = sample_draw(
                        config.seed,
                        base + j as u64,
                        records.len(),
                        |r| (records[r].0.width(), records[r].0.height()),
                        config.crop,
                        config.flip,
                    );
                    make_sample(records, draw, config.crop)
                })
                .collect::<Result<Vec<_>>>()?;
            let out = batch_gradient(&net, &batch, &config.loss, exec)?;
            grads.add_scaled(&out.grads, 1.0 / config.iter_size as f64);
            let k = config.iter_size as f64;
            row.loss += out.loss.loss / k;
            row.loss_boundary += out.loss.boundary / k;
            row.loss_orient += out.loss.orientation / k;
        }
        if !row.loss.is_finite() || !grads.is_finite() {
            return Err(Error::validation(format!("training diverged at iteration {}", it + 1)));
        }
        sgd_step(&mut net, &grads, &mut velocity, &sgd);
        history.push(row);
    }
    Ok(TrainOutcome { net, history })
}

/// Orientation-adjustment window radius used by [`postprocess`].
pub const ADJUST_RADIUS: usize = 3;

/// Thinning then tangent-based orientation adjustment of one prediction.
pub fn postprocess(
    prob: &ProbabilityMap,
    orient: &OrientationMap,
    nms: &NmsParams,
) -> Result<(ProbabilityMap, OrientationMap)> {
    let thin = nms_thin(prob, nms)?;
    let adjusted = adjust_orientations(&support(&thin), orient, ADJUST_RADIUS)?;
    Ok((thin, adjusted))
}

/// Predict, thin, adjust and benchmark on labelled records.
pub fn evaluate_net(
    net: &TinyNet,
    records: &[(ScalarMap, GroundTruth)],
    nms: &NmsParams,
    params: &MatchParams,
    exec: Execution,
) -> Result<Evaluation> {
    let preds = exec
        .map(records, |(img, _)| {
            let (p, o) = predict(net, img);
            postprocess(&p, &o, nms)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<GroundTruth> = records.iter().map(|(_, gt)| gt.clone()).collect();
    evaluate(&preds, &gts, params, exec)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub gamma: f64,
    pub ods: f64,
    pub ois: f64,
    pub ap: f64,
}

/// `beta,gamma,ods,ois,ap`
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("beta,gamma,ods,ois,ap\n");
    for r in rows {
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?},{:?}\n",
            r.beta, r.gamma, r.ods, r.ois, r.ap
        ));
    }
    out
}

/// Trains one attention-loss net per `(β, γ)` on `train` with the seeds of
/// `base`, and scores each on `holdout`. Rows are in β-major order.
pub fn sweep_beta_gamma(
    train: &[(ScalarMap, GroundTruth)],
    holdout: &[(ScalarMap, GroundTruth)],
    base: &TrainConfig,
    betas: &[f64],
    gammas: &[f64],
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if betas.is_empty() || gammas.is_empty() {
        return Err(Error::param("beta and gamma lists must be nonempty"));
    }
    if holdout.is_empty() {
        return Err(Error::validation("held-out split is empty"));
    }
    let mut rows = Vec::with_capacity(betas.len() * gammas.len());
    for &beta in betas {
        for &gamma in gammas {
            let boundary = BoundaryLoss::Attention(AttentionParams::new(beta, gamma)?);
            let config = TrainConfig {
                loss: base.loss.with_boundary(boundary),
                ..base.clone()
            };
            let outcome = train_records(train, &config, exec)?;
            let eval = evaluate_net(
                &outcome.net,
                holdout,
                &NmsParams::default(),
                &MatchParams::default(),
                exec,
            )?;
            rows.push(SweepRow {
                beta,
                gamma,
                ods: eval.summary.ods_f,
                ois: eval.summary.ois_f,
                ap: eval.summary.ap,
            });
        }
    }
    Ok(rows)
}

/// Splits a manifest into training and held-out parts: the last
/// `max(1, n / 5)` records are held out.
pub fn holdout_split(manifest: &DatasetManifest) -> Result<(DatasetManifest, DatasetManifest)> {
    let n = manifest.len();
    if n < 2 {
        return Err(Error::validation("need at least two records to hold some out"));
    }
    let n_hold = (n / 5).max(1);
    let train = DatasetManifest {
        records: manifest.records[..n - n_hold].to_vec(),
    };
    let hold = DatasetManifest {
        records: manifest.records[n - n_hold..].to_vec(),
    };
    Ok((train, hold))
}

#[cfg(test)]
mod tests;
