//! SGD training with momentum, weight decay, and learning rate steps,
//! plus checkpoint I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{Network, NetworkConfig, ParamClass, Params, Sample};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

/// Optimization recipe. Defaults follow the training setup this pipeline
/// reproduces: momentum SGD at lr 0.1 with 0.005 weight decay, 30 epochs,
/// lr x0.1 every 10 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.005,
            epochs: 30,
            lr_decay_factor: 0.1,
            lr_decay_every: 10,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay {} negative", self.weight_decay)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return Err(Error::Config("epochs, batch size, lr_decay_every must be >= 1".to_string()));
        }
        Ok(())
    }

    /// Learning rate for a zero-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// One SGD-with-momentum step over every parameter:
/// v <- momentum * v - lr * (grad + decay * w); w <- w + v.
/// Weight decay applies to weight matrices only (not biases, not radii).
///
/// Radii follow the same rule in a span-normalized coordinate
/// u = (rho - r_min) / (r_max - r_min): a radius measured in meters sits
/// eight orders of magnitude away from the weights in curvature, so a
/// shared learning rate would freeze it. In meter space this scales the
/// radius gradient by span^2. Radii are clamped into their bounds after
/// every update.
pub fn sgd_step(
    params: &mut Params,
    grads: &Params,
    momentum_buf: &mut Params,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    radius_bounds: (f64, f64),
) {
    let span_sq = (radius_bounds.1 - radius_bounds.0).powi(2);
    params.visit(grads, momentum_buf, |class, p, g, m| match class {
        ParamClass::Rho => {
            *m = momentum * *m - lr * g * span_sq;
            *p = (*p + *m).clamp(radius_bounds.0, radius_bounds.1);
        }
        _ => {
            let decay = if class == ParamClass::Weight { weight_decay } else { 0.0 };
            *m = momentum * *m - lr * (g + decay * *p);
            *p += *m;
        }
    });
}

/// Loss curve entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Training output: the fitted network with its loss curve and recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: Network,
    pub curve: Vec<EpochStats>,
    pub train_config: TrainConfig,
}

/// Train a fresh network. Deterministic given the seed: initialization,
/// epoch shuffles, and dropout masks each draw from their own seeded
/// stream, and batch gradients sum in shuffled-sample order before the
/// mean is taken.
pub fn train(samples: &[Sample], net_config: NetworkConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    net_config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set", "no samples".to_string()));
    }
    let mut network = Network::new(net_config.clone(), cfg.seed)?;
    // Surface shape problems before the first step.
    for s in samples {
        if s.label >= net_config.classes {
            return Err(Error::invalid(
                "label",
                format!("{} out of range for {} classes", s.label, net_config.classes),
            ));
        }
        network.loss(s)?;
    }

    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);
    let mut momentum_buf = Params::zeros(&net_config);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let bounds = (net_config.radius_min, net_config.radius_max);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            let mut grads = Params::zeros(&net_config);
            for &idx in batch {
                epoch_loss += network.loss_grad(&samples[idx], Some(&mut dropout_rng), &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f64;
            scale_params(&mut grads, scale);
            sgd_step(
                &mut network.params,
                &grads,
                &mut momentum_buf,
                lr,
                cfg.momentum,
                cfg.weight_decay,
                bounds,
            );
        }
        curve.push(EpochStats {
            epoch,
            loss: epoch_loss / samples.len() as f64,
            lr,
        });
    }

    Ok(TrainedModel {
        network,
        curve,
        train_config: cfg.clone(),
    })
}

fn scale_params(params: &mut Params, scale: f64) {
    let mut dummy = params.clone();
    let grads = params.clone();
    params.visit(&grads, &mut dummy, |_, p, _, _| *p *= scale);
}

const CHECKPOINT_FORMAT: &str = "geoclass-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    train_config: TrainConfig,
    curve: Vec<EpochStats>,
    network: Network,
}

/// Write a checkpoint as canonical JSON. Round-trips bit-exactly: floats
/// serialize with shortest-exact representation and field order is fixed.
pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let ck = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        train_config: model.train_config.clone(),
        curve: model.curve.clone(),
        network: model.network.clone(),
    };
    serde_json::to_writer(&mut w, &ck).map_err(|e| Error::format(path, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ck: CheckpointFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::format(path, 0, format!("unknown checkpoint format '{}'", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            0,
            format!("unsupported checkpoint version {}", ck.version),
        ));
    }
    Ok(TrainedModel {
        network: ck.network,
        curve: ck.curve,
        train_config: ck.train_config,
    })
}

/// Write the loss curve as `epoch,loss,lr`.
pub fn write_loss_curve(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,loss,lr").map_err(|e| Error::io(path, e))?;
    for s in curve {
        writeln!(w, "{},{},{}", s.epoch, s.loss, s.lr).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
