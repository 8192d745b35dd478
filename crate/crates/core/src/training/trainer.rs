use crate::data::Sample;
use crate::error::{Error, Result};
use crate::kv::Entry;
use crate::network::{Network, INPUT_CHANNELS};
use crate::params::Parameters;
use crate::shuffle::{permutation, seeded_rng, TRAIN_STREAM};

use super::adam::OptimizerState;
use super::eval::train_step;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Checkpoint period in epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 50,
            batch_size: 4,
            seed: 0,
            shuffle: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainPlan {
    pub const KEYS: [&'static str; 5] = ["epochs", "batch_size", "seed", "shuffle", "checkpoint_every"];

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn apply(&mut self, entry: &Entry) -> Result<bool> {
        match entry.key.as_str() {
            "epochs" => self.epochs = entry.parse()?,
            "batch_size" => self.batch_size = entry.parse()?,
            "seed" => self.seed = entry.parse()?,
            "shuffle" => self.shuffle = entry.parse_bool()?,
            "checkpoint_every" => self.checkpoint_every = entry.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv_lines(&self) -> Vec<(String, String)> {
        vec![
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("shuffle".into(), self.shuffle.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
        ]
    }

    /// Whether a checkpoint is due after 1-based `epoch`.
    pub fn checkpoint_due(&self, epoch: usize) -> bool {
        self.checkpoint_every > 0 && epoch.is_multiple_of(self.checkpoint_every)
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
}

/// Trailing moving average with a full window; empty when fewer than
/// `window` values exist.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

fn preflight(net: &Network, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let cfg = net.config();
    for s in data {
        let [n, c, h, w] = s.image.shape().dims();
        if (n, c, h, w) != (1, INPUT_CHANNELS, cfg.height, cfg.width) {
            return Err(Error::data(format!(
                "sample {} has image shape {}, network expects (1, {INPUT_CHANNELS}, {}, {})",
                s.id,
                s.image.shape(),
                cfg.height,
                cfg.width
            )));
        }
        if (s.mask.n(), s.mask.h(), s.mask.w()) != (1, cfg.height, cfg.width) {
            return Err(Error::data(format!(
                "sample {} mask is {}x{}, network expects {}x{}",
                s.id,
                s.mask.h(),
                s.mask.w(),
                cfg.height,
                cfg.width
            )));
        }
        s.mask
            .check_range(cfg.num_classes)
            .map_err(|e| Error::data(format!("sample {}: {e}", s.id)))?;
    }
    Ok(())
}

/// Runs `plan.epochs` passes of Adam over `data`. Batches follow a seeded
/// shuffle per epoch; the final partial batch is kept. `on_epoch` runs
/// after every epoch with the current state. All data checks happen before
/// the first step.
pub fn train(
    net: &Network,
    params: &mut Parameters<f32>,
    opt: &mut OptimizerState<f32>,
    data: &[Sample],
    plan: &TrainPlan,
    mut on_epoch: impl FnMut(&EpochRecord, &Parameters<f32>, &OptimizerState<f32>) -> Result<()>,
) -> Result<TrainLog> {
    plan.validate()?;
    opt.config.validate()?;
    preflight(net, data)?;
    let mut rng = seeded_rng(plan.seed, TRAIN_STREAM);
    let mut log = TrainLog::default();
    for epoch in 1..=plan.epochs {
        let order: Vec<usize> = if plan.shuffle {
            permutation(data.len(), &mut rng)
        } else {
            (0..data.len()).collect()
        };
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(plan.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = train_step(net, params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Internal(format!(
                    "loss became {loss} at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            opt.update(params, &grads)?;
            log.step_losses.push(loss);
            total += loss;
            steps += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: total / steps as f64,
            steps,
        };
        log.epochs.push(record);
        on_epoch(&record, params, opt)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_epochs_rejected() {
        let plan = TrainPlan {
            epochs: 0,
            ..TrainPlan::default()
        };
        assert!(matches!(plan.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn partial_batches_count() {
        let plan = TrainPlan {
            batch_size: 3,
            ..TrainPlan::default()
        };
        assert_eq!(plan.steps_per_epoch(8), 3);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
