use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SeqModel;
use crate::{Error, Result};

/// Plain minibatch SGD settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Longest admissible target sequence, EOS included.
    pub t_max: usize,
    /// Global L2 norm the batch gradient is clipped to.
    pub gradient_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: 1,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            t_max: 12,
            gradient_clip: 5.0,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.gradient_clip > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.t_max > 0;
        if positive && self.learning_rate.is_finite() && self.gradient_clip.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training config {self:?}")))
        }
    }
}

/// An image feature with its ground-truth symbol sequence (EOS last).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub feature: Vec<f64>,
    pub target: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sequence NLL on the training set after the epoch.
    pub train_nll: f64,
    pub validation_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation NLL.
    pub model: SeqModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Tracks the best score seen and how long ago it was.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records an epoch's score. Returns `(improved, should_stop)`.
    pub fn observe(&mut self, epoch: usize, score: f64) -> (bool, bool) {
        if score < self.best {
            self.best = score;
            self.best_epoch = epoch;
            self.stale = 0;
            (true, false)
        } else {
            self.stale += 1;
            (false, self.stale >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mean sequence NLL over a dataset.
pub fn mean_nll(model: &SeqModel, data: &[TrainingExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let mut total = 0.0;
    for ex in data {
        total += model.sequence_nll(&ex.feature, &ex.target)?;
    }
    Ok(total / data.len() as f64)
}

/// Trains encoder and decoder jointly with teacher forcing.
///
/// Stops after `max_epochs`, or once validation NLL has not improved for
/// `patience` consecutive epochs. With an empty validation set the training
/// NLL is monitored instead. Fully deterministic given `config.seed`.
pub fn train(
    model: SeqModel,
    data: &[TrainingExample],
    validation: &[TrainingExample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.check()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    for ex in data.iter().chain(validation) {
        if ex.target.len() > config.t_max {
            return Err(Error::InvalidInput(format!(
                "target of length {} exceeds t_max {}",
                ex.target.len(),
                config.t_max
            )));
        }
    }

    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = model.zeros_like();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            for t in grad.tensors_mut() {
                t.fill(0.0);
            }
            for &i in batch {
                model.accumulate_gradient(&data[i].feature, &data[i].target, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let norm = grad
                .tensors()
                .iter()
                .flat_map(|t| t.iter())
                .map(|g| (g * scale).powi(2))
                .sum::<f64>()
                .sqrt();
            let clip = if norm > config.gradient_clip {
                config.gradient_clip / norm
            } else {
                1.0
            };
            let step = config.learning_rate * scale * clip;
            for (p, g) in model.tensors_mut().into_iter().zip(grad.tensors()) {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= step * gv;
                }
            }
        }

        let train_nll = mean_nll(&model, data)?;
        let validation_nll = if validation.is_empty() {
            train_nll
        } else {
            mean_nll(&model, validation)?
        };
        history.push(EpochStats {
            epoch,
            train_nll,
            validation_nll,
        });
        log::debug!("epoch {epoch}: train {train_nll:.5} validation {validation_nll:.5}");

        let (improved, stop) = stopper.observe(epoch, validation_nll);
        if improved {
            best.clone_from(&model);
        }
        if stop {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_counts_stale_epochs() {
        let mut s = EarlyStopping::new(3);
        assert_eq!(s.observe(1, 1.0), (true, false));
        assert_eq!(s.observe(2, 1.1), (false, false));
        assert_eq!(s.observe(3, 1.2), (false, false));
        assert_eq!(s.observe(4, 1.3), (false, true));
        assert_eq!(s.best_epoch(), 1);
    }

    #[test]
    fn equal_score_is_not_improvement() {
        let mut s = EarlyStopping::new(1);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), (false, true));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let m = SeqModel::zeros(super::super::ModelDims::with_vocab(4)).unwrap();
        assert!(train(m, &[], &[], &TrainConfig::default()).is_err());
    }
}
