use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{data_backward, data_loss};
use super::model::{Pair, PairBatch, Regime, SiameseModel};
use crate::correlate::ChannelWeights;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Parameter groups held fixed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Freeze {
    pub weights: bool,
    pub bias: bool,
    pub proj_x: bool,
    pub proj_y: bool,
}

impl Freeze {
    /// Groups each regime trains. The bias stays frozen; see [`super::HingeForm`].
    pub fn for_regime(regime: Regime) -> Self {
        let projections = regime != Regime::Joint;
        Self {
            weights: false,
            bias: true,
            proj_x: projections,
            proj_y: projections,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightInit<T> {
    Uniform,
    Given(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Applied before the first step; `None` keeps the model's weights.
    pub weight_init: Option<WeightInit<T>>,
    pub freeze: Freeze,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(regime: Regime) -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            weight_init: None,
            freeze: Freeze::for_regime(regime),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Full objective (hinge sum plus regularizer) on the training pairs.
    pub train_loss: f64,
    /// Mean hinge on the validation pairs, or the training objective when there are none.
    pub selection_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub model: SiameseModel<T>,
    /// Epoch whose parameters were returned; 0 is the initial model.
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

fn descend<T: Scalar>(params: &mut [T], grads: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grads) {
        *p = *p - lr * g;
    }
}

fn model_is_finite<T: Scalar>(m: &SiameseModel<T>) -> bool {
    m.weights.bias.is_finite()
        && m.weights
            .weights
            .iter()
            .chain(m.proj_x.matrix())
            .chain(m.proj_y.matrix())
            .all(|v| v.is_finite())
}

fn evaluate<T: Scalar>(
    model: &SiameseModel<T>,
    train: &[&Pair<T>],
    validation: Option<&[&Pair<T>]>,
) -> Result<(f64, f64)> {
    let train_loss = (data_loss(model, train)? + model.regularizer()).as_f64();
    let selection = match validation {
        Some(v) => data_loss(model, v)?.as_f64() / v.len() as f64,
        None => train_loss,
    };
    Ok((train_loss, selection))
}

/// Mini-batch gradient descent on the hinge objective.
///
/// Each step moves along the gradient of the mini-batch mean hinge plus
/// `1/N` of the regularizer, so one epoch spends the regularizer once.
/// Pair order is shuffled per epoch with a ChaCha stream seeded by
/// `cfg.seed`. The returned model is the one with the lowest selection loss
/// (validation mean hinge if `validation` is given), evaluated after every epoch
/// and for the initial parameters.
pub fn train<T: Scalar>(
    model: SiameseModel<T>,
    data: &PairBatch<T>,
    validation: Option<&PairBatch<T>>,
    cfg: &TrainConfig<T>,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainReport {
            model,
            best_epoch: 0,
            history: vec![],
        });
    }
    let mut model = model;
    match &cfg.weight_init {
        None => {}
        Some(WeightInit::Uniform) => {
            model.weights = ChannelWeights {
                bias: model.weights.bias,
                ..ChannelWeights::uniform(model.dim())
            }
        }
        Some(WeightInit::Given(w)) => {
            if w.len() != model.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "{} initial weights for {} channels",
                    w.len(),
                    model.dim()
                )));
            }
            model.weights = ChannelWeights::new(w.clone(), model.weights.bias)?;
        }
    }

    let pairs: Vec<&Pair<T>> = data.pairs().iter().collect();
    let val: Option<Vec<&Pair<T>>> = validation.map(|v| v.pairs().iter().collect());
    let n = pairs.len();
    let lr = T::cast_f64(cfg.learning_rate);
    let reg_share = T::one() / T::count(n);
    let with_projections = !(cfg.freeze.proj_x && cfg.freeze.proj_y);

    let (train_loss, selection_loss) = evaluate(&model, &pairs, val.as_deref())?;
    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss,
        selection_loss,
    }];
    let mut best = (selection_loss, 0, model.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut iteration = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Pair<T>> = chunk.iter().map(|&i| pairs[i]).collect();
            let (loss, mut g) = data_backward(&model, &batch, with_projections)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    loss: loss.as_f64(),
                });
            }
            g.scale(T::one() / T::count(batch.len()));
            g.add_regularizer(&model, reg_share);
            if !cfg.freeze.weights {
                descend(&mut model.weights.weights, &g.weights, lr);
            }
            if !cfg.freeze.bias {
                model.weights.bias = model.weights.bias - lr * g.bias;
            }
            if !cfg.freeze.proj_x {
                descend(model.proj_x.matrix_mut(), &g.proj_x, lr);
            }
            if !cfg.freeze.proj_y {
                descend(model.proj_y.matrix_mut(), &g.proj_y, lr);
            }
            if !model_is_finite(&model) {
                return Err(Error::Diverged {
                    iteration,
                    loss: f64::NAN,
                });
            }
            iteration += 1;
        }
        let (train_loss, selection_loss) = evaluate(&model, &pairs, val.as_deref())?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                iteration,
                loss: train_loss,
            });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            selection_loss,
        });
        if selection_loss < best.0 {
            best = (selection_loss, epoch, model.clone());
        }
    }
    Ok(TrainReport {
        model: best.2,
        best_epoch: best.1,
        history,
    })
}

/// `k` disjoint validation folds over `0..n` after a seeded shuffle, each
/// returned as `(train indices, validation indices)`.
pub fn k_fold(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::Config(format!("need 2 <= k <= n for k-fold, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let (mut tr, mut va) = (vec![], vec![]);
            for (pos, &i) in order.iter().enumerate() {
                if pos % k == f {
                    va.push(i);
                } else {
                    tr.push(i);
                }
            }
            (tr, va)
        })
        .collect())
}
