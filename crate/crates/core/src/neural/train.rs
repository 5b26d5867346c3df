//! Minibatch training loop.

use ndarray::{Array2, ArrayViewMut2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::neural::lstm::{backward, batch_loss, forward_batch, Layout, LstmParams};
use crate::neural::optim::{clip_gradients, optimizer_step, TrainConfig, TrainingState};
use crate::numerics::RngStream;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// One supervised example: a flat feature vector and its target bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub features: Vec<f64>,
    pub labels: Vec<u8>,
    pub group_index: usize,
}

/// Anything that can fill minibatches of examples by index.
pub trait ExampleSource {
    fn len(&self) -> usize;
    fn input_len(&self) -> usize;
    fn outputs(&self) -> usize;
    /// Write example `index` into `features` and `labels` (as 0.0 / 1.0).
    fn fill(&self, index: usize, features: &mut [f64], labels: &mut [f64]);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fill a batch matrix pair from a list of example indices.
pub fn fill_batch<S: ExampleSource + ?Sized>(
    source: &S,
    indices: &[usize],
    mut x: ArrayViewMut2<'_, f64>,
    mut y: ArrayViewMut2<'_, f64>,
) {
    for (r, &idx) in indices.iter().enumerate() {
        let xr = x.row_mut(r).into_slice().expect("contiguous row");
        let yr = y.row_mut(r).into_slice().expect("contiguous row");
        source.fill(idx, xr, yr);
    }
}

/// In-memory example collection.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSet {
    features: Array2<f64>,
    labels: Array2<f64>,
}

impl ExampleSet {
    pub fn new(features: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        check_len(features.nrows(), labels.nrows())?;
        if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(invalid("labels must be 0 or 1"));
        }
        Ok(Self { features, labels })
    }

    pub fn from_examples(examples: &[TrainingExample]) -> Result<Self> {
        let first = examples.first().ok_or_else(|| invalid("no examples"))?;
        let (f, p) = (first.features.len(), first.labels.len());
        let mut x = Array2::zeros((examples.len(), f));
        let mut y = Array2::zeros((examples.len(), p));
        for (r, ex) in examples.iter().enumerate() {
            check_len(f, ex.features.len())?;
            check_len(p, ex.labels.len())?;
            x.row_mut(r).iter_mut().zip(&ex.features).for_each(|(d, s)| *d = *s);
            y.row_mut(r).iter_mut().zip(&ex.labels).for_each(|(d, &s)| *d = f64::from(s));
        }
        Self::new(x, y)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }
}

impl ExampleSource for ExampleSet {
    fn len(&self) -> usize {
        self.features.nrows()
    }

    fn input_len(&self) -> usize {
        self.features.ncols()
    }

    fn outputs(&self) -> usize {
        self.labels.ncols()
    }

    fn fill(&self, index: usize, features: &mut [f64], labels: &mut [f64]) {
        features
            .iter_mut()
            .zip(self.features.row(index))
            .for_each(|(d, s)| *d = *s);
        labels.iter_mut().zip(self.labels.row(index)).for_each(|(d, s)| *d = *s);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean minibatch cost per epoch.
    pub train_gamma: Vec<f64>,
    /// Mean per-example cross-entropy on the validation set after each epoch.
    pub val_psi: Vec<f64>,
    /// Minibatch costs within the first epoch, in order.
    pub first_epoch_batches: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub steps: u64,
}

/// Mean per-example cross-entropy of `params` over all of `source`.
pub fn mean_cross_entropy<S: ExampleSource + ?Sized>(
    source: &S,
    params: &LstmParams,
    layout: Layout,
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let order: Vec<usize> = (0..source.len()).collect();
    for chunk in order.chunks(batch.max(1)) {
        let mut x = Array2::zeros((chunk.len(), source.input_len()));
        let mut y = Array2::zeros((chunk.len(), source.outputs()));
        fill_batch(source, chunk, x.view_mut(), y.view_mut());
        let cache = forward_batch(x.view(), params, layout)?;
        total += batch_loss(cache.probs.view(), y.view(), params, 0.0)?.psi * chunk.len() as f64;
    }
    Ok(total / source.len().max(1) as f64)
}

/// Fraction of labels reproduced exactly after thresholding at 0.5.
pub fn bit_accuracy<S: ExampleSource + ?Sized>(source: &S, params: &LstmParams, layout: Layout) -> Result<f64> {
    let order: Vec<usize> = (0..source.len()).collect();
    let mut correct = 0usize;
    for chunk in order.chunks(1000) {
        let mut x = Array2::zeros((chunk.len(), source.input_len()));
        let mut y = Array2::zeros((chunk.len(), source.outputs()));
        fill_batch(source, chunk, x.view_mut(), y.view_mut());
        let probs = forward_batch(x.view(), params, layout)?.probs;
        correct += probs
            .iter()
            .zip(y.iter())
            .filter(|(&p, &d)| (p > 0.5) == (d == 1.0))
            .count();
    }
    Ok(correct as f64 / (source.len() * source.outputs()).max(1) as f64)
}

/// Train a fresh model. Returns the parameters from the epoch with the lowest
/// validation cross-entropy.
pub fn train<S, V>(train_set: &S, val_set: &V, cfg: &TrainConfig, layout: Layout) -> Result<(LstmParams, TrainingHistory)>
where
    S: ExampleSource + ?Sized,
    V: ExampleSource + ?Sized,
{
    let mut init_rng = RngStream::new(cfg.seed, INIT_STREAM);
    let params = LstmParams::init(cfg.hidden, layout.features, train_set.outputs(), &mut init_rng);
    train_from(params, train_set, val_set, cfg, layout)
}

/// Train starting from the given parameters.
pub fn train_from<S, V>(
    mut params: LstmParams,
    train_set: &S,
    val_set: &V,
    cfg: &TrainConfig,
    layout: Layout,
) -> Result<(LstmParams, TrainingHistory)>
where
    S: ExampleSource + ?Sized,
    V: ExampleSource + ?Sized,
{
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid("training and validation sets must be non-empty"));
    }
    if train_set.input_len() != layout.input_len() || val_set.input_len() != layout.input_len() {
        return Err(invalid(format!(
            "examples have {} features, layout needs {}",
            train_set.input_len(),
            layout.input_len()
        )));
    }
    if val_set.outputs() != train_set.outputs() || params.outputs() != train_set.outputs() {
        return Err(invalid("label widths of model, training and validation sets differ"));
    }
    params.check_finite()?;

    let mut state = TrainingState::new(&params, cfg);
    let mut history = TrainingHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = cfg.minibatch.min(train_set.len());
    let mut x = Array2::zeros((batch, train_set.input_len()));
    let mut y = Array2::zeros((batch, train_set.outputs()));
    let shuffle_root = RngStream::new(cfg.seed, SHUFFLE_STREAM);

    for epoch in 0..cfg.max_epochs {
        state.epoch = epoch;
        let mut rng = shuffle_root.substream(epoch as u64);
        order.shuffle(&mut rng);
        let mut gamma_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            if chunk.len() != x.nrows() {
                x = Array2::zeros((chunk.len(), train_set.input_len()));
                y = Array2::zeros((chunk.len(), train_set.outputs()));
            }
            fill_batch(train_set, chunk, x.view_mut(), y.view_mut());
            let cache = forward_batch(x.view(), &params, layout)?;
            let cost = batch_loss(cache.probs.view(), y.view(), &params, cfg.weight_decay)?.gamma;
            if !cost.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: state.step,
                    reason: format!("non-finite cost {cost}"),
                });
            }
            let mut grads = backward(&cache, y.view(), &params, cfg.weight_decay)?;
            clip_gradients(&mut grads, cfg.gradient_threshold);
            optimizer_step(&mut params, &grads, &mut state, cfg)?;
            if epoch == 0 {
                history.first_epoch_batches.push(cost);
            }
            gamma_sum += cost;
            batches += 1;
        }
        history.train_gamma.push(gamma_sum / batches as f64);
        let val = mean_cross_entropy(val_set, &params, layout, cfg.minibatch)?;
        if !val.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: state.step,
                reason: format!("non-finite validation loss {val}"),
            });
        }
        history.val_psi.push(val);
        if val < best.0 {
            best = (val, params.clone());
            history.best_epoch = epoch;
        }
    }
    history.steps = state.step;
    Ok((best.1, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::optim::Optimizer;

    /// Labels are the signs of the first two features.
    fn sign_task(n: usize, seed: u64) -> ExampleSet {
        let mut rng = RngStream::new(seed, 0);
        let x = Array2::from_shape_fn((n, 8), |_| rng.standard_normal());
        let y = Array2::from_shape_fn((n, 2), |(r, c)| if x[[r, c * 4]] > 0.0 { 1.0 } else { 0.0 });
        ExampleSet::new(x, y).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            minibatch: 50,
            max_epochs: 15,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_sign_task_deterministically() {
        let tr = sign_task(1000, 1);
        let va = sign_task(200, 2);
        let layout = Layout::new(2, 4).unwrap();
        let (a, ha) = train(&tr, &va, &small_cfg(), layout).unwrap();
        let (b, hb) = train(&tr, &va, &small_cfg(), layout).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert_eq!(ha.val_psi.len(), 15);
        assert!(ha.val_psi[ha.best_epoch] <= ha.val_psi[0]);
        assert!(bit_accuracy(&va, &a, layout).unwrap() > 0.95);
        let first = &ha.first_epoch_batches;
        assert!(first.last().unwrap() < first.first().unwrap());
    }

    #[test]
    fn gradient_descent_mode_trains() {
        let tr = sign_task(500, 5);
        let cfg = TrainConfig {
            optimizer: Optimizer::GradientDescent,
            learning_rate: 0.5,
            ..small_cfg()
        };
        let layout = Layout::new(2, 4).unwrap();
        let (_, h) = train(&tr, &tr, &cfg, layout).unwrap();
        assert!(h.val_psi.last().unwrap() < &h.val_psi[0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let tr = sign_task(10, 1);
        let layout = Layout::new(2, 4).unwrap();
        let empty = ExampleSet::new(Array2::zeros((0, 8)), Array2::zeros((0, 2))).unwrap();
        assert!(train(&tr, &empty, &small_cfg(), layout).is_err());
        assert!(train(&tr, &tr, &small_cfg(), Layout::new(4, 4).unwrap()).is_err());
        assert!(ExampleSet::new(Array2::zeros((1, 8)), Array2::from_elem((1, 2), 0.5)).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let tr = sign_task(100, 1);
        let layout = Layout::new(2, 4).unwrap();
        let mut rng = RngStream::new(0, 0);
        let mut p = LstmParams::init(4, 4, 2, &mut rng);
        p.readout_weights_mut()[[0, 0]] = f64::NAN;
        let spoiled = train_from(p, &tr, &tr, &small_cfg(), layout);
        assert!(spoiled.is_err());
    }

    #[test]
    fn example_set_from_examples() {
        let ex = vec![
            TrainingExample { features: vec![1.0, 2.0], labels: vec![0, 1], group_index: 0 },
            TrainingExample { features: vec![3.0, 4.0], labels: vec![1, 1], group_index: 1 },
        ];
        let set = ExampleSet::from_examples(&ex).unwrap();
        assert_eq!(set.len(), 2);
        let (mut f, mut l) = (vec![0.0; 2], vec![0.0; 2]);
        set.fill(1, &mut f, &mut l);
        assert_eq!(f, vec![3.0, 4.0]);
        assert_eq!(l, vec![1.0, 1.0]);
    }
}
