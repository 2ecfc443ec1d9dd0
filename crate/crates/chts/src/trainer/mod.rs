//! Masked-MLP trainer: f64 forward/backward with SGD momentum, linear
//! learning-rate decay, and in-loop topology evolution over the layer
//! chain.

pub mod data;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{self, EvolutionConfig, LayerState, RegrowthKind, StepReport};
use crate::schedule::DensitySchedule;
use crate::topology::{percolate, BipartiteMask, LinkSet, MaskChain};
use data::Dataset;

/// Layer widths of a multilayer perceptron, input to output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("bad layer widths {dims:?}")));
        }
        Ok(Self { dims })
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub schedule: DensitySchedule,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        self.schedule.validate()?;
        if let Some(evo) = &self.evolution {
            evo.validate()?;
        }
        Ok(())
    }
}

/// MLP whose layers carry binary connectivity masks. The final layer is
/// typically dense (full mask) and excluded from evolution.
#[derive(Debug, Clone)]
pub struct SparseMlp {
    pub layers: Vec<LayerState>,
    pub biases: Vec<Array1<f64>>,
    pub evolvable: Vec<bool>,
    w_vel: Vec<Array2<f64>>,
    b_vel: Vec<Array1<f64>>,
}

impl SparseMlp {
    /// Builds the model from per-layer masks; weights use Kaiming-style
    /// init with the fan-in taken from each unit's mask degree.
    pub fn new(
        spec: &MlpSpec,
        masks: Vec<BipartiteMask>,
        evolvable: Vec<bool>,
        seed: u64,
    ) -> Result<Self> {
        if masks.len() != spec.layer_count() || evolvable.len() != masks.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} masks and flags", spec.layer_count()),
                got: format!("{} masks, {} flags", masks.len(), evolvable.len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut layers = Vec::with_capacity(masks.len());
        let mut biases = Vec::with_capacity(masks.len());
        let mut w_vel = Vec::with_capacity(masks.len());
        let mut b_vel = Vec::with_capacity(masks.len());
        for (l, mask) in masks.into_iter().enumerate() {
            let (rows, cols) = (spec.dims[l], spec.dims[l + 1]);
            if mask.rows() != rows || mask.cols() != cols {
                return Err(Error::DimensionMismatch {
                    expected: format!("{rows}x{cols}"),
                    got: format!("{}x{}", mask.rows(), mask.cols()),
                });
            }
            let fan_in: Vec<f64> =
                (0..cols).map(|j| (mask.col_degree(j).max(1)) as f64).collect();
            let weights = Array2::from_shape_fn((rows, cols), |(_, j)| {
                normal.sample(&mut rng) * (2.0 / fan_in[j]).sqrt()
            });
            layers.push(LayerState::new(weights, mask)?);
            biases.push(Array1::zeros(cols));
            w_vel.push(Array2::zeros((rows, cols)));
            b_vel.push(Array1::zeros(cols));
        }
        Ok(Self { layers, biases, evolvable, w_vel, b_vel })
    }

    pub fn chain(&self) -> MaskChain {
        MaskChain::from_masks(self.layers.iter().map(|l| l.mask.clone()).collect())
            .expect("layer dimensions are chained by construction")
    }

    /// Activations per layer; the last entry holds raw logits.
    pub fn forward(&self, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = activations[l].dot(&layer.weights) + &self.biases[l];
            if l + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        activations
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let logits = self.forward(x).pop().unwrap();
        logits
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap()
            })
            .collect()
    }

    pub fn accuracy(&self, x: &Array2<f64>, y: &[usize]) -> f64 {
        let predictions = self.predict(x);
        let correct = predictions.iter().zip(y).filter(|(p, t)| p == t).count();
        correct as f64 / y.len() as f64
    }

    /// Mean softmax cross-entropy and dense gradients for one batch.
    pub fn loss_and_grads(
        &self,
        x: &Array2<f64>,
        y: &[usize],
    ) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let batch = x.nrows() as f64;
        let activations = self.forward(x);
        let logits = &activations[self.layers.len()];

        // Stable softmax and cross-entropy.
        let mut probs = logits.clone();
        let mut loss = 0.0;
        for (s, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
            loss -= row[y[s]].max(1e-300).ln();
        }
        loss /= batch;

        // delta at the output: (p - onehot) / batch.
        let mut delta = probs;
        for (s, &label) in y.iter().enumerate() {
            delta[[s, label]] -= 1.0;
        }
        delta.mapv_inplace(|v| v / batch);

        let mut w_grads = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut b_grads = vec![Array1::zeros(0); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            w_grads[l] = activations[l].t().dot(&delta);
            b_grads[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weights.t());
                // ReLU derivative from the post-activation values.
                for (pos, v) in upstream.indexed_iter_mut() {
                    if activations[l][pos] <= 0.0 {
                        *v = 0.0;
                    }
                }
                delta = upstream;
            }
        }
        (loss, w_grads, b_grads)
    }

    /// Masked SGD step with momentum and decoupled-style weight decay on
    /// active links.
    pub fn sgd_step(
        &mut self,
        w_grads: &[Array2<f64>],
        b_grads: &[Array1<f64>],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        for l in 0..self.layers.len() {
            let layer = &mut self.layers[l];
            let links: Vec<(usize, usize)> = layer.mask.links().collect();
            for (i, j) in links {
                let g = w_grads[l][[i, j]] + weight_decay * layer.weights[[i, j]];
                let v = momentum * self.w_vel[l][[i, j]] + g;
                self.w_vel[l][[i, j]] = v;
                layer.weights[[i, j]] -= lr * v;
            }
            for j in 0..self.biases[l].len() {
                let v = momentum * self.b_vel[l][j] + b_grads[l][j];
                self.b_vel[l][j] = v;
                self.biases[l][j] -= lr * v;
            }
        }
    }

    /// One topology-evolution event over all evolvable layers: removal,
    /// chain percolation, regrowth, metrics. Dense gradients are only
    /// consulted for gradient-based regrowth.
    pub fn evolve_once(
        &mut self,
        cfg: &EvolutionConfig,
        density_target: f64,
        dense_grads: Option<&[Array2<f64>]>,
        step: usize,
        training_fraction: f64,
    ) -> Result<Vec<StepReport>> {
        let layer_count = self.layers.len();
        let mut rngs: Vec<ChaCha8Rng> =
            (0..layer_count).map(|l| evolution::layer_step_rng(cfg.seed, l, step)).collect();
        let mut removed: Vec<LinkSet> = vec![LinkSet::new(); layer_count];

        for l in 0..layer_count {
            if self.evolvable[l] {
                removed[l] = evolution::remove_phase(
                    &mut self.layers[l],
                    cfg,
                    density_target,
                    training_fraction,
                    &mut rngs[l],
                )?;
            }
        }

        if cfg.percolate {
            let (percolated, report) = percolate(&self.chain());
            for l in 0..layer_count {
                let new_mask = &percolated.masks()[l];
                let layer = &mut self.layers[l];
                let stripped: Vec<(usize, usize)> =
                    layer.mask.links().filter(|&(i, j)| !new_mask.get(i, j)).collect();
                for (i, j) in stripped {
                    layer.historical[[i, j]] = layer.weights[[i, j]];
                    layer.weights[[i, j]] = 0.0;
                    removed[l].insert((i, j));
                }
                layer.mask = new_mask.clone();
                layer.inactive_rows.extend(report.removed_input_neurons[l].iter().copied());
                layer.inactive_cols.extend(report.removed_output_neurons[l].iter().copied());
            }
        }

        let mut reports = Vec::new();
        for l in 0..layer_count {
            if !self.evolvable[l] {
                continue;
            }
            let grads = dense_grads.map(|g| &g[l]);
            let (regrown, shortfall) = evolution::regrow_phase(
                &mut self.layers[l],
                cfg,
                density_target,
                grads,
                &mut rngs[l],
            )?;
            if cfg.clear_momentum {
                for &(i, j) in removed[l].iter().chain(regrown.iter()) {
                    self.w_vel[l][[i, j]] = 0.0;
                }
            }
            reports.push(evolution::finish_step(
                &mut self.layers[l],
                l,
                step,
                std::mem::take(&mut removed[l]),
                regrown,
                shortfall,
            )?);
        }
        Ok(reports)
    }

    /// Fraction of hidden neurons never stranded by percolation. Exactly
    /// 1.0 when percolation is disabled or never removed anything.
    pub fn anp(&self) -> f64 {
        let boundaries = self.layers.len().saturating_sub(1);
        if boundaries == 0 {
            return 1.0;
        }
        let mut total = 0usize;
        let mut dead = 0usize;
        for b in 0..boundaries {
            total += self.layers[b].cols();
            let mut stranded = self.layers[b].inactive_cols.clone();
            stranded.extend(self.layers[b + 1].inactive_rows.iter().copied());
            dead += stranded.len();
        }
        (total - dead) as f64 / total as f64
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epoch_losses: Vec<f64>,
    pub reports: Vec<StepReport>,
    pub anp: f64,
    /// Cumulative ITOP rate per evolvable layer at the end of training.
    pub itop_rates: Vec<f64>,
    /// Fraction of evolution reports whose ELM ratio reached the
    /// configured threshold.
    pub elm_trap_fraction: f64,
}

/// Runs the full training loop: minibatch SGD with linear learning-rate
/// decay, plus topology evolution every `update_interval` steps when an
/// evolution config is present.
pub fn train(model: &mut SparseMlp, dataset: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let n = dataset.train_x.nrows();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let needs_grads = cfg
        .evolution
        .as_ref()
        .is_some_and(|e| e.regrowth.kind == RegrowthKind::Gradient);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5353_4846);
    let mut order: Vec<usize> = (0..n).collect();
    let mut reports = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = dataset.train_x.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&s| dataset.train_y[s]).collect();
            let (loss, w_grads, b_grads) = model.loss_and_grads(&x, &y);
            epoch_loss += loss * chunk.len() as f64;
            let lr = cfg.learning_rate * (1.0 - step as f64 / total_steps as f64);
            model.sgd_step(&w_grads, &b_grads, lr, cfg.momentum, cfg.weight_decay);

            step += 1;
            if let Some(evo) = &cfg.evolution {
                if step % evo.update_interval == 0 && step < total_steps {
                    let density = cfg.schedule.density_at(step as u64);
                    let fraction = step as f64 / total_steps as f64;
                    let grads = needs_grads.then_some(w_grads.as_slice());
                    reports.extend(model.evolve_once(evo, density, grads, step, fraction)?);
                }
            }
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    let elm_trap_fraction = if reports.is_empty() {
        0.0
    } else {
        let threshold = cfg.evolution.as_ref().map_or(1.0, |e| e.elm_threshold);
        let high = reports
            .iter()
            .filter(|r| r.elm_ratio.is_some_and(|v| v >= threshold))
            .count();
        high as f64 / reports.len() as f64
    };
    let itop_rates = model
        .layers
        .iter()
        .zip(&model.evolvable)
        .filter(|(_, &e)| e)
        .map(|(l, _)| l.ever_active.rate())
        .collect();

    Ok(RunRecord {
        train_accuracy: model.accuracy(&dataset.train_x, &dataset.train_y),
        test_accuracy: model.accuracy(&dataset.test_x, &dataset.test_y),
        epoch_losses,
        reports,
        anp: model.anp(),
        itop_rates,
        elm_trap_fraction,
    })
}
