//! The remove-percolate-regrow engine: soft removal scoring, multinomial
//! soft sampling, CH-based and baseline regrowth, historical-weight reuse,
//! and per-step evolution metrics.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkpred;
use crate::sampling::{top_k_indices, weighted_indices_without_replacement};
use crate::topology::{overlap_ratio, ActivationField, BipartiteMask, LinkSet};

/// Removal criterion blend: alpha = 1 is weight magnitude, alpha = 0 is
/// relative importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalCriterion {
    WeightMagnitude,
    RelativeImportance,
}

impl RemovalCriterion {
    fn alpha(self) -> f64 {
        match self {
            RemovalCriterion::WeightMagnitude => 1.0,
            RemovalCriterion::RelativeImportance => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemovalRule {
    pub criterion: RemovalCriterion,
    /// Sampling softness schedule, interpolated linearly over training.
    pub delta_start: f64,
    pub delta_end: f64,
    /// Soft keep-sampling vs deterministic top-score retention.
    pub soft: bool,
}

impl RemovalRule {
    pub fn validate(&self) -> Result<()> {
        for d in [self.delta_start, self.delta_end] {
            if !(0.5..1.0).contains(&d) {
                return Err(Error::InvalidConfig(format!("delta must be in [0.5, 1), got {d}")));
            }
        }
        Ok(())
    }

    pub fn delta_at(&self, training_fraction: f64) -> f64 {
        let f = training_fraction.clamp(0.0, 1.0);
        self.delta_start + (self.delta_end - self.delta_start) * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegrowthKind {
    Ch2L3nSoft,
    Ch2L3nDeterministic,
    Ch3L3pSoft,
    Random,
    Gradient,
    /// No regrowth at all (magnitude-pruning style runs).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegrowthRule {
    pub kind: RegrowthKind,
    /// Relative floor added to every grow candidate so zero-score links
    /// stay reachable; scaled by max(score_max, 1).
    pub epsilon_floor: f64,
}

impl RegrowthRule {
    pub fn validate(&self) -> Result<()> {
        let soft = matches!(
            self.kind,
            RegrowthKind::Ch2L3nSoft | RegrowthKind::Ch3L3pSoft | RegrowthKind::Random
        );
        if soft && self.epsilon_floor <= 0.0 {
            return Err(Error::InvalidConfig(
                "epsilon_floor must be positive for soft regrowth".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    /// Fraction of existing links removed per step.
    pub zeta: f64,
    /// Steps between evolution events.
    pub update_interval: usize,
    pub removal: RemovalRule,
    pub regrowth: RegrowthRule,
    pub seed: u64,
    /// Overlap ratio above which a step counts as topologically stuck.
    pub elm_threshold: f64,
    /// Exclude percolation-stranded neurons from regrowth.
    pub percolate: bool,
    /// Clear optimizer momentum of removed links.
    pub clear_momentum: bool,
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::InvalidConfig(format!("zeta must be in [0,1), got {}", self.zeta)));
        }
        if self.update_interval == 0 {
            return Err(Error::InvalidConfig("update_interval must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.elm_threshold) || self.elm_threshold == 0.0 {
            return Err(Error::InvalidConfig("elm_threshold must be in (0,1]".into()));
        }
        self.removal.validate()?;
        self.regrowth.validate()
    }
}

/// Weights, mask, historical weights, and evolution bookkeeping of one
/// sparse layer.
#[derive(Debug, Clone)]
pub struct LayerState {
    pub weights: Array2<f64>,
    pub mask: BipartiteMask,
    /// Last known weight per position, recorded at removal time.
    pub historical: Array2<f64>,
    pub ever_active: ActivationField,
    /// Neurons stranded by percolation; never regrown onto.
    pub inactive_rows: BTreeSet<usize>,
    pub inactive_cols: BTreeSet<usize>,
}

impl LayerState {
    pub fn new(weights: Array2<f64>, mask: BipartiteMask) -> Result<Self> {
        if weights.nrows() != mask.rows() || weights.ncols() != mask.cols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", mask.rows(), mask.cols()),
                got: format!("{}x{}", weights.nrows(), weights.ncols()),
            });
        }
        let mut weights = weights;
        apply_mask(&mut weights, &mask)?;
        let ever_active = {
            let mut field = ActivationField::new(mask.rows(), mask.cols());
            field.update(&mask)?;
            field
        };
        Ok(Self {
            historical: Array2::zeros(weights.raw_dim()),
            ever_active,
            inactive_rows: BTreeSet::new(),
            inactive_cols: BTreeSet::new(),
            weights,
            mask,
        })
    }

    pub fn rows(&self) -> usize {
        self.mask.rows()
    }

    pub fn cols(&self) -> usize {
        self.mask.cols()
    }

    fn anp(&self) -> f64 {
        let total = self.rows() + self.cols();
        (total - self.inactive_rows.len() - self.inactive_cols.len()) as f64 / total as f64
    }
}

/// Zeroes all off-mask weights.
pub fn apply_mask(weights: &mut Array2<f64>, mask: &BipartiteMask) -> Result<()> {
    if weights.nrows() != mask.rows() || weights.ncols() != mask.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", mask.rows(), mask.cols()),
            got: format!("{}x{}", weights.nrows(), weights.ncols()),
        });
    }
    for ((i, j), w) in weights.indexed_iter_mut() {
        if !mask.get(i, j) {
            *w = 0.0;
        }
    }
    Ok(())
}

/// Link-removal importance scores on existing links:
/// S_ij = (|W_ij|/2 / (a + (1-a) Σ_k|W_ik|) + |W_ij|/2 / (a + (1-a) Σ_k|W_kj|))^(d/(1-d)).
pub fn removal_scores(
    weights: &Array2<f64>,
    mask: &BipartiteMask,
    rule: &RemovalRule,
    training_fraction: f64,
) -> Result<Array2<f64>> {
    if weights.nrows() != mask.rows() || weights.ncols() != mask.cols() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", mask.rows(), mask.cols()),
            got: format!("{}x{}", weights.nrows(), weights.ncols()),
        });
    }
    let alpha = rule.criterion.alpha();
    let delta = rule.delta_at(training_fraction);
    let exponent = delta / (1.0 - delta);
    let row_sums: Vec<f64> =
        (0..weights.nrows()).map(|i| weights.row(i).mapv(f64::abs).sum()).collect();
    let col_sums: Vec<f64> =
        (0..weights.ncols()).map(|j| weights.column(j).mapv(f64::abs).sum()).collect();
    let mut scores = Array2::zeros(weights.raw_dim());
    for (i, j) in mask.links() {
        let w = weights[[i, j]].abs();
        if w == 0.0 {
            continue;
        }
        let half = w / 2.0;
        let base = half / (alpha + (1.0 - alpha) * row_sums[i])
            + half / (alpha + (1.0 - alpha) * col_sums[j]);
        scores[[i, j]] = base.powf(exponent);
    }
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMode {
    /// Sample among existing links; the selected set is retained.
    Keep,
    /// Sample among the given non-link candidates.
    Grow,
}

/// Samples `count` distinct positions from `candidates` with probability
/// proportional to their scores; grow mode floors every candidate so
/// zero-score links remain reachable. With `soft` false, takes the exact
/// top-`count` with index-order tie-breaking instead.
pub fn soft_select(
    scores: &Array2<f64>,
    candidates: &[(usize, usize)],
    count: usize,
    mode: SelectionMode,
    soft: bool,
    epsilon_floor: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LinkSet> {
    if count > candidates.len() {
        return Err(Error::NotEnoughCandidates { requested: count, available: candidates.len() });
    }
    let mut weights: Vec<f64> = candidates.iter().map(|&(i, j)| scores[[i, j]]).collect();
    if mode == SelectionMode::Grow && soft {
        let max = weights.iter().cloned().fold(0.0f64, f64::max);
        let floor = epsilon_floor * max.max(1.0);
        for w in &mut weights {
            *w += floor;
        }
    }
    let picked = if soft {
        weighted_indices_without_replacement(&weights, count, rng)?
    } else {
        top_k_indices(&weights, count)?
    };
    Ok(picked.into_iter().map(|idx| candidates[idx]).collect())
}

/// Per-step evolution outcome of one layer.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: usize,
    pub layer: usize,
    pub density: f64,
    /// None when nothing was regrown.
    pub elm_ratio: Option<f64>,
    pub itop_rate: f64,
    pub anp: f64,
    pub removed: LinkSet,
    pub regrown: LinkSet,
    pub shortfall: usize,
}

impl StepReport {
    pub const CSV_HEADER: &'static str =
        "step,layer,density,elm_ratio,itop_rate,anp,removed,regrown,shortfall";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{},{:.6},{:.6},{},{},{}",
            self.step,
            self.layer,
            self.density,
            self.elm_ratio.map_or(String::from(""), |r| format!("{r:.6}")),
            self.itop_rate,
            self.anp,
            self.removed.len(),
            self.regrown.len(),
            self.shortfall
        )
    }
}

/// Counter-based per-(seed, layer, step) stream so results do not depend
/// on scheduling.
pub fn layer_step_rng(seed: u64, layer: usize, step: usize) -> ChaCha8Rng {
    let mut x = seed
        ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (step as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

/// Removal phase: prunes down to the density target, then removes the
/// zeta fraction via keep-sampling. Removed links record their weights
/// into the historical matrix. Returns the removed set.
pub fn remove_phase(
    state: &mut LayerState,
    config: &EvolutionConfig,
    density_target: f64,
    training_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LinkSet> {
    let cells = state.rows() * state.cols();
    let budget_target = (density_target * cells as f64).round() as usize;
    let mut removed = LinkSet::new();

    // Schedule-driven pruning first, then the zeta-fraction removal.
    let current = state.mask.link_count();
    if current > budget_target {
        let keep = budget_target;
        remove_complement(state, config, keep, training_fraction, rng, &mut removed)?;
    }
    let current = state.mask.link_count();
    let zeta_removals = (config.zeta * current as f64).round() as usize;
    if zeta_removals > 0 && current > 0 {
        let keep = current - zeta_removals;
        remove_complement(state, config, keep, training_fraction, rng, &mut removed)?;
    }
    Ok(removed)
}

fn remove_complement(
    state: &mut LayerState,
    config: &EvolutionConfig,
    keep: usize,
    training_fraction: f64,
    rng: &mut ChaCha8Rng,
    removed: &mut LinkSet,
) -> Result<()> {
    let scores = removal_scores(&state.weights, &state.mask, &config.removal, training_fraction)?;
    let links: Vec<(usize, usize)> = state.mask.links().collect();
    // Zero-score links (zero weight) are unreachable by keep-sampling;
    // when they outnumber the removal quota, keep every positive-score
    // link and pad with zero-score links in index order.
    let positives = links.iter().filter(|&&(i, j)| scores[[i, j]] > 0.0).count();
    let kept = if config.removal.soft && keep > positives {
        let mut kept: LinkSet = links.iter().filter(|&&(i, j)| scores[[i, j]] > 0.0).copied().collect();
        kept.extend(
            links.iter().filter(|&&(i, j)| scores[[i, j]] == 0.0).take(keep - positives),
        );
        kept
    } else {
        soft_select(
            &scores,
            &links,
            keep,
            SelectionMode::Keep,
            config.removal.soft,
            0.0,
            rng,
        )?
    };
    for (i, j) in links {
        if !kept.contains(&(i, j)) {
            state.historical[[i, j]] = state.weights[[i, j]];
            state.weights[[i, j]] = 0.0;
            state.mask.set(i, j, false);
            removed.insert((i, j));
        }
    }
    Ok(())
}

/// Marks neurons with no remaining links as inactive. Inactive neurons
/// are excluded from regrowth from this step on.
pub fn mark_stranded_neurons(state: &mut LayerState) {
    for i in 0..state.rows() {
        if state.mask.row_degree(i) == 0 {
            state.inactive_rows.insert(i);
        }
    }
    for j in 0..state.cols() {
        if state.mask.col_degree(j) == 0 {
            state.inactive_cols.insert(j);
        }
    }
}

/// Regrowth phase: scores non-link candidates by the configured rule and
/// grows until the budget target, initializing new links from historical
/// weights. Returns (regrown set, shortfall).
pub fn regrow_phase(
    state: &mut LayerState,
    config: &EvolutionConfig,
    density_target: f64,
    dense_grads: Option<&Array2<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<(LinkSet, usize)> {
    let cells = state.rows() * state.cols();
    let budget_target = (density_target * cells as f64).round() as usize;
    let current = state.mask.link_count();
    if budget_target <= current || config.regrowth.kind == RegrowthKind::None {
        return Ok((LinkSet::new(), 0));
    }
    let need = budget_target - current;

    let candidates: Vec<(usize, usize)> = state
        .mask
        .non_links()
        .filter(|&(i, j)| {
            !config.percolate
                || (!state.inactive_rows.contains(&i) && !state.inactive_cols.contains(&j))
        })
        .collect();
    let grown_target = need.min(candidates.len());
    let shortfall = need - grown_target;

    let (scores, soft) = match config.regrowth.kind {
        RegrowthKind::Ch2L3nSoft => (linkpred::ch2_l3n(&state.mask)?.scores, true),
        RegrowthKind::Ch2L3nDeterministic => (linkpred::ch2_l3n(&state.mask)?.scores, false),
        RegrowthKind::Ch3L3pSoft => (linkpred::ch3_l3p(&state.mask)?.scores, true),
        RegrowthKind::Random => (Array2::ones((state.rows(), state.cols())), true),
        RegrowthKind::Gradient => {
            let grads = dense_grads.ok_or_else(|| {
                Error::InvalidConfig("gradient regrowth needs dense gradients".into())
            })?;
            (grads.mapv(f64::abs), false)
        }
        RegrowthKind::None => unreachable!(),
    };
    let regrown = soft_select(
        &scores,
        &candidates,
        grown_target,
        SelectionMode::Grow,
        soft,
        config.regrowth.epsilon_floor,
        rng,
    )?;
    for &(i, j) in &regrown {
        state.mask.set(i, j, true);
        state.weights[[i, j]] = state.historical[[i, j]];
    }
    Ok((regrown, shortfall))
}

/// One full evolution step of a standalone layer: prune to the density
/// target, remove the zeta fraction, percolate, regrow, update metrics.
pub fn evolve_step(
    state: &mut LayerState,
    config: &EvolutionConfig,
    density_target: f64,
    dense_grads: Option<&Array2<f64>>,
    layer: usize,
    step: usize,
    training_fraction: f64,
) -> Result<StepReport> {
    config.validate()?;
    let mut rng = layer_step_rng(config.seed, layer, step);
    let removed = remove_phase(state, config, density_target, training_fraction, &mut rng)?;
    if config.percolate {
        mark_stranded_neurons(state);
    }
    let (regrown, shortfall) =
        regrow_phase(state, config, density_target, dense_grads, &mut rng)?;
    finish_step(state, layer, step, removed, regrown, shortfall)
}

/// Metrics bookkeeping shared by `evolve_step` and the trainer's
/// split-phase path.
pub fn finish_step(
    state: &mut LayerState,
    layer: usize,
    step: usize,
    removed: LinkSet,
    regrown: LinkSet,
    shortfall: usize,
) -> Result<StepReport> {
    let elm_ratio = if regrown.is_empty() {
        None
    } else {
        Some(overlap_ratio(&removed, &regrown)?)
    };
    let itop_rate = state.ever_active.update(&state.mask)?;
    Ok(StepReport {
        step,
        layer,
        density: state.mask.density(),
        elm_ratio,
        itop_rate,
        anp: state.anp(),
        removed,
        regrown,
        shortfall,
    })
}
