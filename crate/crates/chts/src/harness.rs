//! Experiment harness: TOML experiment configs, method presets, multi-seed
//! runs with mean and standard-error summaries, and metrics CSV output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{
    EvolutionConfig, RegrowthKind, RegrowthRule, RemovalCriterion, RemovalRule,
};
use crate::netgen::{self, BrfParams, BsfParams, BswParams, CstiParams, DegreeMode};
use crate::schedule::DensitySchedule;
use crate::topology::BipartiteMask;
use crate::trainer::data::{self, Dataset};
use crate::trainer::{self, MlpSpec, RunRecord, SparseMlp, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    Synthetic {
        train_samples: usize,
        test_samples: usize,
        classes: usize,
        seed: u64,
        /// Blob center radius relative to unit noise.
        #[serde(default = "default_radius")]
        radius: f64,
        /// When set, generate image-like data where each class activates
        /// only this many dimensions and the rest stay at zero.
        #[serde(default)]
        informative: Option<usize>,
    },
    Idx {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum TopologyConfig {
    Er,
    Bsw { beta: f64 },
    Brf { r: f64 },
    Bsf { equal_partition: bool, resort: bool },
    Csti,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::Er
    }
}

/// Full description of one experiment, loadable from TOML. A preset fills
/// in the method (schedule plus evolution rule); explicit `evolution` or
/// `schedule` tables in the file win over the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    /// Layer widths, input to output. The first width must match the
    /// dataset's feature count.
    pub dims: Vec<usize>,
    /// Target sparsity of the sparse layers.
    pub sparsity: f64,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub update_interval: usize,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub topology: TopologyConfig,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub schedule: Option<DensitySchedule>,
    #[serde(default)]
    pub evolution: Option<EvolutionConfig>,
    /// Keep the final classification layer dense and non-evolving.
    #[serde(default = "default_true")]
    pub dense_final: bool,
}

fn default_true() -> bool {
    true
}

fn default_radius() -> f64 {
    3.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidConfig("need at least input and output widths".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed".into()));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidConfig(format!("sparsity {} out of [0,1)", self.sparsity)));
        }
        if self.preset.is_none() && (self.schedule.is_none() || self.evolution.is_none()) {
            // A schedule-only config (no evolution) is a plain dense or
            // static-sparse run; that is allowed.
            if self.schedule.is_none() {
                return Err(Error::InvalidConfig(
                    "config needs a preset or an explicit schedule".into(),
                ));
            }
        }
        Ok(())
    }

    fn total_steps(&self, train_samples: usize) -> usize {
        self.epochs * train_samples.div_ceil(self.batch_size)
    }
}

/// Schedule plus evolution rule of one method preset, resolved for a
/// concrete run length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub schedule: DensitySchedule,
    pub evolution: Option<EvolutionConfig>,
}

/// Expands a named method preset:
/// - `chts`: soft magnitude removal, soft CH2-L3n regrowth, percolation,
///   constant sparsity
/// - `chtss`: CHTs with a sigmoid sparsity decay over the first half of
///   training
/// - `set`: deterministic magnitude removal, uniform random regrowth
/// - `rigl`: deterministic magnitude removal, top-gradient regrowth
/// - `gmp`: cubic gradual magnitude pruning, no regrowth
pub fn expand_preset(
    name: &str,
    sparsity: f64,
    total_steps: u64,
    update_interval: usize,
    seed: u64,
) -> Result<MethodSpec> {
    let soft_removal = RemovalRule {
        criterion: RemovalCriterion::WeightMagnitude,
        delta_start: 0.5,
        delta_end: 0.75,
        soft: true,
    };
    let hard_removal = RemovalRule { soft: false, delta_start: 0.5, delta_end: 0.5, ..soft_removal };
    let evo = |removal: RemovalRule, kind: RegrowthKind, percolate: bool, zeta: f64| {
        Some(EvolutionConfig {
            zeta,
            update_interval,
            removal,
            regrowth: RegrowthRule { kind, epsilon_floor: 1e-4 },
            seed,
            elm_threshold: 0.9,
            percolate,
            clear_momentum: true,
        })
    };
    let decay_end = (total_steps / 2).max(1);
    let dt = update_interval as u64;
    match name.to_ascii_lowercase().as_str() {
        "chts" => Ok(MethodSpec {
            schedule: DensitySchedule::constant(sparsity),
            evolution: evo(soft_removal, RegrowthKind::Ch2L3nSoft, true, 0.3),
        }),
        "chtss" => Ok(MethodSpec {
            schedule: DensitySchedule::sigmoid(sparsity * 0.5, sparsity, 0, decay_end, dt),
            evolution: evo(soft_removal, RegrowthKind::Ch2L3nSoft, true, 0.3),
        }),
        "set" => Ok(MethodSpec {
            schedule: DensitySchedule::constant(sparsity),
            evolution: evo(hard_removal, RegrowthKind::Random, false, 0.3),
        }),
        "rigl" => Ok(MethodSpec {
            schedule: DensitySchedule::constant(sparsity),
            evolution: evo(hard_removal, RegrowthKind::Gradient, false, 0.3),
        }),
        "gmp" => Ok(MethodSpec {
            schedule: DensitySchedule::cubic(0.0, sparsity, 0, decay_end, dt),
            evolution: evo(hard_removal, RegrowthKind::None, false, 0.0),
        }),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// The experiment with preset expansion applied and run length resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedExperiment {
    pub config: ExperimentConfig,
    pub method: MethodSpec,
    pub total_steps: usize,
}

pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedExperiment> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    resolve_with_samples(config, dataset.train_x.nrows())
}

fn resolve_with_samples(config: &ExperimentConfig, samples: usize) -> Result<ResolvedExperiment> {
    let total_steps = config.total_steps(samples);
    let mut method = match &config.preset {
        Some(name) => expand_preset(
            name,
            config.sparsity,
            total_steps as u64,
            config.update_interval,
            config.seeds[0],
        )?,
        None => MethodSpec {
            schedule: config
                .schedule
                .unwrap_or_else(|| DensitySchedule::constant(config.sparsity)),
            evolution: None,
        },
    };
    if let Some(schedule) = config.schedule {
        method.schedule = schedule;
    }
    if let Some(evolution) = config.evolution {
        method.evolution = Some(evolution);
    }
    method.schedule.validate()?;
    if let Some(evo) = &method.evolution {
        evo.validate()?;
    }
    Ok(ResolvedExperiment { config: config.clone(), method, total_steps })
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let dataset = match &config.dataset {
        DatasetConfig::Synthetic {
            train_samples,
            test_samples,
            classes,
            seed,
            radius,
            informative,
        } => match informative {
            Some(k) => data::synthetic_image_blobs(
                *train_samples,
                *test_samples,
                config.dims[0],
                *classes,
                *k,
                *seed,
                *radius,
            ),
            None => data::synthetic_blobs_with_radius(
                *train_samples,
                *test_samples,
                config.dims[0],
                *classes,
                *seed,
                *radius,
            ),
        },
        DatasetConfig::Idx { dir } => data::load_idx_dir(dir)?,
    };
    if dataset.feature_dim() != config.dims[0] {
        return Err(Error::DimensionMismatch {
            expected: format!("{} input features", config.dims[0]),
            got: format!("{}", dataset.feature_dim()),
        });
    }
    if *config.dims.last().unwrap() < dataset.classes {
        return Err(Error::InvalidConfig(format!(
            "output width {} smaller than {} classes",
            config.dims.last().unwrap(),
            dataset.classes
        )));
    }
    Ok(dataset)
}

/// Builds the initial masks for one seed: sparse layers from the chosen
/// generator, plus a full non-evolving final layer when `dense_final`.
pub fn build_masks(
    config: &ExperimentConfig,
    dataset: &Dataset,
    density: f64,
    seed: u64,
) -> Result<(Vec<BipartiteMask>, Vec<bool>)> {
    let spec = MlpSpec::new(config.dims.clone())?;
    let layer_count = spec.layer_count();
    let mut masks = Vec::with_capacity(layer_count);
    let mut evolvable = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let (rows, cols) = (config.dims[l], config.dims[l + 1]);
        let dense = config.dense_final && l == layer_count - 1;
        if dense {
            masks.push(BipartiteMask::full(rows, cols));
            evolvable.push(false);
            continue;
        }
        let layer_seed = seed.wrapping_add(1000 * l as u64);
        let mask = match config.topology {
            TopologyConfig::Er => netgen::gen_er(rows, cols, density, layer_seed)?,
            TopologyConfig::Bsw { beta } => netgen::gen_bsw(
                rows,
                cols,
                &BswParams { beta, target_density: density, seed: layer_seed },
            )?,
            TopologyConfig::Brf { r } => netgen::gen_brf(
                rows,
                cols,
                &BrfParams {
                    r,
                    degree_mode: DegreeMode::Uniform,
                    target_density: density,
                    seed: layer_seed,
                    literal_scores: false,
                },
            )?,
            TopologyConfig::Bsf { equal_partition, .. } => netgen::gen_bsf(
                rows,
                cols,
                &BsfParams {
                    target_density: density,
                    equal_partition,
                    resort: false,
                    seed: layer_seed,
                },
            )?,
            TopologyConfig::Csti => {
                if l == 0 {
                    netgen::gen_csti(
                        rows,
                        cols,
                        &CstiParams {
                            calibration: dataset.train_x.clone(),
                            target_density: density,
                            seed: layer_seed,
                        },
                    )?
                } else {
                    netgen::gen_er(rows, cols, density, layer_seed)?
                }
            }
        };
        masks.push(mask);
        evolvable.push(true);
    }
    if let TopologyConfig::Bsf { resort: true, .. } = config.topology {
        let chain = crate::topology::MaskChain::from_masks(masks)?;
        masks = netgen::resort_chain(&chain)?.masks().to_vec();
    }
    Ok((masks, evolvable))
}

/// Mean and standard error over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub stderr: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Aggregate { mean, stderr }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub resolved: ResolvedExperiment,
    pub records: Vec<RunRecord>,
    pub test_accuracy: Aggregate,
    pub train_accuracy: Aggregate,
    pub anp: Aggregate,
    pub elm_trap_fraction: Aggregate,
    pub itop_rate: Aggregate,
}

/// Runs the experiment over all seeds; when `out_dir` is given, writes a
/// per-seed metrics CSV, the resolved config echo, and a summary table.
pub fn run_experiment(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentSummary> {
    let dataset = load_dataset(config)?;
    let resolved = resolve_with_samples(config, dataset.train_x.nrows())?;
    let spec = MlpSpec::new(config.dims.clone())?;

    let mut records = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let initial_density = resolved.method.schedule.density_at(0);
        let (masks, evolvable) = build_masks(config, &dataset, initial_density, seed)?;
        let mut model = SparseMlp::new(&spec, masks, evolvable, seed)?;
        let evolution = resolved.method.evolution.map(|mut evo| {
            evo.seed = seed;
            evo
        });
        let train_cfg = TrainConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            seed,
            schedule: resolved.method.schedule,
            evolution,
        };
        let record = trainer::train(&mut model, &dataset, &train_cfg)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let mut csv = String::from(crate::evolution::StepReport::CSV_HEADER);
            csv.push('\n');
            for report in &record.reports {
                csv.push_str(&report.csv_line());
                csv.push('\n');
            }
            std::fs::write(dir.join(format!("metrics_seed{seed}.csv")), csv)?;
        }
        records.push(record);
    }

    let summary = ExperimentSummary {
        test_accuracy: aggregate(&records.iter().map(|r| r.test_accuracy).collect::<Vec<_>>()),
        train_accuracy: aggregate(&records.iter().map(|r| r.train_accuracy).collect::<Vec<_>>()),
        anp: aggregate(&records.iter().map(|r| r.anp).collect::<Vec<_>>()),
        elm_trap_fraction: aggregate(
            &records.iter().map(|r| r.elm_trap_fraction).collect::<Vec<_>>(),
        ),
        itop_rate: aggregate(
            &records
                .iter()
                .map(|r| {
                    if r.itop_rates.is_empty() {
                        0.0
                    } else {
                        r.itop_rates.iter().sum::<f64>() / r.itop_rates.len() as f64
                    }
                })
                .collect::<Vec<_>>(),
        ),
        resolved,
        records,
    };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("resolved_config.toml"), summary.resolved.config.to_toml())?;
        std::fs::write(dir.join("summary.txt"), summary.render())?;
    }
    Ok(summary)
}

impl ExperimentSummary {
    /// Human-readable run summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let c = &self.resolved.config;
        let _ = writeln!(out, "experiment: {}", c.name);
        let _ = writeln!(out, "dims: {:?}  sparsity: {}  seeds: {:?}", c.dims, c.sparsity, c.seeds);
        let _ = writeln!(out, "total steps: {}", self.resolved.total_steps);
        let fmt = |a: &Aggregate| format!("{:.4} +/- {:.4}", a.mean, a.stderr);
        let _ = writeln!(out, "test accuracy:  {}", fmt(&self.test_accuracy));
        let _ = writeln!(out, "train accuracy: {}", fmt(&self.train_accuracy));
        let _ = writeln!(out, "anp:            {}", fmt(&self.anp));
        let _ = writeln!(out, "elm trap frac:  {}", fmt(&self.elm_trap_fraction));
        let _ = writeln!(out, "itop rate:      {}", fmt(&self.itop_rate));
        out
    }
}

/// Explains the resolved experiment without running it: the method, the
/// schedule endpoints, and per-layer link budgets.
pub fn explain(config: &ExperimentConfig) -> Result<String> {
    let dataset = load_dataset(config)?;
    let resolved = resolve_with_samples(config, dataset.train_x.nrows())?;
    let mut out = String::new();
    let _ = writeln!(out, "experiment: {}", config.name);
    if let Some(preset) = &config.preset {
        let _ = writeln!(out, "preset: {preset}");
    }
    let s = &resolved.method.schedule;
    let _ = writeln!(
        out,
        "schedule: {:?}, sparsity {} -> {} over steps {}..{} (dt {})",
        s.kind, s.s_initial, s.s_final, s.t_start, s.t_end, s.dt
    );
    match &resolved.method.evolution {
        Some(e) => {
            let _ = writeln!(
                out,
                "evolution: every {} steps, zeta {}, removal {:?} (soft: {}), regrowth {:?}, percolation {}",
                e.update_interval, e.zeta, e.removal.criterion, e.removal.soft, e.regrowth.kind,
                e.percolate
            );
        }
        None => {
            let _ = writeln!(out, "evolution: none (static topology)");
        }
    }
    let density = 1.0 - config.sparsity;
    for l in 0..config.dims.len() - 1 {
        let (rows, cols) = (config.dims[l], config.dims[l + 1]);
        let dense = config.dense_final && l == config.dims.len() - 2;
        let links = if dense {
            rows * cols
        } else {
            netgen::link_budget(rows, cols, density)?
        };
        let _ = writeln!(
            out,
            "layer {l}: {rows}x{cols}, {} links{}",
            links,
            if dense { " (dense)" } else { "" }
        );
    }
    let _ = writeln!(
        out,
        "dataset: {} train / {} test samples, {} classes",
        dataset.train_x.nrows(),
        dataset.test_x.nrows(),
        dataset.classes
    );
    let _ = writeln!(out, "steps: {}", resolved.total_steps);
    Ok(out)
}
