use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use chts::harness::{self, ExperimentConfig};
use chts::linkpred::{self, ChVariant};
use chts::netgen::{self, BrfParams, BsfParams, BswParams, CstiParams, DegreeMode};
use chts::schedule::{DensitySchedule, ScheduleKind};
use chts::topology::{percolate, BipartiteMask, MaskChain};

#[derive(Parser)]
#[command(name = "chts", about = "Dynamic sparse training with Cannistraci-Hebb regrowth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Er,
    Bsw,
    Brf,
    Bsf,
    Csti,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    L3n,
    L3p,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cubic,
    Sigmoid,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a TOML config.
    Train {
        /// Experiment config file.
        #[arg(long)]
        config: PathBuf,
        /// Override the method preset from the config.
        #[arg(long)]
        preset: Option<String>,
        /// Override the seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the target sparsity.
        #[arg(long)]
        sparsity: Option<f64>,
        /// Directory for metrics CSVs and the summary.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Describe the resolved experiment instead of running it.
        #[arg(long)]
        explain: bool,
    },
    /// Generate a bipartite sparse topology.
    Gen {
        #[arg(long)]
        generator: GeneratorArg,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// BSW rewiring fraction.
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        /// BRF randomness.
        #[arg(long, default_value_t = 0.5)]
        r: f64,
        /// Calibration CSV (samples x features) for CSTI.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Output mask file; "-" or omitted prints the edge list.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score non-links of a stored mask with a CH link predictor.
    Predict {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum, default_value_t = VariantArg::L3n)]
        variant: VariantArg,
        /// Print only the top-k scored non-links.
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Benchmark the CH predictors on a random layer.
    Bench {
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a density schedule as CSV.
    Schedule {
        #[arg(long, value_enum)]
        kind: ScheduleArg,
        #[arg(long)]
        s_initial: f64,
        #[arg(long)]
        s_final: f64,
        #[arg(long, default_value_t = 0)]
        t_start: u64,
        #[arg(long)]
        t_end: u64,
        #[arg(long, default_value_t = 1)]
        dt: u64,
        /// Print every nth step.
        #[arg(long, default_value_t = 1)]
        stride: u64,
    },
    /// Percolate a stored mask chain and report stranded neurons.
    Percolate {
        /// Chain file as written by the chain binary format.
        #[arg(long)]
        chain: PathBuf,
        /// Where to write the percolated chain.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_calibration(path: &PathBuf) -> anyhow::Result<ndarray::Array2<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    let mut width = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing calibration row '{line}'"))?;
        if *width.get_or_insert(row.len()) != row.len() {
            bail!("ragged calibration rows");
        }
        rows.push(row);
    }
    let width = width.unwrap_or(0);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(ndarray::Array2::from_shape_vec((flat.len() / width.max(1), width), flat)?)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, preset, seed, sparsity, out, explain } => {
            let mut config = ExperimentConfig::from_path(&config)?;
            if let Some(preset) = preset {
                config.preset = Some(preset);
            }
            if let Some(seed) = seed {
                config.seeds = vec![seed];
            }
            if let Some(sparsity) = sparsity {
                config.sparsity = sparsity;
            }
            if explain {
                print!("{}", harness::explain(&config)?);
                return Ok(());
            }
            let summary = harness::run_experiment(&config, out.as_deref())?;
            print!("{}", summary.render());
        }
        Command::Gen { generator, rows, cols, density, seed, beta, r, calibration, out } => {
            let mask = match generator {
                GeneratorArg::Er => netgen::gen_er(rows, cols, density, seed)?,
                GeneratorArg::Bsw => netgen::gen_bsw(
                    rows,
                    cols,
                    &BswParams { beta, target_density: density, seed },
                )?,
                GeneratorArg::Brf => netgen::gen_brf(
                    rows,
                    cols,
                    &BrfParams {
                        r,
                        degree_mode: DegreeMode::Uniform,
                        target_density: density,
                        seed,
                        literal_scores: false,
                    },
                )?,
                GeneratorArg::Bsf => netgen::gen_bsf(
                    rows,
                    cols,
                    &BsfParams {
                        target_density: density,
                        equal_partition: false,
                        resort: false,
                        seed,
                    },
                )?,
                GeneratorArg::Csti => {
                    let path = calibration
                        .context("--calibration is required for the csti generator")?;
                    netgen::gen_csti(
                        rows,
                        cols,
                        &CstiParams {
                            calibration: load_calibration(&path)?,
                            target_density: density,
                            seed,
                        },
                    )?
                }
            };
            match out {
                Some(path) => {
                    let mut file = BufWriter::new(File::create(&path)?);
                    mask.write_binary(&mut file)?;
                    eprintln!(
                        "wrote {}x{} mask with {} links to {}",
                        mask.rows(),
                        mask.cols(),
                        mask.link_count(),
                        path.display()
                    );
                }
                None => print!("{}", mask.to_edge_list()),
            }
        }
        Command::Predict { mask, variant, top } => {
            let mut file = BufReader::new(File::open(&mask)?);
            let mask = BipartiteMask::read_binary(&mut file)?;
            let result = match variant {
                VariantArg::L3n => linkpred::ch2_l3n(&mask)?,
                VariantArg::L3p => linkpred::ch3_l3p(&mask)?,
            };
            let mut scored: Vec<((usize, usize), f64)> =
                mask.non_links().map(|(i, j)| ((i, j), result.scores[[i, j]])).collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            println!("row,col,score");
            for ((i, j), score) in scored.into_iter().take(top) {
                println!("{i},{j},{score:.6}");
            }
        }
        Command::Bench { size, density, seed } => {
            let rows = linkpred::bench_predict(
                &[size],
                &[density],
                &[ChVariant::L3n, ChVariant::L3p],
                seed,
            )?;
            print!("{}", linkpred::bench_csv(&rows));
        }
        Command::Schedule { kind, s_initial, s_final, t_start, t_end, dt, stride } => {
            let schedule = match kind {
                ScheduleArg::Constant => DensitySchedule::constant(s_initial),
                ScheduleArg::Cubic => {
                    DensitySchedule::cubic(s_initial, s_final, t_start, t_end, dt)
                }
                ScheduleArg::Sigmoid => {
                    DensitySchedule::sigmoid(s_initial, s_final, t_start, t_end, dt)
                }
            };
            schedule.validate()?;
            println!("step,sparsity,density");
            let mut t = t_start;
            let last = if schedule.kind == ScheduleKind::Constant { t_start } else { t_end };
            loop {
                println!("{t},{:.8},{:.8}", schedule.sparsity_at(t), schedule.density_at(t));
                if t >= last {
                    break;
                }
                t = (t + stride.max(1)).min(last);
            }
        }
        Command::Percolate { chain, out } => {
            let mut file = BufReader::new(File::open(&chain)?);
            let chain = MaskChain::read_binary(&mut file)?;
            let (result, report) = percolate(&chain);
            println!("removed links: {}", report.removed_link_count);
            println!("anp: {:.6}", report.anp);
            for (b, removed) in report.removed_output_neurons.iter().enumerate() {
                if b + 1 < chain.len() && !removed.is_empty() {
                    println!("boundary {}: removed {:?}", b + 1, removed);
                }
            }
            if let Some(path) = out {
                let mut file = BufWriter::new(File::create(&path)?);
                result.write_binary(&mut file)?;
            }
        }
    }
    Ok(())
}
