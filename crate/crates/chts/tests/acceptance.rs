//! End-to-end acceptance suite. Each test covers one release criterion
//! and prints a single pass line; a panic marks the criterion failed.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use chts::evolution::{
    self, EvolutionConfig, LayerState, RegrowthKind, RegrowthRule, RemovalCriterion,
    RemovalRule, SelectionMode,
};
use chts::harness::{self, DatasetConfig, ExperimentConfig, TopologyConfig};
use chts::linkpred::{self, ChVariant};
use chts::netgen::{self, BrfParams, BswParams, DegreeMode};
use chts::schedule::{equalize_flops, DensitySchedule};
use chts::topology::BipartiteMask;
use chts::trainer::{self, data, MlpSpec, SparseMlp, TrainConfig};

fn random_mask(rows: usize, cols: usize, density: f64, seed: u64) -> BipartiteMask {
    netgen::gen_er(rows, cols, density, seed).unwrap()
}

#[test]
fn criterion_1_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    for case in 0..200 {
        let rows = rng.random_range(6..=32);
        let cols = rng.random_range(6..=32);
        let density: f64 = rng.random_range(0.05..=0.30);
        let seed = rng.random::<u64>();
        let mask = random_mask(rows, cols, density.max(1.5 / (rows * cols) as f64), seed);

        let fast = linkpred::ch3_l3p(&mask).unwrap();
        let oracle = linkpred::oracle_ch_scores(&mask, ChVariant::L3p).unwrap();
        for ((i, j), &expected) in oracle.scores.indexed_iter() {
            let got = fast.scores[[i, j]];
            let tol = 1e-9 * expected.abs().max(1.0);
            assert!(
                (got - expected).abs() <= tol,
                "case {case}: L3p mismatch at ({i},{j}): {got} vs {expected}"
            );
        }

        let fast = linkpred::ch2_l3n(&mask).unwrap();
        let oracle = linkpred::oracle_ch_scores(&mask, ChVariant::L3n).unwrap();
        assert_eq!(fast.scores, oracle.scores, "case {case}: L3n not bit-exact");
    }
    println!("criterion 1 (oracle equivalence, 200 masks): PASS");
}

#[test]
fn criterion_2_runtime_contrast() {
    let mask = random_mask(1024, 1024, 0.05, 7);

    let start = Instant::now();
    linkpred::ch2_l3n(&mask).unwrap();
    let node_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    linkpred::ch3_l3p(&mask).unwrap();
    let path_secs = start.elapsed().as_secs_f64();

    let ratio = path_secs / node_secs;
    assert!(
        ratio >= 5.0,
        "path-based {path_secs:.2}s vs node-based {node_secs:.2}s, ratio {ratio:.1}"
    );

    // Node-based runtime is dominated by fixed-size matrix products, so
    // density barely moves it.
    let mut times = Vec::new();
    for (k, density) in [0.01, 0.05, 0.10, 0.20].into_iter().enumerate() {
        let mask = random_mask(1024, 1024, density, 100 + k as u64);
        let mut best = f64::INFINITY;
        for _ in 0..2 {
            let start = Instant::now();
            linkpred::ch2_l3n(&mask).unwrap();
            best = best.min(start.elapsed().as_secs_f64());
        }
        times.push(best);
    }
    let spread = times.iter().cloned().fold(0.0f64, f64::max)
        / times.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 3.0, "node-based runtime spread {spread:.2} over densities: {times:?}");
    println!(
        "criterion 2 (runtime: node/path ratio {ratio:.1}x, density spread {spread:.2}x): PASS"
    );
}

fn desk_config(preset: &str) -> ExperimentConfig {
    ExperimentConfig {
        name: format!("desk-{preset}"),
        dims: vec![784, 256, 256, 10],
        sparsity: 0.95,
        seeds: vec![1, 2, 3],
        epochs: 10,
        batch_size: 64,
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 1e-4,
        update_interval: 4,
        preset: Some(preset.to_string()),
        topology: TopologyConfig::Er,
        dataset: DatasetConfig::Synthetic {
            train_samples: 3000,
            test_samples: 1000,
            classes: 10,
            seed: 424_242,
            radius: 10.0,
            informative: Some(64),
        },
        schedule: None,
        evolution: None,
        dense_final: true,
    }
}

#[test]
fn criterion_3_desk_mlp_ordering() {
    let chts = harness::run_experiment(&desk_config("chts"), None).unwrap();
    let set = harness::run_experiment(&desk_config("set"), None).unwrap();

    let margin = chts.test_accuracy.mean - (set.test_accuracy.mean - 0.001);
    assert!(
        margin >= 0.0,
        "CHTs accuracy {:.4} below SET {:.4} - 0.1pp",
        chts.test_accuracy.mean,
        set.test_accuracy.mean
    );
    assert!(
        chts.records.iter().any(|r| r.anp < 1.0),
        "CHTs never stranded a neuron: anp per seed {:?}",
        chts.records.iter().map(|r| r.anp).collect::<Vec<_>>()
    );
    for record in &set.records {
        assert_eq!(record.anp, 1.0, "SET stranded a neuron");
    }
    println!(
        "criterion 3 (desk MLP: CHTs {:.4} vs SET {:.4}, CHTs ANP {:.4}, SET ANP 1.0): PASS",
        chts.test_accuracy.mean, set.test_accuracy.mean, chts.anp.mean
    );
}

#[test]
fn criterion_4_elm_itop_contrast() {
    let run = |kind: RegrowthKind| {
        let mask = random_mask(32, 32, 0.10, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let weights = Array2::from_shape_fn((32, 32), |_| rng.random::<f64>() * 2.0 - 1.0);
        let mut state = LayerState::new(weights, mask).unwrap();
        let config = EvolutionConfig {
            zeta: 0.3,
            update_interval: 1,
            removal: RemovalRule {
                criterion: RemovalCriterion::WeightMagnitude,
                delta_start: 0.5,
                delta_end: 0.5,
                soft: false,
            },
            regrowth: RegrowthRule { kind, epsilon_floor: 1e-4 },
            seed: 42,
            elm_threshold: 0.9,
            percolate: false,
            clear_momentum: true,
        };
        let mut elm_sum = 0.0;
        let mut elm_count = 0usize;
        let mut itop = 0.0;
        for step in 0..500 {
            let report =
                evolution::evolve_step(&mut state, &config, 0.10, None, 0, step, 0.0).unwrap();
            if let Some(ratio) = report.elm_ratio {
                elm_sum += ratio;
                elm_count += 1;
            }
            itop = report.itop_rate;
        }
        (elm_sum / elm_count as f64, itop)
    };

    let (elm_soft, itop_soft) = run(RegrowthKind::Ch2L3nSoft);
    let (elm_det, itop_det) = run(RegrowthKind::Ch2L3nDeterministic);
    assert!(
        itop_soft > itop_det,
        "ITOP soft {itop_soft:.4} not above deterministic {itop_det:.4}"
    );
    assert!(
        elm_det > elm_soft,
        "mean ELM deterministic {elm_det:.4} not above soft {elm_soft:.4}"
    );
    println!(
        "criterion 4 (500 steps: ITOP {itop_soft:.3} > {itop_det:.3}, ELM {elm_det:.3} > {elm_soft:.3}): PASS"
    );
}

#[test]
fn criterion_5_schedule_exactness() {
    let cubic = DensitySchedule::cubic(0.5, 0.95, 100, 8100, 1);
    assert!((cubic.sparsity_at(100) - 0.5).abs() < 1e-12);
    assert!((cubic.sparsity_at(8100) - 0.95).abs() < 1e-12);
    // Quarter point of the window: s_f + (s_i - s_f)(1 - 1/4)^3.
    let expected = 0.95 + (0.5 - 0.95) * 0.75f64.powi(3);
    assert!((cubic.sparsity_at(2100) - expected).abs() < 1e-12);

    let sigmoid = DensitySchedule::sigmoid(0.5, 0.95, 100, 8100, 1);
    assert!((sigmoid.sparsity_at(100) - 0.5).abs() < 1e-12);
    assert!((sigmoid.sparsity_at(8100) - 0.95).abs() < 1e-12);
    assert!((sigmoid.sparsity_at(4100) - (0.5 + 0.95) / 2.0).abs() < 1e-12);

    let equalized = equalize_flops(&sigmoid, &cubic).unwrap();
    assert_eq!(equalized.t_end, 100 + 4000);
    let integrate = |s: &DensitySchedule| -> f64 {
        (100..8100u64).map(|t| 0.5 * (s.density_at(t) + s.density_at(t + 1))).sum()
    };
    let ic = integrate(&cubic);
    let is = integrate(&equalized);
    let gap = (ic - is).abs() / ic;
    assert!(gap < 0.05, "density integrals differ by {:.2}%", gap * 100.0);
    println!(
        "criterion 5 (schedules exact to 1e-12, FLOPs-equalized integrals within {:.2}%): PASS",
        gap * 100.0
    );
}

#[test]
fn criterion_6_soft_sampling_statistics() {
    let vectors: Vec<(&str, Vec<f64>)> = vec![
        ("uniform", vec![1.0; 20]),
        ("skewed", (1..=20).map(|k| k as f64).collect()),
        ("one-dominant", {
            let mut v = vec![1.0; 10];
            v[0] = 100.0;
            v
        }),
    ];
    let trials = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC6);
    let mut worst_p = 1.0f64;
    for (name, weights) in vectors {
        let total: f64 = weights.iter().sum();
        let scores = Array2::from_shape_vec((1, weights.len()), weights.clone()).unwrap();
        let candidates: Vec<(usize, usize)> = (0..weights.len()).map(|j| (0, j)).collect();
        let mut counts = vec![0u64; weights.len()];
        for _ in 0..trials {
            let set = evolution::soft_select(
                &scores,
                &candidates,
                1,
                SelectionMode::Keep,
                true,
                0.0,
                &mut rng,
            )
            .unwrap();
            let (_, j) = set.into_iter().next().unwrap();
            counts[j] += 1;
        }
        let statistic: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&obs, &w)| {
                let expected = trials as f64 * w / total;
                (obs as f64 - expected).powi(2) / expected
            })
            .sum();
        let df = (weights.len() - 1) as f64;
        let p = 1.0 - ChiSquared::new(df).unwrap().cdf(statistic);
        assert!(p > 0.001, "{name}: chi-square {statistic:.2} (df {df}), p {p:.5}");
        worst_p = worst_p.min(p);
    }
    println!("criterion 6 (soft-sampling chi-square, worst p {worst_p:.4}): PASS");
}

fn mean_diagonal_distance(mask: &BipartiteMask) -> f64 {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, j) in mask.links() {
        let center = ((j as f64 * rows as f64 / cols as f64).round() as usize) % rows;
        let delta = i.abs_diff(center);
        total += delta.min(rows - delta) as f64;
        count += 1;
    }
    total / count as f64
}

#[test]
fn criterion_7_brf_contract() {
    let (rows, cols, density) = (48, 32, 0.10);
    let budget = netgen::link_budget(rows, cols, density).unwrap();
    // Fixed-mode requested out-degrees: base everywhere, +1 on the first
    // remainder outputs.
    let base = budget / cols;
    let rem = budget % cols;
    for r in [0.0, 0.25, 0.5, 1.0] {
        let mask = netgen::gen_brf(
            rows,
            cols,
            &BrfParams {
                r,
                degree_mode: DegreeMode::Fixed,
                target_density: density,
                seed: 70,
                literal_scores: false,
            },
        )
        .unwrap();
        for j in 0..cols {
            let expected = base + usize::from(j < rem);
            assert_eq!(mask.col_degree(j), expected, "r {r}, output {j}");
        }
    }

    // r = 0 equals BSW beta = 0 bit for bit.
    let brf0 = netgen::gen_brf(
        rows,
        cols,
        &BrfParams {
            r: 0.0,
            degree_mode: DegreeMode::Fixed,
            target_density: density,
            seed: 71,
            literal_scores: false,
        },
    )
    .unwrap();
    let bsw0 = netgen::gen_bsw(
        rows,
        cols,
        &BswParams { beta: 0.0, target_density: density, seed: 72 },
    )
    .unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    brf0.write_binary(&mut a).unwrap();
    bsw0.write_binary(&mut b).unwrap();
    assert_eq!(a, b, "BRF r=0 and BSW beta=0 disagree");

    // r = 1 is statistically indistinguishable from ER on mean diagonal
    // distance (Welch two-sample t-test over 100 seeds each).
    let brf_means: Vec<f64> = (0..100)
        .map(|s| {
            let mask = netgen::gen_brf(
                rows,
                cols,
                &BrfParams {
                    r: 1.0,
                    degree_mode: DegreeMode::Fixed,
                    target_density: density,
                    seed: 1000 + s,
                    literal_scores: false,
                },
            )
            .unwrap();
            mean_diagonal_distance(&mask)
        })
        .collect();
    let er_means: Vec<f64> = (0..100)
        .map(|s| mean_diagonal_distance(&random_mask(rows, cols, density, 2000 + s)))
        .collect();
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var, n)
    };
    let (m1, v1, n1) = stats(&brf_means);
    let (m2, v2, n2) = stats(&er_means);
    let se2 = v1 / n1 + v2 / n2;
    let t = (m1 - m2) / se2.sqrt();
    let df = se2.powi(2) / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let p = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t.abs()));
    assert!(p > 0.01, "BRF r=1 vs ER distance means {m1:.3} vs {m2:.3}, t {t:.2}, p {p:.4}");
    println!("criterion 7 (BRF contract, r=1 vs ER p {p:.3}): PASS");
}

#[test]
fn criterion_8_gradient_correctness() {
    // 6-neuron network (2-2-2), every sparse/dense combination per layer.
    let spec = MlpSpec::new(vec![2, 2, 2]).unwrap();
    let sparse = BipartiteMask::from_links(2, 2, [(0, 0), (1, 1)]);
    let dense = BipartiteMask::full(2, 2);
    let x = ndarray::arr2(&[[0.7, -1.2], [0.1, 0.4], [-0.5, 0.9]]);
    let y = vec![0, 1, 0];
    let h = 1e-6;
    for (combo, (first, second)) in [
        (&sparse, &sparse),
        (&sparse, &dense),
        (&dense, &sparse),
        (&dense, &dense),
    ]
    .into_iter()
    .enumerate()
    {
        let mut model = SparseMlp::new(
            &spec,
            vec![first.clone(), second.clone()],
            vec![true, false],
            combo as u64,
        )
        .unwrap();
        let (_, w_grads, b_grads) = model.loss_and_grads(&x, &y);
        for l in 0..2 {
            let links: Vec<(usize, usize)> = model.layers[l].mask.links().collect();
            for (i, j) in links {
                let orig = model.layers[l].weights[[i, j]];
                model.layers[l].weights[[i, j]] = orig + h;
                let (lp, _, _) = model.loss_and_grads(&x, &y);
                model.layers[l].weights[[i, j]] = orig - h;
                let (lm, _, _) = model.loss_and_grads(&x, &y);
                model.layers[l].weights[[i, j]] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = w_grads[l][[i, j]];
                let scale = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / scale < 1e-3,
                    "combo {combo} layer {l} ({i},{j}): {analytic} vs {numeric}"
                );
            }
            for j in 0..2 {
                let orig = model.biases[l][j];
                model.biases[l][j] = orig + h;
                let (lp, _, _) = model.loss_and_grads(&x, &y);
                model.biases[l][j] = orig - h;
                let (lm, _, _) = model.loss_and_grads(&x, &y);
                model.biases[l][j] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let scale = b_grads[l][j].abs().max(numeric.abs()).max(1e-8);
                assert!((b_grads[l][j] - numeric).abs() / scale < 1e-3);
            }
        }
    }
    println!("criterion 8 (gradient check, 4 sparse/dense combinations): PASS");
}

#[test]
fn criterion_9_determinism() {
    // Every preset: identical metrics CSVs across two runs at the same
    // seed.
    for preset in ["chts", "chtss", "set", "rigl", "gmp"] {
        let config = ExperimentConfig {
            name: format!("determinism-{preset}"),
            dims: vec![24, 32, 4],
            sparsity: 0.85,
            seeds: vec![11],
            epochs: 4,
            batch_size: 25,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            update_interval: 4,
            preset: Some(preset.to_string()),
            topology: TopologyConfig::Er,
            dataset: DatasetConfig::Synthetic {
                train_samples: 200,
                test_samples: 50,
                classes: 4,
                seed: 99,
                radius: 3.0,
                informative: None,
            },
            schedule: None,
            evolution: None,
            dense_final: true,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        harness::run_experiment(&config, Some(dir_a.path())).unwrap();
        harness::run_experiment(&config, Some(dir_b.path())).unwrap();
        let a = std::fs::read(dir_a.path().join("metrics_seed11.csv")).unwrap();
        let b = std::fs::read(dir_b.path().join("metrics_seed11.csv")).unwrap();
        assert_eq!(a, b, "preset {preset}: metrics CSVs differ");
        assert!(!a.is_empty());
    }

    // Byte-identical mask trace: serialize the chain after every epoch of
    // two identical training runs.
    let trace = || {
        let dataset = data::synthetic_blobs(200, 40, 12, 3, 55);
        let spec = MlpSpec::new(vec![12, 20, 3]).unwrap();
        let masks = vec![
            netgen::gen_er(12, 20, 0.25, 56).unwrap(),
            BipartiteMask::full(20, 3),
        ];
        let mut model = SparseMlp::new(&spec, masks, vec![true, false], 57).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 20,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 57,
            schedule: DensitySchedule::constant(0.75),
            evolution: Some(EvolutionConfig {
                zeta: 0.3,
                update_interval: 2,
                removal: RemovalRule {
                    criterion: RemovalCriterion::WeightMagnitude,
                    delta_start: 0.5,
                    delta_end: 0.75,
                    soft: true,
                },
                regrowth: RegrowthRule { kind: RegrowthKind::Ch2L3nSoft, epsilon_floor: 1e-4 },
                seed: 57,
                elm_threshold: 0.9,
                percolate: true,
                clear_momentum: true,
            }),
        };
        let mut bytes = Vec::new();
        for _ in 0..6 {
            trainer::train(&mut model, &dataset, &cfg).unwrap();
            model.chain().write_binary(&mut bytes).unwrap();
        }
        bytes
    };
    assert_eq!(trace(), trace(), "mask traces differ between identical runs");
    println!("criterion 9 (determinism across presets, byte-identical artifacts): PASS");
}
