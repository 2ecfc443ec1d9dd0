//! Sparse bipartite topology generators: ER, BSW, BSF (with the
//! equal-partition and resort enhancements), BRF, and CSTI.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::weighted_indices_without_replacement;
use crate::topology::{BipartiteMask, MaskChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeMode {
    /// Same out-degree for every output node, remainder spread over the
    /// first nodes so the link budget is hit exactly.
    Fixed,
    /// Out-degrees drawn uniformly from [1, 2*avg-1], then renormalized to
    /// the budget.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrfParams {
    /// Spatial randomness in [0,1]: 0 is a pure receptive field, 1 is ER.
    pub r: f64,
    pub degree_mode: DegreeMode,
    pub target_density: f64,
    pub seed: u64,
    /// Use the literal distance score d^((1-r)/r) instead of the
    /// behavior-consistent (d+1)^(-(1-r)/r) selection weight.
    #[serde(default)]
    pub literal_scores: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BswParams {
    /// Fraction of lattice links deleted and rewired uniformly.
    pub beta: f64,
    pub target_density: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsfParams {
    pub target_density: f64,
    /// Equalize first-layer in-degrees while keeping output degrees.
    pub equal_partition: bool,
    /// Permute hidden neurons so degree ranks align across layers
    /// (applied at the chain level; see [`resort_chain`]).
    pub resort: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CstiParams {
    /// Calibration features, samples x input-feature count.
    pub calibration: Array2<f64>,
    pub target_density: f64,
    pub seed: u64,
}

/// Exact link budget for a target density, or an error when it rounds
/// below one link.
pub fn link_budget(rows: usize, cols: usize, density: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InfeasibleDensity { density, rows, cols });
    }
    let budget = (density * (rows * cols) as f64).round() as usize;
    if budget < 1 {
        return Err(Error::InfeasibleDensity { density, rows, cols });
    }
    Ok(budget.min(rows * cols))
}

/// Uniform mask with exactly round(density*m*n) links.
pub fn gen_er(rows: usize, cols: usize, density: f64, seed: u64) -> Result<BipartiteMask> {
    let budget = link_budget(rows, cols, density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, rows * cols, budget);
    Ok(BipartiteMask::from_links(
        rows,
        cols,
        picked.iter().map(|idx| (idx / cols, idx % cols)),
    ))
}

/// Output-node degree sequence summing exactly to the budget.
fn out_degree_sequence<R: Rng>(
    rows: usize,
    cols: usize,
    budget: usize,
    mode: DegreeMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let seq = match mode {
        DegreeMode::Fixed => {
            let base = budget / cols;
            let rem = budget % cols;
            (0..cols).map(|j| base + usize::from(j < rem)).collect::<Vec<_>>()
        }
        DegreeMode::Uniform => {
            let avg = (budget as f64 / cols as f64).max(1.0);
            let hi = (2.0 * avg - 1.0).round().max(1.0) as usize;
            let raw: Vec<f64> =
                (0..cols).map(|_| rng.random_range(1..=hi) as f64).collect();
            renormalize_to_budget(&raw, budget, rows)
        }
    };
    if let Some(&bad) = seq.iter().find(|&&d| d > rows) {
        return Err(Error::NotEnoughCandidates { requested: bad, available: rows });
    }
    Ok(seq)
}

/// Scales raw positive values so the integer sequence sums to `budget`,
/// capping each entry at `cap`. Remainders go to the largest fractional
/// parts, ties by index.
fn renormalize_to_budget(raw: &[f64], budget: usize, cap: usize) -> Vec<usize> {
    let total: f64 = raw.iter().sum();
    let scaled: Vec<f64> = raw.iter().map(|&v| v * budget as f64 / total).collect();
    let mut seq: Vec<usize> = scaled.iter().map(|&v| (v.floor() as usize).min(cap)).collect();
    let mut assigned: usize = seq.iter().sum();
    // Distribute what the floors left over, preferring large fractions.
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut cursor = 0;
    while assigned < budget {
        let j = order[cursor % order.len()];
        if seq[j] < cap {
            seq[j] += 1;
            assigned += 1;
        }
        cursor += 1;
    }
    while assigned > budget {
        let j = order[cursor % order.len()];
        if seq[j] > 0 {
            seq[j] -= 1;
            assigned -= 1;
        }
        cursor += 1;
    }
    seq
}

/// Circular distance between input i and output j rescaled onto input
/// coordinates.
fn diagonal_distance(i: usize, j: usize, rows: usize, cols: usize) -> usize {
    let center = ((j as f64 * rows as f64 / cols as f64).round() as usize) % rows;
    let delta = i.abs_diff(center);
    delta.min(rows - delta)
}

/// Inputs sorted by circular distance to output j, ties by index.
fn nearest_inputs(j: usize, rows: usize, cols: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by_key(|&i| (diagonal_distance(i, j, rows, cols), i));
    order
}

/// Receptive-field generator: conserves the requested output degree
/// sequence exactly and selects each output's in-links with weight
/// (d+1)^(-(1-r)/r), where d is the circular distance to the diagonal.
/// r=0 selects nearest inputs deterministically; r=1 is uniform.
pub fn gen_brf(rows: usize, cols: usize, params: &BrfParams) -> Result<BipartiteMask> {
    let budget = link_budget(rows, cols, params.target_density)?;
    if !(0.0..=1.0).contains(&params.r) {
        return Err(Error::InvalidConfig(format!("BRF r must be in [0,1], got {}", params.r)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let degrees = out_degree_sequence(rows, cols, budget, params.degree_mode, &mut rng)?;

    let mut mask = BipartiteMask::empty(rows, cols);
    for (j, &degree) in degrees.iter().enumerate() {
        if degree == 0 {
            continue;
        }
        if params.r == 0.0 {
            for &i in nearest_inputs(j, rows, cols).iter().take(degree) {
                mask.set(i, j, true);
            }
            continue;
        }
        let exponent = (1.0 - params.r) / params.r;
        let weights: Vec<f64> = (0..rows)
            .map(|i| {
                let d = diagonal_distance(i, j, rows, cols) as f64;
                if params.literal_scores {
                    d.powf(exponent)
                } else {
                    (d + 1.0).powf(-exponent)
                }
            })
            .collect();
        for i in weighted_indices_without_replacement(&weights, degree, &mut rng)? {
            mask.set(i, j, true);
        }
    }
    Ok(mask)
}

/// Ring-lattice nearest-neighbor connectivity, then a fraction beta of the
/// links rewired uniformly to non-existing positions. The link budget is
/// conserved exactly.
pub fn gen_bsw(rows: usize, cols: usize, params: &BswParams) -> Result<BipartiteMask> {
    let budget = link_budget(rows, cols, params.target_density)?;
    if !(0.0..=1.0).contains(&params.beta) {
        return Err(Error::InvalidConfig(format!("BSW beta must be in [0,1], got {}", params.beta)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    // Lattice: identical construction to BRF r=0 with fixed degrees.
    let degrees = out_degree_sequence(rows, cols, budget, DegreeMode::Fixed, &mut rng)?;
    let mut mask = BipartiteMask::empty(rows, cols);
    for (j, &degree) in degrees.iter().enumerate() {
        for &i in nearest_inputs(j, rows, cols).iter().take(degree) {
            mask.set(i, j, true);
        }
    }
    let rewire_count = (params.beta * mask.link_count() as f64).round() as usize;
    if rewire_count == 0 {
        return Ok(mask);
    }
    let links: Vec<(usize, usize)> = mask.links().collect();
    let chosen = rand::seq::index::sample(&mut rng, links.len(), rewire_count);
    for idx in chosen.iter() {
        let (i, j) = links[idx];
        mask.set(i, j, false);
    }
    rewire_uniformly(&mut mask, rewire_count, &mut rng);
    Ok(mask)
}

fn rewire_uniformly<R: Rng>(mask: &mut BipartiteMask, count: usize, rng: &mut R) {
    let (rows, cols) = (mask.rows(), mask.cols());
    let mut added = 0;
    while added < count {
        let i = rng.random_range(0..rows);
        let j = rng.random_range(0..cols);
        if !mask.get(i, j) {
            mask.set(i, j, true);
            added += 1;
        }
    }
}

/// Scale-free generator: preferential attachment over m+n nodes at the
/// matched budget, then same-side links rewired to the opposite side.
pub fn gen_bsf(rows: usize, cols: usize, params: &BsfParams) -> Result<BipartiteMask> {
    let budget = link_budget(rows, cols, params.target_density)?;
    let total = rows + cols;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Random side assignment so hubs land on both layers.
    let mut side = vec![false; total]; // false = row side
    for flag in side.iter_mut().skip(rows) {
        *flag = true;
    }
    side.shuffle(&mut rng);
    let mut row_ids = Vec::with_capacity(rows);
    let mut col_ids = Vec::with_capacity(cols);
    let mut local = vec![0usize; total];
    for (node, &is_col) in side.iter().enumerate() {
        if is_col {
            local[node] = col_ids.len();
            col_ids.push(node);
        } else {
            local[node] = row_ids.len();
            row_ids.push(node);
        }
    }

    // Incremental preferential attachment; each arriving node brings
    // roughly budget/total links.
    let attach = (budget as f64 / total as f64).round().max(1.0) as usize;
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut stubs: Vec<usize> = Vec::with_capacity(2 * budget);
    let seed_nodes = (attach + 1).min(total);
    for a in 0..seed_nodes {
        for b in (a + 1)..seed_nodes {
            edges.insert((a, b));
            stubs.push(a);
            stubs.push(b);
        }
    }
    for node in seed_nodes..total {
        let mut targets = BTreeSet::new();
        let want = attach.min(node);
        let mut guard = 0;
        while targets.len() < want && guard < 50 * want + 100 {
            let target = stubs[rng.random_range(0..stubs.len())];
            if target != node {
                targets.insert(target);
            }
            guard += 1;
        }
        while targets.len() < want {
            targets.insert(rng.random_range(0..node));
        }
        for &target in &targets {
            edges.insert((node.min(target), node.max(target)));
            stubs.push(node);
            stubs.push(target);
        }
    }

    // Trim or top up uniformly to the exact budget.
    while edges.len() > budget {
        let all: Vec<_> = edges.iter().copied().collect();
        let victim = all[rng.random_range(0..all.len())];
        edges.remove(&victim);
    }
    while edges.len() < budget {
        let a = rng.random_range(0..total);
        let b = rng.random_range(0..total);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }

    // Split into cross-side links and same-side leftovers.
    let mut mask = BipartiteMask::empty(rows, cols);
    let mut same_row_side: Vec<(usize, usize)> = Vec::new();
    let mut same_col_side: Vec<(usize, usize)> = Vec::new();
    for &(a, b) in &edges {
        match (side[a], side[b]) {
            (false, true) => mask.set(local[a], local[b], true),
            (true, false) => mask.set(local[b], local[a], true),
            (false, false) => same_row_side.push((local[a], local[b])),
            (true, true) => same_col_side.push((local[a], local[b])),
        }
    }

    // Pairwise rewiring keeps every node degree: (u1,u2)+(v1,v2) becomes
    // (u1,v1)+(u2,v2) or the crossed pairing when that collides.
    same_row_side.shuffle(&mut rng);
    same_col_side.shuffle(&mut rng);
    let mut leftovers: Vec<SameSideEdge> = Vec::new();
    let pairs = same_row_side.len().min(same_col_side.len());
    for k in 0..pairs {
        let (u1, u2) = same_row_side[k];
        let (v1, v2) = same_col_side[k];
        if !mask.get(u1, v1) && !mask.get(u2, v2) {
            mask.set(u1, v1, true);
            mask.set(u2, v2, true);
        } else if !mask.get(u1, v2) && !mask.get(u2, v1) {
            mask.set(u1, v2, true);
            mask.set(u2, v1, true);
        } else {
            leftovers.push(SameSideEdge::Rows(u1, u2));
            leftovers.push(SameSideEdge::Cols(v1, v2));
        }
    }
    for &(u1, u2) in &same_row_side[pairs..] {
        leftovers.push(SameSideEdge::Rows(u1, u2));
    }
    for &(v1, v2) in &same_col_side[pairs..] {
        leftovers.push(SameSideEdge::Cols(v1, v2));
    }
    // Leftover same-side links keep one endpoint and take a uniform
    // opposite-side partner; budget is conserved, degrees approximately.
    for edge in leftovers {
        let mut placed = false;
        for _ in 0..10 * (rows + cols) {
            let (i, j) = match edge {
                SameSideEdge::Rows(u1, u2) => {
                    let keep = if rng.random::<bool>() { u1 } else { u2 };
                    (keep, rng.random_range(0..cols))
                }
                SameSideEdge::Cols(v1, v2) => {
                    let keep = if rng.random::<bool>() { v1 } else { v2 };
                    (rng.random_range(0..rows), keep)
                }
            };
            if !mask.get(i, j) {
                mask.set(i, j, true);
                placed = true;
                break;
            }
        }
        if !placed {
            rewire_uniformly(&mut mask, 1, &mut rng);
        }
    }

    if params.equal_partition {
        equalize_input_degrees(&mut mask, &mut rng);
    }
    Ok(mask)
}

enum SameSideEdge {
    Rows(usize, usize),
    Cols(usize, usize),
}

/// Reassigns the row endpoint of every link, keeping each column degree
/// fixed, until every row's in-degree is floor(avg) or ceil(avg).
fn equalize_input_degrees<R: Rng>(mask: &mut BipartiteMask, rng: &mut R) {
    let (rows, cols) = (mask.rows(), mask.cols());
    let budget = mask.link_count();
    let base = budget / rows;
    let rem = budget % rows;
    // Row capacities: `rem` randomly chosen rows take one extra link.
    let mut capacity = vec![base; rows];
    for idx in rand::seq::index::sample(rng, rows, rem).iter() {
        capacity[idx] += 1;
    }
    let mut col_degrees: Vec<(usize, usize)> =
        (0..cols).map(|j| (mask.col_degree(j), j)).collect();
    col_degrees.sort_by(|a, b| b.cmp(a));

    let mut out = BipartiteMask::empty(rows, cols);
    for &(degree, j) in &col_degrees {
        // Fill from the rows with the most remaining capacity.
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(capacity[i]), i));
        let mut taken = 0;
        for &i in &order {
            if taken == degree {
                break;
            }
            if capacity[i] > 0 {
                out.set(i, j, true);
                capacity[i] -= 1;
                taken += 1;
            }
        }
        // Degenerate fallback: duplicate-free fill even at zero capacity.
        for &i in &order {
            if taken == degree {
                break;
            }
            if !out.get(i, j) {
                out.set(i, j, true);
                taken += 1;
            }
        }
    }
    *mask = out;
}

/// Permutes hidden neurons at every interior boundary so the degree rank
/// of a neuron's left-side column matches the degree rank of its
/// right-side row.
pub fn resort_chain(chain: &MaskChain) -> Result<MaskChain> {
    let mut masks = chain.masks().to_vec();
    for b in 1..masks.len() {
        let width = masks[b - 1].cols();
        let mut left_rank: Vec<usize> = (0..width).collect();
        left_rank.sort_by_key(|&h| (std::cmp::Reverse(masks[b - 1].col_degree(h)), h));
        let mut right_rank: Vec<usize> = (0..width).collect();
        right_rank.sort_by_key(|&h| (std::cmp::Reverse(masks[b].row_degree(h)), h));

        let old = masks[b].clone();
        let mut permuted = BipartiteMask::empty(old.rows(), old.cols());
        for t in 0..width {
            let dest = left_rank[t];
            let src = right_rank[t];
            for j in 0..old.cols() {
                if old.get(src, j) {
                    permuted.set(dest, j, true);
                }
            }
        }
        masks[b] = permuted;
    }
    MaskChain::new(masks, chain.names().to_vec())
}

/// Correlation-based initializer: absolute Pearson correlations of the
/// calibration features, tiled to the layer width, top entries kept.
pub fn gen_csti(rows: usize, cols: usize, params: &CstiParams) -> Result<BipartiteMask> {
    let budget = link_budget(rows, cols, params.target_density)?;
    let samples = params.calibration.nrows();
    if samples < 2 {
        return Err(Error::TooFewCalibrationSamples(samples));
    }
    if params.calibration.ncols() != rows {
        return Err(Error::DimensionMismatch {
            expected: format!("{rows} calibration features"),
            got: format!("{}", params.calibration.ncols()),
        });
    }
    let corr = abs_pearson_matrix(&params.calibration);
    // Tile the rows x rows correlation matrix horizontally to width cols.
    let mut entries: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            entries.push((corr[[i, j % rows]], i, j));
        }
    }
    entries.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    Ok(BipartiteMask::from_links(
        rows,
        cols,
        entries.iter().take(budget).map(|&(_, i, j)| (i, j)),
    ))
}

/// |Pearson correlation| between feature columns; zero-variance features
/// correlate 0 with everything (including themselves).
fn abs_pearson_matrix(data: &Array2<f64>) -> Array2<f64> {
    let samples = data.nrows();
    let features = data.ncols();
    let means: Vec<f64> = (0..features).map(|f| data.column(f).mean().unwrap_or(0.0)).collect();
    let mut centered = data.clone();
    for f in 0..features {
        for s in 0..samples {
            centered[[s, f]] -= means[f];
        }
    }
    let norms: Vec<f64> =
        (0..features).map(|f| centered.column(f).mapv(|v| v * v).sum().sqrt()).collect();
    let mut corr = Array2::zeros((features, features));
    for i in 0..features {
        for j in 0..features {
            if norms[i] > 0.0 && norms[j] > 0.0 {
                if i == j {
                    corr[[i, j]] = 1.0;
                } else {
                    let dot = centered.column(i).dot(&centered.column(j));
                    corr[[i, j]] = (dot / (norms[i] * norms[j])).abs().min(1.0);
                }
            }
        }
    }
    corr
}
