//! Cannistraci-Hebb link predictors over bipartite layers: the node-based
//! CH2-L3n (dense matrix form) and the path-based CH3-L3p, plus a literal
//! enumeration oracle and a one-shot timing benchmark.

use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::topology::BipartiteMask;

/// Refuse dense scoring above this many entries per layer.
pub const MAX_DENSE_ENTRIES: usize = 1 << 24;

/// Size guard for the brute-force oracle.
pub const MAX_ORACLE_ENTRIES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChVariant {
    L3n,
    L3p,
}

/// Dense nonnegative scores; strictly positive only on non-links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChScoreResult {
    pub scores: Array2<f64>,
}

fn to_dense(mask: &BipartiteMask) -> Array2<f64> {
    let mut a = Array2::zeros((mask.rows(), mask.cols()));
    for (i, j) in mask.links() {
        a[[i, j]] = 1.0;
    }
    a
}

fn check_dense_limit(mask: &BipartiteMask) -> Result<()> {
    let entries = mask.rows().max(mask.cols());
    let entries = entries * entries;
    if entries > MAX_DENSE_ENTRIES {
        return Err(Error::LayerTooLarge(entries, MAX_DENSE_ENTRIES));
    }
    Ok(())
}

/// Preparatory score matrix: e[i,j] = (CN[i,j]+1) / (max(d[j]-CN[i,j]-1, 0)+1)
/// for i != j with CN[i,j] > 0, where CN counts two-step paths inside one
/// partition. The external count is clamped at zero before the +1 so that
/// degree-1 neighbors of the seed cannot produce a zero denominator.
fn preparatory_scores(cn: &Array2<f64>, degrees: &[f64]) -> Array2<f64> {
    let n = cn.nrows();
    let mut e = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let paths = cn[[i, j]];
            if paths > 0.0 {
                let ext = (degrees[j] - paths - 1.0).max(0.0);
                e[[i, j]] = (paths + 1.0) / (ext + 1.0);
            }
        }
    }
    e
}

/// Node-based CH2-L3n scores.
///
/// UU = A·Aᵀ and VV = Aᵀ·A are dense products; the final score of a
/// candidate (i,a) is Σ_j e_UU[i,j]·A[j,a] + Σ_b e_VV[a,b]·A[i,b], summed
/// in ascending index order so results are reproducible bit for bit.
pub fn ch2_l3n(mask: &BipartiteMask) -> Result<ChScoreResult> {
    check_dense_limit(mask)?;
    let (m, n) = (mask.rows(), mask.cols());
    let a = to_dense(mask);
    let at = a.t().as_standard_layout().to_owned();

    let uu = a.dot(&at);
    let vv = at.dot(&a);
    let d_u: Vec<f64> = (0..m).map(|i| a.row(i).sum()).collect();
    let d_v: Vec<f64> = (0..n).map(|j| at.row(j).sum()).collect();

    let e_uu = preparatory_scores(&uu, &d_u);
    let e_vv = preparatory_scores(&vv, &d_v);

    let mut scores = Array2::zeros((m, n));
    // S_UV: accumulate e_UU[i,j] * row j of A, j ascending. The loop
    // visits every j so the cost is independent of the mask density;
    // zero terms leave the running sums bit-identical.
    for i in 0..m {
        let mut acc = vec![0.0f64; n];
        for j in 0..m {
            let w = e_uu[[i, j]];
            let row = a.row(j);
            for (slot, &v) in acc.iter_mut().zip(row.iter()) {
                *slot += w * v;
            }
        }
        for (aa, &v) in acc.iter().enumerate() {
            scores[[i, aa]] = v;
        }
    }
    // S_VU: accumulate e_VV[a,b] * row b of Aᵀ, b ascending.
    for aa in 0..n {
        let mut acc = vec![0.0f64; m];
        for b in 0..n {
            let w = e_vv[[aa, b]];
            let row = at.row(b);
            for (slot, &v) in acc.iter_mut().zip(row.iter()) {
                *slot += w * v;
            }
        }
        for (i, &v) in acc.iter().enumerate() {
            scores[[i, aa]] += v;
        }
    }
    // Scores live on non-links only.
    for (i, j) in mask.links() {
        scores[[i, j]] = 0.0;
    }
    Ok(ChScoreResult { scores })
}

/// Path-based CH3-L3p scores.
///
/// For each non-link (u,v), sums 1/sqrt(de*_{z1}·de*_{z2}) over all L3
/// paths u→z1→z2→v, where de* is the count of an intermediate's links
/// leaving the pair's local community (the seeds plus all intermediates),
/// plus one.
pub fn ch3_l3p(mask: &BipartiteMask) -> Result<ChScoreResult> {
    check_dense_limit(mask)?;
    let (m, n) = (mask.rows(), mask.cols());
    let row_neighbors: Vec<Vec<usize>> =
        (0..m).map(|i| (0..n).filter(|&j| mask.get(i, j)).collect()).collect();
    let col_neighbors: Vec<Vec<usize>> =
        (0..n).map(|j| (0..m).filter(|&i| mask.get(i, j)).collect()).collect();

    let mut scores = Array2::zeros((m, n));
    // Scratch buffers, reset between candidates by walking the path list.
    let mut col_in_community = vec![false; n];
    let mut row_in_community = vec![false; m];
    let mut w_col = vec![0.0f64; n];
    let mut w_row = vec![0.0f64; m];

    let mut paths: Vec<(usize, usize)> = Vec::new();
    for u in 0..m {
        for v in 0..n {
            if mask.get(u, v) {
                continue;
            }
            paths.clear();
            for &z1 in &row_neighbors[u] {
                for &z2 in &col_neighbors[v] {
                    if mask.get(z2, z1) {
                        paths.push((z1, z2));
                    }
                }
            }
            if paths.is_empty() {
                continue;
            }
            // Local community: both seeds plus every path intermediate.
            row_in_community[u] = true;
            col_in_community[v] = true;
            for &(z1, z2) in &paths {
                col_in_community[z1] = true;
                row_in_community[z2] = true;
            }
            // External-link counts (+1) per intermediate.
            for &(z1, z2) in &paths {
                if w_col[z1] == 0.0 {
                    let ext = col_neighbors[z1]
                        .iter()
                        .filter(|&&r| !row_in_community[r])
                        .count();
                    w_col[z1] = 1.0 / ((ext + 1) as f64).sqrt();
                }
                if w_row[z2] == 0.0 {
                    let ext = row_neighbors[z2]
                        .iter()
                        .filter(|&&c| !col_in_community[c])
                        .count();
                    w_row[z2] = 1.0 / ((ext + 1) as f64).sqrt();
                }
            }
            let mut score = 0.0;
            for &(z1, z2) in &paths {
                score += w_col[z1] * w_row[z2];
            }
            scores[[u, v]] = score;

            // Reset scratch state.
            row_in_community[u] = false;
            col_in_community[v] = false;
            for &(z1, z2) in &paths {
                col_in_community[z1] = false;
                row_in_community[z2] = false;
                w_col[z1] = 0.0;
                w_row[z2] = 0.0;
            }
        }
    }
    Ok(ChScoreResult { scores })
}

/// Literal enumeration oracle for both CH variants. Intentionally naive;
/// guarded to small masks.
pub fn oracle_ch_scores(mask: &BipartiteMask, variant: ChVariant) -> Result<ChScoreResult> {
    let entries = mask.rows() * mask.cols();
    if entries > MAX_ORACLE_ENTRIES {
        return Err(Error::OracleSizeGuard(entries, MAX_ORACLE_ENTRIES));
    }
    match variant {
        ChVariant::L3p => oracle_l3p(mask),
        ChVariant::L3n => oracle_l3n(mask),
    }
}

fn oracle_l3p(mask: &BipartiteMask) -> Result<ChScoreResult> {
    let (m, n) = (mask.rows(), mask.cols());
    let mut scores = Array2::zeros((m, n));
    for u in 0..m {
        for v in 0..n {
            if mask.get(u, v) {
                continue;
            }
            // Enumerate every L3 path u -> z1 -> z2 -> v.
            let mut all_paths = Vec::new();
            for z1 in 0..n {
                for z2 in 0..m {
                    if mask.get(u, z1) && mask.get(z2, z1) && mask.get(z2, v) {
                        all_paths.push((z1, z2));
                    }
                }
            }
            // Community node sets, as (is_row, index) pairs.
            let mut community: Vec<(bool, usize)> = vec![(true, u), (false, v)];
            for &(z1, z2) in &all_paths {
                if !community.contains(&(false, z1)) {
                    community.push((false, z1));
                }
                if !community.contains(&(true, z2)) {
                    community.push((true, z2));
                }
            }
            let externals_of_col = |z1: usize| -> usize {
                (0..m)
                    .filter(|&r| mask.get(r, z1) && !community.contains(&(true, r)))
                    .count()
            };
            let externals_of_row = |z2: usize| -> usize {
                (0..n)
                    .filter(|&c| mask.get(z2, c) && !community.contains(&(false, c)))
                    .count()
            };
            let mut score = 0.0;
            for &(z1, z2) in &all_paths {
                let de1 = externals_of_col(z1) as f64 + 1.0;
                let de2 = externals_of_row(z2) as f64 + 1.0;
                score += 1.0 / (de1 * de2).sqrt();
            }
            scores[[u, v]] = score;
        }
    }
    Ok(ChScoreResult { scores })
}

/// Matrix-free double-loop restatement of the node-based algorithm:
/// common-neighbor counts by explicit set intersection, same preparatory
/// formula, same ascending summation order.
fn oracle_l3n(mask: &BipartiteMask) -> Result<ChScoreResult> {
    let (m, n) = (mask.rows(), mask.cols());
    let mut scores = Array2::zeros((m, n));
    let shared_cols = |i: usize, j: usize| -> usize {
        (0..n).filter(|&c| mask.get(i, c) && mask.get(j, c)).count()
    };
    let shared_rows = |a: usize, b: usize| -> usize {
        (0..m).filter(|&r| mask.get(r, a) && mask.get(r, b)).count()
    };
    let e_of = |paths: usize, degree: usize| -> f64 {
        let ext = (degree as f64 - paths as f64 - 1.0).max(0.0);
        (paths as f64 + 1.0) / (ext + 1.0)
    };
    for u in 0..m {
        for v in 0..n {
            if mask.get(u, v) {
                continue;
            }
            let mut uv = 0.0;
            for j in 0..m {
                if j == u || !mask.get(j, v) {
                    continue;
                }
                let cn = shared_cols(u, j);
                if cn > 0 {
                    uv += e_of(cn, mask.row_degree(j));
                }
            }
            let mut vu = 0.0;
            for b in 0..n {
                if b == v || !mask.get(u, b) {
                    continue;
                }
                let cn = shared_rows(v, b);
                if cn > 0 {
                    vu += e_of(cn, mask.col_degree(b));
                }
            }
            scores[[u, v]] = uv + vu;
        }
    }
    Ok(ChScoreResult { scores })
}

/// One row of the prediction timing study.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: String,
    pub size: usize,
    pub density: f64,
    pub seconds: f64,
}

/// Times one-shot prediction per (size, density) on ER masks.
pub fn bench_predict(
    sizes: &[usize],
    densities: &[f64],
    variants: &[ChVariant],
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        for &density in densities {
            let mask = crate::netgen::gen_er(size, size, density, seed)?;
            for &variant in variants {
                let start = Instant::now();
                match variant {
                    ChVariant::L3n => {
                        ch2_l3n(&mask)?;
                    }
                    ChVariant::L3p => {
                        ch3_l3p(&mask)?;
                    }
                }
                rows.push(BenchRow {
                    variant: match variant {
                        ChVariant::L3n => "ch2_l3n".into(),
                        ChVariant::L3p => "ch3_l3p".into(),
                    },
                    size,
                    density,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("variant,size,density,seconds\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            row.variant, row.size, row.density, row.seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rows: usize, cols: usize, density: f64, seed: u64) -> BipartiteMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = BipartiteMask::empty(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if rng.random::<f64>() < density {
                    mask.set(i, j, true);
                }
            }
        }
        mask
    }

    #[test]
    fn empty_mask_zero_scores() {
        let mask = BipartiteMask::empty(4, 4);
        assert!(ch2_l3n(&mask).unwrap().scores.iter().all(|&s| s == 0.0));
        assert!(ch3_l3p(&mask).unwrap().scores.iter().all(|&s| s == 0.0));
        assert!(oracle_ch_scores(&mask, ChVariant::L3p)
            .unwrap()
            .scores
            .iter()
            .all(|&s| s == 0.0));
    }

    #[test]
    fn complete_mask_no_candidates() {
        let mask = BipartiteMask::full(3, 3);
        assert!(ch2_l3n(&mask).unwrap().scores.iter().all(|&s| s == 0.0));
        assert!(ch3_l3p(&mask).unwrap().scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hand_traced_two_by_two() {
        // Links u1-v1, u2-v1, u2-v2 on a 2x2 mask; candidate (u1, v2).
        let mask = BipartiteMask::from_links(2, 2, [(0, 0), (1, 0), (1, 1)]);
        // Node-based trace: UU[0,1] = 1 (shared col v1); d_U[1] = 2;
        // ext = 2 - 1 - 1 = 0; e_UU[0,1] = 2/1 = 2; A[1,1] = 1 -> S_UV = 2.
        // VV[1,0] = 1 (shared row u2); d_V[0] = 2; ext = 0; e_VV[1,0] = 2;
        // A[0,0] = 1 -> S_VU = 2. Total 4.
        let node = ch2_l3n(&mask).unwrap();
        assert_eq!(node.scores[[0, 1]], 4.0);
        assert_eq!(node.scores, oracle_ch_scores(&mask, ChVariant::L3n).unwrap().scores);

        // Path-based trace: one L3 path u1 -> v1 -> u2 -> v2. Community is
        // {u1, v2, v1, u2}; every link stays inside it, so de* = 1 for both
        // intermediates and the score is 1.
        let path = ch3_l3p(&mask).unwrap();
        assert_eq!(path.scores[[0, 1]], 1.0);
        assert_eq!(path.scores, oracle_ch_scores(&mask, ChVariant::L3p).unwrap().scores);
    }

    #[test]
    fn star_with_external_links() {
        // One L3 path u0 -> v0 -> u1 -> v1, plus external spokes hanging
        // off both intermediates: v0 also reaches u2, u1 also reaches v2.
        let mask = BipartiteMask::from_links(3, 3, [(0, 0), (1, 0), (1, 1), (2, 0), (1, 2)]);
        // Candidate (u0, v1): community {u0, v1, v0, u1}. v0's external
        // links: to u2 -> 1, de* = 2. u1's external: to v2 -> 1, de* = 2.
        let expected = 1.0 / (2.0f64 * 2.0).sqrt();
        let got = ch3_l3p(&mask).unwrap();
        assert!((got.scores[[0, 1]] - expected).abs() < 1e-12);
        let oracle = oracle_ch_scores(&mask, ChVariant::L3p).unwrap();
        assert!((oracle.scores[[0, 1]] - expected).abs() < 1e-12);
    }

    #[test]
    fn path_scores_match_oracle_on_random_masks() {
        for seed in 0..20 {
            let mask = random_mask(16, 16, 0.2, seed);
            let fast = ch3_l3p(&mask).unwrap();
            let oracle = oracle_ch_scores(&mask, ChVariant::L3p).unwrap();
            for u in 0..16 {
                for v in 0..16 {
                    assert!(
                        (fast.scores[[u, v]] - oracle.scores[[u, v]]).abs() < 1e-9,
                        "seed {seed} at ({u},{v}): {} vs {}",
                        fast.scores[[u, v]],
                        oracle.scores[[u, v]]
                    );
                }
            }
        }
    }

    #[test]
    fn node_scores_match_double_loop_exactly() {
        for seed in 0..20 {
            let mask = random_mask(12, 15, 0.25, seed + 1000);
            let fast = ch2_l3n(&mask).unwrap();
            let oracle = oracle_ch_scores(&mask, ChVariant::L3n).unwrap();
            assert_eq!(fast.scores, oracle.scores, "seed {seed}");
        }
    }

    #[test]
    fn oracle_l3p_symmetric_under_transpose() {
        let mask = random_mask(8, 8, 0.2, 42);
        let direct = oracle_ch_scores(&mask, ChVariant::L3p).unwrap();
        let transposed = oracle_ch_scores(&mask.transposed(), ChVariant::L3p).unwrap();
        for u in 0..8 {
            for v in 0..8 {
                assert!((direct.scores[[u, v]] - transposed.scores[[v, u]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scores_nonnegative_and_zero_on_links() {
        let mask = random_mask(10, 10, 0.3, 5);
        for result in [ch2_l3n(&mask).unwrap(), ch3_l3p(&mask).unwrap()] {
            for u in 0..10 {
                for v in 0..10 {
                    assert!(result.scores[[u, v]] >= 0.0);
                    if mask.get(u, v) {
                        assert_eq!(result.scores[[u, v]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_size_guard() {
        let mask = BipartiteMask::empty(100, 100);
        assert!(matches!(
            oracle_ch_scores(&mask, ChVariant::L3p),
            Err(Error::OracleSizeGuard(_, _))
        ));
    }

    #[test]
    fn predictors_are_deterministic() {
        let mask = random_mask(16, 16, 0.15, 9);
        assert_eq!(ch2_l3n(&mask).unwrap().scores, ch2_l3n(&mask).unwrap().scores);
        assert_eq!(ch3_l3p(&mask).unwrap().scores, ch3_l3p(&mask).unwrap().scores);
    }
}
