//! Weighted sampling without replacement over dense weight slices, via a
//! Fenwick tree of running weights, plus deterministic top-k selection.

use rand::Rng;

use crate::error::{Error, Result};

struct FenwickTree {
    tree: Vec<f64>,
}

impl FenwickTree {
    fn from_weights(weights: &[f64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0.0; n + 1];
        for (i, &w) in weights.iter().enumerate() {
            tree[i + 1] += w;
            let parent = (i + 1) + ((i + 1) & (i + 1).wrapping_neg());
            if parent <= n {
                let v = tree[i + 1];
                tree[parent] += v;
            }
        }
        Self { tree }
    }

    fn total(&self) -> f64 {
        self.prefix_sum(self.tree.len() - 1)
    }

    fn prefix_sum(&self, mut i: usize) -> f64 {
        let mut acc = 0.0;
        while i > 0 {
            acc += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        acc
    }

    fn add(&mut self, i: usize, delta: f64) {
        let n = self.tree.len() - 1;
        let mut idx = i + 1;
        while idx <= n {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    /// Smallest index whose cumulative weight exceeds target.
    fn search(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Draws `count` distinct indices with probability proportional to the
/// remaining weights at each draw. Zero-weight entries are unreachable.
pub fn weighted_indices_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if count > positive {
        return Err(Error::NotEnoughCandidates { requested: count, available: positive });
    }
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut tree = FenwickTree::from_weights(weights);
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let total = tree.total();
        let target = rng.random::<f64>() * total;
        let mut idx = tree.search(target.min(total * (1.0 - f64::EPSILON)));
        // Roundoff can land on an exhausted slot; move to the next live one.
        while remaining[idx] <= 0.0 {
            idx = (idx + 1) % remaining.len();
        }
        picked.push(idx);
        tree.add(idx, -remaining[idx]);
        remaining[idx] = 0.0;
    }
    Ok(picked)
}

/// Exact top-`count` indices by weight, ties broken by ascending index.
pub fn top_k_indices(weights: &[f64], count: usize) -> Result<Vec<usize>> {
    if count > weights.len() {
        return Err(Error::NotEnoughCandidates { requested: count, available: weights.len() });
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b].partial_cmp(&weights[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(count);
    Ok(order)
}
