//! Bipartite sparse connectivity: masks, degree bookkeeping, link-set
//! algebra, network percolation, and the ITOP activation bitfield.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Sorted set of (row, col) link positions within one layer.
pub type LinkSet = BTreeSet<(usize, usize)>;

const MASK_MAGIC: &[u8; 4] = b"BPMK";
const MASK_VERSION: u16 = 1;

/// Binary sparse connectivity of one layer (input x output).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteMask {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
    link_count: usize,
}

impl BipartiteMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0; rows * cols], link_count: 0 }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![1; rows * cols], link_count: rows * cols }
    }

    pub fn from_links<I: IntoIterator<Item = (usize, usize)>>(
        rows: usize,
        cols: usize,
        links: I,
    ) -> Self {
        let mut mask = Self::empty(rows, cols);
        for (i, j) in links {
            mask.set(i, j, true);
        }
        mask
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn link_count(&self) -> usize {
        self.link_count
    }

    pub fn density(&self) -> f64 {
        if self.rows * self.cols == 0 {
            0.0
        } else {
            self.link_count as f64 / (self.rows * self.cols) as f64
        }
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.density()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.cols + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        let slot = &mut self.entries[i * self.cols + j];
        match (*slot != 0, on) {
            (false, true) => {
                *slot = 1;
                self.link_count += 1;
            }
            (true, false) => {
                *slot = 0;
                self.link_count -= 1;
            }
            _ => {}
        }
    }

    /// Links in row-major order.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e != 0)
            .map(|(idx, _)| (idx / self.cols, idx % self.cols))
    }

    /// Non-link positions in row-major order.
    pub fn non_links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e == 0)
            .map(|(idx, _)| (idx / self.cols, idx % self.cols))
    }

    pub fn link_set(&self) -> LinkSet {
        self.links().collect()
    }

    pub fn row_degree(&self, i: usize) -> usize {
        self.entries[i * self.cols..(i + 1) * self.cols]
            .iter()
            .map(|&e| e as usize)
            .sum()
    }

    pub fn col_degree(&self, j: usize) -> usize {
        (0..self.rows).map(|i| self.entries[i * self.cols + j] as usize).sum()
    }

    /// Zeroes the whole row, returning how many links were dropped.
    pub fn clear_row(&mut self, i: usize) -> usize {
        let mut dropped = 0;
        for j in 0..self.cols {
            let slot = &mut self.entries[i * self.cols + j];
            if *slot != 0 {
                *slot = 0;
                dropped += 1;
            }
        }
        self.link_count -= dropped;
        dropped
    }

    /// Zeroes the whole column, returning how many links were dropped.
    pub fn clear_col(&mut self, j: usize) -> usize {
        let mut dropped = 0;
        for i in 0..self.rows {
            let slot = &mut self.entries[i * self.cols + j];
            if *slot != 0 {
                *slot = 0;
                dropped += 1;
            }
        }
        self.link_count -= dropped;
        dropped
    }

    pub fn transposed(&self) -> Self {
        let mut out = Self::empty(self.cols, self.rows);
        for (i, j) in self.links() {
            out.set(j, i, true);
        }
        out
    }

    /// Portable binary layout: "BPMK" magic, version u16, m u32, n u32
    /// (all big-endian), then row-major bit-packed entries, MSB first.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MASK_MAGIC)?;
        w.write_all(&MASK_VERSION.to_be_bytes())?;
        w.write_all(&(self.rows as u32).to_be_bytes())?;
        w.write_all(&(self.cols as u32).to_be_bytes())?;
        let nbits = self.rows * self.cols;
        let mut packed = vec![0u8; nbits.div_ceil(8)];
        for (idx, &e) in self.entries.iter().enumerate() {
            if e != 0 {
                packed[idx / 8] |= 0x80 >> (idx % 8);
            }
        }
        w.write_all(&packed)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MASK_MAGIC {
            return Err(Error::BadMaskFile(format!("bad magic {magic:?}")));
        }
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)?;
        let version = u16::from_be_bytes(buf2);
        if version != MASK_VERSION {
            return Err(Error::BadMaskFile(format!("unsupported version {version}")));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let rows = u32::from_be_bytes(buf4) as usize;
        r.read_exact(&mut buf4)?;
        let cols = u32::from_be_bytes(buf4) as usize;
        let nbits = rows * cols;
        let mut packed = vec![0u8; nbits.div_ceil(8)];
        r.read_exact(&mut packed)?;
        let mut mask = Self::empty(rows, cols);
        for idx in 0..nbits {
            if packed[idx / 8] & (0x80 >> (idx % 8)) != 0 {
                mask.entries[idx] = 1;
                mask.link_count += 1;
            }
        }
        Ok(mask)
    }

    /// Human-readable edge list, one "row col" pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (i, j) in self.links() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(rows: usize, cols: usize, text: &str) -> Result<Self> {
        let mut mask = Self::empty(rows, cols);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::BadMaskFile(format!("edge list line {}", lineno + 1)))
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if i >= rows || j >= cols {
                return Err(Error::BadMaskFile(format!(
                    "edge ({i},{j}) out of bounds for {rows}x{cols}"
                )));
            }
            mask.set(i, j, true);
        }
        Ok(mask)
    }
}

/// Row and column degree sequences of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeProfile {
    pub in_degrees: Vec<usize>,
    pub out_degrees: Vec<usize>,
}

/// Exact row/column sums of the binary matrix.
pub fn degrees(mask: &BipartiteMask) -> DegreeProfile {
    let mut in_degrees = vec![0usize; mask.rows()];
    let mut out_degrees = vec![0usize; mask.cols()];
    for (i, j) in mask.links() {
        in_degrees[i] += 1;
        out_degrees[j] += 1;
    }
    DegreeProfile { in_degrees, out_degrees }
}

/// Ordered masks forming consecutive layers; mask[k].cols == mask[k+1].rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskChain {
    masks: Vec<BipartiteMask>,
    names: Vec<String>,
}

impl MaskChain {
    pub fn new(masks: Vec<BipartiteMask>, names: Vec<String>) -> Result<Self> {
        if masks.len() != names.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} names", masks.len()),
                got: format!("{}", names.len()),
            });
        }
        for k in 0..masks.len().saturating_sub(1) {
            if masks[k].cols() != masks[k + 1].rows() {
                return Err(Error::DimensionMismatch {
                    expected: format!("layer {} rows == {}", k + 1, masks[k].cols()),
                    got: format!("{}", masks[k + 1].rows()),
                });
            }
        }
        Ok(Self { masks, names })
    }

    pub fn from_masks(masks: Vec<BipartiteMask>) -> Result<Self> {
        let names = (0..masks.len()).map(|k| format!("layer{k}")).collect();
        Self::new(masks, names)
    }

    pub fn masks(&self) -> &[BipartiteMask] {
        &self.masks
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.masks.len() as u32).to_be_bytes())?;
        for mask in &self.masks {
            mask.write_binary(w)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let count = u32::from_be_bytes(buf4) as usize;
        let masks = (0..count)
            .map(|_| BipartiteMask::read_binary(r))
            .collect::<Result<Vec<_>>>()?;
        Self::from_masks(masks)
    }
}

/// Outcome of a percolation pass over a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PercolationReport {
    /// Per layer: row indices whose links were stripped.
    pub removed_input_neurons: Vec<BTreeSet<usize>>,
    /// Per layer: column indices whose links were stripped.
    pub removed_output_neurons: Vec<BTreeSet<usize>>,
    pub removed_link_count: usize,
    /// Active hidden neurons after / hidden neurons before. 1.0 when the
    /// chain has no hidden boundary.
    pub anp: f64,
}

/// Removes hidden neurons lacking links on either side of their boundary,
/// cascading until a fixed point. The outermost boundaries (network inputs
/// and outputs) are never removed. ANP counts hidden-layer neurons only.
pub fn percolate(chain: &MaskChain) -> (MaskChain, PercolationReport) {
    let mut masks = chain.masks().to_vec();
    let layers = masks.len();
    // Boundary b sits between masks[b-1] (cols) and masks[b] (rows),
    // for b in 1..layers. Those are the hidden boundaries.
    let mut removed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); layers + 1];
    let mut removed_link_count = 0;

    let mut changed = true;
    while changed {
        changed = false;
        for b in 1..layers {
            let width = masks[b - 1].cols();
            for h in 0..width {
                if removed[b].contains(&h) {
                    continue;
                }
                let left = masks[b - 1].col_degree(h);
                let right = masks[b].row_degree(h);
                if left == 0 || right == 0 {
                    removed[b].insert(h);
                    removed_link_count += masks[b - 1].clear_col(h);
                    removed_link_count += masks[b].clear_row(h);
                    changed = true;
                }
            }
        }
    }

    let hidden_total: usize = (1..layers).map(|b| masks[b - 1].cols()).sum();
    let hidden_removed: usize = (1..layers).map(|b| removed[b].len()).sum();
    let anp = if hidden_total == 0 {
        1.0
    } else {
        (hidden_total - hidden_removed) as f64 / hidden_total as f64
    };

    let removed_input_neurons = (0..layers).map(|k| removed[k].clone()).collect();
    let removed_output_neurons = (0..layers).map(|k| removed[k + 1].clone()).collect();

    let out = MaskChain::new(masks, chain.names().to_vec())
        .expect("percolation preserves chain dimensions");
    (
        out,
        PercolationReport {
            removed_input_neurons,
            removed_output_neurons,
            removed_link_count,
            anp,
        },
    )
}

/// |removed ∩ regrown| / |regrown|.
pub fn overlap_ratio(removed: &LinkSet, regrown: &LinkSet) -> Result<f64> {
    if regrown.is_empty() {
        return Err(Error::EmptyRegrownSet);
    }
    let overlap = removed.intersection(regrown).count();
    Ok(overlap as f64 / regrown.len() as f64)
}

/// Which links have ever been active, for the ITOP rate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationField {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
    active: usize,
}

impl ActivationField {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![0; (rows * cols).div_ceil(64)], active: 0 }
    }

    pub fn rate(&self) -> f64 {
        if self.rows * self.cols == 0 {
            0.0
        } else {
            self.active as f64 / (self.rows * self.cols) as f64
        }
    }

    /// Unions the mask's links in; returns the updated cumulative rate.
    /// The rate is nondecreasing across calls.
    pub fn update(&mut self, mask: &BipartiteMask) -> Result<f64> {
        if mask.rows() != self.rows || mask.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", mask.rows(), mask.cols()),
            });
        }
        for (i, j) in mask.links() {
            let idx = i * self.cols + j;
            let word = &mut self.bits[idx / 64];
            let bit = 1u64 << (idx % 64);
            if *word & bit == 0 {
                *word |= bit;
                self.active += 1;
            }
        }
        Ok(self.rate())
    }
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
    fn degrees_zero_case() {
        let profile = degrees(&BipartiteMask::empty(3, 3));
        assert_eq!(profile.in_degrees, vec![0, 0, 0]);
        assert_eq!(profile.out_degrees, vec![0, 0, 0]);
    }

    #[test]
    fn degrees_identity_case() {
        let mask = BipartiteMask::from_links(3, 3, (0..3).map(|k| (k, k)));
        let profile = degrees(&mask);
        assert_eq!(profile.in_degrees, vec![1, 1, 1]);
        assert_eq!(profile.out_degrees, vec![1, 1, 1]);
    }

    #[test]
    fn degrees_match_counting_oracle() {
        let mask = random_mask(8, 8, 0.4, 7);
        let profile = degrees(&mask);
        // Naive double loop over entries.
        for i in 0..8 {
            let count = (0..8).filter(|&j| mask.get(i, j)).count();
            assert_eq!(profile.in_degrees[i], count);
        }
        for j in 0..8 {
            let count = (0..8).filter(|&i| mask.get(i, j)).count();
            assert_eq!(profile.out_degrees[j], count);
        }
        assert_eq!(
            profile.in_degrees.iter().sum::<usize>(),
            mask.link_count()
        );
        assert_eq!(
            profile.out_degrees.iter().sum::<usize>(),
            mask.link_count()
        );
    }

    #[test]
    fn percolate_fixed_point_untouched() {
        // Every hidden neuron has a link on both sides.
        let a = BipartiteMask::from_links(2, 2, [(0, 0), (1, 1)]);
        let b = BipartiteMask::from_links(2, 2, [(0, 1), (1, 0)]);
        let chain = MaskChain::from_masks(vec![a, b]).unwrap();
        let (out, report) = percolate(&chain);
        assert_eq!(out, chain);
        assert_eq!(report.removed_link_count, 0);
        assert_eq!(report.anp, 1.0);
    }

    #[test]
    fn percolate_cascades_to_oracle_fixed_point() {
        // 5 hidden neurons on a 2-layer chain; neuron 1 has input links but
        // no output links, and removing it strands nothing else here.
        let a = BipartiteMask::from_links(3, 5, [(0, 0), (1, 1), (2, 1), (2, 2)]);
        let b = BipartiteMask::from_links(5, 2, [(0, 0), (2, 1)]);
        let chain = MaskChain::from_masks(vec![a.clone(), b.clone()]).unwrap();

        // Oracle: repeated scan-and-delete until stable.
        let mut oa = a;
        let mut ob = b;
        let mut removed = BTreeSet::new();
        loop {
            let mut did = false;
            for h in 0..5 {
                if !removed.contains(&h) && (oa.col_degree(h) == 0 || ob.row_degree(h) == 0) {
                    oa.clear_col(h);
                    ob.clear_row(h);
                    removed.insert(h);
                    did = true;
                }
            }
            if !did {
                break;
            }
        }

        let (out, report) = percolate(&chain);
        assert_eq!(out.masks()[0], oa);
        assert_eq!(out.masks()[1], ob);
        assert_eq!(report.removed_output_neurons[0], removed);
        assert_eq!(report.anp, (5 - removed.len()) as f64 / 5.0);
        // Neuron 1 had input links but none out, so it must be gone.
        assert!(removed.contains(&1));
    }

    #[test]
    fn percolate_idempotent() {
        for seed in 0..10 {
            let a = random_mask(6, 8, 0.2, seed);
            let b = random_mask(8, 5, 0.2, seed + 100);
            let chain = MaskChain::from_masks(vec![a, b]).unwrap();
            let (once, _) = percolate(&chain);
            let (twice, report2) = percolate(&once);
            assert_eq!(once, twice);
            assert_eq!(report2.removed_link_count, 0);
        }
    }

    #[test]
    fn percolate_fixed_point_has_no_stranded_hidden_neuron() {
        for seed in 0..20 {
            let a = random_mask(6, 8, 0.15, seed);
            let b = random_mask(8, 6, 0.15, seed + 50);
            let chain = MaskChain::from_masks(vec![a, b]).unwrap();
            let (out, _) = percolate(&chain);
            for h in 0..8 {
                let left = out.masks()[0].col_degree(h);
                let right = out.masks()[1].row_degree(h);
                assert!(
                    (left == 0 && right == 0) || (left > 0 && right > 0),
                    "seed {seed} neuron {h} stranded: left {left} right {right}"
                );
            }
        }
    }

    #[test]
    fn percolate_all_empty_chain() {
        let chain = MaskChain::from_masks(vec![
            BipartiteMask::empty(3, 4),
            BipartiteMask::empty(4, 2),
        ])
        .unwrap();
        let (out, report) = percolate(&chain);
        assert_eq!(out.masks()[0].link_count(), 0);
        assert_eq!(report.anp, 0.0);
    }

    #[test]
    fn overlap_ratio_cases() {
        let a: LinkSet = [(0, 0), (1, 1)].into_iter().collect();
        let b: LinkSet = [(2, 2), (3, 3)].into_iter().collect();
        assert_eq!(overlap_ratio(&a, &a).unwrap(), 1.0);
        assert_eq!(overlap_ratio(&a, &b).unwrap(), 0.0);
        let c: LinkSet = [(0, 0), (2, 2)].into_iter().collect();
        assert_eq!(overlap_ratio(&a, &c).unwrap(), 0.5);
        assert!(matches!(
            overlap_ratio(&a, &LinkSet::new()),
            Err(Error::EmptyRegrownSet)
        ));
    }

    #[test]
    fn itop_union_and_monotonicity() {
        let mut field = ActivationField::new(10, 10);
        let mask = BipartiteMask::from_links(10, 10, (0..10).map(|k| (k, k)));
        let rate = field.update(&mask).unwrap();
        assert_eq!(rate, 0.1);
        // Idempotent union.
        assert_eq!(field.update(&mask).unwrap(), 0.1);
        // Complementary mask brings the rate to 1.0.
        let mut complement = BipartiteMask::full(10, 10);
        for k in 0..10 {
            complement.set(k, k, false);
        }
        assert_eq!(field.update(&complement).unwrap(), 1.0);
    }

    #[test]
    fn itop_dimension_mismatch() {
        let mut field = ActivationField::new(3, 3);
        assert!(field.update(&BipartiteMask::empty(4, 3)).is_err());
    }

    #[test]
    fn binary_roundtrip_and_header() {
        let mask = random_mask(13, 7, 0.3, 3);
        let mut buf = Vec::new();
        mask.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"BPMK");
        assert_eq!(u16::from_be_bytes([buf[4], buf[5]]), 1);
        assert_eq!(u32::from_be_bytes([buf[6], buf[7], buf[8], buf[9]]), 13);
        assert_eq!(u32::from_be_bytes([buf[10], buf[11], buf[12], buf[13]]), 7);
        let back = BipartiteMask::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back, mask);
    }

    #[test]
    fn edge_list_roundtrip() {
        let mask = random_mask(5, 9, 0.25, 11);
        let text = mask.to_edge_list();
        let back = BipartiteMask::from_edge_list(5, 9, &text).unwrap();
        assert_eq!(back, mask);
        assert!(BipartiteMask::from_edge_list(2, 2, "5 0\n").is_err());
    }
}
