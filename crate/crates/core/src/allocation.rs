//! Fractional bit-width allocation.
//!
//! A target budget `b` (bits per weight after metadata) is realized by
//! giving the `round(alpha * K)` most salient blocks `ceil(b)` bits and the
//! rest `floor(b)` bits, where `alpha = b - floor(b)`. Selection is a single
//! sort over block saliences; there is no search or refinement loop.

use std::cell::Cell;
use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::salience::{BlockGeometry, BlockSalience};

/// Largest supported weight bit-width (codes are stored in `u8`).
pub const MAX_BITS: u8 = 8;

/// Slack absorbed when rounding `alpha * K`, so that e.g. `0.3 * 5` lands on
/// the half-way point instead of just below it.
const COUNT_EPS: f64 = 1e-9;

/// Bits spent per group on the scale and zero-point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataBits {
    pub scale_bits: u32,
    pub zero_bits: u32,
}

impl Default for MetadataBits {
    fn default() -> Self {
        Self { scale_bits: 16, zero_bits: 16 }
    }
}

impl MetadataBits {
    pub const NONE: Self = Self { scale_bits: 0, zero_bits: 0 };

    pub fn per_group(&self) -> u64 {
        u64::from(self.scale_bits) + u64::from(self.zero_bits)
    }
}

/// Returns `(floor(b), ceil(b), b - floor(b))`.
pub fn candidate_bits(effective_bits: f64) -> Result<(u8, u8, f64)> {
    if !effective_bits.is_finite() || effective_bits < 1.0 {
        return Err(arg_err(format!("effective bits must be >= 1, got {effective_bits}")));
    }
    let lo = effective_bits.floor();
    let hi = effective_bits.ceil();
    if hi > f64::from(MAX_BITS) {
        return Err(arg_err(format!("effective bits {effective_bits} exceed the {MAX_BITS}-bit maximum")));
    }
    Ok((lo as u8, hi as u8, effective_bits - lo))
}

/// Bits left for weight codes once scale/zero storage is paid for.
pub fn effective_weight_bits(target_bpw: f64, group_size: usize, meta: MetadataBits) -> Result<f64> {
    if group_size == 0 {
        return Err(arg_err("group size must be >= 1"));
    }
    let overhead = meta.per_group() as f64 / group_size as f64;
    if target_bpw.is_nan() || target_bpw <= overhead {
        return Err(arg_err(format!(
            "budget {target_bpw} BPW does not exceed the metadata overhead {overhead}"
        )));
    }
    Ok(target_bpw - overhead)
}

/// The resolved fractional bit-width decision for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BitPlan {
    pub target_bpw: f64,
    pub effective_bits: f64,
    pub floor_bits: u8,
    pub ceil_bits: u8,
    pub alpha: f64,
    /// Block width `n_b`, which is also the quantization group length.
    pub group_size: usize,
    /// Block height `m_b`.
    pub block_rows: usize,
    pub metadata: MetadataBits,
}

impl BitPlan {
    /// Plan from a total bits-per-weight budget that includes metadata.
    pub fn from_budget(target_bpw: f64, block_rows: usize, group_size: usize, metadata: MetadataBits) -> Result<Self> {
        let effective = effective_weight_bits(target_bpw, group_size, metadata)?;
        Self::build(target_bpw, effective, block_rows, group_size, metadata)
    }

    /// Plan from the weight-only bit-width; the budget is derived by adding
    /// the metadata overhead.
    pub fn from_effective_bits(
        effective_bits: f64,
        block_rows: usize,
        group_size: usize,
        metadata: MetadataBits,
    ) -> Result<Self> {
        if group_size == 0 {
            return Err(arg_err("group size must be >= 1"));
        }
        let target = effective_bits + metadata.per_group() as f64 / group_size as f64;
        Self::build(target, effective_bits, block_rows, group_size, metadata)
    }

    fn build(target_bpw: f64, effective_bits: f64, block_rows: usize, group_size: usize, metadata: MetadataBits) -> Result<Self> {
        if block_rows == 0 {
            return Err(arg_err("block rows must be >= 1"));
        }
        let (floor_bits, ceil_bits, alpha) = candidate_bits(effective_bits)?;
        Ok(Self { target_bpw, effective_bits, floor_bits, ceil_bits, alpha, group_size, block_rows, metadata })
    }

    pub fn geometry(&self) -> BlockGeometry {
        BlockGeometry::new(self.block_rows, self.group_size)
    }

    /// Number of blocks out of `k` that receive `ceil_bits`.
    pub fn high_count(&self, k: usize) -> usize {
        high_block_count(self.alpha, k)
    }
}

/// `round_half_up(alpha * k)`, clamped to `[0, k]`.
pub fn high_block_count(alpha: f64, k: usize) -> usize {
    let raw = (alpha * k as f64 + 0.5 + COUNT_EPS).floor();
    (raw.max(0.0) as usize).min(k)
}

/// Result of rank-based quantile selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Smallest selected salience, or `+inf` when nothing is selected.
    pub threshold: f64,
    /// Selected indices in ascending order.
    pub selected: Vec<usize>,
    /// Comparator invocations spent ranking.
    pub comparisons: u64,
}

/// Picks the `round(alpha * K)` highest-salience entries. Ties are broken
/// toward the lower index, so membership never depends on float equality
/// with the threshold.
pub fn quantile_threshold(block_saliences: &[f64], alpha: f64) -> Result<Selection> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(arg_err(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if block_saliences.is_empty() {
        return Err(arg_err("quantile selection needs at least one block"));
    }
    let count = high_block_count(alpha, block_saliences.len());
    let comparisons = Cell::new(0u64);
    let mut order: Vec<usize> = (0..block_saliences.len()).collect();
    order.sort_by(|&a, &b| {
        comparisons.set(comparisons.get() + 1);
        rank_order(block_saliences[a], a, block_saliences[b], b)
    });
    let mut selected = order[..count].to_vec();
    let threshold = selected
        .iter()
        .map(|&i| block_saliences[i])
        .fold(f64::INFINITY, f64::min);
    selected.sort_unstable();
    Ok(Selection { threshold, selected, comparisons: comparisons.get() })
}

fn rank_order(va: f64, a: usize, vb: f64, b: usize) -> Ordering {
    vb.total_cmp(&va).then(a.cmp(&b))
}

/// Per-block bit-widths in block-row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBitMap {
    pub bits: Vec<u8>,
    pub threshold: f64,
}

impl BlockBitMap {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_with(&self, bits: u8) -> usize {
        self.bits.iter().filter(|&&b| b == bits).count()
    }

    pub fn average_bits(&self) -> f64 {
        self.bits.iter().map(|&b| f64::from(b)).sum::<f64>() / self.bits.len() as f64
    }
}

pub fn allocate_block_bits(plan: &BitPlan, block_saliences: &[BlockSalience]) -> Result<BlockBitMap> {
    let mut maps = allocate(plan, &[block_saliences.to_vec()], QuantileScope::PerMatrix)?;
    Ok(maps.maps.remove(0))
}

/// Whether the salience quantile is taken over every block of every matrix
/// or separately within each matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantileScope {
    #[default]
    Global,
    PerMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub maps: Vec<BlockBitMap>,
    pub comparisons: u64,
}

/// One allocation pass over the block saliences of several matrices.
pub fn allocate(plan: &BitPlan, pools: &[Vec<BlockSalience>], scope: QuantileScope) -> Result<Allocation> {
    if !(0.0..1.0).contains(&plan.alpha) {
        return Err(arg_err(format!("plan alpha must lie in [0, 1), got {}", plan.alpha)));
    }
    if pools.is_empty() || pools.iter().any(Vec::is_empty) {
        return Err(arg_err("allocation needs at least one block per matrix"));
    }
    let paint = |selected: &[usize], len: usize, offset: usize| -> Vec<u8> {
        let mut bits = vec![plan.floor_bits; len];
        for &i in selected {
            if (offset..offset + len).contains(&i) {
                bits[i - offset] = plan.ceil_bits;
            }
        }
        bits
    };
    match scope {
        QuantileScope::Global => {
            let flat: Vec<f64> = pools.iter().flatten().map(|b| b.value).collect();
            let sel = quantile_threshold(&flat, plan.alpha)?;
            let mut offset = 0;
            let maps = pools
                .iter()
                .map(|p| {
                    let m = BlockBitMap { bits: paint(&sel.selected, p.len(), offset), threshold: sel.threshold };
                    offset += p.len();
                    m
                })
                .collect();
            Ok(Allocation { maps, comparisons: sel.comparisons })
        }
        QuantileScope::PerMatrix => {
            let mut comparisons = 0;
            let maps = pools
                .iter()
                .map(|p| {
                    let values: Vec<f64> = p.iter().map(|b| b.value).collect();
                    let sel = quantile_threshold(&values, plan.alpha)?;
                    comparisons += sel.comparisons;
                    Ok(BlockBitMap { bits: paint(&sel.selected, p.len(), 0), threshold: sel.threshold })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Allocation { maps, comparisons })
        }
    }
}

/// Storage accounting for one or more allocated matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpwReport {
    pub target_bpw: f64,
    pub effective_bits: f64,
    pub alpha: f64,
    pub floor_bits: u8,
    pub ceil_bits: u8,
    pub blocks_total: usize,
    pub blocks_high: usize,
    pub weight_count: u64,
    pub weight_bits: u64,
    pub metadata_bits: u64,
    pub achieved_bpw: f64,
    /// Set when the plan uses 1-bit blocks.
    pub sub_two_bit: bool,
}

impl BpwReport {
    pub fn metadata_bpw(&self) -> f64 {
        self.metadata_bits as f64 / self.weight_count as f64
    }

    /// Sums the raw bit counts of several reports sharing one plan.
    pub fn combine(plan: &BitPlan, reports: &[BpwReport]) -> Self {
        let mut out = empty_report(plan);
        for r in reports {
            out.blocks_total += r.blocks_total;
            out.blocks_high += r.blocks_high;
            out.weight_count += r.weight_count;
            out.weight_bits += r.weight_bits;
            out.metadata_bits += r.metadata_bits;
        }
        out.achieved_bpw = achieved(&out);
        out
    }
}

fn empty_report(plan: &BitPlan) -> BpwReport {
    BpwReport {
        target_bpw: plan.target_bpw,
        effective_bits: plan.effective_bits,
        alpha: plan.alpha,
        floor_bits: plan.floor_bits,
        ceil_bits: plan.ceil_bits,
        blocks_total: 0,
        blocks_high: 0,
        weight_count: 0,
        weight_bits: 0,
        metadata_bits: 0,
        achieved_bpw: 0.0,
        sub_two_bit: plan.floor_bits < 2,
    }
}

fn achieved(r: &BpwReport) -> f64 {
    if r.weight_count == 0 {
        0.0
    } else {
        (r.weight_bits + r.metadata_bits) as f64 / r.weight_count as f64
    }
}

/// Counts code bits and scale/zero bits for a `rows x cols` matrix. Padded
/// cells of edge blocks are excluded from both counts.
pub fn bpw_report(bitmap: &BlockBitMap, plan: &BitPlan, shape: (usize, usize)) -> Result<BpwReport> {
    let (rows, cols) = shape;
    let geometry = plan.geometry().with_padding(true);
    let (grid_rows, grid_cols) = geometry.grid(rows, cols)?;
    if bitmap.len() != grid_rows * grid_cols {
        return Err(shape_err(format!(
            "bit map has {} entries but {rows}x{cols} holds {} blocks",
            bitmap.len(),
            grid_rows * grid_cols
        )));
    }
    let mut r = empty_report(plan);
    for (k, &bits) in bitmap.bits.iter().enumerate() {
        let (bi, bj) = (k / grid_cols, k % grid_cols);
        let real_rows = (rows - bi * plan.block_rows).min(plan.block_rows) as u64;
        let real_cols = (cols - bj * plan.group_size).min(plan.group_size) as u64;
        r.weight_bits += u64::from(bits) * real_rows * real_cols;
        r.metadata_bits += real_rows * plan.metadata.per_group();
        if bits == plan.ceil_bits && plan.ceil_bits != plan.floor_bits {
            r.blocks_high += 1;
        }
    }
    r.blocks_total = bitmap.len();
    r.weight_count = (rows * cols) as u64;
    r.achieved_bpw = achieved(&r);
    Ok(r)
}
