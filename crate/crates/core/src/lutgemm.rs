//! One-bit lookup-table GEMV over block-major packed weights.
//!
//! Activations are split into groups of eight. For each group a table holds
//! the signed sums `sum_k (2*bit_k(p) - 1) * x_k` for every byte pattern
//! `p`. Only the 128 patterns with bit 7 set are stored; the rest follow from
//! `value(p) = -value(!p)`. A packed weight byte indexes the table directly,
//! so a `q`-bit block costs `q` lookups per byte of row and never dequantizes.
//!
//! With the mirror parameters of each row, a block row contributes
//! `scale_hat * sum_i 2^i * sum_g lut_g(plane_i byte) + zero_hat * sum(x)`.
//! Accumulation is f32 throughout, in a fixed order: blocks row-major,
//! planes LSB to MSB, groups left to right.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{arg_err, shape_err, Result};
use crate::layout::{PackedBlock, PackedModel};
use crate::matrix::Vector;
use crate::reorder::{reorder_activation_in, reorder_activation_out};

/// Activations per table; one packed byte indexes one entry.
pub const LUT_GROUP: usize = 8;
const HALF: usize = 1 << (LUT_GROUP - 1);

/// Mirror-compressed table of signed dot products for one activation group.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    entries: [f32; HALF],
}

impl LookupTable {
    /// Builds the half table. Each entry is summed over `k = 0..8` in
    /// ascending order, the same order a direct evaluation uses.
    pub fn new(x: &[f32; LUT_GROUP]) -> Self {
        let mut t = [0.0f32; HALF];
        t[0] = -x[0];
        t[1] = x[0];
        for (j, &xj) in x.iter().enumerate().take(LUT_GROUP - 1).skip(1) {
            let size = 1 << j;
            for p in 0..size {
                let v = t[p];
                t[p] = v - xj;
                t[p | size] = v + xj;
            }
        }
        let top = x[LUT_GROUP - 1];
        for e in &mut t {
            *e += top;
        }
        Self { entries: t }
    }

    pub fn from_slice(x: &[f32]) -> Result<Self> {
        let group: &[f32; LUT_GROUP] = x
            .try_into()
            .map_err(|_| arg_err(format!("lookup table needs {LUT_GROUP} activations, got {}", x.len())))?;
        Ok(Self::new(group))
    }

    /// Stored entries: index `i` holds the value of pattern `0x80 | i`.
    pub fn entries(&self) -> &[f32; HALF] {
        &self.entries
    }

    /// `sum_k (2*bit_k(p) - 1) * x_k`, resolving the unstored half by
    /// negating the complement.
    #[inline(always)]
    pub fn lookup(&self, pattern: u8) -> f32 {
        // 0x00 when bit 7 is set, 0xff otherwise
        let mask = (pattern >> 7).wrapping_sub(1);
        let idx = ((pattern ^ mask) & 0x7f) as usize;
        let sign = u32::from(mask & 0x80) << 24;
        f32::from_bits(self.entries[idx].to_bits() ^ sign)
    }
}

pub fn build_luts(x: &[f32]) -> Result<Vec<LookupTable>> {
    if !x.len().is_multiple_of(LUT_GROUP) {
        return Err(shape_err(format!("activation length {} is not a multiple of {LUT_GROUP}", x.len())));
    }
    Ok(x.chunks_exact(LUT_GROUP)
        .map(|g| LookupTable::new(g.try_into().expect("exact chunk")))
        .collect())
}

/// Tables and per-group activation sums for one activation vector.
#[derive(Debug, Clone)]
pub struct GemvWorkspace {
    luts: Vec<LookupTable>,
    group_sums: Vec<f32>,
}

impl GemvWorkspace {
    pub fn new(x: &[f32]) -> Result<Self> {
        let luts = build_luts(x)?;
        let group_sums = x
            .chunks_exact(LUT_GROUP)
            .map(|g| g.iter().fold(0.0f32, |acc, &v| acc + v))
            .collect();
        Ok(Self { luts, group_sums })
    }

    pub fn luts(&self) -> &[LookupTable] {
        &self.luts
    }

    pub fn width(&self) -> usize {
        self.luts.len() * LUT_GROUP
    }

    /// Sum of the activations in `offset..offset + len`.
    pub fn range_sum(&self, offset: usize, len: usize) -> f32 {
        self.group_sums[offset / LUT_GROUP..(offset + len) / LUT_GROUP]
            .iter()
            .fold(0.0f32, |acc, &v| acc + v)
    }

    fn check_span(&self, block: &PackedBlock, offset: usize) -> Result<()> {
        if !offset.is_multiple_of(LUT_GROUP) || !block.cols().is_multiple_of(LUT_GROUP) || offset + block.cols() > self.width() {
            return Err(arg_err(format!(
                "block columns {offset}..{} do not align with {} activations in groups of {LUT_GROUP}",
                offset + block.cols(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Contribution of one block to its `m_b` output rows, for a block whose
/// first column is `block_col_offset`.
pub fn gemv_block(ws: &GemvWorkspace, block: &PackedBlock, block_col_offset: usize) -> Result<Vec<f32>> {
    ws.check_span(block, block_col_offset)?;
    let mut out = vec![0.0f32; block.rows()];
    let x_sum = ws.range_sum(block_col_offset, block.cols());
    accumulate_block(ws, block, block_col_offset, x_sum, &mut out);
    Ok(out)
}

/// Adds the block's contribution into `out` and returns the lookup count.
#[inline]
fn accumulate_block(ws: &GemvWorkspace, block: &PackedBlock, col_offset: usize, x_sum: f32, out: &mut [f32]) -> u64 {
    let luts = &ws.luts[col_offset / LUT_GROUP..(col_offset + block.cols()) / LUT_GROUP];
    let mut lookups = 0u64;
    for (r, slot) in out.iter_mut().enumerate().take(block.rows()) {
        let mut acc = 0.0f32;
        for i in 0..block.bits() as usize {
            let bytes = block.plane_row(i, r);
            let mut plane = 0.0f32;
            for (lut, &b) in luts.iter().zip(bytes) {
                plane += lut.lookup(b);
            }
            lookups += bytes.len() as u64;
            acc += (1u32 << i) as f32 * plane;
        }
        let m = block.mirror(r);
        *slot += m.scale_hat * acc + m.zero_hat * x_sum;
    }
    lookups
}

/// Instrumentation gathered by [`gemv_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GemvStats {
    /// Table lookups performed; equals `sum_k bits_k * m_b * n_b / 8`.
    pub lookups: u64,
    pub lut_build: Duration,
    pub reorder: Duration,
    pub accumulate: Duration,
}

pub fn gemv(model: &PackedModel, x: &[f32]) -> Result<Vector> {
    gemv_with_stats(model, x).map(|(y, _)| y)
}

pub fn gemv_with_stats(model: &PackedModel, x: &[f32]) -> Result<(Vector, GemvStats)> {
    let mut stats = GemvStats::default();
    let t = Instant::now();
    let xr = prepare_input(model, x)?;
    stats.reorder += t.elapsed();

    let t = Instant::now();
    let ws = GemvWorkspace::new(&xr)?;
    let col_sums = block_col_sums(model, &ws);
    stats.lut_build = t.elapsed();

    let t = Instant::now();
    let (mb, _) = model.block_dims();
    let (_, gc) = model.grid();
    let mut y = vec![0.0f32; model.padded_shape().0];
    for (bi, out) in y.chunks_mut(mb).enumerate() {
        stats.lookups += accumulate_block_row(model, &ws, &col_sums, bi, gc, out);
    }
    stats.accumulate = t.elapsed();

    let t = Instant::now();
    let y = finish_output(model, y)?;
    stats.reorder += t.elapsed();
    if model.reorder().mode() == crate::reorder::ReorderMode::None {
        stats.reorder = Duration::ZERO;
    }
    Ok((y, stats))
}

/// Same result as [`gemv`], with block rows spread over the rayon pool.
/// Each block row owns its output slice, so the result is independent of
/// the thread count.
pub fn gemv_parallel(model: &PackedModel, x: &[f32]) -> Result<Vector> {
    let xr = prepare_input(model, x)?;
    let ws = GemvWorkspace::new(&xr)?;
    let col_sums = block_col_sums(model, &ws);
    let (mb, _) = model.block_dims();
    let (_, gc) = model.grid();
    let mut y = vec![0.0f32; model.padded_shape().0];
    y.par_chunks_mut(mb).enumerate().for_each(|(bi, out)| {
        accumulate_block_row(model, &ws, &col_sums, bi, gc, out);
    });
    finish_output(model, y)
}

fn prepare_input(model: &PackedModel, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != model.cols() {
        return Err(shape_err(format!("activation length {} != model cols {}", x.len(), model.cols())));
    }
    let mut xr = reorder_activation_in(x, model.reorder())?.into_vec();
    xr.resize(model.padded_shape().1, 0.0);
    Ok(xr)
}

fn block_col_sums(model: &PackedModel, ws: &GemvWorkspace) -> Vec<f32> {
    let (_, nb) = model.block_dims();
    (0..model.grid().1).map(|bj| ws.range_sum(bj * nb, nb)).collect()
}

fn accumulate_block_row(
    model: &PackedModel,
    ws: &GemvWorkspace,
    col_sums: &[f32],
    bi: usize,
    gc: usize,
    out: &mut [f32],
) -> u64 {
    let (_, nb) = model.block_dims();
    model.blocks()[bi * gc..(bi + 1) * gc]
        .iter()
        .enumerate()
        .map(|(bj, block)| accumulate_block(ws, block, bj * nb, col_sums[bj], out))
        .sum()
}

fn finish_output(model: &PackedModel, mut y: Vec<f32>) -> Result<Vector> {
    y.truncate(model.rows());
    reorder_activation_out(&y, model.reorder())
}

/// Lookups a full GEMV over `model` performs.
pub fn expected_lookups(model: &PackedModel) -> u64 {
    let (mb, nb) = model.block_dims();
    model.bit_map().iter().map(|&b| u64::from(b) * (mb * nb / LUT_GROUP) as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(x: &[f32], p: u8) -> f32 {
        let mut acc = 0.0f32;
        for (k, &v) in x.iter().enumerate() {
            acc += if p >> k & 1 == 1 { v } else { -v };
        }
        acc
    }

    #[test]
    fn zero_group_table() {
        let t = LookupTable::new(&[0.0; 8]);
        assert!((0..=255u8).all(|p| t.lookup(p) == 0.0));
    }

    #[test]
    fn single_activation_table() {
        let t = LookupTable::new(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for p in 0..=255u8 {
            assert_eq!(t.lookup(p), if p & 1 == 1 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn table_matches_brute_force() {
        let x = [0.3f32, -1.7, 2.25, 1e-3, -0.5, 7.0, 0.125, -3.3];
        let t = LookupTable::new(&x);
        for p in 0..=255u8 {
            assert_eq!(t.lookup(p), brute(&x, p), "pattern {p:#010b}");
        }
    }

    #[test]
    fn build_luts_validates_length() {
        assert_eq!(build_luts(&[1.0; 24]).unwrap().len(), 3);
        assert!(build_luts(&[1.0; 12]).is_err());
        assert!(LookupTable::from_slice(&[1.0; 7]).is_err());
    }

    #[test]
    fn workspace_range_sums() {
        let x: Vec<f32> = (0..32).map(|i| i as f32).collect();
        let ws = GemvWorkspace::new(&x).unwrap();
        assert_eq!(ws.width(), 32);
        assert_eq!(ws.range_sum(8, 16), (8..24).sum::<i32>() as f32);
    }
}
