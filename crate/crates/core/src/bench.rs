//! Latency harness for the LUT GEMV and synthetic packed models to feed it.

use std::time::{Duration, Instant};

use half::f16;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::allocation::{allocate, BitPlan, MetadataBits, QuantileScope};
use crate::error::{arg_err, Result};
use crate::layout::{pack_block, PackedModel};
use crate::lutgemm::gemv_with_stats;
use crate::matrix::matmul_reference;
use crate::quantizer::{max_code, QuantGroup};
use crate::reorder::{reorder_activation_in, reorder_activation_out, Permutation, ReorderMode, ReorderSpec};
use crate::salience::{BlockGeometry, BlockSalience};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BitSpec {
    /// Every block at this width.
    Uniform(u8),
    /// Effective weight bits; blocks split between floor and ceil by
    /// allocation over random saliences.
    Effective(f64),
}

impl std::fmt::Display for BitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Uniform(b) => write!(f, "{b}"),
            Self::Effective(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub cols: usize,
    pub geometry: BlockGeometry,
    pub bits: BitSpec,
    pub reorder: bool,
    pub seed: u64,
}

/// Random codes and parameters in a valid packed model; no quantization
/// pass, so large shapes are cheap to build.
pub fn synthetic_model(spec: &SyntheticSpec) -> Result<PackedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (gr, gc) = spec.geometry.grid(spec.rows, spec.cols)?;
    let k = gr * gc;
    let (floor, ceil, bit_map) = match spec.bits {
        BitSpec::Uniform(b) => (b, b, vec![b; k]),
        BitSpec::Effective(b) => {
            let plan = BitPlan::from_effective_bits(b, spec.geometry.block_rows, spec.geometry.block_cols, MetadataBits::default())?;
            let sal: Vec<BlockSalience> =
                (0..k).map(|block_index| BlockSalience { block_index, value: rng.random::<f64>() }).collect();
            let mut alloc = allocate(&plan, &[sal], QuantileScope::Global)?;
            (plan.floor_bits, plan.ceil_bits, alloc.maps.remove(0).bits)
        }
    };
    let (mb, nb) = (spec.geometry.block_rows, spec.geometry.block_cols);
    let blocks = bit_map
        .iter()
        .map(|&bits| {
            let groups: Vec<QuantGroup> = (0..mb)
                .map(|_| {
                    let scale = f16::from_f32(rng.random_range(0.005..0.05));
                    let zero = f16::from_f32(rng.random_range(-0.2..-0.01));
                    let codes = (0..nb).map(|_| rng.random_range(0..=max_code(bits))).collect();
                    QuantGroup { scale, zero, bits, codes }
                })
                .collect();
            pack_block(&groups)
        })
        .collect::<Result<Vec<_>>>()?;
    let reorder = if spec.reorder {
        let mut rows: Vec<usize> = (0..spec.rows).collect();
        let mut cols: Vec<usize> = (0..spec.cols).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        ReorderSpec::new(Some(Permutation::new(rows)?), Some(Permutation::new(cols)?))
    } else {
        ReorderSpec::none()
    };
    PackedModel::new((spec.rows, spec.cols), (mb, nb), floor, ceil, reorder, blocks)
}

/// Latency summary for one benchmark configuration. Times are in
/// microseconds; percentiles are absent for single-repetition runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchStats {
    pub shape: String,
    pub bits: String,
    pub reps: usize,
    pub median_us: f64,
    pub p10_us: Option<f64>,
    pub p90_us: Option<f64>,
    pub lut_build_us: f64,
    pub reorder_us: f64,
    pub lookups_count: u64,
}

pub const CSV_HEADER: &str = "shape,bits,median_us,p10_us,p90_us,lut_build_us,reorder_us,lookups_count";

impl BenchStats {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_default();
        format!(
            "{},{},{:.3},{},{},{:.3},{:.3},{}",
            self.shape,
            self.bits,
            self.median_us,
            opt(self.p10_us),
            opt(self.p90_us),
            self.lut_build_us,
            self.reorder_us,
            self.lookups_count
        )
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn random_activation(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Times `reps` LUT GEMVs after one warm-up call.
pub fn bench_gemv(model: &PackedModel, label: &str, reps: usize) -> Result<BenchStats> {
    if reps == 0 {
        return Err(arg_err("repetitions must be >= 1"));
    }
    let x = random_activation(model.cols(), 0x5eed);
    let (_, warm) = gemv_with_stats(model, &x)?;
    let mut total = Vec::with_capacity(reps);
    let mut lut = Vec::with_capacity(reps);
    let mut reorder = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let (y, stats) = gemv_with_stats(model, &x)?;
        total.push(us(t.elapsed()));
        std::hint::black_box(y);
        lut.push(us(stats.lut_build));
        reorder.push(us(stats.reorder));
    }
    Ok(summarize(model, label, total, lut, reorder, warm.lookups))
}

/// Dense baseline: dequantized weights times the activation through
/// [`matmul_reference`], including the activation reorder.
pub fn bench_dequant_reference(model: &PackedModel, reps: usize) -> Result<BenchStats> {
    if reps == 0 {
        return Err(arg_err("repetitions must be >= 1"));
    }
    let w = model.dequantize_reordered();
    let x = random_activation(model.cols(), 0x5eed);
    let mut total = Vec::with_capacity(reps);
    let mut reorder = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        let xr = reorder_activation_in(&x, model.reorder())?;
        let t_in = t.elapsed();
        let y = matmul_reference(&xr, &w)?;
        let t_out = Instant::now();
        let y = reorder_activation_out(&y, model.reorder())?;
        let reorder_time = if model.reorder().mode() == ReorderMode::None { Duration::ZERO } else { t_in + t_out.elapsed() };
        reorder.push(us(reorder_time));
        total.push(us(t.elapsed()));
        std::hint::black_box(y);
    }
    Ok(summarize(model, "dequant-ref", total, vec![0.0; reps], reorder, 0))
}

fn summarize(model: &PackedModel, label: &str, mut total: Vec<f64>, mut lut: Vec<f64>, mut reorder: Vec<f64>, lookups: u64) -> BenchStats {
    let reps = total.len();
    let median_us = median(&mut total);
    let (p10_us, p90_us) = if reps > 1 { (Some(percentile(&total, 0.1)), Some(percentile(&total, 0.9))) } else { (None, None) };
    BenchStats {
        shape: format!("{}x{}", model.rows(), model.cols()),
        bits: label.to_string(),
        reps,
        median_us,
        p10_us,
        p90_us,
        lut_build_us: median(&mut lut),
        reorder_us: median(&mut reorder),
        lookups_count: lookups,
    }
}
