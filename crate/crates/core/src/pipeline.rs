//! End-to-end driver: salience, reorder, partition, allocate, quantize, pack,
//! plus the verification and inspection passes over packed models.
//!
//! Quantization runs in three phases over a [`MatrixSource`]. The first
//! computes each matrix's permutations and block saliences, the second is
//! the single allocation pass (pooled across matrices in global scope), and
//! the third loads each weight again to quantize and pack it. Only
//! permutations and block saliences are held between phases.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, bpw_report, BitPlan, BlockBitMap, BpwReport, MetadataBits, QuantileScope};
use crate::error::{arg_err, shape_err, Result};
use crate::layout::{quantize_matrix, PackedModel};
use crate::lutgemm::gemv;
use crate::matrix::{matmul_reference, relative_l2, Matrix};
use crate::quantizer::{GroupQuantizer, MinMaxQuantizer};
use crate::reorder::{apply_reorder, ReorderMode, ReorderSpec};
use crate::salience::{accumulate_fisher_from_path, block_salience_of, BlockGeometry, FisherAccumulator, FisherDiagonal};

/// How the bit budget is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Total bits per weight including scale/zero storage.
    Bpw(f64),
    /// Bits per weight spent on codes only.
    EffectiveBits(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReorderChoice {
    /// `none` at 4 or more effective bits, `rowcol` below.
    #[default]
    Auto,
    Fixed(ReorderMode),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub budget: Budget,
    pub block_rows: usize,
    pub group_size: usize,
    pub pad: bool,
    pub reorder: ReorderChoice,
    pub scope: QuantileScope,
    pub metadata: MetadataBits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            budget: Budget::Bpw(3.25),
            block_rows: 256,
            group_size: 128,
            pad: false,
            reorder: ReorderChoice::Auto,
            scope: QuantileScope::Global,
            metadata: MetadataBits::default(),
        }
    }
}

impl PipelineConfig {
    pub fn plan(&self) -> Result<BitPlan> {
        if self.group_size == 0 || !self.group_size.is_multiple_of(8) {
            return Err(arg_err(format!("group size {} must be a positive multiple of 8", self.group_size)));
        }
        if self.block_rows == 0 {
            return Err(arg_err("block rows must be >= 1"));
        }
        match self.budget {
            Budget::Bpw(b) => BitPlan::from_budget(b, self.block_rows, self.group_size, self.metadata),
            Budget::EffectiveBits(b) => BitPlan::from_effective_bits(b, self.block_rows, self.group_size, self.metadata),
        }
    }

    pub fn geometry(&self) -> BlockGeometry {
        BlockGeometry::new(self.block_rows, self.group_size).with_padding(self.pad)
    }

    pub fn reorder_mode(&self, plan: &BitPlan) -> ReorderMode {
        match self.reorder {
            ReorderChoice::Fixed(m) => m,
            ReorderChoice::Auto if plan.effective_bits >= 4.0 => ReorderMode::None,
            ReorderChoice::Auto => ReorderMode::RowCol,
        }
    }
}

/// Named weight matrices with their salience, loaded on demand.
pub trait MatrixSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn name(&self, index: usize) -> String;

    fn weights(&self, index: usize) -> Result<Matrix>;

    fn salience(&self, index: usize) -> Result<FisherDiagonal>;
}

/// Matrices already in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemorySource {
    entries: Vec<(String, Matrix, FisherDiagonal)>,
}

impl InMemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, weights: Matrix, salience: FisherDiagonal) -> &mut Self {
        self.entries.push((name.into(), weights, salience));
        self
    }
}

impl MatrixSource for InMemorySource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn name(&self, index: usize) -> String {
        self.entries[index].0.clone()
    }

    fn weights(&self, index: usize) -> Result<Matrix> {
        Ok(self.entries[index].1.clone())
    }

    fn salience(&self, index: usize) -> Result<FisherDiagonal> {
        Ok(self.entries[index].2.clone())
    }
}

/// One manifest entry: paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub weights: PathBuf,
    pub gradients: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub matrices: Vec<ManifestEntry>,
}

/// Weight files and gradient samples on disk.
#[derive(Debug, Clone)]
pub struct FileSource {
    base: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl FileSource {
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| arg_err(format!("bad manifest {}: {e}", path.display())))?;
        if manifest.matrices.is_empty() {
            return Err(arg_err("manifest lists no matrices"));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { base, entries: manifest.matrices })
    }

    pub fn single(name: impl Into<String>, weights: PathBuf, gradients: PathBuf) -> Self {
        Self { base: PathBuf::new(), entries: vec![ManifestEntry { name: name.into(), weights, gradients }] }
    }
}

impl MatrixSource for FileSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn name(&self, index: usize) -> String {
        self.entries[index].name.clone()
    }

    fn weights(&self, index: usize) -> Result<Matrix> {
        let path = self.base.join(&self.entries[index].weights);
        Matrix::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    fn salience(&self, index: usize) -> Result<FisherDiagonal> {
        accumulate_fisher_from_path(&self.base.join(&self.entries[index].gradients))
    }
}

/// Seeded fixture generator: normal weights and gradients whose magnitude
/// is concentrated on a few rows and columns.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    shapes: Vec<(String, usize, usize)>,
    samples: usize,
    seed: u64,
}

impl SyntheticSource {
    pub fn new(shapes: Vec<(String, usize, usize)>, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(arg_err("need at least one gradient sample"));
        }
        Ok(Self { shapes, samples, seed })
    }

    fn rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((index as u64) << 8) | stream);
        rng
    }

    pub fn gradient_samples(&self, index: usize) -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(self.samples);
        self.for_each_gradient(index, |g| {
            out.push(g);
            Ok(())
        })?;
        Ok(out)
    }

    fn for_each_gradient(&self, index: usize, mut f: impl FnMut(Matrix) -> Result<()>) -> Result<()> {
        let (_, m, n) = self.shapes[index];
        let mut rng = self.rng(index, 1);
        let spread = LogNormal::new(0.0, 1.0).expect("valid distribution");
        let row_scale: Vec<f32> = (0..m).map(|_| spread.sample(&mut rng)).collect();
        let col_scale: Vec<f32> = (0..n).map(|_| spread.sample(&mut rng)).collect();
        let noise = Normal::new(0.0f32, 1e-3).expect("valid distribution");
        for _ in 0..self.samples {
            let mut data = Vec::with_capacity(m * n);
            for &rs in &row_scale {
                data.extend(col_scale.iter().map(|&cs| noise.sample(&mut rng) * rs * cs));
            }
            f(Matrix::new(m, n, data)?)?;
        }
        Ok(())
    }
}

impl MatrixSource for SyntheticSource {
    fn len(&self) -> usize {
        self.shapes.len()
    }

    fn name(&self, index: usize) -> String {
        self.shapes[index].0.clone()
    }

    fn weights(&self, index: usize) -> Result<Matrix> {
        let (_, m, n) = self.shapes[index];
        let mut rng = self.rng(index, 0);
        let normal = Normal::new(0.0f32, 0.02).expect("valid distribution");
        let data = (0..m * n).map(|_| normal.sample(&mut rng)).collect();
        Matrix::new(m, n, data)
    }

    fn salience(&self, index: usize) -> Result<FisherDiagonal> {
        let mut acc = FisherAccumulator::new();
        self.for_each_gradient(index, |g| acc.push(&g))?;
        acc.finish()
    }
}

/// Writes a synthetic source to disk as weight files, gradient streams and a
/// `manifest.json`. Returns the manifest path.
pub fn write_fixture(dir: &Path, source: &SyntheticSource) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut matrices = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let name = source.name(i);
        let weights = PathBuf::from(format!("{name}.weights.bin"));
        let gradients = PathBuf::from(format!("{name}.grads.bin"));
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(&weights))?);
        source.weights(i)?.write_to(&mut w)?;
        let g = std::io::BufWriter::new(std::fs::File::create(dir.join(&gradients))?);
        crate::salience::write_gradient_stream(g, &source.gradient_samples(i)?)?;
        matrices.push(ManifestEntry { name, weights, gradients });
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&Manifest { matrices }).expect("manifest serializes");
    std::fs::write(&path, text)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub blocks_total: usize,
    pub blocks_high: usize,
    pub average_bits: f64,
    pub achieved_bpw: f64,
    /// Salience cut used for this matrix; absent when no block was raised.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeReport {
    pub target_bpw: f64,
    pub effective_bits: f64,
    pub alpha: f64,
    pub floor_bits: u8,
    pub ceil_bits: u8,
    pub blocks_total: usize,
    pub blocks_high: usize,
    pub achieved_bpw: f64,
    pub metadata_bpw: f64,
    pub sub_two_bit: bool,
    pub reorder_mode: ReorderMode,
    pub quantile_scope: QuantileScope,
    pub allocation_passes: u32,
    pub allocation_comparisons: u64,
    pub matrices: Vec<MatrixReport>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub model: PackedModel,
}

#[derive(Debug, Clone)]
pub struct QuantizeOutput {
    pub models: Vec<NamedModel>,
    pub bpw: BpwReport,
    pub report: QuantizeReport,
}

struct Prepared {
    shape: (usize, usize),
    reorder: ReorderSpec,
    saliences: Vec<crate::salience::BlockSalience>,
}

pub fn quantize(config: &PipelineConfig, source: &dyn MatrixSource) -> Result<QuantizeOutput> {
    quantize_with(config, source, &MinMaxQuantizer)
}

pub fn quantize_with(config: &PipelineConfig, source: &dyn MatrixSource, quantizer: &dyn GroupQuantizer) -> Result<QuantizeOutput> {
    let start = Instant::now();
    let plan = config.plan()?;
    if source.is_empty() {
        return Err(arg_err("nothing to quantize"));
    }
    let mode = config.reorder_mode(&plan);
    let geometry = config.geometry();

    let prepared = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let s = source.salience(i)?;
            let reorder = ReorderSpec::from_salience(&s, mode);
            let reordered = apply_reorder(s.values(), &reorder)?;
            let saliences = block_salience_of(&reordered, geometry)?;
            Ok(Prepared { shape: s.shape(), reorder, saliences })
        })
        .collect::<Result<Vec<_>>>()?;

    let pools: Vec<_> = prepared.iter().map(|p| p.saliences.clone()).collect();
    let mut allocation_passes = 0u32;
    let allocation = allocate(&plan, &pools, config.scope)?;
    allocation_passes += 1;

    let results = prepared
        .into_par_iter()
        .zip(allocation.maps.par_iter())
        .enumerate()
        .map(|(i, (prep, map))| {
            let w = source.weights(i)?;
            if w.shape() != prep.shape {
                return Err(shape_err(format!(
                    "{}: weights {:?} do not match salience {:?}",
                    source.name(i),
                    w.shape(),
                    prep.shape
                )));
            }
            let reordered = apply_reorder(&w, &prep.reorder)?;
            let model = quantize_matrix(&reordered, geometry, &map.bits, plan.floor_bits, plan.ceil_bits, prep.reorder, quantizer)?;
            let bpw = bpw_report(map, &plan, w.shape())?;
            let report = matrix_report(source.name(i), &model, map, &bpw);
            Ok((NamedModel { name: source.name(i), model }, bpw, report))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut models = Vec::with_capacity(results.len());
    let mut bpws = Vec::with_capacity(results.len());
    let mut matrices = Vec::with_capacity(results.len());
    for (m, b, r) in results {
        models.push(m);
        bpws.push(b);
        matrices.push(r);
    }
    let bpw = BpwReport::combine(&plan, &bpws);
    let report = QuantizeReport {
        target_bpw: plan.target_bpw,
        effective_bits: plan.effective_bits,
        alpha: plan.alpha,
        floor_bits: plan.floor_bits,
        ceil_bits: plan.ceil_bits,
        blocks_total: bpw.blocks_total,
        blocks_high: bpw.blocks_high,
        achieved_bpw: bpw.achieved_bpw,
        metadata_bpw: bpw.metadata_bpw(),
        sub_two_bit: bpw.sub_two_bit,
        reorder_mode: mode,
        quantile_scope: config.scope,
        allocation_passes,
        allocation_comparisons: allocation.comparisons,
        matrices,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(QuantizeOutput { models, bpw, report })
}

fn matrix_report(name: String, model: &PackedModel, map: &BlockBitMap, bpw: &BpwReport) -> MatrixReport {
    MatrixReport {
        name,
        rows: model.rows(),
        cols: model.cols(),
        blocks_total: bpw.blocks_total,
        blocks_high: bpw.blocks_high,
        average_bits: map.average_bits(),
        achieved_bpw: bpw.achieved_bpw,
        threshold: map.threshold.is_finite().then_some(map.threshold),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub probes: usize,
    pub tolerance: f64,
    pub max_rel_l2: f64,
    pub passed: bool,
    /// Relative Frobenius error of the dequantized weights against the
    /// originals (informational).
    pub quantization_rel_l2: f64,
}

/// Checks the LUT path of `model` against a dense reference rebuilt from
/// the original weights. The reference re-quantizes `weights` with the
/// model's permutations and bit map, so corruption of the stored planes or
/// parameters shows up as error. Probe 0 is the zero vector.
pub fn verify(model: &PackedModel, weights: &Matrix, tolerance: f64, probes: usize, seed: u64) -> Result<VerifyReport> {
    verify_with(model, weights, tolerance, probes, seed, &MinMaxQuantizer)
}

pub fn verify_with(
    model: &PackedModel,
    weights: &Matrix,
    tolerance: f64,
    probes: usize,
    seed: u64,
    quantizer: &dyn GroupQuantizer,
) -> Result<VerifyReport> {
    if weights.shape() != model.shape() {
        return Err(shape_err(format!("weights {:?} do not match model {:?}", weights.shape(), model.shape())));
    }
    if probes == 0 {
        return Err(arg_err("need at least one probe"));
    }
    let (mb, nb) = model.block_dims();
    let reordered = apply_reorder(weights, model.reorder())?;
    let expected = quantize_matrix(
        &reordered,
        BlockGeometry::new(mb, nb).with_padding(true),
        model.bit_map(),
        model.floor_bits(),
        model.ceil_bits(),
        model.reorder().clone(),
        quantizer,
    )?;
    let reference_w = expected.dequantize();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_l2 = 0.0f64;
    for p in 0..probes {
        let x: Vec<f32> =
            if p == 0 { vec![0.0; model.cols()] } else { (0..model.cols()).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let y = gemv(model, &x)?;
        let y_ref = matmul_reference(&x, &reference_w)?;
        max_rel_l2 = max_rel_l2.max(relative_l2(&y, &y_ref)?);
    }
    let quantization_rel_l2 = relative_l2(model.dequantize().as_slice(), weights.as_slice())?;
    Ok(VerifyReport { probes, tolerance, max_rel_l2, passed: max_rel_l2 <= tolerance, quantization_rel_l2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub rows: usize,
    pub cols: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub floor_bits: u8,
    pub ceil_bits: u8,
    pub reorder_mode: ReorderMode,
    pub blocks_total: usize,
    /// Block count per bit-width.
    pub histogram: BTreeMap<u8, usize>,
    pub average_bits: f64,
    pub achieved_bpw: f64,
    pub file_bytes: usize,
}

/// Summarizes a packed model. Scale and zero-point are f16, so the BPW
/// includes 32 metadata bits per row group.
pub fn inspect(model: &PackedModel) -> Result<InspectReport> {
    let (mb, nb) = model.block_dims();
    let mut histogram = BTreeMap::new();
    for &b in model.bit_map() {
        *histogram.entry(b).or_insert(0) += 1;
    }
    let map = BlockBitMap { bits: model.bit_map().to_vec(), threshold: f64::INFINITY };
    let plan = BitPlan::from_effective_bits(f64::from(model.floor_bits()), mb, nb, MetadataBits::default())?;
    let plan = BitPlan { ceil_bits: model.ceil_bits(), ..plan };
    let bpw = bpw_report(&map, &plan, model.shape())?;
    Ok(InspectReport {
        rows: model.rows(),
        cols: model.cols(),
        block_rows: mb,
        block_cols: nb,
        floor_bits: model.floor_bits(),
        ceil_bits: model.ceil_bits(),
        reorder_mode: model.reorder().mode(),
        blocks_total: map.len(),
        histogram,
        average_bits: map.average_bits(),
        achieved_bpw: bpw.achieved_bpw,
        file_bytes: model.serialized_len(),
    })
}

impl std::fmt::Display for InspectReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "shape           {} x {}", self.rows, self.cols)?;
        writeln!(f, "block           {} x {}", self.block_rows, self.block_cols)?;
        writeln!(f, "candidate bits  {{{}, {}}}", self.floor_bits, self.ceil_bits)?;
        writeln!(f, "reorder         {}", self.reorder_mode)?;
        writeln!(f, "blocks          {}", self.blocks_total)?;
        for (bits, count) in &self.histogram {
            let pct = 100.0 * *count as f64 / self.blocks_total as f64;
            let bar = "#".repeat((pct / 2.0).round() as usize);
            writeln!(f, "  {bits}-bit  {count:>8}  {pct:6.2}%  {bar}")?;
        }
        writeln!(f, "average bits    {:.4}", self.average_bits)?;
        writeln!(f, "achieved BPW    {:.4}", self.achieved_bpw)?;
        write!(f, "file bytes      {}", self.file_bytes)
    }
}

/// `block_row,block_col,bits` for every block, for external plotting.
pub fn block_bits_csv(model: &PackedModel) -> String {
    let (_, gc) = model.grid();
    let mut out = String::from("block_row,block_col,bits\n");
    for (k, &b) in model.bit_map().iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", k / gc, k % gc, b));
    }
    out
}

/// One row per matrix: `name,rows,cols,blocks,average_bits,achieved_bpw`.
pub fn per_matrix_csv(models: &[(String, InspectReport)]) -> String {
    let mut out = String::from("name,rows,cols,blocks,average_bits,achieved_bpw\n");
    for (name, r) in models {
        out.push_str(&format!(
            "{name},{},{},{},{:.4},{:.4}\n",
            r.rows, r.cols, r.blocks_total, r.average_bits, r.achieved_bpw
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(shapes: &[(usize, usize)]) -> SyntheticSource {
        let shapes = shapes.iter().enumerate().map(|(i, &(m, n))| (format!("m{i}"), m, n)).collect();
        SyntheticSource::new(shapes, 2, 7).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig { group_size: 12, ..PipelineConfig::default() };
        assert!(bad.plan().is_err());
        let bad = PipelineConfig { budget: Budget::Bpw(0.2), ..PipelineConfig::default() };
        assert!(bad.plan().is_err());
        let bad = PipelineConfig { block_rows: 0, ..PipelineConfig::default() };
        assert!(bad.plan().is_err());
    }

    #[test]
    fn auto_reorder_preset() {
        let cfg = PipelineConfig { budget: Budget::EffectiveBits(4.0), ..PipelineConfig::default() };
        assert_eq!(cfg.reorder_mode(&cfg.plan().unwrap()), ReorderMode::None);
        let cfg = PipelineConfig { budget: Budget::EffectiveBits(3.5), ..PipelineConfig::default() };
        assert_eq!(cfg.reorder_mode(&cfg.plan().unwrap()), ReorderMode::RowCol);
    }

    #[test]
    fn quantize_512x256_reports_3_75() {
        let cfg = PipelineConfig {
            budget: Budget::EffectiveBits(3.5),
            block_rows: 512,
            group_size: 128,
            ..PipelineConfig::default()
        };
        let out = quantize(&cfg, &synthetic(&[(512, 256)])).unwrap();
        assert_eq!(out.report.achieved_bpw, 3.75);
        assert_eq!(out.report.blocks_high, 1);
        assert_eq!(out.report.allocation_passes, 1);
    }

    #[test]
    fn integral_budget_has_no_high_blocks() {
        let cfg = PipelineConfig { budget: Budget::EffectiveBits(3.0), block_rows: 16, group_size: 32, ..PipelineConfig::default() };
        let out = quantize(&cfg, &synthetic(&[(64, 64)])).unwrap();
        assert_eq!(out.report.blocks_high, 0);
        let hist = inspect(&out.models[0].model).unwrap().histogram;
        assert_eq!(hist.len(), 1);
    }

    #[test]
    fn verify_passes_then_detects_corruption() {
        let cfg = PipelineConfig { budget: Budget::EffectiveBits(2.5), block_rows: 16, group_size: 32, ..PipelineConfig::default() };
        let src = synthetic(&[(64, 96)]);
        let out = quantize(&cfg, &src).unwrap();
        let w = src.weights(0).unwrap();
        let mut model = out.models[0].model.clone();
        let ok = verify(&model, &w, 1e-4, 4, 1).unwrap();
        assert!(ok.passed, "{ok:?}");

        let block = &mut model.blocks_mut()[0];
        let top = block.planes().len() - 1;
        block.planes_mut()[top][0] ^= 0xff;
        let bad = verify(&model, &w, 1e-4, 4, 1).unwrap();
        assert!(!bad.passed);
        assert!(bad.max_rel_l2 > 1e-4);
        assert!(verify(&model, &Matrix::zeros(3, 3).unwrap(), 1e-4, 4, 1).is_err());
    }

    #[test]
    fn inspect_summary() {
        let cfg = PipelineConfig { budget: Budget::EffectiveBits(2.5), block_rows: 8, group_size: 32, ..PipelineConfig::default() };
        let out = quantize(&cfg, &synthetic(&[(64, 64)])).unwrap();
        let r = inspect(&out.models[0].model).unwrap();
        assert_eq!(r.histogram.get(&2), Some(&8));
        assert_eq!(r.histogram.get(&3), Some(&8));
        assert_eq!(r.achieved_bpw, out.report.achieved_bpw);
        assert!(r.to_string().contains("3-bit"));
        assert_eq!(block_bits_csv(&out.models[0].model).lines().count(), 17);
    }

    #[test]
    fn file_source_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let src = synthetic(&[(32, 32), (16, 64)]);
        let manifest = write_fixture(dir.path(), &src).unwrap();
        let files = FileSource::from_manifest(&manifest).unwrap();
        assert_eq!(files.len(), 2);
        assert_eq!(files.weights(1).unwrap(), src.weights(1).unwrap());
        assert_eq!(files.salience(0).unwrap(), src.salience(0).unwrap());
    }
}
