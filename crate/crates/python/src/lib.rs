//! Python bindings. Matrices cross the boundary as lists of rows (any
//! nested sequence of floats, including 2-D numpy arrays); reports come back
//! as plain dicts.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use sfmp_core::bench::{bench_gemv as core_bench_gemv, synthetic_model as core_synthetic_model, BitSpec, SyntheticSpec};
use sfmp_core::lutgemm::gemv_with_stats;
use sfmp_core::pipeline::{inspect as core_inspect, InMemorySource};
use sfmp_core::{
    BlockGeometry, Budget, Error, GradientSample, Matrix, MetadataBits, PipelineConfig, QuantileScope, ReorderChoice,
    ReorderMode,
};

type Rows = Vec<Vec<f32>>;
type NamedInput = (String, Rows, Vec<Rows>);
type NamedModels = Vec<(String, PyPackedModel)>;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py)
}

fn json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn reorder_choice(name: &str) -> PyResult<ReorderChoice> {
    if name == "auto" {
        return Ok(ReorderChoice::Auto);
    }
    name.parse::<ReorderMode>().map(ReorderChoice::Fixed).map_err(PyValueError::new_err)
}

fn scope(name: &str) -> PyResult<QuantileScope> {
    match name {
        "global" => Ok(QuantileScope::Global),
        "per-matrix" | "per_matrix" => Ok(QuantileScope::PerMatrix),
        _ => Err(PyValueError::new_err(format!("unknown quantile scope {name:?} (expected global|per-matrix)"))),
    }
}

/// A quantized matrix in block-major packed form.
#[pyclass(name = "PackedModel", module = "sfmp", frozen)]
pub struct PyPackedModel {
    inner: sfmp_core::PackedModel,
}

#[pymethods]
impl PyPackedModel {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        sfmp_core::PackedModel::deserialize(data).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        sfmp_core::PackedModel::read_file(&path).map(|inner| Self { inner }).map_err(to_py)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.write_file(&path).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.serialize())
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    #[getter]
    fn block_dims(&self) -> (usize, usize) {
        self.inner.block_dims()
    }

    /// Per-block bit-widths, block-row-major.
    #[getter]
    fn bit_map(&self) -> Vec<u32> {
        self.inner.bit_map().iter().map(|&b| u32::from(b)).collect()
    }

    #[getter]
    fn candidate_bits(&self) -> (u8, u8) {
        (self.inner.floor_bits(), self.inner.ceil_bits())
    }

    #[getter]
    fn reorder_mode(&self) -> String {
        self.inner.reorder().mode().to_string()
    }

    /// LUT GEMV `y = W x` in the original row and column order.
    fn gemv(&self, py: Python<'_>, x: Vec<f32>) -> PyResult<Vec<f32>> {
        py.detach(|| sfmp_core::gemv(&self.inner, &x)).map(|y| y.into_vec()).map_err(to_py)
    }

    /// Like `gemv`, also returning the number of table lookups performed.
    fn gemv_with_stats(&self, py: Python<'_>, x: Vec<f32>) -> PyResult<(Vec<f32>, u64)> {
        py.detach(|| gemv_with_stats(&self.inner, &x)).map(|(y, s)| (y.into_vec(), s.lookups)).map_err(to_py)
    }

    /// Dense weights reconstructed from the stored codes.
    fn dequantize(&self) -> Vec<Vec<f32>> {
        self.inner.dequantize().to_rows()
    }

    fn inspect<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json(py, &core_inspect(&self.inner).map_err(to_py)?)
    }

    fn __repr__(&self) -> String {
        let (m, n) = self.inner.shape();
        let (mb, nb) = self.inner.block_dims();
        format!(
            "PackedModel({m}x{n}, blocks {mb}x{nb}, bits {{{}, {}}}, reorder {})",
            self.inner.floor_bits(),
            self.inner.ceil_bits(),
            self.inner.reorder().mode()
        )
    }
}

/// Quantizes `(name, weights, gradient_samples)` triples under one shared
/// budget. Give exactly one of `bpw` (total) or `bits` (codes only).
/// Returns `([(name, PackedModel), ...], report)` in input order.
#[pyfunction]
#[pyo3(signature = (matrices, *, bpw=None, bits=None, group_size=128, block_rows=256, reorder="auto", quantile_scope="global", pad=false, scale_bits=16, zero_bits=16))]
#[allow(clippy::too_many_arguments)]
fn quantize<'py>(
    py: Python<'py>,
    matrices: Vec<NamedInput>,
    bpw: Option<f64>,
    bits: Option<f64>,
    group_size: usize,
    block_rows: usize,
    reorder: &str,
    quantile_scope: &str,
    pad: bool,
    scale_bits: u32,
    zero_bits: u32,
) -> PyResult<(NamedModels, Bound<'py, PyAny>)> {
    let budget = match (bpw, bits) {
        (Some(b), None) => Budget::Bpw(b),
        (None, Some(b)) => Budget::EffectiveBits(b),
        _ => return Err(PyValueError::new_err("give exactly one of bpw or bits")),
    };
    let config = PipelineConfig {
        budget,
        block_rows,
        group_size,
        pad,
        reorder: reorder_choice(reorder)?,
        scope: scope(quantile_scope)?,
        metadata: MetadataBits { scale_bits, zero_bits },
    };
    let mut source = InMemorySource::new();
    for (name, w, grads) in matrices {
        let samples = grads.into_iter().map(|g| matrix(g).map(GradientSample)).collect::<PyResult<Vec<_>>>()?;
        let fisher = sfmp_core::accumulate_fisher(&samples).map_err(to_py)?;
        source.push(name, matrix(w)?, fisher);
    }
    let out = py.detach(|| sfmp_core::quantize(&config, &source)).map_err(to_py)?;
    let report = json(py, &out.report)?;
    let models = out.models.into_iter().map(|m| (m.name, PyPackedModel { inner: m.model })).collect();
    Ok((models, report))
}

/// Checks the LUT GEMV of `model` against a dense reference rebuilt from
/// `weights`.
#[pyfunction]
#[pyo3(signature = (model, weights, tolerance=1e-4, probes=8, seed=0))]
fn verify<'py>(
    py: Python<'py>,
    model: &PyPackedModel,
    weights: Vec<Vec<f32>>,
    tolerance: f64,
    probes: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let w = matrix(weights)?;
    let report = py.detach(|| sfmp_core::verify(&model.inner, &w, tolerance, probes, seed)).map_err(to_py)?;
    json(py, &report)
}

/// Mean of squared gradients.
#[pyfunction]
fn accumulate_fisher(samples: Vec<Vec<Vec<f32>>>) -> PyResult<Vec<Vec<f32>>> {
    let samples = samples.into_iter().map(|g| matrix(g).map(GradientSample)).collect::<PyResult<Vec<_>>>()?;
    Ok(sfmp_core::accumulate_fisher(&samples).map_err(to_py)?.values().to_rows())
}

/// `(floor_bits, ceil_bits, alpha)` for a fractional weight bit-width.
#[pyfunction]
fn candidate_bits(effective_bits: f64) -> PyResult<(u8, u8, f64)> {
    sfmp_core::candidate_bits(effective_bits).map_err(to_py)
}

/// Weight bits left after charging scale and zero-point storage per group.
#[pyfunction]
#[pyo3(signature = (target_bpw, group_size, scale_bits=16, zero_bits=16))]
fn effective_weight_bits(target_bpw: f64, group_size: usize, scale_bits: u32, zero_bits: u32) -> PyResult<f64> {
    sfmp_core::effective_weight_bits(target_bpw, group_size, MetadataBits { scale_bits, zero_bits }).map_err(to_py)
}

/// `(threshold, selected_indices)` for the top `round(alpha * K)` saliences.
#[pyfunction]
fn quantile_threshold(saliences: Vec<f64>, alpha: f64) -> PyResult<(f64, Vec<usize>)> {
    let sel = sfmp_core::quantile_threshold(&saliences, alpha).map_err(to_py)?;
    Ok((sel.threshold, sel.selected))
}

/// 0/1 planes of `codes`, least significant first.
#[pyfunction]
fn decompose_bitplanes(codes: Vec<u8>, bits: u8) -> PyResult<Vec<Vec<u32>>> {
    let planes = sfmp_core::decompose_bitplanes(&codes, bits).map_err(to_py)?;
    // u8 vectors would surface as bytes objects
    Ok(planes.into_iter().map(|p| p.into_iter().map(u32::from).collect()).collect())
}

/// Stable descending argsort.
#[pyfunction]
fn argsort_desc(values: Vec<f32>) -> Vec<usize> {
    sfmp_core::argsort_desc(&values).forward().to_vec()
}

#[pyfunction]
fn matmul_reference(x: Vec<f32>, w: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
    Ok(sfmp_core::matmul_reference(&x, &matrix(w)?).map_err(to_py)?.into_vec())
}

/// Packed model with random codes; integral `bits` gives a uniform width,
/// fractional `bits` a floor/ceil mix.
#[pyfunction]
#[pyo3(signature = (rows, cols, bits, *, block_rows=256, group_size=128, reorder=false, seed=0))]
fn synthetic_model(
    rows: usize,
    cols: usize,
    bits: f64,
    block_rows: usize,
    group_size: usize,
    reorder: bool,
    seed: u64,
) -> PyResult<PyPackedModel> {
    let bits = if bits.fract() == 0.0 && (1.0..=8.0).contains(&bits) {
        BitSpec::Uniform(bits as u8)
    } else {
        BitSpec::Effective(bits)
    };
    let spec = SyntheticSpec { rows, cols, geometry: BlockGeometry::new(block_rows, group_size), bits, reorder, seed };
    core_synthetic_model(&spec).map(|inner| PyPackedModel { inner }).map_err(to_py)
}

/// Latency statistics of `reps` LUT GEMVs, in microseconds.
#[pyfunction]
#[pyo3(signature = (model, reps=20))]
fn bench_gemv<'py>(py: Python<'py>, model: &PyPackedModel, reps: usize) -> PyResult<Bound<'py, PyAny>> {
    let map = model.inner.bit_map();
    let label = format!("{:.4}", map.iter().map(|&b| f64::from(b)).sum::<f64>() / map.len() as f64);
    let stats = py.detach(|| core_bench_gemv(&model.inner, &label, reps)).map_err(to_py)?;
    json(py, &stats)
}

#[pymodule]
fn sfmp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPackedModel>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(accumulate_fisher, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_bits, m)?)?;
    m.add_function(wrap_pyfunction!(effective_weight_bits, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(decompose_bitplanes, m)?)?;
    m.add_function(wrap_pyfunction!(argsort_desc, m)?)?;
    m.add_function(wrap_pyfunction!(matmul_reference, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_model, m)?)?;
    m.add_function(wrap_pyfunction!(bench_gemv, m)?)?;
    Ok(())
}
