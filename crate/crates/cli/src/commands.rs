use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sfmp_core::bench::{bench_dequant_reference, bench_gemv, synthetic_model, BitSpec, SyntheticSpec, CSV_HEADER};
use sfmp_core::pipeline::{
    block_bits_csv, inspect as inspect_model, per_matrix_csv, write_fixture, FileSource, InspectReport, MatrixSource,
    SyntheticSource, VerifyReport,
};
use sfmp_core::{quantize as run_quantize, verify as run_verify, BlockGeometry, Budget, Matrix, MetadataBits, PackedModel, PipelineConfig};

use crate::args::{BenchArgs, GenFixtureArgs, InputArgs, InspectArgs, InspectFormat, QuantizeArgs, VerifyArgs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const MODEL_EXT: &str = "sfmp";

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `[name:]MxN`; unnamed shapes are called `m<index>`.
fn parse_shape(spec: &str, index: usize) -> Result<(String, usize, usize)> {
    let (name, dims) = match spec.split_once(':') {
        Some((n, d)) => (n.to_string(), d),
        None => (format!("m{index}"), spec),
    };
    let preset = match dims {
        "q_proj" => Some((8192, 8192)),
        "down_proj" => Some((8192, 28672)),
        _ => None,
    };
    let (m, n) = match preset {
        Some(p) => p,
        None => {
            let (m, n) = dims.split_once(['x', 'X']).ok_or_else(|| config_err(format!("bad shape {spec:?}, expected MxN")))?;
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| config_err(format!("bad dimension in {spec:?}")));
            (parse(m)?, parse(n)?)
        }
    };
    if m == 0 || n == 0 {
        return Err(config_err(format!("shape {spec:?} has a zero dimension")));
    }
    let name = if preset.is_some() && !spec.contains(':') { dims.to_string() } else { name };
    Ok((name, m, n))
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            let mut out = std::io::stdout().lock();
            let newline = if text.ends_with('\n') { "" } else { "\n" };
            match out.write_all(text.as_bytes()).and_then(|_| out.write_all(newline.as_bytes())).and_then(|_| out.flush()) {
                // a closed reader (e.g. `| head`) is not an error
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    emit(&text, path)
}

fn source_from(input: &InputArgs, samples: usize, seed: u64) -> Result<Box<dyn MatrixSource>> {
    if let Some(manifest) = &input.manifest {
        return Ok(Box::new(FileSource::from_manifest(manifest)?));
    }
    if let (Some(w), Some(g)) = (&input.weights, &input.calib_grads) {
        let name = w.file_stem().and_then(|s| s.to_str()).unwrap_or("weights");
        let name = name.strip_suffix(".weights").unwrap_or(name).to_string();
        return Ok(Box::new(FileSource::single(name, w.clone(), g.clone())));
    }
    if let Some(shapes) = &input.synthetic {
        let shapes = shapes.iter().enumerate().map(|(i, s)| parse_shape(s, i)).collect::<Result<Vec<_>>>()?;
        return Ok(Box::new(SyntheticSource::new(shapes, samples, seed)?));
    }
    Err(config_err("give --manifest, --weights with --calib-grads, or --synthetic"))
}

pub fn quantize(a: &QuantizeArgs) -> Result<()> {
    let budget = match (a.bpw, a.bits) {
        (Some(b), None) => Budget::Bpw(b),
        (None, Some(b)) => Budget::EffectiveBits(b),
        (None, None) => PipelineConfig::default().budget,
        (Some(_), Some(_)) => return Err(config_err("--bpw and --bits are mutually exclusive")),
    };
    let config = PipelineConfig {
        budget,
        block_rows: a.block_rows,
        group_size: a.group_size,
        pad: a.pad,
        reorder: a.reorder.into(),
        scope: a.quantile_scope.into(),
        metadata: MetadataBits { scale_bits: a.scale_bits, zero_bits: a.zero_bits },
    };
    config.plan()?;
    let source = source_from(&a.input, a.samples, a.seed)?;
    let out = run_quantize(&config, source.as_ref())?;

    let single_file = out.models.len() == 1 && a.out.extension().is_some_and(|e| e == MODEL_EXT);
    if single_file {
        if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        out.models[0].model.write_file(&a.out)?;
    } else {
        fs::create_dir_all(&a.out)?;
        for m in &out.models {
            m.model.write_file(&a.out.join(format!("{}.{MODEL_EXT}", m.name)))?;
        }
    }
    emit_json(&out.report, a.report.as_deref())
}

#[derive(Debug, Serialize)]
struct NamedVerify {
    name: String,
    #[serde(flatten)]
    report: VerifyReport,
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    passed: bool,
    tolerance: f64,
    max_rel_l2: f64,
    matrices: Vec<NamedVerify>,
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(config_err(format!("tolerance must be non-negative, got {}", a.tolerance)));
    }
    let check = |name: String, path: &Path, weights: Matrix| -> Result<NamedVerify> {
        let model = PackedModel::read_file(path)?;
        let report = run_verify(&model, &weights, a.tolerance, a.probes, a.seed)?;
        Ok(NamedVerify { name, report })
    };
    let mut matrices = Vec::new();
    if let (Some(model), Some(weights)) = (&a.model, &a.weights) {
        let name = model.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        matrices.push(check(name, model, read_matrix(weights)?)?);
    } else if let (Some(manifest), Some(dir)) = (&a.manifest, &a.models) {
        // one matrix in memory at a time
        let source = FileSource::from_manifest(manifest)?;
        for i in 0..source.len() {
            let name = source.name(i);
            let path = dir.join(format!("{name}.{MODEL_EXT}"));
            matrices.push(check(name, &path, source.weights(i)?)?);
        }
    } else {
        return Err(config_err("give --model with --weights, or --manifest with --models"));
    }
    let max_rel_l2 = matrices.iter().map(|m| m.report.max_rel_l2).fold(0.0, f64::max);
    let passed = matrices.iter().all(|m| m.report.passed);
    let summary = VerifySummary { passed, tolerance: a.tolerance, max_rel_l2, matrices };
    emit_json(&summary, a.report.as_deref())?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Verify(format!("max relative L2 error {max_rel_l2:.3e} exceeds {:.3e}", a.tolerance)))
    }
}

fn read_matrix(path: &Path) -> sfmp_core::Result<Matrix> {
    Matrix::read_from(std::io::BufReader::new(fs::File::open(path)?))
}

fn bit_spec(bits: f64) -> Result<BitSpec> {
    if !(1.0..=8.0).contains(&bits) {
        return Err(config_err(format!("bit-width {bits} outside 1..=8")));
    }
    Ok(if bits.fract() == 0.0 { BitSpec::Uniform(bits as u8) } else { BitSpec::Effective(bits) })
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    if a.reps == 0 {
        return Err(config_err("--reps must be >= 1"));
    }
    let mut csv = format!("{CSV_HEADER}\n");
    let mut push = |row: String| {
        csv.push_str(&row);
        csv.push('\n');
    };
    if !a.model.is_empty() {
        for path in &a.model {
            let model = PackedModel::read_file(path)?;
            let avg = model.bit_map().iter().map(|&b| f64::from(b)).sum::<f64>() / model.bit_map().len() as f64;
            push(bench_gemv(&model, &format!("{avg:.4}"), a.reps)?.csv_row());
            if !a.no_baseline {
                push(bench_dequant_reference(&model, a.reps)?.csv_row());
            }
        }
    } else {
        for (i, s) in a.shape.iter().enumerate() {
            let (_, rows, cols) = parse_shape(s, i)?;
            let mut baseline = None;
            for &bits in &a.bits {
                let spec = SyntheticSpec {
                    rows,
                    cols,
                    geometry: BlockGeometry::new(a.block_rows, a.group_size),
                    bits: bit_spec(bits)?,
                    reorder: a.reorder,
                    seed: a.seed,
                };
                let model = synthetic_model(&spec)?;
                push(bench_gemv(&model, &spec.bits.to_string(), a.reps)?.csv_row());
                if baseline.is_none() && !a.no_baseline {
                    baseline = Some(bench_dequant_reference(&model, a.reps)?);
                }
            }
            if let Some(b) = baseline {
                push(b.csv_row());
            }
        }
    }
    emit(&csv, a.out.as_deref())
}

fn model_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e == MODEL_EXT))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(config_err("no packed models found"));
    }
    Ok(out)
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let paths = model_paths(&a.model)?;
    if a.blocks {
        if paths.len() != 1 {
            return Err(config_err("--blocks takes exactly one model"));
        }
        return emit(&block_bits_csv(&PackedModel::read_file(&paths[0])?), a.out.as_deref());
    }
    let mut reports: Vec<(String, InspectReport)> = Vec::with_capacity(paths.len());
    for p in &paths {
        let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string();
        reports.push((name, inspect_model(&PackedModel::read_file(p)?)?));
    }
    let text = match a.format {
        InspectFormat::Csv => per_matrix_csv(&reports),
        InspectFormat::Json => {
            let map: std::collections::BTreeMap<_, _> = reports.into_iter().collect();
            serde_json::to_string_pretty(&map).map_err(|e| CliError::Io(e.to_string()))?
        }
        InspectFormat::Text => reports.iter().map(|(n, r)| format!("== {n}\n{r}\n")).collect(),
    };
    emit(&text, a.out.as_deref())
}

pub fn gen_fixture(a: &GenFixtureArgs) -> Result<()> {
    let shapes = a.shapes.iter().enumerate().map(|(i, s)| parse_shape(s, i)).collect::<Result<Vec<_>>>()?;
    let source = SyntheticSource::new(shapes, a.samples, a.seed)?;
    let manifest = write_fixture(&a.out, &source)?;
    println!("{}", manifest.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("512x256", 3).unwrap(), ("m3".into(), 512, 256));
        assert_eq!(parse_shape("attn:64X32", 0).unwrap(), ("attn".into(), 64, 32));
        assert_eq!(parse_shape("down_proj", 0).unwrap(), ("down_proj".into(), 8192, 28672));
        assert!(parse_shape("12", 0).is_err());
        assert!(parse_shape("0x8", 0).is_err());
    }

    #[test]
    fn bit_specs() {
        assert_eq!(bit_spec(3.0).unwrap(), BitSpec::Uniform(3));
        assert_eq!(bit_spec(2.5).unwrap(), BitSpec::Effective(2.5));
        assert!(bit_spec(0.5).is_err());
    }
}
