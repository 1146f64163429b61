//! Global weight salience: the Fisher diagonal estimated as the mean of
//! squared calibration gradients, and its row, column and block aggregates.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::{arg_err, shape_err, Result};
use crate::matrix::{read_exact_or, Matrix, Vector};

/// One calibration gradient with the shape of the weight it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample(pub Matrix);

impl GradientSample {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

impl From<Matrix> for GradientSample {
    fn from(m: Matrix) -> Self {
        Self(m)
    }
}

/// Mean squared gradient per weight. Values are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiagonal {
    values: Matrix,
    sample_count: usize,
}

impl FisherDiagonal {
    /// Wraps an externally computed salience matrix. Negative or non-finite
    /// entries are rejected.
    pub fn from_values(values: Matrix, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(arg_err("sample_count must be >= 1"));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(arg_err(format!("salience values must be finite and >= 0, found {v}")));
        }
        Ok(Self { values, sample_count })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }
}

/// Streaming form of [`accumulate_fisher`]; squares are summed in f64.
#[derive(Debug, Clone)]
pub struct FisherAccumulator {
    shape: Option<(usize, usize)>,
    sums: Vec<f64>,
    count: usize,
}

impl Default for FisherAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl FisherAccumulator {
    pub fn new() -> Self {
        Self { shape: None, sums: Vec::new(), count: 0 }
    }

    pub fn push(&mut self, grad: &Matrix) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(grad.shape());
                self.sums = vec![0.0; grad.len()];
            }
            Some(shape) if shape != grad.shape() => {
                return Err(shape_err(format!(
                    "gradient sample {} has shape {:?}, expected {:?}",
                    self.count,
                    grad.shape(),
                    shape
                )));
            }
            Some(_) => {}
        }
        for (acc, &g) in self.sums.iter_mut().zip(grad.as_slice()) {
            let g = f64::from(g);
            *acc += g * g;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Result<FisherDiagonal> {
        let (rows, cols) = self.shape.ok_or_else(|| arg_err("no gradient samples"))?;
        let n = self.count as f64;
        let data = self.sums.into_iter().map(|s| (s / n) as f32).collect();
        Ok(FisherDiagonal { values: Matrix::new(rows, cols, data)?, sample_count: self.count })
    }
}

/// `F[i][j] = (1/N) * sum_n grad_n[i][j]^2`.
pub fn accumulate_fisher(samples: &[GradientSample]) -> Result<FisherDiagonal> {
    if samples.is_empty() {
        return Err(arg_err("accumulate_fisher needs at least one gradient sample"));
    }
    let mut acc = FisherAccumulator::new();
    for s in samples {
        acc.push(&s.0)?;
    }
    acc.finish()
}

/// Accumulates gradients read from `path`, which is either a directory of
/// `SFMPMAT0` files (consumed in file-name order) or a single stream file
/// holding a u64 LE sample count followed by that many `SFMPMAT0` matrices.
pub fn accumulate_fisher_from_path(path: &Path) -> Result<FisherDiagonal> {
    let mut acc = FisherAccumulator::new();
    if path.is_dir() {
        for file in gradient_files(path)? {
            let m = Matrix::read_from(BufReader::new(File::open(&file)?))?;
            acc.push(&m)?;
        }
    } else {
        let mut r = BufReader::new(File::open(path)?);
        let count = read_stream_count(&mut r)?;
        for _ in 0..count {
            acc.push(&Matrix::read_from(&mut r)?)?;
        }
    }
    acc.finish()
}

fn gradient_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

fn read_stream_count<R: Read>(r: &mut R) -> Result<u64> {
    let mut word = [0u8; 8];
    read_exact_or(r, &mut word, "gradient stream count")?;
    Ok(u64::from_le_bytes(word))
}

/// Writes samples in the concatenated stream format read by
/// [`accumulate_fisher_from_path`].
pub fn write_gradient_stream<W: std::io::Write>(mut w: W, samples: &[Matrix]) -> Result<()> {
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        s.write_to(&mut w)?;
    }
    Ok(())
}

/// Row sums and column sums of the salience matrix, accumulated in f64.
pub fn row_col_salience(s: &FisherDiagonal) -> (Vector, Vector) {
    let (rows, cols) = row_col_sums(s.values());
    (
        rows.into_iter().map(|v| v as f32).collect(),
        cols.into_iter().map(|v| v as f32).collect(),
    )
}

pub(crate) fn row_col_sums(s: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0f64; s.rows()];
    let mut cols = vec![0.0f64; s.cols()];
    for (i, row_sum) in rows.iter_mut().enumerate() {
        for (j, &v) in s.row(i).iter().enumerate() {
            let v = f64::from(v);
            *row_sum += v;
            cols[j] += v;
        }
    }
    (rows, cols)
}

/// Summed salience of one `m_b x n_b` tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSalience {
    pub block_index: usize,
    pub value: f64,
}

/// How a matrix is tiled into blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGeometry {
    pub block_rows: usize,
    pub block_cols: usize,
    /// Zero-pad shapes that are not multiples of the block dims.
    pub pad: bool,
}

impl BlockGeometry {
    pub fn new(block_rows: usize, block_cols: usize) -> Self {
        Self { block_rows, block_cols, pad: false }
    }

    pub fn with_padding(mut self, pad: bool) -> Self {
        self.pad = pad;
        self
    }

    /// Number of block rows and block columns covering `rows x cols`.
    pub fn grid(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(arg_err("block dims must be >= 1"));
        }
        if !self.pad && (!rows.is_multiple_of(self.block_rows) || !cols.is_multiple_of(self.block_cols)) {
            return Err(shape_err(format!(
                "{rows}x{cols} is not divisible into {}x{} blocks (enable padding to allow this)",
                self.block_rows, self.block_cols
            )));
        }
        Ok((rows.div_ceil(self.block_rows), cols.div_ceil(self.block_cols)))
    }

    pub fn block_count(&self, rows: usize, cols: usize) -> Result<usize> {
        let (br, bc) = self.grid(rows, cols)?;
        Ok(br * bc)
    }
}

/// Block sums in block-row-major order. Padded cells contribute zero.
pub fn block_salience(s: &FisherDiagonal, geometry: BlockGeometry) -> Result<Vec<BlockSalience>> {
    block_salience_of(s.values(), geometry)
}

pub(crate) fn block_salience_of(s: &Matrix, geometry: BlockGeometry) -> Result<Vec<BlockSalience>> {
    let (m, n) = s.shape();
    let (grid_rows, grid_cols) = geometry.grid(m, n)?;
    let mut sums = vec![0.0f64; grid_rows * grid_cols];
    for i in 0..m {
        let base = (i / geometry.block_rows) * grid_cols;
        for (j, &v) in s.row(i).iter().enumerate() {
            sums[base + j / geometry.block_cols] += f64::from(v);
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(block_index, value)| BlockSalience { block_index, value })
        .collect())
}

/// Per-sample gradient of `0.5 * |W x - t|^2` with respect to `W`,
/// i.e. `(W x - t) x^T`.
pub fn toy_linear_gradients(w: &Matrix, inputs: &[Vector], targets: &[Vector]) -> Result<Vec<GradientSample>> {
    if inputs.len() != targets.len() {
        return Err(shape_err(format!("{} inputs but {} targets", inputs.len(), targets.len())));
    }
    let (m, n) = w.shape();
    inputs
        .iter()
        .zip(targets)
        .map(|(x, t)| {
            if x.len() != n || t.len() != m {
                return Err(shape_err(format!(
                    "sample shapes x={} t={} do not fit a {m}x{n} weight",
                    x.len(),
                    t.len()
                )));
            }
            let y = crate::matrix::matmul_reference(x, w)?;
            let residual: Vec<f32> = y.iter().zip(t.iter()).map(|(a, b)| a - b).collect();
            Matrix::from_fn(m, n, |i, j| residual[i] * x[j]).map(GradientSample)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f32>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn fisher(rows: &[Vec<f32>]) -> FisherDiagonal {
        FisherDiagonal::from_values(mat(rows), 1).unwrap()
    }

    #[test]
    fn fisher_examples() {
        let f = accumulate_fisher(&[mat(&[vec![1.0, -1.0]]).into(), mat(&[vec![3.0, 1.0]]).into()]).unwrap();
        assert_eq!(f.values().as_slice(), &[5.0, 1.0]);
        assert_eq!(f.sample_count(), 2);

        let f = accumulate_fisher(&[Matrix::zeros(2, 3).unwrap().into()]).unwrap();
        assert!(f.values().as_slice().iter().all(|&v| v == 0.0));

        let f = accumulate_fisher(&[mat(&[vec![2.0]]).into()]).unwrap();
        assert_eq!(f.values().as_slice(), &[4.0]);
    }

    #[test]
    fn fisher_errors() {
        assert!(matches!(accumulate_fisher(&[]), Err(crate::Error::InvalidArgument(_))));
        let a = Matrix::zeros(1, 2).unwrap().into();
        let b = Matrix::zeros(2, 1).unwrap().into();
        assert!(matches!(accumulate_fisher(&[a, b]), Err(crate::Error::Shape(_))));
        assert!(FisherDiagonal::from_values(mat(&[vec![-1.0]]), 1).is_err());
    }

    #[test]
    fn row_col_examples() {
        let (r, c) = row_col_salience(&fisher(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert_eq!(r.as_slice(), &[3.0, 7.0]);
        assert_eq!(c.as_slice(), &[4.0, 6.0]);

        let (r, c) = row_col_salience(&fisher(&[vec![0.0; 3], vec![0.0; 3]]));
        assert!(r.iter().chain(c.iter()).all(|&v| v == 0.0));

        let (r, c) = row_col_salience(&fisher(&[vec![1.0, 5.0, 2.0]]));
        assert_eq!(r.as_slice(), &[8.0]);
        assert_eq!(c.as_slice(), &[1.0, 5.0, 2.0]);
    }

    #[test]
    fn block_salience_examples() {
        let s = fisher(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b = block_salience(&s, BlockGeometry::new(1, 2)).unwrap();
        assert_eq!(b.iter().map(|b| b.value).collect::<Vec<_>>(), vec![3.0, 7.0]);

        let b = block_salience(&s, BlockGeometry::new(2, 2)).unwrap();
        assert_eq!(b, vec![BlockSalience { block_index: 0, value: 10.0 }]);

        let ones = FisherDiagonal::from_values(Matrix::from_fn(4, 4, |_, _| 1.0).unwrap(), 1).unwrap();
        let b = block_salience(&ones, BlockGeometry::new(2, 2)).unwrap();
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|b| b.value == 4.0));
    }

    #[test]
    fn block_salience_padding() {
        let s = fisher(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert!(matches!(block_salience(&s, BlockGeometry::new(2, 2)), Err(crate::Error::Shape(_))));
        let b = block_salience(&s, BlockGeometry::new(2, 2).with_padding(true)).unwrap();
        assert_eq!(b.iter().map(|b| b.value).collect::<Vec<_>>(), vec![12.0, 9.0]);
    }

    #[test]
    fn toy_gradient_examples() {
        let eye = mat(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let g = toy_linear_gradients(&eye, &[vec![1.0, 0.0].into()], &[vec![0.0, 0.0].into()]).unwrap();
        assert_eq!(g[0].matrix().as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let x: Vector = vec![0.5, -2.0].into();
        let t = crate::matrix::matmul_reference(&x, &eye).unwrap();
        let g = toy_linear_gradients(&eye, &[x], &[t]).unwrap();
        assert!(g[0].matrix().as_slice().iter().all(|&v| v == 0.0));

        let g = toy_linear_gradients(&mat(&[vec![2.0]]), &[vec![1.0].into()], &[vec![0.0].into()]).unwrap();
        assert_eq!(g[0].matrix().as_slice(), &[2.0]);

        assert!(toy_linear_gradients(&eye, &[vec![1.0].into()], &[vec![0.0, 0.0].into()]).is_err());
    }

    #[test]
    fn gradient_files_dir_and_stream() {
        let dir = tempfile::tempdir().unwrap();
        let g1 = mat(&[vec![1.0, -1.0]]);
        let g2 = mat(&[vec![3.0, 1.0]]);
        let grads = dir.path().join("grads");
        std::fs::create_dir(&grads).unwrap();
        std::fs::write(grads.join("000.bin"), g1.to_bytes()).unwrap();
        std::fs::write(grads.join("001.bin"), g2.to_bytes()).unwrap();
        let f = accumulate_fisher_from_path(&grads).unwrap();
        assert_eq!(f.values().as_slice(), &[5.0, 1.0]);

        let stream = dir.path().join("grads.stream");
        let mut buf = Vec::new();
        write_gradient_stream(&mut buf, &[g1, g2]).unwrap();
        std::fs::write(&stream, &buf).unwrap();
        let f2 = accumulate_fisher_from_path(&stream).unwrap();
        assert_eq!(f, f2);

        std::fs::write(&stream, &buf[..buf.len() - 3]).unwrap();
        assert!(accumulate_fisher_from_path(&stream).is_err());
    }
}
