//! Dense row-major matrices, vectors, and the exact reference GEMV.
//!
//! Every quantized execution path in this crate is checked against
//! [`matmul_reference`], which accumulates in `f32` with ascending index
//! order so its output is reproducible bit-for-bit.

use std::io::{Read, Write};
use std::ops::{Deref, DerefMut};

use crate::error::{arg_err, shape_err, FormatError, Result};

/// Magic prefix of the binary matrix file.
pub const MATRIX_MAGIC: [u8; 8] = *b"SFMPMAT0";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(shape_err(format!("matrix dims must be >= 1, got {rows}x{cols}")));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| shape_err(format!("{rows}x{cols} overflows usize")))?;
        if data.len() != expected {
            return Err(shape_err(format!(
                "{rows}x{cols} matrix needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows.saturating_mul(cols)])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.saturating_mul(cols));
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f32>> {
        self.data.chunks(self.cols).map(<[f32]>::to_vec).collect()
    }

    /// Writes the `SFMPMAT0` encoding: magic, rows and cols as u64 LE,
    /// then row-major f32 LE values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MATRIX_MAGIC)?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact_or(&mut r, &mut magic, "matrix magic")?;
        if magic != MATRIX_MAGIC {
            return Err(FormatError::BadMagic { expected: MATRIX_MAGIC, found: magic }.into());
        }
        let mut word = [0u8; 8];
        read_exact_or(&mut r, &mut word, "matrix rows")?;
        let rows = u64::from_le_bytes(word);
        read_exact_or(&mut r, &mut word, "matrix cols")?;
        let cols = u64::from_le_bytes(word);
        let count = rows
            .checked_mul(cols)
            .and_then(|c| usize::try_from(c).ok())
            .filter(|c| c.checked_mul(4).is_some())
            .ok_or_else(|| FormatError::Invalid(format!("matrix dims {rows}x{cols} too large")))?;
        if rows == 0 || cols == 0 {
            return Err(FormatError::Invalid(format!("matrix dims {rows}x{cols}")).into());
        }
        let mut bytes = Vec::new();
        r.by_ref().take(count as u64 * 4).read_to_end(&mut bytes)?;
        if bytes.len() != count * 4 {
            return Err(FormatError::Truncated("matrix data").into());
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(rows as usize, cols as usize, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.data.len() * 4);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(FormatError::Truncated(what).into()),
        Err(e) => Err(e.into()),
    }
}

/// A dense activation or output vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(data: Vec<f32>) -> Self {
        Self(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm_l2(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

impl Deref for Vector {
    type Target = [f32];
    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f32] {
        &mut self.0
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

impl From<&[f32]> for Vector {
    fn from(v: &[f32]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<f32> for Vector {
    fn from_iter<I: IntoIterator<Item = f32>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// `out[i] = sum_k x[k] * w[i][k]`, accumulated in f32 with `k` ascending.
pub fn matmul_reference(x: &[f32], w: &Matrix) -> Result<Vector> {
    if x.len() != w.cols() {
        return Err(shape_err(format!(
            "activation length {} does not match weight cols {}",
            x.len(),
            w.cols()
        )));
    }
    Ok((0..w.rows())
        .map(|i| {
            let mut acc = 0.0f32;
            for (&a, &b) in x.iter().zip(w.row(i)) {
                acc += a * b;
            }
            acc
        })
        .collect())
}

pub fn transpose(w: &Matrix) -> Matrix {
    let (m, n) = w.shape();
    let mut data = vec![0.0f32; m * n];
    for i in 0..m {
        for (j, &v) in w.row(i).iter().enumerate() {
            data[j * m + i] = v;
        }
    }
    Matrix { rows: n, cols: m, data }
}

/// Relative L2 distance `|a - b| / |b|`; falls back to the absolute
/// distance when the reference is identically zero.
pub fn relative_l2(actual: &[f32], reference: &[f32]) -> Result<f64> {
    if actual.len() != reference.len() {
        return Err(arg_err(format!(
            "cannot compare vectors of length {} and {}",
            actual.len(),
            reference.len()
        )));
    }
    let mut diff = 0.0f64;
    let mut base = 0.0f64;
    for (&a, &b) in actual.iter().zip(reference) {
        let d = f64::from(a) - f64::from(b);
        diff += d * d;
        base += f64::from(b) * f64::from(b);
    }
    if base == 0.0 {
        Ok(diff.sqrt())
    } else {
        Ok((diff / base).sqrt())
    }
}
