//! Salience-sorted row/column permutations.
//!
//! Permutations are index arrays: `forward[i]` is the source index placed at
//! position `i`. The reordered weight is a gather, and inference undoes it by
//! gathering the activation with the column permutation and scattering the
//! output with the row permutation.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::matrix::{Matrix, Vector};
use crate::salience::{row_col_sums, FisherDiagonal};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    pub fn new(forward: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; forward.len()];
        for &i in &forward {
            if i >= forward.len() || std::mem::replace(&mut seen[i], true) {
                return Err(arg_err(format!("not a permutation of 0..{}: index {i}", forward.len())));
            }
        }
        Ok(Self { forward })
    }

    pub fn identity(n: usize) -> Self {
        Self { forward: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn is_identity(&self) -> bool {
        self.forward.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.forward.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            inv[j] = i;
        }
        Self { forward: inv }
    }

    /// `out[i] = src[forward[i]]`.
    pub fn gather<T: Copy>(&self, src: &[T]) -> Vec<T> {
        self.forward.iter().map(|&j| src[j]).collect()
    }

    /// `out[forward[i]] = src[i]`.
    pub fn scatter<T: Copy + Default>(&self, src: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); src.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            out[j] = src[i];
        }
        out
    }
}

/// Stable descending argsort; equal values keep ascending original order.
pub fn argsort_desc(v: &[f32]) -> Permutation {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    Permutation { forward: idx }
}

fn argsort_desc_f64(v: &[f64]) -> Permutation {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    Permutation { forward: idx }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReorderMode {
    #[default]
    None,
    Row,
    Col,
    RowCol,
}

impl ReorderMode {
    /// Code used in the packed-model header.
    pub fn code(self) -> u8 {
        match self {
            Self::None => 0,
            Self::Row => 1,
            Self::Col => 2,
            Self::RowCol => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::None),
            1 => Some(Self::Row),
            2 => Some(Self::Col),
            3 => Some(Self::RowCol),
            _ => None,
        }
    }

    pub fn has_rows(self) -> bool {
        matches!(self, Self::Row | Self::RowCol)
    }

    pub fn has_cols(self) -> bool {
        matches!(self, Self::Col | Self::RowCol)
    }
}

impl std::str::FromStr for ReorderMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "row" => Ok(Self::Row),
            "col" => Ok(Self::Col),
            "rowcol" => Ok(Self::RowCol),
            _ => Err(format!("unknown reorder mode {s:?} (expected none|row|col|rowcol)")),
        }
    }
}

impl std::fmt::Display for ReorderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Row => "row",
            Self::Col => "col",
            Self::RowCol => "rowcol",
        })
    }
}

/// Row and column permutations; absent axes are the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReorderSpec {
    mode: ReorderMode,
    row: Option<Permutation>,
    col: Option<Permutation>,
}

impl ReorderSpec {
    pub fn none() -> Self {
        Self { mode: ReorderMode::None, row: None, col: None }
    }

    pub fn new(row: Option<Permutation>, col: Option<Permutation>) -> Self {
        let mode = match (&row, &col) {
            (None, None) => ReorderMode::None,
            (Some(_), None) => ReorderMode::Row,
            (None, Some(_)) => ReorderMode::Col,
            (Some(_), Some(_)) => ReorderMode::RowCol,
        };
        Self { mode, row, col }
    }

    /// Sorts rows and columns by descending summed salience. Both sorts use
    /// the unpermuted salience matrix.
    pub fn from_salience(s: &FisherDiagonal, mode: ReorderMode) -> Self {
        if mode == ReorderMode::None {
            return Self::none();
        }
        let (rows, cols) = row_col_sums(s.values());
        Self {
            mode,
            row: mode.has_rows().then(|| argsort_desc_f64(&rows)),
            col: mode.has_cols().then(|| argsort_desc_f64(&cols)),
        }
    }

    pub fn mode(&self) -> ReorderMode {
        self.mode
    }

    pub fn row(&self) -> Option<&Permutation> {
        self.row.as_ref()
    }

    pub fn col(&self) -> Option<&Permutation> {
        self.col.as_ref()
    }

    pub fn inverse(&self) -> Self {
        Self {
            mode: self.mode,
            row: self.row.as_ref().map(Permutation::inverse),
            col: self.col.as_ref().map(Permutation::inverse),
        }
    }

    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if let Some(p) = &self.row {
            if p.len() != rows {
                return Err(shape_err(format!("row permutation has length {}, matrix has {rows} rows", p.len())));
            }
        }
        if let Some(p) = &self.col {
            if p.len() != cols {
                return Err(shape_err(format!("col permutation has length {}, matrix has {cols} cols", p.len())));
            }
        }
        Ok(())
    }
}

/// `out[i][j] = w[row[i]][col[j]]`.
pub fn apply_reorder(w: &Matrix, spec: &ReorderSpec) -> Result<Matrix> {
    let (m, n) = w.shape();
    spec.check_shape(m, n)?;
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let src = w.row(spec.row.as_ref().map_or(i, |p| p.forward[i]));
        match &spec.col {
            Some(p) => data.extend(p.forward.iter().map(|&j| src[j])),
            None => data.extend_from_slice(src),
        }
    }
    Matrix::new(m, n, data)
}

/// Gathers the activation into the reordered column order.
pub fn reorder_activation_in(x: &[f32], spec: &ReorderSpec) -> Result<Vector> {
    match &spec.col {
        None => Ok(Vector::from(x)),
        Some(p) if p.len() == x.len() => Ok(p.gather(x).into()),
        Some(p) => Err(shape_err(format!("activation length {} != col permutation length {}", x.len(), p.len()))),
    }
}

/// Scatters a GEMV output back to the original row order.
pub fn reorder_activation_out(y: &[f32], spec: &ReorderSpec) -> Result<Vector> {
    match &spec.row {
        None => Ok(Vector::from(y)),
        Some(p) if p.len() == y.len() => Ok(p.scatter(y).into()),
        Some(p) => Err(shape_err(format!("output length {} != row permutation length {}", y.len(), p.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matmul_reference;

    #[test]
    fn argsort_examples() {
        assert_eq!(argsort_desc(&[3.0, 7.0]).forward(), &[1, 0]);
        assert!(argsort_desc(&[9.0, 4.0, 1.0]).is_identity());
        assert!(argsort_desc(&[2.0; 5]).is_identity());
        assert_eq!(argsort_desc(&[1.0, 5.0, 1.0, 5.0]).forward(), &[1, 3, 0, 2]);
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![2, 0]).is_err());
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(p.inverse().gather(&p.gather(&[10, 20, 30])), vec![10, 20, 30]);
    }

    #[test]
    fn apply_examples() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let spec = ReorderSpec::new(Some(Permutation::new(vec![1, 0]).unwrap()), None);
        assert_eq!(apply_reorder(&w, &spec).unwrap().to_rows(), vec![vec![3.0, 4.0], vec![1.0, 2.0]]);
        assert_eq!(apply_reorder(&w, &ReorderSpec::none()).unwrap(), w);

        let bad = ReorderSpec::new(Some(Permutation::identity(3)), None);
        assert!(apply_reorder(&w, &bad).is_err());
    }

    #[test]
    fn activation_examples() {
        let swap = || Some(Permutation::new(vec![1, 0]).unwrap());
        assert_eq!(reorder_activation_in(&[1.0, 2.0, 3.0], &ReorderSpec::none()).unwrap().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(reorder_activation_in(&[10.0, 20.0], &ReorderSpec::new(None, swap())).unwrap().as_slice(), &[20.0, 10.0]);
        assert_eq!(reorder_activation_out(&[1.0, 2.0], &ReorderSpec::none()).unwrap().as_slice(), &[1.0, 2.0]);
        assert_eq!(reorder_activation_out(&[1.0, 2.0], &ReorderSpec::new(swap(), None)).unwrap().as_slice(), &[2.0, 1.0]);
        assert!(reorder_activation_in(&[1.0], &ReorderSpec::new(None, swap())).is_err());
        assert!(reorder_activation_out(&[1.0, 2.0, 3.0], &ReorderSpec::new(swap(), None)).is_err());
    }

    #[test]
    fn from_salience_sorts_descending() {
        let s = FisherDiagonal::from_values(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), 1).unwrap();
        let spec = ReorderSpec::from_salience(&s, ReorderMode::RowCol);
        assert_eq!(spec.row().unwrap().forward(), &[1, 0]);
        assert_eq!(spec.col().unwrap().forward(), &[1, 0]);
        let spec = ReorderSpec::from_salience(&s, ReorderMode::Col);
        assert!(spec.row().is_none());
        assert_eq!(spec.mode(), ReorderMode::Col);
        assert_eq!(ReorderSpec::from_salience(&s, ReorderMode::None), ReorderSpec::none());
    }

    #[test]
    fn reordered_gemv_matches_reference_small() {
        let w = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f32 * 0.5 - 2.0).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let spec = ReorderSpec::new(
            Some(Permutation::new(vec![2, 0, 1]).unwrap()),
            Some(Permutation::new(vec![3, 1, 0, 2]).unwrap()),
        );
        let wr = apply_reorder(&w, &spec).unwrap();
        let y = matmul_reference(&reorder_activation_in(&x, &spec).unwrap(), &wr).unwrap();
        let y = reorder_activation_out(&y, &spec).unwrap();
        let reference = matmul_reference(&x, &w).unwrap();
        assert!(crate::matrix::relative_l2(&y, &reference).unwrap() < 1e-6);
        assert_eq!(apply_reorder(&wr, &spec.inverse()).unwrap(), w);
    }
}
