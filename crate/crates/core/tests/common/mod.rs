//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use sfmp_core::layout::quantize_matrix;
use sfmp_core::quantizer::MinMaxQuantizer;
use sfmp_core::{apply_reorder, BlockGeometry, Matrix, PackedModel, Permutation, ReorderMode, ReorderSpec};

pub fn random_matrix(rng: &mut impl RngCore, rows: usize, cols: usize, spread: f32) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-spread..spread)).unwrap()
}

pub fn random_vec(rng: &mut impl RngCore, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_perm(rng: &mut impl RngCore, n: usize) -> Permutation {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    Permutation::new(v).unwrap()
}

pub fn random_spec(rng: &mut impl RngCore, rows: usize, cols: usize, mode: ReorderMode) -> ReorderSpec {
    let row = mode.has_rows().then(|| random_perm(rng, rows));
    let col = mode.has_cols().then(|| random_perm(rng, cols));
    ReorderSpec::new(row, col)
}

/// Quantizes random weights with a random bit map drawn from `mix` and a
/// random reorder of the given mode.
pub fn random_model(
    rng: &mut impl RngCore,
    shape: (usize, usize),
    geometry: BlockGeometry,
    mix: &[u8],
    mode: ReorderMode,
) -> PackedModel {
    let (rows, cols) = shape;
    let w = random_matrix(rng, rows, cols, 0.1);
    let spec = random_spec(rng, rows, cols, mode);
    let (gr, gc) = geometry.grid(rows, cols).unwrap();
    let bit_map: Vec<u8> = (0..gr * gc).map(|_| mix[rng.random_range(0..mix.len())]).collect();
    let floor = *mix.iter().min().unwrap();
    let ceil = *mix.iter().max().unwrap();
    let reordered = apply_reorder(&w, &spec).unwrap();
    quantize_matrix(&reordered, geometry, &bit_map, floor, ceil, spec, &MinMaxQuantizer).unwrap()
}

/// Dense weights in original order, rebuilt straight from stored codes as
/// `scale * code + zero` without going through the crate's dequantizer.
pub fn dense_oracle(model: &PackedModel) -> Matrix {
    let (rows, cols) = model.shape();
    let (mb, nb) = model.block_dims();
    let (_, gc) = model.grid();
    let mut reordered = Matrix::zeros(rows, cols).unwrap();
    for (k, block) in model.blocks().iter().enumerate() {
        let (r0, c0) = ((k / gc) * mb, (k % gc) * nb);
        for r in 0..mb {
            for c in 0..nb {
                let (i, j) = (r0 + r, c0 + c);
                if i >= rows || j >= cols {
                    continue;
                }
                let mut code = 0u32;
                for (bit, plane) in block.planes().iter().enumerate() {
                    let byte = plane[r * nb / 8 + c / 8];
                    code |= u32::from((byte >> (c % 8)) & 1) << bit;
                }
                let v = block.scales()[r].to_f32() * code as f32 + block.zeros()[r].to_f32();
                reordered.set(i, j, v);
            }
        }
    }
    // reordered[a][b] = w[row[a]][col[b]]
    let spec = model.reorder();
    let row_inv = spec.row().map(|p| p.inverse());
    let col_inv = spec.col().map(|p| p.inverse());
    Matrix::from_fn(rows, cols, |i, j| {
        let ri = row_inv.as_ref().map_or(i, |p| p.forward()[i]);
        let cj = col_inv.as_ref().map_or(j, |p| p.forward()[j]);
        reordered.get(ri, cj)
    })
    .unwrap()
}

/// Relative L2 distance in f64.
pub fn rel_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        num += (f64::from(x) - f64::from(y)).powi(2);
        den += f64::from(y).powi(2);
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Reference product in f64, independent of the crate's reference GEMV.
pub fn matvec_f64(x: &[f32], w: &Matrix) -> Vec<f32> {
    (0..w.rows())
        .map(|i| w.row(i).iter().zip(x).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() as f32)
        .collect()
}
