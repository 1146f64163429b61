//! Per-group asymmetric uniform quantization and the mirror reparameterization
//! used by the sign-based LUT kernel.

use half::f16;

use crate::allocation::MAX_BITS;
use crate::error::{arg_err, Result};

/// One quantized row segment: `value ~= scale * code + zero`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGroup {
    pub scale: f16,
    pub zero: f16,
    pub bits: u8,
    pub codes: Vec<u8>,
}

impl QuantGroup {
    pub fn new(scale: f16, zero: f16, bits: u8, codes: Vec<u8>) -> Result<Self> {
        check_bits(bits)?;
        let limit = max_code(bits);
        if let Some(c) = codes.iter().find(|&&c| c > limit) {
            return Err(arg_err(format!("code {c} does not fit in {bits} bits")));
        }
        Ok(Self { scale, zero, bits, codes })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    #[inline]
    pub fn dequantize_code(&self, code: u8) -> f32 {
        self.scale.to_f32() * f32::from(code) + self.zero.to_f32()
    }
}

#[inline]
pub(crate) fn max_code(bits: u8) -> u8 {
    ((1u16 << bits) - 1) as u8
}

fn check_bits(bits: u8) -> Result<()> {
    if bits == 0 || bits > MAX_BITS {
        return Err(arg_err(format!("bit-width must lie in 1..={MAX_BITS}, got {bits}")));
    }
    Ok(())
}

/// Seam for swapping in a different per-group quantizer.
pub trait GroupQuantizer: Sync {
    fn quantize(&self, values: &[f32], bits: u8) -> Result<QuantGroup>;
}

/// Round-to-nearest min-max quantizer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MinMaxQuantizer;

impl GroupQuantizer for MinMaxQuantizer {
    fn quantize(&self, values: &[f32], bits: u8) -> Result<QuantGroup> {
        quantize_group(values, bits)
    }
}

/// Min-max asymmetric RTN. Scale and zero are rounded to f16 before codes
/// are computed, so the stored parameters are the ones the codes assume.
pub fn quantize_group(values: &[f32], bits: u8) -> Result<QuantGroup> {
    check_bits(bits)?;
    if values.is_empty() {
        return Err(arg_err("cannot quantize an empty group"));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(arg_err(format!("non-finite weight {v}")));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let levels = max_code(bits);
    let mut scale = if hi == lo { f16::ONE } else { f16::from_f32((hi - lo) / f32::from(levels)) };
    if scale == f16::ZERO {
        // range below f16 resolution
        scale = f16::from_bits(1);
    }
    let zero = f16::from_f32(lo);
    if !scale.is_finite() || !zero.is_finite() {
        return Err(arg_err(format!("group range [{lo}, {hi}] overflows f16 parameters")));
    }
    let (s, z) = (scale.to_f32(), zero.to_f32());
    let codes = values
        .iter()
        .map(|&v| ((v - z) / s).round().clamp(0.0, f32::from(levels)) as u8)
        .collect();
    Ok(QuantGroup { scale, zero, bits, codes })
}

/// `out[k] = scale * codes[k] + zero`.
pub fn dequantize_group(g: &QuantGroup) -> Vec<f32> {
    g.codes.iter().map(|&c| g.dequantize_code(c)).collect()
}

/// Parameters of the ±1 form `sum_i 2^i * scale_hat * (2 w_i - 1) + zero_hat`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorGroup {
    pub scale_hat: f32,
    pub zero_hat: f32,
    pub bits: u8,
}

impl MirrorGroup {
    pub fn from_params(scale: f16, zero: f16, bits: u8) -> Self {
        let scale_hat = 0.5 * scale.to_f32();
        let zero_hat = zero.to_f32() + scale_hat * f32::from(max_code(bits));
        Self { scale_hat, zero_hat, bits }
    }

    /// Evaluates the signed bit-plane sum for `code`.
    pub fn dequantize_code(&self, code: u8) -> f32 {
        let mut signed = 0i32;
        for i in 0..self.bits {
            let sign = if code >> i & 1 == 1 { 1 } else { -1 };
            signed += sign << i;
        }
        self.scale_hat * signed as f32 + self.zero_hat
    }
}

/// `scale_hat = scale / 2`, `zero_hat = zero + scale / 2 * (2^bits - 1)`.
pub fn mirror_transform(g: &QuantGroup) -> MirrorGroup {
    MirrorGroup::from_params(g.scale, g.zero, g.bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: f32) -> f16 {
        f16::from_f32(v)
    }

    #[test]
    fn quantize_examples() {
        let g = quantize_group(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!((g.scale, g.zero), (h(1.0), h(0.0)));
        assert_eq!(g.codes, vec![0, 1, 2, 3]);
        assert_eq!(dequantize_group(&g), vec![0.0, 1.0, 2.0, 3.0]);

        for bits in 1..=8 {
            let g = quantize_group(&[5.0, 5.0, 5.0], bits).unwrap();
            assert_eq!(g.codes, vec![0, 0, 0]);
            assert_eq!(dequantize_group(&g), vec![5.0; 3]);
        }

        let g = quantize_group(&[0.0, 3.0], 1).unwrap();
        assert_eq!((g.scale, g.zero), (h(3.0), h(0.0)));
        assert_eq!(g.codes, vec![0, 1]);
    }

    #[test]
    fn quantize_errors() {
        assert!(quantize_group(&[1.0], 0).is_err());
        assert!(quantize_group(&[], 2).is_err());
        assert!(quantize_group(&[f32::NAN], 2).is_err());
        assert!(quantize_group(&[0.0, 1e6], 2).is_err());
        assert!(QuantGroup::new(h(1.0), h(0.0), 2, vec![4]).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let g = QuantGroup::new(h(1.0), h(0.0), 2, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(dequantize_group(&g), vec![0.0, 1.0, 2.0, 3.0]);
        let g = QuantGroup::new(h(0.5), h(-1.0), 1, vec![1]).unwrap();
        assert_eq!(dequantize_group(&g), vec![-0.5]);
    }

    #[test]
    fn mirror_examples() {
        let g = QuantGroup::new(h(0.5), h(1.0), 2, vec![0, 1, 2, 3]).unwrap();
        let m = mirror_transform(&g);
        assert_eq!((m.scale_hat, m.zero_hat), (0.25, 1.75));
        for c in 0..4 {
            assert_eq!(m.dequantize_code(c), g.dequantize_code(c));
        }
        assert_eq!(m.dequantize_code(0), 1.0);
        assert_eq!(m.dequantize_code(3), 2.5);

        let g = QuantGroup::new(h(0.0), h(7.0), 3, vec![0, 5, 7]).unwrap();
        let m = mirror_transform(&g);
        assert_eq!((m.scale_hat, m.zero_hat), (0.0, 7.0));
        assert!((0..8).all(|c| m.dequantize_code(c) == 7.0));

        let g = QuantGroup::new(h(2.0), h(0.0), 1, vec![0, 1]).unwrap();
        let m = mirror_transform(&g);
        assert_eq!(m.zero_hat, 1.0);
        assert_eq!([m.dequantize_code(0), m.dequantize_code(1)], [0.0, 2.0]);
    }
}
