//! Packed layout and LUT GEMV properties, checked against dense oracles
//! built in this file from the stored codes.

mod common;

use common::{dense_oracle, matvec_f64, random_model, random_vec, rel_l2};
use half::f16;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfmp_core::layout::{block_byte_len, compose_bitplanes};
use sfmp_core::lutgemm::{expected_lookups, gemv_parallel, gemv_with_stats};
use sfmp_core::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mode_of(code: u8) -> ReorderMode {
    ReorderMode::from_code(code).unwrap()
}

const MIXES: [&[u8]; 6] = [&[2], &[3], &[4], &[2, 3], &[3, 4], &[1, 2]];

fn block_groups(rows: usize, cols: usize, bits: u8) -> impl Strategy<Value = Vec<QuantGroup>> {
    let top = ((1u16 << bits) - 1) as u8;
    vec((vec(0..=top, cols), 1e-3f32..1.0, -1.0f32..1.0), rows).prop_map(move |rows| {
        rows.into_iter()
            .map(|(codes, s, z)| QuantGroup::new(f16::from_f32(s), f16::from_f32(z), bits, codes).unwrap())
            .collect()
    })
}

#[test]
fn planes_reconstruct_every_code() {
    for bits in 1..=8u8 {
        let codes: Vec<u8> = (0..=((1u16 << bits) - 1)).map(|c| c as u8).collect();
        let planes = decompose_bitplanes(&codes, bits).unwrap();
        assert_eq!(planes.len(), bits as usize);
        for (k, &c) in codes.iter().enumerate() {
            let sum: u32 = planes.iter().enumerate().map(|(i, p)| u32::from(p[k]) << i).sum();
            assert_eq!(sum, u32::from(c));
        }
        assert_eq!(compose_bitplanes(&planes), codes);
    }
}

#[test]
fn zero_code_block_contributes_nothing() {
    let groups: Vec<QuantGroup> =
        (0..8).map(|_| QuantGroup::new(f16::ONE, f16::ZERO, 2, vec![0; 16]).unwrap()).collect();
    let block = pack_block(&groups).unwrap();
    let m = block.mirror(0);
    assert_eq!((m.scale_hat, m.zero_hat), (0.5, 1.5));
    let x: Vec<f32> = (0..16).map(|i| i as f32 - 7.5).collect();
    let ws = GemvWorkspace::new(&x).unwrap();
    assert_eq!(gemv_block(&ws, &block, 0).unwrap(), vec![0.0; 8]);
    assert!(gemv_block(&ws, &block, 4).is_err());
    assert!(gemv_block(&ws, &block, 8).is_err());
}

#[test]
fn identity_like_block_passes_activations_through() {
    let mut w = Matrix::zeros(8, 8).unwrap();
    for i in 0..8 {
        w.set(i, i, 1.0);
    }
    let geometry = BlockGeometry::new(8, 8);
    let model = quantize_matrix(&w, geometry, &[4], 4, 4, ReorderSpec::none(), &sfmp_core::quantizer::MinMaxQuantizer)
        .unwrap();
    let x = [0.5f32, -1.0, 2.0, 0.25, -0.75, 1.5, 3.0, -2.0];
    let y = gemv(&model, &x).unwrap();
    for (a, b) in y.iter().zip(x) {
        assert!((a - b).abs() <= 1e-3 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn zero_activation_gives_zero_output() {
    let mut r = rng(11);
    for (i, mix) in MIXES.iter().enumerate() {
        let m = random_model(&mut r, (48, 96), BlockGeometry::new(16, 32), mix, mode_of(i as u8 % 4));
        let y = gemv(&m, &vec![0.0; 96]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pack_unpack_roundtrip(groups in (1u8..=8).prop_flat_map(|b| block_groups(8, 16, b))) {
        let block = pack_block(&groups).unwrap();
        prop_assert_eq!(block.byte_len(), block_byte_len(8, 16, groups[0].bits));
        prop_assert_eq!(block.unpack(), groups.clone());
        for (r, g) in groups.iter().enumerate() {
            let planes = decompose_bitplanes(&g.codes, g.bits).unwrap();
            for (i, plane) in planes.iter().enumerate() {
                let bytes = block.plane_row(i, r);
                for (k, &bit) in plane.iter().enumerate() {
                    prop_assert_eq!((bytes[k / 8] >> (k % 8)) & 1, bit);
                }
            }
        }
    }

    #[test]
    fn mirror_dequant_matches_groups(groups in (1u8..=8).prop_flat_map(|b| block_groups(4, 24, b))) {
        let block = pack_block(&groups).unwrap();
        for (r, g) in groups.iter().enumerate() {
            let m = block.mirror(r);
            for (k, v) in dequantize_group(g).into_iter().enumerate() {
                prop_assert!((m.dequantize_code(block.code(r, k)) - v).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn serialization_is_deterministic_and_block_major(
        seed in any::<u64>(),
        mix in 0usize..MIXES.len(),
        mode in 0u8..4,
        pad in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let shape = if pad { (37, 70) } else { (32, 64) };
        let geometry = BlockGeometry::new(8, 16).with_padding(pad);
        let model = random_model(&mut r, shape, geometry, MIXES[mix], mode_of(mode));
        let bytes = model.serialize();
        prop_assert_eq!(&bytes, &model.serialize());
        prop_assert_eq!(bytes.len(), model.serialized_len());
        let back = PackedModel::deserialize(&bytes).unwrap();
        prop_assert_eq!(&back, &model);

        let offsets = model.block_offsets();
        let (mb, nb) = model.block_dims();
        for (k, block) in model.blocks().iter().enumerate() {
            let at = offsets[k];
            let end = offsets.get(k + 1).copied().unwrap_or(bytes.len());
            prop_assert_eq!(end - at, block_byte_len(mb, nb, model.bit_map()[k]));
            let span = &bytes[at..end];
            for (r, s) in block.scales().iter().enumerate() {
                prop_assert_eq!(&span[2 * r..2 * r + 2], &s.to_bits().to_le_bytes());
            }
            for (r, z) in block.zeros().iter().enumerate() {
                prop_assert_eq!(&span[2 * (mb + r)..2 * (mb + r) + 2], &z.to_bits().to_le_bytes());
            }
            let planes: Vec<u8> = block.planes().concat();
            prop_assert_eq!(&span[4 * mb..], &planes[..]);
        }
    }

    #[test]
    fn gemv_matches_dense_oracle(
        seed in any::<u64>(),
        mix in 0usize..MIXES.len(),
        mode in 0u8..4,
        (gr, gc, mb, nb) in (1usize..4, 1usize..4, prop::sample::select(vec![1usize, 8, 16]), prop::sample::select(vec![8usize, 16, 32])),
    ) {
        let mut r = rng(seed);
        let model = random_model(&mut r, (gr * mb, gc * nb), BlockGeometry::new(mb, nb), MIXES[mix], mode_of(mode));
        let x = random_vec(&mut r, gc * nb);
        let y = gemv(&model, &x).unwrap();
        let dense = dense_oracle(&model);
        prop_assert!(rel_l2(&y, &matvec_f64(&x, &dense)) <= 1e-4);
        prop_assert!(rel_l2(&y, &matmul_reference(&x, &model.dequantize()).unwrap()) <= 1e-4);
        prop_assert_eq!(gemv_parallel(&model, &x).unwrap(), y);
    }

    #[test]
    fn padded_gemv_matches_dense_oracle(seed in any::<u64>(), mix in 0usize..MIXES.len(), mode in 0u8..4, rows in 1usize..40, cols in 1usize..9) {
        let mut r = rng(seed);
        let cols = cols * 8;
        let model = random_model(&mut r, (rows, cols), BlockGeometry::new(16, 16).with_padding(true), MIXES[mix], mode_of(mode));
        let x = random_vec(&mut r, cols);
        let y = gemv(&model, &x).unwrap();
        prop_assert_eq!(y.len(), rows);
        prop_assert!(rel_l2(&y, &matvec_f64(&x, &dense_oracle(&model))) <= 1e-4);
    }

    #[test]
    fn gemv_is_linear_in_x(seed in any::<u64>(), mix in 0usize..MIXES.len(), mode in 0u8..4, a in 0.1f32..4.0) {
        let mut r = rng(seed);
        let model = random_model(&mut r, (32, 64), BlockGeometry::new(8, 32), MIXES[mix], mode_of(mode));
        let x = random_vec(&mut r, 64);
        let ax: Vec<f32> = x.iter().map(|v| a * v).collect();
        let y = gemv(&model, &x).unwrap();
        let scaled: Vec<f32> = y.iter().map(|v| a * v).collect();
        prop_assert!(rel_l2(&gemv(&model, &ax).unwrap(), &scaled) <= 1e-5);
    }

    #[test]
    fn planes_contribute_by_significance(seed in any::<u64>(), bits in 1u8..=4) {
        let mut r = rng(seed);
        let model = random_model(&mut r, (8, 32), BlockGeometry::new(8, 32), &[bits], ReorderMode::None);
        let x = random_vec(&mut r, 32);
        let base = gemv(&model, &x).unwrap();
        for plane in 0..bits as usize {
            let mut cleared = model.clone();
            cleared.blocks_mut()[0].planes_mut()[plane].fill(0);
            let y = gemv(&cleared, &x).unwrap();
            let block = &model.blocks()[0];
            for row in 0..8 {
                // a set bit reads +1 and a cleared one -1, so each set bit moves by 2 * 2^i * s_hat * x
                let on: f32 = (0..32).filter(|&k| block.code(row, k) >> plane & 1 == 1).map(|k| x[k]).sum();
                let expected = -((1u32 << plane) as f32) * block.scales()[row].to_f32() * on;
                let got = y[row] - base[row];
                prop_assert!((got - expected).abs() <= 1e-4 * (1.0 + base[row].abs()), "plane {plane} row {row}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn lookup_count_is_exact(seed in any::<u64>(), mix in 0usize..MIXES.len(), mode in 0u8..4) {
        let mut r = rng(seed);
        let model = random_model(&mut r, (48, 64), BlockGeometry::new(16, 32), MIXES[mix], mode_of(mode));
        let x = random_vec(&mut r, 64);
        let (_, stats) = gemv_with_stats(&model, &x).unwrap();
        let sum_bits: u64 = model.bit_map().iter().map(|&b| u64::from(b)).sum();
        prop_assert_eq!(stats.lookups, sum_bits * 16 * 32 / 8);
        prop_assert_eq!(stats.lookups, expected_lookups(&model));
    }

    #[test]
    fn mirrored_tables_match_brute_force(x in prop::array::uniform8(-100.0f32..100.0)) {
        let t = LookupTable::new(&x);
        for p in 0..=255u8 {
            let mut direct = 0.0f32;
            for (k, &v) in x.iter().enumerate() {
                direct += if p >> k & 1 == 1 { v } else { -v };
            }
            // == treats the signs of an exact zero as equal
            prop_assert!(t.lookup(p) == direct, "pattern {:#04x}: {} vs {}", p, t.lookup(p), direct);
        }
    }
}
