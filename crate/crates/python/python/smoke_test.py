"""Smoke test for the sfmp extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`
or `maturin develop -m crates/python/Cargo.toml`, then run this file.
"""

import random

import sfmp


def rand_matrix(rng, rows, cols, spread):
    return [[rng.uniform(-spread, spread) for _ in range(cols)] for _ in range(rows)]


def rel_l2(a, b):
    num = sum((x - y) ** 2 for x, y in zip(a, b))
    den = sum(y * y for y in b)
    return (num / den) ** 0.5 if den else num ** 0.5


def main():
    rng = random.Random(0)

    assert sfmp.candidate_bits(2.125) == (2, 3, 0.125)
    assert sfmp.effective_weight_bits(3.75, 128) == 3.5
    assert sfmp.decompose_bitplanes([9, 7, 6, 3], 4)[0] == [1, 1, 0, 1]
    assert sfmp.argsort_desc([0.1, 0.5, 0.5, 0.2]) == [1, 2, 3, 0]
    assert sfmp.matmul_reference([1.0, 2.0], [[1.0, 2.0], [3.0, 4.0]]) == [5.0, 11.0]
    threshold, selected = sfmp.quantile_threshold([float(i) for i in range(80)], 0.125)
    assert len(selected) == 10 and threshold == 70.0

    fisher = sfmp.accumulate_fisher([[[1.0, -2.0]], [[3.0, 0.0]]])
    assert fisher == [[5.0, 2.0]]

    weights = rand_matrix(rng, 64, 128, 0.05)
    grads = [rand_matrix(rng, 64, 128, 1e-3) for _ in range(2)]
    models, report = sfmp.quantize(
        [("layer", weights, grads)], bits=3.5, group_size=32, block_rows=16
    )
    assert report["achieved_bpw"] == 4.5, report
    assert report["allocation_passes"] == 1
    name, model = models[0]
    assert name == "layer" and model.shape == (64, 128)
    assert sorted(set(model.bit_map)) == [3, 4]

    check = sfmp.verify(model, weights, tolerance=1e-4)
    assert check["passed"], check

    x = [rng.uniform(-1, 1) for _ in range(128)]
    y, lookups = model.gemv_with_stats(x)
    dense = model.dequantize()
    ref = [sum(w * v for w, v in zip(row, x)) for row in dense]
    assert rel_l2(y, ref) <= 1e-4
    assert lookups == sum(model.bit_map) * 16 * 32 // 8

    again = sfmp.PackedModel.from_bytes(model.to_bytes())
    assert again.to_bytes() == model.to_bytes()
    assert again.inspect()["blocks_total"] == 16

    try:
        sfmp.PackedModel.from_bytes(b"not a model")
    except ValueError:
        pass
    else:
        raise AssertionError("bad bytes accepted")

    synth = sfmp.synthetic_model(256, 256, 2.0, block_rows=64, reorder=True, seed=1)
    stats = sfmp.bench_gemv(synth, reps=3)
    assert stats["lookups_count"] == 2 * 256 * 256 // 8
    print("sfmp smoke test passed:", model)


if __name__ == "__main__":
    main()
