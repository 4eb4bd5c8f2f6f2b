"""End-to-end acceptance gate.

Each test checks one headline property at its stated tolerance and prints a
single verdict line, so a full run reads as a scoreboard. The suite leans on
the brute-force reference implementations for every claim that has an
independent route.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from slabkit import oracle
from slabkit.cli import main
from slabkit.decompose import (
    CompressConfig,
    build_binary_lowrank,
    refine_binary_lowrank,
    reconstruct,
    score,
    select_mask,
    slab_decompose,
    sparsity_budget,
    weighted_error,
)
from slabkit.pipeline import (
    baseline_sparse_lowrank,
    load_manifest,
    rank_sweep,
    read_sltn,
    validate_manifest,
)
from slabkit.slabfmt import (
    HEADER_BYTES,
    cr_value,
    pack,
    section_sizes,
    slab_matvec,
    unpack,
)
from slabkit.tensor import sign_matrix


def verdict(capsys, index, label, ok, detail):
    with capsys.disabled():
        print(f"acceptance {index:02d} {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{label}: {detail}"


@pytest.fixture(scope="module")
def gaussian_suite():
    """Fifty 64x64 layers with per-rank and no-plane baseline errors."""
    rng = np.random.default_rng(0x64)
    cfg = CompressConfig(cr=0.5)
    ones = np.ones(64)
    by_rank = {0: [], 1: [], 2: []}
    baseline = []
    for _ in range(50):
        w = rng.standard_normal((64, 64))
        for r, err in rank_sweep(w, ones, cfg, [0, 1, 2]):
            by_rank[r].append(err)
        baseline.append(baseline_sparse_lowrank(w, ones, cfg, rank=1).weighted_error)
    return (
        np.array(by_rank[0]),
        np.array(by_rank[1]),
        np.array(by_rank[2]),
        np.array(baseline),
    )


def test_01_two_level_split_equals_exhaustive_search(capsys):
    rng = np.random.default_rng(1)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        values = np.sort(rng.standard_normal(n) * rng.uniform(0.5, 4.0))
        split = oracle.best_two_level_split(values)
        full = oracle.best_two_level_exhaustive(values)
        worst = max(worst, abs(split.objective - full.objective))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10.0
    verdict(
        capsys, 1, "two-level split equals exhaustive search", ok,
        f"max objective gap {worst:.2e}, {elapsed:.2f}s for 1000 instances",
    )


def test_02_dominant_factor_pair_of_magnitudes_is_nonnegative(capsys):
    rng = np.random.default_rng(2)
    low = 0.0
    for _ in range(1000):
        d_out = int(rng.integers(2, 65))
        d_in = int(rng.integers(2, 65))
        m = rng.standard_normal((d_out, d_in)) * rng.uniform(0.2, 5.0)
        b, u, v = build_binary_lowrank(m)
        low = min(low, float(np.min(np.outer(u, v))))
    ok = low >= -1e-12
    verdict(
        capsys, 2, "dominant factor pair of a magnitude matrix is non-negative", ok,
        f"min plane entry {low:.2e} over 1000 matrices",
    )


def test_03_joint_sign_and_factor_fit_is_a_fixed_point(capsys):
    rng = np.random.default_rng(3)
    flipped = 0
    worst = 0.0
    for _ in range(200):
        y = rng.standard_normal((32, 32))
        b1, u1, v1 = build_binary_lowrank(y)
        b2, u2, v2 = refine_binary_lowrank(y, u1, v1)
        nonzero = y != 0.0
        flipped += int(np.sum((b1.dense() != b2.dense()) & nonzero))
        gap = np.linalg.norm(np.outer(u2, v2) - np.outer(u1, v1))
        worst = max(worst, gap / np.linalg.norm(np.outer(u1, v1)))
    ok = flipped == 0 and worst <= 1e-8
    verdict(
        capsys, 3, "joint sign-and-factor fit is an alternation fixed point", ok,
        f"{flipped} sign flips at nonzero entries, max factor drift {worst:.2e}",
    )


def test_04_symmetric_level_statistic_separates_distributions(capsys):
    stat = oracle.symmetric_levels_check(10000, 20)
    control = oracle.symmetric_levels_check(10000, 20, distribution="exponential")
    ok = stat < 0.05 and control > 0.05
    verdict(
        capsys, 4, "symmetric level statistic separates normal from exponential", ok,
        f"normal {stat:.4f} < 0.05, exponential {control:.4f} > 0.05",
    )


def test_05_score_based_masking_attains_the_exhaustive_optimum(capsys):
    rng = np.random.default_rng(5)
    cfg = CompressConfig(density_override=0.5, group_shape=(4, 4), iters_s=1)
    budget = sparsity_budget(cfg, 4, 4)
    worst = 0.0
    for _ in range(500):
        w = rng.standard_normal((4, 4))
        s_x = np.abs(rng.standard_normal(4)) + 0.1
        found = oracle.exhaustive_tiny_slab(w, s_x, 0.5)
        mask = select_mask(score(found.residual, s_x), budget, cfg)
        ours = oracle.masked_weighted_error(found.residual, s_x, mask)
        worst = max(worst, ours - found.error)
    ok = worst <= 1e-12
    verdict(
        capsys, 5, "score-based masking attains the exhaustive optimum", ok,
        f"max excess error {worst:.2e} over 500 instances",
    )


def test_06_first_factor_column_buys_the_largest_drop(capsys, gaussian_suite):
    e0, e1, e2, _ = gaussian_suite
    first_drop = float(np.mean(e0 - e1))
    second_drop = float(np.mean(e1 - e2))
    always_helps = bool(np.all(e1 < e0))
    ok = first_drop > second_drop and always_helps
    verdict(
        capsys, 6, "first factor column buys the largest error drop", ok,
        f"mean drop {first_drop:.2f} then {second_drop:.2f}, rank 1 wins on "
        f"{int(np.sum(e1 < e0))}/50 layers",
    )


def test_07_sign_plane_beats_the_plain_baseline_at_matched_budget(capsys, gaussian_suite):
    _, e1, _, baseline = gaussian_suite
    ours = float(np.mean(e1))
    theirs = float(np.mean(baseline))
    ok = ours <= theirs
    verdict(
        capsys, 7, "sign plane beats the plain baseline at matched budget", ok,
        f"mean weighted error {ours:.2f} vs {theirs:.2f}",
    )


def test_08_twenty_rounds_do_not_lose_to_one(capsys):
    rng = np.random.default_rng(8)
    ones = np.ones(32)
    wins = 0
    for _ in range(200):
        w = rng.standard_normal((32, 32))
        one = slab_decompose(w, ones, CompressConfig(density_override=0.4, iters_s=1))
        twenty = slab_decompose(w, ones, CompressConfig(density_override=0.4, iters_s=20))
        err_one = weighted_error(w, reconstruct(one), ones)
        err_twenty = weighted_error(w, reconstruct(twenty), ones)
        wins += int(err_twenty <= err_one)
    ok = wins >= 190
    verdict(
        capsys, 8, "twenty alternation rounds do not lose to one", ok,
        f"no-worse on {wins}/200 layers (need 190)",
    )


def test_09_stored_payload_bits_follow_the_accounting_identity(capsys, tmp_path):
    rng = np.random.default_rng(9)
    blobs = []
    for d_out, d_in, bits, cr in [
        (64, 64, 16, 0.5),
        (32, 16, 16, 0.3),
        (8, 8, 16, 0.0),
        (16, 24, 32, 0.5),
        (64, 32, 32, 0.25),
    ]:
        w = rng.standard_normal((d_out, d_in))
        d = slab_decompose(w, np.ones(d_in), CompressConfig(cr=cr, bit_width_b=bits, iters_s=2))
        blobs.append((pack(d), d_out, d_in, bits, d.nnz))
    code = main(
        ["decompose", "--synthetic", "2x16x24", "--seed", "4", "--out", str(tmp_path)]
    )
    capsys.readouterr()
    assert code == 0
    for path in sorted(tmp_path.glob("*.slab")):
        d = unpack(path.read_bytes())
        blobs.append((path.read_bytes(), d.d_out, d.d_in, d.meta.bit_width_b, d.nnz))

    exact = True
    for blob, d_out, d_in, bits, nnz in blobs:
        mask_bits = ((d_out * d_in + 7) // 8) * 8
        payload = len(blob) * 8 - HEADER_BYTES * 8 - mask_bits
        expected = bits * nnz + d_out * d_in + bits * (d_out + d_in)
        sections = dict(section_sizes(d_out, d_in, bits, nnz, True))
        by_sections = 8 * (
            sections["sparse values"] + sections["u values"]
            + sections["v values"] + sections["binary plane"]
        )
        exact = exact and payload == expected == by_sections

    budget = sparsity_budget(CompressConfig(cr=0.5, bit_width_b=16), 4096, 4096)
    density_exact = budget.density == 0.43701171875
    ratio_gap = abs(cr_value(4096, 4096, 16, budget.k_total) - 0.5)
    ok = exact and density_exact and ratio_gap <= 1e-12
    verdict(
        capsys, 9, "stored payload bits follow the accounting identity", ok,
        f"{len(blobs)} layer files exact, 4096-dim ratio off by {ratio_gap:.1e}",
    )


def test_10_decomposed_kernel_matches_the_dense_reference(capsys):
    from slabkit.decompose import SlabDecomposition

    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        d_out = int(rng.integers(2, 33))
        d_in = int(rng.integers(2, 33))
        mask = rng.random((d_out, d_in)) < rng.uniform(0.0, 0.6)
        d = SlabDecomposition(
            d_out=d_out,
            d_in=d_in,
            mask=mask,
            values=rng.standard_normal(int(mask.sum())),
            u=rng.standard_normal(d_out),
            v=rng.standard_normal(d_in),
            b_plane=(
                sign_matrix(rng.standard_normal((d_out, d_in)))
                if rng.integers(2) else None
            ),
        )
        x = rng.standard_normal(d_in)
        ref = oracle.dense_matvec(reconstruct(d), x)
        got = slab_matvec(d, x)
        scale = max(float(np.max(np.abs(ref))), 1e-30)
        worst = max(worst, float(np.max(np.abs(got - ref))) / scale)

    clean = True
    for n, m in ((2, 4), (4, 8)):
        cfg = CompressConfig(density_override=0.4, nm_pattern=(n, m))
        budget = sparsity_budget(cfg, 16, 32)
        for _ in range(50):
            mask = select_mask(score(rng.standard_normal((16, 32)), np.ones(32)), budget, cfg)
            runs = mask.reshape(16, 32 // m, m).sum(axis=2)
            clean = clean and bool(np.all(runs <= n))
        for _ in range(10):
            w = rng.standard_normal((16, 32))
            d = slab_decompose(w, np.ones(32), CompressConfig(cr=0.5, nm_pattern=(n, m), iters_s=2))
            runs = d.mask.reshape(16, 32 // m, m).sum(axis=2)
            clean = clean and bool(np.all(runs <= n))

    ok = worst <= 1e-5 and clean
    verdict(
        capsys, 10, "decomposed kernel matches the dense reference", ok,
        f"max relative deviation {worst:.2e} over 1000 pairs, structured runs clean: {clean}",
    )


def test_11_identical_runs_produce_byte_identical_files(capsys, tmp_path):
    argv = ["decompose", "--synthetic", "3x16x24", "--seed", "9", "--cr", "0.4"]
    code_a = main(argv + ["--out", str(tmp_path / "a")])
    code_b = main(argv + ["--out", str(tmp_path / "b")])
    capsys.readouterr()
    names = sorted(p.name for p in (tmp_path / "a").glob("*.slab"))
    same = (
        code_a == 0 and code_b == 0 and len(names) == 3
        and all(
            (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
            for n in names
        )
    )
    verdict(
        capsys, 11, "identical runs produce byte-identical layer files", same,
        f"{len(names)} files compared",
    )


def test_12_exported_checkpoints_round_trip_through_the_loader(capsys, tmp_path):
    torch = pytest.importorskip("torch")
    pytest.importorskip("slab_export")
    from collections import OrderedDict

    torch.manual_seed(0)
    model = torch.nn.Sequential(
        OrderedDict(
            [
                ("fc1", torch.nn.Linear(12, 10)),
                ("act", torch.nn.ReLU()),
                ("fc2", torch.nn.Linear(10, 8)),
            ]
        )
    )
    ckpt = tmp_path / "tiny.pt"
    torch.save(model, ckpt)
    calib = tmp_path / "calib.npy"
    np.save(calib, np.random.default_rng(12).standard_normal((24, 12)).astype(np.float32))

    out_dir = tmp_path / "export"
    proc = subprocess.run(
        [
            sys.executable, "-m", "slab_export",
            "--checkpoint", str(ckpt),
            "--calib", str(calib),
            "--out", str(out_dir),
        ],
        capture_output=True,
        text=True,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr

    manifest = load_manifest(out_dir / "model.json")
    tensors, _ = read_sltn(out_dir / Path(manifest.tensor_file).name)
    warnings = validate_manifest(manifest, tensors)

    rounded = True
    for layer in manifest.linear_layers():
        original = model.get_submodule(layer.name).weight.detach().numpy().astype(np.float64)
        stored = tensors[layer.weight_ref]
        rounded = rounded and np.array_equal(
            stored, original.astype(np.float16).astype(np.float64)
        )
    ok = warnings == [] and rounded
    verdict(
        capsys, 12, "exported checkpoints round-trip through the loader", ok,
        f"{len(warnings)} validation warnings, weights match at storage precision: {rounded}",
    )
