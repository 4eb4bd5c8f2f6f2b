"""Command-line front end.

Subcommands cover the whole surface: ``decompose`` (compress a manifest or a
synthetic suite to .slab files plus a report stream), ``sweep-rank``,
``pack`` / ``unpack`` (convert between .slab and dense .sltn tensors),
``matvec-bench``, and ``oracle-check``. Exit codes are fixed for scripting:
0 success, 1 failed check, 2 configuration error, 3 I/O or format error,
4 infeasible budget. Set SLAB_LOG=INFO (or DEBUG) for progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracle
from .calibration import ActivationStats
from .decompose import (
    CompressConfig,
    InfeasibleBudgetError,
    SlabDecomposition,
    reconstruct,
    slab_decompose,
    sparsity_budget,
    select_mask,
    score,
)
from .pipeline import (
    ManifestError,
    TensorFileError,
    compress_model,
    layer_report,
    load_manifest,
    rank_sweep,
    read_sltn,
    validate_manifest,
    write_sltn,
)
from .slabfmt import SlabFormatError, cr_report, pack, slab_matvec, unpack
from .tensor import sign_matrix, top_singular_triplet

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_BUDGET = 4

log = logging.getLogger("slabkit")

CALIB_ENTRY = "calib.input"
MATVEC_TOLERANCE = 1e-5


class ConfigError(ValueError):
    pass


def _parse_nm(text):
    try:
        n, m = text.split(":")
        return int(n), int(m)
    except (ValueError, AttributeError):
        raise ConfigError(f"--nm wants the form N:M, got {text!r}") from None


def _parse_synthetic(text):
    try:
        layers, d_out, d_in = (int(p) for p in text.split("x"))
    except ValueError:
        raise ConfigError(f"--synthetic wants LAYERSxD_OUTxD_IN, got {text!r}") from None
    if layers < 1 or d_out < 1 or d_in < 1:
        raise ConfigError(f"--synthetic parts must be positive, got {text!r}")
    return layers, d_out, d_in


def _parse_ranks(text):
    try:
        return [int(p) for p in text.split(",")]
    except ValueError:
        raise ConfigError(f"--ranks wants comma-separated integers, got {text!r}") from None


def synthetic_suite(n_layers, d_out, d_in, seed, structure="gauss"):
    """Deterministic synthetic layers: (name, weight, calibration batch) each.

    "gauss" draws plain standard-normal weights. "decay" plants a decaying
    spectrum on top of the noise, the profile real weight matrices tend to
    have and the regime where extra factor columns keep paying for
    themselves.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for i in range(n_layers):
        w = rng.standard_normal((d_out, d_in))
        if structure == "decay":
            amp = 0.2 * d_out * d_in
            for j in range(8):
                x = rng.standard_normal(d_out)
                y = rng.standard_normal(d_in)
                x /= np.linalg.norm(x)
                y /= np.linalg.norm(y)
                w += amp * 0.7**j * np.outer(x, y)
        elif structure != "gauss":
            raise ConfigError(f"unknown --structure {structure!r}")
        acts = rng.standard_normal((max(2 * d_in, 32), d_in))
        layers.append((f"layer{i:02d}", w, acts))
    return layers


def _config(args):
    if args.bits not in (16, 32):
        raise ConfigError(f"--bits must be 16 or 32, got {args.bits}")
    if not 0 <= args.seed < 2**64:
        raise ConfigError("--seed must fit an unsigned 64-bit integer")
    group_shape = None
    if args.group_rows != 1 or args.group_cols != 0:
        group_shape = (args.group_rows, args.group_cols)
    try:
        return CompressConfig(
            cr=args.cr,
            bit_width_b=args.bits,
            iters_s=args.iters,
            group_shape=group_shape,
            nm_pattern=_parse_nm(args.nm) if args.nm else None,
            density_override=args.density_override,
            binary_plane_enabled=not args.no_binary,
            lowrank_rank=args.rank,
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _gather_layers(args, cfg):
    """Resolve the work list to (name, weight, activations) triples."""
    if args.synthetic:
        n_layers, d_out, d_in = _parse_synthetic(args.synthetic)
        return synthetic_suite(n_layers, d_out, d_in, args.seed, args.structure)
    if not args.manifest:
        raise ConfigError("give either --manifest or --synthetic")
    manifest = load_manifest(args.manifest)
    tensor_path = args.tensors or str(Path(args.manifest).parent / manifest.tensor_file)
    tensors, _ = read_sltn(tensor_path)
    for warning in validate_manifest(manifest, tensors):
        print(f"warning: {warning}", file=sys.stderr)
    out = []
    for layer in manifest.linear_layers():
        act_name = layer.name + ".act"
        if act_name not in tensors:
            raise ManifestError(f"offline activations {act_name!r} missing from {tensor_path}")
        out.append((layer.name, tensors[layer.weight_ref], tensors[act_name]))
    return out


def _emit(rows, fmt, fields):
    if fmt == "json":
        for row in rows:
            print(json.dumps(row))
    else:
        print(",".join(fields))
        for row in rows:
            print(",".join(str(row[f]) for f in fields))


_REPORT_FIELDS = [
    "layer",
    "weighted_error",
    "unweighted_error",
    "cr_paper",
    "cr_actual",
    "k_achieved",
]


def cmd_decompose(args):
    cfg = _config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    written = []
    if args.manifest and not args.synthetic:
        manifest = load_manifest(args.manifest)
        tensor_path = args.tensors or str(Path(args.manifest).parent / manifest.tensor_file)
        tensors, _ = read_sltn(tensor_path)
        for warning in validate_manifest(manifest, tensors):
            print(f"warning: {warning}", file=sys.stderr)
        calib = tensors.get(CALIB_ENTRY)
        if args.mode == "sequential" and calib is None:
            raise ConfigError(
                f"sequential mode needs a {CALIB_ENTRY!r} entry in the tensor file"
            )
        decomps, reps = compress_model(
            manifest, calib, cfg, mode=args.mode, tensors=tensors, jobs=args.jobs
        )
        for rep in reps:
            path = out_dir / f"{rep.layer}.slab"
            path.write_bytes(pack(decomps[rep.layer]))
            written.append(path)
            reports.append(rep.to_dict())
    else:
        for name, w, acts in _gather_layers(args, cfg):
            stats = ActivationStats(w.shape[1]).accumulate(acts)
            s_x = stats.finalize()
            log.info("decomposing %s (%dx%d)", name, *w.shape)
            d = slab_decompose(w, s_x, cfg)
            path = out_dir / f"{name}.slab"
            path.write_bytes(pack(d))
            written.append(path)
            reports.append(layer_report(name, w, reconstruct(d), s_x, d).to_dict())
    _emit(reports, args.report, _REPORT_FIELDS)
    log.info("wrote %d .slab files to %s", len(written), out_dir)
    return EXIT_OK


def cmd_sweep_rank(args):
    cfg = _config(args)
    ranks = _parse_ranks(args.ranks)
    layers = _gather_layers(args, cfg)
    sums = {r: 0.0 for r in ranks}
    for name, w, acts in layers:
        s_x = ActivationStats(w.shape[1]).accumulate(acts).finalize()
        for r, err in rank_sweep(w, s_x, cfg, ranks):
            sums[r] += err
    rows = [
        {"rank": r, "mean_weighted_error": sums[r] / len(layers), "layers": len(layers)}
        for r in ranks
    ]
    _emit(rows, args.report, ["rank", "mean_weighted_error", "layers"])
    return EXIT_OK


def cmd_pack(args):
    if args.bits not in (16, 32):
        raise ConfigError(f"--bits must be 16 or 32, got {args.bits}")
    tensors, _ = read_sltn(args.tensors)
    for needed in ("w_s", "u", "v"):
        if needed not in tensors:
            raise ConfigError(f"pack needs entries w_s, u and v; {needed!r} is missing")
    w_s = tensors["w_s"]
    u = tensors["u"].reshape(-1)
    v = tensors["v"].reshape(-1)
    d_out, d_in = w_s.shape
    if u.shape[0] != d_out or v.shape[0] != d_in:
        raise ConfigError("u/v lengths do not match the w_s shape")
    b_plane = None
    if "b" in tensors:
        b = tensors["b"]
        if b.shape != w_s.shape or not np.all(np.abs(b) == 1.0):
            raise ConfigError("entry 'b' must match w_s in shape and hold only +1/-1")
        b_plane = sign_matrix(b)
    mask = w_s != 0.0
    d = SlabDecomposition(
        d_out=d_out,
        d_in=d_in,
        mask=mask,
        values=w_s[mask],
        u=u,
        v=v,
        b_plane=b_plane,
        meta=CompressConfig(bit_width_b=args.bits, binary_plane_enabled=b_plane is not None),
    )
    data = pack(d)
    Path(args.out).write_bytes(data)
    rep = cr_report(d, len(data) * 8, k_target=d.nnz)
    print(json.dumps({"file": args.out, "bytes": len(data), **rep.__dict__}))
    return EXIT_OK


def cmd_unpack(args):
    d = unpack(Path(args.slab).read_bytes())
    entries = {
        "w_s": d.sparse_dense(),
        "u": d.u.reshape(-1, 1),
        "v": d.v.reshape(-1, 1),
    }
    if d.b_plane is not None:
        entries["b"] = d.b_plane.dense()
    write_sltn(args.out, entries, dtype="f32")
    rep = cr_report(d, Path(args.slab).stat().st_size * 8, k_target=d.nnz)
    print(json.dumps({"file": args.out, "d_out": d.d_out, "d_in": d.d_in, **rep.__dict__}))
    return EXIT_OK


def _bench_one(name, d, rng, trials):
    w_hat = reconstruct(d)
    xs = rng.standard_normal((trials, d.d_in))
    worst = 0.0
    t0 = time.perf_counter()
    ys = [slab_matvec(d, x) for x in xs]
    kernel_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    refs = [w_hat @ x for x in xs]
    dense_s = time.perf_counter() - t0
    for y, ref in zip(ys, refs):
        scale = max(float(np.max(np.abs(ref))), 1e-30)
        worst = max(worst, float(np.max(np.abs(y - ref))) / scale)
    return {
        "layer": name,
        "trials": trials,
        "kernel_s": round(kernel_s, 6),
        "dense_s": round(dense_s, 6),
        "max_rel_deviation": worst,
    }


def cmd_matvec_bench(args):
    rng = np.random.default_rng(args.seed)
    rows = []
    if args.slab:
        d = unpack(Path(args.slab).read_bytes())
        rows.append(_bench_one(Path(args.slab).name, d, rng, args.trials))
    else:
        cfg = _config(args)
        for name, w, acts in _gather_layers(args, cfg):
            s_x = ActivationStats(w.shape[1]).accumulate(acts).finalize()
            rows.append(_bench_one(name, slab_decompose(w, s_x, cfg), rng, args.trials))
    _emit(rows, args.report, ["layer", "trials", "kernel_s", "dense_s", "max_rel_deviation"])
    failed = [r["layer"] for r in rows if r["max_rel_deviation"] > MATVEC_TOLERANCE]
    if failed:
        print(
            f"error: matvec-deviation: layers {', '.join(failed)} exceed {MATVEC_TOLERANCE}",
            file=sys.stderr,
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


def _oracle_checks(seed):
    """Yield (name, passed, detail) for the default oracle suite."""
    rng = np.random.default_rng(seed)

    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 13))
        vals = np.sort(rng.standard_normal(n) * rng.uniform(0.5, 3.0))
        split = oracle.best_two_level_split(vals)
        full = oracle.best_two_level_exhaustive(vals)
        worst = max(worst, abs(split.objective - full.objective))
    yield "two-level split equals exhaustive enumeration", worst <= 1e-12, f"max gap {worst:.2e}"

    low = 0.0
    for _ in range(200):
        m = rng.standard_normal((int(rng.integers(2, 33)), int(rng.integers(2, 33))))
        sigmas, uu, vv = oracle.reference_svd(np.abs(m))
        u0, v0 = uu[:, 0], vv[:, 0]
        if u0.sum() < 0:
            u0, v0 = -u0, -v0
        low = min(low, float(u0.min()), float(v0.min()))
    yield "top factor pair of |M| is non-negative", low >= -1e-12, f"min component {low:.2e}"

    stat = oracle.symmetric_levels_check(10000, 20)
    yield "symmetric-levels statistic (normal)", stat < 0.05, f"statistic {stat:.4f}"
    neg = oracle.symmetric_levels_check(10000, 20, distribution="exponential")
    yield "symmetric-levels negative control (exponential)", neg > 0.05, f"statistic {neg:.4f}"

    cfg = CompressConfig(density_override=0.5, group_shape=(4, 4), iters_s=1)
    worst = 0.0
    for _ in range(100):
        w = rng.standard_normal((4, 4))
        s_x = np.abs(rng.standard_normal(4)) + 0.1
        found = oracle.exhaustive_tiny_slab(w, s_x, 0.5)
        budget = sparsity_budget(cfg, 4, 4)
        mask = select_mask(score(found.residual, s_x), budget, cfg)
        ours = oracle.masked_weighted_error(found.residual, s_x, mask)
        worst = max(worst, ours - found.error)
    yield "top-k masking attains the exhaustive minimum", worst <= 1e-12, f"max excess {worst:.2e}"

    worst = 0.0
    for _ in range(100):
        m = rng.standard_normal((12, 8))
        sigma, u, v = top_singular_triplet(m)
        sigmas, uu, vv = oracle.reference_svd(m)
        gap = np.linalg.norm(sigma * np.outer(u, v) - sigmas[0] * np.outer(uu[:, 0], vv[:, 0]))
        worst = max(worst, float(gap))
    yield "power iteration matches reference SVD", worst <= 1e-6, f"max product gap {worst:.2e}"

    worst = 0.0
    for _ in range(50):
        d = _random_decomposition(rng, 16, 16)
        x = rng.standard_normal(16)
        ref = oracle.dense_matvec(reconstruct(d), x)
        got = slab_matvec(d, x)
        scale = max(float(np.max(np.abs(ref))), 1e-30)
        worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
    yield "decomposed matvec matches the naive kernel", worst <= 1e-5, f"max deviation {worst:.2e}"


def _random_decomposition(rng, d_out, d_in, density=0.3, with_plane=True):
    mask = rng.random((d_out, d_in)) < density
    return SlabDecomposition(
        d_out=d_out,
        d_in=d_in,
        mask=mask,
        values=rng.standard_normal(int(mask.sum())),
        u=np.abs(rng.standard_normal(d_out)),
        v=np.abs(rng.standard_normal(d_in)),
        b_plane=sign_matrix(rng.standard_normal((d_out, d_in))) if with_plane else None,
        meta=CompressConfig(),
    )


def cmd_oracle_check(args):
    failures = 0
    for name, passed, detail in _oracle_checks(args.seed):
        status = "ok" if passed else "FAIL"
        print(f"{status}: {name} ({detail})")
        failures += 0 if passed else 1
    if failures:
        print(f"error: oracle-check: {failures} check(s) failed", file=sys.stderr)
        return EXIT_CHECK_FAILED
    print("all checks passed")
    return EXIT_OK


def _add_compress_flags(p):
    p.add_argument("--cr", type=float, default=0.5, help="target compression ratio")
    p.add_argument("--bits", type=int, default=16, help="stored bit width (16 or 32)")
    p.add_argument("--iters", type=int, default=20, help="alternating rounds")
    p.add_argument("--group-rows", type=int, default=1, help="comparison group rows")
    p.add_argument(
        "--group-cols", type=int, default=0, help="comparison group columns (0 = full row)"
    )
    p.add_argument("--nm", default=None, metavar="N:M", help="semi-structured pattern, e.g. 2:4")
    p.add_argument("--no-binary", action="store_true", help="disable the binary plane")
    p.add_argument("--rank", type=int, default=1, help="factor columns (sweep/baseline modes)")
    p.add_argument("--density-override", type=float, default=None, help=argparse.SUPPRESS)


def _add_input_flags(p):
    p.add_argument("--manifest", default=None, help="model manifest JSON")
    p.add_argument("--tensors", default=None, help="tensor container (.sltn)")
    p.add_argument(
        "--synthetic",
        default=None,
        metavar="LxOxI",
        help="generate L layers of O x I synthetic weights instead of reading a manifest",
    )
    p.add_argument(
        "--structure",
        choices=("gauss", "decay"),
        default="gauss",
        help="synthetic weight structure",
    )
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--report", choices=("json", "csv"), default="json")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="slabkit",
        description="sparse + rank-1 x binary weight compression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="compress layers to .slab files")
    _add_input_flags(p)
    _add_compress_flags(p)
    p.add_argument("--out", required=True, help="output directory for .slab files")
    p.add_argument("--mode", choices=("sequential", "offline"), default="offline")
    p.add_argument("--jobs", type=int, default=1, help="offline-mode layer parallelism")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("sweep-rank", help="error vs factor rank at equal budget")
    _add_input_flags(p)
    _add_compress_flags(p)
    p.add_argument("--ranks", default="0,1,2,4", help="comma-separated ranks, must include 0")
    p.set_defaults(func=cmd_sweep_rank)

    p = sub.add_parser("pack", help="build a .slab from dense tensors (w_s, u, v, optional b)")
    p.add_argument("--tensors", required=True, help=".sltn with w_s, u, v and optional b")
    p.add_argument("--out", required=True, help="output .slab path")
    p.add_argument("--bits", type=int, default=16)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="expand a .slab into dense tensors")
    p.add_argument("--slab", required=True, help="input .slab path")
    p.add_argument("--out", required=True, help="output .sltn path")
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("matvec-bench", help="time and verify the decomposed kernel")
    _add_input_flags(p)
    _add_compress_flags(p)
    p.add_argument("--slab", default=None, help="bench an existing .slab file")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_matvec_bench)

    p = sub.add_parser("oracle-check", help="run the brute-force reference suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None):
    level = os.environ.get("SLAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else EXIT_CONFIG
    try:
        return args.func(args)
    except InfeasibleBudgetError as err:
        print(f"error: infeasible-budget: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except (SlabFormatError, TensorFileError) as err:
        print(f"error: format: {err}", file=sys.stderr)
        return EXIT_IO
    except OSError as err:
        print(f"error: io: {err}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as err:
        print(f"error: io: {err}", file=sys.stderr)
        return EXIT_IO
    except (ManifestError, ConfigError) as err:
        print(f"error: config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as err:
        print(f"error: config: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
