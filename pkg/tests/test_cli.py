import json
import subprocess
import sys

import numpy as np
import pytest

import slabkit.cli as cli
from slabkit.cli import main
from slabkit.pipeline import read_sltn, write_sltn


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def model_files(tmp_path, with_calib=True):
    rng = np.random.default_rng(21)
    w1 = rng.standard_normal((10, 12))
    w2 = rng.standard_normal((8, 10))
    x = rng.standard_normal((24, 12))
    entries = {
        "l1.w": w1,
        "l1.act": x,
        "l2.w": w2,
        "l2.act": np.maximum(x @ w1.T, 0.0),
    }
    if with_calib:
        entries["calib.input"] = x
    write_sltn(tmp_path / "weights.sltn", entries)
    doc = {
        "layers": [
            {"name": "l1", "kind": "linear", "d_out": 10, "d_in": 12, "weight_ref": "l1.w"},
            {"name": "mid", "kind": "elementwise", "activation": "relu"},
            {"name": "l2", "kind": "linear", "d_out": 8, "d_in": 10, "weight_ref": "l2.w"},
        ],
        "tensor_file": "weights.sltn",
        "input_spec": {"d_in": 12},
    }
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    return path


class TestParsing:
    def test_unknown_subcommand(self, capsys):
        code, _, _ = run(capsys, "transmogrify")
        assert code == 2

    def test_unknown_flag(self, capsys):
        code, _, _ = run(capsys, "oracle-check", "--frob")
        assert code == 2

    def test_missing_required_flag(self, capsys):
        code, _, _ = run(capsys, "decompose", "--synthetic", "1x8x8")
        assert code == 2  # --out is required

    def test_bad_synthetic_spec(self, capsys):
        code, _, err = run(capsys, "decompose", "--synthetic", "3x4", "--out", "x")
        assert code == 2
        assert "error: config" in err

    def test_bad_nm_spec(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "decompose", "--synthetic", "1x8x8", "--nm", "24", "--out", str(tmp_path)
        )
        assert code == 2
        assert "N:M" in err

    def test_bad_bit_width(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "decompose", "--synthetic", "1x8x8", "--bits", "8", "--out", str(tmp_path)
        )
        assert code == 2
        assert "--bits" in err

    def test_negative_seed(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "decompose", "--synthetic", "1x8x8", "--seed", "-1", "--out", str(tmp_path)
        )
        assert code == 2
        assert "--seed" in err

    def test_bad_structure_choice(self, capsys, tmp_path):
        code, _, _ = run(
            capsys,
            "decompose", "--synthetic", "1x8x8", "--structure", "spiral", "--out", str(tmp_path),
        )
        assert code == 2

    def test_bad_ranks_list(self, capsys):
        code, _, err = run(capsys, "sweep-rank", "--synthetic", "1x8x8", "--ranks", "a,b")
        assert code == 2
        assert "--ranks" in err

    def test_no_input_source(self, capsys):
        code, _, err = run(capsys, "sweep-rank")
        assert code == 2
        assert "--manifest or --synthetic" in err


class TestDecompose:
    def test_synthetic_suite_writes_one_slab_per_layer(self, capsys, tmp_path):
        code, out, _ = run(
            capsys, "decompose", "--synthetic", "3x16x12", "--out", str(tmp_path / "slabs")
        )
        assert code == 0
        names = sorted(p.name for p in (tmp_path / "slabs").glob("*.slab"))
        assert names == ["layer00.slab", "layer01.slab", "layer02.slab"]
        rows = [json.loads(line) for line in out.splitlines()]
        assert [r["layer"] for r in rows] == ["layer00", "layer01", "layer02"]
        for row in rows:
            assert row["cr_actual"] <= row["cr_paper"]
            assert row["k_achieved"] > 0

    def test_reruns_are_byte_identical(self, capsys, tmp_path):
        for sub in ("first", "second"):
            code, _, _ = run(
                capsys,
                "decompose", "--synthetic", "2x16x12", "--seed", "7", "--out",
                str(tmp_path / sub),
            )
            assert code == 0
        for name in ("layer00.slab", "layer01.slab"):
            first = (tmp_path / "first" / name).read_bytes()
            second = (tmp_path / "second" / name).read_bytes()
            assert first == second

    def test_csv_report(self, capsys, tmp_path):
        code, out, _ = run(
            capsys,
            "decompose", "--synthetic", "1x8x8", "--cr", "0.3", "--report", "csv",
            "--out", str(tmp_path),
        )
        assert code == 0
        lines = out.splitlines()
        assert lines[0].split(",")[:2] == ["layer", "weighted_error"]
        assert len(lines) == 2

    def test_infeasible_budget_exits_four(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "decompose", "--synthetic", "1x8x8", "--cr", "0.95", "--out", str(tmp_path)
        )
        assert code == 4
        assert "infeasible-budget" in err

    def test_missing_manifest_exits_three(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "decompose", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)
        )
        assert code == 3
        assert "error: io" in err

    def test_corrupt_manifest_json_exits_three(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{nope")
        code, _, err = run(capsys, "decompose", "--manifest", str(bad), "--out", str(tmp_path))
        assert code == 3

    def test_manifest_offline_end_to_end(self, capsys, tmp_path):
        manifest = model_files(tmp_path, with_calib=False)
        out_dir = tmp_path / "slabs"
        code, out, _ = run(
            capsys, "decompose", "--manifest", str(manifest), "--mode", "offline",
            "--cr", "0.4", "--out", str(out_dir),
        )
        assert code == 0
        assert sorted(p.name for p in out_dir.glob("*.slab")) == ["l1.slab", "l2.slab"]
        rows = [json.loads(line) for line in out.splitlines()]
        assert [r["layer"] for r in rows] == ["l1", "l2"]

    def test_manifest_sequential_end_to_end(self, capsys, tmp_path):
        manifest = model_files(tmp_path, with_calib=True)
        code, out, err = run(
            capsys, "decompose", "--manifest", str(manifest), "--mode", "sequential",
            "--cr", "0.4", "--out", str(tmp_path / "slabs"),
        )
        assert code == 0
        assert (tmp_path / "slabs" / "l2.slab").exists()
        # the calibration entry is not a layer tensor, so validation flags it
        assert "calib.input" in err

    def test_sequential_without_calibration_entry_exits_two(self, capsys, tmp_path):
        manifest = model_files(tmp_path, with_calib=False)
        code, _, err = run(
            capsys, "decompose", "--manifest", str(manifest), "--mode", "sequential",
            "--out", str(tmp_path / "slabs"),
        )
        assert code == 2
        assert "calib.input" in err

    def test_manifest_chain_break_exits_two(self, capsys, tmp_path):
        manifest = model_files(tmp_path)
        doc = json.loads(manifest.read_text())
        doc["layers"][2]["d_in"] = 9
        manifest.write_text(json.dumps(doc))
        code, _, err = run(
            capsys, "decompose", "--manifest", str(manifest), "--out", str(tmp_path / "s")
        )
        assert code == 2
        assert "chain breaks" in err

    def test_wide_factor_blocks_cannot_serialize(self, capsys, tmp_path):
        code, _, err = run(
            capsys,
            "decompose", "--synthetic", "1x8x8", "--no-binary", "--rank", "2",
            "--cr", "0.2", "--out", str(tmp_path),
        )
        assert code == 3
        assert "rank-1" in err

    def test_pure_masking_layers_still_serialize(self, capsys, tmp_path):
        code, _, _ = run(
            capsys,
            "decompose", "--synthetic", "1x8x8", "--no-binary", "--rank", "0",
            "--cr", "0.3", "--out", str(tmp_path),
        )
        assert code == 0
        assert (tmp_path / "layer00.slab").exists()


class TestSweepRank:
    def test_decaying_spectrum_rewards_added_rank(self, capsys):
        code, out, _ = run(
            capsys,
            "sweep-rank", "--synthetic", "3x32x32", "--structure", "decay", "--seed", "11",
            "--cr", "0.5", "--ranks", "0,1,2,4",
        )
        assert code == 0
        rows = [json.loads(line) for line in out.splitlines()]
        assert [r["rank"] for r in rows] == [0, 1, 2, 4]
        errors = [r["mean_weighted_error"] for r in rows]
        assert all(late < early for early, late in zip(errors, errors[1:]))
        assert all(r["layers"] == 3 for r in rows)

    def test_single_reference_rank(self, capsys):
        code, out, _ = run(capsys, "sweep-rank", "--synthetic", "1x8x8", "--ranks", "0")
        assert code == 0
        assert len(out.splitlines()) == 1

    def test_ranks_without_reference_exit_two(self, capsys):
        code, _, err = run(capsys, "sweep-rank", "--synthetic", "1x8x8", "--ranks", "1,2")
        assert code == 2
        assert "include 0" in err


class TestPackUnpack:
    def slab_from_decompose(self, capsys, tmp_path):
        code, _, _ = run(
            capsys, "decompose", "--synthetic", "1x16x12", "--cr", "0.4",
            "--out", str(tmp_path / "slabs"),
        )
        assert code == 0
        return tmp_path / "slabs" / "layer00.slab"

    def test_unpack_then_pack_restores_the_exact_bytes(self, capsys, tmp_path):
        slab = self.slab_from_decompose(capsys, tmp_path)
        original = slab.read_bytes()
        code, out, _ = run(
            capsys, "unpack", "--slab", str(slab), "--out", str(tmp_path / "dense.sltn")
        )
        assert code == 0
        info = json.loads(out)
        assert info["d_out"] == 16 and info["d_in"] == 12
        code, out, _ = run(
            capsys,
            "pack", "--tensors", str(tmp_path / "dense.sltn"), "--bits", "16",
            "--out", str(tmp_path / "rebuilt.slab"),
        )
        assert code == 0
        assert (tmp_path / "rebuilt.slab").read_bytes() == original
        report = json.loads(out)
        assert report["cr_actual"] <= report["cr_paper"]

    def test_unpack_exposes_the_dense_planes(self, capsys, tmp_path):
        slab = self.slab_from_decompose(capsys, tmp_path)
        run(capsys, "unpack", "--slab", str(slab), "--out", str(tmp_path / "dense.sltn"))
        tensors, dtypes = read_sltn(tmp_path / "dense.sltn")
        assert set(tensors) == {"w_s", "u", "v", "b"}
        assert tensors["w_s"].shape == (16, 12)
        assert tensors["u"].shape == (16, 1)
        assert np.all(np.abs(tensors["b"]) == 1.0)
        assert all(tag == "f32" for tag in dtypes.values())

    def test_pack_requires_the_three_planes(self, capsys, tmp_path):
        write_sltn(tmp_path / "t.sltn", {"w_s": np.ones((4, 4)), "u": np.ones((4, 1))})
        code, _, err = run(
            capsys, "pack", "--tensors", str(tmp_path / "t.sltn"), "--out", str(tmp_path / "o")
        )
        assert code == 2
        assert "'v'" in err

    def test_pack_validates_the_sign_plane(self, capsys, tmp_path):
        write_sltn(
            tmp_path / "t.sltn",
            {
                "w_s": np.ones((4, 4)),
                "u": np.ones((4, 1)),
                "v": np.ones((4, 1)),
                "b": np.full((4, 4), 0.5),
            },
        )
        code, _, err = run(
            capsys, "pack", "--tensors", str(tmp_path / "t.sltn"), "--out", str(tmp_path / "o")
        )
        assert code == 2
        assert "+1/-1" in err

    def test_pack_checks_factor_lengths(self, capsys, tmp_path):
        write_sltn(
            tmp_path / "t.sltn",
            {"w_s": np.ones((4, 4)), "u": np.ones((3, 1)), "v": np.ones((4, 1))},
        )
        code, _, err = run(
            capsys, "pack", "--tensors", str(tmp_path / "t.sltn"), "--out", str(tmp_path / "o")
        )
        assert code == 2
        assert "lengths" in err

    def test_unpack_missing_file_exits_three(self, capsys, tmp_path):
        code, _, err = run(
            capsys, "unpack", "--slab", str(tmp_path / "nope.slab"), "--out", str(tmp_path / "o")
        )
        assert code == 3

    def test_unpack_truncated_slab_exits_three(self, capsys, tmp_path):
        slab = self.slab_from_decompose(capsys, tmp_path)
        clipped = tmp_path / "clipped.slab"
        clipped.write_bytes(slab.read_bytes()[:-3])
        code, _, err = run(
            capsys, "unpack", "--slab", str(clipped), "--out", str(tmp_path / "o")
        )
        assert code == 3
        assert "error: format" in err


class TestMatvecBench:
    def test_existing_slab_passes(self, capsys, tmp_path):
        code, _, _ = run(
            capsys, "decompose", "--synthetic", "1x16x12", "--out", str(tmp_path)
        )
        assert code == 0
        code, out, err = run(
            capsys,
            "matvec-bench", "--slab", str(tmp_path / "layer00.slab"), "--trials", "20",
        )
        assert code == 0
        row = json.loads(out)
        assert row["layer"] == "layer00.slab"
        assert row["max_rel_deviation"] <= 1e-5

    def test_synthetic_layers_pass(self, capsys):
        code, out, _ = run(
            capsys, "matvec-bench", "--synthetic", "2x16x12", "--trials", "10"
        )
        assert code == 0
        assert len(out.splitlines()) == 2

    def test_deviation_over_tolerance_exits_one(self, capsys, monkeypatch):
        monkeypatch.setattr(cli, "MATVEC_TOLERANCE", -1.0)
        code, _, err = run(
            capsys, "matvec-bench", "--synthetic", "1x8x8", "--trials", "5"
        )
        assert code == 1
        assert "matvec-deviation" in err
        assert "layer00" in err

    def test_needs_some_input(self, capsys):
        code, _, err = run(capsys, "matvec-bench")
        assert code == 2


class TestOracleCheck:
    def test_full_suite_passes(self, capsys):
        code, out, _ = run(capsys, "oracle-check", "--seed", "3")
        assert code == 0
        lines = out.splitlines()
        assert lines[-1] == "all checks passed"
        assert sum(1 for line in lines if line.startswith("ok: ")) == 7
        assert not any(line.startswith("FAIL") for line in lines)


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "slabkit", "--help"],
            capture_output=True,
            text=True,
            timeout=60,
        )
        assert proc.returncode == 0
        assert "decompose" in proc.stdout
        assert "oracle-check" in proc.stdout
