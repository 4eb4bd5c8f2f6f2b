"""From a saved torch model to packed layer files.

The exporter runs one forward pass over a calibration batch, captures
what each linear layer actually sees, and writes the manifest plus tensor
container that the compressor consumes. This script builds a toy
checkpoint, exports it, compresses the result from the command line, and
verifies one packed layer against its own reconstruction.

Requires torch; the other demos do not.
"""

import subprocess
import sys
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

sys.stdout.reconfigure(line_buffering=True)

try:
    import torch
except ImportError:
    print("torch is not installed; this demo needs it")
    sys.exit(0)

from slabkit import load_manifest, slab_matvec, reconstruct
from slabkit.slabfmt import unpack

torch.manual_seed(0)
model = torch.nn.Sequential(OrderedDict([
    ("fc1", torch.nn.Linear(16, 24)),
    ("act", torch.nn.ReLU()),
    ("fc2", torch.nn.Linear(24, 8)),
]))

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    ckpt = tmp / "toy.pt"
    calib = tmp / "calib.npy"
    torch.save(model, ckpt)
    np.save(calib, np.random.default_rng(5).standard_normal((48, 16)).astype(np.float32))

    print("== export: checkpoint to manifest + tensors ==")
    exported = tmp / "exported"
    subprocess.run(
        [sys.executable, "-m", "slab_export",
         "--checkpoint", str(ckpt), "--calib", str(calib), "--out", str(exported)],
        check=True,
    )
    manifest = load_manifest(exported / "model.json")
    print(f"manifest lists: {[(l.name, l.kind) for l in manifest.layers]}")

    print("\n== compress: manifest to packed layer files ==")
    slabs = tmp / "slabs"
    subprocess.run(
        [sys.executable, "-m", "slabkit", "decompose",
         "--manifest", str(exported / "model.json"),
         "--mode", "offline", "--cr", "0.4", "--out", str(slabs)],
        check=True,
    )

    print("\n== verify: one packed layer against its reconstruction ==")
    d = unpack((slabs / "fc1.slab").read_bytes())
    x = np.random.default_rng(6).standard_normal(16)
    dev = np.max(np.abs(slab_matvec(d, x) - reconstruct(d) @ x))
    print(f"fc1.slab: {d.d_out}x{d.d_in}, {d.nnz} kept entries,"
          f" kernel deviation {dev:.2e}")
