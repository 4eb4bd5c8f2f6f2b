"""Checkpoint-to-container extraction.

Loads a saved torch module, runs one forward pass over calibration data
with capture hooks attached, and writes two files: a manifest JSON naming
every selected linear layer in execution order, and a tensor container
holding each layer's weight ("<name>.w") and pre-layer input activations
("<name>.act", flattened over batch and sequence dims).

Only nn.Linear layers are exported; ReLU, GELU and Identity modules are
recorded as elementwise manifest entries so the layer sequence stays
readable. The default name filter skips embedding and classification-head
layers; explicit include patterns override that default.
"""

from __future__ import annotations

import json
import shutil
import sys
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from pathlib import Path

import numpy as np
import torch

from .sltn import sltn_bytes

DEFAULT_EXCLUDES = ("*embed*", "*lm_head*", "*classifier*", "head", "score")
_ELEMENTWISE = {
    torch.nn.ReLU: "relu",
    torch.nn.GELU: "gelu",
    torch.nn.Identity: "identity",
}


class ExportError(ValueError):
    """Anything that makes the export unusable: empty selection, a captured
    width that disagrees with the layer, or failing the disk preflight."""


@dataclass
class ExportSpec:
    checkpoint: str
    calib: str
    out_dir: str
    include: list = field(default_factory=list)
    exclude: list = field(default_factory=list)
    sequences: int = 128
    seq_len: int = 2048
    dtype: str = "f16"
    seed: int = 0
    manifest_name: str = "model.json"
    tensors_name: str = "tensors.sltn"

    def __post_init__(self):
        if self.dtype not in ("f16", "f32"):
            raise ExportError(f"dtype must be f16 or f32, got {self.dtype!r}")
        if self.sequences < 1 or self.seq_len < 1:
            raise ExportError("sequences and seq_len must be positive")
        if not 0 <= self.seed < 2**64:
            raise ExportError("seed must fit an unsigned 64-bit integer")


def _selected(name, spec):
    if any(fnmatchcase(name, pat) for pat in spec.exclude):
        return False
    if spec.include:
        return any(fnmatchcase(name, pat) for pat in spec.include)
    return not any(fnmatchcase(name, pat) for pat in DEFAULT_EXCLUDES)


def load_module(path):
    model = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(model, torch.nn.Module):
        raise ExportError(
            f"checkpoint {path!r} holds {type(model).__name__}, expected a saved module"
        )
    return model


def load_calibration(path, spec):
    """Load and subsample the calibration batch.

    A 3-D array (sequences, length, width) is cut down to ``spec.sequences``
    rows chosen without replacement under the sampling seed (kept in their
    original order) and truncated to ``spec.seq_len`` positions. A 2-D array
    is already flat samples and is used as-is.
    """
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    elif path.suffix in (".pt", ".pth"):
        loaded = torch.load(path, map_location="cpu", weights_only=True)
        arr = loaded.detach().cpu().numpy()
    else:
        raise ExportError(f"calibration file {path.name!r} must be .npy, .pt or .pth")
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        n_seq = min(spec.sequences, arr.shape[0])
        rng = np.random.default_rng(spec.seed)
        picked = np.sort(rng.choice(arr.shape[0], size=n_seq, replace=False))
        arr = arr[picked, : spec.seq_len, :]
    elif arr.ndim != 2:
        raise ExportError(f"calibration array must be 2-D or 3-D, got shape {arr.shape}")
    return arr


def _capture(model, calib):
    """One forward pass; returns events in execution order and captured inputs.

    Events are ("linear", name) or ("elementwise", name, tag), appended the
    first time each module fires. Captured inputs are flattened to
    (rows, width) and concatenated if a module fires more than once.
    """
    events = []
    grabbed = {}
    seen = set()
    handles = []

    def order(name, kind, tag=None):
        if name not in seen:
            seen.add(name)
            events.append((kind, name, tag))

    def pre_hook(name, module):
        def hook(_module, args):
            x = args[0].detach().cpu().double().numpy()
            flat = x.reshape(-1, x.shape[-1])
            if flat.shape[1] != module.in_features:
                raise ExportError(
                    f"layer {name!r} captured width {flat.shape[1]},"
                    f" its weight wants {module.in_features}"
                )
            order(name, "linear")
            grabbed.setdefault(name, []).append(flat)
        return hook

    def mark_hook(name, tag):
        def hook(_module, _args, output):
            order(name, "elementwise", tag)
            return output
        return hook

    for name, module in model.named_modules():
        name = name or "model"
        if isinstance(module, torch.nn.Linear):
            handles.append(module.register_forward_pre_hook(pre_hook(name, module)))
        elif type(module) in _ELEMENTWISE:
            handles.append(module.register_forward_hook(mark_hook(name, _ELEMENTWISE[type(module)])))

    try:
        dtype = next(model.parameters()).dtype
    except StopIteration:
        dtype = torch.float32
    model.eval()
    try:
        with torch.no_grad():
            model(torch.from_numpy(calib).to(dtype))
    finally:
        for h in handles:
            h.remove()
    return events, {name: np.vstack(parts) for name, parts in grabbed.items()}


def export_model(spec):
    """Run the extraction and write manifest plus tensor container.

    Returns a summary dict with the output paths and per-layer row counts.
    Deterministic for a fixed spec: the sampling seed is the only source of
    randomness, so reruns produce byte-identical files.
    """
    model = load_module(spec.checkpoint)
    calib = load_calibration(spec.calib, spec)
    events, inputs = _capture(model, calib)

    layers = []
    entries = {}
    skipped = []
    for kind, name, tag in events:
        if kind == "elementwise":
            layers.append({"name": name, "kind": "elementwise", "activation": tag})
            continue
        if not _selected(name, spec):
            continue
        module = model.get_submodule(name if name != "model" else "")
        weight = module.weight.detach().cpu().double().numpy()
        layers.append(
            {
                "name": name,
                "kind": "linear",
                "d_out": weight.shape[0],
                "d_in": weight.shape[1],
                "weight_ref": f"{name}.w",
            }
        )
        entries[f"{name}.w"] = weight
        entries[f"{name}.act"] = inputs[name]

    linear_layers = [l for l in layers if l["kind"] == "linear"]
    if not linear_layers:
        raise ExportError("layer filter matches nothing; no linear layers selected")
    for name, module in model.named_modules():
        if isinstance(module, torch.nn.Linear) and (name or "model") not in inputs:
            skipped.append(name or "model")
    for name in skipped:
        print(f"note: linear layer {name!r} never fired and was not exported", file=sys.stderr)

    doc = {
        "layers": layers,
        "tensor_file": spec.tensors_name,
        "input_spec": {"d_in": linear_layers[0]["d_in"]},
        "source": {
            "checkpoint": str(spec.checkpoint),
            "calibration": str(spec.calib),
            "sequences": spec.sequences,
            "seq_len": spec.seq_len,
            "seed": spec.seed,
            "dtype": spec.dtype,
        },
    }
    manifest_text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    blob = sltn_bytes(entries, dtype=spec.dtype)

    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    need = len(blob) + len(manifest_text)
    free = shutil.disk_usage(out_dir).free
    if need > free:
        raise ExportError(f"disk preflight: need {need} bytes, {free} free at {out_dir}")
    (out_dir / spec.tensors_name).write_bytes(blob)
    (out_dir / spec.manifest_name).write_text(manifest_text, encoding="utf-8")

    return {
        "manifest": str(out_dir / spec.manifest_name),
        "tensors": str(out_dir / spec.tensors_name),
        "layers": [l["name"] for l in linear_layers],
        "rows": {l["name"]: int(inputs[l["name"]].shape[0]) for l in linear_layers},
        "bytes": len(blob),
    }
