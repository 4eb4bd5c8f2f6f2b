"""Model-level flows: tensor container, manifest, layer-by-layer compression,
and the rank-sweep and no-binary comparison reports.

The tensor container (.sltn) holds named 2-D tensors:

    header   magic "SLTN" | version u16 | entry count u32
    table    per entry: name_len u16 | name utf-8 | rows u32 | cols u32 |
             dtype u8 (0 = f32, 1 = f16) | absolute byte offset u64
    data     row-major little-endian tensor payloads, in table order

A model manifest is a JSON document listing layers in execution order:
linear layers carry dims and a weight reference into the tensor file,
elementwise layers carry an activation tag (relu, gelu or identity).
Offline-mode activations live in the same container under "<layer>.act".
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import erf

from .calibration import ActivationStats
from .decompose import (
    CompressConfig,
    reconstruct,
    slab_decompose,
    sparsity_budget,
    weighted_error,
)
from .slabfmt import cr_report, pack, packed_length_bits
from .tensor import as_matrix

SLTN_MAGIC = b"SLTN"
SLTN_VERSION = 1
_SLTN_HEADER = struct.Struct("<4sHI")
_SLTN_DTYPES = {"f32": (0, np.dtype("<f4")), "f16": (1, np.dtype("<f2"))}
_SLTN_CODES = {0: "f32", 1: "f16"}

ACTIVATIONS = ("relu", "gelu", "identity")


class ManifestError(ValueError):
    """Structurally invalid manifest or manifest/tensor mismatch."""


class TensorFileError(ValueError):
    """Malformed .sltn container."""


def write_sltn(path, entries, dtype="f32"):
    """Write named tensors to an .sltn container.

    ``entries`` maps name to a 2-D array; insertion order is preserved.
    ``dtype`` is "f32" or "f16", either one tag for every entry or a mapping
    from name to tag.
    """
    names = list(entries)
    table = []
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(entries[name], dtype=np.float64))
        if arr.ndim != 2:
            raise TensorFileError(f"entry {name!r} must be 2-D, got shape {arr.shape}")
        tag = dtype[name] if isinstance(dtype, dict) else dtype
        if tag not in _SLTN_DTYPES:
            raise TensorFileError(f"entry {name!r}: unknown dtype tag {tag!r}")
        code, np_dtype = _SLTN_DTYPES[tag]
        blob = arr.astype(np_dtype).tobytes()
        table.append((name.encode("utf-8"), arr.shape[0], arr.shape[1], code, len(blob)))
        blobs.append(blob)

    table_size = sum(2 + len(nm) + 4 + 4 + 1 + 8 for nm, *_ in table)
    offset = _SLTN_HEADER.size + table_size
    parts = [_SLTN_HEADER.pack(SLTN_MAGIC, SLTN_VERSION, len(table))]
    for (nm, rows, cols, code, size), blob in zip(table, blobs):
        parts.append(struct.pack("<H", len(nm)))
        parts.append(nm)
        parts.append(struct.pack("<IIBQ", rows, cols, code, offset))
        offset += size
    parts.extend(blobs)
    data = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_sltn(path):
    """Load an .sltn container, widening every tensor to float64.

    Returns (tensors, dtypes): a name-to-array dict in file order and the
    stored dtype tag of each entry. Offsets are checked for overlap and the
    declared payload must exactly fill the file.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _SLTN_HEADER.size:
        raise TensorFileError("file ends inside the header")
    magic, version, count = _SLTN_HEADER.unpack_from(data, 0)
    if magic != SLTN_MAGIC:
        raise TensorFileError(f"bad magic {magic!r}")
    if version != SLTN_VERSION:
        raise TensorFileError(f"container version {version}, reader handles {SLTN_VERSION}")

    pos = _SLTN_HEADER.size
    table = []
    for _ in range(count):
        if len(data) < pos + 2:
            raise TensorFileError("file ends inside the entry table")
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if len(data) < pos + name_len + 17:
            raise TensorFileError("file ends inside the entry table")
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        rows, cols, code, offset = struct.unpack_from("<IIBQ", data, pos)
        pos += 17
        if code not in _SLTN_CODES:
            raise TensorFileError(f"entry {name!r}: unknown dtype code {code}")
        table.append((name, rows, cols, code, offset))

    tensors = {}
    dtypes = {}
    expected = pos
    for name, rows, cols, code, offset in table:
        if name in tensors:
            raise TensorFileError(f"duplicate entry name {name!r}")
        tag = _SLTN_CODES[code]
        np_dtype = _SLTN_DTYPES[tag][1]
        size = rows * cols * np_dtype.itemsize
        if offset != expected:
            raise TensorFileError(
                f"entry {name!r} declared at offset {offset}, expected {expected}"
            )
        if len(data) < offset + size:
            raise TensorFileError(f"entry {name!r} runs past the end of the file")
        flat = np.frombuffer(data, dtype=np_dtype, count=rows * cols, offset=offset)
        tensors[name] = flat.astype(np.float64).reshape(rows, cols)
        dtypes[name] = tag
        expected = offset + size
    if expected != len(data):
        raise TensorFileError(f"{len(data) - expected} trailing bytes after the last entry")
    return tensors, dtypes


@dataclass
class ManifestLayer:
    name: str
    kind: str                      # "linear" | "elementwise"
    d_out: int | None = None
    d_in: int | None = None
    weight_ref: str | None = None
    activation: str = "identity"   # elementwise layers only


@dataclass
class ModelManifest:
    layers: list
    tensor_file: str
    input_spec: dict
    extra: dict = field(default_factory=dict)

    def linear_layers(self):
        return [l for l in self.layers if l.kind == "linear"]


_LAYER_KEYS = {"name", "kind", "d_out", "d_in", "weight_ref", "activation"}
_TOP_KEYS = {"layers", "tensor_file", "input_spec"}


def load_manifest(path):
    """Parse a manifest JSON file into a ModelManifest (no tensor checks yet)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return manifest_from_dict(doc)


def manifest_from_dict(doc):
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    for key in _TOP_KEYS:
        if key not in doc:
            raise ManifestError(f"manifest is missing {key!r}")
    layers = []
    for i, entry in enumerate(doc["layers"]):
        if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
            raise ManifestError(f"layer {i} needs at least 'name' and 'kind'")
        kind = entry["kind"]
        if kind not in ("linear", "elementwise"):
            raise ManifestError(f"layer {entry['name']!r}: unknown kind {kind!r}")
        if kind == "linear":
            for key in ("d_out", "d_in", "weight_ref"):
                if key not in entry:
                    raise ManifestError(f"linear layer {entry['name']!r} is missing {key!r}")
        activation = entry.get("activation", "identity")
        if kind == "elementwise" and activation not in ACTIVATIONS:
            raise ManifestError(
                f"layer {entry['name']!r}: unknown activation {activation!r}"
            )
        layers.append(
            ManifestLayer(
                name=entry["name"],
                kind=kind,
                d_out=entry.get("d_out"),
                d_in=entry.get("d_in"),
                weight_ref=entry.get("weight_ref"),
                activation=activation,
            )
        )
    extra = {k: v for k, v in doc.items() if k not in _TOP_KEYS}
    return ModelManifest(
        layers=layers,
        tensor_file=doc["tensor_file"],
        input_spec=dict(doc["input_spec"]),
        extra=extra,
    )


def validate_manifest(manifest, tensors):
    """Hard-check a manifest against loaded tensors; return soft warnings.

    Raises ManifestError on dimension-chain violations, dangling weight
    references, or weight-shape mismatches. Returns a list of warning
    strings for non-fatal oddities (unreferenced tensor entries, linear
    layers with no offline activations, unknown layer fields).
    """
    warnings = []
    width = manifest.input_spec.get("d_in")
    if not isinstance(width, int) or width < 1:
        raise ManifestError("input_spec.d_in must be a positive integer")
    prev_name = "input"
    referenced = set()
    for layer in manifest.layers:
        if layer.kind == "elementwise":
            continue
        if layer.d_in != width:
            raise ManifestError(
                f"dimension chain breaks between {prev_name!r} (width {width})"
                f" and {layer.name!r} (d_in {layer.d_in})"
            )
        if layer.weight_ref not in tensors:
            raise ManifestError(
                f"layer {layer.name!r}: weight_ref {layer.weight_ref!r} not in the tensor file"
            )
        w = tensors[layer.weight_ref]
        if w.shape != (layer.d_out, layer.d_in):
            raise ManifestError(
                f"layer {layer.name!r}: tensor {layer.weight_ref!r} has shape {w.shape},"
                f" manifest declares ({layer.d_out}, {layer.d_in})"
            )
        referenced.add(layer.weight_ref)
        act_name = layer.name + ".act"
        if act_name in tensors:
            referenced.add(act_name)
            if tensors[act_name].shape[1] != layer.d_in:
                raise ManifestError(
                    f"activations {act_name!r} have {tensors[act_name].shape[1]} columns,"
                    f" layer d_in is {layer.d_in}"
                )
        else:
            warnings.append(f"no offline activations for layer {layer.name!r}")
        width = layer.d_out
        prev_name = layer.name
    for name in tensors:
        if name not in referenced:
            warnings.append(f"tensor entry {name!r} is not referenced by the manifest")
    return warnings


def apply_elementwise(tag, x):
    if tag == "relu":
        return np.maximum(x, 0.0)
    if tag == "gelu":
        return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))
    if tag == "identity":
        return x
    raise ManifestError(f"unknown activation {tag!r}")


@dataclass
class LayerReport:
    layer: str
    weighted_error: float
    unweighted_error: float
    cr_paper: float
    cr_actual: float
    k_achieved: int

    def to_dict(self):
        return asdict(self)


def layer_report(name, w, w_hat, s_x, d):
    rep = cr_report(d, packed_length_bits(d))
    return LayerReport(
        layer=name,
        weighted_error=weighted_error(w, w_hat, s_x),
        unweighted_error=float(np.linalg.norm(np.asarray(w) - w_hat)),
        cr_paper=rep.cr_paper,
        cr_actual=rep.cr_actual,
        k_achieved=rep.k_achieved,
    )


def _compress_one(name, w, acts, cfg):
    stats = ActivationStats(w.shape[1])
    stats.accumulate(acts)
    s_x = stats.finalize()
    d = slab_decompose(w, s_x, cfg)
    w_hat = reconstruct(d)
    return d, w_hat, layer_report(name, w, w_hat, s_x, d)


def compress_model(manifest, calib_inputs, cfg, mode="sequential", tensors=None, jobs=1):
    """Compress every linear layer of a model, in manifest order.

    Sequential mode forwards the calibration inputs through the layers as
    they are compressed, so each layer is calibrated against the outputs of
    the already-compressed prefix; elementwise layers are applied in place.
    Offline mode reads precomputed activations from "<layer>.act" entries
    instead and treats layers independently (and may do so in parallel with
    ``jobs`` > 1; results are identical to the serial path because each
    layer's work is self-contained and deterministic).

    Returns (decompositions, reports): a name-keyed dict and a list in
    layer order.
    """
    if mode not in ("sequential", "offline"):
        raise ValueError(f"unknown mode {mode!r}")
    if tensors is None:
        tensors, _ = read_sltn(manifest.tensor_file)
    validate_manifest(manifest, tensors)

    decomps = {}
    reports = []
    if mode == "sequential":
        x = as_matrix(calib_inputs, "calibration inputs")
        if x.shape[1] != manifest.input_spec["d_in"]:
            raise ManifestError(
                f"calibration inputs have {x.shape[1]} columns,"
                f" manifest declares d_in {manifest.input_spec['d_in']}"
            )
        for layer in manifest.layers:
            if layer.kind == "elementwise":
                x = apply_elementwise(layer.activation, x)
                continue
            w = tensors[layer.weight_ref]
            d, w_hat, report = _compress_one(layer.name, w, x, cfg)
            decomps[layer.name] = d
            reports.append(report)
            x = x @ w_hat.T
        return decomps, reports

    linear = manifest.linear_layers()
    for layer in linear:
        if layer.name + ".act" not in tensors:
            raise ManifestError(
                f"offline mode needs activations entry {layer.name + '.act'!r}"
            )

    def run(layer):
        return _compress_one(
            layer.name, tensors[layer.weight_ref], tensors[layer.name + ".act"], cfg
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, linear))
    else:
        results = [run(layer) for layer in linear]
    for layer, (d, _, report) in zip(linear, results):
        decomps[layer.name] = d
        reports.append(report)
    return decomps, reports


def rank_sweep(w, s_x, cfg, ranks):
    """Weighted reconstruction error across low-rank widths at equal budget.

    ``ranks`` must be ascending and start the comparison at 0, which runs
    pure score-based masking with no plane and no factors. Each rank r >= 1
    runs the full decomposition with r factor columns, the sparse budget
    shrunk to keep the total stored bits constant. Returns a list of
    (rank, weighted_error) pairs.
    """
    w = as_matrix(w, "W")
    ranks = [int(r) for r in ranks]
    if ranks != sorted(ranks) or len(set(ranks)) != len(ranks):
        raise ValueError("ranks must be strictly ascending")
    if 0 not in ranks:
        raise ValueError("ranks must include 0, the pure-masking reference")
    if ranks[-1] > min(w.shape):
        raise ValueError(f"rank {ranks[-1]} exceeds min(d_out, d_in) = {min(w.shape)}")
    out = []
    for r in ranks:
        rcfg = replace(
            cfg,
            lowrank_rank=r,
            binary_plane_enabled=cfg.binary_plane_enabled and r >= 1,
        )
        d = slab_decompose(w, s_x, rcfg)
        out.append((r, weighted_error(w, reconstruct(d), s_x)))
    return out


def baseline_sparse_lowrank(w, s_x, cfg, rank):
    """Sparse + plain low-rank fit (no binary plane) at the matched budget.

    The density formula drops the one-bit-per-entry plane cost and charges
    ``rank`` factor columns instead, so the total stored bits equal the full
    decomposition's at the same target ratio.
    """
    w = as_matrix(w, "W")
    bcfg = replace(cfg, binary_plane_enabled=False, lowrank_rank=int(rank))
    sparsity_budget(bcfg, *w.shape)  # surface infeasibility before the fit
    d = slab_decompose(w, s_x, bcfg)
    w_hat = reconstruct(d)
    return layer_report("baseline", w, w_hat, s_x, d)
