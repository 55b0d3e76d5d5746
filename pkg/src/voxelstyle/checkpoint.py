"""Binary model checkpoints.

Layout (little-endian)::

    magic     8 bytes  b"VXSCKPT\\0"
    version   uint32
    hlen      uint64   length of the JSON header
    header    hlen bytes of UTF-8 JSON (specs, tensor table, config echo, crc32)
    payload   raw tensor bytes, in header order

Every tensor is stored verbatim, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hash_encoder import HashGridParams, HashGridSpec
from .radiance_model import BRANCHES, Branch, BranchId, MlpParams, ModelSpec, RadianceModel

MAGIC = b"VXSCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: RadianceModel
    iteration: int = 0
    config: dict = field(default_factory=dict)


def _hash_spec_dict(spec: HashGridSpec) -> dict:
    d = asdict(spec)
    d["bounds"] = [list(b) for b in spec.bounds]
    return d


def _hash_spec_from(d: dict) -> HashGridSpec:
    d = dict(d)
    d["bounds"] = tuple(tuple(float(v) for v in b) for b in d["bounds"])
    return HashGridSpec(**d)


def save_checkpoint(model: RadianceModel, path, iteration: int = 0,
                    config: dict | None = None) -> None:
    tensors, table, offset = [], [], 0
    for name, arr in model.parameters().items():
        data = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = data.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": data.dtype.str,
                      "offset": offset, "nbytes": len(raw)})
        tensors.append(raw)
        offset += len(raw)
    payload = b"".join(tensors)
    spec = model.spec
    header = {
        "model_spec": {"geom_dim": spec.geom_dim, "density_hidden": list(spec.density_hidden),
                       "color_hidden": list(spec.color_hidden),
                       "hidden_activation": spec.hidden_activation},
        "hash_specs": {b.value: _hash_spec_dict(model.branches[b].hash_spec) for b in BRANCHES},
        "activations": {
            **{b.value: list(model.branches[b].density_mlp.activations) for b in BRANCHES},
            "color": list(model.color_mlp.activations),
        },
        "dtype": model.dtype.str,
        "iteration": int(iteration),
        "config": config or {},
        "tensors": table,
        "payload_bytes": len(payload),
        "crc32": zlib.crc32(payload),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        f.write(hbytes)
        f.write(payload)


def read_checkpoint(path) -> Checkpoint:
    """Parse and validate a checkpoint; raises :class:`CheckpointError` on any defect."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated (file shorter than the fixed prefix)")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a voxelstyle checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted header: {exc}") from exc
    payload = blob[start + hlen:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, "
                              f"header declares {header['payload_bytes']}")
    if zlib.crc32(payload) != header["crc32"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    arrays = {}
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        chunk = payload[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(chunk, dtype=dt).reshape(t["shape"]).copy()
    try:
        model = _assemble(header, arrays)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent contents: {exc}") from exc
    return Checkpoint(model, header["iteration"], header["config"])


def _mlp(arrays, prefix, activations) -> MlpParams:
    n = len(activations)
    return MlpParams([arrays[f"{prefix}/w{i}"] for i in range(n)],
                     [arrays[f"{prefix}/b{i}"] for i in range(n)], tuple(activations))


def _assemble(header, arrays) -> RadianceModel:
    ms = header["model_spec"]
    spec = ModelSpec(ms["geom_dim"], tuple(ms["density_hidden"]), tuple(ms["color_hidden"]),
                     ms["hidden_activation"])
    branches = {}
    for b in BRANCHES:
        hs = _hash_spec_from(header["hash_specs"][b.value])
        tables = HashGridParams(arrays[f"{b.value}/hash"])
        tables.validate(hs)
        dens = _mlp(arrays, f"{b.value}/density", header["activations"][b.value])
        branches[BranchId(b)] = Branch(hs, tables, dens)
    color = _mlp(arrays, "color", header["activations"]["color"])
    return RadianceModel(spec, branches, color, np.dtype(header["dtype"]))


def load_checkpoint(path) -> RadianceModel:
    return read_checkpoint(path).model
