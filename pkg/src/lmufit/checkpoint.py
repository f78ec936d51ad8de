"""Self-describing binary container for model and optimizer state.

Layout::

    b"LMUFITCK"                      8-byte magic
    uint32 LE  format version
    uint64 LE  header length H
    H bytes    UTF-8 JSON header: {"kind", "meta", "arrays": [{name, shape, offset}]}
    payload    float64 little-endian arrays, concatenated in header order

``offset`` counts bytes from the start of the payload. Round trips are bit-exact.
"""
import json
import struct

import numpy as np

from .errors import FormatError
from .layers import LAYER_TYPES, Sequential

MAGIC = b"LMUFITCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def save_container(path, kind, meta, arrays):
    table = []
    offset = 0
    blobs = []
    for name, a in arrays.items():
        a = np.ascontiguousarray(a, dtype="<f8")
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"kind": kind, "meta": meta, "arrays": table}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path, kind=None):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise FormatError("truncated container prefix", 0)
    magic, version, hlen = _PREFIX.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 8)
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise FormatError("truncated header", start)
    header = json.loads(raw[start:start + hlen].decode())
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"expected a {kind!r} container, found {header['kind']!r}", start)
    payload = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        lo = payload + entry["offset"]
        if lo + 8 * count > len(raw):
            raise FormatError(f"array {entry['name']!r} runs past end of file", lo)
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=lo).reshape(entry["shape"]).astype(np.float64)
    return header["meta"], arrays


def save_model(path, model):
    layers = [{"type": layer.kind, "config": layer.config()} for layer in model.layers]
    save_container(path, "model", {"layers": layers}, model.parameters())


def load_model(path):
    meta, arrays = load_container(path, "model")
    layers = []
    for i, spec in enumerate(meta["layers"]):
        layer = LAYER_TYPES[spec["type"]](**spec["config"])
        for name in layer.params:
            key = f"{i}.{name}"
            if key not in arrays:
                raise FormatError(f"checkpoint lacks parameter {key!r}")
            layer.params[name] = arrays[key]
        layers.append(layer)
    return Sequential(layers)


def save_optimizer(path, state):
    save_container(path, "adam", state.hyper(), state.arrays())


def load_optimizer(path):
    from .train import AdamState
    hyper, arrays = load_container(path, "adam")
    return AdamState.from_arrays(hyper, arrays)
