"""Binary checkpoint format for named float64 tensors.

Layout (all integers little-endian unsigned 32-bit)::

    b"DKGM" | version | { name_len | name (utf-8) | rank | dims... | float64 data }*

Records follow one another until end of file.  Data is row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import MlpSpec, TimeConditionedNet

MAGIC = b"DKGM"
VERSION = 1

__all__ = ["MAGIC", "VERSION", "dumps", "loads", "save", "load",
           "net_to_tensors", "net_from_tensors"]


def dumps(tensors: dict[str, np.ndarray], version: int = VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[int, dict[str, np.ndarray]]:
    """Parse a checkpoint; returns ``(version, tensors)``."""
    if blob[:4] != MAGIC:
        raise ValueError("not a DKGM checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    pos = 8
    tensors = {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            end = pos + 8 * count
            if end > len(blob):
                raise ValueError(f"truncated data for tensor {name!r}")
            tensors[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(dims).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise ValueError("truncated checkpoint") from exc
    return version, tensors


def save(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())[1]


def net_to_tensors(net: TimeConditionedNet, prefix: str = "") -> dict[str, np.ndarray]:
    """Flatten a network (architecture included) into named tensors."""
    spec = net.spec
    out = {
        f"{prefix}spec.layer_widths": np.array(spec.layer_widths, dtype=float),
        f"{prefix}spec.activation": np.array(float(spec.activation == "relu")),
        f"{prefix}spec.skip_connection": np.array(float(spec.skip_connection)),
        f"{prefix}spec.time_embed_dim": np.array(float(spec.time_embed_dim)),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}layer{i}.weight"] = w
        out[f"{prefix}layer{i}.bias"] = b
    return out


def net_from_tensors(tensors: dict[str, np.ndarray], prefix: str = "") -> TimeConditionedNet:
    spec = MlpSpec(
        layer_widths=tuple(int(w) for w in tensors[f"{prefix}spec.layer_widths"]),
        activation="relu" if tensors[f"{prefix}spec.activation"] else "tanh",
        skip_connection=bool(tensors[f"{prefix}spec.skip_connection"]),
        time_embed_dim=int(tensors[f"{prefix}spec.time_embed_dim"]),
    )
    n_layers = len(spec.layer_shapes)
    weights = [tensors[f"{prefix}layer{i}.weight"].ravel() for i in range(n_layers)]
    biases = [tensors[f"{prefix}layer{i}.bias"].ravel() for i in range(n_layers)]
    return TimeConditionedNet(spec, np.concatenate(weights + biases))
