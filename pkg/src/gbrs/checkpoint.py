"""Binary checkpoint format for pretrained networks.

Layout: magic ``GBRS``, little-endian u32 version, length-prefixed UTF-8
structured-text header describing the architecture, then per-tensor records
(length-prefixed name, u32 rank, u64 dims, little-endian float64 payload).
Round-trips are bitwise exact.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import LoadError
from .networks import Network, NetworkSpec
from .tensor import Tensor

MAGIC = b"GBRS"
VERSION = 1


def _header_text(spec: NetworkSpec) -> str:
    lines = [
        f"task={spec.task}",
        f"in_channels={spec.in_channels}",
        f"out_channels={spec.out_channels}",
        f"interaction_clip={spec.interaction_clip!r}",
        "insertion_points=" + ",".join(f"{k}:{v}" for k, v in spec.insertion_points.items()),
    ]
    lines += [f"block={b}" for b in spec.blocks]
    return "\n".join(lines) + "\n"


def _parse_header(text: str) -> NetworkSpec:
    fields: dict[str, str] = {}
    blocks: list[str] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        if key == "block":
            blocks.append(value)
        else:
            fields[key] = value
    try:
        points = {}
        for part in fields["insertion_points"].split(","):
            name, _, idx = part.partition(":")
            points[name] = int(idx)
        return NetworkSpec(
            task=fields["task"],
            in_channels=int(fields["in_channels"]),
            out_channels=int(fields["out_channels"]),
            blocks=tuple(blocks),
            insertion_points=points,
            interaction_clip=float(fields["interaction_clip"]),
        )
    except (KeyError, ValueError) as exc:
        raise LoadError(f"malformed checkpoint header: {exc}") from exc


def write_tensor_records(buf, tensors: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_tensor_records(buf) -> dict[str, np.ndarray]:
    (count,) = _read_struct(buf, "<I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _read_struct(buf, "<I")
        name = _read_bytes(buf, name_len).decode("utf-8")
        (rank,) = _read_struct(buf, "<I")
        dims = [_read_struct(buf, "<Q")[0] for _ in range(rank)]
        n = int(np.prod(dims)) if dims else 1
        payload = _read_bytes(buf, n * 8)
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    return out


def _read_bytes(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise LoadError("truncated checkpoint data")
    return data


def _read_struct(buf, fmt: str):
    return struct.unpack(fmt, _read_bytes(buf, struct.calcsize(fmt)))


def save_checkpoint(path: str, network: Network) -> None:
    header = _header_text(network.spec).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        write_tensor_records(f, {k: v.data for k, v in network.params.items()})


def load_checkpoint(path: str) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    return load_checkpoint_bytes(data)


def load_checkpoint_bytes(data: bytes) -> Network:
    buf = io.BytesIO(data)
    if _read_bytes(buf, 4) != MAGIC:
        raise LoadError("not a checkpoint file (bad magic)")
    (version,) = _read_struct(buf, "<I")
    if version != VERSION:
        raise LoadError(f"unsupported checkpoint version {version}")
    (header_len,) = _read_struct(buf, "<I")
    spec = _parse_header(_read_bytes(buf, header_len).decode("utf-8"))
    arrays = read_tensor_records(buf)
    reference = Network.build(spec.task, seed=0)
    if set(arrays) != set(reference.params):
        raise LoadError("checkpoint parameter names do not match the architecture")
    params = {}
    for name, arr in arrays.items():
        if arr.shape != reference.params[name].data.shape:
            raise LoadError(
                f"parameter {name} has shape {arr.shape}, "
                f"expected {reference.params[name].data.shape}"
            )
        params[name] = Tensor(arr)
    return Network(spec, params)
