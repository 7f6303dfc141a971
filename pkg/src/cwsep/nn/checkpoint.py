"""Versioned binary weight checkpoints.

Layout (little-endian)::

    magic      8 bytes   b"CWSCKPT\\0"
    version    uint32
    fingerprint 32 bytes sha256 of the layer specs
    header_len uint32
    header     JSON: architecture config, in/out channels, K, array names
    arrays     per parameter then per buffer, in declaration order:
               uint32 element count, float32 data
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from ..exceptions import IncompatibleCheckpointError
from .builders import build_network

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint", "read_header"]

MAGIC = b"CWSCKPT\x00"
VERSION = 1


def _arrays(net):
    return list(net.named_params()) + list(net.named_buffers())


def save_checkpoint(path, net, extra=None) -> None:
    """Atomically write ``net`` (write to a temp file, then rename)."""
    arrays = _arrays(net)
    header = {
        "config": net.config,
        "in_channels": net.in_channels,
        "out_channels": net.out_channels,
        "names": [name for name, _ in arrays],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), bytes.fromhex(net.fingerprint()),
             struct.pack("<I", len(blob)), blob]
    for _, arr in arrays:
        data = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<I", data.size))
        parts.append(data.tobytes())
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse(buf):
    if buf[:8] != MAGIC:
        raise IncompatibleCheckpointError("not a cwsep checkpoint (bad magic)")
    version = struct.unpack_from("<I", buf, 8)[0]
    if version != VERSION:
        raise IncompatibleCheckpointError(f"unsupported checkpoint version {version}")
    fingerprint = buf[12:44].hex()
    hlen = struct.unpack_from("<I", buf, 44)[0]
    header = json.loads(buf[48 : 48 + hlen].decode())
    return fingerprint, header, 48 + hlen


def read_header(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    fingerprint, header, _ = _parse(buf)
    return fingerprint, header


def load_checkpoint(path, net=None, dtype=np.float64):
    """Load weights into ``net`` (or a network rebuilt from the header).

    Raises :class:`IncompatibleCheckpointError` if the stored fingerprint does
    not match the target network's layer specs.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    fingerprint, header, pos = _parse(buf)
    if net is None:
        cfg = dict(header["config"])
        dropout = cfg.get("dropout", 0.0)
        net = build_network(cfg, header["in_channels"], header["out_channels"],
                            dropout=dropout, dtype=dtype)
    if net.fingerprint() != fingerprint:
        raise IncompatibleCheckpointError(
            "checkpoint architecture fingerprint does not match the network"
        )
    targets = dict(_arrays(net))
    for name in header["names"]:
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
        pos += 4 * count
        arr = targets[name]
        if arr.size != count:
            raise IncompatibleCheckpointError(f"{name}: {count} values, expected {arr.size}")
        arr[...] = data.reshape(arr.shape)
    return net, header.get("extra", {})
