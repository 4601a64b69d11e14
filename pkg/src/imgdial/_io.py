"""Versioned single-file checkpoint records: magic, version, JSON header, torch payload."""

import io
import json
import struct

import torch

_HEAD = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def write_record(path, magic, version, header, state):
    buf = io.BytesIO()
    torch.save(state, buf)
    payload = buf.getvalue()
    meta = dict(header, payload_bytes=len(payload))
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(magic, version, len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_record(path, magic, version):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    got_magic, got_version, hlen = _HEAD.unpack_from(data)
    if got_magic != magic:
        raise CheckpointError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise CheckpointError(f"{path}: unsupported version {got_version}")
    end = _HEAD.size + hlen
    if len(data) < end:
        raise CheckpointError(f"{path}: truncated checkpoint")
    header = json.loads(data[_HEAD.size:end].decode("utf-8"))
    payload = data[end:]
    if len(payload) != header.pop("payload_bytes"):
        raise CheckpointError(f"{path}: truncated checkpoint")
    state = torch.load(io.BytesIO(payload), weights_only=True)
    return header, state
