"""Checkpoint container: magic "CWTO", u32 version, length-prefixed JSON
header, then the declared float32 little-endian arrays in order."""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .layers import LayerSpec
from .network import Network

MAGIC = b"CWTO"
VERSION = 1


def save_checkpoint(
    path: Path,
    networks: dict[str, Network],
    config: dict,
    extra: dict | None = None,
    include_opt_state: bool = True,
) -> None:
    header: dict = {
        "config": config,
        "extra": extra or {},
        "order": list(networks),
        "networks": {},
    }
    blobs: list[np.ndarray] = []
    for name, net in networks.items():
        arrays = []
        for pname, arr in net.parameters():
            arrays.append({"name": pname, "role": "param", "shape": list(arr.shape)})
            blobs.append(arr)
        for sname, arr in net.state_arrays():
            arrays.append({"name": sname, "role": "state", "shape": list(arr.shape)})
            blobs.append(arr)
        if include_opt_state:
            for pname, p in net.parameters():
                arrays.append({"name": pname, "role": "opt", "shape": list(p.shape)})
                blobs.append(net.opt_state.get(pname, np.zeros_like(p)))
        header["networks"][name] = {
            "specs": [s.to_dict() for s in net.specs],
            "arrays": arrays,
        }
    head = json.dumps(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            fh.write(struct.pack("<I", len(head)))
            fh.write(head)
            for arr in blobs:
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: Path) -> tuple[dict[str, Network], dict, dict]:
    """Returns (networks, config, extra). Networks are float32."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic in checkpoint {path}")
    version, head_len = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} in {path}")
    if len(raw) < 12 + head_len:
        raise CheckpointError(f"truncated checkpoint header in {path}")
    try:
        header = json.loads(raw[12: 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {exc}") from exc

    offset = 12 + head_len
    networks: dict[str, Network] = {}
    for name in header["order"]:
        section = header["networks"][name]
        specs = [LayerSpec.from_dict(d) for d in section["specs"]]
        net = Network(specs, seed=0, dtype=np.float32)
        for entry in section["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = 4 * count
            if offset + nbytes > len(raw):
                raise CheckpointError(f"truncated array data in {path} at {entry['name']}")
            arr = np.frombuffer(raw[offset: offset + nbytes], dtype="<f4").reshape(shape).copy()
            offset += nbytes
            if entry["role"] in ("param", "state"):
                net.set_param(entry["name"], arr)
            elif entry["role"] == "opt":
                net.opt_state[entry["name"]] = arr
            else:
                raise CheckpointError(f"unknown array role {entry['role']!r} in {path}")
        networks[name] = net
    return networks, header["config"], header["extra"]
