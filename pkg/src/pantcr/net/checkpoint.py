"""Checkpoint directories: ``config.json``, ``weights.bin`` (little-endian) and ``weights.json`` index."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatError
from .config import NetworkConfig
from .model import PanTCRNet

_NP_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


def save_checkpoint(model: PanTCRNet, path, extra: dict | None = None) -> Path:
    """Write every parameter and buffer of ``model`` in ``state_dict`` order."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = {}
    offset = 0
    chunks = []
    for name, tensor in model.state_dict().items():
        dtype = _NP_DTYPES.get(tensor.dtype)
        if dtype is None:
            raise FormatError(f"cannot store {name} of dtype {tensor.dtype}")
        raw = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype=dtype).tobytes()
        index[name] = {"offset": offset, "shape": list(tensor.shape), "dtype": dtype}
        chunks.append(raw)
        offset += len(raw)
    (path / "weights.bin").write_bytes(b"".join(chunks))
    (path / "weights.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    meta = {"network": model.cfg.to_dict()}
    if extra:
        meta.update(extra)
    (path / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path, dtype=torch.float32) -> tuple[PanTCRNet, dict]:
    """Rebuild the network from a checkpoint directory; returns ``(model, meta)``."""
    path = Path(path)
    try:
        meta = json.loads((path / "config.json").read_text())
        index = json.loads((path / "weights.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: incomplete checkpoint ({exc.filename})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt checkpoint metadata ({exc})") from exc
    model = PanTCRNet(NetworkConfig.from_dict(meta["network"]))
    expected = model.state_dict()
    if set(index) != set(expected):
        missing = sorted(set(expected) - set(index))
        extra = sorted(set(index) - set(expected))
        raise FormatError(f"{path}: tensor mismatch (missing {missing[:3]}, unexpected {extra[:3]})")
    state = {}
    for name, rec in index.items():
        dt = np.dtype(rec["dtype"])
        count = int(np.prod(rec["shape"], dtype=np.int64))
        end = rec["offset"] + count * dt.itemsize
        if end > len(blob):
            raise FormatError(f"{path}: weights.bin truncated at {name}")
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=rec["offset"]).reshape(rec["shape"])
        state[name] = torch.from_numpy(arr.copy())
    model.load_state_dict(state)
    return model.to(dtype), meta
