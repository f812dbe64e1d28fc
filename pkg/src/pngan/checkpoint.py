"""Self-describing checkpoint container.

File layout::

    b"PNGANCKPT\\n"                      magic
    uint64 little-endian                 header length in bytes
    header (UTF-8 JSON, sorted keys)     {"format_version", "meta", "arrays": [...]}
    raw array bytes                      little-endian, C order, concatenated

Each array entry records ``name``, ``dtype``, ``shape``, ``offset`` and
``nbytes``. Names are namespaced, e.g. ``generator/head.weight``,
``discriminator/convs.0.bias``, ``denoiser/...``, ``optim_g/...``.
Writing is deterministic, so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

__all__ = [
    "FORMAT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
    "module_arrays",
    "load_module_arrays",
    "optimizer_arrays",
    "load_optimizer_arrays",
]

FORMAT_VERSION = 1
MAGIC = b"PNGANCKPT\n"


def save_checkpoint(path: str | Path, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))
        data = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"format_version": FORMAT_VERSION, "meta": meta or {}, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Return ``(arrays, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start:start + hlen])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    body = start + hlen
    arrays = {}
    for e in header["arrays"]:
        buf = raw[body + e["offset"]: body + e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def module_arrays(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_module_arrays(module: torch.nn.Module, arrays: dict, prefix: str) -> torch.nn.Module:
    state = {k[len(prefix) + 1:]: torch.from_numpy(v) for k, v in arrays.items()
             if k.startswith(prefix + "/")}
    if not state:
        raise KeyError(f"no arrays under namespace {prefix!r}")
    module.load_state_dict(state, strict=True)
    return module


def optimizer_arrays(opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str) -> dict:
    """Adam moments keyed by parameter name."""
    out = {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        for key, val in st.items():
            out[f"{prefix}/{name}/{key}"] = torch.as_tensor(val).detach().cpu().numpy()
    return out


def load_optimizer_arrays(opt: torch.optim.Optimizer, module: torch.nn.Module, arrays: dict,
                          prefix: str) -> None:
    for name, p in module.named_parameters():
        keys = [k for k in arrays if k.startswith(f"{prefix}/{name}/")]
        if keys:
            opt.state[p] = {k.rsplit("/", 1)[1]: torch.from_numpy(arrays[k].copy()) for k in keys}
