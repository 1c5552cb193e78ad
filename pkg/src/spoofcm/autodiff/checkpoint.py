"""Versioned checkpoints: parameters, statistic banks, optimizer state.

One ``.npz`` archive, loaded back bit-exactly.  Keys are namespaced
(``param:...``, ``buffer:...``, ``opt:...``) and validated strictly on load:
unknown names, missing names or shape mismatches all raise.
"""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, model, optimizer=None, extra: dict | None = None) -> None:
    arrays = {"format_version": np.asarray(FORMAT_VERSION, dtype=np.int64)}
    for name, p in model.named_parameters():
        arrays[f"param:{name}"] = p.data
    for name, b in model.named_buffers():
        arrays[f"buffer:{name}"] = b
    if optimizer is not None:
        for key, arr in optimizer.state_arrays().items():
            arrays[f"opt:{key}"] = arr
    meta = dict(extra or {})
    arrays["extra_json"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:  # keep the exact path (np.savez appends .npz)
        np.savez(fh, **arrays)


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore model (and optionally optimizer) state in place; returns extras."""
    with np.load(path) as npz:
        arrays = {k: npz[k] for k in npz.files}
    version = int(arrays.pop("format_version", -1))
    if version != FORMAT_VERSION:
        raise ValueError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    extra_raw = arrays.pop("extra_json", None)
    extra = json.loads(bytes(extra_raw).decode()) if extra_raw is not None else {}

    params = dict(model.named_parameters())
    for name, p in params.items():
        key = f"param:{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint missing parameter {name!r}")
        arr = arrays.pop(key)
        if arr.shape != p.data.shape:
            raise ValueError(f"checkpoint shape mismatch for parameter {name!r}: "
                             f"{arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)

    buffers = dict(model.named_buffers())
    for name, b in buffers.items():
        key = f"buffer:{name}"
        if key not in arrays:
            raise KeyError(f"checkpoint missing buffer {name!r}")
        arr = arrays.pop(key)
        if arr.shape != b.shape:
            raise ValueError(f"checkpoint shape mismatch for buffer {name!r}")
        b[...] = arr  # in place so registered references stay valid

    opt_arrays = {}
    for key in list(arrays):
        if key.startswith("opt:"):
            opt_arrays[key[4:]] = arrays.pop(key)
    if optimizer is not None:
        if not opt_arrays:
            raise KeyError("checkpoint holds no optimizer state")
        optimizer.load_state_arrays(opt_arrays)

    if arrays:
        raise KeyError(f"checkpoint holds unknown entries: {sorted(arrays)[:5]}")
    return extra
