"""Checkpoints: a JSON manifest plus one raw little-endian float32 blob
per named array.

The manifest records the model kind, every array's name and shape, the
flatten-order declaration for conv-to-linear transitions, the config
hash, the epoch, and the training RNG state, so a run can be audited or
replayed without this library.  Save -> load -> save round-trips every
blob byte-identically.

Array naming: model parameters keep their hierarchical names
(``encoder.trunk.conv1.weight``); optimizer buffers are stored under
``opt.<optimizer>.<buffer>.<parameter name>``.
"""

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import build_variant

FLATTEN_ORDER = "channel_major: [B,C,H,W] -> [B, C*H*W] row-major"


def _write_blob(path, array):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_blob(path, shape):
    data = Path(path).read_bytes()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise ConfigError(f"{path}: expected {expected} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def save_checkpoint(ckpt_dir, model, optimizers=None, rng_state=None, epoch=0,
                    config_hash="", extra=None):
    """Write manifest.json + params/*.f32 under `ckpt_dir`."""
    ckpt_dir = Path(ckpt_dir)
    arrays = {name: p.data for name, p in model.parameters()}
    if optimizers:
        for opt_name, opt in optimizers.items():
            state = opt.state_dict()
            for buf_name, buffers in state.items():
                for pname, arr in buffers.items():
                    arrays[f"opt.{opt_name}.{buf_name}.{pname}"] = arr

    entries = []
    for name in sorted(arrays):
        rel = f"params/{name}.f32"
        _write_blob(ckpt_dir / rel, arrays[name])
        entries.append({"name": name, "shape": list(arrays[name].shape), "file": rel})

    manifest = {
        "model": {
            "kind": model.kind,
            "sigma": model.corruption.sigma,
            "corruption_seed": model.corruption.seed,
            "label_prior": model.label_prior,
        },
        "epoch": int(epoch),
        "config_hash": config_hash,
        "flatten_order": FLATTEN_ORDER,
        "dtype": "float32 little-endian",
        "rng_state": _jsonable(rng_state),
        "arrays": entries,
    }
    if extra:
        manifest["extra"] = extra
    with open(ckpt_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return ckpt_dir


def _jsonable(obj):
    if obj is None:
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def load_manifest(ckpt_dir):
    with open(Path(ckpt_dir) / "manifest.json") as fh:
        return json.load(fh)


def load_checkpoint(ckpt_dir):
    """Rebuild the model (and return optimizer buffers + rng state).

    Returns (model, optimizer_states, rng_state, manifest) where
    optimizer_states maps optimizer name -> {buffer -> {param -> array}}.
    """
    ckpt_dir = Path(ckpt_dir)
    manifest = load_manifest(ckpt_dir)
    info = manifest["model"]
    model = build_variant(info["kind"], sigma=info["sigma"], label_prior=info["label_prior"])
    model.corruption.seed = info.get("corruption_seed", 0)

    blobs = {}
    for entry in manifest["arrays"]:
        blobs[entry["name"]] = _read_blob(ckpt_dir / entry["file"], entry["shape"])

    params = dict(model.parameters())
    for name, p in params.items():
        if name not in blobs:
            raise ConfigError(f"checkpoint is missing parameter {name!r}")
        if tuple(blobs[name].shape) != tuple(p.shape):
            raise ConfigError(
                f"parameter {name!r} has shape {blobs[name].shape}, expected {tuple(p.shape)}"
            )
        p.assign_(blobs[name])

    optimizer_states = {}
    for name, arr in blobs.items():
        if not name.startswith("opt."):
            continue
        _, opt_name, buf_name, pname = name.split(".", 3)
        optimizer_states.setdefault(opt_name, {}).setdefault(buf_name, {})[pname] = arr

    return model, optimizer_states, manifest.get("rng_state"), manifest
