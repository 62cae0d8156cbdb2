"""Single-file checkpoints: metadata plus flat little-endian float32 parameter arrays."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save_checkpoint(path: str | Path, model: nn.Module, *, model_kind: str, config: dict,
                    step: int = 0, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "model_kind": model_kind, "config": config,
            "step": int(step), **(extra or {})}
    arrays = {name: t.detach().cpu().numpy().astype("<f4") for name, t in model.state_dict().items()}
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as archive:
        meta = json.loads(archive[_META_KEY].tobytes().decode())
        params = {k: archive[k] for k in archive.files if k != _META_KEY}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
    return meta, params


def load_into(model: nn.Module, params: dict[str, np.ndarray]) -> nn.Module:
    state = {k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in params.items()}
    model.load_state_dict(state)
    return model


def load_network(path: str | Path):
    from .network import NetworkConfig, SAANet

    meta, params = read_checkpoint(path)
    if meta["model_kind"] != "saanet":
        raise ValueError(f"{path} holds a {meta['model_kind']!r} model, not a reconstruction network")
    model = load_into(SAANet(NetworkConfig.from_dict(meta["config"])), params)
    model.eval()
    return model, meta


def load_autoencoder(path: str | Path):
    from .perceptual import AutoEncoder3D, freeze

    meta, params = read_checkpoint(path)
    if meta["model_kind"] != "autoencoder":
        raise ValueError(f"{path} holds a {meta['model_kind']!r} model, not an auto-encoder")
    return freeze(load_into(AutoEncoder3D(), params)), meta
