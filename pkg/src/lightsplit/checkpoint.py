"""Deterministic checkpoint files with JSON sidecars.

torch.save embeds archive metadata that varies between writes, which breaks
bit-identical reproduction. Checkpoints here are a pickled dict of numpy
arrays plus plain metadata; identical states produce identical bytes. Each
checkpoint <path> gets a human-readable sidecar <path>.json without weights.
"""

from __future__ import annotations

import json
import pickle
from pathlib import Path

import numpy as np
import torch


def state_to_numpy(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def load_state_from_numpy(module: torch.nn.Module, state: dict[str, np.ndarray]) -> None:
    module.load_state_dict({k: torch.from_numpy(np.asarray(v)) for k, v in state.items()})


def save_checkpoint(path: str | Path, kind: str, version: int, payload: dict) -> None:
    """Write payload (meta plus 'state' numpy arrays) and its JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"kind": kind, "version": version, **payload}
    path.write_bytes(pickle.dumps(blob, protocol=4))
    sidecar = {k: v for k, v in blob.items() if k != "state"}
    sidecar["state_keys"] = sorted(payload.get("state", {}).keys())
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path, kind: str, version: int) -> dict:
    """Read a checkpoint, failing loudly on kind or version mismatch."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = pickle.loads(path.read_bytes())
    if not isinstance(blob, dict) or "kind" not in blob or "version" not in blob:
        raise ValueError(f"{path} is not a checkpoint file")
    if blob["kind"] != kind:
        raise ValueError(f"{path} holds a '{blob['kind']}' checkpoint, expected '{kind}'")
    if blob["version"] != version:
        raise ValueError(f"{path} has checkpoint version {blob['version']}, this code expects {version}")
    return blob
