"""Versioned, integrity-checked checkpoint files.

Layout (JSON, keys sorted, UTF-8)::

    {
      "format_version": 1,
      "architecture": {"repr_mode", "n_inputs", "n_actions", "has_extra_action", "hidden"},
      "encoder_params": {name: {"shape": [...], "dtype": "<f8", "data": base64}},
      "head_params": {...},
      "metadata": {"phase", "steps", "seed"},
      "digest": sha256 hex of the canonical JSON of every other field
    }

Arrays are stored as little-endian IEEE-754 float64 (``<f8``), C order,
base64-encoded, so files are portable across platforms and round trips
are bit-exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from ..learner import QFunction
from ..nets import Params

FORMAT_VERSION = 1


def _encode(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    if d.get("dtype") != "<f8":
        raise IntegrityError(f"unsupported array dtype {d.get('dtype')!r}")
    raw = base64.b64decode(d["data"])
    a = np.frombuffer(raw, dtype="<f8").reshape(d["shape"])
    return a.astype(np.float64)  # native-endian writable copy


@dataclass
class Checkpoint:
    architecture: dict
    encoder_params: Params
    head_params: Params
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_qfunction(cls, qf: QFunction, **metadata) -> "Checkpoint":
        arch = {
            "repr_mode": qf.repr_mode,
            "n_inputs": qf.n_inputs,
            "n_actions": qf.n_actions_base,
            "has_extra_action": qf.has_extra_action,
            "hidden": qf.hidden,
        }
        return cls(
            arch,
            {k: v.copy() for k, v in qf.encoder_params.items()},
            {k: v.copy() for k, v in qf.head_params.items()},
            dict(metadata),
        )

    def to_qfunction(self) -> QFunction:
        a = self.architecture
        return QFunction(
            a["repr_mode"], a["n_inputs"], a["n_actions"], a["has_extra_action"],
            {k: v.copy() for k, v in self.encoder_params.items()},
            {k: v.copy() for k, v in self.head_params.items()},
            a["hidden"],
        )

    def _payload(self) -> dict:
        return {
            "format_version": self.format_version,
            "architecture": self.architecture,
            "encoder_params": {k: _encode(v) for k, v in sorted(self.encoder_params.items())},
            "head_params": {k: _encode(v) for k, v in sorted(self.head_params.items())},
            "metadata": self.metadata,
        }

    def to_text(self) -> str:
        payload = self._payload()
        payload["digest"] = _digest(payload)
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    @property
    def digest(self) -> str:
        return _digest(self._payload())


def _digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()


def write_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ckpt.to_text())
    return path


def checkpoint_from_text(text: str) -> Checkpoint:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"checkpoint is not valid JSON: {exc}") from exc
    stored = payload.pop("digest", None)
    if stored != _digest(payload):
        raise IntegrityError("checkpoint digest mismatch")
    if payload.get("format_version") != FORMAT_VERSION:
        raise IntegrityError(f"unsupported checkpoint format {payload.get('format_version')!r}")
    return Checkpoint(
        payload["architecture"],
        {k: _decode(v) for k, v in payload["encoder_params"].items()},
        {k: _decode(v) for k, v in payload["head_params"].items()},
        payload["metadata"],
        payload["format_version"],
    )


def read_checkpoint(path) -> Checkpoint:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    return checkpoint_from_text(text)
