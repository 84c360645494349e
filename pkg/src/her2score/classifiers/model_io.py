"""Versioned on-disk model container (JSON with explicit array encoding).

Files carry a format_version; loading any other version is refused so that
stale models can never silently produce scores.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from ..ioutil import atomic_write_text, canonical_json
from .base import TrainedModel

FORMAT_VERSION = 1


def _encode(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_encode(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _decode(value):
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.array(value["__ndarray__"], dtype=value["dtype"])
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "class_set": [int(v) for v in model.class_set],
        "feature_dim": int(model.feature_dim),
        "params": _encode(model.params),
        "state": _encode(model.state),
        "metadata": _encode(model.metadata),
    }


def model_from_dict(payload: dict) -> TrainedModel:
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format_version {version!r} (expected {FORMAT_VERSION})"
        )
    missing = {"kind", "class_set", "feature_dim", "params", "state"} - payload.keys()
    if missing:
        raise ModelFormatError(f"model file missing fields: {sorted(missing)}")
    return TrainedModel(
        kind=payload["kind"],
        class_set=[int(v) for v in payload["class_set"]],
        feature_dim=int(payload["feature_dim"]),
        params=_decode(payload["params"]),
        state=_decode(payload["state"]),
        metadata=_decode(payload.get("metadata", {})),
    )


def model_id(model: TrainedModel) -> str:
    """Stable short identifier derived from the serialized content."""
    text = canonical_json(model_to_dict(model))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def save_model(model: TrainedModel, path) -> None:
    atomic_write_text(Path(path), canonical_json(model_to_dict(model)) + "\n")


def load_model(path) -> TrainedModel:
    path = Path(path)
    if not path.is_file():
        raise ModelFormatError(f"model file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"corrupt model file {path}: {exc}") from exc
    return model_from_dict(payload)
