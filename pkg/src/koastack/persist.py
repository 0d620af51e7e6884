"""Versioned JSON model files.

Arrays are written as flat lists with shape and dtype; floats use Python's
shortest round-tripping repr, so ``save -> load -> save`` is byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "koastack-model"
VERSION = 1

_REGISTRY: dict[str, type] = {}


def register(cls):
    _REGISTRY[cls.__name__] = cls
    return cls


def encode(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": str(obj.dtype), "shape": list(obj.shape), "data": obj.ravel().tolist()}
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["data"], dtype=obj["__ndarray__"]).reshape(obj["shape"])
        return {k: decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [decode(v) for v in obj]
    return obj


def _params(estimator) -> dict:
    if hasattr(estimator, "_persisted_params"):
        return estimator._persisted_params()
    return estimator.get_params(deep=False)


def to_doc(estimator) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "kind": type(estimator).__name__,
        "params": encode(_params(estimator)),
        "state": encode(estimator._get_state()),
    }


def dumps(estimator) -> str:
    return json.dumps(to_doc(estimator), sort_keys=True, indent=1, allow_nan=True) + "\n"


def loads(text: str):
    return from_doc(json.loads(text))


def from_doc(doc: dict):
    if doc.get("format") != FORMAT:
        raise ValueError("not a koastack model file")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')}")
    kind = doc["kind"]
    if kind not in _REGISTRY:
        raise ValueError(f"unknown model kind {kind!r}")
    params = decode(doc["params"])
    est = _REGISTRY[kind](**{k: (tuple(v) if isinstance(v, list) else v) for k, v in params.items()})
    est._set_state(decode(doc["state"]))
    return est


def save_model(estimator, path) -> None:
    Path(path).write_text(dumps(estimator))


def load_model(path):
    return loads(Path(path).read_text())
