"""Stable content hashes used to check that trained artifacts belong together."""

import hashlib
import json

import numpy as np


def _canonical(obj):
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.astype(np.float64).round(12).tolist(), "shape": list(obj.shape)}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    return obj


def stable_hash(obj) -> str:
    """12-hex-char digest of a JSON-canonicalized object. Order-insensitive for dicts."""
    payload = json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:12]
