"""JSON helpers: reports encode NaN/infinity as the strings "nan"/"inf"."""

from __future__ import annotations

import math

import numpy as np

__all__ = ["json_ready"]


def json_ready(value):
    """Recursively convert a report value into plain JSON-encodable types."""
    if isinstance(value, dict):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return [json_ready(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return value
