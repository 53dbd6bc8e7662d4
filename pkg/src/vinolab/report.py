"""Row-oriented experiment reports shared by the lab modules and the harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Report:
    name: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": [clean(r) for r in self.rows], "summary": clean(self.summary)}


def clean(obj):
    """Recursively convert numpy scalars/arrays into plain JSON-able values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return None
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def caps_label(caps: dict) -> str:
    return ",".join(f"{k}={caps[k]:g}" for k in sorted(caps)) if caps else ""


def envelope_fit(max_ratio: float, log_scale: float, gamma_cap: float = 6.0):
    """(C, gamma) with max_ratio = C * log_scale**gamma, gamma in [0, gamma_cap]."""
    if not max_ratio > 0:
        return 0.0, 0.0
    if log_scale <= 1:
        return float(max_ratio), 0.0
    g = float(np.clip(np.log(max_ratio) / np.log(log_scale), 0.0, gamma_cap))
    return float(max_ratio / log_scale**g), g
