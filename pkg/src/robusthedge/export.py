"""Artifact emission: metadata headers, 12-significant-digit JSON and CSV."""

from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

DIGITS = 12


def fmt(x: float) -> str:
    return f"{float(x):.{DIGITS}g}"


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(fmt(x))
    return obj


class Emitter:
    """Writes artifacts into ``out_dir`` with a shared metadata header."""

    def __init__(self, out_dir, command: str, config_hash: str, seed: int,
                 timestamp: bool = True):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.meta: Dict[str, Any] = {"command": command, "config_hash": config_hash, "seed": seed}
        if timestamp:
            self.meta["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        self.written: List[Path] = []

    @property
    def header(self) -> List[str]:
        line = " ".join(f"{k}={self.meta[k]}" for k in ("command", "config_hash", "seed"))
        out = [line]
        if "timestamp" in self.meta:
            out.append(f"timestamp={self.meta['timestamp']}")
        return out

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.written.append(p)
        return p

    def json(self, name: str, payload: Dict[str, Any]) -> Path:
        p = self.path(name)
        doc = {"meta": self.meta, **_round(payload)}
        p.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
        return p

    def csv(self, name: str, columns: Sequence[str], rows: Iterable[Sequence[float]]) -> Path:
        p = self.path(name)
        with open(p, "w") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            fh.write(",".join(columns) + "\n")
            for r in rows:
                fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in r) + "\n")
        return p
