"""TOML run configurations: schema checks, object builders and stable hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import tomli

from .errors import ConfigError
from .grid import GridSpec, auto_grid, make_grid
from .model import (AffineG, Book, DomainBounds, PenaltySpec, UtilitySpec, Vanilla, VarianceSwap,
                    ConstantVol, TanhVol, make_knockout_call, make_smooth_call, make_smooth_put,
                    taper_vol)

_REQ = object()

SCHEMA: Dict[str, Dict[str, tuple]] = {
    "domain": {"T": (float, _REQ), "s0": (float, _REQ), "y0": (float, 0.0), "K": (float, 10.0),
               "y_l": (float, None), "y_u": (float, None), "taper_width": (float, 0.25)},
    "vol": {"kind": (str, "constant"), "sigma": (float, 0.2), "a": (float, 0.2), "b": (float, 0.05),
            "scale": (float, 1.0), "epsilon": (float, 1e-3)},
    "penalty": {"kind": (str, "quadratic"), "scale": (float, 1.0), "beta": (float, 0.0),
                "kappa": (float, 0.0), "y_ref": (float, 0.0)},
    "utility": {"gamma": (float, 1.0)},
    "grid": {"n_space": (int, 401), "n_time": (int, 400), "spacing": (str, "log"),
             "center": (float, None), "center_spacing": (float, None), "anchors": (list, []),
             "time_nodes": (list, [])},
    "mc": {"n_paths": (int, 100_000), "seed": (int, 12345), "workers": (int, 1),
           "bridge": (bool, True), "quadrature": (str, "trapezoid")},
    "psi": {"value": (float, 1e-3), "ladder": (list, [4e-3, 2e-3, 1e-3, 5e-4])},
    "spread": {"s_min": (float, None), "s_max": (float, None), "n": (int, 41),
               "s_samples": (list, None), "band": (list, None), "sigma_ref": (float, None),
               "log_scale": (bool, False)},
    "scenario": {"strategy": (str, "candidate"), "volatility": (str, "candidate"),
                 "offset": (float, 0.0), "tau_band": (float, 1.0)},
    "liquid_set": {"instruments": (list, [])},
    "measure": {"claims": (list, [])},
}

PAYOFF_KEYS = {
    "smooth_put": {"strike": (float, _REQ), "smoothing_maturity": (float, _REQ),
                   "smoothing_vol": (float, 0.2), "maturity": (float, None)},
    "smooth_call": {"strike": (float, _REQ), "smoothing_maturity": (float, _REQ),
                    "smoothing_vol": (float, 0.2), "maturity": (float, None)},
    "knockout_call": {"strike": (float, _REQ), "barrier": (float, _REQ),
                      "smoothing_maturity": (float, _REQ), "smoothing_vol": (float, 0.2),
                      "fade_width": (float, 0.1)},
    "variance_swap": {"strike_vol": (float, _REQ)},
    "forward": {"cash": (float, 0.0), "units": (float, 1.0)},
    "book": {"items": (list, _REQ)},
}


def _coerce(path, value, typ):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise ConfigError(f"{path}: expected {typ.__name__}, got {value!r}")
    return value


def _check_table(path: str, table: Any, keys: Dict[str, tuple], extra=()) -> Dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: expected a table")
    out = {}
    for k in table:
        if k not in keys and k not in extra:
            raise ConfigError(f"{path}.{k}: unknown key")
    for k, (typ, default) in keys.items():
        if k in table:
            out[k] = _coerce(f"{path}.{k}", table[k], typ)
        elif default is _REQ:
            raise ConfigError(f"{path}.{k}: missing required key")
        else:
            out[k] = copy.deepcopy(default)
    for k in extra:
        if k in table:
            out[k] = table[k]
    return out


def _check_payoff(path: str, table: Any, allow_weight=False) -> Dict[str, Any]:
    if not isinstance(table, dict) or "kind" not in table:
        raise ConfigError(f"{path}.kind: missing required key")
    kind = table["kind"]
    if kind not in PAYOFF_KEYS:
        raise ConfigError(f"{path}.kind: unknown payoff {kind!r} (choose from {sorted(PAYOFF_KEYS)})")
    keys = dict(PAYOFF_KEYS[kind])
    keys["kind"] = (str, _REQ)
    keys["quantity"] = (float, 1.0)
    if allow_weight:
        keys["weight"] = (float, 1.0)
    out = _check_table(path, table, keys)
    if kind == "book":
        out["items"] = [_check_payoff(f"{path}.items[{i}]", it, allow_weight=True)
                        for i, it in enumerate(out["items"])]
        if not out["items"]:
            raise ConfigError(f"{path}.items: empty book")
    return out


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class RunConfig:
    data: Dict[str, Any]
    source: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: Dict[str, Any], source: Optional[str] = None) -> "RunConfig":
        data = {}
        for k in raw:
            if k not in SCHEMA and k != "payoff":
                raise ConfigError(f"{k}: unknown section")
        if "domain" not in raw:
            raise ConfigError("domain: missing required section")
        for sec, keys in SCHEMA.items():
            data[sec] = _check_table(sec, raw.get(sec, {}), keys)
        if "payoff" in raw:
            data["payoff"] = _check_payoff("payoff", raw["payoff"])
        data["liquid_set"]["instruments"] = [
            _check_payoff(f"liquid_set.instruments[{i}]", it)
            for i, it in enumerate(data["liquid_set"]["instruments"])]
        data["measure"]["claims"] = [
            _check_payoff(f"measure.claims[{i}]", it)
            for i, it in enumerate(data["measure"]["claims"])]
        return cls(data, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        try:
            raw = tomli.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
        return cls.from_dict(raw, str(p))

    def __getitem__(self, section):
        return self.data[section]

    def require(self, *sections):
        for s in sections:
            if s not in self.data:
                raise ConfigError(f"{s}: missing required section for this command")

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(_canonical(self.data).encode()).hexdigest()[:16]

    def subtree_hash(self, *sections) -> str:
        sub = {s: self.data.get(s) for s in sections}
        return hashlib.sha256(_canonical(sub).encode()).hexdigest()[:16]

    # builders

    def bounds(self) -> DomainBounds:
        d = self.data["domain"]
        return DomainBounds(d["T"], d["s0"], d["y0"], d["K"], d["y_l"], d["y_u"], d["taper_width"])

    def vol(self, bounds: Optional[DomainBounds] = None):
        v = self.data["vol"]
        bounds = self.bounds() if bounds is None else bounds
        if v["kind"] == "constant":
            raw = ConstantVol(v["sigma"])
        elif v["kind"] == "tanh":
            raw = TanhVol(v["a"], v["b"], v["scale"])
        else:
            raise ConfigError(f"vol.kind: unknown surface {v['kind']!r} (constant, tanh)")
        return taper_vol(raw, bounds, epsilon=v["epsilon"])

    def penalty(self) -> PenaltySpec:
        p = self.data["penalty"]
        return PenaltySpec(p["kind"], p["scale"], p["beta"], p["kappa"], p["y_ref"])

    def utility(self) -> UtilitySpec:
        return UtilitySpec(self.data["utility"]["gamma"])

    def payoff(self, table=None, bounds=None):
        if table is None:
            self.require("payoff")
            table = self.data["payoff"]
        bounds = self.bounds() if bounds is None else bounds
        return build_payoff(table, bounds)

    def grid(self, bounds=None, payoff=None) -> GridSpec:
        g = self.data["grid"]
        bounds = self.bounds() if bounds is None else bounds
        anchors = [float(a) for a in g["anchors"]]
        barrier = getattr(payoff, "barrier", None)
        if barrier is not None and barrier not in anchors:
            anchors.append(float(barrier))
        if g["spacing"] == "auto":
            return auto_grid(bounds, payoff, g["n_space"], g["n_time"])
        times = [float(t) for t in g["time_nodes"]] + _maturities(payoff)
        return make_grid(bounds, g["n_space"], g["n_time"], g["spacing"], center=g["center"],
                         center_spacing=g["center_spacing"], time_nodes=sorted(set(times)),
                         space_anchors=anchors)

    @property
    def seed(self) -> int:
        return self.data["mc"]["seed"]


def _maturities(payoff) -> list:
    if payoff is None:
        return []
    out = [payoff.maturity] if getattr(payoff, "maturity", None) is not None else []
    if isinstance(payoff, Book):
        for _, p in payoff.items:
            out += _maturities(p)
    return [float(t) for t in out]


def build_payoff(table: Dict[str, Any], bounds: DomainBounds):
    kind = table["kind"]
    q = table.get("quantity", 1.0)
    if kind == "smooth_put":
        p = make_smooth_put(table["strike"], table["smoothing_maturity"], table["smoothing_vol"],
                            bounds, table["maturity"])
    elif kind == "smooth_call":
        p = make_smooth_call(table["strike"], table["smoothing_maturity"], table["smoothing_vol"],
                             bounds, table["maturity"])
    elif kind == "knockout_call":
        p = make_knockout_call(table["strike"], table["barrier"], table["smoothing_maturity"],
                               table["smoothing_vol"], table["fade_width"], bounds)
    elif kind == "variance_swap":
        p = VarianceSwap(table["strike_vol"])
    elif kind == "forward":
        p = Vanilla(AffineG(table["cash"], table["units"]), label="forward")
    else:
        items = tuple((it["weight"], build_payoff(it, bounds)) for it in table["items"])
        p = Book(items, label="book")
    if q != 1.0:
        if not math.isfinite(q):
            raise ConfigError("quantity must be finite")
        if isinstance(p, Book):
            return p.scaled(q)
        return Book(((q, p),), label=f"{q:g}x{p.label}")
    return p
