"""Command-line front end.

Every subcommand reads one TOML config and writes its artifacts into the
output directory.  Each artifact starts with a metadata header carrying the
config hash and the seed; ``--no-timestamp`` drops the only nondeterministic
field.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cashequiv import cash_equivalent_bundle, compute_w_tilde, indifference_prices
from .config import RunConfig, build_payoff
from .errors import ConfigError, RobustHedgeError, ValidationError
from .export import Emitter
from .game import (PathsConfig, ScenarioSpec, StrategySpec, VolSpec, near_optimality,
                   run_hedge_experiment, verify_expansion)
from .grid import GridField
from .model import validate_assumptions
from .portfolio import LiquidSet, gram_system, optimize_static_hedge, uncertainty_measure
from .reference import GreeksField, price_any
from .uvm import spread_comparison_table

CACHE_ENV = "ROBUSTHEDGE_CACHE"

EXIT_CODES = """exit codes:
  0  success
  1  unexpected library error
  2  configuration or domain error (bad keys, values outside the domain)
  3  a modelling assumption is violated (volatility, penalty, utility, scenario)
  4  numerical failure (resolution, convergence, conditioning, calibration)
  5  a simulated P&L path left the admissible cash band

artifacts (all CSV files start with '# command=... config_hash=... seed=...'):
  price            greeks.csv (t,s,value,delta,cash_gamma), price.json (value, w_tilde, bid, ask)
  spread-curve     spread_curve.csv (s,reference,bid,ask,spread)
  hedge            hedge.csv (t,s,delta_bar,theta_psi,sigma_bar,sigma_psi) at y0
  simulate         simulate.json (objective estimate)
  verify-expansion expansion.json, expansion_ladder.csv (psi,J_mean,J_se,predicted)
  compare-uvm      uvm_spread.csv (s,model_spread,uvm_spread,ratio)
  static-hedge     static_hedge.json (lambda_star,mu,conditioning), gram.csv
  measure          measure.json (mu per claim)
  validate         validation.json (one entry per assumption clause)
"""


# ------------------------------------------------------------------ caching

def _cache_dir() -> Optional[Path]:
    d = os.environ.get(CACHE_ENV)
    if not d:
        return None
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _save_greeks(path: Path, g: GreeksField):
    arrays = {"times": g.grid.times, "space": g.grid.space, "value": g.value.values,
              "delta": g.delta.values, "cash_gamma": g.cash_gamma.values,
              "barrier": np.array(np.nan if g.barrier is None else g.barrier)}
    if g.variance_sens is not None:
        arrays["variance_sens"] = g.variance_sens.values
    np.savez(path, **arrays)


def _load_greeks(path: Path, grid, label: str) -> Optional[GreeksField]:
    with np.load(path) as z:
        if not (np.array_equal(z["times"], grid.times) and np.array_equal(z["space"], grid.space)):
            return None
        vs = GridField(grid, z["variance_sens"], None, label + "_va") if "variance_sens" in z else None
        b = float(z["barrier"])
        return GreeksField(GridField(grid, z["value"], None, label),
                           GridField(grid, z["delta"], None, label + "_delta"),
                           GridField(grid, z["cash_gamma"], None, label + "_cash_gamma"),
                           vs, None if np.isnan(b) else b, label)


def priced(cfg: RunConfig, payoff_table, vol, grid) -> GreeksField:
    """price_any with an on-disk cache keyed by the producing config sub-tree."""
    payoff = build_payoff(payoff_table, vol.bounds)
    cache = _cache_dir()
    if cache is None:
        return price_any(payoff, vol, grid)
    key = hashlib.sha256(json.dumps(
        {"domain": cfg["domain"], "vol": cfg["vol"], "grid": cfg["grid"], "payoff": payoff_table},
        sort_keys=True).encode()).hexdigest()[:16]
    path = cache / f"greeks_{key}.npz"
    if path.exists():
        g = _load_greeks(path, grid, payoff.label)
        if g is not None:
            return g
    g = price_any(payoff, vol, grid)
    _save_greeks(path, g)
    return g


# ------------------------------------------------------------------ setup

class Context:
    def __init__(self, cfg: RunConfig, payoff_table=None):
        self.cfg = cfg
        self.bounds = cfg.bounds()
        self.vol = cfg.vol(self.bounds)
        self.penalty = cfg.penalty()
        self.utility = cfg.utility()
        table = payoff_table if payoff_table is not None else cfg.data.get("payoff")
        self.payoff = build_payoff(table, self.bounds) if table is not None else None
        self.grid = cfg.grid(self.bounds, self.payoff)
        self._greeks = None
        self._table = table

    @property
    def greeks(self) -> GreeksField:
        if self._greeks is None:
            if self._table is None:
                raise ConfigError("payoff: missing required section for this command")
            self._greeks = priced(self.cfg, self._table, self.vol, self.grid)
        return self._greeks

    @property
    def psi(self) -> float:
        return self.cfg["psi"]["value"]

    def paths_cfg(self) -> PathsConfig:
        mc = self.cfg["mc"]
        return PathsConfig(mc["n_paths"], mc["seed"], mc["quadrature"])

    def s_samples(self) -> np.ndarray:
        sp = self.cfg["spread"]
        if sp["s_samples"]:
            return np.array([float(s) for s in sp["s_samples"]])
        s0 = self.bounds.s0
        lo = sp["s_min"] if sp["s_min"] is not None else 0.6 * s0
        hi = sp["s_max"] if sp["s_max"] is not None else 1.6 * s0
        return np.linspace(lo, hi, sp["n"])


# ------------------------------------------------------------------ commands

def cmd_price(ctx: Context, em: Emitter, args):
    g = ctx.greeks
    wt = compute_w_tilde(g, ctx.penalty, ctx.vol)
    b = ctx.bounds
    v0 = float(g.value.at(0.0, b.s0))
    w0 = max(float(wt.at(0.0, b.s0, b.y0)), 0.0)
    bid, ask = indifference_prices(v0, w0, ctx.psi)
    g.to_csv(em.path("greeks.csv"), header=em.header)
    em.json("price.json", {"payoff": g.label, "s0": b.s0, "psi": ctx.psi, "value": v0,
                           "w_tilde": w0, "bid": bid, "ask": ask})


def cmd_spread_curve(ctx: Context, em: Emitter, args):
    g = ctx.greeks
    wt = compute_w_tilde(g, ctx.penalty, ctx.vol).y_slice(ctx.bounds.y0)
    s = ctx.s_samples()
    v = np.asarray(g.value.at(0.0, s), dtype=float)
    w = np.asarray(wt.at(0.0, s), dtype=float)
    psi = ctx.psi
    em.csv("spread_curve.csv", ["s", "reference", "bid", "ask", "spread"],
           zip(s, v, v - w * psi, v + w * psi, 2 * w * psi))


def cmd_hedge(ctx: Context, em: Emitter, args):
    g = ctx.greeks
    bd = cash_equivalent_bundle(g, ctx.penalty, ctx.utility, ctx.vol, psi=ctx.psi,
                                second_order=False)
    y0 = ctx.bounds.y0
    th = bd.theta_tilde.y_slice(y0).values
    st = bd.sigma_tilde.y_slice(y0).values
    grid = ctx.grid
    sig = np.asarray(ctx.vol(grid.times[:, None], grid.space[None, :]), dtype=float)
    psi = ctx.psi
    rows = ((t, s, g.delta.values[k, j], g.delta.values[k, j] + psi * th[k, j], sig[k, j],
             sig[k, j] + psi * st[k, j])
            for k, t in enumerate(grid.times) for j, s in enumerate(grid.space))
    em.csv("hedge.csv", ["t", "s", "delta_bar", "theta_psi", "sigma_bar", "sigma_psi"], rows)


def _scenario(ctx: Context) -> ScenarioSpec:
    sc = ctx.cfg["scenario"]
    return ScenarioSpec(StrategySpec(sc["strategy"]), VolSpec(sc["volatility"], sc["offset"]),
                        ctx.psi, sc["tau_band"])


def cmd_simulate(ctx: Context, em: Emitter, args):
    bd = cash_equivalent_bundle(ctx.greeks, ctx.penalty, ctx.utility, ctx.vol, psi=ctx.psi,
                                second_order=False)
    est = run_hedge_experiment(_scenario(ctx), bd, ctx.greeks, ctx.penalty, ctx.utility,
                               ctx.vol, ctx.paths_cfg())
    wt0, _ = bd.at_origin(ctx.bounds)
    em.json("simulate.json", {"scenario": ctx.cfg["scenario"], "estimate": est.to_dict(),
                              "w_tilde_origin": wt0})


def cmd_verify_expansion(ctx: Context, em: Emitter, args):
    bd = cash_equivalent_bundle(ctx.greeks, ctx.penalty, ctx.utility, ctx.vol, psi=ctx.psi)
    ladder = [float(p) for p in ctx.cfg["psi"]["ladder"]]
    pc = ctx.paths_cfg()
    rep = verify_expansion(_scenario(ctx), bd, ctx.greeks, ctx.penalty, ctx.utility, ctx.vol,
                           ladder, pc)
    payload = {"expansion": rep.to_dict()}
    if args.near_optimality:
        no = near_optimality(bd, ctx.greeks, ctx.penalty, ctx.utility, ctx.vol, ladder, pc,
                             ctx.cfg["scenario"]["tau_band"], candidate_runs=rep.estimates)
        payload["near_optimality"] = no.to_dict()
    em.json("expansion.json", payload)
    em.csv("expansion_ladder.csv", ["psi", "J_mean", "J_se", "predicted"], rep.ladder_rows())


def cmd_compare_uvm(ctx: Context, em: Emitter, args):
    sp = ctx.cfg["spread"]
    wt = compute_w_tilde(ctx.greeks, ctx.penalty, ctx.vol)
    band = tuple(float(x) for x in sp["band"]) if sp["band"] and not args.calibrate_atm else None
    sigma_ref = sp["sigma_ref"] if sp["sigma_ref"] is not None else ctx.cfg["vol"]["sigma"]
    if band is None and not args.calibrate_atm:
        raise ConfigError("spread.band: required unless --calibrate-atm is given")
    tab = spread_comparison_table(wt, ctx.payoff, ctx.bounds, ctx.psi, ctx.s_samples(),
                                  band=band, calibrate=args.calibrate_atm, sigma_ref=sigma_ref)
    log_scale = args.log_scale or sp["log_scale"]
    tab.to_csv(em.path("uvm_spread.csv"), header=em.header, log_scale=log_scale)
    em.json("uvm_band.json", {"band": list(tab.band), "psi": ctx.psi, "payoff": tab.label,
                              "calibrated": bool(args.calibrate_atm)})


def _liquid(ctx: Context) -> LiquidSet:
    tables = ctx.cfg["liquid_set"]["instruments"]
    fields = [priced(ctx.cfg, t, ctx.vol, ctx.grid) for t in tables]
    return LiquidSet.from_greeks(fields, ctx.bounds.s0, [f.label for f in fields])


def cmd_static_hedge(ctx: Context, em: Emitter, args):
    liquid = _liquid(ctx)
    res = optimize_static_hedge(gram_system(ctx.greeks, liquid, ctx.vol, ctx.penalty),
                                liquid.labels)
    em.json("static_hedge.json", res.to_dict())
    res.gram_csv(em.path("gram.csv"), header=em.header)


def cmd_measure(ctx: Context, em: Emitter, args):
    liquid = _liquid(ctx)
    tables = ctx.cfg["measure"]["claims"] or ([ctx._table] if ctx._table is not None else [])
    if not tables:
        raise ConfigError("measure.claims: no claims (and no payoff section) to measure")
    out = []
    for t in tables:
        g = priced(ctx.cfg, t, ctx.vol, ctx.grid)
        out.append({"claim": g.label, "mu": uncertainty_measure(g, liquid, ctx.vol, ctx.penalty)})
    em.json("measure.json", {"liquid_set": liquid.labels, "claims": out})


def cmd_validate(ctx: Context, em: Emitter, args):
    if ctx.payoff is None:
        raise ConfigError("payoff: missing required section for this command")
    rep = validate_assumptions(ctx.bounds, ctx.vol, ctx.payoff, ctx.penalty, ctx.utility,
                               grid=ctx.grid)
    em.json("validation.json", rep.to_dict())
    if not rep.passed:
        names = ", ".join(c.name for c in rep.failed())
        raise ValidationError(f"assumption clauses failed: {names}")


COMMANDS = {
    "price": (cmd_price, "reference value, cash equivalent and indifference bid/ask"),
    "spread-curve": (cmd_spread_curve, "bid/ask curves against the spot at t = 0"),
    "hedge": (cmd_hedge, "candidate hedge ratio and volatility fields"),
    "simulate": (cmd_simulate, "one hedging-game scenario by Monte Carlo"),
    "verify-expansion": (cmd_verify_expansion, "psi-ladder check of the value expansion"),
    "compare-uvm": (cmd_compare_uvm, "model spread against the uncertain-volatility spread"),
    "static-hedge": (cmd_static_hedge, "optimal static hedge in the liquid options"),
    "measure": (cmd_measure, "model-uncertainty measure of the configured claims"),
    "validate": (cmd_validate, "check the standing modelling assumptions"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robusthedge", description=__doc__.splitlines()[0],
                                 epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("-o", "--out-dir", default="out", help="artifact directory (default: out)")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp so repeated runs are byte-identical")
        if name == "compare-uvm":
            p.add_argument("--log-scale", action="store_true", help="log10 spread columns")
            p.add_argument("--calibrate-atm", action="store_true",
                           help="solve for the band whose ATM spread matches the model spread")
        if name == "verify-expansion":
            p.add_argument("--near-optimality", action="store_true",
                           help="also run the candidate-versus-delta slope test")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    fn, _ = COMMANDS[args.command]
    try:
        cfg = RunConfig.load(args.config)
        ctx = Context(cfg)
        em = Emitter(args.out_dir, args.command, cfg.config_hash, cfg.seed,
                     timestamp=not args.no_timestamp)
        fn(ctx, em, args)
    except RobustHedgeError as e:
        print(f"robusthedge {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    for p in em.written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
