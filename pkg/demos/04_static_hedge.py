"""
Static hedging with liquid calls
================================

A put spread is hedged with three liquid calls by minimising its hedged
cash equivalent.  What is left over is the model-uncertainty measure.
"""

from pathlib import Path

import numpy as np

import robusthedge
from robusthedge.config import RunConfig, build_payoff
from robusthedge.portfolio import LiquidSet, gram_system, optimize_static_hedge
from robusthedge.reference import price_any

cfg = RunConfig.load(Path(robusthedge.__file__).parent / "configs" / "static_hedge.toml")
bounds = cfg.bounds()
vol, pen = cfg.vol(bounds), cfg.penalty()
payoff = cfg.payoff(bounds=bounds)
grid = cfg.grid(bounds, payoff)

book = price_any(payoff, vol, grid)
calls = [price_any(build_payoff(t, bounds), vol, grid) for t in cfg["liquid_set"]["instruments"]]
liquid = LiquidSet.from_greeks(calls, bounds.s0, [c.label for c in calls])

res = optimize_static_hedge(gram_system(book, liquid, vol, pen), liquid.labels)
print("lambda* :", dict(zip(res.labels, np.round(res.lambda_star, 4))))
print(f"unhedged cash equivalent {res.unhedged:.6g}, after hedge {res.mu:.6g} "
      f"({100 * (1 - res.mu / res.unhedged):.1f}% removed)")
print(f"Gram conditioning {res.conditioning:.3g}")

# more instruments can only help
for k in range(1, len(liquid) + 1):
    sub = liquid.subset(range(k))
    print(f"  first {k} calls: mu = {optimize_static_hedge(gram_system(book, sub, vol, pen)).mu:.6g}")
