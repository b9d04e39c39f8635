"""
Bid and ask of a one-year put under small uncertainty aversion
===============================================================

A put struck at the money, mollified with one trading day of 20% vol,
priced under a flat 20% reference model.  The first-order cash equivalent
gives the indifference spread, and the UVM band that reproduces the same
spread at the money is solved for.
"""

import numpy as np

from robusthedge.cashequiv import compute_w_tilde, indifference_prices
from robusthedge.grid import make_grid
from robusthedge.model import DomainBounds, make_smooth_put, quadratic_penalty, taper_vol
from robusthedge.reference import price_reference
from robusthedge.uvm import spread_comparison_table

bounds = DomainBounds(T=1.0, s0=100.0, K=5000.0)
vol = taper_vol(0.2, bounds)
put = make_smooth_put(100.0, 1 / 252, 0.2, bounds)
grid = make_grid(bounds, 401, 400, "sinh", center=100.0, center_spacing=0.0025)

greeks = price_reference(put, vol, grid)
w = compute_w_tilde(greeks, quadratic_penalty(), vol)

psi = 1e-3
v0 = float(greeks.value.at(0.0, 100.0))
w0 = float(w.at(0.0, 100.0, 0.0))
bid, ask = indifference_prices(v0, w0, psi)
print(f"reference value {v0:.4f}, cash equivalent {w0:.2f}")
print(f"bid {bid:.4f}  ask {ask:.4f}  spread {ask - bid:.4f}")

# the UVM band with the same ATM spread, and how the two spreads compare away from the money
s = np.array([70.0, 85.0, 100.0, 115.0, 130.0])
table = spread_comparison_table(w, put, bounds, psi, s, calibrate=True, sigma_ref=0.2)
print(f"calibrated band [{table.band[0]:.4%}, {table.band[1]:.4%}]")
for si, m, u, r in table.rows():
    print(f"  s={si:6.1f}  model {m:.5f}  uvm {u:.5f}  ratio {r:.3f}")
