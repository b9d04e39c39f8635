import sys
import time
from pathlib import Path
from types import SimpleNamespace

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robusthedge.cashequiv import cash_equivalent_bundle
from robusthedge.grid import make_grid
from robusthedge.model import (DomainBounds, UtilitySpec, make_smooth_put, quadratic_penalty,
                               taper_vol)
from robusthedge.reference import price_reference

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "robusthedge" / "configs"


@pytest.fixture(scope="session")
def unit():
    """Normalised setup: s0 = 1, K = 10, flat 20% vol, put with 0.1y smoothing."""
    b = DomainBounds(T=1.0, s0=1.0, K=10.0)
    v = taper_vol(0.2, b)
    pen = quadratic_penalty()
    ut = UtilitySpec(1.0)
    g = make_grid(b, 401, 200, "log")
    put = make_smooth_put(1.0, 0.1, 0.2, b)
    greeks = price_reference(put, v, g)
    bundle = cash_equivalent_bundle(greeks, pen, ut, v)
    return SimpleNamespace(bounds=b, vol=v, penalty=pen, utility=ut, grid=g, put=put,
                           greeks=greeks, bundle=bundle)


@pytest.fixture(scope="session")
def configs():
    return CONFIGS


SUITE_BUDGET = 300.0
_start = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    dt = time.perf_counter() - _start
    ok = dt < SUITE_BUDGET
    terminalreporter.write_line(
        f"criterion 8 (runtime): {'PASS' if ok else 'FAIL'}  session wall time {dt:.0f}s "
        f"(budget {SUITE_BUDGET:.0f}s)")
