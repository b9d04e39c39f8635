import numpy as np
import pytest

from robusthedge.cashequiv import cash_equivalent_bundle
from robusthedge.errors import AdmissibilityError, ConfigError, ScenarioValidationError
from robusthedge.game import (PathsConfig, ScenarioSpec, StrategySpec, VolSpec, compare_strategies,
                              near_optimality, run_hedge_experiment, verify_expansion)
from robusthedge.grid import GridField
from robusthedge.model import AffineG, Vanilla
from robusthedge.reference import price_reference, price_variance_swap_reference

CFG = PathsConfig(n_paths=2000, seed=21)


def run(unit, strategy="delta", vol="reference", psi=1e-2, greeks=None, bundle=None, **kw):
    sc = ScenarioSpec(StrategySpec(strategy, **kw.pop("strategy_kw", {})),
                      VolSpec(vol, **kw.pop("vol_kw", {})), psi, **kw)
    return run_hedge_experiment(sc, unit.bundle if bundle is None else bundle,
                                unit.greeks if greeks is None else greeks,
                                unit.penalty, unit.utility, unit.vol, CFG)


class TestReferenceVol:
    def test_delta_hedge_keeps_y_at_start(self, unit):
        e = run(unit)
        u0 = float(unit.utility.U(unit.bounds.y0))
        assert np.all(e.terminal_y == unit.bounds.y0)
        assert e.mean == u0 and e.std_error == 0.0 and e.penalty_mean == 0.0

    def test_candidate_pays_no_penalty(self, unit):
        e = run(unit, "candidate")
        assert e.penalty_mean == 0.0
        assert e.terminal_y.std() > 0

    def test_candidate_against_itself_is_exactly_zero(self, unit):
        sc = ScenarioSpec(StrategySpec("candidate"), VolSpec("candidate"), 1e-2)
        rep = compare_strategies([sc, sc], unit.bundle, unit.greeks, unit.penalty, unit.utility,
                                 unit.vol, CFG, names=["a", "b"])
        assert rep.rows[1].diff_vs_first == 0.0 and rep.rows[1].diff_se == 0.0
        assert [r.name for r in rep.rows] == ["a", "b"]


class TestAdverseVol:
    def test_shifted_vol_hurts_short_convex_position(self, unit):
        e = run(unit, vol="shifted", vol_kw={"offset": 0.02})
        u0 = float(unit.utility.U(unit.bounds.y0))
        drop = u0 - e.terminal_mean
        assert drop > 0
        assert np.all(e.terminal_y <= unit.bounds.y0 + 1e-12)
        assert e.penalty_mean > 0

    def test_candidate_vol_is_above_reference_for_convex_book(self, unit):
        e = run(unit, vol="candidate")
        assert e.terminal_mean < float(unit.utility.U(unit.bounds.y0))

    def test_left_and_trapezoid_agree_to_first_order(self, unit):
        sc = ScenarioSpec(StrategySpec("delta"), VolSpec("shifted", 0.02), 1e-2)
        args = (None, unit.greeks, unit.penalty, unit.utility, unit.vol)
        a = run_hedge_experiment(sc, *args, CFG)
        b = run_hedge_experiment(sc, *args, PathsConfig(CFG.n_paths, CFG.seed, "left"))
        assert a.mean == pytest.approx(b.mean, rel=1e-3)


class TestValidation:
    def test_runaway_strategy(self, unit):
        with pytest.raises(AdmissibilityError) as info:
            run(unit, "custom", strategy_kw={"fn": lambda t, s, y: 1e7 + 0 * s})
        assert info.value.path >= 0 and info.value.step >= 1

    def test_bad_scenario_vol(self, unit):
        with pytest.raises(ScenarioValidationError, match="outside"):
            run(unit, vol="custom", vol_kw={"fn": lambda t, s, y: 20.0 + 0 * s})

    @pytest.mark.parametrize("make", [
        lambda: StrategySpec("hold"),
        lambda: StrategySpec("perturbed"),
        lambda: StrategySpec("custom"),
        lambda: VolSpec("wild"),
        lambda: VolSpec("custom"),
        lambda: ScenarioSpec(psi=0.0),
        lambda: ScenarioSpec(tau_band=-1.0),
        lambda: PathsConfig(quadrature="simpson"),
    ])
    def test_config_errors(self, make):
        with pytest.raises(ConfigError):
            make()

    def test_candidate_needs_bundle(self, unit):
        sc = ScenarioSpec(StrategySpec("candidate"))
        with pytest.raises(ConfigError):
            run_hedge_experiment(sc, None, unit.greeks, unit.penalty, unit.utility, unit.vol, CFG)

    def test_variance_swap_rejected(self, unit):
        vs = price_variance_swap_reference(0.2, unit.vol, unit.grid)
        with pytest.raises(ConfigError):
            run_hedge_experiment(ScenarioSpec(), None, vs, unit.penalty, unit.utility,
                                 unit.vol, CFG)

    def test_ladder_checks(self, unit):
        base = ScenarioSpec(StrategySpec("candidate"), VolSpec("candidate"))
        args = (unit.bundle, unit.greeks, unit.penalty, unit.utility, unit.vol)
        with pytest.raises(ConfigError):
            verify_expansion(base, *args, [0.1, 0.05, 0.02], CFG)
        with pytest.raises(ConfigError):
            verify_expansion(base, *args, [0.1, 0.05, 0.05, 0.01], CFG)

    def test_compare_needs_shared_leg(self, unit):
        a = ScenarioSpec(StrategySpec("delta"), VolSpec("reference"))
        b = ScenarioSpec(StrategySpec("delta"), VolSpec("shifted", 0.01))
        with pytest.raises(ConfigError):
            compare_strategies([a, b], None, unit.greeks, unit.penalty, unit.utility, unit.vol, CFG)


class TestStrategies:
    def test_reproducible(self, unit):
        a = run(unit, "candidate", "candidate")
        b = run(unit, "candidate", "candidate")
        assert np.array_equal(a.per_path, b.per_path)

    def test_zero_perturbation_is_candidate(self, unit):
        zero = GridField(unit.grid, np.zeros_like(unit.bundle.theta_tilde.values),
                         unit.bundle.y_nodes)
        a = run(unit, "candidate", "candidate")
        b = run(unit, "perturbed", "candidate", strategy_kw={"perturbation": zero})
        assert np.array_equal(a.per_path, b.per_path)

    def test_nonzero_perturbation_changes_paths(self, unit):
        bump = GridField(unit.grid, np.full_like(unit.bundle.theta_tilde.values, 0.5),
                         unit.bundle.y_nodes)
        a = run(unit, "candidate", "candidate")
        b = run(unit, "perturbed", "candidate", strategy_kw={"perturbation": bump})
        assert not np.array_equal(a.per_path, b.per_path)

    def test_tiny_stopping_band_reverts_to_delta(self, unit):
        e = run(unit, "candidate", "candidate", tau_band=1e-12)
        assert e.tau_fraction > 0.99
        d = run(unit, "delta", "candidate", tau_band=1e-12)
        assert e.mean == pytest.approx(d.mean, rel=1e-6)

    def test_estimate_dict(self, unit):
        d = run(unit).to_dict()
        assert {"mean", "std_error", "psi", "penalty_term", "terminal_utility", "n_paths",
                "seed", "tau_fraction"} == set(d)


def test_zero_gamma_book_has_flat_expansion(unit):
    fwd = price_reference(Vanilla(AffineG(0.0, 1.0)), unit.vol, unit.grid)
    bd = cash_equivalent_bundle(fwd, unit.penalty, unit.utility, unit.vol)
    base = ScenarioSpec(StrategySpec("candidate"), VolSpec("candidate"))
    rep = verify_expansion(base, bd, fwd, unit.penalty, unit.utility, unit.vol,
                           [0.08, 0.04, 0.02, 0.01], PathsConfig(500, 3))
    u0 = float(unit.utility.U(unit.bounds.y0))
    assert rep.fitted[0] == pytest.approx(u0, abs=1e-12)
    assert np.all(np.abs(rep.fitted[1:]) < 1e-8)
    assert np.all(np.abs(rep.predicted[1:]) < 1e-9)
    assert len(rep.ladder_rows()) == 4


def test_near_optimality_rejects_mismatched_runs(unit):
    e = run(unit, "candidate", "candidate", psi=0.02)
    with pytest.raises(ConfigError):
        near_optimality(unit.bundle, unit.greeks, unit.penalty, unit.utility, unit.vol,
                        [0.01], CFG, candidate_runs=[e])
