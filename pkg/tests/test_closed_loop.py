import numpy as np
import pytest

from sosenergy.closed_loop import (
    ClosedLoopResult,
    relative_error,
    run_batch,
    sample_initial_conditions,
    simulate_closed_loop,
    summarize,
)
from sosenergy.config import Settings
from sosenergy.errors import UnstableExcluded
from sosenergy.poly_energy import taylor_future
from sosenergy.systems import SystemModel


class Doubled:
    """Same feedback as `inner`, twice its value."""

    def __init__(self, inner):
        self.inner = inner

    def value(self, x):
        return 2.0 * self.inner.value(x)

    def gradient(self, x):
        return self.inner.gradient(x)

    def gradient_batch(self, X):
        return self.inner.gradient_batch(X)


class Zero:
    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros(np.asarray(x).size)

    def gradient_batch(self, X):
        return np.zeros_like(X)


def test_lqr_cost_matches_the_quadratic(linear2):
    e = taylor_future(linear2, 2)
    x0 = np.array([0.3, -0.2])
    result = simulate_closed_loop(linear2, e, x0)
    W = e.coeffs[2].c.reshape(2, 2)
    assert result.stable
    assert result.cost == pytest.approx(0.5 * x0 @ W @ x0, rel=1e-3)
    assert relative_error(e, result) < 1e-3


def test_origin_stays_put(linear2):
    result = simulate_closed_loop(linear2, taylor_future(linear2, 2), np.zeros(2))
    assert result.stable
    assert result.cost == 0.0
    assert relative_error(taylor_future(linear2, 2), result) == 0.0


def test_relative_error_of_a_doubled_energy(linear2):
    e = taylor_future(linear2, 2)
    result = simulate_closed_loop(linear2, e, [0.3, -0.2])
    assert relative_error(Doubled(e), result) == pytest.approx(1.0, rel=1e-2)


def test_unstable_runs_are_excluded():
    result = ClosedLoopResult(x0=[1.0], horizon=1.0, cost=0.0, stable=False, final_state=[5.0], final_state_norm=5.0)
    with pytest.raises(UnstableExcluded):
        relative_error(Zero(), result)


def test_divergence_stops_the_run():
    system = SystemModel(A=[[1.0]], B=[[1.0]], C=[[1.0]], eta=1.0)
    result = simulate_closed_loop(system, Zero(), [1.0], horizon=50.0)
    assert not result.stable
    assert result.diverged_at is not None and result.diverged_at < 50.0


def test_bad_inputs(linear2):
    e = taylor_future(linear2, 2)
    with pytest.raises(ValueError):
        simulate_closed_loop(linear2, e, [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        simulate_closed_loop(linear2, e, [0.1, 0.1], horizon=0.0)


# ============================================================================
# Batches
# ============================================================================

def test_initial_conditions_are_seeded_and_bounded():
    a = sample_initial_conditions(3, 0.4, 10, 5)
    assert np.array_equal(a, sample_initial_conditions(3, 0.4, 10, 5))
    assert a.shape == (10, 3)
    assert np.max(np.abs(a)) <= 0.4


def test_serial_and_concurrent_batches_agree(linear2):
    e = taylor_future(linear2, 2)
    controllers = {"quadratic": e, "doubled": Doubled(e)}
    x0s = sample_initial_conditions(2, 0.5, 4, 0)
    concurrent = run_batch(linear2, controllers, x0s, horizon=20.0, settings=Settings(max_workers=3))
    serial = run_batch(linear2, controllers, x0s, horizon=20.0, settings=Settings(serial=True))
    assert list(concurrent) == ["quadratic", "doubled"]
    for name in controllers:
        assert [r.cost for r in concurrent[name]] == [r.cost for r in serial[name]]
        assert [r.x0 for r in concurrent[name]] == x0s.tolist()


def test_summarize(linear2):
    e = taylor_future(linear2, 2)
    x0s = sample_initial_conditions(2, 0.5, 3, 1)
    results = run_batch(linear2, {"quadratic": e}, x0s, horizon=30.0, settings=Settings(serial=True))["quadratic"]
    unstable = ClosedLoopResult(x0=[1.0, 1.0], horizon=1.0, cost=0.0, stable=False, final_state=[9.0, 9.0], final_state_norm=12.7)
    summary = summarize("quadratic", e, [*results, unstable])
    assert (summary.stable, summary.unstable) == (3, 1)
    assert summary.mean_relative_error < 1e-3

    nothing = summarize("quadratic", e, [unstable])
    assert nothing.mean_relative_error is None


def test_cost_adds_over_consecutive_horizons(linear2):
    e = taylor_future(linear2, 2)
    x0 = np.array([0.3, -0.2])
    first = simulate_closed_loop(linear2, e, x0, horizon=3.0)
    second = simulate_closed_loop(linear2, e, first.final_state, horizon=3.0)
    whole = simulate_closed_loop(linear2, e, x0, horizon=6.0)
    assert whole.cost == pytest.approx(first.cost + second.cost, rel=1e-6)
    assert np.allclose(whole.final_state, second.final_state, atol=1e-8)
