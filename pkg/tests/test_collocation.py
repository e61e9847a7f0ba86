import numpy as np
import pytest
from pydantic import ValidationError

from sosenergy.collocation import (
    CollocationProblem,
    Window,
    adapt_factor,
    algorithm1,
    cold_start,
    doubling_schedule,
    expand_schedule,
    iter_window_fits,
    jittered_cholesky,
    optimize_factor,
    parse_schedule,
    riccati_block,
    sample_window,
    select_structure,
    sos_basis,
)
from sosenergy.errors import ConfigError, NotPositiveDefinite, WindowFailure
from sosenergy.hjb_residual import objective
from sosenergy.lin_solvers import solve_are_past
from sosenergy.sos_energy import SosEnergy
from sosenergy.systems import SystemModel

from .conftest import V2


# ============================================================================
# Windows and schedules
# ============================================================================

def test_window_validation():
    with pytest.raises(ValidationError):
        Window(half_width=0.0)
    with pytest.raises(ValidationError):
        Window(half_width=1.0, samples=0)


def test_parse_schedule():
    windows = parse_schedule([{"half_width": 1}, {"half_width": 2, "samples": 50}])
    assert [w.half_width for w in windows] == [1.0, 2.0]

    with pytest.raises(ConfigError) as err:
        parse_schedule([{"half_width": -1}])
    assert err.value.lines[0].startswith("schedule[0].half_width")

    with pytest.raises(ConfigError):
        parse_schedule([{"half_width": 2}, {"half_width": 1}])
    with pytest.raises(ConfigError):
        parse_schedule([])


def test_doubling_schedule():
    assert [w.half_width for w in doubling_schedule(1.0, 8.0)] == [1.0, 2.0, 4.0, 8.0]


def test_single_window_gets_an_inner_window():
    windows = expand_schedule([Window(half_width=0.5, samples=40)])
    assert [w.half_width for w in windows] == [0.05, 0.5]


def test_sample_window_is_deterministic_and_bounded():
    w = Window(half_width=0.3, samples=3)
    assert np.array_equal(sample_window(w, 2, 11), sample_window(w, 2, 11))
    X = sample_window(Window(half_width=0.3, samples=500), 4, 5)
    assert X.shape == (500, 4)
    assert np.max(np.abs(X)) <= 0.3


def test_sample_window_mean():
    s = 10_000
    X = sample_window(Window(half_width=1.0, samples=s), 3, 0)
    assert np.all(np.abs(X.mean(axis=0)) < 5 / np.sqrt(s))


@pytest.mark.parametrize(("a", "n", "expected"), [(0.5, 2, (1, 2)), (1.0, 2, (1, 2)), (20.0, 1, (1,))])
def test_select_structure(a, n, expected):
    basis = sos_basis(n, 4)
    samples = sample_window(Window(half_width=a, samples=100), n, 3)
    assert select_structure(basis, samples) == expected


# ============================================================================
# One collocation problem
# ============================================================================

def test_jacobian_matches_finite_differences(quadratic2, rng):
    basis = sos_basis(2, 4)
    problem = CollocationProblem(quadratic2, "future", basis, rng.uniform(-1, 1, size=(15, 2)), (1, 2))
    theta = 0.3 * rng.normal(size=problem.size)
    jac = problem.jacobian(theta)
    h = 1e-6
    for j in range(problem.size):
        step = np.zeros(problem.size)
        step[j] = h
        fd = (problem.residuals(theta + step) - problem.residuals(theta - step)) / (2 * h)
        assert np.allclose(jac[:, j], fd, rtol=1e-5, atol=1e-7)


def test_exact_start_on_a_linear_system():
    system = SystemModel(A=[[-1.0]], B=[[1.0]], C=[[1.0]], eta=0.5)
    basis = sos_basis(1, 4)
    L = np.zeros((2, 2))
    L[0, 0] = np.sqrt(0.5 * solve_are_past(system.A, system.B, system.C, system.eta).X[0, 0])
    problem = CollocationProblem(system, "past", basis, np.linspace(-1, 1, 21), (1, 2))
    _, report = optimize_factor(problem, L)
    assert report.final_objective < 1e-16


def test_scalar_fit_on_the_unit_window(scalar, settings):
    basis = sos_basis(1, 4)
    samples = np.linspace(-1.0, 1.0, 101)
    problem = CollocationProblem(scalar, "past", basis, samples, (1, 2))
    start = cold_start(basis, (1, 2), riccati_block(scalar, "past", settings), settings)
    L, report = optimize_factor(problem, start, settings)
    assert report.final_objective < report.initial_objective
    assert np.max(np.abs(problem.residuals_of(L))) < 0.1 * np.max(np.abs(problem.residuals_of(start)))

    # the objective recomputed from the energy matches the optimizer's value
    J, _ = objective(problem.energy(L), scalar, "past", samples)
    assert J == pytest.approx(report.final_objective, rel=1e-12)

    noisy = start + 0.1 * np.tril(np.random.default_rng(9).normal(size=start.shape))
    _, perturbed = optimize_factor(problem, noisy, settings)
    assert perturbed.final_objective <= 10 * report.final_objective + 1e-14


def test_riccati_block_squares_to_half_the_solution(scalar):
    L11 = riccati_block(scalar, "past")
    assert L11[0, 0] ** 2 == pytest.approx(0.5 * V2, rel=1e-12)


def test_riccati_block_jitters_a_semidefinite_solution(hidden2, settings, caplog):
    with caplog.at_level("WARNING", logger="sosenergy.collocation"):
        L11 = riccati_block(hidden2, "future", settings)
    assert "jitter" in caplog.text
    jitter = settings.collocation.jitter
    assert L11[1, 1] == pytest.approx(np.sqrt(jitter), rel=1e-2)
    assert L11[0, 0] ** 2 == pytest.approx(0.5 * (np.sqrt(2.0) - 1.0) + jitter, rel=1e-9)


def test_jitter_does_not_rescue_an_indefinite_block():
    with pytest.raises(NotPositiveDefinite):
        jittered_cholesky(np.diag([1.0, -1.0]), 1e-12, semidefinite=True)
    assert np.allclose(jittered_cholesky(np.eye(2), 1e-12), np.eye(2))


def test_adapt_factor_drops_and_appends_columns(settings):
    basis = sos_basis(2, 4)
    L = np.tril(np.ones((5, 5)))
    assert adapt_factor(L, basis, (1,), settings).shape == (5, 2)
    grown = adapt_factor(L[:, :2], basis, (1, 2), settings)
    assert grown.shape == (5, 5)
    assert grown[3, 3] == settings.collocation.diag_seed


# ============================================================================
# Windowed fits
# ============================================================================

def test_tiny_window_recovers_the_quadratic(scalar):
    energy, reports = algorithm1(scalar, "past", 4, [Window(half_width=0.01)], seed=0)
    assert len(reports) == 2
    for x in np.linspace(-0.01, 0.01, 11):
        if x == 0:
            continue
        assert energy.value([x]) == pytest.approx(0.5 * V2 * x * x, rel=1e-2)


def test_large_window_drops_the_top_block(scalar):
    energy, _ = algorithm1(scalar, "past", 4, [Window(half_width=20.0, samples=100)], seed=1)
    assert energy.structure == (1,)
    assert energy.L.shape[1] < energy.basis.size


def test_window_failure_carries_the_last_factor(scalar):
    schedule = [Window(half_width=1.0, samples=50), Window(half_width=1e200, samples=50)]
    with pytest.raises(WindowFailure) as err:
        algorithm1(scalar, "past", 4, schedule, seed=2)
    assert err.value.window_index == 1
    assert isinstance(err.value.last_factor, SosEnergy)


def test_fits_are_reproducible(scalar):
    schedule = doubling_schedule(1.0, 2.0)
    first, _ = algorithm1(scalar, "past", 4, schedule, seed=7)
    second, _ = algorithm1(scalar, "past", 4, schedule, seed=7)
    assert np.array_equal(first.L, second.L)


def test_future_kind(quadratic2):
    fits = list(iter_window_fits(quadratic2, "future", 4, [Window(half_width=0.5, samples=100)], seed=3))
    assert fits[-1].report.final_objective <= fits[-1].report.initial_objective
    assert fits[-1].energy.value([0.2, -0.1]) > 0


@pytest.mark.slow
def test_warm_starts_beat_cold_starts(scalar, settings):
    L11 = riccati_block(scalar, "past", settings)
    fits = list(iter_window_fits(scalar, "past", 4, doubling_schedule(1.0, 8.0), seed=0, settings=settings))
    assert len(fits) == 4
    for fit in fits[1:]:
        basis = fit.energy.basis
        problem = CollocationProblem(scalar, "past", basis, fit.samples, fit.structure)
        cold = problem.objective(cold_start(basis, fit.structure, L11, settings))
        assert fit.report.initial_objective <= cold
