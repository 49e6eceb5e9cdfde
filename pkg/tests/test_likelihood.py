import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy import optimize

from exinhawkes.likelihood import (
    BranchingAssignment,
    BranchingError,
    QuadratureSpec,
    ZeroIntensityWarning,
    branching_conditional,
    compensator,
    complete_data_log_likelihood,
    log_likelihood,
    pointwise_log_contributions,
    subcompensators,
)
from exinhawkes.model import ExInParams, MarkedEventSequence, conditional_intensity
from exinhawkes.scenarios import reference_params, sized_dataset
from exinhawkes.simulate import SimulationConfig, simulate

TRAPEZOID = QuadratureSpec(scheme="trapezoid")


def poisson(mu=0.65, K=1):
    z = np.zeros((K, K))
    return ExInParams.from_matrices([mu] * K, z, z, np.ones(K), np.ones(K), "linear")


def seq(times, marks, horizon, K):
    return MarkedEventSequence(np.array(times, float), np.array(marks), horizon, K)


def test_empty_sequence():
    assert log_likelihood(seq([], [], 10.0, 1), poisson()) == pytest.approx(-6.5, abs=1e-12)


def test_single_event():
    ll = log_likelihood(seq([1.0], [0], 10.0, 1), poisson())
    assert ll == pytest.approx(math.log(0.65) - 6.5, abs=1e-12)
    assert ll == pytest.approx(-6.9308, abs=5e-5)


def test_poisson_compensator_is_exact():
    s = simulate(SimulationConfig(poisson(), 1000.0, seed=0))
    for quad in (QuadratureSpec(), TRAPEZOID, QuadratureSpec(exact_when_uninhibited=False)):
        assert compensator(0.0, 1000.0, 0, s, poisson(), quad=quad) == pytest.approx(650.0, rel=1e-13)


def test_exc_only_closed_form():
    mu, a, eta, T = 0.4, 0.5, 3.0, 200.0
    p = ExInParams.from_matrices([mu], [[a]], [[0.0]], [eta], [1.0])
    s = simulate(SimulationConfig(p, T, seed=1))
    closed = mu * T + a * np.sum(1 - np.exp(-(T - s.times) / eta))
    quad = QuadratureSpec(exact_when_uninhibited=False)
    assert compensator(0.0, T, 0, s, p, quad=quad) == pytest.approx(closed, rel=1e-6)
    assert compensator(0.0, T, 0, s, p) == pytest.approx(closed, rel=1e-12)


def _riemann(s, p, mark, panels=10**6):
    # midpoint sum of the direct intensity evaluation
    t = (np.arange(panels) + 0.5) * s.horizon / panels
    lam = np.empty(panels)
    idx = np.searchsorted(s.times, t)
    for j in np.unique(idx):
        sel = idx == j
        h = s.history(t[sel][0])
        past_t, past_m = h.times, h.marks
        tt = t[sel][:, None]
        G = np.sum(p.alpha[past_m, mark] / p.eta[past_m] * np.exp(-(tt - past_t) / p.eta[past_m]), axis=1)
        H = np.exp(-np.sum(p.gamma[past_m, mark] * np.exp(-(tt - past_t) / p.phi[past_m]), axis=1))
        lam[sel] = (math.exp(p.beta[0, mark, 0]) + G) * H
    return lam.sum() * s.horizon / panels


def test_full_model_five_events_against_riemann(small_params):
    s = seq([0.7, 1.1, 2.5, 2.6, 4.0], [0, 1, 0, 0, 1], 6.0, 2)
    for k in range(2):
        assert compensator(0.0, 6.0, k, s, small_params) == pytest.approx(_riemann(s, small_params, k), rel=1e-4)


def test_partial_interval_compensator(small_params):
    s = seq([0.7, 1.1, 2.5, 2.6, 4.0], [0, 1, 0, 0, 1], 6.0, 2)
    whole = compensator(0.0, 6.0, 1, s, small_params)
    parts = compensator(0.0, 1.8, 1, s, small_params) + compensator(1.8, 6.0, 1, s, small_params)
    assert parts == pytest.approx(whole, rel=1e-6)


def test_subcompensators_poisson():
    s = seq([1.0, 3.0], [0, 0], 10.0, 1)
    assert subcompensators(s, poisson()) == pytest.approx(np.array([[6.5, 0.0]]))


def test_subcompensators_inh_only_has_no_excitation():
    p = reference_params("inh_only")
    s = simulate(SimulationConfig(p, 2000.0, "inh_only", seed=0))
    sub = subcompensators(s, p)
    assert np.all(sub[:, 1] == 0.0)


def test_subcompensators_add_up():
    p = reference_params("exc_inh")
    s = simulate(SimulationConfig(p, 800.0, seed=3))
    sub = subcompensators(s, p)
    total = [compensator(0.0, 800.0, k, s, p) for k in range(3)]
    assert sub.sum(axis=1) == pytest.approx(total, rel=1e-12)


def test_doubling_subdivisions():
    for variant in ("exc_inh", "inh_only"):
        p = reference_params(variant)
        s = simulate(SimulationConfig(p, 1000.0, variant, seed=5))
        a = log_likelihood(s, p)
        b = log_likelihood(s, p, quad=QuadratureSpec(subdivisions=40))
        assert abs(a - b) < 1e-5 * abs(b)


def test_trapezoid_converges_at_second_order():
    p = reference_params("exc_inh")
    s = simulate(SimulationConfig(p, 1000.0, seed=5))
    ref = log_likelihood(s, p, quad=QuadratureSpec(subdivisions=200))
    err = [abs(log_likelihood(s, p, quad=QuadratureSpec("trapezoid", n)) - ref) for n in (20, 40, 80)]
    ratios = np.array(err[:-1]) / np.array(err[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_replicate_additivity():
    p = reference_params("exc_inh")
    p2 = replace(p, beta=np.concatenate([p.beta, p.beta + 0.1]))
    a = simulate(SimulationConfig(p2, 500.0, seed=1, replicate=0))
    b = simulate(SimulationConfig(p2, 700.0, seed=2, replicate=1))
    assert log_likelihood([a, b], p2) == pytest.approx(log_likelihood(a, p2) + log_likelihood(b, p2), rel=1e-14)


def test_pointwise_terms_sum_to_loglik(small_params):
    s = simulate(SimulationConfig(small_params, 100.0, seed=0))
    terms = pointwise_log_contributions(s, small_params)
    assert terms.shape == (len(s),)
    assert terms.sum() == pytest.approx(log_likelihood(s, small_params), rel=1e-12)
    e = seq([], [], 100.0, 2)
    assert pointwise_log_contributions(e, small_params).sum() == pytest.approx(log_likelihood(e, small_params))


def test_zero_intensity_is_reported():
    # a log-link background that underflows to zero
    p = replace(poisson(), beta=np.array([[[-800.0]]]), background_link="log")
    s = seq([5.0, 6.0], [0, 0], 10.0, 1)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        assert log_likelihood(s, p) == -math.inf
    found = [w.message for w in caught if issubclass(w.category, ZeroIntensityWarning)]
    assert found and (found[0].index, found[0].time, found[0].mark) == (0, 5.0, 0)


def test_all_background_branching(small_params):
    s = simulate(SimulationConfig(small_params, 60.0, seed=4))
    z = BranchingAssignment(np.full(len(s), -1))
    direct = 0.0
    for i in range(len(s)):
        h = s.history(s.times[i])
        k = s.marks[i]
        H = conditional_intensity(s.times[i], k, 0, h, replace(small_params, include_alpha=np.zeros((2, 2), bool)))
        direct += math.log(H)
    direct -= sum(compensator(0.0, 60.0, k, s, small_params) for k in range(2))
    assert complete_data_log_likelihood(s, z, small_params) == pytest.approx(direct, rel=1e-10)


def test_inadmissible_parent(small_params):
    s = seq([1.0, 2.0], [0, 1], 5.0, 2)
    with pytest.raises(BranchingError):
        complete_data_log_likelihood(s, BranchingAssignment([-1, 0]), replace(
            small_params, include_alpha=np.array([[True, False], [True, True]])
        ))
    with pytest.raises(BranchingError):
        complete_data_log_likelihood(s, BranchingAssignment([-1, 1]), small_params)


def test_branching_no_parent_and_symmetry():
    p = ExInParams.from_matrices([0.5], [[0.5 * math.e]], [[0.0]], [1.0], [1.0])
    s = seq([1.0, 2.0], [0, 0], 5.0, 1)
    assert branching_conditional(0, s, p) == pytest.approx([1.0])
    # alpha g(1) = 0.5 e * e^-1 = mu
    assert branching_conditional(1, s, p) == pytest.approx([0.5, 0.5], rel=1e-12)


def test_branching_ignores_gamma(small_params):
    s = simulate(SimulationConfig(small_params, 60.0, seed=1))
    other = replace(small_params, gamma_star=small_params.gamma_star * 3.7, phi=small_params.phi * 0.3)
    for i in range(len(s)):
        assert np.array_equal(branching_conditional(i, s, small_params), branching_conditional(i, s, other))


def test_truth_beats_best_inhibition_only_fit():
    s, _ = sized_dataset("exc_inh", 0)
    truth = reference_params("exc_inh")
    ll_truth = log_likelihood(s, truth)

    def unpack(x):
        return ExInParams(
            x[:3].reshape(1, 3, 1), np.zeros((3, 3)), np.exp(x[3:12]).reshape(3, 3),
            np.zeros((3, 3), bool), np.ones((3, 3), bool), np.ones(3), np.exp(x[12:]),
        )

    x0 = np.concatenate([np.log(s.counts() / s.horizon), np.full(9, -2.0), np.zeros(3)])
    res = optimize.minimize(lambda x: -log_likelihood(s, unpack(x)), x0, method="L-BFGS-B",
                            options={"maxiter": 200})
    assert ll_truth > -res.fun
