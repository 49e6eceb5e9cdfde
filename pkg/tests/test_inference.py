import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate, stats

from exinhawkes.inference import (
    McmcConfig,
    McmcInitializationError,
    PriorSpec,
    SamplerState,
    flatten,
    gelman_rubin,
    hpd_interval,
    initial_params,
    param_names,
    run_mcmc,
    sample_branching,
    unflatten,
)
from exinhawkes.likelihood import BranchingAssignment, complete_data_log_likelihood, log_likelihood, tracks_for
from exinhawkes.model import CovariateTrack, ExInParams, Link, MarkedEventSequence, ValidationError
from exinhawkes.scenarios import reference_params, sized_dataset
from exinhawkes.simulate import SimulationConfig, simulate


def toy(n=10, horizon=20.0, seed=0, K=2):
    rng = np.random.default_rng(seed)
    return MarkedEventSequence(np.sort(rng.uniform(0, horizon, n)), rng.integers(0, K, n), horizon, K)


def state_for(seqs, variant="exc_inh", prior=None, config=None, init=None, seed=0, cov=None):
    seqs, tracks = tracks_for(seqs, cov)
    init = init or initial_params(seqs, tracks, variant)
    return SamplerState(seqs, tracks, variant, prior or PriorSpec(), config or McmcConfig(), init, np.random.default_rng(seed))


# -- HPD -------------------------------------------------------------------


def test_hpd_uniform_grid():
    lo, hi = hpd_interval(np.arange(1, 101), 0.95)
    assert hi - lo == 94


def test_hpd_constant_samples():
    assert hpd_interval(np.full(50, 2.5)) == (2.5, 2.5)


def test_hpd_normal_matches_central_interval():
    x = np.random.default_rng(0).standard_normal(200_000)
    lo, hi = hpd_interval(x, 0.95)
    qlo, qhi = np.quantile(x, [0.025, 0.975])
    assert lo == pytest.approx(qlo, rel=0.05)
    assert hi == pytest.approx(qhi, rel=0.05)


def test_hpd_rejects_bad_input():
    with pytest.raises(ValidationError):
        hpd_interval([1.0])
    with pytest.raises(ValidationError):
        hpd_interval([1.0, 2.0], 1.0)


# -- parameter vectors --------------------------------------------------------


def test_flatten_roundtrip(small_params):
    row = flatten(small_params)
    assert row.size == len(param_names(1, 2, 1))
    assert unflatten(row, 1, 2, 1, Link.LOG) == small_params


# -- branching ------------------------------------------------------------------


def test_no_excitation_means_all_background():
    p = reference_params("inh_only")
    s = simulate(SimulationConfig(p, 2000.0, "inh_only", seed=0))
    z = sample_branching(s, p, np.random.default_rng(0))
    assert np.all(z.parent == -1)


def test_branching_is_seed_deterministic_and_admissible():
    p = reference_params("exc_inh")
    s = simulate(SimulationConfig(p, 600.0, seed=2))
    a = sample_branching(s, p, np.random.default_rng(7))
    b = sample_branching(s, p, np.random.default_rng(7))
    assert np.array_equal(a.parent, b.parent)
    a.validate(s, p)
    assert np.any(a.parent >= 0)


# -- block likelihoods --------------------------------------------------------


def test_beta_ratio_equals_complete_data_ratio(small_params):
    s = simulate(SimulationConfig(small_params, 80.0, seed=3))
    cov = CovariateTrack([0.0, 30.0, 80.0], [[1.0, 0.0], [1.0, 1.0]])
    init = replace(small_params, beta=np.concatenate([small_params.beta, [[[0.2], [-0.1]]]], axis=2))
    st = state_for(s, init=init, cov=cov)
    rep = st.reps[0]
    z = BranchingAssignment(rep.parent.copy())
    before = st.params()
    for k in range(2):
        new = st.beta[0, k] + np.array([0.3, -0.2])
        after = replace(before, beta=np.array(before.beta).copy())
        after.beta.setflags(write=True)
        after.beta[0, k] = new
        full = complete_data_log_likelihood(s, z, after, cov, st.quad) - complete_data_log_likelihood(
            s, z, before, cov, st.quad
        )
        assert st.beta_delta(0, k, new) == pytest.approx(full, abs=1e-10)


def test_linear_background_out_of_range_is_rejected():
    s = toy()
    p = ExInParams.from_matrices([0.3, 0.3], np.eye(2) * 0.2, np.zeros((2, 2)), [1, 1], [1, 1], "linear")
    st = state_for(s, init=p)
    assert st.beta_delta(0, 0, np.array([-0.1])) == -math.inf


def test_cached_loglik_matches_direct(small_params):
    s = simulate(SimulationConfig(small_params, 100.0, seed=1))
    st = state_for(s, init=small_params, config=McmcConfig(iterations=30, burn_in=0, adapt_window=10))
    for _ in range(30):
        st.sweep()
        assert st.loglik() == pytest.approx(log_likelihood(s, st.params(), quad=st.quad), rel=1e-9)


def test_initialization_failure_is_structured():
    s = toy()
    init = ExInParams.from_matrices([0.3, 0.3], np.zeros((2, 2)), np.eye(2) * 0.2, [1, 1], [1, 1])
    with pytest.raises(McmcInitializationError):
        run_mcmc(s, "exc_only", init=init, config=McmcConfig(iterations=2, burn_in=0))


# -- bookkeeping --------------------------------------------------------------


def test_bookkeeping_counts():
    cfg = McmcConfig(iterations=200, burn_in=50, thin=3, adapt_window=50, seed=1)
    draws = run_mcmc(toy(), "exc_inh", config=cfg)
    assert len(draws) == (200 - 50 + 2) // 3 == cfg.draws_per_chain
    for p in draws:
        assert np.all(p.alpha * p.gamma == 0)
    assert np.all(draws.chain == 0)


def test_burn_in_must_leave_draws():
    with pytest.raises(ValidationError):
        McmcConfig(iterations=100, burn_in=100)


def test_same_seed_same_draws():
    cfg = McmcConfig(iterations=60, burn_in=10, adapt_window=10, seed=4)
    a = run_mcmc(toy(), config=cfg)
    b = run_mcmc(toy(), config=cfg)
    assert np.array_equal(a.values, b.values)


def test_zero_inclusion_probability_never_activates():
    s = simulate(SimulationConfig(reference_params("exc_inh"), 800.0, seed=0))
    p = np.full((3, 3), 0.5)
    p[0, 0] = 0.0
    prior = PriorSpec(inclusion_prob_alpha=p)
    init = replace(initial_params(*tracks_for(s, None), "exc_inh"), include_alpha=np.zeros((3, 3), bool))
    draws = run_mcmc(s, prior=prior, init=init, config=McmcConfig(iterations=300, burn_in=0, adapt_window=100))
    assert np.all(draws.column("include_alpha.0.0") == 0)
    ia, _ = draws.inclusion_probability()
    assert ia[2, 2] > 0


def test_variant_constraint_holds():
    s = toy(30)
    draws = run_mcmc(s, "inh_only", config=McmcConfig(iterations=150, burn_in=0, adapt_window=50))
    assert np.all(draws.values[:, [draws.names.index(f"include_alpha.{l}.{k}") for l in range(2) for k in range(2)]] == 0)


# -- posterior correctness -------------------------------------------------------


def test_single_pair_posterior_against_grid():
    """K = 1, two events, only the indicator and alpha move."""
    mu, eta, T = 0.5, 1.0, 5.0
    s = MarkedEventSequence(np.array([1.0, 1.5]), np.array([0, 0]), T, 1)
    init = ExInParams.from_matrices([mu], [[0.5]], [[0.0]], [eta], [1.0])
    cfg = McmcConfig(iterations=60_000, burn_in=2000, adapt_window=2000, seed=3,
                     fixed=frozenset({"beta", "eta", "phi"}))
    draws = run_mcmc(s, "exc_only", init=init, config=cfg)
    a = draws.effective("alpha.0.0")

    def loglik(alpha):
        lam = math.log(mu) + math.log(mu + alpha * math.exp(-0.5))
        return lam - mu * T - alpha * ((1 - math.exp(-(T - 1.0))) + (1 - math.exp(-(T - 1.5))))

    def dens(alpha):
        return math.exp(loglik(alpha)) * stats.lognorm.pdf(alpha, 1.0)

    on_mass = integrate.quad(dens, 0, np.inf)[0]
    off_mass = math.exp(loglik(0.0))
    p_on = on_mass / (on_mass + off_mass)
    edges = np.linspace(0, np.quantile(a[a > 0], 0.995), 51)
    grid = np.array([integrate.quad(dens, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:])])
    grid = grid / on_mass * p_on
    emp = np.histogram(a[a > 0], edges)[0] / a.size
    tail_exact = p_on - grid.sum()
    tail_emp = np.mean(a > edges[-1])
    tv = 0.5 * (abs(np.mean(a == 0) - (1 - p_on)) + np.abs(emp - grid).sum() + abs(tail_emp - tail_exact))
    assert tv < 0.05


def test_flat_data_background():
    """No events: beta has posterior proportional to exp(-T e^beta) N(0, 10)."""
    T = 50.0
    s = MarkedEventSequence(np.zeros(0), np.zeros(0, int), T, 1)
    cfg = McmcConfig(iterations=30_000, burn_in=3000, adapt_window=3000, seed=2)
    draws = run_mcmc(s, "exc_only", config=cfg)
    b = draws.column("beta.0.0.0")

    def dens(x):
        return math.exp(-T * math.exp(x) - x * x / 20.0)

    z = integrate.quad(dens, -40, 10)[0]
    mean = integrate.quad(lambda x: x * dens(x), -40, 10)[0] / z
    sd = math.sqrt(integrate.quad(lambda x: (x - mean) ** 2 * dens(x), -40, 10)[0] / z)
    assert abs(b.mean() - mean) < 0.1 * sd + 0.05
    assert b.std() == pytest.approx(sd, rel=0.1)


@pytest.fixture(scope="module")
def recovery():
    s, _ = sized_dataset("exc_inh", 1)
    cfg = McmcConfig(iterations=3000, burn_in=1500, adapt_window=1500, seed=8, chain_count=2, workers=2)
    return run_mcmc(s, "exc_inh", config=cfg)


def test_acceptance_rates_in_band(recovery):
    for block in ("beta", "alpha", "eta", "gamma", "phi"):
        assert 0.1 <= recovery.acceptance[block] <= 0.6, block


def test_recovery_inclusion(recovery):
    ia, ig = recovery.inclusion_probability()
    assert ia[0, 0] > 0.9
    assert ia[0, 1] < 0.5 and ig[0, 1] < 0.5


def test_two_chains_converge(recovery):
    chains = [recovery.loglik[recovery.chain == c] for c in (0, 1)]
    assert gelman_rubin(chains) < 1.1


def test_gelman_rubin_flags_separated_chains():
    rng = np.random.default_rng(0)
    assert gelman_rubin([rng.normal(0, 1, 500), rng.normal(0, 1, 500)]) < 1.05
    assert gelman_rubin([rng.normal(0, 1, 500), rng.normal(5, 1, 500)]) > 2


def test_nested_fit_matches_generating_model():
    s, _ = sized_dataset("exc_only", 0)
    cfg = McmcConfig(iterations=2500, burn_in=1250, adapt_window=1250, seed=2)
    full = run_mcmc(s, "exc_inh", config=cfg)
    nested = run_mcmc(s, "exc_only", config=cfg)
    gap = abs(np.median(full.loglik) - np.median(nested.loglik))
    spread = math.hypot(full.loglik.std(), nested.loglik.std())
    assert gap < 2 * spread
