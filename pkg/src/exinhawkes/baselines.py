"""Univariate self-limiting Hawkes process.

    lambda(t) = (mu + sum_{t_i < t} alpha / eta * exp(-(t - t_i) / eta)) * exp(-gamma * N(phi, t)),

where ``N(phi, t)`` counts events in ``[t - phi, t)``.  The damping is a step
function that rises one notch after each event and drops back ``phi`` later,
so the compensator is integrated exactly piece by piece between the knots
``{t_i} U {t_i + phi}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .inference import hpd_interval
from .model import ValidationError

SL_NAMES = ("mu", "alpha", "eta", "gamma", "phi")


@dataclass(frozen=True)
class SelfLimitingParams:
    mu: float
    alpha: float
    eta: float
    gamma: float
    phi: float

    def __post_init__(self):
        for name in SL_NAMES:
            v = float(getattr(self, name))
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, v)
        if self.mu <= 0 or self.eta <= 0 or self.phi <= 0:
            raise ValidationError("mu, eta and phi must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in SL_NAMES])

    @classmethod
    def from_array(cls, x) -> "SelfLimitingParams":
        return cls(*[float(v) for v in x])


def _check_times(times, horizon=None) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0) or (t.size and t[0] <= 0):
        raise ValidationError("event times must be strictly increasing and positive")
    if horizon is not None and t.size and t[-1] > horizon:
        raise ValidationError("event after the horizon")
    return t


def sl_intensity(t: float, history, params: SelfLimitingParams) -> float:
    """Intensity at ``t`` given event times ``history`` (only ``t_i < t`` are used)."""
    h = np.asarray(history, dtype=float)
    past = h[h < t]
    exc = params.alpha / params.eta * np.sum(np.exp(-(t - past) / params.eta))
    n_window = np.count_nonzero(past >= t - params.phi)
    return float((params.mu + exc) * math.exp(-params.gamma * n_window))


def _event_terms(t: np.ndarray, p: SelfLimitingParams) -> np.ndarray:
    """``log lambda(t_i)`` for every event."""
    n = t.size
    if n == 0:
        return np.zeros(0)
    decay = np.exp(-np.diff(t) / p.eta)
    state = np.zeros(n)
    for i in range(1, n):
        state[i] = decay[i - 1] * (state[i - 1] + 1.0)
    in_window = np.arange(n) - np.searchsorted(t, t - p.phi, side="left")
    with np.errstate(divide="ignore"):
        return np.log(p.mu + p.alpha / p.eta * state) - p.gamma * in_window


def sl_compensator(times, horizon: float, params: SelfLimitingParams) -> float:
    """Exact integral of the intensity over ``(0, horizon]``."""
    t = _check_times(times, horizon)
    exits = t + params.phi
    knots = np.unique(np.concatenate([[0.0, horizon], t, exits[exits < horizon]]))
    event_knot = np.searchsorted(knots, t)
    state = _kernels.knot_state_single(knots, event_knot, np.ones(t.size, dtype=np.bool_), params.eta)[:-1]
    left = knots[:-1]
    L = np.diff(knots)
    # events strictly inside a piece: those at or before its left end whose window has not closed
    count = np.searchsorted(t, left, side="right") - np.searchsorted(exits, left, side="right")
    damp = np.exp(-params.gamma * count)
    return float(np.sum(damp * (params.mu * L + params.alpha * state * -np.expm1(-L / params.eta))))


def sl_log_likelihood(times, horizon: float, params: SelfLimitingParams) -> float:
    t = _check_times(times, horizon)
    return float(np.sum(_event_terms(t, params)) - sl_compensator(t, horizon, params))


def sl_simulate(params: SelfLimitingParams, horizon: float, seed: int = 0, max_events: int | None = None) -> np.ndarray:
    """Thinning with the bound ``(mu + G(t+)) * exp(-gamma * c)``.

    ``c`` is the window count just after the current time, which cannot drop
    before the next window exit; exits are therefore used as restart points.
    """
    if not horizon > 0:
        raise ValidationError("horizon must be positive")
    rng = np.random.default_rng(seed)
    p = params
    max_events = max_events or int(max(100 * p.mu * horizon, 100))
    times: list[float] = []
    s = 0.0  # sum of exp(-(t - t_i) / eta) at the current time
    t = 0.0
    first_open = 0  # index of the oldest event whose window is still open at t+
    while True:
        while first_open < len(times) and times[first_open] + p.phi <= t:
            first_open += 1
        c = len(times) - first_open
        next_exit = times[first_open] + p.phi if c else math.inf
        bound = (p.mu + p.alpha / p.eta * s) * math.exp(-p.gamma * c)
        w = rng.exponential(1.0 / bound)
        cand = t + w
        if min(cand, next_exit) > horizon:
            break
        if cand > next_exit:
            s *= math.exp(-(next_exit - t) / p.eta)
            t = next_exit
            first_open += 1
            continue
        s *= math.exp(-w / p.eta)
        t = cand
        lam = (p.mu + p.alpha / p.eta * s) * math.exp(-p.gamma * c)
        if lam > bound * (1 + 1e-12):
            raise AssertionError("thinning bound violated")
        if rng.uniform() * bound <= lam:
            times.append(t)
            s += 1.0
            if len(times) > max_events:
                raise RuntimeError(f"more than {max_events} events; alpha is likely too large")
    return np.array(times)


@dataclass(frozen=True)
class SlPrior:
    """Independent normal priors on the log of every parameter."""

    mean: float = 0.0
    sd: float = 1.0

    def logpdf(self, x: np.ndarray) -> float:
        z = (np.log(x) - self.mean) / self.sd
        return float(-0.5 * np.sum(z * z))


@dataclass(frozen=True)
class SlConfig:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 1
    seed: int = 0
    scale: float = 0.2
    adapt_window: int = 5000
    target_accept: float = 0.3
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must be smaller than iterations")
        unknown = set(self.fixed) - set(SL_NAMES)
        if unknown:
            raise ValidationError(f"unknown parameters to fix: {sorted(unknown)}")


@dataclass
class SlDraws:
    values: np.ndarray
    loglik: np.ndarray
    acceptance: dict

    names = SL_NAMES

    def column(self, name: str) -> np.ndarray:
        return self.values[:, SL_NAMES.index(name)]

    def summary(self, level: float = 0.95) -> dict:
        out = {}
        for name in SL_NAMES:
            x = self.column(name)
            lo, hi = hpd_interval(x, level)
            out[name] = (float(x.mean()), lo, hi)
        return out


def sl_fit(times, horizon: float, prior: SlPrior | None = None, config: SlConfig | None = None, init=None) -> SlDraws:
    """Componentwise random-walk Metropolis on the log parameters."""
    t = _check_times(times, horizon)
    prior = prior or SlPrior()
    config = config or SlConfig()
    rng = np.random.default_rng(config.seed)
    if init is None:
        init = SelfLimitingParams(max(t.size, 1) / horizon / 2, 0.5, 1.0, 0.1, 1.0)
    x = init.as_array().copy()
    for name, v in config.fixed.items():
        x[SL_NAMES.index(name)] = v
    free = [i for i, n in enumerate(SL_NAMES) if n not in config.fixed]

    def target(v):
        ll = sl_log_likelihood(t, horizon, SelfLimitingParams.from_array(v))
        return ll + prior.logpdf(v[free]), ll

    cur, cur_ll = target(x)
    if not np.isfinite(cur):
        raise RuntimeError("log-likelihood at the initial values is not finite; pass init explicitly")
    log_scale = np.full(len(SL_NAMES), math.log(config.scale))
    accepted = np.zeros(len(SL_NAMES))
    tried = np.zeros(len(SL_NAMES))
    rows, lls = [], []
    for it in range(config.iterations):
        adapting = it < min(config.adapt_window, config.burn_in)
        for i in free:
            y = x.copy()
            y[i] = x[i] * math.exp(math.exp(log_scale[i]) * rng.standard_normal())
            new, new_ll = target(y)
            ok = bool(new - cur > math.log(rng.uniform()))
            if ok:
                x, cur, cur_ll = y, new, new_ll
            if adapting:
                step = 1.0 / (1.0 + it / 20.0) ** 0.6
                log_scale[i] += step * (float(ok) - config.target_accept)
            else:
                accepted[i] += ok
                tried[i] += 1
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            rows.append(x.copy())
            lls.append(cur_ll)
    acceptance = {n: (accepted[i] / tried[i] if tried[i] else float("nan")) for i, n in enumerate(SL_NAMES)}
    return SlDraws(np.array(rows), np.array(lls), acceptance)
