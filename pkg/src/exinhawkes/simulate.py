"""Exact simulation by thinning.

Between events the excitation component only decays and the inhibition
factor never exceeds one, so ``sum_k (sup mu_k + G_k(t+))`` dominates the
total intensity until the next accepted event.  The bound is refreshed after
every candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    CovariateTrack,
    ExInParams,
    MarkedEventSequence,
    ModelVariant,
    ValidationError,
    link_fn,
)


class SimulationExplosion(RuntimeError):
    """More events than ``max_events``; the parameters are likely supercritical."""


class BoundViolation(AssertionError):
    """The thinning bound was exceeded; this is a bug, not a data problem."""


@dataclass(frozen=True)
class SimulationConfig:
    params: ExInParams
    horizon: float
    variant: ModelVariant = ModelVariant.EXC_INH
    cov: CovariateTrack | None = None
    seed: int = 0
    max_events: int | None = None
    replicate: int = 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if self.max_events is not None and self.max_events <= 0:
            raise ValidationError("max_events must be positive")
        object.__setattr__(self, "variant", ModelVariant(self.variant))

    def track(self) -> CovariateTrack:
        track = self.cov if self.cov is not None else CovariateTrack.intercept_only(self.horizon)
        if not track.covers(self.horizon):
            raise ValidationError("covariate track does not cover the horizon")
        return track


def _segment_rates(params: ExInParams, track: CovariateTrack, replicate: int, horizon: float):
    """Background per segment (clipped to the horizon) and the suffix maximum per mark."""
    n_seg = int(np.searchsorted(track.knot_times, horizon, side="left"))
    n_seg = max(1, min(n_seg, track.values.shape[0]))
    lin = track.values[:n_seg] @ params.beta[replicate].T
    if params.background_link.value == "linear" and np.any(lin <= 0):
        raise ValidationError("linear background is nonpositive")
    mu = link_fn(params.background_link, lin)
    sup = np.maximum.accumulate(mu[::-1], axis=0)[::-1]
    return mu, sup


def dominating_bound(
    t: float,
    history: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    replicate: int = 0,
) -> float:
    """Thinning bound at ``t``: background supremum over ``(t, T]`` plus ``G_k(t+)``.

    Events at exactly ``t`` are included in the excitation term.
    """
    track = cov if cov is not None else CovariateTrack.intercept_only(history.horizon)
    _, sup = _segment_rates(params, track, replicate, history.horizon)
    seg = min(int(track.segment_index(t)), sup.shape[0] - 1)
    n = int(np.searchsorted(history.times, t, side="right"))
    times, marks = history.times[:n], history.marks[:n]
    eta = params.eta[marks]
    exc = np.sum(params.alpha[marks].sum(axis=1) / eta * np.exp(-(t - times) / eta))
    return float(sup[seg].sum() + exc)


def simulate(config: SimulationConfig) -> MarkedEventSequence:
    params = config.params.restrict(config.variant)
    track = config.track()
    T = float(config.horizon)
    K = params.mark_count
    mu_seg, sup_seg = _segment_rates(params, track, config.replicate, T)
    knots = track.knot_times

    if config.max_events is None:
        seg_len = np.diff(np.minimum(knots[: mu_seg.shape[0] + 1], T))
        max_events = int(max(100.0 * float(seg_len @ mu_seg.sum(axis=1)), 100.0))
    else:
        max_events = int(config.max_events)

    alpha, gamma = params.alpha, params.gamma
    eta, phi = params.eta, params.phi
    exc_coef = alpha / eta[:, None]
    exc_out = exc_coef.sum(axis=1)
    inhibiting = bool(np.any(gamma > 0))
    rng = np.random.default_rng(config.seed)

    s_eta = np.zeros(K)
    s_phi = np.zeros(K)
    times: list[float] = []
    marks: list[int] = []
    t = 0.0
    seg = 0
    n_seg = mu_seg.shape[0]
    while True:
        while seg + 1 < n_seg and knots[seg + 1] <= t:
            seg += 1
        bound = float(sup_seg[seg].sum() + s_eta @ exc_out)
        w = rng.exponential(1.0 / bound)
        t_new = t + w
        if t_new > T:
            break
        s_eta *= np.exp(-w / eta)
        if inhibiting:
            s_phi *= np.exp(-w / phi)
        cand_seg = seg
        while cand_seg + 1 < n_seg and knots[cand_seg + 1] <= t_new:
            cand_seg += 1
        lam = mu_seg[cand_seg] + s_eta @ exc_coef
        if inhibiting:
            lam = lam * np.exp(-(s_phi @ gamma))
        total = float(lam.sum())
        if total > bound * (1.0 + 1e-12):
            raise BoundViolation(f"intensity {total} exceeds bound {bound} at t={t_new}")
        u = rng.uniform()
        t = t_new
        if u * bound <= total:
            k = int(rng.choice(K, p=lam / total)) if K > 1 else 0
            times.append(t)
            marks.append(k)
            s_eta[k] += 1.0
            s_phi[k] += 1.0
            if len(times) > max_events:
                raise SimulationExplosion(
                    f"more than {max_events} events before t={t:.6g}; check the spectral radius of alpha"
                )
    return MarkedEventSequence(np.array(times), np.array(marks, dtype=np.int64), T, K, config.replicate)


def simulate_replicates(
    params: ExInParams,
    horizons,
    variant: ModelVariant = ModelVariant.EXC_INH,
    covs=None,
    seed: int = 0,
) -> list[MarkedEventSequence]:
    """Independent replicates with child seeds spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(len(horizons))
    out = []
    for d, (horizon, child) in enumerate(zip(horizons, children)):
        cov = None if covs is None else (covs if isinstance(covs, CovariateTrack) else covs[d])
        config = SimulationConfig(
            params, horizon, variant, cov, seed=int(child.generate_state(1, np.uint64)[0]), replicate=d
        )
        out.append(simulate(config))
    return out
