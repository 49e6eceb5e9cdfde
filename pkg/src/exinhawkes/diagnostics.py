"""Goodness of fit: time-rescaled residuals, Q-Q distance, WAIC and the count decomposition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .inference import PosteriorDraws, hpd_interval
from .likelihood import (
    QuadratureSpec,
    evaluate,
    pointwise_log_contributions,
    rtct_increments_for,
    tracks_for,
)
from .model import ExInParams, ValidationError


@dataclass
class RtctResult:
    """Sorted compensator increments, one row per draw."""

    ordered: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    theoretical: np.ndarray

    @property
    def draw_count(self) -> int:
        return self.ordered.shape[0]

    def table(self) -> np.ndarray:
        """Columns: theoretical quantile, posterior mean, lower and upper band."""
        return np.column_stack([self.theoretical, self.mean, self.lo, self.hi])


def exp_quantiles(n: int) -> np.ndarray:
    """Exp(1) quantiles at plotting positions ``(i - 0.5) / n``."""
    return -np.log1p(-(np.arange(1, n + 1) - 0.5) / n)


def _param_list(draws) -> list[ExInParams]:
    if isinstance(draws, ExInParams):
        return [draws]
    if isinstance(draws, PosteriorDraws):
        return list(draws)
    return list(draws)


def _quad_for(draws, quad):
    if quad is not None:
        return quad
    if isinstance(draws, PosteriorDraws):
        return draws.quad
    return QuadratureSpec()


def increments(data, params: ExInParams, cov=None, quad: QuadratureSpec | None = None, mark=None) -> np.ndarray:
    """Residual increments of all replicates under one parameter set, in time order per replicate."""
    seqs, tracks = tracks_for(data, cov)
    quad = quad or QuadratureSpec()
    return np.concatenate([rtct_increments_for(s, params, t, quad, mark) for s, t in zip(seqs, tracks)])


def rtct_increments(
    data,
    draws,
    cov=None,
    quad: QuadratureSpec | None = None,
    mark: int | None = None,
    level: float = 0.95,
) -> RtctResult:
    """Per-draw sorted residuals of the superposed process (or of one mark).

    ``draws`` may be a ``PosteriorDraws``, a list of parameter sets or a single
    parameter set.
    """
    plist = _param_list(draws)
    if not plist:
        raise ValidationError("no draws supplied")
    quad = _quad_for(draws, quad)
    rows = [np.sort(increments(data, p, cov, quad, mark)) for p in plist]
    ordered = np.array(rows)
    tail = (1.0 - level) / 2.0
    return RtctResult(
        ordered=ordered,
        mean=ordered.mean(axis=0),
        lo=np.quantile(ordered, tail, axis=0),
        hi=np.quantile(ordered, 1.0 - tail, axis=0),
        theoretical=exp_quantiles(ordered.shape[1]),
    )


def qq_msd(result: RtctResult) -> float:
    """Mean squared distance between posterior-mean order statistics and Exp(1) quantiles."""
    if result.mean.size == 0:
        return 0.0
    return float(np.mean((result.mean - result.theoretical) ** 2))


def ks_exp1(values) -> float:
    """Kolmogorov-Smirnov p-value of ``values`` against Exp(1)."""
    return float(stats.kstest(np.asarray(values, dtype=float), "expon").pvalue)


def pointwise_matrix(data, draws, cov=None, quad: QuadratureSpec | None = None) -> np.ndarray:
    """Per-draw, per-event log contributions, shape ``(B, n_total)``."""
    if isinstance(draws, PosteriorDraws) and draws.pointwise is not None and quad is None:
        return draws.pointwise
    quad = _quad_for(draws, quad)
    seqs, tracks = tracks_for(data, cov)
    rows = []
    for p in _param_list(draws):
        rows.append(np.concatenate([pointwise_log_contributions(s, p, t, quad) for s, t in zip(seqs, tracks)]))
    return np.array(rows)


def waic_components(pointwise) -> tuple[float, float]:
    """Log pointwise predictive density and effective number of parameters."""
    ll = np.asarray(pointwise, dtype=float)
    if ll.ndim != 2 or ll.shape[0] < 2:
        raise ValidationError("WAIC needs a (draws, points) array with at least two draws")
    lppd = float(np.sum(logsumexp(ll, axis=0) - np.log(ll.shape[0])))
    p_waic = float(np.sum(np.var(ll, axis=0, ddof=1)))
    return lppd, p_waic


def waic(pointwise) -> float:
    lppd, p_waic = waic_components(pointwise)
    return -2.0 * (lppd - p_waic)


@dataclass
class DecompositionReport:
    """Expected background and excitation-driven counts per draw and mark.

    ``per_draw[b, k]`` holds ``(E N_bg, E N_exc)`` summed over replicates;
    ``total[b, k]`` is the full compensator of mark ``k`` evaluated directly.
    """

    per_draw: np.ndarray
    total: np.ndarray
    observed: np.ndarray
    level: float = 0.95

    @property
    def mean(self) -> np.ndarray:
        return self.per_draw.mean(axis=0)

    def hpd(self) -> np.ndarray:
        """Shape ``(K, 2, 2)``: mark, component, (lo, hi)."""
        B, K, _ = self.per_draw.shape
        out = np.empty((K, 2, 2))
        for k in range(K):
            for c in range(2):
                x = self.per_draw[:, k, c]
                out[k, c] = hpd_interval(x, self.level) if B >= 2 else (x[0], x[0])
        return out

    def mcse(self) -> np.ndarray:
        """Naive Monte Carlo standard error of the posterior means (batch means with 20 batches)."""
        B = self.per_draw.shape[0]
        nb = min(20, B)
        batches = np.array_split(self.per_draw, nb, axis=0)
        means = np.array([b.mean(axis=0) for b in batches])
        return means.std(axis=0, ddof=1) / np.sqrt(nb) if nb > 1 else np.zeros_like(self.mean)

    def additivity_error(self) -> float:
        """Largest relative gap between the summed components and the total compensator."""
        s = self.per_draw.sum(axis=-1)
        return float(np.max(np.abs(s - self.total) / np.maximum(np.abs(self.total), 1e-300)))


def decomposition_report(data, draws, cov=None, quad: QuadratureSpec | None = None, level: float = 0.95):
    plist = _param_list(draws)
    quad = _quad_for(draws, quad)
    seqs, tracks = tracks_for(data, cov)
    K = plist[0].mark_count
    per_draw = np.zeros((len(plist), K, 2))
    total = np.zeros((len(plist), K))
    for b, p in enumerate(plist):
        for s, t in zip(seqs, tracks):
            ev = evaluate(s, p, t, quad)
            per_draw[b, :, 0] += ev.bg_integrals.sum(axis=0)
            per_draw[b, :, 1] += ev.exc_integrals.sum(axis=0)
            total[b] += ev.compensators
    observed = np.sum([s.counts() for s in seqs], axis=0)
    return DecompositionReport(per_draw, total, observed, level)
