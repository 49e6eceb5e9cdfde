"""Compensators, observed-data and complete-data log-likelihoods.

Integrals of the intensity are computed on a knot grid that contains every
event time and every covariate knot, so the integrand is smooth inside each
interval.  Each interval is split into ``subdivisions`` equal panels and
integrated with Simpson's rule (or the trapezoid rule).
When no inhibition is active the integrals have a closed form, which is used
instead (``QuadratureSpec.exact_when_uninhibited``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _kernels
from .model import (
    CovariateTrack,
    background_rate,
    ExInParams,
    MarkedEventSequence,
    ValidationError,
    link_fn,
    resolve_tracks,
)


class BranchingError(ValidationError):
    """A parent label that the model cannot produce."""


class ZeroIntensityWarning(RuntimeWarning):
    """An observed event sits where the intensity is zero."""

    def __init__(self, replicate: int, index: int, time: float, mark: int):
        self.replicate = replicate
        self.index = index
        self.time = time
        self.mark = mark
        super().__init__(
            f"zero intensity at event {index} (replicate {replicate}, t={time!r}, mark {mark})"
        )


SCHEMES = ("simpson", "trapezoid")


@dataclass(frozen=True)
class QuadratureSpec:
    """Composite rule on ``subdivisions`` equal panels between consecutive knots.

    ``simpson`` uses the same nodes as ``trapezoid`` with one Richardson step
    folded into the weights (fourth instead of second order); it needs an even
    number of panels.
    """

    scheme: str = "simpson"
    subdivisions: int = 20
    exact_when_uninhibited: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown quadrature scheme {self.scheme!r}; choose from {SCHEMES}")
        if int(self.subdivisions) < 1:
            raise ValidationError("subdivisions must be at least 1")
        if self.scheme == "simpson" and int(self.subdivisions) % 2:
            raise ValidationError("simpson needs an even number of subdivisions")


def panel_weights(scheme: str, subdivisions: int) -> np.ndarray:
    """Node weights for an interval of unit length."""
    S = int(subdivisions)
    if scheme == "simpson":
        w = np.ones(S + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w / (3.0 * S)
    w = np.full(S + 1, 1.0 / S)
    w[0] = w[-1] = 0.5 / S
    return w


DEFAULT_QUADRATURE = QuadratureSpec()


@dataclass(frozen=True)
class BranchingAssignment:
    """Latent parents: ``parent[i] == -1`` marks a background event, otherwise
    it is the (0-based) index of the triggering event."""

    parent: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.int64))

    def validate(self, seq: MarkedEventSequence, params: ExInParams) -> None:
        parent = self.parent
        if parent.shape != (len(seq),):
            raise BranchingError("one parent label per event is required")
        idx = np.arange(len(seq))
        if np.any(parent < -1) or np.any(parent >= idx):
            bad = int(np.flatnonzero((parent < -1) | (parent >= idx))[0])
            raise BranchingError(f"event {bad} has parent {parent[bad]} that is not an earlier event")
        child = np.flatnonzero(parent >= 0)
        alpha = params.alpha[seq.marks[parent[child]], seq.marks[child]]
        if np.any(alpha <= 0):
            bad = int(child[np.flatnonzero(alpha <= 0)[0]])
            raise BranchingError(
                f"event {bad} is attributed to event {parent[bad]} whose mark does not excite it"
            )


class IntensityGrid:
    """Quadrature grid for one replicate.

    Knots are ``{0, T}``, the event times, covariate knots inside ``(0, T)``
    and any ``extra_knots``.  Interval ``j`` spans ``knots[j]..knots[j+1]`` and
    carries ``subdivisions + 1`` equally spaced nodes, both ends included.
    """

    def __init__(
        self,
        seq: MarkedEventSequence,
        track: CovariateTrack,
        subdivisions: int = 20,
        extra_knots: Iterable[float] = (),
        scheme: str = "simpson",
    ):
        T = seq.horizon
        cov_knots = track.knot_times[(track.knot_times > 0) & (track.knot_times < T)]
        extra = np.array([x for x in extra_knots if 0 < x < T], dtype=float)
        self.knots = np.unique(np.concatenate([[0.0], seq.times, cov_knots, extra, [T]]))
        self.lengths = np.diff(self.knots)
        self.subdivisions = int(subdivisions)
        frac = np.linspace(0.0, 1.0, self.subdivisions + 1)
        frac[-1] = 1.0
        self.offsets = self.lengths[:, None] * frac
        self.weights = self.lengths[:, None] * panel_weights(scheme, self.subdivisions)
        self.event_knot = np.searchsorted(self.knots, seq.times).astype(np.int64)
        self.event_marks = seq.marks
        self.segment = track.segment_index(self.knots[:-1])
        self.event_segment = track.segment_index(seq.times) if len(seq) else np.zeros(0, np.int64)
        self.covariates = track.values
        self.seq = seq

    @property
    def interval_count(self) -> int:
        return self.lengths.size

    def states(self, scales: np.ndarray) -> np.ndarray:
        """Right-limit decay states at the left knot of every interval, shape ``(n_int, K)``."""
        scales = np.ascontiguousarray(scales, dtype=float)
        return _kernels.knot_states(self.knots, self.event_knot, self.event_marks, scales)[:-1]

    def node_values(self, states: np.ndarray, scales: np.ndarray) -> np.ndarray:
        """Decay states at every quadrature node, shape ``(n_int, S + 1, K)``."""
        return states[:, None, :] * np.exp(-self.offsets[:, :, None] / scales)

    def event_values(self, states: np.ndarray, scales: np.ndarray) -> np.ndarray:
        """Left limits of the decay states at each event, shape ``(n, K)``."""
        j = self.event_knot - 1
        return states[j] * np.exp(-self.lengths[j][:, None] / scales)

    def background(self, params: ExInParams, replicate: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-segment ``(n_seg, K)`` background rates and per-event rates of the event's own mark."""
        lin = self.covariates @ params.beta[replicate].T
        if params.background_link.value == "linear" and np.any(lin <= 0):
            raise ValidationError(f"linear background is nonpositive in replicate {replicate}")
        mu_seg = link_fn(params.background_link, lin)
        mu_events = mu_seg[self.event_segment, self.event_marks]
        return mu_seg, mu_events


@dataclass
class Evaluation:
    """Intensity pieces for one replicate under one parameter value."""

    grid: IntensityGrid
    bg_integrals: np.ndarray  # (n_int, K): integral of mu_k * H_k over each interval
    exc_integrals: np.ndarray  # (n_int, K): integral of G_k * H_k over each interval
    mu_events: np.ndarray  # background of the event's own mark at each event
    exc_events: np.ndarray  # G_{m_i}(t_i)
    log_h_events: np.ndarray  # log H_{m_i}(t_i)

    @property
    def log_intensity_events(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mu_events + self.exc_events) + self.log_h_events

    @property
    def compensators(self) -> np.ndarray:
        """Total compensator per mark over ``(0, T]``."""
        return self.bg_integrals.sum(axis=0) + self.exc_integrals.sum(axis=0)

    def cumulative(self) -> np.ndarray:
        """Superposed compensator at every knot."""
        per_interval = (self.bg_integrals + self.exc_integrals).sum(axis=1)
        return np.concatenate([[0.0], np.cumsum(per_interval)])


def evaluate(
    seq: MarkedEventSequence,
    params: ExInParams,
    track: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    extra_knots: Iterable[float] = (),
) -> Evaluation:
    if track is None:
        track = CovariateTrack.intercept_only(seq.horizon)
    if params.mark_count != seq.mark_count:
        raise ValidationError("parameter and data mark counts differ")
    grid = IntensityGrid(seq, track, quad.subdivisions, extra_knots, quad.scheme)
    d = seq.replicate_id
    alpha, gamma, eta, phi = params.alpha, params.gamma, params.eta, params.phi
    mu_seg, mu_events = grid.background(params, d)
    mu_int = mu_seg[grid.segment]

    st_eta = grid.states(eta)
    exc_coef = alpha / eta[:, None]
    marks = seq.marks
    if len(seq):
        exc_events = np.einsum("il,il->i", grid.event_values(st_eta, eta), exc_coef[:, marks].T)
    else:
        exc_events = np.zeros(0)

    if quad.exact_when_uninhibited and not params.has_inhibition:
        L = grid.lengths[:, None]
        bg = mu_int * L
        exc = (st_eta * -np.expm1(-L / eta)) @ alpha
        log_h = np.zeros(len(seq))
    else:
        st_phi = grid.states(phi)
        H = np.exp(-(grid.node_values(st_phi, phi) @ gamma))
        G = grid.node_values(st_eta, eta) @ exc_coef
        w = grid.weights[:, :, None]
        bg = mu_int * np.sum(w * H, axis=1)
        exc = np.sum(w * G * H, axis=1)
        if len(seq):
            log_h = -np.einsum("il,il->i", grid.event_values(st_phi, phi), gamma[:, marks].T)
        else:
            log_h = np.zeros(0)
    return Evaluation(grid, bg, exc, mu_events, exc_events, log_h)


def _as_list(data) -> list[MarkedEventSequence]:
    if isinstance(data, MarkedEventSequence):
        return [data]
    return list(data)


def compensator(
    a: float,
    b: float,
    mark: int,
    seq: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Integral of ``lambda_mark`` over ``(a, b]``."""
    if not 0 <= a <= b <= seq.horizon:
        raise ValidationError("compensator bounds must satisfy 0 <= a <= b <= T")
    ev = evaluate(seq, params, cov, quad, extra_knots=(a, b))
    knots = ev.grid.knots
    sel = (knots[:-1] >= a) & (knots[1:] <= b)
    return float(np.sum(ev.bg_integrals[sel, mark]) + np.sum(ev.exc_integrals[sel, mark]))


def subcompensators(
    seq: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> np.ndarray:
    """Expected background and excitation-driven counts per mark, shape ``(K, 2)``."""
    ev = evaluate(seq, params, cov, quad)
    return np.column_stack([ev.bg_integrals.sum(axis=0), ev.exc_integrals.sum(axis=0)])


def _warn_zero(seq: MarkedEventSequence, log_lam: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(log_lam))
    if bad.size:
        i = int(bad[0])
        warnings.warn(
            ZeroIntensityWarning(seq.replicate_id, i, float(seq.times[i]), int(seq.marks[i])),
            stacklevel=3,
        )


def log_likelihood(
    data,
    params: ExInParams,
    cov=None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Observed-data log-likelihood summed over replicates.

    Returns ``-inf`` (with a ``ZeroIntensityWarning`` naming the event) when an
    observed event has zero intensity.
    """
    seqs = _as_list(data)
    tracks = resolve_tracks(cov, seqs)
    total = 0.0
    for seq, track in zip(seqs, tracks):
        ev = evaluate(seq, params, track, quad)
        log_lam = ev.log_intensity_events
        _warn_zero(seq, log_lam)
        total += float(np.sum(log_lam)) - float(np.sum(ev.compensators))
    return total


def pointwise_log_contributions(
    seq: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> np.ndarray:
    """Per-event log-likelihood terms ``log lambda_{m_i}(t_i) - Lambda(t_{i-1}, t_i)``.

    The compensator after the last event is folded into the last term so the
    terms sum to the replicate's log-likelihood.  A replicate without events
    yields a single term ``-Lambda(0, T)``.
    """
    ev = evaluate(seq, params, cov, quad)
    cum = ev.cumulative()
    if len(seq) == 0:
        return np.array([-cum[-1]])
    at_events = cum[ev.grid.event_knot]
    increments = np.diff(np.concatenate([[0.0], at_events]))
    out = ev.log_intensity_events - increments
    out[-1] -= cum[-1] - at_events[-1]
    return out


def complete_data_log_likelihood(
    seq: MarkedEventSequence,
    z: BranchingAssignment,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Log-likelihood of events and parent labels jointly.

    A background event contributes ``mu H``; an event triggered by ``j``
    contributes ``alpha[m_j, m_i] g_{m_j}(t_i - t_j) H``.  Summing the
    exponentiated terms over each event's admissible parents gives the
    observed-data likelihood.
    """
    z.validate(seq, params)
    ev = evaluate(seq, params, cov, quad)
    parent = z.parent
    terms = np.log(ev.mu_events)
    child = np.flatnonzero(parent >= 0)
    if child.size:
        src = seq.marks[parent[child]]
        lag = seq.times[child] - seq.times[parent[child]]
        terms[child] = (
            np.log(params.alpha[src, seq.marks[child]])
            - np.log(params.eta[src])
            - lag / params.eta[src]
        )
    return float(np.sum(terms + ev.log_h_events) - np.sum(ev.compensators))


def branching_conditional(
    i: int,
    seq: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
) -> np.ndarray:
    """Parent probabilities for event ``i``.

    Entry 0 is the background; entry ``j + 1`` is event ``j``.  The inhibition
    factor is common to every option and cancels.
    """
    t, k = seq.times[i], seq.marks[i]
    mu = background_rate(t, k, seq.replicate_id, params, cov)
    src = seq.marks[:i]
    eta = params.eta[src]
    w = np.concatenate([[mu], params.alpha[src, k] / eta * np.exp(-(t - seq.times[:i]) / eta)])
    return w / w.sum()


def rtct_increments_for(
    seq: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    mark: int | None = None,
) -> np.ndarray:
    """Compensator increments between consecutive events.

    With ``mark=None`` the superposed process is used; otherwise only events
    of ``mark`` and that mark's compensator.
    """
    ev = evaluate(seq, params, cov, quad)
    if mark is None:
        cum = ev.cumulative()
        knots = ev.grid.event_knot
    else:
        per_interval = ev.bg_integrals[:, mark] + ev.exc_integrals[:, mark]
        cum = np.concatenate([[0.0], np.cumsum(per_interval)])
        knots = ev.grid.event_knot[seq.marks == mark]
    return np.diff(np.concatenate([[0.0], cum[knots]]))


def tracks_for(data, cov) -> tuple[list[MarkedEventSequence], list[CovariateTrack]]:
    seqs = _as_list(data)
    return seqs, resolve_tracks(cov, seqs)


__all__ = [
    "BranchingAssignment",
    "BranchingError",
    "DEFAULT_QUADRATURE",
    "Evaluation",
    "IntensityGrid",
    "QuadratureSpec",
    "ZeroIntensityWarning",
    "branching_conditional",
    "compensator",
    "complete_data_log_likelihood",
    "evaluate",
    "log_likelihood",
    "pointwise_log_contributions",
    "rtct_increments_for",
    "subcompensators",
    "tracks_for",
]
