"""Domain types and conditional intensity of the excitation/inhibition Hawkes model.

For mark ``k`` the intensity is

    lambda_k(t) = (mu_k(t) + G_k(t)) * H_k(t)

    G_k(t) = sum_{t_i < t} alpha[m_i, k] / eta[m_i] * exp(-(t - t_i) / eta[m_i])
    H_k(t) = exp(-sum_{t_i < t} gamma[m_i, k] * exp(-(t - t_i) / phi[m_i]))

with ``mu_k(t) = x(t) @ beta[d, k]`` (linear link) or ``exp(x(t) @ beta[d, k])``
(log link) for replicate ``d``.  Marks are stored 0-based everywhere in the
library; the CSV layer maps user labels onto ``0..K-1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when data or parameters violate a model invariant."""


class CoverageError(ValidationError):
    """Raised when a time lies outside the span of a covariate track."""


class Link(str, enum.Enum):
    LINEAR = "linear"
    LOG = "log"


class ModelVariant(str, enum.Enum):
    """Which interaction types a model is allowed to use."""

    EXC_INH = "exc_inh"
    EXC_ONLY = "exc_only"
    INH_ONLY = "inh_only"

    @property
    def allows_excitation(self) -> bool:
        return self is not ModelVariant.INH_ONLY

    @property
    def allows_inhibition(self) -> bool:
        return self is not ModelVariant.EXC_ONLY


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarkedEventSequence:
    """Strictly increasing event times on ``(0, horizon]`` with 0-based marks."""

    times: np.ndarray
    marks: np.ndarray
    horizon: float
    mark_count: int
    replicate_id: int = 0

    def __post_init__(self):
        times = _frozen(self.times, float).reshape(-1)
        marks = _frozen(self.marks, np.int64).reshape(-1)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "mark_count", int(self.mark_count))
        if times.shape != marks.shape:
            raise ValidationError("times and marks must have the same length")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        if self.mark_count < 1:
            raise ValidationError("mark_count must be at least 1")
        if times.size:
            if times[0] <= 0 or times[-1] > self.horizon:
                raise ValidationError("event times must lie in (0, horizon]")
            if np.any(np.diff(times) <= 0):
                raise ValidationError("event times must be strictly increasing")
            if marks.min() < 0 or marks.max() >= self.mark_count:
                raise ValidationError(f"marks must lie in 0..{self.mark_count - 1}")

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, MarkedEventSequence):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and self.mark_count == other.mark_count
            and self.replicate_id == other.replicate_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.marks, other.marks)
        )

    def history(self, t: float) -> "MarkedEventSequence":
        """Events strictly before ``t``."""
        n = int(np.searchsorted(self.times, t, side="left"))
        return replace(self, times=self.times[:n], marks=self.marks[:n])

    def counts(self) -> np.ndarray:
        return np.bincount(self.marks, minlength=self.mark_count)


@dataclass(frozen=True, eq=False)
class CovariateTrack:
    """Piecewise-constant covariates: row ``j`` of ``values`` holds on ``[knot_times[j], knot_times[j+1])``.

    The first column is the intercept.
    """

    knot_times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = _frozen(self.knot_times, float).reshape(-1)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        values.setflags(write=False)
        object.__setattr__(self, "knot_times", knots)
        object.__setattr__(self, "values", values)
        if knots.size < 2 or knots[0] != 0.0:
            raise ValidationError("knot_times must start at 0 and have at least two entries")
        if np.any(np.diff(knots) <= 0):
            raise ValidationError("knot_times must be strictly increasing")
        if values.shape[0] != knots.size - 1:
            raise ValidationError("values must have one row per segment")

    @classmethod
    def intercept_only(cls, horizon: float) -> "CovariateTrack":
        return cls([0.0, float(horizon)], np.ones((1, 1)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def end(self) -> float:
        return float(self.knot_times[-1])

    def segment_index(self, t) -> np.ndarray:
        """Segment containing each ``t``; the final knot belongs to the last segment."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.end):
            raise CoverageError(f"time outside covariate coverage [0, {self.end}]")
        idx = np.searchsorted(self.knot_times, t, side="right") - 1
        return np.minimum(idx, self.values.shape[0] - 1)

    def covers(self, horizon: float) -> bool:
        return self.end >= horizon

    def __eq__(self, other):
        if not isinstance(other, CovariateTrack):
            return NotImplemented
        return np.array_equal(self.knot_times, other.knot_times) and np.array_equal(
            self.values, other.values
        )


@dataclass(frozen=True, eq=False)
class ExInParams:
    """Model parameters.

    ``beta`` has shape ``(D, K, P)``: one coefficient vector per replicate and
    mark.  Interaction matrices are indexed ``[source, target]``.
    """

    beta: np.ndarray
    alpha_star: np.ndarray
    gamma_star: np.ndarray
    include_alpha: np.ndarray
    include_gamma: np.ndarray
    eta: np.ndarray
    phi: np.ndarray
    background_link: Link = Link.LOG

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim == 1:
            beta = beta[None, :, None]
        elif beta.ndim == 2:
            beta = beta[:, :, None]
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        for name in ("alpha_star", "gamma_star"):
            object.__setattr__(self, name, _frozen(np.atleast_2d(getattr(self, name)), float))
        for name in ("include_alpha", "include_gamma"):
            object.__setattr__(self, name, _frozen(np.atleast_2d(getattr(self, name)), bool))
        for name in ("eta", "phi"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name)), float))
        object.__setattr__(self, "background_link", Link(self.background_link))

        K = self.mark_count
        if beta.shape[1] != K:
            raise ValidationError(f"beta must have {K} marks on axis 1, got shape {beta.shape}")
        for name in ("alpha_star", "gamma_star", "include_alpha", "include_gamma"):
            if getattr(self, name).shape != (K, K):
                raise ValidationError(f"{name} must be {K}x{K}")
        for name in ("eta", "phi"):
            if getattr(self, name).shape != (K,):
                raise ValidationError(f"{name} must have length {K}")
        if np.any(self.alpha_star < 0) or np.any(self.gamma_star < 0):
            raise ValidationError("alpha_star and gamma_star must be nonnegative")
        if not (np.all(self.eta > 0) and np.all(self.phi > 0)):
            raise ValidationError("eta and phi must be strictly positive")
        if np.any(self.include_alpha & self.include_gamma):
            raise ValidationError("a mark pair cannot be both exciting and inhibiting")
        if not np.all(np.isfinite(beta)):
            raise ValidationError("beta must be finite")

    @property
    def mark_count(self) -> int:
        return self.beta.shape[1]

    @property
    def replicate_count(self) -> int:
        return self.beta.shape[0]

    @property
    def covariate_dim(self) -> int:
        return self.beta.shape[2]

    @property
    def alpha(self) -> np.ndarray:
        return self.alpha_star * self.include_alpha

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma_star * self.include_gamma

    @property
    def has_inhibition(self) -> bool:
        return bool(np.any(self.gamma > 0))

    def restrict(self, variant: ModelVariant) -> "ExInParams":
        """Switch off the interactions ``variant`` does not allow."""
        variant = ModelVariant(variant)
        inc_a, inc_g = self.include_alpha, self.include_gamma
        if not variant.allows_excitation:
            inc_a = np.zeros_like(inc_a)
        if not variant.allows_inhibition:
            inc_g = np.zeros_like(inc_g)
        return replace(self, include_alpha=inc_a, include_gamma=inc_g)

    def satisfies(self, variant: ModelVariant) -> bool:
        variant = ModelVariant(variant)
        if not variant.allows_excitation and self.include_alpha.any():
            return False
        if not variant.allows_inhibition and self.include_gamma.any():
            return False
        return True

    def check_background(self, tracks: Sequence[CovariateTrack]) -> None:
        """Reject nonpositive linear backgrounds on any covariate segment."""
        if self.background_link is not Link.LINEAR:
            return
        for d, track in enumerate(tracks):
            eta = track.values @ self.beta[d].T
            if np.any(eta <= 0):
                raise ValidationError(
                    f"linear background is nonpositive on a covariate segment of replicate {d}"
                )

    @classmethod
    def from_matrices(
        cls,
        mu,
        alpha,
        gamma,
        eta,
        phi,
        background_link: Link = Link.LOG,
    ) -> "ExInParams":
        """Build from constant backgrounds ``mu`` (length K, or D x K) and effective matrices."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.ndim == 1:
            mu = mu[None, :]
        link = Link(background_link)
        beta = np.log(mu) if link is Link.LOG else mu.copy()
        alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
        gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
        return cls(
            beta=beta[:, :, None],
            alpha_star=alpha,
            gamma_star=gamma,
            include_alpha=alpha > 0,
            include_gamma=gamma > 0,
            eta=eta,
            phi=phi,
            background_link=link,
        )

    def __eq__(self, other):
        if not isinstance(other, ExInParams):
            return NotImplemented
        names = ("beta", "alpha_star", "gamma_star", "include_alpha", "include_gamma", "eta", "phi")
        return self.background_link == other.background_link and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in names
        )


def resolve_tracks(cov, sequences: Sequence[MarkedEventSequence]) -> list[CovariateTrack]:
    """One covariate track per sequence.

    ``cov`` may be ``None`` (intercept only), a single track shared by all
    replicates, or a sequence/mapping indexed by ``replicate_id``.
    """
    tracks = []
    for seq in sequences:
        if cov is None:
            track = CovariateTrack.intercept_only(seq.horizon)
        elif isinstance(cov, CovariateTrack):
            track = cov
        else:
            track = cov[seq.replicate_id]
        if not track.covers(seq.horizon):
            raise CoverageError(
                f"covariate track ends at {track.end} before horizon {seq.horizon}"
            )
        tracks.append(track)
    return tracks


def link_fn(link: Link, eta):
    if Link(link) is Link.LOG:
        return np.exp(eta)
    return eta


def background_rate(t, mark: int, replicate: int, params: ExInParams, cov: CovariateTrack | None = None):
    """Background rate ``mu_k(t)`` for ``replicate``; vectorized over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    if cov is None:
        x = np.ones(t_arr.shape + (1,))
    else:
        x = cov.values[cov.segment_index(t_arr)]
    lin = x @ params.beta[replicate, mark]
    if params.background_link is Link.LINEAR and np.any(lin <= 0):
        raise ValidationError("linear background is nonpositive")
    out = link_fn(params.background_link, lin)
    return float(out) if np.ndim(out) == 0 else out


def _past(t: float, history: MarkedEventSequence):
    n = int(np.searchsorted(history.times, t, side="left"))
    return history.times[:n], history.marks[:n]


def excitation_component(t: float, mark: int, history: MarkedEventSequence, params: ExInParams) -> float:
    times, marks = _past(t, history)
    if times.size == 0:
        return 0.0
    eta = params.eta[marks]
    return float(np.sum(params.alpha[marks, mark] / eta * np.exp(-(t - times) / eta)))


def inhibition_factor(t: float, mark: int, history: MarkedEventSequence, params: ExInParams) -> float:
    times, marks = _past(t, history)
    if times.size == 0:
        return 1.0
    return float(np.exp(-np.sum(params.gamma[marks, mark] * np.exp(-(t - times) / params.phi[marks]))))


def conditional_intensity(
    t: float,
    mark: int,
    replicate: int,
    history: MarkedEventSequence,
    params: ExInParams,
    cov: CovariateTrack | None = None,
) -> float:
    mu = background_rate(t, mark, replicate, params, cov)
    return (mu + excitation_component(t, mark, history, params)) * inhibition_factor(
        t, mark, history, params
    )


def total_intensity(t, replicate, history, params, cov=None) -> float:
    return sum(
        conditional_intensity(t, k, replicate, history, params, cov)
        for k in range(params.mark_count)
    )
