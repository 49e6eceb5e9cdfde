"""Metropolis-Hastings-within-Gibbs posterior sampling.

One sweep:

1. draw every latent parent from its full conditional;
2. random-walk updates of the background coefficients, per replicate and mark;
3. one indicator move per mark pair, proposing one of the other admissible
   states ``(1,0)``, ``(0,1)``, ``(0,0)``; a newly switched-on strength is drawn
   from its slab, so the slab density cancels from the acceptance ratio;
4. log-scale random-walk updates of the active excitation strengths and of
   ``eta``;
5. the same for the active inhibition strengths and ``phi``.

Steps 2 and 4 use the complete-data likelihood restricted to the factors they
touch.  Step 3 uses the observed-data likelihood of the receiving mark, after
which that mark's parents are redrawn.  Parameters that currently have no
effect on the likelihood (switched-off strengths, decays of marks with no
active edge) are refreshed from their priors.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .likelihood import (
    DEFAULT_QUADRATURE,
    IntensityGrid,
    BranchingAssignment,
    QuadratureSpec,
    pointwise_log_contributions,
    tracks_for,
)
from .model import (
    CovariateTrack,
    ExInParams,
    Link,
    MarkedEventSequence,
    ModelVariant,
    ValidationError,
    link_fn,
)

log = logging.getLogger(__name__)

# indicator states per pair: 0 -> (0,0), 1 -> (1,0) excitation, 2 -> (0,1) inhibition
OFF, EXC, INH = 0, 1, 2


class McmcInitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Priors: ``beta ~ N(0, beta_variance I)``; log of every positive parameter ~ ``N(slab_mean, slab_sd^2)``.

    The inclusion probabilities act as independent Bernoulli priors on
    ``I_alpha`` and ``I_gamma`` conditioned on not both being one.
    """

    beta_variance: float = 10.0
    slab_mean: float = 0.0
    slab_sd: float = 1.0
    inclusion_prob_alpha: float | np.ndarray = 0.5
    inclusion_prob_gamma: float | np.ndarray = 0.5

    def __post_init__(self):
        for name in ("inclusion_prob_alpha", "inclusion_prob_gamma"):
            p = np.asarray(getattr(self, name), dtype=float)
            if np.any(p < 0) or np.any(p > 1):
                raise ValidationError(f"{name} must lie in [0, 1]")
        if self.beta_variance <= 0 or self.slab_sd <= 0:
            raise ValidationError("prior variances must be positive")

    def state_log_prior(self, K: int, variant: ModelVariant) -> np.ndarray:
        """Log prior of the three pair states, shape ``(K, K, 3)``; disallowed states are ``-inf``."""
        variant = ModelVariant(variant)
        p = np.broadcast_to(np.asarray(self.inclusion_prob_alpha, float), (K, K))
        q = np.broadcast_to(np.asarray(self.inclusion_prob_gamma, float), (K, K))
        w = np.stack([(1 - p) * (1 - q), p * (1 - q), (1 - p) * q], axis=-1)
        if not variant.allows_excitation:
            w[..., EXC] = 0.0
        if not variant.allows_inhibition:
            w[..., INH] = 0.0
        total = w.sum(axis=-1, keepdims=True)
        if np.any(total <= 0):
            raise ValidationError("inclusion probabilities leave no admissible state for some pair")
        with np.errstate(divide="ignore"):
            return np.log(w / total)

    def log_slab(self, x):
        z = (np.log(x) - self.slab_mean) / self.slab_sd
        return -0.5 * z * z

    def draw_slab(self, rng) -> float:
        return float(np.exp(self.slab_mean + self.slab_sd * rng.standard_normal()))


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 20000
    burn_in: int = 10000
    thin: int = 1
    seed: int = 0
    scales: dict = field(
        default_factory=lambda: {"beta": 0.1, "alpha": 0.3, "eta": 0.3, "gamma": 0.3, "phi": 0.3}
    )
    adapt_window: int = 5000
    target_accept: float = 0.3
    chain_count: int = 1
    quad: QuadratureSpec = DEFAULT_QUADRATURE
    workers: int | None = None
    store_pointwise: bool = False
    fixed: frozenset = frozenset()

    def __post_init__(self):
        if self.iterations <= 0 or self.thin <= 0:
            raise ValidationError("iterations and thin must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must be smaller than iterations (no draws would be kept)")
        if any(v <= 0 for v in self.scales.values()):
            raise ValidationError("proposal scales must be positive")
        if self.chain_count < 1:
            raise ValidationError("chain_count must be at least 1")
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        unknown = self.fixed - {"beta", "indicator", "alpha", "eta", "gamma", "phi"}
        if unknown:
            raise ValidationError(f"unknown blocks to fix: {sorted(unknown)}")

    @property
    def draws_per_chain(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


def param_names(D: int, K: int, P: int) -> list[str]:
    names = [f"beta.{d}.{k}.{p}" for d in range(D) for k in range(K) for p in range(P)]
    for mat in ("alpha_star", "include_alpha", "gamma_star", "include_gamma"):
        names += [f"{mat}.{l}.{k}" for l in range(K) for k in range(K)]
    names += [f"eta.{l}" for l in range(K)]
    names += [f"phi.{l}" for l in range(K)]
    return names


def flatten(params: ExInParams) -> np.ndarray:
    return np.concatenate(
        [
            params.beta.ravel(),
            params.alpha_star.ravel(),
            params.include_alpha.ravel().astype(float),
            params.gamma_star.ravel(),
            params.include_gamma.ravel().astype(float),
            params.eta,
            params.phi,
        ]
    )


def unflatten(row: np.ndarray, D: int, K: int, P: int, link: Link) -> ExInParams:
    row = np.asarray(row, dtype=float)
    i = D * K * P
    beta = row[:i].reshape(D, K, P)
    mats = []
    for _ in range(4):
        mats.append(row[i : i + K * K].reshape(K, K))
        i += K * K
    eta, phi = row[i : i + K], row[i + K : i + 2 * K]
    return ExInParams(
        beta=beta,
        alpha_star=mats[0],
        include_alpha=mats[1] > 0.5,
        gamma_star=mats[2],
        include_gamma=mats[3] > 0.5,
        eta=eta,
        phi=phi,
        background_link=link,
    )


@dataclass
class PosteriorDraws:
    """Retained draws of all chains, stacked in chain order."""

    values: np.ndarray
    loglik: np.ndarray
    chain: np.ndarray
    replicate_count: int
    mark_count: int
    covariate_dim: int
    background_link: Link
    variant: ModelVariant
    acceptance: dict = field(default_factory=dict)
    pointwise: np.ndarray | None = None
    quad: QuadratureSpec = DEFAULT_QUADRATURE

    @property
    def names(self) -> list[str]:
        return param_names(self.replicate_count, self.mark_count, self.covariate_dim)

    def __len__(self) -> int:
        return self.values.shape[0]

    def params(self, b: int) -> ExInParams:
        return unflatten(
            self.values[b], self.replicate_count, self.mark_count, self.covariate_dim, self.background_link
        )

    def __iter__(self):
        for b in range(len(self)):
            yield self.params(b)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def effective(self, name: str) -> np.ndarray:
        """Effective strength draws, e.g. ``effective("alpha.0.1")`` = alpha_star * include_alpha."""
        kind, idx = name.split(".", 1)
        return self.column(f"{kind}_star.{idx}") * self.column(f"include_{kind}.{idx}")

    def subset(self, index) -> "PosteriorDraws":
        index = np.asarray(index)
        return replace(
            self,
            values=self.values[index],
            loglik=self.loglik[index],
            chain=self.chain[index],
            pointwise=None if self.pointwise is None else self.pointwise[index],
        )

    def evenly_spaced(self, max_draws: int | None) -> "PosteriorDraws":
        if max_draws is None or len(self) <= max_draws:
            return self
        return self.subset(np.linspace(0, len(self) - 1, max_draws).round().astype(int))

    def inclusion_probability(self) -> tuple[np.ndarray, np.ndarray]:
        K = self.mark_count
        ia = np.array([[self.column(f"include_alpha.{l}.{k}").mean() for k in range(K)] for l in range(K)])
        ig = np.array([[self.column(f"include_gamma.{l}.{k}").mean() for k in range(K)] for l in range(K)])
        return ia, ig

    def point_estimate(self) -> ExInParams:
        """Median-probability model: edges with inclusion probability above 0.5,
        strengths averaged over the draws in which the edge is on, other
        parameters averaged over all draws."""
        ia, ig = self.inclusion_probability()
        mean = self.params_mean()
        K = self.mark_count
        a_star, g_star = mean.alpha_star.copy(), mean.gamma_star.copy()
        for l in range(K):
            for k in range(K):
                for star, kind in ((a_star, "alpha"), (g_star, "gamma")):
                    on = self.column(f"include_{kind}.{l}.{k}") > 0.5
                    if on.any():
                        star[l, k] = self.column(f"{kind}_star.{l}.{k}")[on].mean()
        return replace(mean, alpha_star=a_star, gamma_star=g_star, include_alpha=ia > 0.5, include_gamma=ig > 0.5)

    def params_mean(self) -> ExInParams:
        D, K, P = self.replicate_count, self.mark_count, self.covariate_dim
        row = self.values.mean(axis=0)
        n_beta = D * K * P
        # indicators of the mean row are not meaningful; switch everything off
        row[n_beta + K * K : n_beta + 2 * K * K] = 0.0
        row[n_beta + 3 * K * K : n_beta + 4 * K * K] = 0.0
        return unflatten(row, D, K, P, self.background_link)

    @staticmethod
    def concatenate(parts: Sequence["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]
        acc = {}
        for key in first.acceptance:
            acc[key] = float(np.mean([p.acceptance[key] for p in parts]))
        pw = None
        if all(p.pointwise is not None for p in parts):
            pw = np.concatenate([p.pointwise for p in parts])
        return replace(
            first,
            values=np.concatenate([p.values for p in parts]),
            loglik=np.concatenate([p.loglik for p in parts]),
            chain=np.concatenate([p.chain for p in parts]),
            acceptance=acc,
            pointwise=pw,
        )


class _Replicate:
    """Likelihood caches of one replicate."""

    def __init__(self, seq: MarkedEventSequence, track: CovariateTrack, quad: QuadratureSpec, exact: bool):
        g = IntensityGrid(seq, track, quad.subdivisions, scheme=quad.scheme)
        self.seq = seq
        self.track = track
        self.d = seq.replicate_id
        self.exact = exact
        self.K = seq.mark_count
        self.n = len(seq)
        self.times = seq.times
        self.marks = seq.marks
        self.knots = g.knots
        self.event_knot = g.event_knot
        self.lengths = g.lengths
        self.offsets = g.offsets
        self.w = g.weights.reshape(-1)
        self.X = track.values
        self.n_seg = track.values.shape[0]
        node_seg = np.repeat(g.segment, g.subdivisions + 1)
        self.node_seg = node_seg
        self.seg_lengths = np.bincount(g.segment, weights=g.lengths, minlength=self.n_seg)
        self.ev_seg = g.event_segment
        self.ev_left = g.event_knot - 1
        self.ev_left_len = g.lengths[self.ev_left] if self.n else np.zeros(0)
        self.by_mark = [np.flatnonzero(seq.marks == k) for k in range(self.K)]
        self.source_mask = [seq.marks == l for l in range(self.K)]
        self.last_before = _kernels.last_of_mark(seq.marks, self.K)
        self.prev_same = _kernels.previous_same_mark(seq.marks, self.K)

    # -- decay states -------------------------------------------------
    def decay_column(self, l: int, scale: float, nodes: bool = True):
        st = _kernels.knot_state_single(self.knots, self.event_knot, self.source_mask[l], float(scale))[:-1]
        ev = st[self.ev_left] * np.exp(-self.ev_left_len / scale) if self.n else np.zeros(0)
        node = (st[:, None] * np.exp(-self.offsets / scale)).reshape(-1) if nodes else None
        return st, node, ev

    def build(self, params: ExInParams, eta, phi, alpha, gamma, link):
        K = self.K
        N = self.w.size
        self.st_e = np.empty((self.lengths.size, K))
        self.ev_e = np.empty((self.n, K))
        self.ev_p = np.zeros((self.n, K))
        if not self.exact:
            self.Ve = np.empty((N, K))
            self.Vp = np.empty((N, K))
        for l in range(K):
            st, node, ev = self.decay_column(l, eta[l], nodes=not self.exact)
            self.st_e[:, l] = st
            self.ev_e[:, l] = ev
            if not self.exact:
                self.Ve[:, l] = node
                _, node, ev = self.decay_column(l, phi[l])
                self.Vp[:, l] = node
                self.ev_p[:, l] = ev
        self.set_background(params.beta[self.d], link)
        self.refresh_inhibition(gamma, eta)

    def set_background(self, beta_d, link):
        lin = self.X @ beta_d.T
        self.mu_seg = link_fn(link, lin)
        self.mu_ev = self.mu_seg[self.ev_seg, self.marks] if self.n else np.zeros(0)

    def mu_column(self, beta_dk, link):
        return link_fn(link, self.X @ beta_dk)

    # -- inhibition-dependent integrals --------------------------------
    def h_column(self, gamma_k):
        return np.exp(-(self.Vp @ gamma_k))

    def ih_column(self, h_k):
        if self.n_seg == 1:
            return np.array([self.w @ h_k])
        return np.bincount(self.node_seg, weights=self.w * h_k, minlength=self.n_seg)

    def igh_column(self, h_k):
        return self.wVe.T @ h_k

    def refresh_inhibition(self, gamma, eta):
        K = self.K
        if self.exact:
            self.IH = np.repeat(self.seg_lengths[:, None], K, axis=1)
            self.IGH = np.repeat(self.exact_igh(eta)[:, None], K, axis=1)
            self.logh_ev = np.zeros(self.n)
            return
        self.wVe = self.w[:, None] * self.Ve / eta
        self.H = np.exp(-(self.Vp @ gamma))
        self.IH = np.empty((self.n_seg, K))
        for k in range(K):
            self.IH[:, k] = self.ih_column(self.H[:, k])
        self.IGH = self.wVe.T @ self.H
        self.logh_ev = -np.einsum("il,il->i", self.ev_p, gamma[:, self.marks].T) if self.n else np.zeros(0)

    def exact_igh(self, eta):
        return np.sum(self.st_e * -np.expm1(-self.lengths[:, None] / eta), axis=0)

    # -- likelihood pieces --------------------------------------------
    def compensator(self, k, alpha):
        return float(self.mu_seg[:, k] @ self.IH[:, k] + alpha[:, k] @ self.IGH[:, k])

    def mark_event_terms(self, k, alpha, eta, logh=None):
        idx = self.by_mark[k]
        g = self.ev_e[idx] @ (alpha[:, k] / eta)
        lh = self.logh_ev[idx] if logh is None else logh
        return float(np.sum(np.log(self.mu_ev[idx] + g)) + np.sum(lh))

    def loglik(self, alpha, eta):
        total = 0.0
        for k in range(self.K):
            total += self.mark_event_terms(k, alpha, eta) - self.compensator(k, alpha)
        return total


class SamplerState:
    def __init__(
        self,
        seqs: list[MarkedEventSequence],
        tracks: list[CovariateTrack],
        variant: ModelVariant,
        prior: PriorSpec,
        config: McmcConfig,
        init: ExInParams,
        rng: np.random.Generator,
    ):
        self.variant = ModelVariant(variant)
        self.prior = prior
        self.config = config
        self.rng = rng
        self.K = K = init.mark_count
        self.link = init.background_link
        self.beta = np.array(init.beta, dtype=float)
        self.alpha_star = np.array(init.alpha_star, dtype=float)
        self.gamma_star = np.array(init.gamma_star, dtype=float)
        self.state = np.where(init.include_alpha, EXC, np.where(init.include_gamma, INH, OFF))
        self.eta = np.array(init.eta, dtype=float)
        self.phi = np.array(init.phi, dtype=float)
        self.state_prior = prior.state_log_prior(K, self.variant)
        if np.any(~np.isfinite(self.state_prior[np.arange(K)[:, None], np.arange(K), self.state])):
            raise McmcInitializationError("initial indicators are not allowed by the variant/prior")
        self.exact = (not self.variant.allows_inhibition) and config.quad.exact_when_uninhibited
        # the closed form is used only when the variant rules out inhibition, so that
        # the likelihood surface does not switch form between sweeps
        self.quad = replace(config.quad, exact_when_uninhibited=self.exact)
        self.reps = [_Replicate(s, t, config.quad, self.exact) for s, t in zip(seqs, tracks)]
        alpha, gamma = self.alpha, self.gamma
        for rep in self.reps:
            rep.build(init, self.eta, self.phi, alpha, gamma, self.link)
        self.log_scale = {k: math.log(v) for k, v in config.scales.items()}
        self.tally = {k: [0, 0] for k in ("beta", "alpha", "eta", "gamma", "phi", "indicator")}
        self.adapting = True
        self.iteration = 0
        ll = self.loglik()
        if not np.isfinite(ll):
            raise McmcInitializationError(
                f"log-likelihood at the initial parameters is {ll}; "
                "check that every event has positive background intensity (e.g. pass init= explicitly)"
            )
        for rep in self.reps:
            rep.parent = np.full(rep.n, -1, dtype=np.int64)
        self.sample_branching()

    # -- parameter views ------------------------------------------------
    @property
    def alpha(self):
        return self.alpha_star * (self.state == EXC)

    @property
    def gamma(self):
        return self.gamma_star * (self.state == INH)

    def params(self) -> ExInParams:
        return ExInParams(
            beta=self.beta.copy(),
            alpha_star=self.alpha_star.copy(),
            gamma_star=self.gamma_star.copy(),
            include_alpha=self.state == EXC,
            include_gamma=self.state == INH,
            eta=self.eta.copy(),
            phi=self.phi.copy(),
            background_link=self.link,
        )

    def loglik(self) -> float:
        alpha = self.alpha
        return float(sum(rep.loglik(alpha, self.eta) for rep in self.reps))

    # -- MH plumbing -----------------------------------------------------
    def _accept(self, log_ratio: float, block: str) -> bool:
        ok = bool(log_ratio > np.log(self.rng.uniform()))
        if not self.adapting:
            t = self.tally[block]
            t[0] += ok
            t[1] += 1
        if self.adapting and block in self.log_scale:
            step = 1.0 / (1.0 + self.iteration / 20.0) ** 0.6
            self.log_scale[block] += step * ((1.0 if ok else 0.0) - self.config.target_accept)
        return ok

    def _scale(self, block: str) -> float:
        return math.exp(self.log_scale[block])

    # -- branching -----------------------------------------------------------
    def sample_branching(self, mark: int | None = None):
        alpha = np.ascontiguousarray(self.alpha)
        for rep in self.reps:
            if mark is None:
                targets = np.arange(rep.n, dtype=np.int64)
            else:
                targets = rep.by_mark[mark].astype(np.int64)
            if targets.size == 0:
                continue
            u = self.rng.uniform(size=targets.size)
            rep.parent[targets] = _kernels.sample_parents(
                rep.times, rep.marks, targets, alpha, self.eta, rep.mu_ev, rep.ev_e, rep.last_before, rep.prev_same, u
            )
        self._branching_stats()

    def _branching_stats(self):
        K = self.K
        self.n_child = np.zeros((K, K))
        self.lag_sum = np.zeros(K)
        for rep in self.reps:
            child = np.flatnonzero(rep.parent >= 0)
            src = rep.marks[rep.parent[child]]
            dst = rep.marks[child]
            self.n_child += np.bincount(src * K + dst, minlength=K * K).reshape(K, K)
            self.lag_sum += np.bincount(src, weights=rep.times[child] - rep.times[rep.parent[child]], minlength=K)
            bg = np.flatnonzero(rep.parent < 0)
            rep.bg_count = np.bincount(
                rep.ev_seg[bg] * K + rep.marks[bg], minlength=rep.n_seg * K
            ).reshape(rep.n_seg, K)

    # -- background ----------------------------------------------------------
    def beta_delta(self, d: int, k: int, beta_new: np.ndarray) -> float:
        """Complete-data log-likelihood change of replacing ``beta[d, k]``."""
        rep = self.reps[d]
        mu_new = rep.mu_column(beta_new, self.link)
        if np.any(mu_new <= 0) or not np.all(np.isfinite(mu_new)):
            return -np.inf
        mu_old = rep.mu_seg[:, k]
        counts = rep.bg_count[:, k]
        used = counts > 0
        ev = float(counts[used] @ (np.log(mu_new[used]) - np.log(mu_old[used])))
        return ev - float((mu_new - mu_old) @ rep.IH[:, k])

    def update_beta(self):
        var = self.prior.beta_variance
        for rep in self.reps:
            d = rep.d
            for k in range(self.K):
                old = self.beta[d, k]
                new = old + self._scale("beta") * self.rng.standard_normal(old.shape)
                ratio = self.beta_delta(d, k, new) - 0.5 * (new @ new - old @ old) / var
                if self._accept(ratio, "beta"):
                    self.beta[d, k] = new
                    rep.mu_seg[:, k] = rep.mu_column(new, self.link)
                    idx = rep.by_mark[k]
                    rep.mu_ev[idx] = rep.mu_seg[rep.ev_seg[idx], k]

    # -- indicators -------------------------------------------------------
    def _mark_loglik(self, k, alpha, logh_by_rep=None, IH_by_rep=None, IGH_by_rep=None):
        total = 0.0
        for r, rep in enumerate(self.reps):
            lh = None if logh_by_rep is None else logh_by_rep[r]
            total += rep.mark_event_terms(k, alpha, self.eta, lh)
            IH = rep.IH[:, k] if IH_by_rep is None else IH_by_rep[r]
            IGH = rep.IGH[:, k] if IGH_by_rep is None else IGH_by_rep[r]
            total -= float(rep.mu_seg[:, k] @ IH + alpha[:, k] @ IGH)
        return total

    def _inhibition_proposal(self, k, gamma_k):
        """Recomputed mark-``k`` caches under a new inhibition column."""
        H, IH, IGH, LH = [], [], [], []
        for rep in self.reps:
            h = rep.h_column(gamma_k)
            H.append(h)
            IH.append(rep.ih_column(h))
            IGH.append(rep.igh_column(h))
            idx = rep.by_mark[k]
            LH.append(-(rep.ev_p[idx] @ gamma_k))
        return H, IH, IGH, LH

    def _commit_inhibition(self, k, prop):
        H, IH, IGH, LH = prop
        for r, rep in enumerate(self.reps):
            rep.H[:, k] = H[r]
            rep.IH[:, k] = IH[r]
            rep.IGH[:, k] = IGH[r]
            rep.logh_ev[rep.by_mark[k]] = LH[r]

    def update_indicator(self, l: int, k: int):
        cur = int(self.state[l, k])
        logp = self.state_prior[l, k]
        options = [s for s in (OFF, EXC, INH) if s != cur and np.isfinite(logp[s])]
        if not options:
            return
        new = options[int(self.rng.integers(len(options)))] if len(options) > 1 else options[0]
        # proposal is symmetric unless one side has a different number of reachable states
        back = [s for s in (OFF, EXC, INH) if s != new and np.isfinite(logp[s])]
        log_q = math.log(len(options)) - math.log(len(back))

        alpha_old = self.alpha
        a_star = self.alpha_star[l, k]
        g_star = self.gamma_star[l, k]
        if new == EXC:
            a_star = self.prior.draw_slab(self.rng)
        if new == INH:
            g_star = self.prior.draw_slab(self.rng)
        alpha_new = alpha_old.copy()
        alpha_new[l, k] = a_star if new == EXC else 0.0
        gamma_changed = (cur == INH) or (new == INH)

        old_ll = self._mark_loglik(k, alpha_old)
        prop = None
        if gamma_changed:
            gamma_k = self.gamma[:, k].copy()
            gamma_k[l] = g_star if new == INH else 0.0
            prop = self._inhibition_proposal(k, gamma_k)
            new_ll = self._mark_loglik(k, alpha_new, prop[3], prop[1], prop[2])
        else:
            new_ll = self._mark_loglik(k, alpha_new)
        ratio = new_ll - old_ll + logp[new] - logp[cur] + log_q
        if self._accept(ratio, "indicator"):
            # a switched-off strength returns to its prior, keeping the move reversible
            if cur == EXC:
                a_star = self.prior.draw_slab(self.rng)
            if cur == INH:
                g_star = self.prior.draw_slab(self.rng)
            self.state[l, k] = new
            self.alpha_star[l, k] = a_star
            self.gamma_star[l, k] = g_star
            if prop is not None:
                self._commit_inhibition(k, prop)
            if cur == EXC or new == EXC:
                self.sample_branching(mark=k)

    # -- excitation -------------------------------------------------------
    def update_alpha(self, l: int):
        for k in range(self.K):
            if self.state[l, k] != EXC:
                self.alpha_star[l, k] = self.prior.draw_slab(self.rng)
                continue
            old = self.alpha_star[l, k]
            new = old * math.exp(self._scale("alpha") * self.rng.standard_normal())
            igh = sum(rep.IGH[l, k] for rep in self.reps)
            ratio = (
                self.n_child[l, k] * math.log(new / old)
                - (new - old) * igh
                + self.prior.log_slab(new)
                - self.prior.log_slab(old)
            )
            if self._accept(ratio, "alpha"):
                self.alpha_star[l, k] = new

    def _set_eta_column(self, l, eta_l, cols):
        for rep, (st, node, ev) in zip(self.reps, cols):
            rep.st_e[:, l] = st
            rep.ev_e[:, l] = ev
            if not rep.exact:
                rep.Ve[:, l] = node
                rep.wVe[:, l] = rep.w * node / eta_l

    def _eta_igh_row(self, rep, l, eta_l, col):
        st, node, _ = col
        if rep.exact:
            return np.full(self.K, float(np.sum(st * -np.expm1(-rep.lengths / eta_l))))
        return (rep.w * node / eta_l) @ rep.H

    def update_eta(self, l: int):
        active = self.state[l] == EXC
        if not active.any():
            new = self.prior.draw_slab(self.rng)
            cols = [rep.decay_column(l, new, nodes=not rep.exact) for rep in self.reps]
            self.eta[l] = new
            self._set_eta_column(l, new, cols)
            for rep, col in zip(self.reps, cols):
                rep.IGH[l, :] = self._eta_igh_row(rep, l, new, col)
            return
        old = self.eta[l]
        new = old * math.exp(self._scale("eta") * self.rng.standard_normal())
        cols = [rep.decay_column(l, new, nodes=not rep.exact) for rep in self.reps]
        rows = [self._eta_igh_row(rep, l, new, col) for rep, col in zip(self.reps, cols)]
        alpha_l = self.alpha[l]
        n_l = self.n_child[l].sum()
        comp_old = sum(float(alpha_l @ rep.IGH[l]) for rep in self.reps)
        comp_new = sum(float(alpha_l @ row) for row in rows)
        ratio = (
            -n_l * math.log(new / old)
            - self.lag_sum[l] * (1.0 / new - 1.0 / old)
            - (comp_new - comp_old)
            + self.prior.log_slab(new)
            - self.prior.log_slab(old)
        )
        if self._accept(ratio, "eta"):
            self.eta[l] = new
            self._set_eta_column(l, new, cols)
            for rep, row in zip(self.reps, rows):
                rep.IGH[l, :] = row

    # -- inhibition -------------------------------------------------------
    def update_gamma(self, l: int):
        for k in range(self.K):
            if self.state[l, k] != INH:
                self.gamma_star[l, k] = self.prior.draw_slab(self.rng)
                continue
            old = self.gamma_star[l, k]
            new = old * math.exp(self._scale("gamma") * self.rng.standard_normal())
            gamma_k = self.gamma[:, k].copy()
            gamma_k[l] = new
            prop = self._inhibition_proposal(k, gamma_k)
            alpha = self.alpha
            ratio = (
                self._mark_loglik(k, alpha, prop[3], prop[1], prop[2])
                - self._mark_loglik(k, alpha)
                + self.prior.log_slab(new)
                - self.prior.log_slab(old)
            )
            if self._accept(ratio, "gamma"):
                self.gamma_star[l, k] = new
                self._commit_inhibition(k, prop)

    def update_phi(self, l: int):
        active = np.flatnonzero(self.state[l] == INH)
        new_cols = None
        if active.size == 0:
            new = self.prior.draw_slab(self.rng)
        else:
            old = self.phi[l]
            new = old * math.exp(self._scale("phi") * self.rng.standard_normal())
        new_cols = [rep.decay_column(l, new) for rep in self.reps]
        if active.size == 0:
            self.phi[l] = new
            for rep, (_, node, ev) in zip(self.reps, new_cols):
                rep.Vp[:, l] = node
                rep.ev_p[:, l] = ev
            return
        saved = [(rep.Vp[:, l].copy(), rep.ev_p[:, l].copy()) for rep in self.reps]
        for rep, (_, node, ev) in zip(self.reps, new_cols):
            rep.Vp[:, l] = node
            rep.ev_p[:, l] = ev
        alpha, gamma = self.alpha, self.gamma
        ratio = self.prior.log_slab(new) - self.prior.log_slab(old)
        props = {}
        for k in active:
            prop = self._inhibition_proposal(k, gamma[:, k])
            props[k] = prop
            ratio += self._mark_loglik(k, alpha, prop[3], prop[1], prop[2]) - self._mark_loglik(k, alpha)
        if self._accept(ratio, "phi"):
            self.phi[l] = new
            for k, prop in props.items():
                self._commit_inhibition(k, prop)
        else:
            for rep, (node, ev) in zip(self.reps, saved):
                rep.Vp[:, l] = node
                rep.ev_p[:, l] = ev

    # -- sweep -------------------------------------------------------------
    def sweep(self):
        K = self.K
        fixed = self.config.fixed
        self.sample_branching()
        if "beta" not in fixed:
            self.update_beta()
        if "indicator" not in fixed:
            for l in range(K):
                for k in range(K):
                    self.update_indicator(l, k)
        if self.variant.allows_excitation:
            for l in range(K):
                if "alpha" not in fixed:
                    self.update_alpha(l)
                if "eta" not in fixed:
                    self.update_eta(l)
        if self.variant.allows_inhibition:
            for l in range(K):
                if "gamma" not in fixed:
                    self.update_gamma(l)
                if "phi" not in fixed:
                    self.update_phi(l)
        self.iteration += 1
        assert np.all(np.isfinite(self.state_prior[np.arange(K)[:, None], np.arange(K), self.state]))

    def run(self, chain_id: int = 0) -> PosteriorDraws:
        cfg = self.config
        adapt_until = min(cfg.adapt_window, cfg.burn_in)
        keep = set(range(cfg.burn_in, cfg.iterations, cfg.thin))
        rows, lls, pw = [], [], []
        for it in range(cfg.iterations):
            self.adapting = it < adapt_until
            self.sweep()
            if it in keep:
                params = self.params()
                rows.append(flatten(params))
                lls.append(self.loglik())
                if cfg.store_pointwise:
                    pw.append(
                        np.concatenate(
                            [pointwise_log_contributions(r.seq, params, r.track, self.quad) for r in self.reps]
                        )
                    )
        acceptance = {k: (a / n if n else float("nan")) for k, (a, n) in self.tally.items()}
        acceptance.update({f"scale.{k}": math.exp(v) for k, v in self.log_scale.items()})
        D, K, P = self.beta.shape
        return PosteriorDraws(
            values=np.array(rows),
            loglik=np.array(lls),
            chain=np.full(len(rows), chain_id, dtype=np.int64),
            replicate_count=D,
            mark_count=K,
            covariate_dim=P,
            background_link=self.link,
            variant=self.variant,
            acceptance=acceptance,
            pointwise=np.array(pw) if cfg.store_pointwise else None,
            quad=self.quad,
        )


def sample_branching(
    seq: MarkedEventSequence,
    params: ExInParams,
    rng: np.random.Generator,
    cov: CovariateTrack | None = None,
) -> BranchingAssignment:
    """Draw every parent label independently from its full conditional."""
    seqs, tracks = tracks_for(seq, cov)
    rep = _Replicate(seqs[0], tracks[0], DEFAULT_QUADRATURE, exact=True)
    K = params.mark_count
    rep.st_e = np.empty((rep.lengths.size, K))
    rep.ev_e = np.empty((rep.n, K))
    for l in range(K):
        st, _, ev = rep.decay_column(l, params.eta[l], nodes=False)
        rep.st_e[:, l] = st
        rep.ev_e[:, l] = ev
    rep.set_background(params.beta[rep.d], params.background_link)
    targets = np.arange(rep.n, dtype=np.int64)
    u = rng.uniform(size=rep.n)
    parent = _kernels.sample_parents(
        rep.times, rep.marks, targets, np.ascontiguousarray(params.alpha), params.eta, rep.mu_ev, rep.ev_e,
        rep.last_before, rep.prev_same, u,
    )
    return BranchingAssignment(parent)


def update_block(block: str, state: SamplerState) -> None:
    """One update of ``"beta"``, ``"alpha_eta"`` or ``"gamma_phi"`` given the current parents."""
    if block == "beta":
        state.update_beta()
    elif block == "alpha_eta":
        for l in range(state.K):
            state.update_alpha(l)
            state.update_eta(l)
    elif block == "gamma_phi":
        for l in range(state.K):
            state.update_gamma(l)
            state.update_phi(l)
    else:
        raise ValidationError(f"unknown block {block!r}")


def update_indicators(pair: tuple[int, int], state: SamplerState) -> None:
    state.update_indicator(*pair)


def initial_params(
    seqs: Sequence[MarkedEventSequence],
    tracks: Sequence[CovariateTrack],
    variant: ModelVariant,
    link: Link = Link.LOG,
) -> ExInParams:
    """Crude-rate backgrounds, diagonal pairs switched on, unit decays."""
    variant = ModelVariant(variant)
    K = seqs[0].mark_count
    D = max(s.replicate_id for s in seqs) + 1
    P = tracks[0].dim
    beta = np.zeros((D, K, P))
    for seq in seqs:
        rate = np.maximum(seq.counts(), 0.5) / seq.horizon
        beta[seq.replicate_id, :, 0] = np.log(rate) if Link(link) is Link.LOG else rate
    eye = np.eye(K, dtype=bool)
    zero = np.zeros((K, K), dtype=bool)
    inc_a = eye if variant.allows_excitation else zero
    inc_g = eye if variant is ModelVariant.INH_ONLY else zero
    return ExInParams(
        beta=beta,
        alpha_star=np.full((K, K), 0.5),
        gamma_star=np.full((K, K), 0.5),
        include_alpha=inc_a,
        include_gamma=inc_g,
        eta=np.ones(K),
        phi=np.ones(K),
        background_link=link,
    )


def _run_chain(args):
    seqs, tracks, variant, prior, config, init, seed_seq, chain_id = args
    rng = np.random.default_rng(seed_seq)
    chain = SamplerState(seqs, tracks, variant, prior, config, init, rng)
    return chain.run(chain_id)


def chain_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def run_mcmc(
    data,
    variant: ModelVariant = ModelVariant.EXC_INH,
    prior: PriorSpec | None = None,
    config: McmcConfig | None = None,
    cov=None,
    init: ExInParams | None = None,
    link: Link = Link.LOG,
) -> PosteriorDraws:
    """Sample the posterior; chains are independent and merged in chain order."""
    prior = prior or PriorSpec()
    config = config or McmcConfig()
    variant = ModelVariant(variant)
    seqs, tracks = tracks_for(data, cov)
    if init is None:
        init = initial_params(seqs, tracks, variant, link)
    if not init.satisfies(variant):
        raise McmcInitializationError(f"initial parameters use interactions not allowed by {variant.value}")
    init.check_background(tracks)
    seeds = chain_seeds(config.seed, config.chain_count)
    jobs = [(seqs, tracks, variant, prior, config, init, seeds[c], c) for c in range(config.chain_count)]
    workers = config.workers or int(os.environ.get("EXINHAWKES_THREADS", "1"))
    if workers > 1 and config.chain_count > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.chain_count)) as pool:
            parts = list(pool.map(_run_chain, jobs))
    else:
        parts = [_run_chain(job) for job in jobs]
    return PosteriorDraws.concatenate(parts)


def hpd_interval(samples, level: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing ``ceil(level * n)`` of the sorted samples."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise ValidationError("hpd_interval needs at least two samples")
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    m = int(math.ceil(level * n))
    widths = x[m - 1 :] - x[: n - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


def gelman_rubin(chains: Sequence[np.ndarray]) -> float:
    """Potential scale reduction factor for equal-length chains."""
    x = np.asarray([np.asarray(c, dtype=float) for c in chains])
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))
