"""Compiled inner loops shared by the likelihood, sampler and simulator."""

import numpy as np
from numba import njit


@njit(cache=True)
def knot_states(knots, event_knot, event_marks, scales):
    """Exponentially decayed event counts per source mark at each knot.

    Row ``j`` holds ``sum_{t_i <= knots[j], m_i = l} exp(-(knots[j] - t_i) / scales[l])``,
    i.e. the right limit at the knot (events located on the knot are included).
    """
    n_knots = knots.shape[0]
    K = scales.shape[0]
    out = np.zeros((n_knots, K))
    state = np.zeros(K)
    e = 0
    n_events = event_knot.shape[0]
    for j in range(n_knots):
        if j > 0:
            dt = knots[j] - knots[j - 1]
            for l in range(K):
                state[l] *= np.exp(-dt / scales[l])
        while e < n_events and event_knot[e] == j:
            state[event_marks[e]] += 1.0
            e += 1
        for l in range(K):
            out[j, l] = state[l]
    return out


@njit(cache=True)
def knot_state_single(knots, event_knot, source_mask, scale):
    """``knot_states`` for one source mark; ``source_mask[e]`` selects its events."""
    n_knots = knots.shape[0]
    out = np.zeros(n_knots)
    state = 0.0
    e = 0
    n_events = event_knot.shape[0]
    for j in range(n_knots):
        if j > 0:
            state *= np.exp(-(knots[j] - knots[j - 1]) / scale)
        while e < n_events and event_knot[e] == j:
            if source_mask[e]:
                state += 1.0
            e += 1
        out[j] = state
    return out


@njit(cache=True)
def last_of_mark(marks, K):
    """``out[i, l]``: index of the last event of mark ``l`` strictly before ``i``, or -1."""
    n = marks.shape[0]
    out = np.empty((n, K), dtype=np.int64)
    last = np.full(K, -1, dtype=np.int64)
    for i in range(n):
        for l in range(K):
            out[i, l] = last[l]
        last[marks[i]] = i
    return out


@njit(cache=True)
def previous_same_mark(marks, K):
    n = marks.shape[0]
    out = np.empty(n, dtype=np.int64)
    last = np.full(K, -1, dtype=np.int64)
    for i in range(n):
        out[i] = last[marks[i]]
        last[marks[i]] = i
    return out


@njit(cache=True)
def sample_parents(times, marks, targets, alpha, eta, mu_events, left_states, last_before, prev_same, uniforms):
    """Draw the latent parent of each event in ``targets`` (-1 for the background).

    Parent weights are ``mu`` for the background and
    ``alpha[m_j, m_i] / eta[m_j] * exp(-(t_i - t_j) / eta[m_j])`` for earlier
    events.  The source mark is chosen first from ``left_states`` (decayed
    counts just before each event), then the walk goes back through events of
    that mark only, so its expected length is about ``eta * rate``.
    """
    K = eta.shape[0]
    out = np.empty(targets.shape[0], dtype=np.int64)
    for idx in range(targets.shape[0]):
        i = targets[idx]
        mi = marks[i]
        total = mu_events[i]
        for l in range(K):
            total += alpha[l, mi] / eta[l] * left_states[i, l]
        u = uniforms[idx] * total
        parent = -1
        if u >= mu_events[i]:
            acc = mu_events[i]
            src = -1
            for l in range(K):
                w = alpha[l, mi] / eta[l] * left_states[i, l]
                if w > 0.0:
                    src = l
                    if u < acc + w:
                        break
                    acc += w
            if src >= 0:
                # remaining mass in units of decayed counts of mark src
                r = (u - acc) / (alpha[src, mi] / eta[src])
                j = last_before[i, src]
                s = 0.0
                while j >= 0:
                    parent = j
                    s += np.exp(-(times[i] - times[j]) / eta[src])
                    if r < s:
                        break
                    j = prev_same[j]
        out[idx] = parent
    return out
