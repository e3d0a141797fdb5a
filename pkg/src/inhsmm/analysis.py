"""Decoding, overall dwell-time distributions and empirical dwell diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import DataError, UnsupportedOperation
from .inference import ObservationSeries, initial_distribution, periodic_stationary, state_log_densities
from .model import Model

__all__ = [
    "DecodedSequence",
    "DwellDistributionSummary",
    "RunLengthSummary",
    "viterbi",
    "entry_weights",
    "overall_dwell",
    "run_length_encode",
    "decoding_accuracy",
    "total_variation",
]


@dataclass(frozen=True, eq=False)
class DecodedSequence:
    """Most probable path; both sequences are 1-based."""

    extended_states: np.ndarray
    states: np.ndarray
    log_prob: float


def viterbi(model: Model, data: ObservationSeries, delta: np.ndarray | None = None) -> DecodedSequence:
    """Globally most probable extended-state path (ties to the lower index)."""
    L = model.cycle_length
    tod = ((data.tod - 1) % L).astype(np.int64)
    if delta is None:
        delta = initial_distribution(model, int(tod[0]) + 1)
    logdens = np.ascontiguousarray(state_log_densities(model, data))
    with np.errstate(divide="ignore"):
        lg = np.log(model.gammas)
        ld = np.log(np.asarray(delta, dtype=float))
    lay = model.layout
    path, lp = _kernels.viterbi_dense(
        np.ascontiguousarray(lg), lay.state_of().astype(np.int64), logdens, tod, ld
    )
    return DecodedSequence(path + 1, lay.project(path) + 1, float(lp))


# ---------------------------------------------------------------------------
# overall dwell-time distribution


@dataclass(frozen=True, eq=False)
class DwellDistributionSummary:
    """Overall dwell-time distribution per state as a mixture over entry times.

    ``pmf[i][r - 1]`` is ``d_i(r)`` for ``r = 1..sizes[i]``; ``weights[i]`` are
    the entry-time mixture weights ``v_i^(t)``, ``t = 1..L``; ``tail[i]`` is
    the mass beyond ``sizes[i]``; ``mean[i]`` is the mixture mean of the full
    (untruncated) dwell distributions.
    """

    pmf: list[np.ndarray]
    weights: np.ndarray  # (N, L)
    tail: np.ndarray
    mean: np.ndarray
    sizes: tuple[int, ...]

    @property
    def common_support(self) -> int:
        return min(self.sizes)


def entry_weights(model: Model, delta: np.ndarray | None = None) -> np.ndarray:
    """Entry-time weights ``v_i^(t)`` of shape ``(N, L)``.

    ``v_i^(t)`` is proportional to the periodically stationary probability of
    entering aggregate ``i`` at time ``t``, i.e. of sitting outside it at
    ``t - 1`` and jumping to its entry state with ``Gamma^(t - 1)``.
    """
    G = model.gammas
    L = G.shape[0]
    if delta is None:
        delta = periodic_stationary(G)
    lay = model.layout
    state_of = lay.state_of()
    N = lay.n_states
    w = np.empty((N, L))
    for t in range(L):
        prev = (t - 1) % L
        for i in range(N):
            outside = state_of != i
            w[i, t] = delta[prev, outside] @ G[prev][outside, lay.lower[i]]
    tot = w.sum(axis=1, keepdims=True)
    return w / tot


def overall_dwell(model: Model, rmax_mean: int = 2000) -> DwellDistributionSummary:
    """Overall dwell-time distribution of a periodic model, for ``r <= N_i``.

    For ``hmm`` models (``N_i = 1``) the dwell pmf given the entry time is
    exact for every ``r``, so the support is extended to ``rmax_mean``.
    """
    if not isinstance(model, Model):
        raise UnsupportedOperation("overall dwell-time distributions need a periodic model")
    lay = model.layout
    N = lay.n_states
    v = entry_weights(model)
    surf = model.dwell_pmf_surface(rmax_mean)  # (N, L, rmax)
    if model.spec.kind == "hmm":
        sizes = (rmax_mean,) * N
    else:
        sizes = lay.sizes
    pmf, tail, mean = [], np.empty(N), np.empty(N)
    r = np.arange(1, rmax_mean + 1)
    for i in range(N):
        full = v[i] @ surf[i]  # mixture over entry times, r = 1..rmax_mean
        pmf.append(full[: sizes[i]].copy())
        tail[i] = max(0.0, 1.0 - pmf[i].sum())
        if model.spec.kind == "hsmm":
            mean[i] = float(v[i] @ np.broadcast_to(model.dwells[i].mean_dwell(), (model.cycle_length,)))
        else:
            mean[i] = float(full @ r)
    return DwellDistributionSummary(pmf, v, tail, mean, tuple(sizes))


# ---------------------------------------------------------------------------
# empirical dwell times


@dataclass(frozen=True, eq=False)
class RunLengthSummary:
    """Runs of a state sequence and per-state empirical dwell distributions.

    ``counts[s][r - 1]`` counts uncensored runs of state ``s`` with length
    ``r``; ``pmf`` is the normalised version.
    """

    runs: np.ndarray  # (n_runs, 2): state, length
    counts: dict
    pmf: dict

    def mean(self, state) -> float:
        c = self.counts.get(state)
        if c is None or c.sum() == 0:
            return np.nan
        return float(np.arange(1, c.size + 1) @ c / c.sum())


def run_length_encode(states, censor: bool = True) -> RunLengthSummary:
    """Collapse a state sequence into runs; boundary runs are dropped if ``censor``."""
    s = np.asarray(states)
    if s.size == 0:
        raise DataError("empty state sequence")
    starts = np.flatnonzero(np.concatenate([[True], s[1:] != s[:-1]]))
    lengths = np.diff(np.concatenate([starts, [s.size]]))
    runs = np.column_stack([s[starts], lengths])
    used = runs[1:-1] if censor else runs
    counts, pmf = {}, {}
    for st in np.unique(s):
        ln = used[used[:, 0] == st, 1]
        c = np.bincount(ln, minlength=1)[1:] if ln.size else np.zeros(0, dtype=np.int64)
        counts[st.item()] = c
        pmf[st.item()] = c / c.sum() if c.sum() else c.astype(float)
    if used.shape[0] == 0:
        warnings.warn("no uncensored runs: empirical dwell distribution is empty", RuntimeWarning)
    return RunLengthSummary(runs, counts, pmf)


def decoding_accuracy(truth, decoded) -> float:
    t = np.asarray(truth)
    d = np.asarray(decoded)
    if t.shape != d.shape:
        raise DataError(f"length mismatch: {t.size} true vs {d.size} decoded states")
    return float(np.mean(t == d))


def total_variation(p, q) -> float:
    """Total-variation distance between two pmfs on ``1, 2, ...`` (zero-padded)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return 0.5 * float(np.abs(p - q).sum() + abs((1 - p.sum()) - (1 - q.sum())))
