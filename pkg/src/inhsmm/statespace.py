"""Extended state space and structured block transition matrices.

Each semi-Markov state ``i`` is represented by an aggregate of ``N_i``
consecutive extended states.  A sojourn always enters an aggregate in its
lowest state, climbs one state per step, and parks in the top state.  Row
``r`` (1-based) of aggregate ``i`` in the matrix for time of cycle ``t``
uses the hazard ``c_i^(t - r + 1)(r)``: the hazard of the dwell distribution
that was active when the current sojourn was entered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .distributions import DwellSpec, trig_design
from .exceptions import ConfigurationError, DomainError, NumericalError

__all__ = [
    "AggregateLayout",
    "ConditionalTPMSpec",
    "StructuredTPM",
    "omega_at",
    "shifted_hazards",
    "build_structured",
    "build_gamma_homogeneous",
    "build_gamma_t",
    "sizes_from_quantile",
    "sizes_from_factor",
]

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class AggregateLayout:
    """Bookkeeping for state aggregates on the extended space ``{0..M-1}``.

    Offsets are 0-based: aggregate ``i`` occupies ``lower[i] .. upper[i]``.
    """

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ConfigurationError("aggregate sizes must be positive integers")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_states(self) -> int:
        return len(self.sizes)

    @property
    def M(self) -> int:
        return sum(self.sizes)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)

    @cached_property
    def upper(self) -> np.ndarray:
        return (np.cumsum(self.sizes) - 1).astype(np.int64)

    @cached_property
    def _state_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_states, dtype=np.int64), self.sizes)

    def state_of(self) -> np.ndarray:
        """Original state (0-based) for each extended state."""
        return self._state_of

    @cached_property
    def _pattern(self):
        """Index arrays of the nonzero pattern shared by every ``Gamma^(t)``."""
        M = self.M
        m = np.arange(M)
        top = np.isin(m, self.upper)
        stay_cols = np.where(top, m, m + 1)
        src, dst, src_state, dst_state = [], [], [], []
        for j, lo in enumerate(self.lower):
            rows = m[self._state_of != j]
            src.append(rows)
            dst.append(np.full(rows.size, lo))
            src_state.append(self._state_of[rows])
            dst_state.append(np.full(rows.size, j))
        cat = np.concatenate
        return m, stay_cols, cat(src), cat(dst), cat(src_state), cat(dst_state)

    def row_in_aggregate(self) -> np.ndarray:
        """1-based position ``r`` of each extended state inside its aggregate."""
        return np.concatenate([np.arange(1, s + 1) for s in self.sizes])

    def project(self, ext_states) -> np.ndarray:
        return self.state_of()[np.asarray(ext_states, dtype=np.int64)]

    def aggregate_sum(self, v: np.ndarray) -> np.ndarray:
        """Sum an array over the last axis within each aggregate."""
        return np.add.reduceat(v, self.lower, axis=-1)


# ---------------------------------------------------------------------------
# conditional transition probabilities of the embedded chain


@dataclass(frozen=True)
class ConditionalTPMSpec:
    """Multinomial-logit model for the embedded chain's t.p.m.

    ``coeffs[i, j]`` are the trigonometric coefficients of ``eta_ij``.  The
    diagonal is ignored, and so is the reference entry of each row (the
    lowest ``j != i``), which is pinned at ``eta = 0`` for identifiability.
    """

    coeffs: np.ndarray  # (N, N, 1 + 2K)
    degree: int = 0
    cycle_length: int = 1

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == 2:
            c = c[:, :, None]
        if c.ndim != 3 or c.shape[0] != c.shape[1]:
            raise ConfigurationError("coeffs must have shape (N, N, 1 + 2K)")
        if c.shape[0] < 2:
            raise ConfigurationError("the embedded chain needs N >= 2 states")
        if c.shape[2] != 1 + 2 * self.degree:
            raise ConfigurationError("coefficient depth does not match degree")
        c = c.copy()
        for i in range(c.shape[0]):
            c[i, i] = 0.0
            c[i, self.reference(i)] = 0.0
        object.__setattr__(self, "coeffs", c)

    @property
    def n_states(self) -> int:
        return self.coeffs.shape[0]

    @staticmethod
    def reference(i: int) -> int:
        return 1 if i == 0 else 0

    def free_pairs(self) -> list[tuple[int, int]]:
        N = self.n_states
        return [(i, j) for i in range(N) for j in range(N) if j != i and j != self.reference(i)]

    @classmethod
    def from_matrix(cls, omega, cycle_length: int = 1) -> "ConditionalTPMSpec":
        """Homogeneous spec whose ``Omega`` equals ``omega`` (log-ratio logits)."""
        omega = np.asarray(omega, dtype=float)
        N = omega.shape[0]
        if N < 2:
            raise ConfigurationError("the embedded chain needs N >= 2 states")
        c = np.zeros((N, N, 1))
        for i in range(N):
            ref = cls.reference(i)
            for j in range(N):
                if j != i:
                    c[i, j, 0] = np.log(omega[i, j]) - np.log(omega[i, ref])
        return cls(c, 0, cycle_length)

    def logits(self) -> np.ndarray:
        """``eta_ij^(t)`` for ``t = 1..L``, shape ``(L, N, N)``; diagonal is ``-inf``."""
        X = trig_design(self.degree, self.cycle_length)
        eta = np.einsum("tk,ijk->tij", X, self.coeffs)
        idx = np.arange(self.n_states)
        eta[:, idx, idx] = -np.inf
        return eta

    def table(self) -> np.ndarray:
        """``Omega^(t)`` for ``t = 1..L``, shape ``(L, N, N)``."""
        eta = self.logits()
        eta = eta - eta.max(axis=2, keepdims=True)
        w = np.exp(eta)
        return w / w.sum(axis=2, keepdims=True)


def omega_at(spec: ConditionalTPMSpec, t: int) -> np.ndarray:
    """Conditional t.p.m. ``Omega^(t)`` at time of cycle ``t``."""
    if not 1 <= t <= spec.cycle_length:
        raise DomainError(f"time of cycle {t} outside 1..{spec.cycle_length}")
    return spec.table()[t - 1]


# ---------------------------------------------------------------------------
# extended transition matrices


def shifted_hazards(layout: AggregateLayout, dwells: list[DwellSpec], L: int) -> np.ndarray:
    """Time-shifted hazards for every extended state, shape ``(L, M)``.

    Entry ``[t-1, m]`` for the ``r``-th state of aggregate ``i`` is
    ``c_i^(t - r + 1)(r)`` with the time index wrapped into ``1..L``.
    """
    if len(dwells) != layout.n_states:
        raise ConfigurationError("need one dwell spec per state")
    H = np.empty((L, layout.M))
    t0 = np.arange(L)
    for i, (d, lo, n) in enumerate(zip(dwells, layout.lower, layout.sizes)):
        if d.cycle_length not in (1, L):
            raise ConfigurationError(f"dwell spec {i} has cycle length {d.cycle_length}, model has {L}")
        tab = d.hazard_table(n)  # (L_d, n)
        if tab.shape[0] == 1:
            H[:, lo:lo + n] = tab[0]
            continue
        for r in range(1, n + 1):
            H[:, lo + r - 1] = tab[(t0 - r + 1) % L, r - 1]
    return H


@dataclass(frozen=True)
class StructuredTPM:
    """Compact form of the extended matrices ``Gamma^(1..L)``.

    ``hazards[t, m]`` is the exit probability from extended state ``m`` in
    the matrix for time of cycle ``t + 1``; ``omega[t]`` is the conditional
    t.p.m. used for the exit.
    """

    layout: AggregateLayout
    hazards: np.ndarray  # (L, M)
    omega: np.ndarray  # (L, N, N)

    @property
    def cycle_length(self) -> int:
        return self.hazards.shape[0]

    def dense_at(self, t: int) -> np.ndarray:
        """Dense ``M x M`` matrix for time of cycle ``t`` (1-based)."""
        return self._dense(slice(t - 1, t))[0]

    def dense(self) -> np.ndarray:
        """All matrices, shape ``(L, M, M)``."""
        gam = self._dense(slice(None))
        _check_rows(gam)
        return gam

    def _dense(self, sl) -> np.ndarray:
        lay = self.layout
        h = self.hazards[sl]
        om = self.omega[sl]
        m, stay_cols, src, dst, si, sj = lay._pattern
        G = np.zeros((h.shape[0], lay.M, lay.M))
        G[:, m, stay_cols] = 1.0 - h
        if src.size:
            G[:, src, dst] = om[:, si, sj] * h[:, src]
        return G


def _check_rows(gam: np.ndarray) -> None:
    dev = np.abs(gam.sum(axis=-1) - 1.0).max()
    if not dev <= ROW_SUM_TOL:
        raise NumericalError(f"extended t.p.m. row sums deviate from 1 by {dev:.3g}")


def build_structured(
    layout: AggregateLayout,
    dwells: list[DwellSpec],
    omega_spec: ConditionalTPMSpec | np.ndarray,
    cycle_length: int | None = None,
) -> StructuredTPM:
    if isinstance(omega_spec, ConditionalTPMSpec):
        L = cycle_length or max([omega_spec.cycle_length] + [d.cycle_length for d in dwells])
        om = omega_spec.table()
        if om.shape[0] == 1 and L > 1:
            om = np.broadcast_to(om, (L,) + om.shape[1:]).copy()
    else:
        L = cycle_length or max(d.cycle_length for d in dwells)
        om = np.broadcast_to(np.asarray(omega_spec, dtype=float), (L, layout.n_states, layout.n_states)).copy()
    if layout.n_states == 1:
        om = np.zeros((L, 1, 1))
    elif om.shape != (L, layout.n_states, layout.n_states):
        raise ConfigurationError("omega does not match the number of states or cycle length")
    H = shifted_hazards(layout, dwells, L)
    if layout.n_states == 1:
        # a single state never leaves
        H = np.zeros_like(H)
    return StructuredTPM(layout, H, om)


def build_structured_sequence(layout: AggregateLayout, hazard_tables, omega) -> StructuredTPM:
    """Extended matrices for a general (non-periodic) covariate series of length ``T``.

    ``hazard_tables[i][t - 1, r - 1]`` is ``c_i^(t)(r)`` for a sojourn in
    state ``i`` entered at time ``t``; ``omega`` is ``(T, N, N)`` or a fixed
    ``(N, N)`` matrix.  Time indices are not wrapped: rows with ``t - r + 1 < 1``
    use the hazard of time 1, and are unreachable when the series starts with
    a state switch.  The result has ``cycle_length == T``; periodic analytics
    do not apply to it.
    """
    N = layout.n_states
    if len(hazard_tables) != N:
        raise ConfigurationError("need one hazard table per state")
    tabs = [np.atleast_2d(np.asarray(h, dtype=float)) for h in hazard_tables]
    T = tabs[0].shape[0]
    H = np.empty((T, layout.M))
    t0 = np.arange(T)
    for i, (h, lo, n) in enumerate(zip(tabs, layout.lower, layout.sizes)):
        if h.shape[0] != T or h.shape[1] < n:
            raise ConfigurationError(f"hazard table {i} must have shape ({T}, >= {n})")
        if np.any((h < 0) | (h > 1)) or not np.all(np.isfinite(h)):
            raise DomainError(f"hazard table {i} has entries outside [0, 1]")
        for r in range(1, n + 1):
            H[:, lo + r - 1] = h[np.maximum(t0 - r + 1, 0), r - 1]
    om = np.asarray(omega, dtype=float)
    if om.ndim == 2:
        om = np.broadcast_to(om, (T, N, N)).copy()
    if om.shape != (T, N, N):
        raise ConfigurationError("omega does not match the number of states or series length")
    if N == 1:
        H[:] = 0.0
        om = np.zeros((T, 1, 1))
    return StructuredTPM(layout, H, om)


def build_gamma_homogeneous(layout: AggregateLayout, dwells: list[DwellSpec], omega) -> np.ndarray:
    """Single extended t.p.m. for homogeneous dwell distributions."""
    if any(d.cycle_length != 1 for d in dwells):
        raise ConfigurationError("homogeneous build needs dwell specs with cycle length 1")
    om = omega_at(omega, 1) if isinstance(omega, ConditionalTPMSpec) else np.asarray(omega, float)
    return build_structured(layout, dwells, om, 1).dense()[0]


def build_gamma_t(
    layout: AggregateLayout,
    dwells: list[DwellSpec],
    omega_spec: ConditionalTPMSpec,
    t: int,
    cycle_length: int | None = None,
) -> np.ndarray:
    """Extended t.p.m. ``Gamma^(t)``; ``t`` may be any integer and is reduced mod ``L``."""
    st = build_structured(layout, dwells, omega_spec, cycle_length)
    L = st.cycle_length
    G = st.dense_at((t - 1) % L + 1)
    _check_rows(G)
    return G


# ---------------------------------------------------------------------------
# aggregate sizing


def sizes_from_quantile(dwells: list[DwellSpec], q: float = 0.975, cap: int = 200) -> tuple[int, ...]:
    """Smallest ``n`` per state with ``min_t F^(t)(n) >= q``, capped at ``cap``."""
    return tuple(int(min(d.quantile(q, cap).max(), cap)) for d in dwells)


def sizes_from_factor(
    dwells: list[DwellSpec], factor: float, q: float = 0.995, cap: int = 500
) -> tuple[int, ...]:
    """``ceil(factor * quantile)`` where the quantile is taken at the largest mean of each state."""
    out = []
    for d in dwells:
        qq = int(d.quantile(q, cap).max())
        out.append(max(1, min(cap, math.ceil(factor * qq - 1e-9))))
    return tuple(out)
