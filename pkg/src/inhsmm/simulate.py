"""Simulation of semi-Markov state sequences and movement observations.

The generator is NumPy's PCG64 (``numpy.random.default_rng``).  States and
observations draw from separate streams derived from the seed with
``SeedSequence.spawn``, so the same ``(model, T, seed, burn_in)`` gives
bit-identical output.  Replicate seeds come from :func:`replicate_seeds`.

Conventions:

* a sojourn entered at time of cycle ``t`` draws its length from ``d_i^(t)``;
* the next state is drawn from row ``i`` of ``Omega^(t')`` where ``t'`` is
  the time of cycle of the last step spent in ``i``;
* shifted families draw a base variate ``k >= 0`` and set ``r = k + 1``;
* gamma steps use ``shape = mean^2 / sd^2`` and ``scale = sd^2 / mean``;
  von Mises angles use NumPy's rejection sampler, wrapped into ``(-pi, pi]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import NB_POISSON_SWITCH, DwellFamily, EmissionSpec, wrap_angle
from .exceptions import ConfigurationError
from .inference import ObservationSeries, periodic_stationary
from .model import Model

__all__ = [
    "SimulationConfig",
    "StateSimulation",
    "simulate_states",
    "simulate_observations",
    "simulate",
    "replicate_seeds",
]


@dataclass(frozen=True)
class SimulationConfig:
    model: Model
    length: int
    seed: int = 0
    burn_in: int | None = None  # default 10 * L
    record_truth: bool = True
    start_tod: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ConfigurationError("simulation length must be >= 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ConfigurationError("burn_in must be >= 0")
        if not 1 <= self.start_tod <= self.model.cycle_length:
            raise ConfigurationError("start_tod outside the cycle")

    @property
    def effective_burn_in(self) -> int:
        return 10 * self.model.cycle_length if self.burn_in is None else self.burn_in


@dataclass(frozen=True, eq=False)
class StateSimulation:
    """Simulated states (1-based) with their time of cycle and sojourn ids.

    ``sojourns`` rows are ``(state, entry_tod, length)`` for every sojourn that
    overlaps the recorded window; the first may be left-truncated by burn-in
    and the last right-truncated by ``T``.
    """

    states: np.ndarray
    tod: np.ndarray
    sojourn_id: np.ndarray
    sojourns: np.ndarray


def replicate_seeds(seed: int, n: int) -> list[int]:
    """Independent per-replicate seeds: ``SeedSequence(seed).spawn(n)``, first 32-bit word."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _streams(seed: int):
    ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.Generator(np.random.PCG64(ss[0])), np.random.Generator(np.random.PCG64(ss[1]))


def _draw_dwell(rng, family: DwellFamily, mu: float, phi: float) -> int:
    if family is DwellFamily.GEOMETRIC:
        return int(rng.geometric(1.0 / (1.0 + mu)))
    if family is DwellFamily.SHIFTED_NEGBINOM and phi >= NB_POISSON_SWITCH:
        n = 1.0 / phi
        return int(rng.negative_binomial(n, 1.0 / (1.0 + mu * phi))) + 1
    return int(rng.poisson(mu)) + 1


def simulate_states(cfg: SimulationConfig, rng: np.random.Generator | None = None) -> StateSimulation:
    """Semi-Markov state sequence of length ``cfg.length``."""
    model = cfg.model
    if rng is None:
        rng = _streams(cfg.seed)[0]
    L = model.cycle_length
    N = model.spec.n_states
    burn = cfg.effective_burn_in
    total = burn + cfg.length
    t_first = (cfg.start_tod - 1 - burn) % L  # 0-based tod of the first (burn-in) row
    tod0 = (t_first + np.arange(total)) % L

    # initial state from the aggregate-projected periodic stationary distribution
    if N == 1:
        p0 = np.ones(1)
    else:
        delta = periodic_stationary(model.gammas)[t_first]
        p0 = model.layout.aggregate_sum(delta)
    p0 = np.clip(p0, 0, None)
    state = int(np.searchsorted(np.cumsum(p0) / p0.sum(), rng.random(), side="right"))
    state = min(state, N - 1)

    states = np.empty(total, dtype=np.int64)
    sid = np.empty(total, dtype=np.int64)
    if model.spec.kind == "hmm":
        cum = np.cumsum(model.gammas, axis=2)
        for k in range(total):
            states[k] = state
            if k + 1 < total:
                state = min(int(np.searchsorted(cum[tod0[k], state], rng.random(), side="right")), N - 1)
        sid = np.concatenate([[0], np.cumsum(states[1:] != states[:-1])])
    else:
        fam = DwellFamily(model.spec.dwell_family)
        means = np.stack([np.broadcast_to(d.base_means(), (L,)) for d in model.dwells])
        disps = np.stack([np.broadcast_to(d.dispersions(), (L,)) for d in model.dwells])
        om_cum = np.cumsum(model.omega_table(), axis=2) if N > 1 else None
        k = 0
        n_soj = 0
        while k < total:
            t = tod0[k]
            r = _draw_dwell(rng, fam, means[state, t], disps[state, t]) if N > 1 else total
            end = min(k + r, total)
            states[k:end] = state
            sid[k:end] = n_soj
            n_soj += 1
            k += r
            if k < total:
                row = om_cum[tod0[k - 1], state]
                state = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), N - 1)

    states = states[burn:]
    sid = sid[burn:]
    sid = sid - sid[0]
    tod = tod0[burn:] + 1
    # sojourn table over the recorded window
    starts = np.flatnonzero(np.concatenate([[True], sid[1:] != sid[:-1]]))
    lengths = np.diff(np.concatenate([starts, [states.size]]))
    soj = np.column_stack([states[starts] + 1, tod[starts], lengths])
    return StateSimulation(states + 1, tod, sid + 1, soj)


def simulate_observations(
    states,
    emissions: EmissionSpec,
    seed: int | np.random.Generator = 0,
    tod=None,
    cycle_length: int = 1,
    missing=None,
) -> ObservationSeries:
    """Draw step lengths and turning angles given 1-based states."""
    rng = seed if isinstance(seed, np.random.Generator) else _streams(int(seed))[1]
    s = np.asarray(states, dtype=np.int64) - 1
    T = s.size
    mean = emissions.step_mean[s]
    sd = emissions.step_sd[s]
    shape = mean**2 / sd**2
    scale = sd**2 / mean
    step = rng.gamma(shape, scale)
    angle = wrap_angle(rng.vonmises(emissions.angle_mean[s], emissions.angle_kappa[s]))
    angle = np.atleast_1d(angle)
    if missing is not None:
        step[missing] = np.nan
        angle[missing] = np.nan
    if tod is None:
        tod = (np.arange(T) % cycle_length) + 1
    return ObservationSeries(tod, step, angle, cycle_length, states=s + 1)


def simulate(cfg: SimulationConfig, missing=None) -> ObservationSeries:
    """States and observations in one go; truth columns kept if ``record_truth``."""
    rs, ro = _streams(cfg.seed)
    sim = simulate_states(cfg, rs)
    obs = simulate_observations(sim.states, cfg.model.emissions, ro, sim.tod, cfg.model.cycle_length, missing)
    if not cfg.record_truth:
        return ObservationSeries(obs.tod, obs.step, obs.angle, obs.cycle_length)
    return ObservationSeries(obs.tod, obs.step, obs.angle, obs.cycle_length, sim.states, sim.sojourn_id)
