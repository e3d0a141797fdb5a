"""Simulation-study recipes: consistency, aggregate size and misspecification.

Each preset expands into independent tasks ``(condition, replicate)``.  A task
simulates its own data set from the periodic 3-state fixture (:func:`reference_model`)
using a replicate seed, fits one or more models and returns a flat row.
Replicate seeds are shared across conditions, so e.g. both aggregate-size
factors are fitted to the same data sets.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analysis import decoding_accuracy, viterbi
from .exceptions import ConfigurationError, NumericalError
from .inference import FitOptions, ObservationSeries, fit
from .model import Model, ModelSpec, reference_model
from .simulate import SimulationConfig, replicate_seeds, simulate

log = logging.getLogger(__name__)

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "homogeneous_hsmm_start",
    "hmm_start",
    "run_experiment",
    "misspecification_models",
]

PRESETS = ("consistency", "aggregate-size", "misspecification")
MISSPEC_LABELS = ("inhomogeneous-hsmm", "homogeneous-hsmm", "inhomogeneous-hmm")


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    n_replicates: int = 20
    lengths: tuple[int, ...] = (1000, 5000)
    factors: tuple[float, ...] = (0.5, 0.9)
    reference_factor: float = 1.3
    hmm_degree: int = 1
    seed: int = 0
    jobs: int = 1
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown experiment preset {self.preset!r}; choose from {PRESETS}")
        if self.n_replicates < 1:
            raise ConfigurationError("n_replicates must be >= 1")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if not self.lengths or min(self.lengths) < 2:
            raise ConfigurationError("lengths must be >= 2")
        if not self.factors or min(self.factors) <= 0:
            raise ConfigurationError("factors must be positive")


# ---------------------------------------------------------------------------
# starting values


def homogeneous_hsmm_start(truth: Model) -> tuple[ModelSpec, np.ndarray]:
    """Homogeneous HSMM (constant dwell means and Omega) started at the truth's intercepts."""
    s = truth.spec
    spec = ModelSpec(
        n_states=s.n_states,
        cycle_length=s.cycle_length,
        kind="hsmm",
        dwell_family=s.dwell_family,
        sizes=s.sizes,
    )
    return spec, spec.pack(truth)


def hmm_start(truth: Model, degree: int = 1) -> tuple[ModelSpec, np.ndarray]:
    """Periodic HMM started from the truth's cycle-averaged dwell means and Omega.

    ``gamma_ii = 1 - 1 / mean dwell`` and ``gamma_ij = (1 - gamma_ii) omega_ij``;
    trigonometric terms start at zero.
    """
    s = truth.spec
    N, L = s.n_states, s.cycle_length
    spec = ModelSpec(n_states=N, cycle_length=L, kind="hmm", degree_gamma=degree)
    mean_dwell = np.array([np.mean(np.broadcast_to(d.mean_dwell(), (L,))) for d in truth.dwells])
    stay = 1.0 - 1.0 / mean_dwell
    om = truth.omega_table().mean(axis=0)
    coeffs = np.zeros((N, N, 1 + 2 * degree))
    for i in range(N):
        for j in range(N):
            if i != j:
                coeffs[i, j, 0] = np.log((1.0 - stay[i]) * om[i, j] / stay[i])
    start = Model(spec, emissions=truth.emissions, gamma_coeffs=coeffs)
    return spec, spec.pack(start)


def misspecification_models(truth: Model, hmm_degree: int = 1) -> dict[str, tuple[ModelSpec, np.ndarray]]:
    """The three competing specifications and their starting vectors."""
    return {
        "inhomogeneous-hsmm": (truth.spec, truth.spec.pack(truth)),
        "homogeneous-hsmm": homogeneous_hsmm_start(truth),
        "inhomogeneous-hmm": hmm_start(truth, hmm_degree),
    }


# ---------------------------------------------------------------------------
# tasks


def _data(truth: Model, T: int, seed: int) -> ObservationSeries:
    return simulate(SimulationConfig(truth, T, seed=seed))


def _estimate_row(spec: ModelSpec, fitted, truth_theta: np.ndarray | None) -> dict:
    row = {
        "loglik": fitted.loglik,
        "n_params": fitted.n_params,
        "aic": fitted.aic,
        "bic": fitted.bic,
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "grad_norm": fitted.grad_norm,
    }
    for k, name in enumerate(spec.param_names()):
        row[f"est:{name}"] = float(fitted.theta_hat[k])
        if truth_theta is not None:
            row[f"err:{name}"] = float(fitted.theta_hat[k] - truth_theta[k])
    return row


def _task(args) -> dict:
    preset, cond, rep, seed, cfg = args
    base = {"preset": preset, "replicate": rep, "seed": seed}
    try:
        if preset == "consistency":
            truth = reference_model(factor=cfg.reference_factor)
            data = _data(truth, cond, seed)
            th = truth.spec.pack(truth)
            fm = fit(truth.spec, data, th, cfg.fit_options)
            return {**base, "T": cond, **_estimate_row(truth.spec, fm, th)}
        if preset == "aggregate-size":
            T = cfg.lengths[-1]
            truth = reference_model(factor=cond)
            data = _data(truth, T, seed)
            th = truth.spec.pack(truth)
            fm = fit(truth.spec, data, th, cfg.fit_options)
            return {
                **base, "T": T, "factor": cond, "sizes": " ".join(map(str, truth.spec.sizes)),
                **_estimate_row(truth.spec, fm, th),
            }
        # misspecification
        T = cfg.lengths[-1]
        truth = reference_model(factor=cfg.reference_factor)
        data = _data(truth, T, seed)
        spec, th = misspecification_models(truth, cfg.hmm_degree)[cond]
        fm = fit(spec, data, th, cfg.fit_options)
        dec = viterbi(fm.model, data)
        acc = decoding_accuracy(data.states, dec.states)
        truth_th = th if cond == "inhomogeneous-hsmm" else None
        return {**base, "T": T, "model": cond, "accuracy": acc, **_estimate_row(spec, fm, truth_th)}
    except NumericalError as exc:
        log.warning("task %s/%s/%d failed: %s", preset, cond, rep, exc)
        return {**base, "error": str(exc)}


def _tasks(cfg: ExperimentConfig) -> list[tuple]:
    seeds = replicate_seeds(cfg.seed, cfg.n_replicates)
    if cfg.preset == "consistency":
        conds = list(cfg.lengths)
    elif cfg.preset == "aggregate-size":
        conds = list(cfg.factors)
    else:
        conds = list(MISSPEC_LABELS)
    return [(cfg.preset, c, r + 1, s, cfg) for c in conds for r, s in enumerate(seeds)]


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Run every task of a preset; rows come back in task order."""
    tasks = _tasks(cfg)
    log.info("experiment %s: %d tasks, %d jobs", cfg.preset, len(tasks), cfg.jobs)
    if cfg.jobs == 1 or len(tasks) == 1:
        return [_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(_task, tasks))
