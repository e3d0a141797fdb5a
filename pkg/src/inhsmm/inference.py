"""Forward-algorithm likelihood, (periodic) stationary distributions and ML fitting."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .distributions import EmissionFeatures, EmissionSpec
from .exceptions import ConfigurationError, DataError, NumericalError
from .model import Model, ModelSpec
from .statespace import StructuredTPM

__all__ = [
    "ObservationSeries",
    "FitOptions",
    "FittedModel",
    "stationary",
    "periodic_stationary",
    "initial_distribution",
    "state_log_densities",
    "forward_loglik",
    "loglik_theta",
    "fd_gradient",
    "fd_hessian",
    "fit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ObservationSeries:
    """Bivariate movement observations on a regular time grid.

    ``tod`` is the 1-based time of cycle of each row; missing step lengths or
    turning angles are NaN.  ``states`` optionally holds the true (1-based)
    states of simulated data.
    """

    tod: np.ndarray
    step: np.ndarray
    angle: np.ndarray
    cycle_length: int = 1
    states: np.ndarray | None = None
    sojourn: np.ndarray | None = None

    def __post_init__(self):
        tod = np.asarray(self.tod, dtype=np.int64)
        step = np.asarray(self.step, dtype=float)
        angle = np.asarray(self.angle, dtype=float)
        if not (tod.ndim == step.ndim == angle.ndim == 1) or not (tod.size == step.size == angle.size):
            raise DataError("tod, step and angle must be 1-d arrays of equal length")
        if tod.size == 0:
            raise DataError("empty observation series")
        L = self.cycle_length
        if tod.min() < 1 or tod.max() > L:
            raise DataError(f"time of cycle must lie in 1..{L}")
        jumps = np.flatnonzero((tod[1:] - tod[:-1]) % L != 1 % L)
        if jumps.size:
            raise DataError(
                f"time of cycle does not advance by one at row {int(jumps[0]) + 2}; "
                "expand gaps into missing rows"
            )
        ok = np.isnan(step) | (step > 0)
        if not ok.all():
            raise DataError(f"step length must be > 0 or missing (row {int(np.flatnonzero(~ok)[0]) + 1})")
        for name, v in (("tod", tod), ("step", step), ("angle", angle)):
            object.__setattr__(self, name, v)
        if self.states is not None:
            object.__setattr__(self, "states", np.asarray(self.states, dtype=np.int64))

    @cached_property
    def features(self) -> EmissionFeatures:
        return EmissionFeatures.from_arrays(self.step, self.angle)

    def __len__(self) -> int:
        return self.tod.size

    @property
    def n_observed(self) -> int:
        """Rows with at least one observed component."""
        return int(np.sum(~(np.isnan(self.step) & np.isnan(self.angle))))

    def slice(self, start: int, stop: int) -> "ObservationSeries":
        def cut(a):
            return None if a is None else a[start:stop]

        return ObservationSeries(
            self.tod[start:stop], self.step[start:stop], self.angle[start:stop],
            self.cycle_length, cut(self.states), cut(self.sojourn),
        )

    def with_missing(self, rows) -> "ObservationSeries":
        step = self.step.copy()
        angle = self.angle.copy()
        step[rows] = np.nan
        angle[rows] = np.nan
        return ObservationSeries(self.tod, step, angle, self.cycle_length, self.states, self.sojourn)


# ---------------------------------------------------------------------------
# stationary distributions


def _closed_classes(P: np.ndarray) -> int:
    adj = csr_matrix(P > 0)
    n, labels = connected_components(adj, directed=True, connection="strong")
    rows, cols = adj.nonzero()
    leaving = labels[rows] != labels[cols]
    open_ = np.zeros(n, dtype=bool)
    open_[labels[rows[leaving]]] = True
    return int(n - open_.sum())


def stationary(gamma: np.ndarray, tol: float = 1e-10, check: bool = True) -> np.ndarray:
    """Stationary distribution of a row-stochastic matrix.

    Solves ``delta (Gamma - I) = 0`` with one balance equation replaced by
    ``sum(delta) = 1``; falls back to power iteration if that fails.  With
    ``check=True`` a chain with more than one closed class is rejected
    up front.
    """
    G = np.asarray(gamma, dtype=float)
    M = G.shape[0]
    if G.shape != (M, M):
        raise ConfigurationError("gamma must be square")
    if M == 1:
        return np.ones(1)
    if check and _closed_classes(G) != 1:
        raise NumericalError(
            "transition matrix is reducible (several closed classes); the stationary "
            "distribution is not unique - use a non-stationary initial distribution"
        )
    A = G.T - np.eye(M)
    A[-1, :] = 1.0
    b = np.zeros(M)
    b[-1] = 1.0
    delta = None
    try:
        delta = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        pass
    if delta is None or not _is_stationary(delta, G, tol):
        delta = _power_iteration(G, tol)
    delta = np.clip(delta, 0.0, None)
    delta /= delta.sum()
    if not _is_stationary(delta, G, tol):
        raise NumericalError(
            "could not solve for the stationary distribution (ill-conditioned system); "
            "consider regularising the model or a non-stationary initial distribution"
        )
    return delta


def _is_stationary(delta, G, tol) -> bool:
    return bool(
        np.all(np.isfinite(delta))
        and delta.min() > -tol
        and abs(delta.sum() - 1.0) < tol
        and np.abs(delta @ G - delta).max() < tol
    )


def _power_iteration(G: np.ndarray, tol: float, maxiter: int = 100_000) -> np.ndarray:
    M = G.shape[0]
    # lazy chain removes periodicity without changing the fixed point
    P = 0.5 * (G + np.eye(M))
    d = np.full(M, 1.0 / M)
    for _ in range(maxiter):
        nd = d @ P
        if np.abs(nd - d).max() < tol * 1e-2:
            return nd
        d = nd
    return d


def periodic_stationary(gammas: np.ndarray, method: str = "propagate") -> np.ndarray:
    """Periodically stationary distributions ``delta^(1..L)``, shape ``(L, M)``.

    ``delta^(t)`` is the stationary distribution of the cycle product
    ``Gamma^(t) Gamma^(t+1) ... Gamma^(t+L-1)``.  With ``method="propagate"``
    only ``delta^(1)`` is solved for and the rest follow from
    ``delta^(t+1) = delta^(t) Gamma^(t)``; ``method="solve"`` solves each
    cycle product separately.
    """
    gammas = np.asarray(gammas, dtype=float)
    if gammas.ndim == 2:
        gammas = gammas[None]
    L, M, _ = gammas.shape
    out = np.empty((L, M))
    if method == "solve":
        for t in range(L):
            out[t] = stationary(_cycle_product(gammas, t))
        return out
    if method != "propagate":
        raise ConfigurationError(f"unknown method {method!r}")
    out[0] = stationary(_cycle_product(gammas, 0))
    for t in range(1, L):
        d = out[t - 1] @ gammas[t - 1]
        out[t] = d / d.sum()
    return out


def _cycle_product(gammas: np.ndarray, t0: int) -> np.ndarray:
    L = gammas.shape[0]
    P = gammas[t0].copy()
    for k in range(1, L):
        P = P @ gammas[(t0 + k) % L]
    return P


def initial_distribution(
    model: Model, t1: int = 1, mode: str = "stationary", check: bool = True
) -> np.ndarray:
    """Initial distribution over the extended space for a series starting at ``t1``.

    ``mode="stationary"`` gives the (periodically) stationary distribution at
    ``t1``; ``mode="switch"`` assumes a state switch just before the first
    observation and puts mass ``1/N`` on the entry state of each aggregate.
    """
    lay = model.layout
    if mode == "switch":
        d = np.zeros(lay.M)
        d[lay.lower] = 1.0 / lay.n_states
        return d
    if mode != "stationary":
        raise ConfigurationError(f"unknown initial distribution mode {mode!r}")
    L = model.cycle_length
    if not 1 <= t1 <= L:
        raise ConfigurationError(f"t1={t1} outside 1..{L}")
    G = model.gammas
    if L == 1:
        return stationary(G[0], check=check)
    return stationary(_cycle_product(G, t1 - 1), check=check)


# ---------------------------------------------------------------------------
# likelihood


def state_log_densities(model: Model, data: ObservationSeries) -> np.ndarray:
    """Per-row, per-state emission log densities, ``(T, N)``; missing rows are 0."""
    return _emission_log_densities(model.emissions, data)


def _emission_log_densities(emissions: EmissionSpec, data: ObservationSeries) -> np.ndarray:
    ld = emissions.log_density_features(data.features)
    bad = ~np.isfinite(ld)
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0]) + 1
        raise DataError(f"non-finite state-dependent density at row {row}")
    return ld


def emission_scaled(model: Model, data: ObservationSeries) -> tuple[np.ndarray, np.ndarray]:
    """Row-scaled emission densities and their log scale factors."""
    return _kernels.scaled_densities(np.ascontiguousarray(state_log_densities(model, data)))


def _check_cycle(model: Model, data: ObservationSeries) -> None:
    if data.cycle_length != model.cycle_length and model.cycle_length != 1:
        raise ConfigurationError(
            f"data cycle length {data.cycle_length} differs from model cycle length {model.cycle_length}"
        )


def forward_loglik(
    model: Model,
    data: ObservationSeries,
    delta: np.ndarray | None = None,
    dense: bool = False,
    check: bool = True,
    scaled: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Log-likelihood via the scaled forward algorithm on the extended state space.

    ``delta`` defaults to :func:`initial_distribution` at the first row's time
    of cycle.  Missing observations contribute identity emission factors.
    Returns ``-inf`` (with a warning) if the forward mass vanishes.
    ``scaled`` optionally supplies precomputed ``scaled_densities`` output.
    """
    _check_cycle(model, data)
    L = model.cycle_length
    tod = ((data.tod - 1) % L).astype(np.int64)
    if delta is None:
        delta = initial_distribution(model, int(tod[0]) + 1, check=check)
    delta = np.ascontiguousarray(delta, dtype=float)
    if scaled is None:
        scaled = emission_scaled(model, data)
    dens, logscale = scaled
    lay = model.layout
    state_of = lay.state_of().astype(np.int64)
    if model.spec.kind == "hsmm" and not dense:
        st = model.structured
        ll = _kernels.forward_structured(
            np.ascontiguousarray(st.hazards), np.ascontiguousarray(st.omega),
            lay.lower, lay.upper, state_of, dens, logscale, tod, delta,
        )
    else:
        ll = _kernels.forward_dense(np.ascontiguousarray(model.gammas), state_of, dens, logscale, tod, delta)
    if not np.isfinite(ll):
        warnings.warn("forward mass vanished: the data are impossible under this model", RuntimeWarning)
        return -np.inf
    return float(ll)


def forward_loglik_sequence(
    structured: StructuredTPM,
    emissions: EmissionSpec,
    data: ObservationSeries,
    delta: np.ndarray | None = None,
) -> float:
    """Log-likelihood for matrices built from a general covariate series.

    Row ``k`` of ``data`` uses ``Gamma^(k)``, so the series length must equal
    the number of matrices.  ``delta`` defaults to a state switch just before
    the first observation (mass ``1/N`` on each aggregate's entry state).
    """
    lay = structured.layout
    T = structured.cycle_length
    if len(data) != T:
        raise DataError(f"series has {len(data)} rows, matrices cover {T} time points")
    if delta is None:
        delta = np.zeros(lay.M)
        delta[lay.lower] = 1.0 / lay.n_states
    dens, logscale = _kernels.scaled_densities(np.ascontiguousarray(_emission_log_densities(emissions, data)))
    ll = _kernels.forward_structured(
        np.ascontiguousarray(structured.hazards), np.ascontiguousarray(structured.omega),
        lay.lower, lay.upper, lay.state_of().astype(np.int64), dens, logscale,
        np.arange(T, dtype=np.int64), np.ascontiguousarray(delta, dtype=float),
    )
    if not np.isfinite(ll):
        warnings.warn("forward mass vanished: the data are impossible under this model", RuntimeWarning)
        return -np.inf
    return float(ll)


def loglik_theta(spec: ModelSpec, theta, data: ObservationSeries, cache: dict | None = None) -> float:
    """Log-likelihood at a working parameter vector; ``-inf`` on numerical failure.

    With a ``cache`` dict, emission densities are reused while the emission
    part of ``theta`` is unchanged (finite-difference steps in state-process
    parameters).
    """
    try:
        model = spec.unpack(theta)
        scaled = None
        if cache is not None:
            key = np.asarray(theta, dtype=float)[spec.emission_slice()].tobytes()
            if cache.get("key") != key:
                cache["key"], cache["scaled"] = key, emission_scaled(model, data)
            scaled = cache["scaled"]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return forward_loglik(model, data, check=False, scaled=scaled)
    except (NumericalError, FloatingPointError, ValueError):
        return -np.inf


def fd_gradient(f, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient with steps ``rel_step * max(1, |x_k|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (xp[k] - xm[k])
    return g


def fd_hessian(f, x: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * h[i] * h[j])
    return H


# ---------------------------------------------------------------------------
# fitting


@dataclass(frozen=True)
class FitOptions:
    """Optimiser settings.

    ``gtol`` is relative: convergence means the gradient of the log-likelihood
    has infinity norm below ``gtol * (1 + |loglik|)``.  As a safety net the
    optimiser also stops after ``stall_iters`` consecutive iterations whose
    relative log-likelihood change is below ``ftol``; such a stop is only
    reported as converged if the gradient condition holds as well.
    """

    gtol: float = 1e-6
    ftol: float = 1e-8
    stall_iters: int = 50
    maxiter: int = 2000
    fd_step: float = 1e-6
    hessian: bool = False
    n_starts: int = 1
    jitter: float = 0.1
    seed: int = 0


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    theta_hat: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    n_obs: int
    hessian: np.ndarray | None = None
    grad_norm: float = np.nan
    message: str = ""
    n_evals: int = 0
    extra: dict = field(default_factory=dict)

    @cached_property
    def model(self) -> Model:
        return self.spec.unpack(self.theta_hat)

    @property
    def n_params(self) -> int:
        return int(self.theta_hat.size)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(self.n_obs)

    def covariance(self) -> np.ndarray:
        """Inverse observed information on the working scale."""
        if self.hessian is None:
            raise NumericalError("fit was run without a Hessian")
        return np.linalg.inv(-self.hessian)

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance()), 0.0, None))

    def sample_models(self, n: int, seed: int | None = None) -> list[Model]:
        """Draws from the approximate normal distribution of the MLE."""
        rng = np.random.default_rng(seed)
        cov = self.covariance()
        cov = 0.5 * (cov + cov.T)
        draws = rng.multivariate_normal(self.theta_hat, cov, size=n, method="eigh")
        return [self.spec.unpack(th) for th in draws]


def fit(
    spec: ModelSpec,
    data: ObservationSeries,
    init: Model | np.ndarray,
    options: FitOptions | None = None,
) -> FittedModel:
    """Approximate maximum likelihood by quasi-Newton (BFGS) with central-difference gradients.

    With ``n_starts > 1`` the best of the jittered starts is kept.  A best
    fit that stopped before the gradient criterion (without exhausting
    ``maxiter``) gets one restart from where it stopped.
    """
    opts = options or FitOptions()
    theta0 = spec.pack(init) if isinstance(init, Model) else np.asarray(init, dtype=float).copy()
    if theta0.shape != (spec.n_params,):
        raise ConfigurationError(f"init has {theta0.size} parameters, spec needs {spec.n_params}")
    if not np.all(np.isfinite(theta0)):
        raise NumericalError("initial parameters are not finite")
    ll0 = loglik_theta(spec, theta0, data)
    if not np.isfinite(ll0):
        raise NumericalError("log-likelihood is not finite at the initial parameters")

    starts = [theta0]
    if opts.n_starts > 1:
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.n_starts - 1):
            th = theta0 + opts.jitter * rng.standard_normal(theta0.size)
            if np.isfinite(loglik_theta(spec, th, data)):
                starts.append(th)

    best = None
    for th in starts:
        res = _fit_single(spec, data, th, opts)
        if best is None or res.loglik > best.loglik:
            best = res
    if not best.converged and best.iterations < opts.maxiter:
        # stopped short of the gradient criterion: a restart resets the BFGS curvature estimate
        again = _fit_single(spec, data, best.theta_hat, opts)
        if again.loglik >= best.loglik:
            best = replace(again, iterations=best.iterations + again.iterations)
    return best


def _fit_single(spec, data, theta0, opts: FitOptions) -> FittedModel:
    cache: dict = {}
    scale = 1.0 + abs(loglik_theta(spec, theta0, data, cache))
    n_evals = 0

    def nll(th):
        nonlocal n_evals
        n_evals += 1
        v = loglik_theta(spec, th, data, cache)
        return -v / scale if np.isfinite(v) else np.inf

    def grad(th):
        return fd_gradient(nll, th, opts.fd_step)

    # stall guard: many consecutive iterations with negligible change
    hist = {"prev": None, "stall": 0}

    def callback(intermediate_result):
        f = intermediate_result.fun
        prev, hist["prev"] = hist["prev"], f
        if prev is not None and abs(prev - f) * scale <= opts.ftol * (1.0 + abs(f) * scale):
            hist["stall"] += 1
            if hist["stall"] >= opts.stall_iters:
                raise StopIteration
        else:
            hist["stall"] = 0

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = optimize.minimize(
            nll, theta0, jac=grad, method="BFGS", callback=callback,
            options={"gtol": opts.gtol, "maxiter": opts.maxiter, "norm": np.inf},
        )
    theta = res.x
    ll = loglik_theta(spec, theta, data, cache)
    g = fd_gradient(lambda th: loglik_theta(spec, th, data, cache), theta, opts.fd_step)
    gnorm = float(np.abs(g).max())
    converged = bool(np.isfinite(ll) and gnorm < opts.gtol * (1.0 + abs(ll)))
    hess = None
    if opts.hessian and np.isfinite(ll):
        hess = fd_hessian(lambda th: loglik_theta(spec, th, data, cache), theta)
    log.info("fit: loglik=%.4f iters=%d |grad|=%.3g converged=%s", ll, res.nit, gnorm, converged)
    return FittedModel(
        spec=spec,
        theta_hat=theta,
        loglik=float(ll),
        converged=converged,
        iterations=int(res.nit),
        n_obs=data.n_observed,
        hessian=hess,
        grad_norm=gnorm,
        message=str(res.message),
        n_evals=n_evals,
    )
