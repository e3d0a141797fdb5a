"""Dwell-time families, hazards, emission densities and trigonometric predictors.

Dwell times live on the positive integers.  The ``shifted`` families put mass
on ``{1, 2, ...}`` with ``pmf(r) = base_pmf(r - 1)``, so a sojourn always lasts
at least one sample.  Every family is parameterised through the mean of the
*base* (unshifted) variable, ``exp(eta(t))``, where ``eta`` is a periodic
trigonometric predictor in the time of cycle ``t = 1..L``.

Time-of-cycle arguments are 1-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from .exceptions import DomainError

__all__ = [
    "DwellFamily",
    "TrigPredictor",
    "DwellSpec",
    "EmissionSpec",
    "EmissionFeatures",
    "trig_eval",
    "trig_design",
    "dwell_pmf",
    "dwell_cdf",
    "dwell_sf",
    "hazard",
    "emission_logdensity",
    "gamma_logpdf",
    "vonmises_logpdf",
    "wrap_angle",
]

# below this the negative binomial is numerically indistinguishable from Poisson
NB_POISSON_SWITCH = 1e-8


class DwellFamily(str, Enum):
    GEOMETRIC = "geometric"
    SHIFTED_POISSON = "shifted-poisson"
    SHIFTED_NEGBINOM = "shifted-negative-binomial"


def wrap_angle(x):
    """Map angles into ``(-pi, pi]``."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return y if np.ndim(y) else float(y)


def trig_design(degree: int, cycle_length: int) -> np.ndarray:
    """Design matrix of shape ``(L, 1 + 2K)`` for ``t = 1..L``.

    Column order is ``1, sin(2 pi k t / L) (k=1..K), cos(2 pi k t / L) (k=1..K)``.
    """
    t = np.arange(1, cycle_length + 1, dtype=float)
    cols = [np.ones_like(t)]
    k = np.arange(1, degree + 1, dtype=float)
    arg = 2.0 * np.pi * np.outer(t, k) / cycle_length
    cols.extend(np.sin(arg).T)
    cols.extend(np.cos(arg).T)
    return np.column_stack(cols)


@dataclass(frozen=True)
class TrigPredictor:
    """Periodic linear predictor ``b0 + sum_k b1k sin(.) + sum_k b2k cos(.)``."""

    coeffs: np.ndarray
    degree: int = 0
    cycle_length: int = 1

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float)).copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.degree < 0:
            raise DomainError("degree must be >= 0")
        if self.cycle_length < 1:
            raise DomainError("cycle_length must be >= 1")
        if c.size != 1 + 2 * self.degree:
            raise DomainError(
                f"expected {1 + 2 * self.degree} coefficients for degree {self.degree}, got {c.size}"
            )

    @classmethod
    def constant(cls, value: float, cycle_length: int = 1) -> "TrigPredictor":
        return cls(np.array([value]), 0, cycle_length)

    def values(self) -> np.ndarray:
        """Predictor evaluated at every time of cycle, shape ``(L,)``."""
        if self.degree == 0:
            return np.full(self.cycle_length, self.coeffs[0])
        return trig_design(self.degree, self.cycle_length) @ self.coeffs


def trig_eval(p: TrigPredictor, t: int) -> float:
    """Evaluate a trigonometric predictor at time of cycle ``t`` in ``1..L``."""
    if not 1 <= t <= p.cycle_length:
        raise DomainError(f"time of cycle {t} outside 1..{p.cycle_length}")
    K, L = p.degree, p.cycle_length
    out = p.coeffs[0]
    for k in range(1, K + 1):
        out += p.coeffs[k] * np.sin(2 * np.pi * k * t / L)
        out += p.coeffs[K + k] * np.cos(2 * np.pi * k * t / L)
    return float(out)


# --------------------------------------------------------------------------
# dwell-time distributions


@dataclass(frozen=True)
class DwellSpec:
    """Parametric, possibly periodic, dwell-time distribution on ``{1, 2, ...}``.

    ``mean_coeffs`` drive the log of the base mean (so the mean sojourn is
    ``exp(eta) + 1``).  For the geometric family this is the logit link
    ``p = 1 / (1 + exp(eta))``.  ``dispersion_coeffs`` drive ``log(phi)`` and
    are only used by the negative binomial (variance ``mu + mu**2 * phi``).
    """

    family: DwellFamily
    mean_coeffs: np.ndarray
    dispersion_coeffs: np.ndarray = field(default_factory=lambda: np.empty(0))
    cycle_length: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", DwellFamily(self.family))
        mc = np.atleast_1d(np.asarray(self.mean_coeffs, dtype=float))
        dc = np.atleast_1d(np.asarray(self.dispersion_coeffs, dtype=float))
        object.__setattr__(self, "mean_coeffs", mc)
        object.__setattr__(self, "dispersion_coeffs", dc)
        if mc.size % 2 != 1:
            raise DomainError("mean_coeffs must have odd length 1 + 2K")
        if self.family is DwellFamily.SHIFTED_NEGBINOM:
            if dc.size % 2 != 1:
                raise DomainError("dispersion_coeffs must have odd length 1 + 2K")
        elif dc.size:
            raise DomainError(f"{self.family.value} takes no dispersion coefficients")
        # cheap validation of the predictors
        self.mean_predictor()
        if dc.size:
            self.dispersion_predictor()

    # convenience constructors (homogeneous unless coefficients given)
    @classmethod
    def geometric(cls, p: float) -> "DwellSpec":
        if not 0 < p <= 1:
            raise DomainError("geometric p must be in (0, 1]")
        eta = np.log1p(-p) - np.log(p) if p < 1 else -np.inf
        return cls(DwellFamily.GEOMETRIC, [eta])

    @classmethod
    def shifted_poisson(cls, lam: float) -> "DwellSpec":
        return cls(DwellFamily.SHIFTED_POISSON, [np.log(lam)])

    @classmethod
    def shifted_negbinom(cls, mu: float, phi: float) -> "DwellSpec":
        return cls(DwellFamily.SHIFTED_NEGBINOM, [np.log(mu)], [np.log(phi)])

    @property
    def degree_mean(self) -> int:
        return (self.mean_coeffs.size - 1) // 2

    @property
    def degree_dispersion(self) -> int:
        return (self.dispersion_coeffs.size - 1) // 2

    def mean_predictor(self) -> TrigPredictor:
        return TrigPredictor(self.mean_coeffs, self.degree_mean, self.cycle_length)

    def dispersion_predictor(self) -> TrigPredictor:
        return TrigPredictor(self.dispersion_coeffs, self.degree_dispersion, self.cycle_length)

    def base_means(self) -> np.ndarray:
        """Mean of the base variable ``R - 1`` at each time of cycle, shape ``(L,)``."""
        return np.exp(self.mean_predictor().values())

    def dispersions(self) -> np.ndarray:
        if self.family is not DwellFamily.SHIFTED_NEGBINOM:
            return np.zeros(self.cycle_length)
        return np.exp(self.dispersion_predictor().values())

    def mean_dwell(self) -> np.ndarray:
        """Expected sojourn length per time of cycle."""
        return self.base_means() + 1.0

    # ---- tables over (t, r) ------------------------------------------------

    def _log_tables(self, rmax: int) -> tuple[np.ndarray, np.ndarray]:
        """``log pmf(r)`` and ``log P(R > r)`` for ``r = 1..rmax``, shape ``(L, rmax)``."""
        return _log_tables(self.family, self.base_means(), self.dispersions(), rmax)

    def pmf_table(self, rmax: int) -> np.ndarray:
        """``d^(t)(r)`` for ``t = 1..L`` (rows) and ``r = 1..rmax`` (columns)."""
        return np.exp(self._log_tables(rmax)[0])

    def sf_table(self, rmax: int) -> np.ndarray:
        """``1 - F^(t)(r)`` for ``r = 1..rmax``."""
        return np.exp(self._log_tables(rmax)[1])

    def cdf_table(self, rmax: int) -> np.ndarray:
        return -np.expm1(self._log_tables(rmax)[1])

    def hazard_table(self, rmax: int) -> np.ndarray:
        """Hazard ``c^(t)(r)`` for ``r = 1..rmax``, shape ``(L, rmax)``."""
        return _hazard_from_logs(*self._log_tables(rmax))

    def quantile(self, q: float, rmax: int = 10_000) -> np.ndarray:
        """Smallest ``r`` with ``F^(t)(r) >= q`` for each ``t`` (capped at ``rmax``)."""
        F = self.cdf_table(rmax)
        hit = F >= q
        return np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, rmax)


def _log_tables(family: DwellFamily, mu, phi, rmax: int) -> tuple[np.ndarray, np.ndarray]:
    """``log pmf`` and ``log sf`` tables with one row per entry of ``mu``."""
    k = np.arange(rmax, dtype=float)[None, :]  # base value r - 1
    mu = np.asarray(mu, dtype=float)[:, None]
    if family is DwellFamily.GEOMETRIC:
        # p = 1/(1+mu): log p = -log1p(mu), log(1-p) = log(mu) - log1p(mu)
        logp = -np.log1p(mu)
        with np.errstate(divide="ignore"):
            logq = np.log(mu) - np.log1p(mu)
        logq = np.where(mu == 0, -np.inf, logq)
        with np.errstate(invalid="ignore"):
            logpmf = logp + np.where(k == 0, 0.0, k * logq)
            logsf = (k + 1) * logq
        return logpmf, logsf
    if family is DwellFamily.SHIFTED_NEGBINOM:
        phi = np.asarray(phi, dtype=float)[:, None]
        pois = phi < NB_POISSON_SWITCH
        if np.all(pois):
            return _poisson_log_tables(k, mu)
        n = 1.0 / np.where(pois, 1.0, phi)
        logp = -np.log1p(mu * np.where(pois, 1.0, phi))  # log(n/(n+mu))
        log1mp = np.log(mu) + np.log(np.where(pois, 1.0, phi)) + logp
        logpmf = (
            special.gammaln(k + n) - special.gammaln(n) - special.gammaln(k + 1)
            + n * logp + k * log1mp
        )
        with np.errstate(divide="ignore"):
            logsf = np.log(special.betainc(k + 1, n, np.exp(log1mp)))
        if np.any(pois):
            pp, ps = _poisson_log_tables(k, mu)
            logpmf = np.where(pois, pp, logpmf)
            logsf = np.where(pois, ps, logsf)
        return logpmf, logsf
    return _poisson_log_tables(k, mu)


def hazard_table_from_means(family, mu, phi=None, rmax: int = 1) -> np.ndarray:
    """Hazards ``c(r)``, ``r = 1..rmax``, for arbitrary per-row base means.

    ``mu`` (and ``phi`` for the negative binomial) hold one value per row,
    e.g. per time point of a covariate series.  Shape ``(len(mu), rmax)``.
    """
    fam = DwellFamily(family)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if np.any(~np.isfinite(mu)) or np.any(mu < 0):
        raise DomainError("base means must be finite and nonnegative")
    phi = np.zeros_like(mu) if phi is None else np.broadcast_to(np.asarray(phi, dtype=float), mu.shape)
    return _hazard_from_logs(*_log_tables(fam, mu, phi, rmax))


def _hazard_from_logs(logpmf, logsf) -> np.ndarray:
    # log(1 - F(r - 1)) for r = 1..rmax
    prev = np.concatenate([np.zeros((logsf.shape[0], 1)), logsf[:, :-1]], axis=1)
    with np.errstate(invalid="ignore"):
        c = np.exp(logpmf - prev)
    c = np.where(np.isneginf(prev), 1.0, c)
    c = np.where(np.isnan(c), 1.0, c)
    return np.clip(c, 0.0, 1.0)


def _poisson_log_tables(k: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        logpmf = special.xlogy(k, lam) - lam - special.gammaln(k + 1)
        # P(X > k) = regularised lower incomplete gamma P(k + 1, lam)
        logsf = np.log(special.gammainc(k + 1, lam))
    return logpmf, logsf


def _check_t(d: DwellSpec, t: int) -> int:
    if not 1 <= t <= d.cycle_length:
        raise DomainError(f"time of cycle {t} outside 1..{d.cycle_length}")
    return t - 1


def dwell_pmf(d: DwellSpec, t: int, r: int) -> float:
    """Probability that a sojourn entered at time of cycle ``t`` lasts ``r`` steps."""
    if r < 1:
        raise DomainError(f"dwell time must be >= 1, got {r}")
    return float(d.pmf_table(r)[_check_t(d, t), r - 1])


def dwell_sf(d: DwellSpec, t: int, r: int) -> float:
    """``1 - F^(t)(r)``; equals 1 at ``r = 0``."""
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    i = _check_t(d, t)
    if r == 0:
        return 1.0
    return float(d.sf_table(r)[i, r - 1])


def dwell_cdf(d: DwellSpec, t: int, r: int) -> float:
    """``F^(t)(r) = sum_{k=1..r} d^(t)(k)``; ``F^(t)(0) = 0``."""
    if r < 0:
        raise DomainError(f"r must be >= 0, got {r}")
    i = _check_t(d, t)
    if r == 0:
        return 0.0
    return float(d.cdf_table(r)[i, r - 1])


def hazard(d: DwellSpec, t: int, r: int) -> float:
    """Hazard ``c^(t)(r) = d^(t)(r) / (1 - F^(t)(r - 1))``, 1 once the mass is exhausted."""
    if r < 1:
        raise DomainError(f"dwell time must be >= 1, got {r}")
    return float(d.hazard_table(r)[_check_t(d, t), r - 1])


# --------------------------------------------------------------------------
# emissions


def gamma_logpdf(x, mean, sd):
    """Gamma log density parameterised by mean and standard deviation."""
    x = np.asarray(x, dtype=float)
    shape = (mean / sd) ** 2
    scale = sd**2 / mean
    return (shape - 1) * np.log(x) - x / scale - special.gammaln(shape) - shape * np.log(scale)


def vonmises_logpdf(x, mu, kappa):
    # log I0(kappa) = log(i0e(kappa)) + kappa, stable for large kappa
    return kappa * (np.cos(np.asarray(x, dtype=float) - mu) - 1.0) - np.log(
        2 * np.pi * special.i0e(kappa)
    )


@dataclass(frozen=True)
class EmissionSpec:
    """State-dependent gamma step lengths and von Mises turning angles.

    Each field holds one value per state.
    """

    step_mean: np.ndarray
    step_sd: np.ndarray
    angle_kappa: np.ndarray
    angle_mean: np.ndarray | None = None

    def __post_init__(self):
        sm = np.atleast_1d(np.asarray(self.step_mean, dtype=float))
        ss = np.atleast_1d(np.asarray(self.step_sd, dtype=float))
        kk = np.atleast_1d(np.asarray(self.angle_kappa, dtype=float))
        am = np.zeros_like(sm) if self.angle_mean is None else np.atleast_1d(
            np.asarray(self.angle_mean, dtype=float)
        )
        if not (sm.shape == ss.shape == kk.shape == am.shape) or sm.ndim != 1:
            raise DomainError("emission parameter vectors must share one length")
        if np.any(sm <= 0) or np.any(ss <= 0) or np.any(kk <= 0):
            raise DomainError("step mean, step sd and kappa must be strictly positive")
        if np.any(am <= -np.pi) or np.any(am > np.pi):
            raise DomainError("angle mean must lie in (-pi, pi]")
        for name, v in zip(("step_mean", "step_sd", "angle_kappa", "angle_mean"), (sm, ss, kk, am)):
            object.__setattr__(self, name, v)

    @property
    def n_states(self) -> int:
        return self.step_mean.size

    def log_density_matrix(self, step, angle) -> np.ndarray:
        """Log densities of shape ``(T, N)``; NaN marks a missing component."""
        step = np.atleast_1d(np.asarray(step, dtype=float))
        angle = np.atleast_1d(np.asarray(angle, dtype=float))
        if step.shape != angle.shape:
            raise DomainError("step and angle must have equal length")
        s_ok = ~np.isnan(step)
        if np.any(step[s_ok] <= 0):
            bad = int(np.flatnonzero(s_ok & (step <= 0))[0])
            raise DomainError(f"step length must be > 0 (row {bad})")
        return self.log_density_features(EmissionFeatures.from_arrays(step, angle))

    def log_density_features(self, feat: "EmissionFeatures") -> np.ndarray:
        """Same as :meth:`log_density_matrix` on precomputed per-row features."""
        mean, sd, kap, mu = self.step_mean, self.step_sd, self.angle_kappa, self.angle_mean
        shape = (mean / sd) ** 2
        rate = mean / sd**2
        const_g = shape * np.log(rate) - special.gammaln(shape)
        out = feat.logx[:, None] * (shape - 1) - feat.x[:, None] * rate + const_g
        out[~feat.s_ok] = 0.0
        const_v = -np.log(2 * np.pi * special.i0e(kap)) - kap
        cosd = feat.cos_a[:, None] * np.cos(mu) + feat.sin_a[:, None] * np.sin(mu)
        va = kap * cosd + const_v
        va[~feat.a_ok] = 0.0
        return out + va


@dataclass(frozen=True, eq=False)
class EmissionFeatures:
    """Per-row quantities reused across density evaluations (missing -> 0)."""

    x: np.ndarray
    logx: np.ndarray
    cos_a: np.ndarray
    sin_a: np.ndarray
    s_ok: np.ndarray
    a_ok: np.ndarray

    @classmethod
    def from_arrays(cls, step, angle) -> "EmissionFeatures":
        step = np.asarray(step, dtype=float)
        angle = np.asarray(angle, dtype=float)
        s_ok = ~np.isnan(step)
        a_ok = ~np.isnan(angle)
        x = np.where(s_ok, step, 1.0)
        a = np.where(a_ok, angle, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logx = np.log(x)
        return cls(x, logx, np.cos(a), np.sin(a), s_ok, a_ok)


def emission_logdensity(e: EmissionSpec, step: float | None, angle: float | None) -> np.ndarray:
    """Joint log density of one ``(step, angle)`` observation under every state.

    ``None`` or NaN marks a missing component, which contributes 0.
    Returns an array of length ``N``.
    """
    s = np.nan if step is None else float(step)
    a = np.nan if angle is None else float(angle)
    return e.log_density_matrix([s], [a])[0]
