"""Model structure, natural-scale parameters and the working-parameter map.

A :class:`ModelSpec` fixes everything that is not estimated (number of
states, cycle length, families, trigonometric degrees, aggregate sizes).
A :class:`Model` adds natural-scale parameters.  ``spec.pack`` and
``spec.unpack`` convert between a :class:`Model` and the flat unconstrained
vector handed to the optimiser.

Two model kinds are supported:

``hsmm``
    aggregates of sizes ``N_i``, parametric dwell distributions and a
    multinomial-logit conditional t.p.m. of the embedded chain;
``hmm``
    a plain (periodic) HMM whose t.p.m. rows are multinomial-logit with the
    diagonal as reference category.  Used as the Markovian baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .distributions import DwellFamily, DwellSpec, EmissionSpec, trig_design, wrap_angle
from .exceptions import ConfigurationError
from .statespace import (
    AggregateLayout,
    ConditionalTPMSpec,
    StructuredTPM,
    build_structured,
    sizes_from_factor,
)

__all__ = ["ModelSpec", "Model", "reference_model", "REFERENCE_TRUTH"]


@dataclass(frozen=True)
class ModelSpec:
    """Structural (non-estimated) part of a model."""

    n_states: int
    cycle_length: int = 1
    kind: str = "hsmm"
    dwell_family: str = "shifted-poisson"
    degree_mean: int = 0
    degree_dispersion: int = 0
    degree_omega: int = 0
    degree_gamma: int = 0
    sizes: tuple[int, ...] = ()
    estimate_angle_mean: bool = False

    def __post_init__(self):
        if self.kind not in ("hsmm", "hmm"):
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        if self.n_states < 1:
            raise ConfigurationError("n_states must be >= 1")
        if self.cycle_length < 1:
            raise ConfigurationError("cycle_length must be >= 1")
        for name in ("degree_mean", "degree_dispersion", "degree_omega", "degree_gamma"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        object.__setattr__(self, "dwell_family", DwellFamily(self.dwell_family).value)
        sizes = tuple(int(s) for s in self.sizes)
        if self.kind == "hmm":
            sizes = (1,) * self.n_states
        elif len(sizes) != self.n_states:
            raise ConfigurationError("need one aggregate size per state")
        object.__setattr__(self, "sizes", sizes)
        L = self.cycle_length
        for name in ("degree_mean", "degree_dispersion", "degree_omega", "degree_gamma"):
            if 2 * getattr(self, name) >= L and getattr(self, name) > 0:
                raise ConfigurationError(f"{name} too large for cycle length {L}")

    @property
    def layout(self) -> AggregateLayout:
        return AggregateLayout(self.sizes)

    @property
    def is_periodic(self) -> bool:
        return True

    # ---- parameter bookkeeping --------------------------------------------

    def _blocks(self) -> list[tuple[str, int]]:
        N = self.n_states
        blocks: list[tuple[str, int]] = []
        if self.kind == "hsmm":
            blocks.append(("dwell_mean", N * (1 + 2 * self.degree_mean)))
            if self.dwell_family == DwellFamily.SHIFTED_NEGBINOM.value:
                blocks.append(("dwell_dispersion", N * (1 + 2 * self.degree_dispersion)))
            if N >= 3:
                blocks.append(("omega", N * (N - 2) * (1 + 2 * self.degree_omega)))
        else:
            blocks.append(("gamma", N * (N - 1) * (1 + 2 * self.degree_gamma)))
        blocks += [("log_step_mean", N), ("log_step_sd", N), ("log_kappa", N)]
        if self.estimate_angle_mean:
            blocks.append(("angle_mean", N))
        return blocks

    @property
    def n_params(self) -> int:
        return sum(n for _, n in self._blocks())

    def emission_slice(self) -> slice:
        """Position of the emission parameters (always last) in the working vector."""
        n = sum(n for b, n in self._blocks() if b in _EMISSION_BLOCKS)
        return slice(self.n_params - n, self.n_params)

    def param_names(self) -> list[str]:
        N = self.n_states

        def trig_names(prefix, K):
            return [f"{prefix}[b0]"] + [f"{prefix}[sin{k}]" for k in range(1, K + 1)] + [
                f"{prefix}[cos{k}]" for k in range(1, K + 1)
            ]

        names: list[str] = []
        for block, _ in self._blocks():
            if block == "dwell_mean":
                for i in range(N):
                    names += trig_names(f"dwell_mean{i + 1}", self.degree_mean)
            elif block == "dwell_dispersion":
                for i in range(N):
                    names += trig_names(f"dwell_disp{i + 1}", self.degree_dispersion)
            elif block == "omega":
                for i, j in _free_omega_pairs(N):
                    names += trig_names(f"omega{i + 1}{j + 1}", self.degree_omega)
            elif block == "gamma":
                for i in range(N):
                    for j in range(N):
                        if i != j:
                            names += trig_names(f"gamma{i + 1}{j + 1}", self.degree_gamma)
            else:
                names += [f"{block}{i + 1}" for i in range(N)]
        return names

    def unpack(self, theta) -> "Model":
        """Working vector -> natural-scale :class:`Model`."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} working parameters, got {theta.shape}")
        N, L = self.n_states, self.cycle_length
        pos = 0
        parts = {}
        for block, n in self._blocks():
            parts[block] = theta[pos:pos + n]
            pos += n
        dwells: list[DwellSpec] = []
        omega = None
        gamma_coeffs = None
        if self.kind == "hsmm":
            km = 1 + 2 * self.degree_mean
            mc = parts["dwell_mean"].reshape(N, km)
            dc = parts.get("dwell_dispersion")
            kd = 1 + 2 * self.degree_dispersion
            for i in range(N):
                disp = dc.reshape(N, kd)[i] if dc is not None else np.empty(0)
                dwells.append(DwellSpec(self.dwell_family, mc[i], disp, L if self._dwell_periodic() else 1))
            if N >= 2:
                ko = 1 + 2 * self.degree_omega
                c = np.zeros((N, N, ko))
                if N >= 3:
                    oc = parts["omega"].reshape(-1, ko)
                    for (i, j), row in zip(_free_omega_pairs(N), oc):
                        c[i, j] = row
                omega = ConditionalTPMSpec(c, self.degree_omega, L)
        else:
            kg = 1 + 2 * self.degree_gamma
            gamma_coeffs = np.zeros((N, N, kg))
            gc = parts["gamma"].reshape(-1, kg)
            pairs = [(i, j) for i in range(N) for j in range(N) if i != j]
            for (i, j), row in zip(pairs, gc):
                gamma_coeffs[i, j] = row
        am = wrap_angle(parts["angle_mean"]) if "angle_mean" in parts else None
        em = EmissionSpec(
            np.exp(parts["log_step_mean"]),
            np.exp(parts["log_step_sd"]),
            np.exp(parts["log_kappa"]),
            am,
        )
        return Model(self, dwells, omega, em, gamma_coeffs)

    def pack(self, model: "Model") -> np.ndarray:
        """Natural-scale :class:`Model` -> working vector."""
        N = self.n_states
        out: list[np.ndarray] = []
        for block, n in self._blocks():
            if block == "dwell_mean":
                out += [_fit_len(d.mean_coeffs, self.degree_mean) for d in model.dwells]
            elif block == "dwell_dispersion":
                out += [_fit_len(d.dispersion_coeffs, self.degree_dispersion) for d in model.dwells]
            elif block == "omega":
                for i, j in _free_omega_pairs(N):
                    out.append(_fit_len(model.omega.coeffs[i, j], self.degree_omega))
            elif block == "gamma":
                for i in range(N):
                    for j in range(N):
                        if i != j:
                            out.append(_fit_len(model.gamma_coeffs[i, j], self.degree_gamma))
            elif block == "log_step_mean":
                out.append(np.log(model.emissions.step_mean))
            elif block == "log_step_sd":
                out.append(np.log(model.emissions.step_sd))
            elif block == "log_kappa":
                out.append(np.log(model.emissions.angle_kappa))
            elif block == "angle_mean":
                out.append(np.asarray(model.emissions.angle_mean, dtype=float))
        return np.concatenate([np.atleast_1d(np.asarray(o, dtype=float)) for o in out])

    def _dwell_periodic(self) -> bool:
        return self.degree_mean > 0 or self.degree_dispersion > 0

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "cycle_length": self.cycle_length,
            "kind": self.kind,
            "dwell_family": self.dwell_family,
            "degree_mean": self.degree_mean,
            "degree_dispersion": self.degree_dispersion,
            "degree_omega": self.degree_omega,
            "degree_gamma": self.degree_gamma,
            "sizes": list(self.sizes),
            "estimate_angle_mean": self.estimate_angle_mean,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["sizes"] = tuple(d.get("sizes", ()))
        return cls(**d)


_EMISSION_BLOCKS = ("log_step_mean", "log_step_sd", "log_kappa", "angle_mean")


def _free_omega_pairs(N: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(N) for j in range(N) if j != i and j != ConditionalTPMSpec.reference(i)]


def _fit_len(coeffs, degree: int) -> np.ndarray:
    """Pad or truncate trigonometric coefficients to degree ``degree``."""
    c = np.atleast_1d(np.asarray(coeffs, dtype=float))
    K_in = (c.size - 1) // 2
    out = np.zeros(1 + 2 * degree)
    out[0] = c[0]
    k = min(K_in, degree)
    out[1:1 + k] = c[1:1 + k]
    out[1 + degree:1 + degree + k] = c[1 + K_in:1 + K_in + k]
    return out


@dataclass(frozen=True, eq=False)
class Model:
    """A model with natural-scale parameters."""

    spec: ModelSpec
    dwells: list[DwellSpec] = field(default_factory=list)
    omega: ConditionalTPMSpec | None = None
    emissions: EmissionSpec | None = None
    gamma_coeffs: np.ndarray | None = None

    @property
    def layout(self) -> AggregateLayout:
        return self.spec.layout

    @property
    def cycle_length(self) -> int:
        return self.spec.cycle_length

    @cached_property
    def structured(self) -> StructuredTPM:
        """Compact extended t.p.m. (HSMM kind only)."""
        if self.spec.kind != "hsmm":
            raise ConfigurationError("structured form exists only for hsmm models")
        N, L = self.spec.n_states, self.cycle_length
        om = self.omega if self.omega is not None else np.zeros((N, N))
        return build_structured(self.layout, self.dwells, om, L)

    @cached_property
    def gammas(self) -> np.ndarray:
        """Dense ``Gamma^(1..L)``, shape ``(L, M, M)``."""
        if self.spec.kind == "hsmm":
            return self.structured.dense()
        return hmm_gammas(self.gamma_coeffs, self.spec.degree_gamma, self.cycle_length)

    def omega_table(self) -> np.ndarray:
        """Conditional t.p.m. of the embedded chain, shape ``(L, N, N)``."""
        N, L = self.spec.n_states, self.cycle_length
        if self.spec.kind == "hsmm":
            return self.structured.omega
        G = self.gammas
        off = G.copy()
        idx = np.arange(N)
        off[:, idx, idx] = 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            return off / off.sum(axis=2, keepdims=True)

    def dwell_pmf_surface(self, rmax: int) -> np.ndarray:
        """``d_i^(t)(r)`` as an array ``(N, L, rmax)``."""
        N, L = self.spec.n_states, self.cycle_length
        if self.spec.kind == "hsmm":
            return np.stack([np.broadcast_to(d.pmf_table(rmax), (L, rmax)) for d in self.dwells])
        # HMM: geometric with the (time-varying) stay probability; a sojourn entered at t
        # survives step k with probability gamma_ii^(t+k-1)
        G = self.gammas
        out = np.empty((N, L, rmax))
        for i in range(N):
            stay = G[:, i, i]
            for t in range(L):
                idx = (t + np.arange(rmax)) % L
                s = stay[idx]
                surv = np.concatenate([[1.0], np.cumprod(s[:-1])])
                out[i, t] = surv * (1 - s)
        return out

    def with_emissions(self, emissions: EmissionSpec) -> "Model":
        return replace(self, emissions=emissions)


def hmm_gammas(coeffs: np.ndarray, degree: int, L: int) -> np.ndarray:
    """Multinomial-logit t.p.m.s with the diagonal as reference, ``(L, N, N)``."""
    X = trig_design(degree, L)
    eta = np.einsum("tk,ijk->tij", X, coeffs)
    N = coeffs.shape[0]
    idx = np.arange(N)
    eta[:, idx, idx] = 0.0
    eta = eta - eta.max(axis=2, keepdims=True)
    w = np.exp(eta)
    return w / w.sum(axis=2, keepdims=True)


# ---------------------------------------------------------------------------
# simulation-study fixture

#: Data-generating parameters of the simulation study, one row per state.
#: Turning-angle mean directions are 0.
REFERENCE_TRUTH = {
    "beta": np.array(
        [
            [np.log(8.0), -0.2, 0.3],
            [np.log(7.0), 0.2, -0.2],
            [np.log(6.0), -0.6, 0.4],
        ]
    ),
    "omega": np.array([[0.0, 0.7, 0.3], [0.2, 0.0, 0.8], [0.5, 0.5, 0.0]]),
    "step_mean": np.array([20.0, 200.0, 800.0]),
    "step_sd": np.array([20.0, 150.0, 500.0]),
    "kappa": np.array([0.2, 1.0, 2.5]),
}


def reference_model(sizes: tuple[int, ...] | None = None, factor: float = 1.3) -> Model:
    """3-state periodic HSMM with shifted Poisson dwell times used in the simulation study.

    Aggregate sizes default to ``ceil(factor * q_0.995)`` of each state's dwell
    distribution at its largest mean.
    """
    L = 24
    dwells = [DwellSpec(DwellFamily.SHIFTED_POISSON, b, cycle_length=L) for b in REFERENCE_TRUTH["beta"]]
    if sizes is None:
        sizes = sizes_from_factor(dwells, factor)
    spec = ModelSpec(
        n_states=3,
        cycle_length=L,
        kind="hsmm",
        dwell_family="shifted-poisson",
        degree_mean=1,
        sizes=tuple(sizes),
    )
    omega = ConditionalTPMSpec.from_matrix(REFERENCE_TRUTH["omega"], L)
    omega = ConditionalTPMSpec(omega.coeffs, 0, L)
    em = EmissionSpec(REFERENCE_TRUTH["step_mean"], REFERENCE_TRUTH["step_sd"], REFERENCE_TRUTH["kappa"])
    return Model(spec, dwells, omega, em)
