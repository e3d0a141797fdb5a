"""CSV and JSON input/output, strict configuration parsing and a track helper.

Data tables are UTF-8 CSV with header ``t,tod,step,angle[,state,sojourn]``;
missing values are empty fields.  Fitted models and run configurations are
JSON documents.  Every file is written atomically (temporary file in the
target directory, then ``os.replace``).
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .distributions import DwellSpec, EmissionSpec, wrap_angle
from .exceptions import ConfigurationError, DataError
from .inference import FitOptions, FittedModel, ObservationSeries
from .model import Model, ModelSpec, reference_model
from .statespace import ConditionalTPMSpec, sizes_from_quantile

__all__ = [
    "atomic_write_text",
    "read_series",
    "write_series",
    "write_table",
    "model_to_dict",
    "model_from_dict",
    "save_fitted",
    "load_fitted",
    "RunConfig",
    "load_config",
    "parse_config",
    "build_model",
    "default_start",
    "steps_and_angles",
]

DATA_COLUMNS = ("t", "tod", "step", "angle")
TRUTH_COLUMNS = ("state", "sojourn")


# ---------------------------------------------------------------------------
# files


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_table(path, rows: list[dict], columns: list[str] | None = None) -> Path:
    """Write dict rows as CSV; ``columns`` defaults to the union in first-seen order."""
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return atomic_write_text(path, buf.getvalue())


def write_series(path, data: ObservationSeries, truth: bool = True) -> Path:
    cols = list(DATA_COLUMNS)
    extra = []
    if truth and data.states is not None:
        cols.append("state")
        extra.append(data.states)
        if data.sojourn is not None:
            cols.append("sojourn")
            extra.append(np.asarray(data.sojourn))
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for k in range(len(data)):
        row = [str(k + 1), str(int(data.tod[k])), _fmt(data.step[k]), _fmt(data.angle[k])]
        row += [str(int(e[k])) for e in extra]
        w.writerow(row)
    return atomic_write_text(path, buf.getvalue())


def _num(s: str, col: str, line: int) -> float:
    s = s.strip()
    if s == "" or s.lower() in ("na", "nan"):
        return np.nan
    try:
        return float(s)
    except ValueError:
        raise DataError(f"line {line}: column {col!r} is not a number: {s!r}") from None


def read_series(path, cycle_length: int) -> ObservationSeries:
    """Read a data CSV; ``t`` is optional, truth columns are kept when present."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in ("tod", "step", "angle") if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        unknown = [c for c in header if c not in DATA_COLUMNS + TRUTH_COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown column(s) {unknown}")
        idx = {c: header.index(c) for c in header}
        cols: dict[str, list] = {c: [] for c in header}
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}, line {line}: expected {len(header)} fields, got {len(rec)}")
            for c, i in idx.items():
                cols[c].append(_num(rec[i], c, line))
    if not cols["tod"]:
        raise DataError(f"{path}: no data rows")
    tod = np.array(cols["tod"])
    if np.isnan(tod).any() or np.any(tod != np.round(tod)):
        raise DataError(f"{path}: tod must be an integer on every row")
    states = sojourn = None
    if "state" in cols:
        s = np.array(cols["state"])
        if not np.isnan(s).any():
            states = s.astype(np.int64)
    if "sojourn" in cols:
        s = np.array(cols["sojourn"])
        if not np.isnan(s).any():
            sojourn = s.astype(np.int64)
    return ObservationSeries(
        tod.astype(np.int64), np.array(cols["step"]), np.array(cols["angle"]),
        cycle_length, states, sojourn,
    )


# ---------------------------------------------------------------------------
# model (de)serialisation


def model_to_dict(model: Model) -> dict:
    """Natural-scale parameters as plain lists."""
    em = model.emissions
    out: dict = {}
    if model.spec.kind == "hsmm":
        out["dwell_mean"] = [d.mean_coeffs.tolist() for d in model.dwells]
        if model.spec.dwell_family == "shifted-negative-binomial":
            out["dwell_dispersion"] = [d.dispersion_coeffs.tolist() for d in model.dwells]
        if model.omega is not None:
            out["omega_coeffs"] = model.omega.coeffs.tolist()
    else:
        out["gamma_coeffs"] = model.gamma_coeffs.tolist()
    out["step_mean"] = em.step_mean.tolist()
    out["step_sd"] = em.step_sd.tolist()
    out["angle_kappa"] = em.angle_kappa.tolist()
    out["angle_mean"] = em.angle_mean.tolist()
    return out


_PARAM_KEYS = {
    "dwell_mean", "dwell_dispersion", "omega", "omega_coeffs", "gamma_coeffs",
    "step_mean", "step_sd", "angle_kappa", "angle_mean",
}


def model_from_dict(spec: ModelSpec, d: dict) -> Model:
    """Inverse of :func:`model_to_dict`; ``omega`` may be given as a plain matrix."""
    _reject_unknown(d, _PARAM_KEYS, "parameters")
    N, L = spec.n_states, spec.cycle_length
    try:
        em = EmissionSpec(
            np.asarray(d["step_mean"], float),
            np.asarray(d["step_sd"], float),
            np.asarray(d["angle_kappa"], float),
            None if d.get("angle_mean") is None else np.asarray(d["angle_mean"], float),
        )
    except KeyError as exc:
        raise ConfigurationError(f"parameters: missing {exc.args[0]!r}") from None
    if em.step_mean.size != N:
        raise ConfigurationError(f"parameters: need {N} emission values per field")
    if spec.kind == "hmm":
        if "gamma_coeffs" not in d:
            raise ConfigurationError("parameters: hmm models need 'gamma_coeffs'")
        g = np.asarray(d["gamma_coeffs"], float)
        if g.ndim == 2:
            g = g[..., None]
        return Model(spec, emissions=em, gamma_coeffs=g)
    if "dwell_mean" not in d:
        raise ConfigurationError("parameters: hsmm models need 'dwell_mean'")
    mean = [np.atleast_1d(np.asarray(c, float)) for c in d["dwell_mean"]]
    disp = [np.atleast_1d(np.asarray(c, float)) for c in d.get("dwell_dispersion", [[]] * N)]
    if len(mean) != N or len(disp) != N:
        raise ConfigurationError(f"parameters: need dwell coefficients for {N} states")
    periodic = any(c.size > 1 for c in mean + disp)
    dwells = [DwellSpec(spec.dwell_family, m, p, L if periodic else 1) for m, p in zip(mean, disp)]
    if "omega_coeffs" in d:
        c = np.asarray(d["omega_coeffs"], float)
        omega = ConditionalTPMSpec(c, (c.shape[2] - 1) // 2, L)
    elif "omega" in d:
        omega = ConditionalTPMSpec.from_matrix(np.asarray(d["omega"], float), L)
        omega = ConditionalTPMSpec(omega.coeffs, 0, L)
    elif N == 2:
        omega = ConditionalTPMSpec(np.zeros((2, 2, 1)), 0, L)
    else:
        raise ConfigurationError("parameters: need 'omega' or 'omega_coeffs' for N >= 3")
    return Model(spec, dwells, omega, em)


def save_fitted(path, fitted: FittedModel) -> Path:
    doc = {
        "spec": fitted.spec.to_dict(),
        "parameters": model_to_dict(fitted.model),
        "working": {"names": fitted.spec.param_names(), "theta": fitted.theta_hat.tolist()},
        "loglik": fitted.loglik,
        "n_params": fitted.n_params,
        "n_obs": fitted.n_obs,
        "aic": fitted.aic,
        "bic": fitted.bic,
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "grad_norm": fitted.grad_norm,
        "message": fitted.message,
    }
    if fitted.hessian is not None:
        doc["hessian"] = fitted.hessian.tolist()
    return atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_fitted(path) -> FittedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        spec = ModelSpec.from_dict(doc["spec"])
        theta = np.asarray(doc["working"]["theta"], float)
    except FileNotFoundError:
        raise ConfigurationError(f"fitted-model file not found: {path}") from None
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: malformed fitted-model file ({exc})") from None
    if theta.size != spec.n_params:
        raise ConfigurationError(f"{path}: working vector has {theta.size} entries, spec needs {spec.n_params}")
    hess = doc.get("hessian")
    return FittedModel(
        spec=spec,
        theta_hat=theta,
        loglik=float(doc.get("loglik", np.nan)),
        converged=bool(doc.get("converged", False)),
        iterations=int(doc.get("iterations", 0)),
        n_obs=int(doc.get("n_obs", 0)),
        hessian=None if hess is None else np.asarray(hess, float),
        grad_norm=float(doc.get("grad_norm", np.nan)),
        message=str(doc.get("message", "")),
    )


# ---------------------------------------------------------------------------
# configuration


def _reject_unknown(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where}: expected an object")
    bad = sorted(set(d) - set(allowed))
    if bad:
        raise ConfigurationError(f"{where}: unknown key(s) {bad}")


@dataclass
class ModelBlock:
    preset: str | None = None  # "reference" selects the simulation-study fixture
    factor: float = 1.3  # reference preset only: aggregate sizes = ceil(factor * q_0.995)
    n_states: int | None = None
    cycle_length: int = 1
    kind: str = "hsmm"
    dwell_family: str = "shifted-poisson"
    degree_mean: int = 0
    degree_dispersion: int = 0
    degree_omega: int = 0
    degree_gamma: int = 0
    sizes: list[int] | None = None
    quantile: float = 0.975
    size_cap: int = 200
    estimate_angle_mean: bool = False
    parameters: dict | None = None


@dataclass
class DataBlock:
    input: str | None = None
    fitted: str | None = None
    init: str | None = None
    length: int | None = None
    burn_in: int | None = None
    start_tod: int = 1
    record_truth: bool = True


@dataclass
class OutputBlock:
    dir: str = "."
    prefix: str = ""


@dataclass
class ExperimentBlock:
    preset: str = "consistency"
    n_replicates: int = 20
    lengths: list[int] = field(default_factory=lambda: [1000, 5000])
    factors: list[float] = field(default_factory=lambda: [0.5, 0.9])
    reference_factor: float = 1.3
    hmm_degree: int = 1


@dataclass
class RunConfig:
    command: str | None = None
    seed: int = 0
    jobs: int = 1
    model: ModelBlock = field(default_factory=ModelBlock)
    data: DataBlock = field(default_factory=DataBlock)
    optimizer: FitOptions = field(default_factory=FitOptions)
    output: OutputBlock = field(default_factory=OutputBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)

    def to_dict(self) -> dict:
        def dc(obj):
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        return {
            "command": self.command,
            "seed": self.seed,
            "jobs": self.jobs,
            "model": dc(self.model),
            "data": dc(self.data),
            "optimizer": dc(self.optimizer),
            "output": dc(self.output),
            "experiment": dc(self.experiment),
        }


COMMANDS = ("simulate", "fit", "decode", "stationary", "dwell", "experiment")
_BLOCKS = {
    "model": ModelBlock,
    "data": DataBlock,
    "optimizer": FitOptions,
    "output": OutputBlock,
    "experiment": ExperimentBlock,
}


def _block(cls, d: dict, where: str):
    names = {f.name: f for f in fields(cls)}
    _reject_unknown(d, names, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def parse_config(doc: dict) -> RunConfig:
    """Strictly parse a configuration document; unknown keys are errors."""
    _reject_unknown(doc, {"command", "seed", "jobs", *_BLOCKS}, "config")
    kw = {k: doc[k] for k in ("command", "seed", "jobs") if k in doc}
    if kw.get("command") is not None and kw["command"] not in COMMANDS:
        raise ConfigurationError(f"config: unknown command {kw['command']!r}")
    for k in ("seed", "jobs"):
        if k in kw and (not isinstance(kw[k], int) or isinstance(kw[k], bool)):
            raise ConfigurationError(f"config: {k} must be an integer")
    for name, cls in _BLOCKS.items():
        if name in doc:
            kw[name] = _block(cls, doc[name], name)
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc)


def build_model(block: ModelBlock) -> tuple[ModelSpec, Model | None]:
    """Spec (and, when parameters are given, a model) from a model block."""
    if block.preset is not None:
        if block.preset != "reference":
            raise ConfigurationError(f"model: unknown preset {block.preset!r}")
        m = reference_model(tuple(block.sizes) if block.sizes else None, block.factor)
        return m.spec, m
    if block.n_states is None:
        raise ConfigurationError("model: n_states is required without a preset")
    sizes = tuple(block.sizes) if block.sizes else None

    def spec_with(sz):
        return ModelSpec(
            n_states=block.n_states,
            cycle_length=block.cycle_length,
            kind=block.kind,
            dwell_family=block.dwell_family,
            degree_mean=block.degree_mean,
            degree_dispersion=block.degree_dispersion,
            degree_omega=block.degree_omega,
            degree_gamma=block.degree_gamma,
            sizes=sz if sz is not None else (1,) * block.n_states,
            estimate_angle_mean=block.estimate_angle_mean,
        )

    try:
        if block.parameters is None:
            if block.kind == "hsmm" and sizes is None:
                raise ConfigurationError("model: hsmm without parameters needs explicit 'sizes'")
            return spec_with(sizes), None
        provisional = spec_with(sizes)
        model = model_from_dict(provisional, block.parameters)
        if block.kind == "hsmm" and sizes is None:
            sizes = sizes_from_quantile(model.dwells, block.quantile, block.size_cap)
            spec = spec_with(sizes)
            model = Model(spec, model.dwells, model.omega, model.emissions)
            return spec, model
        return provisional, model
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"model: {exc}") from None


def default_start(spec: ModelSpec, data: ObservationSeries) -> np.ndarray:
    """Data-driven starting vector when no initial parameters are supplied.

    Step means at evenly spaced quantiles of the observed steps, sd equal to
    the mean, concentrations rising from 0.5 to 2, mean dwell 5 (or stay
    probability 0.8 for an HMM), uniform switching and zero trigonometric terms.
    """
    N, L = spec.n_states, spec.cycle_length
    steps = data.step[np.isfinite(data.step)]
    if steps.size == 0:
        raise DataError("no observed step lengths to derive starting values from")
    q = np.quantile(steps, (np.arange(N) + 0.5) / N)
    em = EmissionSpec(q, q.copy(), np.linspace(0.5, 2.0, N) if N > 1 else np.ones(1))
    if spec.kind == "hmm":
        g = np.zeros((N, N, 1 + 2 * spec.degree_gamma))
        if N > 1:
            g[..., 0] = np.log(0.2 / (N - 1) / 0.8)
        return spec.pack(Model(spec, emissions=em, gamma_coeffs=g))
    disp = np.array([np.log(0.5)]) if spec.dwell_family == "shifted-negative-binomial" else np.empty(0)
    dwells = [DwellSpec(spec.dwell_family, np.array([np.log(4.0)]), disp, 1) for _ in range(N)]
    omega = ConditionalTPMSpec(np.zeros((N, N, 1)), 0, L) if N > 1 else None
    return spec.pack(Model(spec, dwells, omega, em))


# ---------------------------------------------------------------------------
# tracks


def steps_and_angles(x, y) -> tuple[np.ndarray, np.ndarray]:
    """Planar step lengths and turning angles from a track of positions.

    ``step[k]`` is the Euclidean distance from position ``k`` to ``k + 1``
    (the last is NaN); ``angle[k]`` is the change of heading at position
    ``k``, wrapped into ``(-pi, pi]`` (the first is NaN, as is any angle next
    to a zero-length step).  Missing coordinates propagate as NaN.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("x and y must be 1-d arrays of equal length")
    n = x.size
    step = np.full(n, np.nan)
    angle = np.full(n, np.nan)
    if n < 2:
        return step, angle
    dx, dy = np.diff(x), np.diff(y)
    step[:-1] = np.hypot(dx, dy)
    heading = np.where(step[:-1] > 0, np.arctan2(dy, dx), np.nan)
    angle[1:-1] = wrap_angle(heading[1:] - heading[:-1])
    return step, angle
