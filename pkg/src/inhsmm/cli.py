"""Command-line front end.

Usage::

    inhsmm simulate   --config run.json [--length T] [--seed S] [--out-dir D]
    inhsmm fit        --config run.json [--data data.csv] [--init fitted.json]
    inhsmm decode     --fitted fitted.json --data data.csv
    inhsmm stationary --fitted fitted.json
    inhsmm dwell      --fitted fitted.json [--rmax R]
    inhsmm experiment --preset consistency [--replicates n] [--jobs J]

Exit codes: 0 success (a fit that did not converge still exits 0 and says so
in its output), 2 configuration or validation error, 3 data error, 4
numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import overall_dwell, viterbi
from .exceptions import ConfigurationError, DataError, DomainError, NumericalError, UnsupportedOperation
from .experiments import ExperimentConfig, run_experiment
from .inference import fit, periodic_stationary
from .io import (
    RunConfig,
    atomic_write_text,
    build_model,
    default_start,
    load_config,
    load_fitted,
    read_series,
    save_fitted,
    write_series,
    write_table,
)
from .model import Model
from .simulate import SimulationConfig, simulate, simulate_states

log = logging.getLogger("inhsmm")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inhsmm", description="Inhomogeneous hidden semi-Markov models.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out-dir", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a data set")
    s.add_argument("--length", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--no-truth", action="store_true", help="omit true states")

    f = sub.add_parser("fit", parents=[common], help="fit a model by maximum likelihood")
    f.add_argument("--data", type=Path)
    f.add_argument("--init", type=Path, help="fitted-model file used as starting values")
    f.add_argument("--hessian", action="store_true")

    d = sub.add_parser("decode", parents=[common], help="Viterbi decoding")
    d.add_argument("--data", type=Path)
    d.add_argument("--fitted", type=Path)

    st = sub.add_parser("stationary", parents=[common], help="periodically stationary state probabilities")
    st.add_argument("--fitted", type=Path)

    dw = sub.add_parser("dwell", parents=[common], help="dwell-time distributions")
    dw.add_argument("--fitted", type=Path)
    dw.add_argument("--rmax", type=int, default=200, help="support used for hmm models")

    e = sub.add_parser("experiment", parents=[common], help="simulation-study presets")
    e.add_argument("--preset")
    e.add_argument("--replicates", type=int)
    return p


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if cfg.command is not None and cfg.command != args.command:
        raise ConfigurationError(f"config is for command {cfg.command!r}, not {args.command!r}")
    cfg.command = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out_dir is not None:
        cfg.output.dir = str(args.out_dir)
    a = vars(args)
    if a.get("length") is not None:
        cfg.data.length = args.length
    if a.get("burn_in") is not None:
        cfg.data.burn_in = args.burn_in
    if a.get("no_truth"):
        cfg.data.record_truth = False
    if a.get("data") is not None:
        cfg.data.input = str(args.data)
    if a.get("init") is not None:
        cfg.data.init = str(args.init)
    if a.get("fitted") is not None:
        cfg.data.fitted = str(args.fitted)
    if a.get("hessian"):
        cfg.optimizer = replace(cfg.optimizer, hessian=True)
    if a.get("preset") is not None:
        cfg.experiment.preset = args.preset
    if a.get("replicates") is not None:
        cfg.experiment.n_replicates = args.replicates
    if cfg.jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    return cfg


def _out(cfg: RunConfig, name: str) -> Path:
    return Path(cfg.output.dir) / f"{cfg.output.prefix}{name}"


def _echo(cfg: RunConfig):
    text = json.dumps(cfg.to_dict(), indent=2, default=lambda o: list(o) if isinstance(o, tuple) else str(o))
    print(f"# resolved configuration\n{text}", file=sys.stderr)
    atomic_write_text(_out(cfg, f"{cfg.command}.config.json"), text + "\n")


def _model_for_analysis(cfg: RunConfig) -> Model:
    if cfg.data.fitted:
        return load_fitted(cfg.data.fitted).model
    _, model = build_model(cfg.model)
    if model is None:
        raise ConfigurationError("need --fitted or model parameters in the config")
    return model


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    _, model = build_model(cfg.model)
    if model is None:
        raise ConfigurationError("simulate needs model parameters (or model.preset)")
    if cfg.data.length is None:
        raise ConfigurationError("simulate needs data.length (or --length)")
    sc = SimulationConfig(
        model, cfg.data.length, seed=cfg.seed, burn_in=cfg.data.burn_in,
        record_truth=cfg.data.record_truth, start_tod=cfg.data.start_tod,
    )
    data = simulate(sc)
    path = write_series(_out(cfg, "data.csv"), data, truth=cfg.data.record_truth)
    if cfg.data.record_truth:
        sojourns = simulate_states(sc).sojourns
        write_table(
            _out(cfg, "sojourns.csv"),
            [{"sojourn": k + 1, "state": s, "entry_tod": t, "length": n} for k, (s, t, n) in enumerate(sojourns)],
        )
    print(f"wrote {len(data)} rows to {path}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    init_fit = load_fitted(cfg.data.init) if cfg.data.init else None
    if cfg.model.preset is None and cfg.model.n_states is None:
        if init_fit is None:
            raise ConfigurationError("fit needs a model block or --init")
        spec, start_model = init_fit.spec, None
    else:
        spec, start_model = build_model(cfg.model)
    if not cfg.data.input:
        raise ConfigurationError("fit needs data.input (or --data)")
    data = read_series(cfg.data.input, spec.cycle_length)
    if init_fit is not None:
        if init_fit.spec != spec:
            raise ConfigurationError("--init was fitted with a different model specification")
        theta0 = init_fit.theta_hat
    elif start_model is not None:
        theta0 = spec.pack(start_model)
    else:
        theta0 = default_start(spec, data)
    fitted = fit(spec, data, theta0, cfg.optimizer)
    save_fitted(_out(cfg, "fitted.json"), fitted)
    summary = {
        "loglik": fitted.loglik,
        "n_params": fitted.n_params,
        "n_obs": fitted.n_obs,
        "aic": fitted.aic,
        "bic": fitted.bic,
        "converged": fitted.converged,
        "iterations": fitted.iterations,
        "grad_norm": fitted.grad_norm,
    }
    write_table(_out(cfg, "summary.csv"), [summary])
    se = fitted.standard_errors() if fitted.hessian is not None else None
    rows = []
    for k, name in enumerate(spec.param_names()):
        r = {"parameter": name, "estimate": float(fitted.theta_hat[k])}
        if se is not None:
            r["se"] = float(se[k])
        rows.append(r)
    write_table(_out(cfg, "parameters.csv"), rows)
    status = "converged" if fitted.converged else "NOT converged"
    print(f"loglik={fitted.loglik:.4f} p={fitted.n_params} AIC={fitted.aic:.2f} BIC={fitted.bic:.2f} ({status})")
    return EXIT_OK


def cmd_decode(cfg: RunConfig) -> int:
    model = _model_for_analysis(cfg)
    if not cfg.data.input:
        raise ConfigurationError("decode needs data.input (or --data)")
    data = read_series(cfg.data.input, model.cycle_length)
    dec = viterbi(model, data)
    rows = []
    for k in range(len(data)):
        r = {"t": k + 1, "tod": int(data.tod[k]), "decoded": int(dec.states[k])}
        if data.states is not None:
            r["state"] = int(data.states[k])
        rows.append(r)
    path = write_table(_out(cfg, "decoded.csv"), rows)
    print(f"wrote {len(rows)} decoded rows to {path}")
    return EXIT_OK


def cmd_stationary(cfg: RunConfig) -> int:
    model = _model_for_analysis(cfg)
    delta = periodic_stationary(model.gammas)
    agg = np.stack([model.layout.aggregate_sum(d) for d in delta])
    N = model.spec.n_states
    rows = [{"tod": t + 1, **{f"state{i + 1}": float(agg[t, i]) for i in range(N)}} for t in range(agg.shape[0])]
    path = write_table(_out(cfg, "stationary.csv"), rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_dwell(cfg: RunConfig, rmax: int = 200) -> int:
    model = _model_for_analysis(cfg)
    summ = overall_dwell(model, rmax_mean=max(rmax, 2000))
    L = model.cycle_length
    N = model.spec.n_states
    support = list(summ.sizes) if model.spec.kind == "hsmm" else [rmax] * N
    surf = model.dwell_pmf_surface(max(support))
    surface, weights, overall, summary = [], [], [], []
    for i in range(N):
        n = support[i]
        for t in range(L):
            p = surf[i, t, :n]
            surface += [{"state": i + 1, "t": t + 1, "r": r + 1, "pmf": float(p[r])} for r in range(n)]
            weights.append({
                "state": i + 1, "t": t + 1, "weight": float(summ.weights[i, t]),
                "tail": max(0.0, 1.0 - float(p.sum())),
            })
        ov = summ.pmf[i][:n]
        overall += [{"state": i + 1, "r": r + 1, "pmf": float(ov[r])} for r in range(n)]
        summary.append({
            "state": i + 1, "support": n, "tail": max(0.0, 1.0 - float(ov.sum())), "mean": float(summ.mean[i]),
        })
    write_table(_out(cfg, "dwell_surface.csv"), surface)
    write_table(_out(cfg, "dwell_weights.csv"), weights)
    write_table(_out(cfg, "dwell_overall.csv"), overall)
    write_table(_out(cfg, "dwell_summary.csv"), summary)
    print(f"wrote dwell tables to {Path(cfg.output.dir)}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig) -> int:
    e = cfg.experiment
    ec = ExperimentConfig(
        preset=e.preset,
        n_replicates=e.n_replicates,
        lengths=tuple(e.lengths),
        factors=tuple(e.factors),
        reference_factor=e.reference_factor,
        hmm_degree=e.hmm_degree,
        seed=cfg.seed,
        jobs=cfg.jobs,
        fit_options=cfg.optimizer,
    )
    rows = run_experiment(ec)
    path = write_table(_out(cfg, f"experiment_{e.preset}.csv"), rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        _echo(cfg)
        if args.command == "dwell":
            return cmd_dwell(cfg, args.rmax)
        handler = {
            "simulate": cmd_simulate,
            "fit": cmd_fit,
            "decode": cmd_decode,
            "stationary": cmd_stationary,
            "experiment": cmd_experiment,
        }[args.command]
        return handler(cfg)
    except (ConfigurationError, DomainError, UnsupportedOperation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
