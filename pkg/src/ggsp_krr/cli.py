"""``ggsp-krr`` command line.

Every subcommand writes newline-delimited JSON records to ``--out`` (or
stdout).  Exit codes: 0 success, 1 usage error, 2 bad input data,
3 numerical failure.  ``--config`` names a JSON document whose keys fill
in any option not given on the command line.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .baselines import (
    gtrss_as_krr_check,
    load_gtrss_instance,
    online_gtrss,
    solve_gtrss,
)
from .errors import DataError, InvalidParameter, NumericalError, ParseError
from .graph import (
    Graph,
    hop_neighborhood,
    path_graph,
    read_edge_list,
    ring_graph,
    write_edge_list,
)
from .harness import (
    ExperimentConfig,
    apply_param,
    correlation_graph,
    grid_search,
    ingest_samples,
    run_synthetic,
    write_samples,
)
from .kernels import gtrss_prior_correlation, kernel_from_spec
from .online_rff import (
    RffPredictor,
    build_feature_map,
    checkpoint_from_json,
    checkpoint_to_json,
    default_step,
)
from .reconstruct import (
    GaussianPosterior,
    SampleSet,
    fit_krr,
    model_from_json,
    model_to_json,
    predict,
    predict_localized,
)
from .variance import (
    draw_exclusive_plan,
    empirical_posterior_variance,
    interval_ball_ratio,
    l_value,
    limit_variance_discretized,
    make_grid,
    sample_gp,
    var_bound,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class _Emitter:
    def __init__(self, path: str | None):
        self._fh = open(path, "w") if path else sys.stdout
        self._own = bool(path)

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(record, default=_json_default) + "\n")

    def close(self) -> None:
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _opt(args, name: str, default=None):
    """Command-line value, else ``--config`` value, else ``default``."""
    val = getattr(args, name, None)
    if val is not None:
        return val
    return args.config_doc.get(name, default)


def _need(args, name: str):
    val = _opt(args, name)
    if val is None:
        raise UsageError(f"missing required option --{name.replace('_', '-')}")
    return val


def _load_json_arg(text) -> Any:
    if isinstance(text, (dict, list)):
        return text
    p = Path(text)
    if p.is_file():
        return json.loads(p.read_text())
    return json.loads(text)


def _graph(args) -> Graph:
    spec = str(_need(args, "graph"))
    for prefix, maker in (("path:", path_graph), ("ring:", ring_graph)):
        if spec.startswith(prefix):
            return maker(int(spec[len(prefix):]))
    return read_edge_list(spec, gso=_opt(args, "gso", "laplacian"))


def _kernel(args, g: Graph):
    return kernel_from_spec(_load_json_arg(_need(args, "kernel")), g)


def _queries(args, kernel) -> tuple[np.ndarray, np.ndarray]:
    qpath = _opt(args, "queries")
    if qpath:
        rows = []
        with open(qpath, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["vertex", "time"]:
                raise ParseError("query header must start with vertex,time", 1)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append((int(row[0]), float(row[1])))
                except (ValueError, IndexError):
                    raise ParseError(f"cannot parse query {row!r}", lineno) from None
        v = np.array([r[0] for r in rows], dtype=int)
        t = np.array([r[1] for r in rows], dtype=float)
    else:
        v = np.atleast_1d(np.asarray(_need(args, "vertex"), dtype=int))
        t = np.atleast_1d(np.asarray(_need(args, "time"), dtype=float))
        v, t = np.broadcast_arrays(v, t)
    kernel.check_vertices(v)
    kernel.time.check(t)
    return v, t


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args, emit):
    g = _graph(args)
    kernel = _kernel(args, g)
    samples = ingest_samples(_need(args, "samples"), g, kernel.domain)
    model = fit_krr(kernel, samples, float(_need(args, "mu")))
    model_path = _opt(args, "model")
    if model_path:
        Path(model_path).write_text(model_to_json(model))
    emit({"samples": len(samples), "mu": model.ridge, "residual": model.residual(),
          "model": model_path, "kernel": kernel.to_spec()})


def cmd_predict(args, emit):
    model = model_from_json(Path(_need(args, "model")).read_text())
    v, t = _queries(args, model.kernel)
    local = bool(_opt(args, "localized", False))
    if local:
        vals = [predict_localized(model, int(a), float(b)) for a, b in zip(v, t)]
    else:
        vals = predict(model, v, t)
    for a, b, p in zip(v, t, vals):
        emit({"vertex": int(a), "time": float(b), "prediction": float(p)})


def cmd_variance(args, emit):
    g = _graph(args)
    kernel = _kernel(args, g)
    samples = ingest_samples(_need(args, "samples"), g, kernel.domain)
    post = GaussianPosterior(kernel, samples, float(_need(args, "sigma2")))
    v, t = _queries(args, kernel)
    for a, b, m, s in zip(v, t, post.mean(v, t), post.variance(v, t)):
        emit({"vertex": int(a), "time": float(b), "mean": float(m), "variance": float(s)})


def cmd_online(args, emit):
    ckpt = _opt(args, "checkpoint")
    if ckpt and Path(ckpt).is_file():
        pred = checkpoint_from_json(Path(ckpt).read_text())
        g = pred.feature_map.kernel.graph.graph
        samples = ingest_samples(_need(args, "samples"), g, pred.feature_map.kernel.domain)
    else:
        g = _graph(args)
        kernel = _kernel(args, g)
        samples = ingest_samples(_need(args, "samples"), g, kernel.domain)
        fmap = build_feature_map(kernel, int(_opt(args, "features", 256)),
                                 int(_opt(args, "seed", 0)))
        horizon = int(_opt(args, "horizon", max(len(samples), 1)))
        theta = _opt(args, "theta")
        theta = float(theta) if theta is not None else default_step(fmap, samples)
        pred = RffPredictor(fmap, float(_need(args, "mu")), horizon, theta)
    epochs = int(_opt(args, "epochs", 1))
    i = 0
    for epoch in range(epochs):
        for v, t, y in samples:
            p, e = pred.sgd_step(v, t, y)
            emit({"index": i, "epoch": epoch, "vertex": v, "time": t, "value": y,
                  "prediction": p, "error": e})
            i += 1
    emit({"summary": True, "updates": pred.update_count, "objective": pred.objective(samples)})
    save = _opt(args, "save_checkpoint") or ckpt
    if save:
        Path(save).write_text(checkpoint_to_json(pred))


def cmd_gtrss(args, emit):
    stream_path = _opt(args, "stream")
    if stream_path:
        g = _graph(args)
        samples = ingest_samples(stream_path, g)
        order = np.argsort(samples.times, kind="stable")
        stream = ((float(samples.times[k]), int(samples.vertices[k]), float(samples.values[k]))
                  for k in order)
        for date, v, y, p, e in online_gtrss(
                g, stream, float(_need(args, "mu")), float(_need(args, "lam")),
                float(_opt(args, "alpha", 1.0)), float(_opt(args, "beta", 1.0)),
                int(_opt(args, "iterations", 1))):
            emit({"time": date, "vertex": v, "value": y, "prediction": p, "error": e})
        return
    prob = load_gtrss_instance(_need(args, "instance"))
    X = solve_gtrss(prob)
    for v in range(prob.N):
        for t in range(prob.T):
            emit({"vertex": v, "time": t + 1, "value": float(X[v, t])})
    if _opt(args, "check", False):
        emit({"krr_discrepancy": gtrss_as_krr_check(prob)})


def cmd_gtrss_corr(args, emit):
    T = int(_need(args, "T"))
    delta0 = float(_opt(args, "delta0", 1e-5))
    if _opt(args, "curve", False):
        Ts, k = [], 2
        while k <= T:
            Ts.append(k)
            k *= 2
    else:
        Ts = [T]
    for k in Ts:
        emit({"T": k, "delta0": delta0, "correlation": gtrss_prior_correlation(k, delta0)})


def cmd_simulate(args, emit):
    g = _graph(args)
    kernel = _kernel(args, g)
    seed = int(_opt(args, "seed", 0))
    grid = make_grid(kernel, int(_opt(args, "G", 64)))
    f = sample_gp(grid, [seed, 0])
    rng = np.random.default_rng([seed, 1])
    ratio = float(_opt(args, "noise_ratio", 0.0))
    rho = float(_opt(args, "observe", 1.0))
    if not 0 < rho <= 1 or ratio < 0:
        raise InvalidParameter("need observe in (0, 1] and noise_ratio >= 0")
    sigma2 = ratio * float(np.mean(f**2))
    y = f + rng.normal(0.0, math.sqrt(sigma2), size=f.size) if sigma2 > 0 else f.copy()
    n_obs = max(1, int(round(rho * f.size)))
    observed = np.zeros(f.size, dtype=bool)
    observed[rng.choice(f.size, size=n_obs, replace=False)] = True
    verts = np.repeat(np.arange(g.N), grid.G)
    times = np.tile(grid.time_grid, g.N)
    for k in range(f.size):
        emit({"vertex": int(verts[k]), "time": float(times[k]), "signal": float(f[k]),
              "value": float(y[k]), "observed": bool(observed[k])})
    csv_path = _opt(args, "csv")
    if csv_path:
        write_samples(SampleSet(verts[observed], times[observed], y[observed]), csv_path,
                      hexfloat=bool(_opt(args, "hexfloat", False)))


def cmd_limit_var(args, emit):
    g = _graph(args)
    kernel = _kernel(args, g)
    v0 = g.check_vertex(int(_opt(args, "v0", 0)))
    t0 = float(_opt(args, "t0", 0.5))
    sigma2 = float(_opt(args, "sigma2", 0.1))
    d = int(_opt(args, "d", 1))
    c0 = float(_opt(args, "c0", 0.5))
    M0s = _opt(args, "M0", [10, 50, 200, 800])
    M0s = [int(m) for m in (M0s if isinstance(M0s, list) else [M0s])]
    trials = int(_opt(args, "trials", 1))
    seed = int(_opt(args, "seed", 0))
    grid = make_grid(kernel, int(_opt(args, "G", 64)))
    kernel.time.check(t0)
    # the limit is discretized: report it at the nearest grid node
    t_grid = float(grid.time_grid[np.argmin(np.abs(grid.time_grid - t0))])
    limit = limit_variance_discretized(grid, v0, t_grid)
    kt = float(kernel.time.diag(np.array([t0]))[0])
    lval = l_value(kernel.graph, v0, d)
    n_d = len(hop_neighborhood(g, v0, d))
    C_D = interval_ball_ratio(t0, kernel.domain)
    C = [float(_opt(args, name, 0.0)) for name in ("C1", "C2", "C3")]
    for trial in range(trials):
        tseed = seed * 1_000_003 + trial
        for M0 in M0s:
            plan = draw_exclusive_plan(g, v0, M0, kernel.domain, tseed, nested=True)
            var = empirical_posterior_variance(plan, kernel, sigma2, v0, t0)
            bound, prob = var_bound(kt, lval, M0, c0, 1, C_D, *C, N_d=n_d)
            emit({"M0": M0, "seed": tseed, "variance": var, "limit": limit,
                  "bound": bound, "probability": prob, "trial": trial, "l": lval,
                  "grid_time": t_grid})


def cmd_bound(args, emit):
    kt = float(_need(args, "kt"))
    lv = float(_need(args, "l"))
    M0 = float(_need(args, "M0"))
    c0 = float(_need(args, "c0"))
    D = int(_opt(args, "D", 1))
    CD = float(_opt(args, "CD", 1.0))
    Nd = int(_opt(args, "Nd", 1))
    C = [float(_opt(args, name, 0.0)) for name in ("C1", "C2", "C3")]
    bound, prob = var_bound(kt, lv, M0, c0, D, CD, *C, N_d=Nd)
    emit({"bound": bound, "probability": prob, "kt": kt, "l": lv, "M0": M0, "c0": c0,
          "D": D, "CD": CD, "Nd": Nd, "C1": C[0], "C2": C[1], "C3": C[2]})


def cmd_synthetic(args, emit):
    doc = dict(args.config_doc)
    search = doc.pop("search", None)
    for name in ("seed", "repetitions"):
        if getattr(args, name, None) is not None:
            doc[name] = getattr(args, name)
    if args.graph is not None:
        doc["graph"] = args.graph
    cfg = ExperimentConfig.from_dict(doc)
    if search:
        best, records = grid_search(cfg, search)
        for params, err in records:
            emit({"params": params, "mean_relative_error": err})
        emit({"best": best})
        for k, v in best.items():
            apply_param(cfg, k, v)
    report = run_synthetic(cfg)
    for rec in report.records():
        emit(rec)
    emit({"summary": report.summary()})
    csv_path = _opt(args, "csv")
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            methods = list(report.errors)
            w.writerow(["repetition"] + methods)
            for r in range(report.repetitions):
                w.writerow([r] + [repr(report.errors[m][r]) for m in methods])


def cmd_corr_graph(args, emit):
    rows = []
    with open(_need(args, "values"), newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(x) if x.strip() else math.nan for x in row])
    g = correlation_graph(np.array(rows), float(_opt(args, "threshold", 0.5)))
    out_graph = _opt(args, "graph_out")
    if out_graph:
        write_edge_list(g, out_graph)
    emit({"vertices": g.N, "edges": len(g.edges), "graph": out_graph})


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--out", help="NDJSON output file (default stdout)")


def _model_opts(p, samples=True):
    p.add_argument("--graph", help="edge-list file, or path:N / ring:N")
    p.add_argument("--gso", choices=["laplacian", "normalized"])
    p.add_argument("--kernel", help="kernel spec as JSON text or file")
    if samples:
        p.add_argument("--samples", help="CSV with header vertex,time,value")


def _query_opts(p):
    p.add_argument("--queries", help="CSV with header vertex,time")
    p.add_argument("--vertex", type=int, nargs="+")
    p.add_argument("--time", type=float, nargs="+")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ggsp-krr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit batch KRR and save the model")
    _common(p)
    _model_opts(p)
    p.add_argument("--mu", type=float)
    p.add_argument("--model", help="where to write the model JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="evaluate a saved model")
    _common(p)
    p.add_argument("--model")
    _query_opts(p)
    p.add_argument("--localized", action="store_true", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("variance", help="GP posterior mean and variance")
    _common(p)
    _model_opts(p)
    p.add_argument("--sigma2", type=float)
    _query_opts(p)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("online", help="streaming RFF predictor")
    _common(p)
    _model_opts(p)
    p.add_argument("--features", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint", help="resume from (and save back to) this file")
    p.add_argument("--save-checkpoint", dest="save_checkpoint")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("gtrss", help="GTRSS baseline (batch instance or online stream)")
    _common(p)
    p.add_argument("--instance", help="GTRSS instance JSON")
    p.add_argument("--check", action="store_true", default=None,
                   help="also report the KRR-equivalence discrepancy")
    p.add_argument("--graph")
    p.add_argument("--stream", help="CSV stream for the online variant")
    p.add_argument("--mu", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_gtrss)

    p = sub.add_parser("gtrss-corr", help="prior correlation of the GTRSS time kernel")
    _common(p)
    p.add_argument("--T", type=int)
    p.add_argument("--delta0", type=float)
    p.add_argument("--curve", action="store_true", default=None,
                   help="emit every power of two up to T")
    p.set_defaults(func=cmd_gtrss_corr)

    p = sub.add_parser("simulate", help="draw a GP realization on a grid")
    _common(p)
    _model_opts(p, samples=False)
    p.add_argument("--G", type=int)
    p.add_argument("--noise-ratio", dest="noise_ratio", type=float)
    p.add_argument("--observe", type=float, help="observed fraction")
    p.add_argument("--csv", help="write the observed samples as CSV")
    p.add_argument("--hexfloat", action="store_true", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("limit-var", help="posterior variance under exclusive sampling")
    _common(p)
    _model_opts(p, samples=False)
    p.add_argument("--v0", type=int)
    p.add_argument("--t0", type=float)
    p.add_argument("--M0", type=int, nargs="+")
    p.add_argument("--trials", type=int)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--c0", type=float)
    p.add_argument("--G", type=int)
    for name in ("C1", "C2", "C3"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_limit_var)

    p = sub.add_parser("bound", help="evaluate the variance bound and its probability")
    _common(p)
    p.add_argument("--l", type=float)
    p.add_argument("--kt", type=float)
    p.add_argument("--M0", type=float)
    p.add_argument("--c0", type=float)
    p.add_argument("--D", type=int)
    p.add_argument("--CD", type=float)
    p.add_argument("--Nd", type=int)
    for name in ("C1", "C2", "C3"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("synthetic", help="repeated GP reconstruction experiment")
    _common(p)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--graph")
    p.add_argument("--csv", help="plot-ready per-repetition CSV")
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("corr-graph", help="threshold a correlation matrix into a graph")
    _common(p)
    p.add_argument("--values", help="CSV, one row per vertex, blank for missing")
    p.add_argument("--threshold", type=float)
    p.add_argument("--graph-out", dest="graph_out")
    p.set_defaults(func=cmd_corr_graph)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    emit = None
    try:
        args = parser.parse_args(argv)
        args.config_doc = {}
        if args.config:
            try:
                args.config_doc = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise DataError(f"cannot read config {args.config}: {exc}") from None
            if not isinstance(args.config_doc, dict):
                raise DataError("config must be a JSON object")
        emit = _Emitter(args.out)
        args.func(args, emit)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if emit is not None:
            emit.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
