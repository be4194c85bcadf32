"""Command-line front end.

Four commands: ``select`` (run the randomized selection on a CSV dataset),
``infer`` (select, then invert pivots into per-coordinate intervals for the
requested methods), ``simulate`` (run a Monte-Carlo study from a config
file), and ``validate`` (pivot-uniformity check).  Outputs are UTF-8 JSON
with keys in fixed order and RFC-4180 CSV; identical command and seed give
byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .conditioning import build_geometry, build_target
from .errors import ExactSIError, InvalidArgumentError
from .inference import (
    invert_pivot,
    pivot_params,
    plug_in_sigma2,
    polyhedral_interval,
    split_inference,
    uv_inference,
)
from .numerics import DEFAULT_QUADRATURE, QuadratureSpec
from .selection import (
    Dataset,
    RandomizationScheme,
    default_epsilon,
    lasso_event_rep,
    sample_randomization,
    solve_randomized_lasso,
    tau2_from_split,
)
from .study import (
    CSV_COLUMNS,
    KNOWN_METHODS,
    SimConfig,
    run_study,
    theory_lambda,
    validate_pivot_uniformity,
)


def read_csv_dataset(
    path: str, response: str = "y", standardize: bool = False, sigma: float | None = None
) -> tuple[Dataset, list[str]]:
    """Load a header-carrying numeric CSV; every non-response column is a feature."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file") from None
        if response not in header:
            raise InvalidArgumentError(
                f"{path}: response column {response!r} not in header {header}"
            )
        ridx = header.index(response)
        names = [h for i, h in enumerate(header) if i != ridx]
        ys, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidArgumentError(
                    f"{path}: row {line_no} has {len(row)} fields, expected {len(header)}"
                )
            vals = []
            for col, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InvalidArgumentError(
                        f"{path}: row {line_no}, column {col!r}: "
                        f"not numeric: {cell!r}"
                    ) from None
            ys.append(vals[ridx])
            rows.append([v for i, v in enumerate(vals) if i != ridx])
    X = np.asarray(rows, dtype=float)
    y = np.asarray(ys, dtype=float)
    if standardize:
        X = X - X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        X = X / scale
    return Dataset(y=y, X=X, sigma=sigma), names


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_csv(rows: list[dict], columns, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row[c] for c in columns])


def _sigma2_estimates(data: Dataset, model: str, E: np.ndarray) -> tuple[float, float]:
    """(pre-selection variance for the randomization scale, model plug-in)."""
    if data.sigma is not None:
        return data.sigma**2, data.sigma**2
    if data.n > data.p:
        pre = plug_in_sigma2(data, np.arange(data.p), "full")
    else:
        pre = float(np.var(data.y, ddof=1))
    post = plug_in_sigma2(data, E, model) if model == "selected" else pre
    return pre, post


def _resolve_tau2(args, data: Dataset, sigma2_pre: float) -> tuple[float, float | None]:
    if (args.tau2 is None) == (args.rho is None):
        raise InvalidArgumentError("give exactly one of --rho or --tau2")
    if args.tau2 is not None:
        if not args.tau2 > 0:
            raise InvalidArgumentError("--tau2 must be positive")
        return args.tau2, None
    n1 = int(round(args.rho * data.n))
    return tau2_from_split(sigma2_pre, data.n, n1), args.rho


def _run_selection(args, data: Dataset):
    sigma2_pre, _ = _sigma2_estimates(data, args.model, np.zeros(0, dtype=int))
    lam = args.lam if args.lam is not None else theory_lambda(data.X, math.sqrt(sigma2_pre))
    tau2, _ = _resolve_tau2(args, data, sigma2_pre)
    epsilon = args.epsilon if args.epsilon is not None else default_epsilon(data)
    scheme = RandomizationScheme(kind="carving", tau2=tau2)
    w = sample_randomization(scheme, data.X, seed=args.seed)
    outcome = solve_randomized_lasso(data, lam=lam, epsilon=epsilon, w=w)
    return outcome, scheme, lam, epsilon, tau2, sigma2_pre


def cmd_select(args) -> int:
    data, names = read_csv_dataset(args.input, args.response, args.standardize, args.sigma)
    outcome, _, lam, epsilon, tau2, sigma2_pre = _run_selection(args, data)
    if outcome.selected.size:
        rep = lasso_event_rep(data, outcome, lam=lam, epsilon=epsilon)
        kkt = rep.reconstruction_residual()
    else:
        kkt = 0.0
    report = {
        "command": "select",
        "input": args.input,
        "n": data.n,
        "p": data.p,
        "lambda": lam,
        "epsilon": epsilon,
        "tau2": tau2,
        "sigma2_hat": sigma2_pre,
        "seed": args.seed,
        "selected_count": int(outcome.selected.size),
        "selected": [names[j] for j in outcome.selected],
        "selected_indices": [int(j) for j in outcome.selected],
        "signs": [int(s) for s in outcome.signs],
        "active_solution": [float(v) for v in outcome.active_solution],
        "kkt_residual": kkt,
    }
    _write_json(report, args.out)
    return 0


def _infer_rows(args, data: Dataset, names: list[str]) -> list[dict]:
    quad = QuadratureSpec(
        half_width_sigmas=args.quad_width, n_points=args.quad_points
    ) if (args.quad_width, args.quad_points) != (
        DEFAULT_QUADRATURE.half_width_sigmas,
        DEFAULT_QUADRATURE.n_points,
    ) else DEFAULT_QUADRATURE
    sigma2_pre, _ = _sigma2_estimates(data, args.model, np.zeros(0, dtype=int))
    lam = args.lam if args.lam is not None else theory_lambda(data.X, math.sqrt(sigma2_pre))
    rows: list[dict] = []

    def add(est, label=None, error=""):
        label = est.target_label if est is not None else label
        rows.append(
            {
                "method": method,
                "feature": names[label] if label is not None and label >= 0 else "",
                "index": label if label is not None else -1,
                "lower": est.lower if est else math.nan,
                "upper": est.upper if est else math.nan,
                "level": 1.0 - args.alpha,
                "significant": int(not est.covers(0.0)) if est else -1,
                "clipped": int(est.clipped) if est else 0,
                "error": error,
            }
        )

    for method in args.method:
        if method == "exact":
            outcome, scheme, lam_m, epsilon, tau2, _ = _run_selection(args, data)
            E = outcome.selected
            if E.size == 0:
                continue
            rep = lasso_event_rep(data, outcome, lam=lam_m, epsilon=epsilon)
            omega = scheme.covariance(data.X)
            _, sigma2_post = _sigma2_estimates(data, args.model, E)
            for j in range(E.size):
                try:
                    target = build_target(data, outcome, args.model, j)
                    geom = build_geometry(rep, omega, target, outcome)
                    params = pivot_params(
                        data, rep, omega, geom, target, sigma=math.sqrt(sigma2_post)
                    )
                    add(invert_pivot(params, args.alpha, quad, target_label=int(E[j])))
                except ExactSIError as exc:
                    add(None, label=int(E[j]), error=str(exc))
        elif method == "polyhedral":
            outcome = solve_randomized_lasso(data, lam=lam, epsilon=0.0, w=np.zeros(data.p))
            E = outcome.selected
            if E.size == 0:
                continue
            _, sigma2_post = _sigma2_estimates(data, args.model, E)
            for j in range(E.size):
                try:
                    target = build_target(data, outcome, args.model, j)
                    add(
                        polyhedral_interval(
                            data,
                            E,
                            outcome.signs,
                            target,
                            math.sqrt(sigma2_post),
                            lam,
                            args.alpha,
                            target_label=int(E[j]),
                        )
                    )
                except ExactSIError as exc:
                    add(None, label=int(E[j]), error=str(exc))
        elif method == "split":
            if args.rho is None:
                raise InvalidArgumentError("split inference needs --rho")
            for est in split_inference(
                data, args.rho, args.rho * lam, args.alpha, args.model, args.seed
            ):
                add(est)
        elif method == "uv":
            if args.rho is None:
                raise InvalidArgumentError("uv inference needs --rho")
            f = (1.0 - args.rho) / args.rho
            for est in uv_inference(
                data, f, math.sqrt(1.0 + f) * lam, args.alpha, args.model, args.seed
            ):
                add(est)
        else:
            raise InvalidArgumentError(f"unknown method {method!r}")
    return rows


INFER_COLUMNS = (
    "method",
    "feature",
    "index",
    "lower",
    "upper",
    "level",
    "significant",
    "clipped",
    "error",
)


def cmd_infer(args) -> int:
    data, names = read_csv_dataset(args.input, args.response, args.standardize, args.sigma)
    rows = _infer_rows(args, data, names)
    per_method = {}
    for method in args.method:
        good = [r for r in rows if r["method"] == method and not r["error"]]
        per_method[method] = {
            "intervals": len(good),
            "errors": sum(1 for r in rows if r["method"] == method and r["error"]),
            "mean_length": (
                float(np.mean([r["upper"] - r["lower"] for r in good])) if good else math.nan
            ),
            "significant": sum(r["significant"] == 1 for r in good),
        }
    report = {
        "command": "infer",
        "input": args.input,
        "model": args.model,
        "alpha": args.alpha,
        "seed": args.seed,
        "methods": per_method,
        "rows": rows,
    }
    if args.out:
        _write_json(report, args.out + ".json")
        _write_csv(rows, INFER_COLUMNS, args.out + ".csv")
    else:
        _write_json(report, None)
    return 0


def parse_config_file(path: str) -> dict:
    """key = value lines; [section] headers and #-comments are skipped."""
    out: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise InvalidArgumentError(f"{path}: line {line_no}: expected key = value")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = val
    return out


_CONFIG_FIELDS = {
    "n": int,
    "p": int,
    "sparsity": int,
    "signal_fraction": float,
    "rho": float,
    "corr": float,
    "sigma2": float,
    "n_reps": int,
    "model": str,
    "lambda_rule": str,
    "seed": int,
    "alpha": float,
}


def build_sim_config(args) -> SimConfig:
    values: dict = {}
    if args.config:
        raw = parse_config_file(args.config)
        for key, val in raw.items():
            if key == "methods":
                values["methods"] = tuple(m.strip() for m in val.split(",") if m.strip())
            elif key in _CONFIG_FIELDS:
                values[key] = _CONFIG_FIELDS[key](val)
            else:
                raise InvalidArgumentError(f"unknown config key {key!r}")
    # flags win over the file
    for key in ("n", "p", "sparsity", "signal_fraction", "corr", "sigma2", "n_reps"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.rho is not None:
        values["rho"] = args.rho
    if args.model is not None:
        values["model"] = args.model
    if args.alpha is not None:
        values["alpha"] = args.alpha
    if args.seed is not None:
        values["seed"] = args.seed
    if args.method:
        values["methods"] = tuple(args.method)
    if args.lam is not None:
        values["lambda_rule"] = args.lam
    if isinstance(values.get("lambda_rule"), str) and values["lambda_rule"] != "theory":
        values["lambda_rule"] = float(values["lambda_rule"])
    return SimConfig(**values)


def _summary_json(summary) -> dict:
    cfg = asdict(summary.config)
    cfg["methods"] = list(cfg["methods"])
    return {
        "command": "simulate",
        "config": cfg,
        "methods": {
            m: {
                "n_reps": ms.n_reps,
                "n_used": ms.n_used,
                "n_empty": ms.n_empty,
                "n_failed": ms.n_failed,
                "coverage": ms.coverage,
                "coverage_se": ms.coverage_se,
                "length": ms.length,
                "length_se": ms.length_se,
                "f1": ms.f1,
                "f1_se": ms.f1_se,
                "clipped_rate": ms.clipped_rate,
            }
            for m, ms in summary.methods.items()
        },
    }


def cmd_simulate(args) -> int:
    config = build_sim_config(args)
    summary = run_study(config, workers=args.workers)
    out = args.out or "study"
    _write_json(_summary_json(summary), out + ".json")
    _write_csv(
        [r for r in summary.rows if r["coordinate"] >= 0], CSV_COLUMNS, out + ".csv"
    )
    return 0


def cmd_validate(args) -> int:
    config = build_sim_config(args)
    reports = validate_pivot_uniformity(config)
    cfg = asdict(config)
    cfg["methods"] = list(cfg["methods"])
    payload = {
        "command": "validate",
        "config": cfg,
        "reports": {
            m: {
                "statistic": r.statistic,
                "p_value": r.p_value,
                "n_pooled": r.n_pooled,
                "uniform_at_1pct": bool(r.p_value > 0.01),
            }
            for m, r in reports.items()
        },
    }
    _write_json(payload, (args.out + ".json") if args.out else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exactsi",
        description="Exact selective inference with Gaussian randomization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, with_input=True):
        if with_input:
            p.add_argument("--input", required=True, help="CSV file with a header row")
            p.add_argument("--response", default="y", help="response column name")
            p.add_argument(
                "--standardize", action="store_true", help="center and scale features"
            )
        p.add_argument("--model", choices=("full", "selected"), default="selected")
        p.add_argument("--alpha", type=float, default=0.1)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--rho", type=float, default=None, help="split proportion n1/n")
        p.add_argument("--tau2", type=float, default=None, help="randomization variance")
        p.add_argument("--epsilon", type=float, default=None, help="ridge term")
        p.add_argument("--sigma", type=float, default=None, help="known noise sd")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output path (or base name)")
        p.add_argument("--quad-points", dest="quad_points", type=int,
                       default=DEFAULT_QUADRATURE.n_points)
        p.add_argument("--quad-width", dest="quad_width", type=float,
                       default=DEFAULT_QUADRATURE.half_width_sigmas)

    p_select = sub.add_parser("select", help="run the randomized selection")
    add_common(p_select)
    p_select.set_defaults(func=cmd_select)

    p_infer = sub.add_parser("infer", help="selection plus confidence intervals")
    add_common(p_infer)
    p_infer.add_argument(
        "--method",
        action="append",
        choices=KNOWN_METHODS,
        default=None,
        help="repeatable; defaults to exact",
    )
    p_infer.set_defaults(func=cmd_infer)

    def add_sim(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--p", type=int, default=None)
        p.add_argument("--sparsity", type=int, default=None)
        p.add_argument("--signal-fraction", dest="signal_fraction", type=float, default=None)
        p.add_argument("--corr", type=float, default=None)
        p.add_argument("--sigma2", type=float, default=None)
        p.add_argument("--n-reps", dest="n_reps", type=int, default=None)
        p.add_argument("--rho", type=float, default=None)
        p.add_argument("--model", choices=("full", "selected"), default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--lambda", dest="lam", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--method", action="append", choices=KNOWN_METHODS, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None)

    p_sim = sub.add_parser("simulate", help="run a Monte-Carlo study")
    add_sim(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("validate", help="pivot uniformity check")
    add_sim(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "method", None) is None and args.command in ("infer",):
        args.method = ["exact"]
    try:
        return args.func(args)
    except ExactSIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
