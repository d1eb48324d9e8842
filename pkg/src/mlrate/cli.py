"""Command-line interface: ``mlrate {estimate,simulate,train,predict}``.

Exit status is 0 on success, 2 for bad user input (flags, files, schema or
validation problems) and 1 for unexpected internal failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .crossfit import cross_fit
from .data import load_csv, read_columns
from .estimators import (
    EstimateReport,
    adjusted_fit,
    censor_predictions,
    diff_in_diff,
    diff_in_means,
    relative_efficiency,
    report_from_fit,
)
from .exceptions import LeakageError, MlrateError, ModelFormatError, StudyFailedError
from .learners import LearnerSpec, model_from_dict, model_to_dict, predict, train
from .numerics import RandomStream
from .sim import (
    AA_FAMILIES,
    AaPanelConfig,
    FriedmanDgpConfig,
    MethodConfig,
    effective_parallelism,
    run_coverage_study,
)

logger = logging.getLogger("mlrate")

MODEL_FORMAT = "mlrate-model"
MODEL_VERSION = 1
LEARNERS = {
    "gbdt": "gbdt",
    "elasticnet": "elastic-net",
    "none": "zero",
    "constant": "constant-mean",
    "identity": "fixed-function",
}
BASELINES = ("dim", "dind", "cuped")
SIM_METHODS = ("gbdt", "elasticnet", "dim", "dind", "cuped", "preperiod")
PAPER_SCALE = {"reps": 10_000, "n": 10_000}


class UsageError(MlrateError):
    """Flag combination or input the user must fix (exit status 2)."""


def _csv_list(text: str | None) -> list[str]:
    if not text:
        return []
    return [s.strip() for s in text.split(",") if s.strip()]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _learner_spec(args, kind: str | None = None) -> LearnerSpec:
    name = kind or args.learner
    if name not in LEARNERS:
        raise UsageError(f"unknown learner {name!r}; choose from {', '.join(LEARNERS)}")
    return LearnerSpec(
        kind=LEARNERS[name],
        n_trees=args.n_trees,
        learning_rate=args.learning_rate,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf,
        penalty=args.penalty,
        l1_ratio=args.l1_ratio,
        function="identity" if name == "identity" else None,
    )


def _add_learner_flags(p: argparse.ArgumentParser, default: str = "gbdt") -> None:
    g = p.add_argument_group("learner")
    g.add_argument("--learner", default=default, choices=list(LEARNERS),
                   help="prediction model: gbdt, elasticnet, none (zero predictions), constant "
                        "(training mean) or identity (first feature as-is) (default: %(default)s)")
    g.add_argument("--n-trees", type=int, default=100,
                   help="gbdt: number of boosting rounds (default: %(default)s)")
    g.add_argument("--learning-rate", type=float, default=0.1,
                   help="gbdt: shrinkage per tree (default: %(default)s)")
    g.add_argument("--max-depth", type=int, default=3,
                   help="gbdt: maximum tree depth (default: %(default)s)")
    g.add_argument("--min-samples-leaf", type=int, default=1,
                   help="gbdt: minimum rows per leaf (default: %(default)s)")
    g.add_argument("--penalty", type=float, default=1.0,
                   help="elasticnet: overall penalty strength (default: %(default)s)")
    g.add_argument("--l1-ratio", type=float, default=0.5,
                   help="elasticnet: share of the L1 penalty in [0, 1] (default: %(default)s)")


def _add_common_flags(p: argparse.ArgumentParser, seed: bool = True) -> None:
    if seed:
        p.add_argument("--seed", type=int, default=0,
                       help="master seed; output is a pure function of it (default: %(default)s)")
    p.add_argument("--parallelism", type=int, default=1,
                   help="worker threads, capped by MLRATE_THREADS; never changes results "
                        "(default: %(default)s)")
    p.add_argument("--format", choices=("json", "csv", "table"), default="json",
                   help="output format (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlrate",
        description="Regression-adjusted treatment effect estimates with cross-fitted ML "
                    "predictions, baselines and simulation studies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    est = sub.add_parser("estimate", help="estimate the ATE on an experiment CSV",
                         description="Estimate the average treatment effect on an experiment "
                                     "CSV with cross-fitted adjustment plus baselines.")
    est.add_argument("--data", required=True, help="input CSV with a header row")
    est.add_argument("--outcome", required=True, help="outcome column")
    est.add_argument("--treatment", required=True, help="treatment column (literal 0/1)")
    est.add_argument("--features",
                     help="comma-separated feature columns (default: every other column)")
    _add_learner_flags(est)
    est.add_argument("--k", type=int, default=2, help="cross-fitting folds (default: %(default)s)")
    est.add_argument("--alpha", type=float, default=0.05,
                     help="CI level is 1 - alpha (default: %(default)s)")
    est.add_argument("--censor-tau", type=float, default=None,
                     help="hard-threshold predictions below this value to 0 (default: off)")
    est.add_argument("--baselines", default="dim",
                     help="comma-separated baselines from dim,dind,cuped (default: %(default)s)")
    est.add_argument("--pre-outcome", default=None,
                     help="pre-experiment outcome column, required by the cuped baseline")
    est.add_argument("--g-column", default=None,
                     help="use this column of precomputed pre-period predictions instead of "
                          "cross-fitting")
    est.add_argument("--model", default=None,
                     help="model file that produced --g-column; its provenance is checked")
    _add_common_flags(est)

    sim = sub.add_parser("simulate", help="run a Monte Carlo coverage study",
                         description="Run a coverage and CI-width study on a synthetic design.")
    sim.add_argument("dgp", choices=("friedman", "aa-panel"), help="data generating process")
    sim.add_argument("--reps", type=int, default=1000, help="repetitions (default: %(default)s)")
    sim.add_argument("--n", type=int, default=None,
                     help="rows per repetition (default: 2000 for friedman, 10000 for aa-panel)")
    sim.add_argument("--paper-scale", action="store_true",
                     help="use 10000 repetitions of 10000 rows")
    sim.add_argument("--methods", default=None,
                     help=f"comma-separated methods from {','.join(SIM_METHODS)} (default: "
                          "gbdt,elasticnet,dim for friedman, cuped,dim for aa-panel)")
    sim.add_argument("--k", type=int, default=2, help="cross-fitting folds (default: %(default)s)")
    sim.add_argument("--alpha", type=float, default=0.05,
                     help="CI level is 1 - alpha (default: %(default)s)")
    sim.add_argument("--censor-tau", type=float, default=None,
                     help="hard-threshold ML predictions (default: off)")
    sim.add_argument("--d", type=int, default=100, help="friedman: covariates (default: %(default)s)")
    sim.add_argument("--noise-sd", type=float, default=25.0,
                     help="friedman: noise standard deviation (default: %(default)s)")
    sim.add_argument("--treat-prob", type=float, default=0.5,
                     help="treatment probability (default: %(default)s)")
    sim.add_argument("--rho", type=float, default=0.5,
                     help="aa-panel: period-to-period correlation (default: %(default)s)")
    sim.add_argument("--n-aux", type=int, default=0,
                     help="aa-panel: auxiliary pre-period metrics (default: %(default)s)")
    sim.add_argument("--family", choices=AA_FAMILIES, default="gaussian",
                     help="aa-panel: outcome family (default: %(default)s)")
    sim.add_argument("--records", default=None,
                     help="also write one CSV row per repetition and method to this path")
    _add_learner_flags(sim)
    _add_common_flags(sim)

    tr = sub.add_parser("train", help="train and save a prediction model",
                        description="Train a model once and save it as versioned JSON. "
                                    "pre-period models may be reused with predict; "
                                    "cross-fit files record in-experiment fold models.")
    tr.add_argument("--data", required=True, help="training CSV")
    tr.add_argument("--outcome", required=True, help="target column")
    tr.add_argument("--features", required=True, help="comma-separated feature columns")
    tr.add_argument("--mode", choices=("pre-period", "cross-fit"), default="pre-period",
                    help="pre-period: one model on pre-experiment data; cross-fit: fold models "
                         "on experiment data (default: %(default)s)")
    tr.add_argument("--treatment", default=None,
                    help="cross-fit mode: treatment column of the experiment CSV")
    tr.add_argument("--k", type=int, default=2,
                    help="cross-fit mode: folds (default: %(default)s)")
    tr.add_argument("--out", required=True, help="path of the model JSON file to write")
    _add_learner_flags(tr)
    _add_common_flags(tr)

    pr = sub.add_parser("predict", help="append model predictions to a CSV",
                        description="Append a prediction column from a pre-period model file.")
    pr.add_argument("--model", required=True, help="model JSON written by train")
    pr.add_argument("--data", required=True, help="CSV to score")
    pr.add_argument("--features", default=None,
                    help="comma-separated columns fed to the model in training order "
                         "(default: the training feature names)")
    pr.add_argument("--column", default="g_hat", help="name of the new column (default: %(default)s)")
    pr.add_argument("--out", default=None, help="output CSV path (default: standard output)")
    return parser


# ---------------------------------------------------------------- estimate


def _header(path) -> list[str]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        try:
            return [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise UsageError(f"{path}: file is empty, expected a header row") from None


def _check_model_provenance(path) -> dict:
    blob = _read_model_file(path)
    if blob["provenance"] != "pre_period":
        raise LeakageError(
            f"{path} holds cross-fitted in-experiment models; their predictions on the same "
            "experiment are in-sample and would bias the estimate. Use a model trained on "
            "pre-experiment data (train --mode pre-period) or let estimate cross-fit."
        )
    return blob


def _report_rows(reports, ratios):
    cols = ["method", "estimate", "std_error", "ci_level", "ci_lower", "ci_upper", "n", "p_hat",
            "sigma2_hat", "degenerate", "corr_y_g", "var_g", "variance_ratio_vs_dim",
            "width_ratio_vs_dim"]
    rows = []
    for r in reports:
        ratio = ratios.get(r.method, {})
        rows.append([r.method, r.estimate, r.std_error, r.ci_level, r.ci[0], r.ci[1], r.n,
                     r.p_hat, r.sigma2_hat, r.degenerate, r.diagnostics.get("corr_y_g"),
                     r.diagnostics.get("var_g"), ratio.get("variance_ratio"),
                     ratio.get("width_ratio")])
    return cols, rows


def _render_csv(cols, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _render_table(cols, rows, fmt=None) -> str:
    def cell(v):
        if isinstance(v, float) and fmt:
            return fmt.format(v)
        return _fmt(v)

    text = [cols] + [[cell(v) for v in row] for row in rows]
    widths = [max(len(r[j]) for r in text) for j in range(len(cols))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in text]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise UsageError("--alpha must lie strictly between 0 and 1")


def cmd_estimate(args) -> str:
    _check_alpha(args.alpha)
    baselines = _csv_list(args.baselines)
    for b in baselines:
        if b not in BASELINES:
            raise UsageError(f"unknown baseline {b!r}; choose from {', '.join(BASELINES)}")
    if "cuped" in baselines and not args.pre_outcome:
        raise UsageError("the cuped baseline needs --pre-outcome")
    if args.model and not args.g_column:
        raise UsageError("--model is only used together with --g-column")
    header = _header(args.data)
    reserved = {args.outcome, args.treatment, args.pre_outcome, args.g_column}
    features = _csv_list(args.features) if args.features else [
        h for h in header if h not in reserved]
    extras = [c for c in (args.pre_outcome, args.g_column) if c]
    ds = load_csv(args.data, args.outcome, args.treatment, features, extras)
    y, t = ds.outcome, ds.treatment
    if args.g_column:
        method = "mlrate-precomputed"
        if args.model:
            _check_model_provenance(args.model)
        g = censor_predictions(ds.extras[args.g_column], args.censor_tau)
    else:
        if not features and args.learner not in ("none", "constant"):
            raise UsageError("no feature columns available for the learner")
        spec = _learner_spec(args)
        method = f"mlrate-{args.learner}"
        cf = cross_fit(ds, spec, args.k, RandomStream(args.seed),
                       parallelism=effective_parallelism(args.parallelism))
        g = censor_predictions(cf.predictions, args.censor_tau)
    main = report_from_fit(adjusted_fit(y, t, g), method, args.alpha)
    reports: list[EstimateReport] = [main]
    dim = diff_in_means(y, t, args.alpha)
    for b in baselines:
        if b == "dim":
            reports.append(dim)
        elif b == "dind":
            reports.append(diff_in_diff(y, t, g, args.alpha))
        else:
            pre = ds.extras[args.pre_outcome]
            reports.append(report_from_fit(adjusted_fit(y, t, pre), "cuped", args.alpha))
    ratios = {}
    for r in reports:
        if dim.width > 0:
            v, w = relative_efficiency(r, dim)
            ratios[r.method] = {"variance_ratio": v, "width_ratio": w}
    if args.format == "json":
        return _dumps({
            "command": "estimate",
            "reports": [r.to_dict() for r in reports],
            "relative_efficiency": {"baseline": "dim", "ratios": ratios},
        })
    cols, rows = _report_rows(reports, ratios)
    if args.format == "csv":
        return _render_csv(cols, rows)
    keep = [0, 1, 2, 4, 5, 6, 12, 13]
    return _render_table([cols[j] for j in keep], [[r[j] for j in keep] for r in rows],
                         "{:.6g}")


# ---------------------------------------------------------------- simulate


def _sim_methods(args, names):
    out = []
    for name in names:
        if name not in SIM_METHODS:
            raise UsageError(f"unknown method {name!r}; choose from {', '.join(SIM_METHODS)}")
        if name in ("cuped", "preperiod") and args.dgp != "aa-panel":
            raise UsageError(f"method {name!r} needs pre-period data (dgp aa-panel)")
        if name in ("gbdt", "elasticnet"):
            out.append(MethodConfig(name, "mlrate", _learner_spec(args, name), args.k,
                                    args.censor_tau))
        elif name == "dind":
            out.append(MethodConfig(name, "dind", _learner_spec(args), args.k))
        elif name == "preperiod":
            out.append(MethodConfig(name, "preperiod", _learner_spec(args)))
        else:
            out.append(MethodConfig(name, name))
    return out


def cmd_simulate(args) -> str:
    _check_alpha(args.alpha)
    reps, n = args.reps, args.n
    if args.paper_scale:
        reps, n = PAPER_SCALE["reps"], PAPER_SCALE["n"]
    if args.dgp == "friedman":
        dgp = FriedmanDgpConfig(n=n or 2000, d=args.d, noise_sd=args.noise_sd,
                                treat_prob=args.treat_prob)
        default_methods = "gbdt,elasticnet,dim"
    else:
        dgp = AaPanelConfig(n=n or 10_000, rho=args.rho, n_aux=args.n_aux, family=args.family,
                            treat_prob=args.treat_prob)
        default_methods = "cuped,dim"
    names = _csv_list(args.methods or default_methods)
    if len(set(names)) != len(names):
        raise UsageError("--methods lists a method twice")
    methods = _sim_methods(args, names)
    progress = None
    if args.verbose:
        def progress(r):
            if (r + 1) % max(1, reps // 10) == 0:
                logger.info("repetition %d/%d done", r + 1, reps)
    try:
        study = run_coverage_study(dgp, methods, reps, args.alpha,
                                   effective_parallelism(args.parallelism), args.seed,
                                   progress=progress)
    except StudyFailedError as exc:
        if exc.result is not None and args.records:
            exc.result.write_records_csv(args.records)
        raise
    if args.records:
        study.write_records_csv(args.records)
    summary = study.to_dict()
    summary["command"] = "simulate"
    summary["paper_scale"] = bool(args.paper_scale)
    if args.format == "json":
        return _dumps(summary)
    cols = ["method", "coverage", "coverage_ci", "relative_width", "mean_width", "failures",
            "flagged"]
    rows = [[m.method, m.coverage, m.coverage_ci, m.mean_relative_width, m.mean_width,
             m.failures, m.flagged] for m in study.methods]
    if args.format == "csv":
        return _render_csv(cols, rows)
    head = (f"dgp={study.dgp} n={dgp.n} reps={reps} seed={args.seed} alpha={args.alpha} "
            f"true_ate={study.true_ate:.6f}"
            + (" (paper scale)" if args.paper_scale else "") + "\n")
    pretty = [[m.method, f"{100 * m.coverage:.2f} ± {100 * m.coverage_ci:.2f}",
               "" if m.mean_relative_width is None else f"{m.mean_relative_width:.3f}",
               f"{m.mean_width:.4g}", m.failures, m.flagged] for m in study.methods]
    return head + _render_table(["method", "coverage (%)", "relative width", "mean width",
                                 "failures", "flagged"], pretty)


# ------------------------------------------------------------ train/predict


def _read_model_file(path) -> dict:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a JSON model file ({exc})") from None
    if not isinstance(blob, dict) or blob.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not an mlrate model file")
    if blob.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model version {blob.get('version')!r} "
            f"(this build reads version {MODEL_VERSION})"
        )
    if blob.get("provenance") not in ("pre_period", "cross_fitted"):
        raise ModelFormatError(f"{path}: unknown provenance {blob.get('provenance')!r}")
    return blob


def cmd_train(args) -> str:
    features = _csv_list(args.features)
    if not features:
        raise UsageError("--features must name at least one column")
    spec = _learner_spec(args)
    cols = read_columns(args.data, [args.outcome, *features])
    X = np.column_stack([cols[f] for f in features])
    y = cols[args.outcome]
    blob = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "learner": spec.to_dict(),
        "outcome": args.outcome,
        "features": features,
        "n_train": int(y.shape[0]),
    }
    if args.mode == "pre-period":
        blob["provenance"] = "pre_period"
        blob["model"] = model_to_dict(train(spec, X, y))
    else:
        if not args.treatment:
            raise UsageError("cross-fit mode trains on experiment data and needs --treatment")
        ds = load_csv(args.data, args.outcome, args.treatment, features)
        cf = cross_fit(ds, spec, args.k, RandomStream(args.seed),
                       parallelism=effective_parallelism(args.parallelism))
        blob["provenance"] = "cross_fitted"
        blob["k"] = args.k
        blob["seed"] = args.seed
        blob["folds"] = cf.folds.tolist()
        blob["models"] = [model_to_dict(m) for m in cf.models]
    Path(args.out).write_text(_dumps(blob), encoding="utf-8")
    status = {"command": "train", "model": str(args.out), "provenance": blob["provenance"],
              "learner": spec.kind, "n_train": blob["n_train"], "features": features}
    if args.format == "json":
        return _dumps(status)
    keys = list(status)
    rows = [[status[k] if k != "features" else ",".join(features) for k in keys]]
    return _render_csv(keys, rows) if args.format == "csv" else _render_table(keys, rows)


def cmd_predict(args) -> str:
    blob = _read_model_file(args.model)
    if blob["provenance"] != "pre_period":
        raise LeakageError(
            f"{args.model} holds cross-fitted in-experiment models; scoring the experiment with "
            "them leaks outcomes into the adjustment. Train with --mode pre-period on "
            "pre-experiment data instead."
        )
    try:
        model = model_from_dict(blob["model"])
        trained_features = list(blob["features"])
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"{args.model}: malformed model file ({exc})") from None
    features = _csv_list(args.features) if args.features else trained_features
    if len(features) != len(trained_features):
        raise UsageError(f"model was trained on {len(trained_features)} features, "
                         f"--features names {len(features)}")
    cols = read_columns(args.data, features)
    g = predict(model, np.column_stack([cols[f] for f in features]))
    with Path(args.data).open(newline="", encoding="utf-8") as fh:
        records = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if args.column in [h.strip() for h in records[0]]:
        raise UsageError(f"{args.data} already has a column named {args.column!r}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*records[0], args.column])
    for rec, val in zip(records[1:], g):
        w.writerow([*rec, repr(float(val))])
    if args.out:
        Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
        return ""
    return buf.getvalue()


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        out = COMMANDS[args.command](args)
    except StudyFailedError as exc:
        print(f"mlrate {args.command}: study failed: {exc}", file=sys.stderr)
        return 1
    except (MlrateError, ValueError, OSError) as exc:
        print(f"mlrate {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort guard for the exit-code contract
        logger.exception("internal failure")
        print(f"mlrate {args.command}: internal error: {exc}", file=sys.stderr)
        return 1
    if out:
        sys.stdout.write(out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
