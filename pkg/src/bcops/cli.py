"""Command-line pipeline: simulate, fit-predict, predict, mix-estimate,
curve, evaluate.

Every artifact embeds the resolved run configuration, the seed and the
library version (JSON field or leading '#' comment line in CSVs) and
contains no timestamps, so identical configurations reproduce identical
bytes. Exit codes: 0 success, 2 input/validation error, 3 compute failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .conformal import (
    METHOD_BCOPS,
    METHODS,
    PredictionSet,
    bcops_full_conformal,
    predict_sets,
)
from .data import (
    DataError,
    Dataset,
    MissingLabelColumnError,
    generate_paper_sim,
    load_csv,
    save_csv,
)
from .evalkit import (
    CurveEngine,
    fit_method,
    build_curve_engine,
    estimate_gamma_k,
    realized_metrics,
)
from .learners import KIND_GLM, KIND_RF, LearnerConfig
from .mixshift import mix_estimate
from .serialize import model_from_doc, model_to_doc

METHOD_BCOPS_FULL = "bcops-full"

GAMMA_K_CAVEAT = (
    "per-class abstention estimates score calibration rows their held-fold "
    "scorer saw during fitting; the estimates are mildly optimistic"
)
RESPONSE_FOLD_NOTE = (
    "mixture response probabilities are computed on the held-out test fold, "
    "cross-fitted against the fold that trained the log-odds functions"
)


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration embedded into every artifact."""

    subcommand: str
    method: str | None = None
    learner: str | None = None
    alpha: float | None = None
    zeta: float | None = None
    alpha_grid: str | None = None
    seed: int = 0
    train: str | None = None
    test: str | None = None
    model: str | None = None
    sets: str | None = None
    truth: str | None = None
    label_col: str | None = None
    out: str = "."
    trees: int = 100
    l2: float = 1e-3

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _learner_config(cfg: RunConfig) -> LearnerConfig:
    kind = {"rf": KIND_RF, "glm": KIND_GLM}[cfg.learner]
    return LearnerConfig(kind=kind, n_trees=cfg.trees, l2=cfg.l2, seed=cfg.seed)


def _config_comment(cfg: RunConfig) -> str:
    payload = {"config": cfg.as_dict(), "library_version": __version__}
    return "config: " + json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _write_json(path: Path, payload: dict, cfg: RunConfig) -> None:
    payload = {"config": cfg.as_dict(), "library_version": __version__, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if not out.is_dir():
        raise NotADirectoryError(f"not a directory: {out}")
    return out


def _require_file(path: str | None, flag: str) -> Path:
    if path is None:
        raise ValueError(f"missing required flag {flag}")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _load_train(cfg: RunConfig) -> Dataset:
    path = _require_file(cfg.train, "--train")
    if cfg.label_col is None:
        raise ValueError("--label-col is required to read labeled training data")
    return load_csv(path, cfg.label_col)


def _load_test(cfg: RunConfig) -> tuple[Dataset, np.ndarray | None]:
    """Test features plus truth labels when the label column is present."""
    path = _require_file(cfg.test, "--test")
    if cfg.label_col is None:
        return load_csv(path), None
    try:
        labeled = load_csv(path, cfg.label_col)
    except MissingLabelColumnError:
        return load_csv(path), None
    return Dataset(labeled.features, None, 0), labeled.labels


def _write_sets_csv(path: Path, sets: list[PredictionSet], cfg: RunConfig) -> None:
    k_count = sets[0].ranks.shape[0] if sets else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + _config_comment(cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["row_id", "members"] + [f"rank_{k}" for k in range(1, k_count + 1)] + ["alpha"]
        )
        for i, ps in enumerate(sets):
            writer.writerow(
                [i, ";".join(str(k) for k in ps.members)]
                + [repr(float(r)) for r in ps.ranks]
                + [repr(float(ps.alpha))]
            )


def _read_sets_csv(path: Path) -> list[PredictionSet]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise DataError(f"{path}: no prediction rows")
    header = rows[0]
    rank_cols = [j for j, name in enumerate(header) if name.startswith("rank_")]
    m_col = header.index("members")
    a_col = header.index("alpha")
    out = []
    for row in rows[1:]:
        members = tuple(int(tok) for tok in row[m_col].split(";") if tok)
        ranks = np.array([float(row[j]) for j in rank_cols])
        out.append(PredictionSet(members=members, ranks=ranks, alpha=float(row[a_col])))
    return out


def _metrics_payload(
    metrics, alpha: float, n_test: int, n_empty: int, gamma_k_hat: np.ndarray | None
) -> dict:
    def opt(v):
        return None if v is None or (isinstance(v, float) and np.isnan(v)) else float(v)

    payload: dict = {"alpha": alpha, "n_test": n_test, "n_empty": n_empty, "notes": []}
    if gamma_k_hat is not None:
        payload["gamma_k_hat"] = {str(k + 1): float(v) for k, v in enumerate(gamma_k_hat)}
        payload["notes"].append(GAMMA_K_CAVEAT)
    if metrics is not None:
        per_class = {}
        for k in range(1, metrics.coverage.shape[0] + 1):
            cov = opt(metrics.coverage[k - 1])
            per_class[str(k)] = {
                "coverage": cov,
                "type1": None if cov is None else 1.0 - cov,
                "type2": opt(metrics.type2[k - 1]),
                "abstention": opt(metrics.abstention[k - 1]),
                "n": int(metrics.class_counts[k - 1]),
            }
        payload.update(
            {
                "per_class": per_class,
                "accuracy": opt(metrics.accuracy),
                "outlier_count": metrics.outlier_count,
                "type2_outlier": opt(metrics.type2_outlier),
                "abstention_outlier": opt(metrics.abstention_outlier),
                "flp": opt(metrics.flp),
            }
        )
    return payload


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    train, test, truth = generate_paper_sim(cfg.seed)
    comment = _config_comment(cfg)
    save_csv(train, out / "train.csv", label_column="label", header_comment=comment)
    save_csv(test, out / "test.csv", label_column="label", truth=truth, header_comment=comment)
    return 0


def cmd_fit_predict(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    train = _load_train(cfg)
    test, truth = _load_test(cfg)
    learner = _learner_config(cfg)
    alpha = cfg.alpha
    if cfg.method == METHOD_BCOPS_FULL:
        # refits per test row; no reusable model artifact in this mode
        sets = [
            bcops_full_conformal(train, test, i, learner, alpha, cfg.seed)
            for i in range(test.n)
        ]
        gamma_k_hat = None
    else:
        model = fit_method(cfg.method, train, test, learner, cfg.seed)
        fold_of = model.test_fold_of if cfg.method == METHOD_BCOPS else None
        sets = predict_sets(model, test.features, fold_of, alpha)
        gamma_k_hat = estimate_gamma_k(model, train, alpha)
        _write_json(out / "model.json", {"model": model_to_doc(model)}, cfg)
    _write_sets_csv(out / "sets.csv", sets, cfg)
    n_empty = sum(1 for s in sets if s.is_abstention())
    metrics = realized_metrics(sets, truth) if truth is not None else None
    _write_json(
        out / "metrics.json",
        _metrics_payload(metrics, alpha, test.n, n_empty, gamma_k_hat),
        cfg,
    )
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    with open(_require_file(cfg.model, "--model"), encoding="utf-8") as fh:
        doc = json.load(fh)
    model = model_from_doc(doc["model"])
    test, _ = _load_test(cfg)
    # fresh rows are valid under any fold pairing; fold 1 is the convention
    fold_of = np.ones(test.n, dtype=np.int8) if model.method == METHOD_BCOPS else None
    sets = predict_sets(model, test.features, fold_of, cfg.alpha)
    _write_sets_csv(out / "sets.csv", sets, cfg)
    return 0


def cmd_mix_estimate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    train = _load_train(cfg)
    test, _ = _load_test(cfg)
    est = mix_estimate(train, test, cfg.zeta, _learner_config(cfg), cfg.seed)
    payload = {
        "pi": {str(k + 1): float(v) for k, v in enumerate(est.pi)},
        "epsilon": est.epsilon,
        "per_fold_pi": {str(t): [float(v) for v in pi] for t, pi in est.per_fold_pi.items()},
        "diagnostics": est.diagnostics,
        "notes": [RESPONSE_FOLD_NOTE],
    }
    _write_json(out / "mix.json", payload, cfg)
    return 0


def cmd_curve(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    train = _load_train(cfg)
    test, truth = _load_test(cfg)
    grid = _parse_grid(cfg.alpha_grid)
    engine = build_curve_engine(
        train, test, cfg.method, _learner_config(cfg), cfg.zeta, cfg.seed, truth
    )
    _write_curve_csv(out / "curve.csv", engine, grid, cfg)
    return 0


def _write_curve_csv(path: Path, engine: CurveEngine, grid: np.ndarray, cfg: RunConfig) -> None:
    k_count = engine.model.class_count
    have_truth = engine.truth is not None
    header = ["alpha", "n_empty", "gamma_hat", "flr_hat", "gamma_realized", "flp"]
    header += [f"coverage_{k}" for k in range(1, k_count + 1)]
    header += [f"type2_{k}" for k in range(1, k_count + 1)]
    header += ["type2_outlier", "accuracy"]

    def fmt(v) -> str:
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + _config_comment(cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for alpha in grid:
            rep = engine.abstention_report(float(alpha))
            row = [
                repr(float(alpha)),
                rep.n_empty,
                fmt(rep.gamma_hat),
                fmt(rep.flr_hat),
                fmt(rep.gamma_realized),
                fmt(rep.flp),
            ]
            if have_truth:
                met = engine.metrics_report(float(alpha))
                row += [fmt(v) for v in met.coverage]
                row += [fmt(v) for v in met.type2]
                row += [fmt(met.type2_outlier), fmt(met.accuracy)]
            else:
                row += [""] * (2 * k_count + 2)
            writer.writerow(row)


def cmd_evaluate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    sets = _read_sets_csv(_require_file(cfg.sets, "--sets"))
    truth_data = load_csv(_require_file(cfg.truth, "--truth"), cfg.label_col)
    metrics = realized_metrics(sets, truth_data.labels)
    alpha = sets[0].alpha
    n_empty = sum(1 for s in sets if s.is_abstention())
    _write_json(
        out / "metrics.json", _metrics_payload(metrics, alpha, len(sets), n_empty, None), cfg
    )
    return 0


def _parse_grid(spec: str | None) -> np.ndarray:
    if not spec:
        raise ValueError("missing --alpha-grid lo:hi:step")
    try:
        lo, hi, step = (float(tok) for tok in spec.split(":"))
    except ValueError:
        raise ValueError(f"bad --alpha-grid {spec!r}, expected lo:hi:step") from None
    if step <= 0 or lo > hi:
        raise ValueError("need step > 0 and lo <= hi")
    grid = np.round(np.arange(lo, hi + step / 2, step), 10)
    grid = grid[(grid > 0.0) & (grid < 1.0)]
    if grid.size == 0:
        raise ValueError("alpha grid is empty after clipping to (0, 1)")
    return grid


def _unit_interval(closed: bool):
    def parse(text: str) -> float:
        value = float(text)
        if closed and not 0.0 <= value <= 1.0:
            raise argparse.ArgumentTypeError("must be in [0, 1]")
        if not closed and not 0.0 < value < 1.0:
            raise argparse.ArgumentTypeError("must be in (0, 1)")
        return value

    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bcops",
        description="Conformal prediction sets with abstention under test-distribution shift.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_out(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")

    def add_learner(p):
        p.add_argument("--learner", choices=["rf", "glm"], default="rf")
        p.add_argument("--trees", type=int, default=100, help="rf tree count")
        p.add_argument("--lambda", dest="l2", type=float, default=1e-3, help="glm L2 penalty")

    p_sim = sub.add_parser("simulate", help="write the benchmark simulation as CSVs")
    add_out(p_sim)

    p_fit = sub.add_parser("fit-predict", help="fit a method and emit prediction sets")
    p_fit.add_argument("--train", required=True)
    p_fit.add_argument("--test", required=True)
    p_fit.add_argument("--label-col", default=None)
    p_fit.add_argument(
        "--method", choices=list(METHODS) + [METHOD_BCOPS_FULL], default=METHOD_BCOPS
    )
    p_fit.add_argument("--alpha", type=_unit_interval(closed=True), default=0.05)
    add_learner(p_fit)
    add_out(p_fit)

    p_pred = sub.add_parser("predict", help="apply a saved model.json to new data")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--test", required=True)
    p_pred.add_argument("--label-col", default=None)
    p_pred.add_argument("--alpha", type=_unit_interval(closed=True), default=0.05)
    add_out(p_pred)

    p_mix = sub.add_parser("mix-estimate", help="estimate test mixture proportions")
    p_mix.add_argument("--train", required=True)
    p_mix.add_argument("--test", required=True)
    p_mix.add_argument("--label-col", default=None)
    p_mix.add_argument("--zeta", type=_unit_interval(closed=False), default=0.2)
    add_learner(p_mix)
    add_out(p_mix)

    p_curve = sub.add_parser("curve", help="rates along an alpha grid, one fit")
    p_curve.add_argument("--train", required=True)
    p_curve.add_argument("--test", required=True)
    p_curve.add_argument("--label-col", default=None)
    p_curve.add_argument("--method", choices=METHODS, default=METHOD_BCOPS)
    p_curve.add_argument("--alpha-grid", default="0.01:0.99:0.01", help="lo:hi:step")
    p_curve.add_argument("--zeta", type=_unit_interval(closed=False), default=0.2)
    add_learner(p_curve)
    add_out(p_curve)

    p_eval = sub.add_parser("evaluate", help="metrics from sets.csv plus a truth CSV")
    p_eval.add_argument("--sets", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--label-col", required=True)
    add_out(p_eval)
    return parser


def _to_config(args: argparse.Namespace) -> RunConfig:
    def get(name, default=None):
        return getattr(args, name, default)

    return RunConfig(
        subcommand=args.subcommand,
        method=get("method"),
        learner=get("learner"),
        alpha=get("alpha"),
        zeta=get("zeta"),
        alpha_grid=get("alpha_grid"),
        seed=get("seed", 0),
        train=get("train"),
        test=get("test"),
        model=get("model"),
        sets=get("sets"),
        truth=get("truth"),
        label_col=get("label_col"),
        out=get("out", "."),
        trees=get("trees", 100),
        l2=get("l2", 1e-3),
    )


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit-predict": cmd_fit_predict,
    "predict": cmd_predict,
    "mix-estimate": cmd_mix_estimate,
    "curve": cmd_curve,
    "evaluate": cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _to_config(args)
    try:
        return _COMMANDS[args.subcommand](cfg)
    except (DataError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # compute failures get a distinct code
        print(f"compute failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
