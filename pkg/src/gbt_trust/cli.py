"""Batch command-line front end.

Subcommands: generate (synthetic panel), train, tune, explain, audit.
Exit codes: 0 success, 1 runtime failure, 2 I/O or invalid generation
spec, 3 data schema problems, 4 configuration problems. stdout carries
only summary metrics; diagnostics go to stderr. Every artifact-producing
run writes one manifest beside its outputs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, audit, data, explain, gbt, manifests, synthgen, tune
from .rng import rng_from

EXPLAIN_METHODS = ("vi", "pdp", "ice", "lime", "shap")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_SCHEMA = 3
EXIT_CONFIG = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> CliError:
    return CliError(code, message)


def _load_table(path, target: str) -> data.Table:
    try:
        return data.load_csv(path, target)
    except FileNotFoundError as exc:
        raise _fail(EXIT_IO, str(exc)) from None
    except (data.MissingTargetColumn, data.NonNumericColumn, data.EmptyTable, ValueError) as exc:
        raise _fail(EXIT_SCHEMA, str(exc)) from None


def _load_model(path) -> gbt.Ensemble:
    try:
        stream = Path(path).read_bytes()
    except OSError as exc:
        raise _fail(EXIT_IO, str(exc)) from None
    try:
        return gbt.deserialize_model(stream)
    except (gbt.VersionMismatch, gbt.CorruptModel) as exc:
        raise _fail(EXIT_SCHEMA, str(exc)) from None


def _effective_workers(requested: int) -> int:
    cap = os.environ.get("GBT_TRUST_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise _fail(EXIT_CONFIG, f"GBT_TRUST_THREADS={cap!r} is not an integer")
    return requested


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


# -- generate -----------------------------------------------------------


def _parse_generation_spec(doc: dict) -> tuple[synthgen.IntensityModel, synthgen.PanelSpec]:
    try:
        model_doc = doc["model"]
        panel_doc = doc["panel"]
        coeff_map = dict(model_doc["coefficients"])
        model = synthgen.IntensityModel(
            coefficients=np.array(
                [float(model_doc["intercept"])] + [float(v) for v in coeff_map.values()]
            ),
            feature_names=tuple(coeff_map),
        )
        spec = synthgen.PanelSpec(
            n_firms=int(panel_doc["n_firms"]),
            n_periods=int(panel_doc["n_periods"]),
            seed=int(panel_doc["seed"]),
            covariates={
                str(k): (float(v[0]), float(v[1]))
                for k, v in panel_doc["covariates"].items()
            },
            recovery_range=(
                float(panel_doc["recovery_range"][0]),
                float(panel_doc["recovery_range"][1]),
            ),
            missing_rate=float(panel_doc.get("missing_rate", 0.0)),
            target_name=str(panel_doc.get("target_name", "spread5")),
        )
        return model, spec
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise _fail(EXIT_IO, f"invalid generation spec: {exc}") from None


def cmd_generate(args, argv) -> int:
    try:
        doc = manifests.read_json(args.spec)
    except OSError as exc:
        raise _fail(EXIT_IO, str(exc)) from None
    except json.JSONDecodeError as exc:
        raise _fail(EXIT_IO, f"invalid generation spec: {exc}") from None
    model, spec = _parse_generation_spec(doc)
    try:
        panel = synthgen.generate_panel(model, spec)
    except ValueError as exc:
        raise _fail(EXIT_IO, f"invalid generation spec: {exc}") from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    panel_path = out_dir / f"{args.prefix}.csv"
    sidecar_path = out_dir / f"{args.prefix}_lambda.csv"
    data.write_csv(panel.table, panel_path)
    synthgen.write_lambda_sidecar(panel, sidecar_path)
    manifests.write_manifest(
        out_dir,
        command="generate",
        argv=argv,
        seeds={"panel_seed": spec.seed},
        inputs=[args.spec],
        config=_jsonable(doc),
        artifacts=[panel_path, sidecar_path],
        stem=args.prefix,
    )
    print(f"rows={panel.table.n} features={panel.table.d} out={panel_path}")
    return EXIT_OK


# -- train --------------------------------------------------------------


def _load_train_config(path, fallback_seed: int) -> gbt.TrainConfig:
    if path is None:
        return gbt.TrainConfig(seed=fallback_seed)
    try:
        doc = manifests.read_json(path)
        return gbt.TrainConfig(**doc)
    except OSError as exc:
        raise _fail(EXIT_IO, str(exc)) from None
    except (json.JSONDecodeError, TypeError, gbt.ConfigOutOfRange) as exc:
        raise _fail(EXIT_CONFIG, f"bad train config: {exc}") from None


def _write_trace_csv(trace: gbt.TrainTrace, path, with_validation: bool) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["iteration", "grad_norm", "train_rmse"]
        if with_validation:
            header.append("valid_rmse")
        writer.writerow(header)
        for e in trace.entries:
            row = [e.iteration, repr(e.grad_norm), repr(e.train_rmse)]
            if with_validation:
                row.append(repr(e.valid_rmse))
            writer.writerow(row)


def cmd_train(args, argv) -> int:
    table = _load_table(args.data, args.target)
    config = _load_train_config(args.config, args.seed)
    if not 0.0 <= args.holdout < 1.0:
        raise _fail(EXIT_CONFIG, f"--holdout must be in [0, 1), got {args.holdout}")
    holdout = None
    train_part = table
    if args.holdout > 0.0:
        try:
            train_part, holdout = data.train_test_split(
                table, 1.0 - args.holdout, args.seed
            )
        except data.DegenerateSplit as exc:
            raise _fail(EXIT_CONFIG, str(exc)) from None

    ensemble, trace = gbt.train(train_part, config, holdout)
    model_path = Path(args.out)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    model_path.write_bytes(gbt.serialize_model(ensemble))
    trace_path = model_path.with_name(model_path.stem + "_trace.csv")
    _write_trace_csv(trace, trace_path, with_validation=holdout is not None)

    final = trace.entries[-1]
    results = {
        "train_rmse": final.train_rmse,
        "holdout_rmse": final.valid_rmse,
        "n_train_rows": train_part.n,
        "n_holdout_rows": holdout.n if holdout is not None else 0,
    }
    manifests.write_manifest(
        model_path.parent,
        command="train",
        argv=argv,
        seeds={"split_seed": args.seed, "train_seed": config.seed},
        inputs=[args.data] + ([args.config] if args.config else []),
        config={
            "target": args.target,
            "holdout": args.holdout,
            "split_seed": args.seed,
            "train_config": config.to_dict(),
        },
        artifacts=[model_path, trace_path],
        stem=model_path.stem,
        extra={
            "results": results,
            "data_summary": data.summarize(table).to_dict(),
        },
    )
    if holdout is not None:
        print(f"train_rmse={final.train_rmse!r} holdout_rmse={final.valid_rmse!r}")
    else:
        print(f"train_rmse={final.train_rmse!r}")
    return EXIT_OK


# -- tune ---------------------------------------------------------------


def cmd_tune(args, argv) -> int:
    table = _load_table(args.data, args.target)
    try:
        grid = tune.load_grid_file(args.grid)
    except FileNotFoundError as exc:
        raise _fail(EXIT_IO, str(exc)) from None
    except (tune.EmptyGrid, json.JSONDecodeError, gbt.ConfigOutOfRange) as exc:
        raise _fail(EXIT_CONFIG, f"bad grid: {exc}") from None
    workers = _effective_workers(args.workers)
    try:
        board = tune.run_search(table, grid, args.k, workers, args.seed)
    except (data.KTooLarge, gbt.ConfigOutOfRange, ValueError) as exc:
        raise _fail(EXIT_CONFIG, str(exc)) from None
    try:
        best = tune.select_best(board)
    except tune.AllTrialsFailed as exc:
        raise _fail(EXIT_FAILURE, str(exc)) from None

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    board_path = out_dir / "leaderboard.csv"
    best_path = out_dir / "best_config.json"
    tune.write_leaderboard_csv(board, board_path)
    manifests.write_json(best_path, best.to_dict())
    content_rows = tune.leaderboard_rows_without_wall_time(board_path)
    content_digest = manifests.sha256_of_text(
        "\n".join(",".join(row) for row in content_rows)
    )
    top = board.entries[0]
    manifests.write_manifest(
        out_dir,
        command="tune",
        argv=argv,
        seeds={"search_seed": args.seed},
        inputs=[args.data] + ([args.grid] if not str(args.grid).startswith("builtin:") else []),
        config={
            "target": args.target,
            "grid": {k: list(v) for k, v in grid.values.items()},
            "k": args.k,
            "workers": workers,
        },
        artifacts=[board_path, best_path],
        stem="tune",
        extra={
            "results": {
                "n_trials": len(board),
                "best_mean_rmse": top.mean_rmse,
                "best_std_rmse": top.std_rmse,
                "leaderboard_content_sha256": content_digest,
            }
        },
    )
    print(f"trials={len(board)} best_mean_rmse={top.mean_rmse!r} out={board_path}")
    return EXIT_OK


# -- explain ------------------------------------------------------------


def _anchor_row(table: data.Table, row: int) -> np.ndarray:
    if not 0 <= row < table.n:
        raise _fail(EXIT_CONFIG, f"--row {row} outside [0, {table.n})")
    return np.array(table.rows[row])


def _explain_artifact(args, model, table) -> dict:
    method = args.method
    if method == "vi":
        if args.vi_mode == "gain":
            report = explain.importance_gain(model)
        else:
            report = explain.importance_permutation(
                model, table, repeats=args.repeats, seed=args.seed
            )
        return {
            "method": "vi",
            "mode": report.mode,
            "seed": args.seed if report.mode == "permutation" else None,
            "repeats": args.repeats if report.mode == "permutation" else None,
            "ranking": [
                {"feature": e.feature, "score": e.score, "percent": e.percent}
                for e in report.entries
            ],
        }
    if method in ("pdp", "ice"):
        if not args.feature:
            raise _fail(EXIT_CONFIG, f"--feature is required for method {method}")
        try:
            if method == "pdp":
                curve = explain.pdp(model, table, args.feature, args.n_grid)
                doc = {
                    "method": "pdp",
                    "feature": curve.feature,
                    "n_grid": args.n_grid,
                    "grid": curve.grid,
                    "mean_prediction": curve.mean_prediction,
                    "n_rows": curve.n_rows,
                }
                if args.min_jump_ratio is not None:
                    doc["thresholds"] = [
                        {
                            "threshold": f.threshold,
                            "change": f.change,
                            "ratio": f.ratio,
                            "direction": f.direction,
                        }
                        for f in explain.threshold_scan(curve, args.min_jump_ratio)
                    ]
                return doc
            bundle = explain.ice(
                model, table, args.feature, args.n_grid, centered=args.centered
            )
            return {
                "method": "ice",
                "feature": bundle.feature,
                "n_grid": args.n_grid,
                "centered": bundle.centered,
                "grid": bundle.grid,
                "curves": bundle.curves,
            }
        except KeyError as exc:
            raise _fail(EXIT_SCHEMA, f"unknown feature {exc}") from None
        except explain.ConstantFeature as exc:
            raise _fail(EXIT_SCHEMA, str(exc)) from None
    if method == "lime":
        anchor = _anchor_row(table, args.row)
        result = explain.lime_explain(
            model,
            anchor,
            table,
            n_samples=args.n_samples,
            top_m=args.top_m,
            kernel_width=args.kernel_width,
            seed=args.seed,
        )
        return {
            "method": "lime",
            "row": args.row,
            "seed": result.seed,
            "n_samples": result.n_samples,
            "kernel_width": result.kernel_width,
            "intercept": result.intercept,
            "weights": [{"feature": f, "weight": w} for f, w in result.weights],
            "r_squared": result.r_squared,
            "singular_fallback": result.singular_fallback,
            "imputed_features": list(result.imputed_features),
        }
    if method == "shap":
        anchor = _anchor_row(table, args.row)
        n_bg = min(args.background, table.n)
        bg_rows = np.sort(rng_from(args.seed, 1).permutation(table.n)[:n_bg])
        background = table.subset(bg_rows)
        use_exact = args.exact or (
            not args.sampled and table.d <= explain.EXACT_SHAP_MAX_FEATURES
        )
        try:
            if use_exact:
                result = explain.shap_exact(model, anchor, background)
            else:
                result = explain.shap_sampled(
                    model, anchor, background, args.permutations, seed=args.seed
                )
        except explain.TooManyFeatures as exc:
            raise _fail(EXIT_CONFIG, str(exc)) from None
        return {
            "method": "shap",
            "mode": result.method,
            "row": args.row,
            "seed": args.seed,
            "background_rows": n_bg,
            "n_permutations": result.n_permutations,
            "baseline": result.baseline,
            "values": [
                {"feature": f, "phi": float(v)}
                for f, v in zip(result.feature_names, result.values)
            ],
            "prediction": float(model.predict_row(anchor)),
            "distributed_residual": result.distributed_residual,
        }
    raise _fail(
        EXIT_CONFIG,
        f"unknown method {method!r}; valid methods: {', '.join(EXPLAIN_METHODS)}",
    )


def cmd_explain(args, argv) -> int:
    model = _load_model(args.model)
    table = _load_table(args.data, args.target)
    if tuple(table.feature_names) != model.feature_names:
        raise _fail(EXIT_SCHEMA, "data feature columns differ from the model schema")
    doc = {"format": "gbt-trust/explain/1"}
    doc.update(_jsonable(_explain_artifact(args, model, table)))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    manifests.write_json(out_path, doc)
    manifests.write_manifest(
        out_path.parent,
        command="explain",
        argv=argv,
        seeds={"seed": args.seed},
        inputs=[args.model, args.data],
        config={
            "method": args.method,
            "feature": args.feature,
            "row": args.row,
            "target": args.target,
        },
        artifacts=[out_path],
        stem=out_path.stem,
    )
    print(f"method={args.method} out={out_path}")
    return EXIT_OK


# -- audit --------------------------------------------------------------


def cmd_audit(args, argv) -> int:
    directory = Path(args.manifests)
    if not directory.is_dir():
        raise _fail(EXIT_IO, f"{directory} is not a directory")
    if not manifests.find_manifests(directory):
        raise _fail(EXIT_IO, f"no manifests found in {directory}")
    report = audit.build_audit_report(directory)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    manifests.write_json(out_path, report)
    manifests.write_manifest(
        out_path.parent,
        command="audit",
        argv=argv,
        seeds={"robustness_seed": audit.ROBUSTNESS_SEED},
        inputs=[str(p) for p in manifests.find_manifests(directory)],
        config={"manifest_dir": str(directory)},
        artifacts=[out_path],
        stem=out_path.stem,
    )
    evaluated = sum(
        1
        for rows in report["groups"].values()
        for e in rows
        if e["status"] == "evaluated"
    )
    print(f"properties_evaluated={evaluated} out={out_path}")
    return EXIT_OK


# -- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbt-trust",
        description="Boosted-tree training, tuning, and explanation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("generate", help="generate a synthetic CDS panel")
    p.add_argument("--spec", required=True, help="generation spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prefix", default="panel", help="artifact file prefix")

    p = sub.add_parser("train", help="fit a boosted ensemble")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--holdout", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file path")

    p = sub.add_parser("tune", help="cross-validated grid search")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--grid", required=True, help="grid JSON file or builtin:<name>")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("explain", help="produce one explanation artifact")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", required=True, help="|".join(EXPLAIN_METHODS))
    p.add_argument("--feature", default=None)
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-grid", type=int, default=explain.DEFAULT_PDP_GRID)
    p.add_argument("--min-jump-ratio", type=float, default=None)
    p.add_argument("--centered", action="store_true")
    p.add_argument("--vi-mode", choices=("gain", "permutation"), default="gain")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--n-samples", type=int, default=1000)
    p.add_argument("--top-m", type=int, default=5)
    p.add_argument("--kernel-width", type=float, default=None)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--sampled", action="store_true")
    p.add_argument("--permutations", type=int, default=2000)
    p.add_argument("--background", type=int, default=100)
    p.add_argument("--out", required=True, help="artifact file path")

    p = sub.add_parser("audit", help="emit the trust-property audit report")
    p.add_argument("--manifests", required=True, help="directory of manifests")
    p.add_argument("--out", required=True, help="report file path")

    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "tune": cmd_tune,
    "explain": cmd_explain,
    "audit": cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.cmd](args, list(argv))
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
