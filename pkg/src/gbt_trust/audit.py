"""Trust-property audit over a directory of run manifests.

The report binds computed evidence to twelve trust properties arranged in
three groups: value properties of the representation (model), evaluation
properties of the loss on data, and selection properties of the
optimizer. Properties this artifact does not measure are still listed,
marked either "not evaluated" (in scope, no evidence found) or
"out of scope - not evaluated" (never measured here by design).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import data as data_mod
from . import gbt
from .manifests import read_json
from .rng import rng_from

AUDIT_FORMAT = "gbt-trust/audit/1"

# Property -> group; the five out-of-scope ones are listed but never scored.
PROPERTY_GROUPS = {
    "value": ("justice", "explainability/interpretability", "transparency", "fairness"),
    "evaluation": ("accuracy", "usability", "security/privacy", "accountability"),
    "selection": ("robustness", "reproducibility", "reliability", "availability"),
}
OUT_OF_SCOPE = frozenset(
    {"justice", "fairness", "availability", "security/privacy", "accountability"}
)

ROBUSTNESS_NOISE_SCALE = 0.01
ROBUSTNESS_SEED = 101


def _entry(prop: str, status: str, evidence=None, metric=None) -> dict:
    return {
        "property": prop,
        "status": status,
        "evidence": [str(e) for e in (evidence or [])],
        "metric": metric,
    }


def _noise_rmse_delta(model_path: str, data_path: str, train_manifest: dict):
    """Holdout RMSE change under 1% feature noise, recomputed from scratch."""
    cfg = train_manifest["config"]
    table = data_mod.load_csv(data_path, cfg["target"])
    holdout_fraction = cfg.get("holdout", 0.0)
    if holdout_fraction > 0:
        _, table = data_mod.train_test_split(
            table, 1.0 - holdout_fraction, cfg["split_seed"]
        )
    ensemble = gbt.deserialize_model(Path(model_path).read_bytes())
    clean = gbt.rmse(ensemble.predict_table(table), table.target)
    rng = rng_from(ROBUSTNESS_SEED)
    noisy = np.array(table.rows)
    for j in range(table.d):
        present = ~table.missing_mask[:, j]
        if not present.any():
            continue
        scale = float(table.rows[present, j].std())
        noisy[present, j] += (
            ROBUSTNESS_NOISE_SCALE * scale * rng.standard_normal(int(present.sum()))
        )
    perturbed = gbt.rmse(ensemble.predict(noisy), table.target)
    return clean, perturbed


def build_audit_report(manifest_dir) -> dict:
    """Assemble the audit document from every manifest in a directory."""
    manifest_paths = [str(p) for p in Path(manifest_dir).glob("*.manifest.json")]
    manifests = {p: read_json(p) for p in sorted(manifest_paths)}
    by_command: dict[str, list[tuple[str, dict]]] = {}
    for path, doc in manifests.items():
        by_command.setdefault(doc.get("command", "?"), []).append((path, doc))

    entries: dict[str, dict] = {}

    # Value group: transparency and explainability rest on which artifacts exist.
    explain_runs = by_command.get("explain", [])
    methods = sorted({doc["config"].get("method", "?") for _, doc in explain_runs})
    if explain_runs:
        entries["explainability/interpretability"] = _entry(
            "explainability/interpretability",
            "evaluated",
            [p for p, _ in explain_runs],
            {"methods": methods, "artifact_count": len(explain_runs)},
        )
    train_runs = by_command.get("train", [])
    transparency_evidence = [p for p, _ in train_runs] + [p for p, _ in explain_runs]
    if transparency_evidence:
        entries["transparency"] = _entry(
            "transparency",
            "evaluated",
            transparency_evidence,
            {
                "model_format": "structured text, human readable",
                "explanation_methods": methods,
            },
        )

    # Evaluation group: accuracy from training results, usability from the
    # data summary captured at train time.
    if train_runs:
        path, doc = train_runs[-1]
        results = doc.get("results", {})
        entries["accuracy"] = _entry(
            "accuracy",
            "evaluated",
            [path],
            {
                "train_rmse": results.get("train_rmse"),
                "holdout_rmse": results.get("holdout_rmse"),
            },
        )
        summary = doc.get("data_summary")
        if summary:
            entries["usability"] = _entry(
                "usability",
                "evaluated",
                [path],
                {"n": summary.get("n"), "d": summary.get("d")},
            )

    # Selection group.
    if train_runs:
        path, doc = train_runs[-1]
        model_path = doc["artifacts"][0]["path"]
        data_path = doc["inputs"][0]["path"]
        try:
            clean, perturbed = _noise_rmse_delta(model_path, data_path, doc)
            entries["robustness"] = _entry(
                "robustness",
                "evaluated",
                [path],
                {
                    "noise_scale": ROBUSTNESS_NOISE_SCALE,
                    "clean_rmse": clean,
                    "perturbed_rmse": perturbed,
                    "rmse_delta": perturbed - clean,
                },
            )
        except (OSError, ValueError) as exc:
            entries["robustness"] = _entry(
                "robustness", "not evaluated", [path], {"error": str(exc)}
            )
    seeded = [p for p, doc in manifests.items() if doc.get("seeds")]
    if seeded:
        entries["reproducibility"] = _entry(
            "reproducibility",
            "evaluated",
            seeded,
            {"manifests_with_seeds": len(seeded), "prng": "numpy-pcg64"},
        )
    tune_runs = by_command.get("tune", [])
    if tune_runs:
        path, doc = tune_runs[-1]
        results = doc.get("results", {})
        std = results.get("best_std_rmse")
        entries["reliability"] = _entry(
            "reliability",
            "evaluated",
            [path],
            {"cv_fold_rmse_std": std, "k": doc["config"].get("k")},
        )

    groups = {}
    for group, props in PROPERTY_GROUPS.items():
        rows = []
        for prop in props:
            if prop in entries:
                rows.append(entries[prop])
            elif prop in OUT_OF_SCOPE:
                rows.append(_entry(prop, "out of scope - not evaluated"))
            else:
                rows.append(_entry(prop, "not evaluated"))
        groups[group] = rows

    return {
        "format": AUDIT_FORMAT,
        "manifest_count": len(manifests),
        "groups": groups,
    }
