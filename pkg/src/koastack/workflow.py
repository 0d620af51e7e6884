"""End-to-end stages: synth -> prep -> train-base -> extract -> tune-meta -> stack -> report.

Every stage writes into its own directory under the output root together
with a ``stage.json`` manifest recording the config hash, seed and the
SHA-256 of each file it produced.  With ``resume=True`` a stage whose
manifest verifies is skipped instead of recomputed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import persist
from .dataset import (
    DatasetError, apply_manifest, class_histogram, ingest, read_manifest, remap_binary,
    stratified_split, synthesize, write_dataset, write_manifest,
)
from .ensemble import (
    MetaLearnerSpec, SearchGrid, StackingClassifier, cross_val_search, full_proba,
    out_of_fold_probabilities, read_proba_csv, select_base_learners, stack_features,
    write_proba_csv, write_search_csv,
)
from .imaging import Preprocessor
from .metrics import evaluate, read_reports, summary_table, write_reports
from .nn import HISTORY_COLUMNS, CNNClassifier
from .pipeline import GradingPipeline

logger = logging.getLogger(__name__)

STAGES = ("synth", "prep", "train-base", "extract", "tune-meta", "stack", "report")
SPLITS = ("train", "val", "test")


class StageError(RuntimeError):
    """An upstream artifact is missing or does not verify."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _stage_dir(out: Path, stage: str) -> Path:
    return out / stage.replace("-", "_")


def write_stage_manifest(out: Path, stage: str, cfg: dict, files) -> None:
    files = sorted(Path(f) for f in files)
    doc = {
        "stage": stage,
        "config_hash": cfgmod.config_hash(cfg),
        "seed": cfg["seed"],
        "files": {str(f.relative_to(out)): _sha256(f) for f in files},
    }
    (_stage_dir(out, stage) / "stage.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def stage_verified(out: Path, stage: str, cfg: dict) -> bool:
    """True if the stage's artifacts exist, match this config and hash-verify."""
    path = _stage_dir(out, stage) / "stage.json"
    if not path.exists():
        return False
    doc = json.loads(path.read_text())
    if doc["config_hash"] != cfgmod.config_hash(cfg):
        raise cfgmod.ConfigError(
            f"stage {stage!r} in {out} was produced by a different configuration; "
            "use a fresh --out directory or rerun without --stage-resume"
        )
    for rel, digest in doc["files"].items():
        f = out / rel
        if not f.exists() or _sha256(f) != digest:
            logger.warning("stage %s: artifact %s is missing or modified", stage, rel)
            return False
    return True


def require(out: Path, stage: str) -> None:
    if not (_stage_dir(out, stage) / "stage.json").exists():
        raise StageError(f"missing artifacts of stage {stage!r} in {out}; run `koastack {stage}` first")


def _labels(cfg, grades):
    grades = np.asarray(grades, dtype=np.int64)
    if cfg["task"] == "binary":
        return np.array([remap_binary(g) for g in grades], dtype=np.int64)
    return grades


def _n_classes(cfg) -> int:
    return 2 if cfg["task"] == "binary" else 5


def data_root(cfg, out: Path) -> Path:
    return Path(cfg["data_root"]) if cfg["data_root"] else _stage_dir(out, "synth") / "images"


# stages ----------------------------------------------------------------------

def stage_synth(cfg, out: Path) -> None:
    d = _stage_dir(out, "synth")
    s = cfg["synth"]
    samples = synthesize(s["counts"], s["width"], s["height"], cfg["seed"], s["gap_jitter"])
    write_dataset(samples, d / "images")
    manifest = d / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "grade"])
        for smp in samples:
            w.writerow([smp.source_id, smp.grade])
    files = [manifest, *[d / "images" / smp.source_id for smp in samples]]
    write_stage_manifest(out, "synth", cfg, files)
    logger.info("synthesized %d images, per class %s", len(samples), class_histogram([x.grade for x in samples]))


def stage_prep(cfg, out: Path) -> None:
    if not cfg["data_root"]:
        require(out, "synth")
    d = _stage_dir(out, "prep")
    samples = ingest(data_root(cfg, out))
    splits = stratified_split(samples, cfg["split_ratios"], cfg["seed"])
    write_manifest(splits, d / "splits.csv")
    arrays = {}
    for name, part in splits.items():
        pre = Preprocessor(cfgmod.preprocess_config(cfg, train=(name == "train")))
        arrays[f"X_{name}"] = pre.transform([s.image for s in part])
        arrays[f"grade_{name}"] = np.array([s.grade for s in part], dtype=np.int64)
        arrays[f"id_{name}"] = np.array([s.source_id for s in part])
    np.savez(d / "tensors.npz", **arrays)
    write_stage_manifest(out, "prep", cfg, [d / "splits.csv", d / "tensors.npz"])


def load_prepared(cfg, out: Path) -> dict:
    """split -> (X, task labels, ids)."""
    require(out, "prep")
    with np.load(_stage_dir(out, "prep") / "tensors.npz") as z:
        return {s: (z[f"X_{s}"], _labels(cfg, z[f"grade_{s}"]), z[f"id_{s}"].tolist()) for s in SPLITS}


def _base_estimator(cfg, index: int, backbone: dict) -> CNNClassifier:
    t = cfg["training"]
    return CNNClassifier(
        channels=tuple(backbone["channels"]), dense_units=t["dense_units"], dropout=t["dropout"],
        task=cfg["task"], n_classes=_n_classes(cfg), learning_rate=t["learning_rate"],
        momentum=t["momentum"], epochs=int(backbone["epochs"]), batch_size=t["batch_size"],
        class_weight=t["class_weight"], random_state=cfg["seed"] * 1000 + index,
    )


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], *[repr(float(row[c])) for c in HISTORY_COLUMNS[1:]]])


def stage_train_base(cfg, out: Path) -> None:
    data = load_prepared(cfg, out)
    d = _stage_dir(out, "train-base")
    files = []
    (X, y, _), (Xv, yv, _) = data["train"], data["val"]
    for i, b in enumerate(cfg["backbones"]):
        bd = d / b["name"]
        bd.mkdir(parents=True, exist_ok=True)
        logger.info("training backbone %s (%s, %d epochs)", b["name"], b["channels"], b["epochs"])
        model = _base_estimator(cfg, i, b).fit(X, y, Xv if len(yv) else None, yv if len(yv) else None)
        bundle = GradingPipeline.from_fitted(cfgmod.preprocess_config(cfg, train=False).to_dict(), model)
        persist.save_model(bundle, bd / "model.json")
        write_history(model.history_, bd / "history.csv")
        files += [bd / "model.json", bd / "history.csv"]
    write_stage_manifest(out, "train-base", cfg, files)


def load_base_models(cfg, out: Path) -> dict:
    require(out, "train-base")
    d = _stage_dir(out, "train-base")
    return {b["name"]: persist.load_model(d / b["name"] / "model.json").model_ for b in cfg["backbones"]}


def stage_extract(cfg, out: Path) -> None:
    data = load_prepared(cfg, out)
    models = load_base_models(cfg, out)
    n_classes = _n_classes(cfg)
    d = _stage_dir(out, "extract")
    d.mkdir(parents=True, exist_ok=True)
    files = []
    reports = []
    for name, model in models.items():
        for split, (X, y, ids) in data.items():
            proba = full_proba(model, X, n_classes)
            path = d / f"probs_{name}_{split}.csv"
            write_proba_csv(ids, proba, path)
            files.append(path)
            if len(y):
                reports.append(evaluate(proba, y, n_classes, split, name))
    write_reports(reports, d / "base_reports.csv")
    test_acc = {r.model: r.accuracy for r in reports if r.split == "test"}
    selected = select_base_learners(test_acc, cfg["selection_threshold"])
    logger.info("selected base learners %s (threshold %s)", selected, cfg["selection_threshold"])
    (d / "selection.json").write_text(json.dumps(
        {"threshold": cfg["selection_threshold"], "test_accuracy": test_acc, "selected": selected},
        sort_keys=True, indent=1) + "\n")
    files += [d / "base_reports.csv", d / "selection.json"]
    if cfg["stacking_mode"] == "out_of_fold":
        X, y, ids = data["train"]
        for name in selected:
            proba = out_of_fold_probabilities(models[name], X, y, n_classes, cfg["stack_folds"], cfg["seed"])
            path = d / f"oof_{name}_train.csv"
            write_proba_csv(ids, proba, path)
            files.append(path)
    write_stage_manifest(out, "extract", cfg, files)


def load_stacked(cfg, out: Path) -> tuple[list, dict]:
    """Selected learner ids and split -> (StackedFeatures, labels)."""
    require(out, "extract")
    data = load_prepared(cfg, out)
    d = _stage_dir(out, "extract")
    selected = json.loads((d / "selection.json").read_text())["selected"]
    feats = {}
    for split, (_, y, ids) in data.items():
        mats = []
        for name in selected:
            src = d / (f"oof_{name}_train.csv" if split == "train" and cfg["stacking_mode"] == "out_of_fold"
                       else f"probs_{name}_{split}.csv")
            if not src.exists():
                raise StageError(f"missing {src.name}; rerun `koastack extract`")
            file_ids, proba = read_proba_csv(src)
            if file_ids != ids:
                raise StageError(f"{src.name} rows do not match the prepared {split} split")
            mats.append(proba)
        feats[split] = (stack_features(mats, selected), y)
    return selected, feats


def stage_tune_meta(cfg, out: Path) -> None:
    _, feats = load_stacked(cfg, out)
    Z, y = feats["train"]
    m = cfg["meta"]
    d = _stage_dir(out, "tune-meta")
    d.mkdir(parents=True, exist_ok=True)
    best = {}
    files = []
    for kind, params in m["grids"].items():
        grid = SearchGrid(params, folds=m["folds"], mode=m["search_mode"], n_draws=m["n_draws"],
                          seed=cfg["seed"], metric=m["search_metric"])
        result = cross_val_search(kind, grid, Z.matrix, y, seed=cfg["seed"])
        path = d / f"search_{kind}.csv"
        write_search_csv(result, path)
        files.append(path)
        best[kind] = {"hyperparameters": result.best.hyperparameters, "cv_score": result.best_score}
        logger.info("tuned %s: %s (cv %s %.4f)", kind, result.best.hyperparameters, m["search_metric"],
                    result.best_score)
    (d / "best.json").write_text(json.dumps(best, sort_keys=True, indent=1) + "\n")
    files.append(d / "best.json")
    write_stage_manifest(out, "tune-meta", cfg, files)


def stage_stack(cfg, out: Path) -> None:
    selected, feats = load_stacked(cfg, out)
    require(out, "tune-meta")
    best = json.loads((_stage_dir(out, "tune-meta") / "best.json").read_text())
    n_classes = _n_classes(cfg)
    d = _stage_dir(out, "stack")
    d.mkdir(parents=True, exist_ok=True)
    Z, y = feats["train"]
    reports, metas, files = [], {}, []
    for kind in cfg["meta"]["grids"]:
        spec = MetaLearnerSpec(kind, best[kind]["hyperparameters"])
        meta = spec.build(cfg["seed"]).fit(Z.matrix, y)
        metas[kind] = meta
        persist.save_model(meta, d / f"meta_{kind}.json")
        files.append(d / f"meta_{kind}.json")
        for split in SPLITS:
            Zs, ys = feats[split]
            if len(ys):
                reports.append(evaluate(full_proba(meta, Zs.matrix, n_classes), ys, n_classes, split,
                                        f"stack:{kind}"))
    write_reports(reports, d / "meta_reports.csv")
    files.append(d / "meta_reports.csv")

    sel_metric, sel_split = cfg["meta"]["selection_metric"], cfg["meta"]["selection_split"]
    scored = [(getattr(r, sel_metric), i, r.model.split(":", 1)[1]) for i, r in enumerate(reports)
              if r.split == sel_split]
    scored = [(s, i, k) for s, i, k in scored if not np.isnan(s)]
    if not scored:
        raise StageError(f"no meta-learner could be scored on split {sel_split!r}")
    final = max(scored, key=lambda t: (t[0], -t[1]))[2]

    bases = load_base_models(cfg, out)
    stacker = StackingClassifier.from_fitted([(n, bases[n]) for n in selected], metas[final], n_classes,
                                             mode=cfg["stacking_mode"])
    bundle = GradingPipeline.from_fitted(cfgmod.preprocess_config(cfg, train=False).to_dict(), stacker)
    persist.save_model(bundle, d / "model.json")
    (d / "final.json").write_text(json.dumps(
        {"meta_learner": final, "selection_metric": sel_metric, "selection_split": sel_split,
         "base_learners": selected}, sort_keys=True, indent=1) + "\n")
    files += [d / "model.json", d / "final.json"]
    write_stage_manifest(out, "stack", cfg, files)


def stage_report(cfg, out: Path) -> None:
    require(out, "extract")
    require(out, "stack")
    reports = read_reports(_stage_dir(out, "extract") / "base_reports.csv")
    reports += read_reports(_stage_dir(out, "stack") / "meta_reports.csv")
    d = _stage_dir(out, "report")
    d.mkdir(parents=True, exist_ok=True)
    write_reports(reports, d / "metrics.csv")
    final = json.loads((_stage_dir(out, "stack") / "final.json").read_text())
    summary = {
        "task": cfg["task"],
        "seed": cfg["seed"],
        "config_hash": cfgmod.config_hash(cfg),
        "final": final,
        "results": summary_table(reports),
    }
    (d / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    write_stage_manifest(out, "report", cfg, [d / "metrics.csv", d / "summary.json"])


STAGE_FUNCS = {
    "synth": stage_synth,
    "prep": stage_prep,
    "train-base": stage_train_base,
    "extract": stage_extract,
    "tune-meta": stage_tune_meta,
    "stack": stage_stack,
    "report": stage_report,
}


def run_stage(stage: str, cfg: dict, out, resume: bool = False) -> bool:
    """Run one stage; returns False if it was skipped as already complete."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    text = cfgmod.dump(cfg)
    if cfg_path.exists() and cfg_path.read_text() != text and resume:
        raise cfgmod.ConfigError(f"{cfg_path} differs from the current configuration")
    cfg_path.write_text(text)
    if resume and stage_verified(out, stage, cfg):
        logger.info("stage %s: artifacts verified, skipping", stage)
        return False
    _stage_dir(out, stage).mkdir(parents=True, exist_ok=True)
    STAGE_FUNCS[stage](cfg, out)
    return True


def run_all(cfg: dict, out, resume: bool = False) -> None:
    for stage in STAGES:
        if stage == "synth" and cfg["data_root"]:
            continue
        run_stage(stage, cfg, out, resume)


def evaluate_model(model_path, data_dir, manifest=None, split=None, name=None):
    """Score a saved CNN or stacked bundle on images under ``data_dir``."""
    model = persist.load_model(model_path)
    samples = ingest(data_dir)
    if manifest is not None:
        splits = apply_manifest(samples, read_manifest(manifest))
        parts = dict(splits.items())
        samples = parts[split] if split else [s for p in parts.values() for s in p]
    if not samples:
        raise DatasetError("no images to evaluate")
    if not isinstance(model, GradingPipeline):
        raise DatasetError(f"{model_path} holds a bare {type(model).__name__}; eval needs a model bundle "
                           "(train_base/<name>/model.json or stack/model.json)")
    n_classes = len(model.classes_)
    grades = np.array([s.grade for s in samples])
    y = np.array([remap_binary(g) for g in grades]) if n_classes == 2 else grades
    proba = full_proba(model, [s.image for s in samples], n_classes)
    return evaluate(proba, y, n_classes, split or "all", name or Path(model_path).stem)
