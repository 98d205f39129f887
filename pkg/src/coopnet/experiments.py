"""Experiment grids: train (architecture, seed) cells, analyse, write CSVs.

An experiment spec is a flat ``key = value`` text file; list values are
comma separated and ``#`` starts a comment::

    spec_version = 1
    dataset = synthetic
    synthetic.class_count = 3
    architectures = 2x16, 4x16
    seeds = 1, 2, 3
    analyses = perplexity, fractions, systems

Every run keeps a ``manifest.json`` in the output directory.  Cells whose
training inputs are unchanged are not retrained, and analyses already on
record are not recomputed, so re-running a spec is cheap and reproduces the
same files byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets as ds
from .errors import ConfigError, PathBudgetExceeded, TrainingError
from .network import (
    Checkpoint,
    MlpConfig,
    TrainSchedule,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .nodeclassifiers import evaluate_systems
from .pathgrad import gradient_equivalence_report, path_count, random_network
from .perplexity import (
    OUTPUT_RULES,
    activation_fractions,
    class_activation_histogram,
    perplexity_report,
)

SPEC_VERSION = 1
ANALYSES = ("perplexity", "fractions", "systems", "gradcheck")
FIGURES = ("fig1", "fig2", "fig3", "systems", "fig11")
FIGURE_ALIASES = {"fig4": "systems", "fig5": "systems", "fig6": "systems",
                  "fig7": "systems", "fig9": "systems", "fig10": "systems"}
FIGURE_NEEDS = {"fig1": "fractions", "fig2": None, "fig3": "perplexity",
                "systems": "systems", "fig11": None}
MANIFEST = "manifest.json"


@dataclass(frozen=True)
class ExperimentSpec:
    spec_version: int = SPEC_VERSION
    dataset: str = "synthetic"
    idx_train_images: str | None = None
    idx_train_labels: str | None = None
    idx_test_images: str | None = None
    idx_test_labels: str | None = None
    idx_max_train: int | None = None
    idx_max_test: int | None = None
    synthetic_class_count: int = 3
    synthetic_per_class: int = 200
    synthetic_feature_dim: int = 10
    synthetic_separation: float = 4.0
    synthetic_seed: int = 0
    train_fraction: float = 0.7
    val_fraction: float | None = None
    split_seed: int = 0
    architectures: tuple = ((2, 16),)
    activation: str = "relu"
    loss: str = "mse_linear"
    max_epochs: int = 50
    batch_size: int = 64
    learning_rate: float | None = None
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    checkpoint_epochs: tuple = ()
    checkpoint_batches: tuple = ()
    seeds: tuple = (1, 2, 3)
    analyses: tuple = ()
    perplexity_split: str = "test"
    output_layer_classifiers: bool = False
    gradcheck_samples: int = 20
    gradcheck_tolerance: float = 1e-10
    gradcheck_budget: int = 10**6
    out: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.spec_version != SPEC_VERSION:
            raise ConfigError(f"unsupported spec_version {self.spec_version}")
        if self.dataset not in ("synthetic", "idx"):
            raise ConfigError("dataset must be 'synthetic' or 'idx'")
        if self.dataset == "idx":
            missing = [k for k in ("idx_train_images", "idx_train_labels",
                                   "idx_test_images", "idx_test_labels")
                       if not getattr(self, k)]
            if missing:
                raise ConfigError(f"idx dataset needs {', '.join(missing)}")
        if not self.architectures:
            raise ConfigError("architecture grid is empty")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        unknown = set(self.analyses) - set(ANALYSES)
        if unknown:
            raise ConfigError(f"unknown analyses {sorted(unknown)}; known: {ANALYSES}")
        if self.perplexity_split not in ("train", "test"):
            raise ConfigError("perplexity_split must be 'train' or 'test'")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            MlpConfig((1, 2), 1, self.activation, self.loss)
            self.schedule(1)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def schedule(self, seed: int) -> TrainSchedule:
        lr = self.learning_rate
        if lr is None:
            lr = 1e-3 if self.dataset == "idx" else 1e-2
        return TrainSchedule(
            self.max_epochs, self.batch_size, lr, self.optimizer, self.beta1,
            self.beta2, self.epsilon, seed, self.checkpoint_epochs,
            self.checkpoint_batches,
        )

    def training_fields(self) -> dict:
        skip = {"analyses", "out", "workers", "seeds", "architectures",
                "perplexity_split", "output_layer_classifiers"}
        return {k: v for k, v in self.as_dict().items()
                if k not in skip and not k.startswith("gradcheck_")}

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["architectures"] = [list(a) for a in self.architectures]
        for k in ("checkpoint_epochs", "checkpoint_batches", "seeds", "analyses"):
            d[k] = list(d[k])
        return d

    def spec_hash(self) -> str:
        d = self.as_dict()
        d.pop("out")
        d.pop("workers")
        return _digest(d)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- spec files

_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentSpec)}
_INT_LISTS = {"checkpoint_epochs", "checkpoint_batches", "seeds"}


def _parse_arch(token: str) -> tuple[int, int]:
    try:
        depth, width = token.lower().split("x")
        return int(depth), int(width)
    except ValueError:
        raise ConfigError(f"architecture {token!r} is not of the form DEPTHxWIDTH")


def _convert(name: str, raw: str):
    items = [t.strip() for t in raw.split(",") if t.strip()]
    if name == "architectures":
        return tuple(_parse_arch(t) for t in items)
    if name in _INT_LISTS:
        return tuple(int(t) for t in items)
    if name == "analyses":
        return tuple(items)
    ftype = str(_FIELDS[name].type)
    if raw.strip().lower() in ("none", ""):
        return None
    if ftype.startswith("bool"):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if ftype.startswith("int"):
        return int(raw)
    if ftype.startswith("float"):
        return float(raw)
    return raw.strip()


def parse_spec(text: str, base_dir=None, **overrides) -> ExperimentSpec:
    """Parse spec text; relative IDX paths resolve against ``base_dir``."""
    values = {}
    depths = widths = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        name = key.replace(".", "_").replace("-", "_")
        if name in ("depths", "widths"):
            parsed = tuple(int(t) for t in raw.split(",") if t.strip())
            depths, widths = (parsed, widths) if name == "depths" else (depths, parsed)
            continue
        if name not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[name] = _convert(name, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if "spec_version" not in values:
        raise ConfigError("spec is missing 'spec_version'")
    if depths or widths:
        if "architectures" in values:
            raise ConfigError("give either 'architectures' or 'depths'/'widths'")
        values["architectures"] = tuple(
            (d, w) for d in (depths or (1,)) for w in (widths or (100,))
        )
    if base_dir is not None:
        for k in ("idx_train_images", "idx_train_labels", "idx_test_images",
                  "idx_test_labels"):
            if values.get(k) and not os.path.isabs(values[k]):
                values[k] = str(Path(base_dir) / values[k])
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentSpec(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_spec(path, **overrides) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"spec file {path} not found")
    return parse_spec(path.read_text(), base_dir=path.parent, **overrides)


def format_spec(spec: ExperimentSpec) -> str:
    lines = []
    for name, value in spec.as_dict().items():
        if name == "architectures":
            value = ", ".join(f"{d}x{w}" for d, w in value)
        elif isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- datasets

_DATA_CACHE: dict = {}


def load_data(spec: ExperimentSpec):
    """Resolve the spec's dataset into ``(train, val, test)`` splits."""
    key = _digest(spec.training_fields())
    if key in _DATA_CACHE:
        return _DATA_CACHE[key]
    if spec.dataset == "synthetic":
        data = ds.synthetic_gaussians(
            spec.synthetic_class_count, spec.synthetic_per_class,
            spec.synthetic_feature_dim, spec.synthetic_separation, spec.synthetic_seed,
        )
        val_fraction = spec.val_fraction if spec.val_fraction is not None else 0.15
        splits = ds.split(data, ds.SplitSpec(spec.train_fraction, val_fraction,
                                             spec.split_seed))
    else:
        try:
            full = ds.load_idx(spec.idx_train_images, spec.idx_train_labels)
            test = ds.load_idx(spec.idx_test_images, spec.idx_test_labels,
                               class_count=full.class_count)
        except FileNotFoundError as exc:
            raise ConfigError(f"dataset file not found: {exc.filename}") from exc
        if spec.idx_max_train:
            full = full.subset(np.arange(min(spec.idx_max_train, len(full))))
        if spec.idx_max_test:
            test = test.subset(np.arange(min(spec.idx_max_test, len(test))))
        val_fraction = spec.val_fraction if spec.val_fraction is not None else 1 / 6
        train_set, val = ds.holdout(full, val_fraction, spec.split_seed)
        splits = (train_set, val, test)
    _DATA_CACHE.clear()
    _DATA_CACHE[key] = splits
    return splits


# ------------------------------------------------------------------- cells


def cell_id(spec: ExperimentSpec, arch, seed) -> str:
    depth, width = arch
    return f"{depth}x{width}_{spec.activation}_{spec.loss}_seed{seed}"


def _cell_config(spec, arch, data) -> MlpConfig:
    train_set = data[0]
    return MlpConfig.from_grid(arch[0], arch[1], train_set.feature_dim,
                               train_set.class_count,
                               hidden_activation=spec.activation, loss=spec.loss)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _train_key(spec, arch, seed) -> str:
    return _digest({"train": spec.training_fields(), "arch": list(arch), "seed": seed})


def _analysis_key(spec, name) -> str:
    d = spec.as_dict()
    extra = {
        "perplexity": ["perplexity_split"],
        "fractions": ["perplexity_split"],
        "systems": ["output_layer_classifiers"],
        "gradcheck": ["gradcheck_samples", "gradcheck_tolerance", "gradcheck_budget"],
    }[name]
    return _digest({k: d[k] for k in extra})


def run_cell(spec: ExperimentSpec, arch, seed, out_dir, record=None, analyses=None):
    """Train and/or analyse one cell; returns its manifest record."""
    out_dir = Path(out_dir)
    cid = cell_id(spec, arch, seed)
    cell_dir = out_dir / "cells" / cid
    cell_dir.mkdir(parents=True, exist_ok=True)
    rel = lambda p: str(Path(p).relative_to(out_dir))  # noqa: E731
    analyses = spec.analyses if analyses is None else analyses
    key = _train_key(spec, arch, seed)
    record = dict(record or {})
    if record.get("train_key") != key or not all(
        (out_dir / f).exists() for f in record.get("files", [])
    ):
        record = {"cell": cid, "architecture": list(arch), "seed": seed,
                  "train_key": key, "analyses": {}}
    data = load_data(spec)
    config = _cell_config(spec, arch, data)
    attrs = [arch[0], arch[1], seed]

    if record.get("status") not in ("complete", "diverged"):
        start = time.perf_counter()
        try:
            result = train(config, data, spec.schedule(seed))
        except TrainingError as exc:
            record.update(status="diverged", error=str(exc),
                          wall_time=time.perf_counter() - start, files=[])
            return record
        ckpt_dir = cell_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        files = []
        for ck in result.checkpoints:
            path = ckpt_dir / f"{ck.kind}_{ck.index:04d}.json"
            save_checkpoint(path, ck, config, spec.schedule(seed))
            files.append(rel(path))
        errs = next(((h.train_error, h.val_error, h.test_error)
                     for h in result.history if h.epoch == result.best_epoch), None)
        if errs is None:
            errs = tuple(evaluate(result.best, d)[1] for d in data)
        best = Checkpoint("best", result.best_epoch, result.best.weights, *errs)
        best_path = ckpt_dir / "best.json"
        save_checkpoint(best_path, best, config, spec.schedule(seed))
        files.append(rel(best_path))
        hist_path = cell_dir / "history.csv"
        _write_csv(hist_path,
                   ["depth", "width", "seed", "epoch", "train_loss", "train_error",
                    "val_error", "test_error"],
                   [attrs + [h.epoch, h.train_loss, h.train_error, h.val_error,
                             h.test_error] for h in result.history])
        files.append(rel(hist_path))
        record.update(
            status="complete",
            wall_time=time.perf_counter() - start,
            files=files,
            best_checkpoint=rel(best_path),
            checkpoints=[rel(ckpt_dir / f"{c.kind}_{c.index:04d}.json")
                         for c in result.checkpoints],
            best_epoch=result.best_epoch,
            final_metrics={"train_error": errs[0], "val_error": errs[1],
                           "test_error": errs[2]},
        )
    if record["status"] != "complete":
        return record

    done = record.setdefault("analyses", {})
    for name in analyses:
        akey = _analysis_key(spec, name)
        prev = done.get(name)
        if prev and prev["key"] == akey and all((out_dir / f).exists()
                                                for f in prev["files"]):
            continue
        files, meta = _ANALYSIS_FUNCS[name](spec, config, data, record, out_dir,
                                            cell_dir, attrs)
        done[name] = {"key": akey, "files": [rel(f) for f in files], **meta}
    return record


def _best(record, out_dir):
    ck, config, _ = load_checkpoint(Path(out_dir) / record["best_checkpoint"])
    return ck, ck.network(config)


def _split_by_name(data, name):
    return {"train": data[0], "val": data[1], "test": data[2]}[name]


def _analysis_perplexity(spec, config, data, record, out_dir, cell_dir, attrs):
    ck, mlp = _best(record, out_dir)
    split_name = spec.perplexity_split
    rep = perplexity_report(mlp, _split_by_name(data, split_name), split=split_name)
    tag = [ck.tag, split_name]
    p1 = cell_dir / "perplexity.csv"
    _write_csv(p1, ["depth", "width", "seed", "checkpoint", "split", "layer", "class",
                    "entropy", "perplexity"],
               [attrs + tag + [l, c, h, p] for l, c, h, p in rep.rows()])
    p2 = cell_dir / "mean_perplexity.csv"
    _write_csv(p2, ["depth", "width", "seed", "checkpoint", "split", "layer",
                    "mean_perplexity"],
               [attrs + tag + [l, m] for l, m in enumerate(rep.mean_perplexity, start=1)])
    return [p1, p2], {}


def _analysis_fractions(spec, config, data, record, out_dir, cell_dir, attrs):
    ck, mlp = _best(record, out_dir)
    split_name = spec.perplexity_split
    prof = activation_fractions(mlp, _split_by_name(data, split_name))
    path = cell_dir / "fractions.csv"
    rows = []
    for node, (layer, fr) in enumerate(zip(prof.layer_of_node, prof.fractions)):
        for c, f in enumerate(fr):
            rows.append(attrs + [ck.tag, split_name, node, int(layer), c, f])
    _write_csv(path, ["depth", "width", "seed", "checkpoint", "split",
                      "node_global_index", "layer", "class", "fraction"], rows)
    return [path], {"output_rule": OUTPUT_RULES[config.loss]}


def _analysis_systems(spec, config, data, record, out_dir, cell_dir, attrs):
    checkpoints = [load_checkpoint(Path(out_dir) / f)[0] for f in record["checkpoints"]]
    checkpoints.append(_best(record, out_dir)[0])
    table = evaluate_systems(checkpoints, config, data[0], data[2],
                             include_output=spec.output_layer_classifiers)
    path = cell_dir / "systems.csv"
    table.to_csv(path, extra={"depth": attrs[0], "width": attrs[1], "seed": attrs[2]})
    return [path], {}


def _analysis_gradcheck(spec, config, data, record, out_dir, cell_dir, attrs):
    path = cell_dir / "gradcheck.csv"
    header = ["depth", "width", "seed", "row", "sample", "layer", "node", "source",
              "backprop", "path_sum", "abs_diff"]
    if config.hidden_activation != "relu":
        _write_csv(path, header, [attrs + ["skipped", "", "", "", "", "", "", ""]])
        return [path], {"skipped": "path decomposition needs ReLU hidden units"}
    result = gradcheck_cell(config, attrs[2], spec.gradcheck_samples,
                            spec.gradcheck_tolerance, spec.gradcheck_budget)
    _write_csv(path, header, [attrs + r for r in result.csv_rows()])
    meta = {"ok": result.ok}
    if result.skipped:
        meta["skipped"] = result.skipped
    return [path], meta


_ANALYSIS_FUNCS = {
    "perplexity": _analysis_perplexity,
    "fractions": _analysis_fractions,
    "systems": _analysis_systems,
    "gradcheck": _analysis_gradcheck,
}


# --------------------------------------------------------------- gradcheck


@dataclass
class GradcheckResult:
    layer_sizes: tuple
    seed: int
    tolerance: float
    max_abs_diff: float = float("nan")
    max_rel_diff: float = float("nan")
    mismatches: list = field(default_factory=list)
    skipped: str | None = None

    @property
    def ok(self) -> bool:
        """No coordinate outside tolerance; budget skips do not count as failures."""
        return not self.mismatches

    def csv_rows(self):
        if self.skipped:
            return [["skipped", "", "", "", "", "", "", self.skipped]]
        rows = [["mismatch", m.sample, m.coord[0], m.coord[1], m.coord[2],
                 m.backprop, m.path_sum, m.abs_diff] for m in self.mismatches]
        rows.append(["summary", "", "", "", "", "", "", self.max_abs_diff])
        return rows


def gradcheck_cell(config: MlpConfig, seed: int, n_samples: int = 20,
                   tolerance: float = 1e-10, budget: int = 10**6) -> GradcheckResult:
    """Backprop vs. path-sum on a fresh random network and random samples."""
    result = GradcheckResult(config.layer_sizes, seed, tolerance)
    b1 = path_count(config.layer_sizes, 1)
    if b1 > budget:
        result.skipped = f"budget exceeded: B_1 = {b1} > {budget}"
        return result
    mlp = random_network(config, seed)
    rng = np.random.default_rng([seed, 7])
    x = rng.standard_normal((n_samples, config.feature_dim))
    y = np.eye(config.class_count)[rng.integers(0, config.class_count, n_samples)]
    try:
        rep = gradient_equivalence_report(mlp, list(zip(x, y)), budget, tolerance)
    except PathBudgetExceeded as exc:
        result.skipped = str(exc)
        return result
    result.max_abs_diff = rep.max_abs_diff
    result.max_rel_diff = rep.max_rel_diff
    result.mismatches = rep.mismatches
    return result


def gradcheck(layer_sizes_list, feature_dim: int, seeds, n_samples: int = 20,
              tolerance: float = 1e-10, budget: int = 10**6,
              loss: str = "mse_linear") -> list[GradcheckResult]:
    results = []
    for sizes in layer_sizes_list:
        config = MlpConfig(tuple(sizes), feature_dim, "relu", loss)
        for seed in seeds:
            results.append(gradcheck_cell(config, seed, n_samples, tolerance, budget))
    return results


# --------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    out_dir: str
    spec: dict
    spec_hash: str
    cells: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"spec_hash": self.spec_hash, "spec": self.spec,
                           "cells": self.cells}, indent=1, sort_keys=True)

    def save(self) -> None:
        out = Path(self.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(self.to_json())
        os.replace(tmp, out / MANIFEST)

    @classmethod
    def load(cls, out_dir) -> "RunManifest":
        path = Path(out_dir) / MANIFEST
        doc = json.loads(path.read_text())
        return cls(str(out_dir), doc["spec"], doc["spec_hash"], doc["cells"])

    def experiment_spec(self) -> ExperimentSpec:
        d = dict(self.spec)
        d["architectures"] = tuple(tuple(a) for a in d["architectures"])
        for k in ("checkpoint_epochs", "checkpoint_batches", "seeds", "analyses"):
            d[k] = tuple(d[k])
        return ExperimentSpec(**d)

    @property
    def diverged(self) -> list[str]:
        return [c for c, r in self.cells.items() if r.get("status") == "diverged"]


def _cell_task(args):
    spec, arch, seed, out_dir, record, analyses = args
    return cell_id(spec, arch, seed), run_cell(spec, arch, seed, out_dir, record, analyses)


def run(spec: ExperimentSpec, out_dir=None, workers: int | None = None,
        analyses=None, log=None) -> RunManifest:
    """Run every (architecture, seed) cell of ``spec``.

    ``analyses`` overrides the spec's list (an empty tuple trains only).
    """
    out = Path(out_dir or spec.out)
    out.mkdir(parents=True, exist_ok=True)
    load_data(spec)
    manifest_path = out / MANIFEST
    if manifest_path.exists():
        manifest = RunManifest.load(out)
        manifest.spec, manifest.spec_hash = spec.as_dict(), spec.spec_hash()
    else:
        manifest = RunManifest(str(out), spec.as_dict(), spec.spec_hash())
    tasks = [
        (spec, tuple(arch), seed, str(out),
         manifest.cells.get(cell_id(spec, arch, seed)), analyses)
        for arch in spec.architectures for seed in spec.seeds
    ]
    workers = workers or spec.workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for cid, record in pool.map(_cell_task, tasks):
                manifest.cells[cid] = record
                manifest.save()
                if log:
                    log(f"{cid}: {record.get('status')}")
    else:
        for task in tasks:
            cid, record = _cell_task(task)
            manifest.cells[cid] = record
            manifest.save()
            if log:
                log(f"{cid}: {record.get('status')}")
    manifest.save()
    return manifest


# ---------------------------------------------------------------- figures


class MissingAnalysisError(ConfigError):
    pass


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _cells_for(manifest: RunManifest, analysis):
    cells = [(cid, r) for cid, r in sorted(manifest.cells.items())
             if r.get("status") == "complete"]
    if analysis is None:
        return cells
    missing = [cid for cid, r in cells if analysis not in r.get("analyses", {})]
    if missing or not cells:
        raise MissingAnalysisError(
            f"analysis '{analysis}' is missing for cells {missing or '(none trained)'}; "
            f"run `coopnet {analysis} --spec <spec>` first"
        )
    return cells


def emit_figure_data(manifest: RunManifest, figure: str, out_dir=None, layer: int = 1,
                     node: int = 0, bins: int = 50, split: str = "train") -> list[Path]:
    """Write tidy CSVs with the axes of one figure; returns the paths."""
    figure = FIGURE_ALIASES.get(figure, figure)
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {FIGURES}")
    root = Path(manifest.out_dir)
    dest = Path(out_dir) if out_dir else root / "figures"
    dest.mkdir(parents=True, exist_ok=True)
    cells = _cells_for(manifest, FIGURE_NEEDS[figure])

    if figure == "fig1":
        rows, header = [], None
        for cid, rec in cells:
            table = _read_csv(root / rec["analyses"]["fractions"]["files"][0])[1:]
            classes = sorted({int(r[7]) for r in table})
            header = ["depth", "width", "seed", "checkpoint", "split",
                      "node_global_index", "layer"] + [f"class_{c}" for c in classes]
            grouped = {}
            for r in table:
                grouped.setdefault(tuple(r[:7]), {})[int(r[7])] = r[8]
            for k, per_class in grouped.items():
                rows.append(list(k) + [per_class[c] for c in classes])
        path = dest / "fig1_fractions.csv"
        _write_csv(path, header, rows)
        return [path]

    if figure == "fig2":
        rows = []
        for cid, rec in cells:
            m = rec["final_metrics"]
            d, w = rec["architecture"]
            rows.append([d, w, rec["seed"], rec["best_epoch"], m["train_error"],
                         m["val_error"], m["test_error"]])
        path = dest / "fig2_test_error.csv"
        _write_csv(path, ["depth", "width", "seed", "best_epoch", "train_error",
                          "val_error", "test_error"], rows)
        return [path]

    if figure == "fig3":
        per_cell, max_layer = [], 0
        for cid, rec in cells:
            table = _read_csv(root / rec["analyses"]["perplexity"]["files"][1])[1:]
            per_cell.append((table[0][:5], [r[6] for r in table]))
            max_layer = max(max_layer, len(table))
        rows = [key + vals + [""] * (max_layer - len(vals)) for key, vals in per_cell]
        path = dest / "fig3_mean_perplexity.csv"
        _write_csv(path, ["depth", "width", "seed", "checkpoint", "split"]
                   + [f"layer_{l}" for l in range(1, max_layer + 1)], rows)
        return [path]

    if figure == "systems":
        header, rows = None, []
        for cid, rec in cells:
            table = _read_csv(root / rec["analyses"]["systems"]["files"][0])
            header = table[0]
            rows.extend(table[1:])
        path = dest / "systems_accuracy.csv"
        _write_csv(path, header, rows)
        return [path]

    spec = manifest.experiment_spec()
    data = load_data(spec)
    subset = _split_by_name(data, split)
    rows = []
    for cid, rec in cells:
        ck, mlp = _best(rec, root)
        edges, counts = class_activation_histogram(mlp, subset, layer, node, bins)
        d, w = rec["architecture"]
        for c in range(counts.shape[0]):
            for b in range(counts.shape[1]):
                rows.append([d, w, rec["seed"], ck.tag, split, layer, node, c,
                             edges[b], edges[b + 1], int(counts[c, b])])
    path = dest / f"fig11_layer{layer}_node{node}.csv"
    _write_csv(path, ["depth", "width", "seed", "checkpoint", "split", "layer", "node",
                      "class", "bin_left", "bin_right", "count"], rows)
    return [path]
