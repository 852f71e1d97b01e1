"""Run orchestration: single runs, kernel x loss ablations, method comparisons.

A run config is a JSON document::

    {
      "schema_version": 1,
      "name": "exp-rbf2",                      # optional label
      "data": {... SyntheticConfig fields ...} # or {"csv": "path/to/data.csv"}
      "train": {... TrainConfig fields ...},   # incl. "loss" and "kernel"
      "probe": {"ridge_penalty": 1.0, "logistic_epochs": 500, "logistic_lr": 0.1}
    }

Top-level ``"loss"``, ``"kernel"`` and ``"bandwidth"`` keys are accepted as
shorthands for the matching ``train`` entries. Every run lives in
``<out>/runs/<config-hash>/`` with ``config.json``, ``result.json``,
``trace.csv`` and ``checkpoint.json``; an existing ``result.json`` is reused,
which makes grids resumable.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .datagen import SyntheticConfig, generate, load_csv, save_csv
from .encoder import TrainConfig, save_checkpoint, train, write_trace
from .kernels import LabelKernel
from .metrics import PROBE_CSV_FIELDS, ProbeResult, evaluate

logger = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "AblationGrid",
    "RunRecord",
    "resolve_config",
    "config_hash",
    "run_single",
    "run_ablation",
    "run_comparison",
    "aggregate",
    "format_std",
    "gen_data",
    "COMPARISON_FIELDS",
]

SCHEMA_VERSION = 1
DESK_EPOCHS = 100
COMPARISON_FIELDS = ["method", "int_mae", "bacc", "ext_mae", "score"]
_PROBE_DEFAULTS = {"ridge_penalty": 1.0, "logistic_epochs": 500, "logistic_lr": 0.1}


# --------------------------------------------------------------------------
# config handling
# --------------------------------------------------------------------------


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


def _write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def resolve_config(raw: dict, seed: Optional[int] = None, epochs: Optional[int] = None) -> dict:
    """Validate a run config and fill every default, returning a plain dict.

    ``seed`` overrides both the data and the training seed.
    """
    cfg = copy.deepcopy(raw)
    version = cfg.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    train_cfg = dict(cfg.pop("train", {}))
    if "loss" in cfg:
        train_cfg["loss"] = cfg.pop("loss")
    if "kernel" in cfg:
        kernel = cfg.pop("kernel")
        if isinstance(kernel, str):
            kernel = {"kernel": kernel, "bandwidth": cfg.pop("bandwidth", 1.0)}
        train_cfg["kernel"] = kernel
    train_cfg.setdefault("epochs", DESK_EPOCHS)
    data_cfg = dict(cfg.pop("data", {}))
    probe_cfg = {**_PROBE_DEFAULTS, **cfg.pop("probe", {})}
    name = cfg.pop("name", None)
    if cfg:
        raise ValueError(f"unknown config fields: {sorted(cfg)}")
    unknown_probe = set(probe_cfg) - set(_PROBE_DEFAULTS)
    if unknown_probe:
        raise ValueError(f"unknown probe fields: {sorted(unknown_probe)}")

    if seed is not None:
        train_cfg["seed"] = int(seed)
        if "csv" not in data_cfg:
            data_cfg["seed"] = int(seed)
    if epochs is not None:
        train_cfg["epochs"] = int(epochs)

    tc = TrainConfig.from_dict(train_cfg)
    if "csv" in data_cfg:
        if set(data_cfg) != {"csv"}:
            raise ValueError("a csv data source takes no other data fields")
        data = {"csv": str(data_cfg["csv"])}
    else:
        data = SyntheticConfig.from_dict(data_cfg).to_dict()
    out = {
        "schema_version": SCHEMA_VERSION,
        "data": data,
        "train": tc.to_dict(),
        "probe": probe_cfg,
    }
    if name is not None:
        out["name"] = str(name)
    return out


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _method_name(resolved: dict) -> str:
    if "name" in resolved:
        return resolved["name"]
    t = resolved["train"]
    if t["loss"] == "l1":
        return "baseline_l1"
    k = t["kernel"]
    return f"{t['loss']}-{k['kernel']}{k['bandwidth']:g}"


def _load_data(resolved: dict):
    data = resolved["data"]
    if "csv" in data:
        return load_csv(data["csv"])
    return generate(SyntheticConfig.from_dict({**data, "age_range": tuple(data["age_range"])}))


# --------------------------------------------------------------------------
# single run
# --------------------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    result: ProbeResult
    wall_time: float
    trace_path: str
    run_dir: str
    reused: bool = False

    def csv_row(self) -> dict:
        t = self.config["train"]
        r = self.result
        return {
            "loss": t["loss"],
            "kernel": t["kernel"]["kernel"],
            "bandwidth": t["kernel"]["bandwidth"],
            "seed": t["seed"],
            "int_mae": r.mae_internal,
            "ext_mae": r.mae_external,
            "bacc": r.site_bacc,
            "score": r.challenge_score,
        }


def _record_from_dir(run_dir: Path) -> RunRecord:
    doc = json.loads((run_dir / "result.json").read_text())
    return RunRecord(
        doc["config"],
        ProbeResult(**doc["result"]),
        doc["wall_time"],
        str(run_dir / "trace.csv"),
        str(run_dir),
        reused=True,
    )


def run_single(config, out_dir="results", seed=None, epochs=None, resume=True) -> RunRecord:
    """Generate or load data, train, evaluate, and persist the run.

    ``config`` is a path to a JSON file or an already-parsed dict.
    """
    raw = _read_json(config) if isinstance(config, (str, Path)) else config
    resolved = resolve_config(raw, seed=seed, epochs=epochs)
    run_dir = Path(out_dir) / "runs" / config_hash(resolved)
    if resume and (run_dir / "result.json").exists():
        return _record_from_dir(run_dir)

    start = time.perf_counter()
    data = _load_data(resolved)
    splits = data.splits()
    tc = TrainConfig.from_dict(resolved["train"])
    trained = train(splits["train"], tc)
    probe = resolved["probe"]
    result = evaluate(
        trained.encoder,
        splits,
        ridge_penalty=probe["ridge_penalty"],
        logistic_epochs=probe["logistic_epochs"],
        logistic_lr=probe["logistic_lr"],
        head=trained.head,
    )
    wall = time.perf_counter() - start

    run_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(run_dir / "config.json", json.dumps(resolved, indent=2, sort_keys=True))
    trace_path = run_dir / "trace.csv"
    tmp = run_dir / "trace.csv.tmp"
    write_trace(tmp, trained.trace)
    os.replace(tmp, trace_path)
    tmp = run_dir / "checkpoint.json.tmp"
    save_checkpoint(tmp, trained.encoder, trained.head)
    os.replace(tmp, run_dir / "checkpoint.json")
    doc = {
        "config": resolved,
        "result": result.to_dict(),
        "wall_time": wall,
        "skipped_batches": trained.skipped_batches,
    }
    _write_atomic(run_dir / "result.json", json.dumps(doc, indent=2, sort_keys=True))
    logger.info("run %s: %s (%.1fs)", run_dir.name, result, wall)
    return RunRecord(resolved, result, wall, str(trace_path), str(run_dir))


# --------------------------------------------------------------------------
# ablation grid
# --------------------------------------------------------------------------


@dataclass
class AblationGrid:
    kernels: List[dict] = field(
        default_factory=lambda: [
            {"kernel": "cauchy", "bandwidth": 1.0},
            {"kernel": "cauchy", "bandwidth": 2.0},
            {"kernel": "rbf", "bandwidth": 1.0},
            {"kernel": "rbf", "bandwidth": 2.0},
        ]
    )
    losses: List[str] = field(default_factory=lambda: ["yaware", "thr", "exp"])
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    base: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.kernels and self.losses and self.seeds):
            raise ValueError("ablation grid axes must be non-empty")
        self.kernels = [LabelKernel.from_config(k).to_config() for k in self.kernels]

    @classmethod
    def from_dict(cls, d: dict) -> "AblationGrid":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown grid fields: {sorted(unknown)}")
        return cls(**d)

    def cells(self) -> List[dict]:
        out = []
        for kernel in self.kernels:
            for loss in self.losses:
                for seed in self.seeds:
                    cfg = copy.deepcopy(self.base)
                    cfg.setdefault("train", {})
                    cfg["train"] = {**cfg["train"], "loss": loss, "kernel": kernel}
                    out.append({"config": cfg, "seed": seed})
        return out

    def __len__(self):
        return len(self.kernels) * len(self.losses) * len(self.seeds)


def _run_cell(args):
    cfg, seed, out_dir, epochs = args
    try:
        rec = run_single(cfg, out_dir, seed=seed, epochs=epochs)
        return {"ok": True, "row": rec.csv_row()}
    except Exception as exc:  # one bad cell must not stop the grid
        t = cfg.get("train", {})
        return {
            "ok": False,
            "cell": {"loss": t.get("loss"), "kernel": t.get("kernel"), "seed": seed},
            "error": f"{type(exc).__name__}: {exc}",
        }


def _map_cells(tasks, jobs):
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def format_std(mean: float, std: float, digits: int = 2) -> str:
    """``2.55\\std{0.00}``-style cell."""
    return f"{mean:.{digits}f}\\std{{{std:.{digits}f}}}"


def aggregate(rows: Sequence[dict], keys=("kernel", "bandwidth", "loss")) -> List[dict]:
    """Mean and sample std (0 for a single seed) of every metric per group."""
    groups: Dict[tuple, List[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    out = []
    for key, members in groups.items():
        agg = dict(zip(keys, key))
        agg["n"] = len(members)
        for metric in ("int_mae", "ext_mae", "bacc", "score"):
            vals = np.array([float(m[metric]) for m in members])
            agg[f"{metric}_mean"] = float(vals.mean())
            agg[f"{metric}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out.append(agg)
    return out


def _csv_text(rows, fields) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in fields})
    return buf.getvalue()


def _score_table(summary, grid: AblationGrid) -> str:
    """Kernel / bandwidth rows x loss columns of the challenge score."""
    index = {(s["kernel"], s["bandwidth"], s["loss"]): s for s in summary}
    names = {"yaware": "L^y-aware", "thr": "L^threshold", "exp": "L^exp", "supcon": "L^supcon"}
    header = ["Kernel", "sigma/gamma"] + [names.get(loss, loss) for loss in grid.losses]
    lines = [" | ".join(header)]
    for k in grid.kernels:
        label = "RBF" if k["kernel"] == "rbf" else k["kernel"].capitalize()
        cells = [label, f"{k['bandwidth']:g}"]
        for loss in grid.losses:
            s = index.get((k["kernel"], k["bandwidth"], loss))
            cells.append("failed" if s is None else format_std(s["score_mean"], s["score_std"]))
        lines.append(" | ".join(cells))
    return "\n".join(lines) + "\n"


def _metrics_table(summary) -> str:
    lines = ["Kernel | sigma/gamma | Method | Int. MAE | BAcc | Ext. MAE | L_c"]
    for s in summary:
        lines.append(
            " | ".join(
                [
                    s["kernel"],
                    f"{s['bandwidth']:g}",
                    s["loss"],
                    format_std(s["int_mae_mean"], s["int_mae_std"]),
                    # balanced accuracy rendered in percent
                    format_std(100 * s["bacc_mean"], 100 * s["bacc_std"]),
                    format_std(s["ext_mae_mean"], s["ext_mae_std"]),
                    format_std(s["score_mean"], s["score_std"]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def run_ablation(grid, out_dir="results", epochs=None, jobs=1) -> dict:
    """Run every (kernel, loss, seed) cell and write per-seed and aggregate tables.

    Writes ``ablation_runs.csv``, ``ablation_summary.csv``,
    ``ablation_table.txt`` and, when cells fail, ``ablation_errors.json``.
    """
    if isinstance(grid, (str, Path)):
        grid = _read_json(grid)
    if isinstance(grid, dict):
        grid = AblationGrid.from_dict(grid)
    out = Path(out_dir)
    tasks = [(c["config"], c["seed"], str(out), epochs) for c in grid.cells()]
    results = _map_cells(tasks, jobs)
    rows = [r["row"] for r in results if r["ok"]]
    errors = [{k: r[k] for k in ("cell", "error")} for r in results if not r["ok"]]
    summary = aggregate(rows)
    summary_fields = ["kernel", "bandwidth", "loss", "n"] + [
        f"{m}_{s}" for m in ("int_mae", "ext_mae", "bacc", "score") for s in ("mean", "std")
    ]
    _write_atomic(out / "ablation_runs.csv", _csv_text(rows, PROBE_CSV_FIELDS))
    _write_atomic(out / "ablation_summary.csv", _csv_text(summary, summary_fields))
    _write_atomic(out / "ablation_table.txt", _score_table(summary, grid) + "\n" + _metrics_table(summary))
    if errors:
        _write_atomic(out / "ablation_errors.json", json.dumps(errors, indent=2))
    return {"rows": rows, "summary": summary, "errors": errors}


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------


def run_comparison(configs, out_dir="results", seeds=None, epochs=None, jobs=1) -> dict:
    """Compare methods on the same data, seed by seed.

    The first config is the reference (typically the L1 baseline). Writes
    ``comparison.csv`` (per-method medians over seeds, columns
    ``method,int_mae,bacc,ext_mae,score``), ``comparison_runs.csv`` (one row
    per method and seed) and ``verdicts.json`` with, for every other method,
    the number of seeds where it beats the reference on external MAE and on
    site BAcc.
    """
    raws = [_read_json(c) if isinstance(c, (str, Path)) else c for c in configs]
    if len(raws) < 2:
        raise ValueError("comparison needs at least two configs")
    seeds = list(seeds) if seeds is not None else [None]
    datas = [json.dumps(resolve_config(r, epochs=epochs)["data"], sort_keys=True) for r in raws]
    if len(set(datas)) != 1:
        raise ValueError("mismatched dataset seeds or data configs across comparison configs")
    names = [_method_name(resolve_config(r)) for r in raws]
    if len(set(names)) != len(names):
        names = [f"{n}#{i}" for i, n in enumerate(names)]

    tasks = [(r, s, str(out_dir), epochs) for s in seeds for r in raws]
    results = _map_cells(tasks, jobs)
    failed = [r for r in results if not r["ok"]]
    if failed:
        raise RuntimeError(f"comparison run failed: {failed[0]['error']}")
    per_seed = []
    for idx, res in enumerate(results):
        s_idx, m_idx = divmod(idx, len(raws))
        row = res["row"]
        per_seed.append(
            {
                "method": names[m_idx],
                "seed": row["seed"],
                "int_mae": row["int_mae"],
                "bacc": row["bacc"],
                "ext_mae": row["ext_mae"],
                "score": row["score"],
            }
        )
    table = []
    for name in names:
        mine = [r for r in per_seed if r["method"] == name]
        table.append(
            {"method": name, **{k: float(np.median([r[k] for r in mine])) for k in COMPARISON_FIELDS[1:]}}
        )
    ref = names[0]
    verdicts = {"reference": ref, "n_seeds": len(seeds), "methods": {}}
    for name in names[1:]:
        pairs = [
            (a, b)
            for a, b in zip(
                [r for r in per_seed if r["method"] == name], [r for r in per_seed if r["method"] == ref]
            )
        ]
        verdicts["methods"][name] = {
            "lower_ext_mae_seeds": sum(a["ext_mae"] < b["ext_mae"] for a, b in pairs),
            "lower_bacc_seeds": sum(a["bacc"] < b["bacc"] for a, b in pairs),
            "lower_score_seeds": sum(a["score"] < b["score"] for a, b in pairs),
            "median_score": float(np.median([a["score"] for a, _ in pairs])),
            "reference_median_score": float(np.median([b["score"] for _, b in pairs])),
        }
    out = Path(out_dir)
    _write_atomic(out / "comparison.csv", _csv_text(table, COMPARISON_FIELDS))
    _write_atomic(out / "comparison_runs.csv", _csv_text(per_seed, ["method", "seed"] + COMPARISON_FIELDS[1:]))
    _write_atomic(out / "verdicts.json", json.dumps(verdicts, indent=2))
    return {"table": table, "runs": per_seed, "verdicts": verdicts}


# --------------------------------------------------------------------------
# data generation
# --------------------------------------------------------------------------


def gen_data(config, out_dir="data", seed=None) -> Path:
    """Write a synthetic dataset CSV plus its JSON manifest; returns the CSV path."""
    raw = _read_json(config) if isinstance(config, (str, Path)) else dict(config)
    raw.pop("schema_version", None)
    data_cfg = dict(raw.get("data", raw))
    if seed is not None:
        data_cfg["seed"] = int(seed)
    cfg = SyntheticConfig.from_dict(data_cfg)
    ds = generate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"synthetic_seed{cfg.seed}.csv"
    save_csv(ds, path)
    return path
