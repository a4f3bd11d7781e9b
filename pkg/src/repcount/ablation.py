"""Ablation harness: a fixed matrix of training configurations per suite.

Every cell is trained once per seed (training seed ``base + k``) on the same
generated dataset and evaluated on its test split. Per-seed test reports and
training logs are kept as JSONL so each table cell can be recomputed from
disk.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from . import config as C
from .errors import ConfigError
from .synthetic import gen_dataset
from .train import EvalReport, evaluate, train, write_log

log = logging.getLogger(__name__)

SUITES = {
    "phases": [
        ("M=1", {"loss": "p2l", "phases": 1}),
        ("M=2", {"loss": "p2l", "phases": 2}),
        ("M=3", {"loss": "p2l", "phases": 3}),
    ],
    "losses": [
        ("pull=off,push=off", {"loss": "regression_only"}),
        ("pull=on,push=off", {"loss": "p2l", "alpha": 1.0, "beta": 0.0}),
        ("pull=off,push=on", {"loss": "p2l", "alpha": 0.0, "beta": 1.0}),
        ("pull=on,push=on", {"loss": "p2l", "alpha": 1.0, "beta": 1.0}),
    ],
    "variants": [
        ("contrastive", {"loss": "contrastive"}),
        ("triplet", {"loss": "triplet"}),
        ("p2l", {"loss": "p2l"}),
    ],
    "rca": [
        ("rca=off", {"rca": False}),
        ("rca=on", {"rca": True}),
    ],
    "sampling_rate": [
        ("L=64", {"L": 64}),
        ("L=128", {"L": 128}),
    ],
}

TABLE_HEADER = ["suite", "config", "seed_count", "median_MAE", "median_OBO"]


def cell_configs(suite, base):
    """``[(label, TrainConfig-ready dict)]`` for ``suite`` over a resolved base."""
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    cells = []
    for label, over in SUITES[suite]:
        merged = {k: v for k, v in base.items() if k not in C.ABLATE_EXTRA}
        merged.update(over)
        cells.append((label, C.resolve_train(merged)))
    return cells


def _slug(label):
    return label.replace("=", "-").replace(",", "_")


def report_path(out_dir, suite, label, k):
    return Path(out_dir) / suite / _slug(label) / f"seed{k}.jsonl"


def train_log_path(out_dir, suite, label, k):
    return Path(out_dir) / suite / _slug(label) / f"seed{k}.train.jsonl"


def run_suite(suite, base, out_dir, data=None, on_run=None):
    """Train and evaluate every cell of ``suite``; returns the table rows.

    ``base`` is a resolved ablate config. ``data`` optionally supplies the
    ``(train, val, test)`` splits instead of generating them from
    ``base['gen']``.
    """
    cells = cell_configs(suite, base)
    if data is None:
        g = base["gen"]
        data = gen_dataset(C.gen_config(g), g["n"], tuple(g["split"]))
    train_set, val_set, test_set = data
    out_dir = Path(out_dir)
    for label, resolved in cells:
        for k in range(base["seeds"]):
            cfg = C.train_config({**resolved, "seed": resolved["seed"] + k})
            t0 = time.perf_counter()
            params, mcfg, history = train(train_set, val_set, cfg)
            rep = evaluate(test_set, params, mcfg, "test", cfg.min_interval_len)
            path = report_path(out_dir, suite, label, k)
            path.parent.mkdir(parents=True, exist_ok=True)
            rep.save(path)
            write_log(history, train_log_path(out_dir, suite, label, k))
            info = {"suite": suite, "config": label, "seed": cfg.seed, "mae": rep.mae, "obo": rep.obo,
                    "seconds": round(time.perf_counter() - t0, 2)}
            log.info("ablate %s", info)
            if on_run:
                on_run(info)
    rows = table_from_reports(suite, out_dir, base["seeds"])
    write_table(rows, out_dir / f"{suite}.csv")
    return rows


def table_from_reports(suite, out_dir, seeds):
    """Rebuild a suite table from the stored per-seed reports alone."""
    rows = []
    for label, _ in SUITES[suite]:
        reps = [EvalReport.load(report_path(out_dir, suite, label, k)) for k in range(seeds)]
        stats = np.array([r.recompute() for r in reps])
        rows.append({
            "suite": suite,
            "config": label,
            "seed_count": len(reps),
            "median_MAE": float(np.median(stats[:, 0])),
            "median_OBO": float(np.median(stats[:, 1])),
        })
    return rows


def write_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "median_MAE": repr(r["median_MAE"]), "median_OBO": repr(r["median_OBO"])})


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed_count"] = int(r["seed_count"])
        r["median_MAE"] = float(r["median_MAE"])
        r["median_OBO"] = float(r["median_OBO"])
    return rows


def write_manifest(base, suite, out_dir):
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / f"{suite}.config.json").write_text(json.dumps(base, sort_keys=True, indent=2))
