"""Serialization for MDPs, per-step run records, manifests and reports.

File formats:

* MDP container: self-describing JSON with row-major flat reward and
  transition arrays plus optional equivalence-class labels.
* records.csv: RFC-4180, UTF-8, mandatory header, one row per (seed, step),
  floats written with full round-trip precision.
* manifest.json: config snapshot, seed list, schema version and file map;
  a manifest plus its seeds reproduces the run bit-for-bit.
* nmi.csv: optional companion with per-step partition labels and NMI.
"""

from __future__ import annotations

import csv

import hashlib
import json
import math
import time
from pathlib import Path

import numpy as np

from .apiloop import ApiConfig
from .envgen import GeneratedMdp
from .mdp import FiniteMdp

SCHEMA_VERSION = 1
MDP_FORMAT = "finite-mdp"

RECORD_COLUMNS = (
    "step",
    "seed",
    "gap_vstar",
    "metric_value_gap",
    "num_partitions",
    "alpha_k",
    "delta_achieved",
    "sinkhorn_iters",
    "wall_ms",
    "metric_sup_change",
)

_INT_COLUMNS = {"step", "seed", "num_partitions", "sinkhorn_iters"}


def mdp_to_dict(mdp: FiniteMdp, ec_labels=None, family=None, seed=None) -> dict:
    doc = {
        "format": MDP_FORMAT,
        "version": SCHEMA_VERSION,
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "gamma": mdp.discount,
        "rewards": mdp.rewards.ravel().tolist(),
        "transitions": mdp.transitions.ravel().tolist(),
        "ec_labels": None if ec_labels is None else np.asarray(ec_labels).tolist(),
    }
    if family is not None:
        doc["family"] = family
    if seed is not None:
        doc["seed"] = seed
    return doc


def mdp_from_dict(doc: dict) -> tuple[FiniteMdp, np.ndarray | None]:
    if doc.get("format") != MDP_FORMAT:
        raise ValueError(f"not a {MDP_FORMAT} container")
    s = int(doc["num_states"])
    a = int(doc["num_actions"])
    rewards = np.asarray(doc["rewards"], dtype=np.float64).reshape(s, a)
    transitions = np.asarray(doc["transitions"], dtype=np.float64).reshape(s, a, s)
    mdp = FiniteMdp(transitions, rewards, float(doc["gamma"]))
    labels = doc.get("ec_labels")
    return mdp, None if labels is None else np.asarray(labels, dtype=np.intp)


def save_mdp(path, mdp: FiniteMdp, ec_labels=None, family=None, seed=None) -> None:
    Path(path).write_text(
        json.dumps(mdp_to_dict(mdp, ec_labels, family, seed)), encoding="utf-8"
    )


def save_generated(path, gen: GeneratedMdp) -> None:
    save_mdp(path, gen.mdp, gen.ec_labels, gen.family, gen.seed)


def load_mdp(path) -> tuple[FiniteMdp, np.ndarray | None]:
    return mdp_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _format_cell(column: str, value) -> str:
    if column in _INT_COLUMNS:
        return str(int(value))
    v = float(value)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_records_csv(path, records, extra_nmi_path=None) -> None:
    """Write step records in the pinned column order; appends per-step NMI
    and labels to a companion file when requested and present."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow(
                _format_cell(col, getattr(rec, col)) for col in RECORD_COLUMNS
            )


def append_records_csv(path, records) -> None:
    new = not Path(path).exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow(
                _format_cell(col, getattr(rec, col)) for col in RECORD_COLUMNS
            )


def read_records_csv(path) -> dict[str, np.ndarray]:
    """Columns as arrays; integer columns come back as int64."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    if tuple(header) != RECORD_COLUMNS:
        raise ValueError(f"unexpected records header {header}")
    if not rows:
        return {col: np.array([]) for col in RECORD_COLUMNS}
    arr = np.array(rows, dtype=object)
    out = {}
    for idx, col in enumerate(RECORD_COLUMNS):
        dtype = np.int64 if col in _INT_COLUMNS else np.float64
        out[col] = arr[:, idx].astype(dtype)
    return out


def write_nmi_csv(path, rows) -> None:
    """Rows of (step, seed, nmi, labels-or-None); labels are ';'-joined."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("step", "seed", "nmi", "labels"))
        for step, seed, value, labels in rows:
            joined = (
                "" if labels is None else ";".join(str(int(x)) for x in labels)
            )
            writer.writerow(
                (str(int(step)), str(int(seed)), repr(float(value)), joined)
            )


def read_nmi_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        out = []
        for step, seed, value, labels in reader:
            parsed = (
                None
                if not labels
                else np.array([int(x) for x in labels.split(";")], dtype=np.intp)
            )
            out.append((int(step), int(seed), float(value), parsed))
    return out


def config_digest(config: ApiConfig, extra: dict | None = None) -> str:
    doc = config.to_dict()
    if extra:
        doc.update(extra)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def write_manifest(
    run_dir: Path,
    config: ApiConfig,
    seeds,
    experiment_id: str,
    files: dict[str, str],
) -> None:
    doc = {
        "experiment_id": experiment_id,
        "schema_version": SCHEMA_VERSION,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": config.to_dict(),
        "seeds": list(int(s) for s in seeds),
        "files": files,
    }
    (run_dir / "manifest.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")


def read_manifest(run_dir) -> dict:
    return json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8"))


def aggregate_records(columns: dict[str, np.ndarray]):
    """Per-step mean and standard error over seeds for every numeric column.

    Returns (steps, {column: (mean, stderr)}); stderr is sd / sqrt(n) with
    ddof=1 (0 when a step has a single seed).
    """
    steps = np.unique(columns["step"])
    out = {}
    value_cols = [c for c in RECORD_COLUMNS if c not in ("step", "seed")]
    order = np.argsort(columns["step"], kind="stable")
    sorted_steps = columns["step"][order]
    boundaries = np.searchsorted(sorted_steps, steps)
    for col in value_cols:
        vals = columns[col][order].astype(np.float64)
        means = np.empty(steps.size)
        errs = np.empty(steps.size)
        for i, start in enumerate(boundaries):
            stop = boundaries[i + 1] if i + 1 < steps.size else vals.size
            chunk = vals[start:stop]
            means[i] = chunk.mean()
            errs[i] = (
                chunk.std(ddof=1) / math.sqrt(chunk.size) if chunk.size > 1 else 0.0
            )
        out[col] = (means, errs)
    return steps, out


def write_report_csv(path, steps, aggregates) -> None:
    cols = list(aggregates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["step"]
        for col in cols:
            header += [f"{col}_mean", f"{col}_stderr"]
        writer.writerow(header)
        for i, step in enumerate(steps):
            row = [str(int(step))]
            for col in cols:
                mean, err = aggregates[col]
                row += [repr(float(mean[i])), repr(float(err[i]))]
            writer.writerow(row)
