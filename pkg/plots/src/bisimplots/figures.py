"""Figure rendering over experiment CSVs.

Inputs are the harness file formats only: per-run ``records.csv`` (one row
per seed and step), optional ``nmi.csv`` companions, ``manifest.json`` config
snapshots, and the sharpness benchmark CSV. Nothing numeric is recomputed
here beyond mean / standard-error aggregation, which must agree with the
harness report output to within 1e-12; inputs are never written to.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

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

SHARPNESS_COLUMNS = (
    "entropy_mu1_bits",
    "entropy_mu2_bits",
    "ambient_dim",
    "lam",
    "lam_ref",
    "distance",
    "reference",
    "relative_error",
    "seed",
)

CURVE_PANELS = (
    ("gap_vstar", "optimality gap", False),
    ("metric_value_gap", "metric vs value-difference gap", False),
    ("num_partitions", "partitions", False),
    ("wall_ms", "wall-clock per step (ms)", True),
    ("sinkhorn_iters", "Sinkhorn iterations per step", True),
)

# Deterministic output: strip volatile metadata per format.
_SAVE_METADATA = {"png": {"Software": None}, "svg": {"Date": None}}


class FigureError(RuntimeError):
    pass


@dataclass
class FigureSpec:
    """One rendered figure: which CSVs, which columns, how to group."""

    inputs: list
    x_column: str
    y_column: str
    output: Path
    group_labels: list = field(default_factory=list)
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    log_y: bool = False
    fmt: str = "png"


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    out = {}
    if not rows:
        return {name: np.array([]) for name in header}
    arr = np.array(rows, dtype=object)
    for i, name in enumerate(header):
        col = arr[:, i]
        try:
            out[name] = col.astype(np.float64)
        except ValueError:
            out[name] = col.astype(str)
    return out


def check_columns(columns: dict, required) -> None:
    missing = [c for c in required if c not in columns]
    if missing:
        raise FigureError(f"missing columns {missing}")


def mean_stderr_by_step(columns: dict, y_column: str):
    """Per-step mean and stderr (sd / sqrt(n), ddof=1) across seeds.

    Matches the harness report aggregation bit-for-bit at double precision.
    """
    check_columns(columns, ("step", y_column))
    steps = np.unique(columns["step"])
    if steps.size and columns["step"].size == 0:
        raise FigureError("empty input")
    values = columns[y_column]
    mean = np.empty(steps.size)
    err = np.empty(steps.size)
    order = np.argsort(columns["step"], kind="stable")
    sorted_steps = columns["step"][order]
    sorted_vals = values[order]
    bounds = np.searchsorted(sorted_steps, steps)
    for i, start in enumerate(bounds):
        stop = bounds[i + 1] if i + 1 < steps.size else sorted_vals.size
        chunk = sorted_vals[start:stop]
        mean[i] = chunk.mean()
        err[i] = chunk.std(ddof=1) / math.sqrt(chunk.size) if chunk.size > 1 else 0.0
    return steps, mean, err


def render(spec: FigureSpec) -> Path:
    """Mean curve with a shaded standard-error band per input group."""
    if not spec.inputs:
        raise FigureError("no inputs")
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=110)
    for idx, path in enumerate(spec.inputs):
        columns = read_csv_columns(path)
        check_columns(columns, (spec.x_column, spec.y_column))
        steps, mean, err = mean_stderr_by_step(
            {"step": columns[spec.x_column], spec.y_column: columns[spec.y_column]},
            spec.y_column,
        )
        label = spec.group_labels[idx] if idx < len(spec.group_labels) else str(idx)
        (line,) = ax.plot(steps, mean, label=label, linewidth=1.4)
        ax.fill_between(steps, mean - err, mean + err, alpha=0.25, color=line.get_color())
    ax.set_xlabel(spec.x_label or spec.x_column)
    ax.set_ylabel(spec.y_label or spec.y_column)
    if spec.title:
        ax.set_title(spec.title)
    if spec.log_y:
        ax.set_yscale("log")
    if len(spec.inputs) > 1 or spec.group_labels:
        ax.legend(fontsize=8)
    fig.tight_layout()
    spec.output.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output, format=spec.fmt, metadata=_SAVE_METADATA.get(spec.fmt, {}))
    plt.close(fig)
    return spec.output


def _load_manifest_groups(root: Path):
    """Batches grouped by parent directory; curve labels come from the config
    keys that differ within a group."""
    groups: dict[Path, list[tuple[Path, dict]]] = {}
    for manifest_path in sorted(root.rglob("manifest.json")):
        try:
            doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FigureError(f"unreadable manifest {manifest_path}: {exc}") from exc
        if "config" not in doc:
            continue  # not a run manifest (e.g. the sharpness bench)
        records = manifest_path.parent / doc.get("files", {}).get("records", "records.csv")
        if records.exists():
            groups.setdefault(manifest_path.parent.parent, []).append(
                (manifest_path.parent, doc)
            )
    return groups


def _differing_keys(docs: list[dict]) -> list[str]:
    configs = [d["config"] for d in docs]
    keys = sorted({k for c in configs for k in c})
    out = []
    for key in keys:
        values = {json.dumps(c.get(key)) for c in configs}
        if len(values) > 1:
            out.append(key)
    return out


def _label_for(doc: dict, keys) -> str:
    if not keys:
        return doc.get("experiment_id", "run")
    return ", ".join(f"{k}={doc['config'].get(k)}" for k in keys)


def render_sharpness(records_csv: Path, out_dir: Path, fmt: str) -> list[Path]:
    """Relative-error box plots per (lambda, ambient dimension) cell over
    minimum-marginal-entropy buckets."""
    columns = read_csv_columns(records_csv)
    check_columns(columns, SHARPNESS_COLUMNS)
    lams = sorted(set(columns["lam"]), key=lambda x: (x == "inf", x))
    dims = sorted({int(d) for d in columns["ambient_dim"]})
    outputs = []
    fig, axes = plt.subplots(
        len(dims), len(lams), figsize=(3.4 * len(lams), 2.6 * len(dims)), dpi=110,
        squeeze=False,
    )
    for r, dim in enumerate(dims):
        for c, lam in enumerate(lams):
            mask = (columns["ambient_dim"] == dim) & (columns["lam"] == lam)
            h1 = columns["entropy_mu1_bits"][mask].astype(np.float64)
            rel = columns["relative_error"][mask].astype(np.float64)
            buckets = {}
            for h, e in zip(h1, rel):
                buckets.setdefault(round(h * 2) / 2, []).append(e)
            keys = sorted(buckets)
            ax = axes[r][c]
            if keys:
                ax.boxplot(
                    [buckets[k] for k in keys],
                    tick_labels=[f"{k:g}" for k in keys],
                    flierprops={"markersize": 2, "alpha": 0.4},
                )
            ax.set_title(f"lam={lam}, dim={dim}", fontsize=8)
            ax.tick_params(labelsize=6)
            if r == len(dims) - 1:
                ax.set_xlabel("min marginal entropy (bits)", fontsize=7)
            if c == 0:
                ax.set_ylabel("relative error", fontsize=7)
    fig.tight_layout()
    out = out_dir / f"sharpness_boxes.{fmt}"
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=fmt, metadata=_SAVE_METADATA.get(fmt, {}))
    plt.close(fig)
    outputs.append(out)
    return outputs


def render_nmi_bars(batches, out_path: Path, fmt: str) -> Path:
    """Final-step seed-mean NMI per batch."""
    labels = []
    values = []
    for label, nmi_csv in batches:
        columns = read_csv_columns(nmi_csv)
        check_columns(columns, ("step", "seed", "nmi"))
        last = columns["step"].max()
        mask = columns["step"] == last
        labels.append(label)
        values.append(float(columns["nmi"][mask].astype(np.float64).mean()))
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(labels)), 3.4), dpi=110)
    ax.bar(np.arange(len(labels)), values)
    ax.set_xticks(np.arange(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("final-step NMI vs ground truth")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format=fmt, metadata=_SAVE_METADATA.get(fmt, {}))
    plt.close(fig)
    return out_path


def render_all(in_dir, out_dir, fmt: str = "png") -> list[Path]:
    """Discover manifests under ``in_dir`` and emit the standard figure set.

    Idempotent: rendering twice from identical inputs produces identical
    files. An empty directory renders nothing and succeeds.
    """
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    if fmt not in ("png", "svg"):
        raise FigureError(f"unsupported format {fmt!r}")
    outputs: list[Path] = []
    groups = _load_manifest_groups(in_dir)
    for group_dir, entries in sorted(groups.items()):
        docs = [doc for _, doc in entries]
        keys = _differing_keys(docs)
        group_name = group_dir.name
        inputs = [path / doc["files"].get("records", "records.csv") for path, doc in entries]
        labels = [_label_for(doc, keys) for doc in docs]
        for column, nice, log_y in CURVE_PANELS:
            spec = FigureSpec(
                inputs=inputs,
                x_column="step",
                y_column=column,
                output=out_dir / f"{group_name}_{column}.{fmt}",
                group_labels=labels,
                title=group_name.replace("_", " "),
                x_label="step",
                y_label=nice,
                log_y=log_y,
                fmt=fmt,
            )
            outputs.append(render(spec))
        nmi_batches = [
            (label, path / doc["files"]["nmi"])
            for (path, doc), label in zip(entries, labels)
            if "nmi" in doc.get("files", {})
        ]
        if nmi_batches:
            outputs.append(
                render_nmi_bars(nmi_batches, out_dir / f"{group_name}_nmi.{fmt}", fmt)
            )
    sharpness = sorted(in_dir.rglob("sharpness/records.csv"))
    for records_csv in sharpness:
        outputs.extend(render_sharpness(records_csv, out_dir, fmt))
    return outputs
