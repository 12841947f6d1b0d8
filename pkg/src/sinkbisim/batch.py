"""Multi-seed experiment batches with on-disk caching and process parallelism.

A batch is one config swept over seeds. Each (config, seed) run lands in its
own fragment directory keyed by the config digest, so interrupted batches
resume at run granularity and identical re-runs are free. Seeds execute in
parallel worker processes (the per-run math is deterministic, so scheduling
never changes results)."""

from __future__ import annotations

import dataclasses
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import runio
from .apiloop import ApiConfig, run_steps


def _worker_init(threads: int) -> None:
    # Runs in a spawned child before numpy/numba load, so the caps stick.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(threads)


def _run_one_seed(args):
    config_doc, run_dir, save_metrics = args
    config = ApiConfig.from_dict(config_doc)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    metrics = [] if save_metrics else None
    first_metrics = [] if save_metrics else None
    sink = (lambda k, m: metrics.append(m.copy())) if save_metrics else None
    first_sink = (
        (lambda k, m: first_metrics.append(m.copy())) if save_metrics else None
    )
    result = run_steps(config, metric_sink=sink, first_metric_sink=first_sink)
    runio.write_records_csv(run_dir / "records.csv", result.records)
    if config.record_nmi:
        rows = [
            (
                rec.step,
                rec.seed,
                rec.nmi,
                result.final_labels if rec.step == len(result.records) - 1 else None,
            )
            for rec in result.records
        ]
        runio.write_nmi_csv(run_dir / "nmi.csv", rows)
    if save_metrics:
        np.save(run_dir / "metrics.npy", np.stack(metrics))
        np.save(run_dir / "metrics_first.npy", np.stack(first_metrics))
        np.save(run_dir / "policies.npy", np.stack(result.policies))
        np.save(
            run_dir / "metric_iters.npy",
            np.array([rec.metric_iters for rec in result.records]),
        )
    np.save(run_dir / "v_star.npy", result.v_star)
    (run_dir / "DONE").write_text("ok", encoding="utf-8")
    return str(run_dir)


def seed_dir(root: Path, config: ApiConfig, seed: int) -> Path:
    base = dataclasses.replace(config, seed=0)
    return Path(root) / runio.config_digest(base) / f"seed{seed}"


def run_batch(
    config: ApiConfig,
    seeds,
    out_root,
    experiment_id: str,
    workers: int | None = None,
    save_metrics: bool = False,
) -> Path:
    """Run one config over seeds; returns the batch directory containing the
    merged records.csv and manifest. Completed seed fragments are reused."""
    out_root = Path(out_root)
    seeds = [int(s) for s in seeds]
    base = dataclasses.replace(config, seed=0)
    batch_dir = out_root / runio.config_digest(base)
    batch_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for seed in seeds:
        cfg = dataclasses.replace(config, seed=seed)
        rdir = seed_dir(out_root, config, seed)
        complete = (rdir / "DONE").exists() and (
            not save_metrics or (rdir / "metrics_first.npy").exists()
        )
        if not complete:
            jobs.append((cfg.to_dict(), str(rdir), save_metrics))
    if jobs:
        workers = workers or max(1, (os.cpu_count() or 2))
        if workers > 1 and len(jobs) > 1:
            # Spawned workers with math libraries capped to one thread each;
            # per-run math is deterministic so scheduling cannot change output.
            threads = max(1, (os.cpu_count() or 2) // workers)
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(
                max_workers=workers,
                mp_context=ctx,
                initializer=_worker_init,
                initargs=(threads,),
            ) as pool:
                list(pool.map(_run_one_seed, jobs))
        else:
            for job in jobs:
                _run_one_seed(job)
    # Merge fragments in seed order.
    all_records = []
    nmi_rows = []
    for seed in seeds:
        rdir = seed_dir(out_root, config, seed)
        cols = runio.read_records_csv(rdir / "records.csv")
        all_records.append(cols)
        nmi_path = rdir / "nmi.csv"
        if nmi_path.exists():
            nmi_rows.extend(runio.read_nmi_csv(nmi_path))
    merged = batch_dir / "records.csv"
    with open(merged, "w", newline="", encoding="utf-8") as fh:
        import csv as _csv

        writer = _csv.writer(fh)
        writer.writerow(runio.RECORD_COLUMNS)
        for cols in all_records:
            n = cols["step"].size
            for i in range(n):
                writer.writerow(
                    runio._format_cell(c, cols[c][i]) for c in runio.RECORD_COLUMNS
                )
    files = {"records": "records.csv"}
    if nmi_rows:
        runio.write_nmi_csv(batch_dir / "nmi.csv", nmi_rows)
        files["nmi"] = "nmi.csv"
    runio.write_manifest(batch_dir, config, seeds, experiment_id, files)
    return batch_dir


def load_batch_columns(batch_dir) -> dict[str, np.ndarray]:
    return runio.read_records_csv(Path(batch_dir) / "records.csv")
