"""Thin command-line client for the experiment service.

Every subcommand speaks HTTP to the service; with no ``--base-url`` an
in-process application instance is used, so no server needs to be running
for local work. ``serve`` starts the service under uvicorn.

Subcommands: gen, run, sharpness, verify, report, serve.
"""

from __future__ import annotations

import argparse
import csv
import glob as globmod
import json

import sys
import time
from pathlib import Path

from . import runio


def parse_seeds(text: str) -> list[int]:
    """'a..b' (inclusive), 'a,b,c', or a single integer."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    if "," in text:
        return [int(x) for x in text.split(",") if x]
    return [int(text)]


def make_client(base_url: str | None):
    if base_url:
        import httpx

        return httpx.Client(base_url=base_url, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _check(resp):
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        print(json.dumps({"error": detail, "status": resp.status_code}))
        raise SystemExit(1)
    return resp.json()


def _poll_job(client, job_id: str, echo=None) -> dict:
    while True:
        info = _check(client.get(f"/jobs/{job_id}"))
        if info["status"] in ("done", "failed"):
            break
        if echo:
            echo(f"  {info['progress'] * 100:5.1f}% {info['detail']}")
        time.sleep(0.5)
    if info["status"] == "failed":
        print(json.dumps({"error": info["detail"], "job": job_id}))
        raise SystemExit(1)
    return _check(client.get(f"/jobs/{job_id}/result"))


def cmd_gen(args) -> int:
    client = make_client(args.base_url)
    payload = {
        "family": args.family,
        "num_states": args.states,
        "num_classes": args.classes,
        "num_actions": args.actions,
        "gamma": args.gamma,
        "seed": args.seed,
        "perturb_weight": args.perturb,
        "shift_rewards": args.shift_rewards,
    }
    doc = _check(client.post("/mdps/generate", json=payload))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc), encoding="utf-8")
    print(f"wrote {out} ({doc['num_states']} states, {doc['num_actions']} actions)")
    return 0


def _load_config(path: str) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("config file must hold a flat JSON object")
    return doc


def cmd_run(args) -> int:
    client = make_client(args.base_url)
    config = _load_config(args.config)
    seeds = parse_seeds(args.seeds)
    mdp_doc = None
    if args.mdp:
        mdp_doc = json.loads(Path(args.mdp).read_text(encoding="utf-8"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    # Split seeds across parallel jobs; each job runs its chunk sequentially.
    chunks = [seeds[i :: args.threads] for i in range(args.threads)]
    chunks = [c for c in chunks if c]
    job_ids = []
    for chunk in chunks:
        req = {"config": config, "seeds": chunk}
        if mdp_doc is not None:
            req["mdp"] = mdp_doc
        info = _check(client.post("/runs", json=req))
        job_ids.append(info["job_id"])
    results = [
        _poll_job(client, jid, echo=print if args.verbose else None)
        for jid in job_ids
    ]
    rows = []
    for res in results:
        rows.extend(res["records"])
    rows.sort(key=lambda r: (r["seed"], r["step"]))
    records_path = out_dir / "records.csv"
    with open(records_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(runio.RECORD_COLUMNS)
        for row in rows:
            writer.writerow(
                runio._format_cell(col, row[col]) for col in runio.RECORD_COLUMNS
            )
    manifest = {
        "experiment_id": args.experiment_id,
        "schema_version": runio.SCHEMA_VERSION,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": results[0]["config"],
        "seeds": seeds,
        "files": {"records": "records.csv"},
    }
    nmi_rows = [r for r in rows if r.get("nmi") is not None]
    if nmi_rows:
        nmi_path = out_dir / "nmi.csv"
        runio.write_nmi_csv(
            nmi_path, [(r["step"], r["seed"], r["nmi"], None) for r in nmi_rows]
        )
        manifest["files"]["nmi"] = "nmi.csv"
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {records_path} ({len(rows)} rows over {len(seeds)} seeds)")
    return 0


def cmd_sharpness(args) -> int:
    client = make_client(args.base_url)
    req = {"seed": args.seed}
    if args.dims:
        req["ambient_dims"] = [int(x) for x in args.dims.split(",")]
    info = _check(client.post("/sharpness", json=req))
    records = _poll_job(client, info["job_id"], echo=print if args.verbose else None)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sharpness.csv"
    fields = (
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
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for rec in records:
            writer.writerow(str(rec[f]) for f in fields)
    print(f"wrote {path} ({len(records)} records)")
    return 0


def cmd_verify(args) -> int:
    client = make_client(args.base_url)
    result = _check(client.post("/verify", params={"seed": args.seed}))
    for check in result["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        print(f"[{status}] {check['name']}: {check['detail']}")
    return 0 if result["passed"] else 1


def cmd_report(args) -> int:
    client = make_client(args.base_url)
    paths = sorted(
        p for pattern in args.records for p in globmod.glob(pattern, recursive=True)
    )
    if not paths:
        print(json.dumps({"error": f"no records matched {args.records}"}))
        return 1
    merged = None
    for path in paths:
        cols = runio.read_records_csv(path)
        if merged is None:
            merged = {k: list(v) for k, v in cols.items()}
        else:
            for k, v in cols.items():
                merged[k].extend(v)
    payload = {"columns": {k: [float(x) for x in v] for k, v in merged.items()}}
    result = _check(client.post("/report", json=payload))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cols = list(result["aggregates"])
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["step"]
        for col in cols:
            header += [f"{col}_mean", f"{col}_stderr"]
        writer.writerow(header)
        for i, step in enumerate(result["steps"]):
            row = [str(step)]
            for col in cols:
                agg = result["aggregates"][col]
                row += [repr(float(agg["mean"][i])), repr(float(agg["stderr"][i]))]
            writer.writerow(row)
    print(f"wrote {out} ({len(result['steps'])} steps from {len(paths)} file(s))")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinkbisim",
        description="Sinkhorn bisimulation metrics and API experiments",
    )
    parser.add_argument(
        "--base-url",
        default=None,
        help="target a running service instead of the in-process app",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate and serialize an MDP")
    gen.add_argument("--family", default="ring_sparse",
                     choices=["ring_sparse", "dense_reward", "random_chain"])
    gen.add_argument("--states", type=int, default=200)
    gen.add_argument("--classes", type=int, default=20)
    gen.add_argument("--actions", type=int, default=10)
    gen.add_argument("--gamma", type=float, default=0.9)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--perturb", type=float, default=0.0)
    gen.add_argument("--shift-rewards", action="store_true")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    run = sub.add_parser("run", help="run API experiments from a config file")
    run.add_argument("--config", required=True, help="flat JSON config file")
    run.add_argument("--seeds", default="0", help="'a..b', 'a,b,c' or single seed")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--threads", type=int, default=1, help="parallel jobs")
    run.add_argument("--mdp", default=None, help="run on a serialized MDP file")
    run.add_argument("--experiment-id", default="run")
    run.add_argument("--verbose", action="store_true")
    run.set_defaults(func=cmd_run)

    sharp = sub.add_parser("sharpness", help="Sinkhorn sharpness benchmark")
    sharp.add_argument("--out", required=True)
    sharp.add_argument("--seed", type=int, default=0)
    sharp.add_argument("--dims", default=None, help="comma-separated ambient dims")
    sharp.add_argument("--verbose", action="store_true")
    sharp.set_defaults(func=cmd_sharpness)

    verify = sub.add_parser("verify", help="run the oracle spot-check battery")
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=cmd_verify)

    report = sub.add_parser("report", help="aggregate run CSVs into mean/stderr")
    report.add_argument("--records", nargs="+", required=True,
                        help="records.csv paths or globs")
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8351)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
