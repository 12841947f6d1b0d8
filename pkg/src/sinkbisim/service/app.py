"""FastAPI surface over the experiment library.

Quick computations answer inline; experiment runs and the sharpness bench go
through the job registry (submit, poll, fetch). All numeric work lives in the
core package — handlers only translate between pydantic models and arrays.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import envgen, runio
from ..apiloop import ApiConfig, run_steps
from ..measures import SharpnessConfig, sinkhorn_sharpness_bench
from ..verification import run_battery
from . import models
from .jobs import JobRegistry


def _config_from_model(model: models.RunConfigModel) -> ApiConfig:
    doc = model.model_dump()
    if doc["lam"] == "inf":
        doc["lam"] = math.inf
    try:
        return ApiConfig(**doc)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _generate(req: models.GenerateRequest) -> envgen.GeneratedMdp:
    kwargs = dict(num_states=req.num_states, m=req.num_classes, seed=req.seed)
    try:
        if req.family == "ring_sparse":
            gen = envgen.gen_ring_sparse(gamma=req.gamma, **kwargs)
        elif req.family == "dense_reward":
            gen = envgen.gen_dense_reward(
                gamma=req.gamma, shift_rewards=req.shift_rewards, **kwargs
            )
        else:
            gen = envgen.gen_random_chain(
                num_actions=req.num_actions, gamma=req.gamma, **kwargs
            )
        if req.perturb_weight > 0:
            gen = envgen.perturb_transitions(gen, req.perturb_weight, seed=req.seed)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return gen


def create_app() -> FastAPI:
    app = FastAPI(
        title="sinkbisim",
        description="Sinkhorn bisimulation metrics and approximate policy iteration",
    )
    jobs = JobRegistry()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/mdps/generate", response_model=models.MdpContainer)
    def generate_mdp(req: models.GenerateRequest):
        gen = _generate(req)
        return runio.mdp_to_dict(gen.mdp, gen.ec_labels, gen.family, gen.seed)

    @app.post("/runs", response_model=models.JobInfo)
    def submit_run(req: models.RunRequest):
        base = _config_from_model(req.config)
        seeds = [int(s) for s in req.seeds]
        env = None
        if req.mdp is not None:
            mdp, ec_labels = runio.mdp_from_dict(req.mdp.model_dump())
            if ec_labels is None:
                if base.record_nmi:
                    raise HTTPException(
                        status_code=422,
                        detail="record_nmi needs ec_labels in the MDP container",
                    )
                ec_labels = np.zeros(mdp.num_states, dtype=np.intp)
            env = envgen.GeneratedMdp(
                mdp,
                ec_labels,
                req.mdp.family or "external",
                req.mdp.seed if req.mdp.seed is not None else -1,
            )

        def work(job):
            all_records = []
            for i, seed in enumerate(seeds):
                cfg = dataclasses.replace(base, seed=seed)
                result = run_steps(cfg, env=env)
                all_records.extend(result.records)
                job.set_progress((i + 1) / len(seeds), f"seed {seed} done")
            return models.RunResultModel(
                records=[
                    models.StepRecordModel(
                        **{
                            **{c: getattr(r, c) for c in runio.RECORD_COLUMNS},
                            "nmi": None if math.isnan(r.nmi) else r.nmi,
                        }
                    )
                    for r in all_records
                ],
                config=base.to_dict(),
                seeds=seeds,
            )

        job = jobs.submit("run", work)
        return models.JobInfo(**job.snapshot())

    @app.post("/sharpness", response_model=models.JobInfo)
    def submit_sharpness(req: models.SharpnessRequest):
        lams = tuple(math.inf if x == "inf" else float(x) for x in req.lams)
        config = SharpnessConfig(
            support=req.support,
            ambient_dims=tuple(req.ambient_dims),
            lams=lams,
            lam_ref=req.lam_ref,
            entropy_targets=tuple(req.entropy_targets),
            num_mu1=req.num_mu1,
            num_mu2=req.num_mu2,
            seed=req.seed,
        )

        def work(job):
            records = sinkhorn_sharpness_bench(config)
            return [
                models.SharpnessRecordModel(
                    entropy_mu1_bits=r.entropy_mu1_bits,
                    entropy_mu2_bits=r.entropy_mu2_bits,
                    ambient_dim=r.ambient_dim,
                    lam="inf" if math.isinf(r.lam) else r.lam,
                    lam_ref=r.lam_ref,
                    distance=r.distance,
                    reference=r.reference,
                    relative_error=r.relative_error,
                    seed=r.seed,
                )
                for r in records
            ]

        job = jobs.submit("sharpness", work)
        return models.JobInfo(**job.snapshot())

    @app.get("/jobs/{job_id}", response_model=models.JobInfo)
    def job_status(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        return models.JobInfo(**job.snapshot())

    @app.get("/jobs/{job_id}/result")
    def job_result(job_id: str):
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail="unknown job")
        if job.status == "failed":
            raise HTTPException(status_code=500, detail=job.detail)
        if job.status != "done":
            raise HTTPException(status_code=409, detail=f"job is {job.status}")
        return job.result

    @app.post("/report", response_model=models.ReportResponse)
    def report(req: models.ReportRequest):
        missing = [c for c in runio.RECORD_COLUMNS if c not in req.columns]
        if missing:
            raise HTTPException(status_code=422, detail=f"missing columns {missing}")
        columns = {
            c: np.asarray(req.columns[c], dtype=np.float64)
            for c in runio.RECORD_COLUMNS
        }
        columns["step"] = columns["step"].astype(np.int64)
        columns["seed"] = columns["seed"].astype(np.int64)
        steps, agg = runio.aggregate_records(columns)
        return models.ReportResponse(
            steps=[int(s) for s in steps],
            aggregates={
                col: {"mean": mean.tolist(), "stderr": err.tolist()}
                for col, (mean, err) in agg.items()
            },
        )

    @app.post("/verify", response_model=models.VerifyResponse)
    def verify(seed: int = 0):
        checks = run_battery(seed)
        return models.VerifyResponse(
            passed=all(c.passed for c in checks),
            checks=[
                {"name": c.name, "passed": c.passed, "detail": c.detail}
                for c in checks
            ],
        )

    return app
