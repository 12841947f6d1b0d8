"""Pydantic request/response models for the experiment service."""

from __future__ import annotations

import math
from typing import Literal

from pydantic import BaseModel, Field, field_validator


class GenerateRequest(BaseModel):
    family: Literal["ring_sparse", "dense_reward", "random_chain"] = "ring_sparse"
    num_states: int = Field(200, ge=1)
    num_classes: int = Field(20, ge=1)
    num_actions: int = Field(10, ge=2)  # chain family only
    gamma: float = Field(0.9, ge=0.0, lt=1.0)
    seed: int = 0
    perturb_weight: float = Field(0.0, ge=0.0, le=1.0)
    shift_rewards: bool = False


class MdpContainer(BaseModel):
    """The on-disk MDP JSON container, verbatim."""

    format: str
    version: int
    num_states: int
    num_actions: int
    gamma: float
    rewards: list[float]
    transitions: list[float]
    ec_labels: list[int] | None = None
    family: str | None = None
    seed: int | None = None


class RunConfigModel(BaseModel):
    """Mirror of the experiment config; `lam` accepts "inf"."""

    family: Literal["ring_sparse", "dense_reward", "random_chain"] = "ring_sparse"
    num_states: int = 200
    num_classes: int = 20
    num_actions: int = 2
    gamma: float = Field(0.9, ge=0.0, lt=1.0)
    perturb_weight: float = Field(0.0, ge=0.0, le=1.0)
    shift_rewards: bool = False
    p: float = Field(1.0, ge=1.0)
    lam: float | Literal["inf"] = 1.0
    epsilon: float = Field(0.1, ge=0.0)
    n_metric_iters: int = Field(28, ge=1)
    early_tol: float = 1e-3
    alpha_mode: Literal["fixed", "decay", "naive"] = "fixed"
    alpha: float = 1.0
    partition_mode: Literal["epsilon", "pam"] = "epsilon"
    pam_budget: int = Field(30, ge=1)
    delta_low: float = 0.05
    delta_high: float = 0.1
    num_steps: int = Field(1000, ge=1)
    seed: int = 0
    use_potential_cache: bool = True
    record_nmi: bool = False

    @field_validator("lam")
    @classmethod
    def _positive_lam(cls, v):
        if v == "inf":
            return v
        if not (isinstance(v, (int, float)) and (v > 0 or math.isinf(v))):
            raise ValueError("lam must be positive or 'inf'")
        return v


class RunRequest(BaseModel):
    config: RunConfigModel
    seeds: list[int] = Field(default_factory=lambda: [0])
    save_metrics: bool = False
    # Optional explicit environment; when present all seeds run on this MDP
    # and the config's generator fields are ignored.
    mdp: MdpContainer | None = None


class JobInfo(BaseModel):
    job_id: str
    kind: str
    status: Literal["pending", "running", "done", "failed"]
    progress: float = 0.0
    detail: str = ""


class StepRecordModel(BaseModel):
    step: int
    seed: int
    gap_vstar: float
    metric_value_gap: float
    num_partitions: int
    alpha_k: float
    delta_achieved: float
    sinkhorn_iters: int
    wall_ms: float
    metric_sup_change: float
    nmi: float | None = None


class RunResultModel(BaseModel):
    records: list[StepRecordModel]
    config: dict
    seeds: list[int]


class SharpnessRequest(BaseModel):
    support: int = 32
    ambient_dims: list[int] = Field(default_factory=lambda: [2, 8, 32])
    lams: list[float | Literal["inf"]] = Field(default_factory=lambda: [0.1, 1.0, "inf"])
    lam_ref: float = 0.02
    entropy_targets: list[float] = Field(
        default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5]
    )
    num_mu1: int = 20
    num_mu2: int = 50
    seed: int = 0


class SharpnessRecordModel(BaseModel):
    entropy_mu1_bits: float
    entropy_mu2_bits: float
    ambient_dim: int
    lam: float | Literal["inf"]
    lam_ref: float
    distance: float
    reference: float
    relative_error: float
    seed: int


class ReportRequest(BaseModel):
    """Aggregate raw record rows (as produced by the run CSV) into per-step
    mean and standard error columns."""

    columns: dict[str, list[float]]


class ReportResponse(BaseModel):
    steps: list[int]
    aggregates: dict[str, dict[str, list[float]]]  # column -> {mean, stderr}


class VerifyResponse(BaseModel):
    passed: bool
    checks: list[dict]
