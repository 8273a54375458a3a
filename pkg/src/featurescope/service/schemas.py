"""Request/response models for the HTTP service; the CLI builds the same
models and calls the handlers in-process."""

from __future__ import annotations

from pydantic import BaseModel, Field


class SynthRequest(BaseModel):
    spec: str
    out: str
    seed: int = 0
    n: int | None = Field(default=None, ge=1)
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class FitSampleRequest(BaseModel):
    manifest: str
    out: str
    seed: int = 0
    dim: int = Field(default=3, ge=1)
    sigma: float = Field(default=1.0, gt=0)
    learning_rate: float = Field(default=1.0, gt=0)
    grad_steps: int = Field(default=40, ge=1)
    alternations: int = Field(default=8, ge=1)
    tol: float = Field(default=1e-6, gt=0)
    em_max_iters: int = Field(default=100, ge=1)
    em_tol: float = Field(default=1e-6, gt=0)
    kappa_samples: int = Field(default=10000, ge=100)
    grid_size: int = Field(default=64, ge=2)
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class FitRegionRequest(BaseModel):
    manifest: str
    artifacts: str
    out: str
    seed: int = 0
    alpha: float = Field(default=0.1, ge=0)
    kappa_p: float = Field(default=10.0, gt=0)
    kappa_tilde: float = Field(default=1000.0, gt=0)
    learning_rate: float = Field(default=0.05, gt=0)
    iterations: int = Field(default=60, ge=1)
    importance_learning_rate: float = Field(default=0.02, gt=0)
    importance_iterations: int = Field(default=60, ge=1)
    layers: list[str] | None = None
    reference_layer: str | None = None
    sigma: float = Field(default=1.0, gt=0)
    kappa_samples: int = Field(default=2000, ge=100)
    grid_size: int = Field(default=64, ge=2)
    adaptive_pool: bool = False
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class KnowledgeRequest(BaseModel):
    artifacts: str
    out: str
    tau: float = Field(default=0.4, gt=0, lt=1)
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class AttackRequest(BaseModel):
    manifest_a: str
    manifest_b: str
    artifacts: str
    out: str
    threshold: float = Field(default=0.4, gt=0, lt=1)
    theta_w: float = Field(default=0.5, gt=0, lt=1)
    theta_p: float = Field(default=0.4, gt=0, lt=1)
    steps: list[str] = Field(default_factory=list)
    adaptive_pool: bool = False
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class DistillRequest(BaseModel):
    manifest_a: str
    manifest_b: str
    artifacts: str
    out: str
    adaptive_pool: bool = False
    reproducible: bool = False
    threads: int = Field(default=1, ge=1)


class RunSummary(BaseModel):
    command: str
    config: dict
    metrics: dict
    output_files: list[str]


class ErrorDetail(BaseModel):
    module: str
    message: str
