"""HTTP service wrapping the pipeline. Each endpoint runs one pipeline stage
on the server's filesystem and returns the run summary; the CLI calls the
same handler functions directly when no server is configured."""

from __future__ import annotations

from fastapi import FastAPI

from .. import pipeline
from ..errors import FeatureScopeError
from .schemas import (
    AttackRequest,
    DistillRequest,
    FitRegionRequest,
    FitSampleRequest,
    KnowledgeRequest,
    RunSummary,
    SynthRequest,
)


def handle_synth(req: SynthRequest) -> RunSummary:
    return RunSummary(**pipeline.run_synth(req.spec, req.out, seed=req.seed, n=req.n))


def handle_fit_sample(req: FitSampleRequest) -> RunSummary:
    return RunSummary(**pipeline.run_fit_sample(
        req.manifest, req.out, seed=req.seed, dim=req.dim, sigma=req.sigma,
        learning_rate=req.learning_rate, grad_steps=req.grad_steps,
        alternations=req.alternations, tol=req.tol, em_max_iters=req.em_max_iters,
        em_tol=req.em_tol, kappa_samples=req.kappa_samples, grid_size=req.grid_size,
        reproducible=req.reproducible, threads=req.threads,
    ))


def handle_fit_region(req: FitRegionRequest) -> RunSummary:
    return RunSummary(**pipeline.run_fit_region(
        req.manifest, req.artifacts, req.out, seed=req.seed, alpha=req.alpha,
        kappa_p=req.kappa_p, kappa_tilde=req.kappa_tilde,
        learning_rate=req.learning_rate, iterations=req.iterations,
        importance_learning_rate=req.importance_learning_rate,
        importance_iterations=req.importance_iterations,
        layers=req.layers, reference_layer=req.reference_layer, sigma=req.sigma,
        kappa_samples=req.kappa_samples, grid_size=req.grid_size,
        adaptive_pool=req.adaptive_pool, reproducible=req.reproducible,
        threads=req.threads,
    ))


def handle_knowledge(req: KnowledgeRequest) -> RunSummary:
    return RunSummary(**pipeline.run_knowledge(
        req.artifacts, req.out, tau=req.tau,
        reproducible=req.reproducible, threads=req.threads,
    ))


def handle_attack(req: AttackRequest) -> RunSummary:
    return RunSummary(**pipeline.run_attack(
        req.manifest_a, req.manifest_b, req.artifacts, req.out,
        threshold=req.threshold, theta_w=req.theta_w, theta_p=req.theta_p,
        steps=req.steps, adaptive_pool=req.adaptive_pool,
        reproducible=req.reproducible, threads=req.threads,
    ))


def handle_distill(req: DistillRequest) -> RunSummary:
    return RunSummary(**pipeline.run_distill(
        req.manifest_a, req.manifest_b, req.artifacts, req.out,
        adaptive_pool=req.adaptive_pool, reproducible=req.reproducible,
        threads=req.threads,
    ))


HANDLERS = {
    "synth": (SynthRequest, handle_synth),
    "fit-sample": (FitSampleRequest, handle_fit_sample),
    "fit-region": (FitRegionRequest, handle_fit_region),
    "knowledge": (KnowledgeRequest, handle_knowledge),
    "attack": (AttackRequest, handle_attack),
    "distill": (DistillRequest, handle_distill),
}


def create_app() -> FastAPI:
    app = FastAPI(title="featurescope", version="0.1.0")

    @app.exception_handler(FeatureScopeError)
    async def _domain_error(request, exc: FeatureScopeError):
        from fastapi.responses import JSONResponse

        return JSONResponse(
            status_code=422,
            content={"detail": {"module": exc.module, "message": exc.args[0]}},
        )

    @app.get("/health")
    def health():
        return {"status": "ok", "version": "0.1.0"}

    @app.post("/runs/synth", response_model=RunSummary)
    def synth(req: SynthRequest):
        return handle_synth(req)

    @app.post("/runs/fit-sample", response_model=RunSummary)
    def fit_sample(req: FitSampleRequest):
        return handle_fit_sample(req)

    @app.post("/runs/fit-region", response_model=RunSummary)
    def fit_region(req: FitRegionRequest):
        return handle_fit_region(req)

    @app.post("/runs/knowledge", response_model=RunSummary)
    def knowledge(req: KnowledgeRequest):
        return handle_knowledge(req)

    @app.post("/runs/attack", response_model=RunSummary)
    def attack(req: AttackRequest):
        return handle_attack(req)

    @app.post("/runs/distill", response_model=RunSummary)
    def distill(req: DistillRequest):
        return handle_distill(req)

    return app


app = create_app()
