"""Thin command-line client.

Each subcommand builds the service request model and either invokes the
corresponding handler in-process (the default, no server needed) or POSTs it
to a running service given --server. Exit code is 0 iff the run succeeded;
errors are printed as `error [module]: message`.
"""

from __future__ import annotations

import json
import os
import sys

import click

from .errors import FeatureScopeError
from .service.app import HANDLERS
from .service.schemas import (
    AttackRequest,
    DistillRequest,
    FitRegionRequest,
    FitSampleRequest,
    KnowledgeRequest,
    SynthRequest,
)

_DEFAULT_THREADS = int(os.environ.get("FEATURESCOPE_THREADS", "1"))


def _dispatch(name: str, request, server: str | None) -> None:
    try:
        if server:
            import httpx

            resp = httpx.post(f"{server.rstrip('/')}/runs/{name}",
                              json=request.model_dump(), timeout=None)
            if resp.status_code != 200:
                detail = resp.json().get("detail", {})
                if isinstance(detail, dict) and "module" in detail:
                    raise FeatureScopeError(detail.get("message", "server error"),
                                            module=detail["module"])
                raise FeatureScopeError(f"server returned {resp.status_code}: {resp.text}")
            summary = resp.json()
        else:
            _, handler = HANDLERS[name]
            summary = handler(request).model_dump()
    except FeatureScopeError as exc:
        click.echo(f"error [{exc.module}]: {exc.args[0]}", err=True)
        sys.exit(1)
    click.echo(json.dumps(summary, sort_keys=True, indent=1))


def _common(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--reproducible", is_flag=True, default=False,
                      help="Assert deterministic single-stream execution.")(fn)
    fn = click.option("--threads", type=int, default=_DEFAULT_THREADS, show_default=True,
                      help="Worker hint; determinism is guaranteed at 1.")(fn)
    fn = click.option("--server", default=None,
                      help="Base URL of a running featurescope service; "
                           "runs in-process when omitted.")(fn)
    return fn


@click.group()
@click.version_option()
def main():
    """Radial feature-space visualization pipeline."""


@main.command("synth")
@click.option("--spec", required=True, help="Synth spec JSON file.")
@click.option("--out", required=True)
@click.option("--n", type=int, default=None, help="Override the spec's sample count.")
@_common
def cmd_synth(spec, out, n, seed, reproducible, threads, server):
    """Generate a synthetic dataset (manifest + tensors)."""
    _dispatch("synth", SynthRequest(spec=spec, out=out, n=n, seed=seed,
                                    reproducible=reproducible, threads=threads), server)


@main.command("fit-sample")
@click.option("--manifest", required=True)
@click.option("--out", required=True)
@click.option("--dim", type=int, default=3, show_default=True,
              help="Projected dimension d'.")
@click.option("--sigma", type=float, default=1.0, show_default=True)
@click.option("--learning-rate", type=float, default=1.0, show_default=True)
@click.option("--grad-steps", type=int, default=40, show_default=True)
@click.option("--alternations", type=int, default=8, show_default=True)
@click.option("--kappa-samples", type=int, default=10000, show_default=True)
@_common
def cmd_fit_sample(manifest, out, dim, sigma, learning_rate, grad_steps, alternations,
                   kappa_samples, seed, reproducible, threads, server):
    """Fit the sample projection, mixture model, and strength table."""
    _dispatch("fit-sample", FitSampleRequest(
        manifest=manifest, out=out, dim=dim, sigma=sigma, learning_rate=learning_rate,
        grad_steps=grad_steps, alternations=alternations, kappa_samples=kappa_samples,
        seed=seed, reproducible=reproducible, threads=threads), server)


@main.command("fit-region")
@click.option("--manifest", required=True)
@click.option("--artifacts", required=True, help="Output dir of fit-sample.")
@click.option("--out", required=True)
@click.option("--alpha", type=float, default=0.1, show_default=True)
@click.option("--kappa-p", type=float, default=10.0, show_default=True)
@click.option("--kappa-tilde", type=float, default=1000.0, show_default=True)
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@click.option("--iterations", type=int, default=60, show_default=True)
@click.option("--importance-learning-rate", type=float, default=0.02, show_default=True)
@click.option("--importance-iterations", type=int, default=60, show_default=True)
@click.option("--layers", default=None,
              help="Comma-separated subset of manifest layers.")
@click.option("--reference-layer", default=None,
              help="Layer whose average strength anchors the normalization.")
@click.option("--adaptive-pool", is_flag=True, default=False)
@_common
def cmd_fit_region(manifest, artifacts, out, alpha, kappa_p, kappa_tilde, learning_rate,
                   iterations, importance_learning_rate, importance_iterations, layers,
                   reference_layer, adaptive_pool, seed, reproducible, threads, server):
    """Fit per-layer importance weights and region projections."""
    layer_list = [l for l in layers.split(",") if l] if layers else None
    _dispatch("fit-region", FitRegionRequest(
        manifest=manifest, artifacts=artifacts, out=out, alpha=alpha, kappa_p=kappa_p,
        kappa_tilde=kappa_tilde, learning_rate=learning_rate, iterations=iterations,
        importance_learning_rate=importance_learning_rate,
        importance_iterations=importance_iterations, layers=layer_list,
        reference_layer=reference_layer, adaptive_pool=adaptive_pool,
        seed=seed, reproducible=reproducible, threads=threads), server)


@main.command("knowledge")
@click.option("--artifacts", required=True, help="Output dir of fit-region.")
@click.option("--out", required=True)
@click.option("--tau", type=float, default=0.4, show_default=True)
@_common
def cmd_knowledge(artifacts, out, tau, seed, reproducible, threads, server):
    """Count knowledge points and reliable ratios per layer."""
    _dispatch("knowledge", KnowledgeRequest(
        artifacts=artifacts, out=out, tau=tau,
        reproducible=reproducible, threads=threads), server)


@main.command("attack")
@click.option("--manifest", "manifest_a", required=True, help="Condition A (original).")
@click.option("--manifest-b", required=True, help="Condition B (adversarial).")
@click.option("--artifacts", required=True, help="Output dir of fit-region.")
@click.option("--out", required=True)
@click.option("--threshold", type=float, default=0.4, show_default=True)
@click.option("--theta-w", type=float, default=0.5, show_default=True)
@click.option("--theta-p", type=float, default=0.4, show_default=True)
@click.option("--steps", multiple=True,
              help="Per-attack-step manifests for trajectory typing (repeatable).")
@click.option("--adaptive-pool", is_flag=True, default=False)
@_common
def cmd_attack(manifest_a, manifest_b, artifacts, out, threshold, theta_w, theta_p, steps,
               adaptive_pool, seed, reproducible, threads, server):
    """Attack utilities, attacked-region histograms, trajectory types."""
    _dispatch("attack", AttackRequest(
        manifest_a=manifest_a, manifest_b=manifest_b, artifacts=artifacts, out=out,
        threshold=threshold, theta_w=theta_w, theta_p=theta_p, steps=list(steps),
        adaptive_pool=adaptive_pool, reproducible=reproducible, threads=threads), server)


@main.command("distill")
@click.option("--manifest", "manifest_a", required=True, help="Teacher condition.")
@click.option("--manifest-b", required=True, help="Student condition.")
@click.option("--artifacts", required=True, help="Output dir of fit-region.")
@click.option("--out", required=True)
@click.option("--adaptive-pool", is_flag=True, default=False)
@_common
def cmd_distill(manifest_a, manifest_b, artifacts, out, adaptive_pool,
                seed, reproducible, threads, server):
    """Orientation/strength dissimilarity histograms between two conditions."""
    _dispatch("distill", DistillRequest(
        manifest_a=manifest_a, manifest_b=manifest_b, artifacts=artifacts, out=out,
        adaptive_pool=adaptive_pool, reproducible=reproducible, threads=threads), server)


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def cmd_serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("featurescope.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
