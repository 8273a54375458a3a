"""Linear sample projection g = M f learned by alternating mixture refits
with gradient descent on KL(P || Q_M), plus the strength/uncertainty
diagnostic.

P is the softmax of the ingested logits; Q_M is the mixture posterior of the
projected feature. Zero-norm projections are handled with a strength floor in
the table lookup and an epsilon-cushioned orientation, and the gradient below
differentiates exactly that computation so finite differences agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError
from .mixture import EmFitResult, MixtureModel, fit_em
from .numutil import RngState, entropy, pearson, softmax
from .vmf import (
    ORIENT_EPS,
    STRENGTH_FLOOR,
    KappaTable,
    build_kappa_table,
    default_strength_grid,
    kappa_lookup,
    kappa_slope,
)


@dataclass(frozen=True)
class SampleProjection:
    matrix: np.ndarray  # (d', d)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2:
            raise DomainError("projection matrix must be 2-D", module="sample_embed")
        if m.shape[0] > m.shape[1]:
            raise DomainError("projection must reduce dimension (d' <= d)", module="sample_embed")
        if not np.all(np.isfinite(m)):
            raise DomainError("projection matrix must be finite", module="sample_embed")


@dataclass
class SampleBatch:
    features: np.ndarray  # (n, d)
    logits: np.ndarray    # (n, C)
    labels: np.ndarray    # (n,)
    ids: list

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.logits = np.asarray(self.logits, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        n = self.features.shape[0]
        if self.logits.shape[0] != n or self.labels.shape[0] != n or len(self.ids) != n:
            raise DomainError("SampleBatch fields disagree on the sample count", module="sample_embed")
        C = self.logits.shape[1]
        if np.any(self.labels < 0) or np.any(self.labels >= C):
            raise DomainError("SampleBatch labels outside [0, C)", module="sample_embed")

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_categories(self) -> int:
        return int(self.logits.shape[1])


@dataclass
class SampleFitConfig:
    dim: int = 3                 # d'
    learning_rate: float = 0.5
    grad_steps: int = 30
    alternations: int = 6
    tol: float = 1e-6
    seed: int = 0
    sigma: float = 1.0
    kappa_samples: int = 10000
    grid_size: int = 64
    em_max_iters: int = 100
    em_tol: float = 1e-6

    def __post_init__(self):
        for name in ("dim", "learning_rate", "grad_steps", "alternations", "tol",
                     "sigma", "kappa_samples", "grid_size", "em_max_iters", "em_tol"):
            if getattr(self, name) <= 0:
                raise DomainError(f"SampleFitConfig.{name} must be positive", module="sample_embed")


@dataclass
class SampleFitResult:
    projection: SampleProjection
    model: MixtureModel
    embeddings: np.ndarray   # (n, d')
    loss_trace: list
    table: KappaTable
    em_trace: list


@dataclass
class StrengthUncertaintyReport:
    pearson: float
    pairs: np.ndarray  # (n, 2) columns: strength, entropy


def project_sample(matrix: np.ndarray, f: np.ndarray) -> np.ndarray:
    """g = M f for a single vector, or row-wise for an (n, d) batch."""
    m = np.asarray(matrix, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != m.shape[1]:
        raise DimensionError(
            f"feature dim {f.shape[-1]} != projection input dim {m.shape[1]}",
            module="sample_embed",
        )
    return f @ m.T


def _posterior_terms(G: np.ndarray, model: MixtureModel):
    """Strengths, orientations (epsilon-cushioned), per-sample kappas and
    log component scores for a batch of projected features."""
    norms = np.linalg.norm(G, axis=1)
    orient = G / (norms + ORIENT_EPS)[:, None]
    clamped = np.maximum(norms, STRENGTH_FLOOR)
    kappas = np.atleast_1d(kappa_lookup(model.kappa_table, clamped))
    cos = orient @ model.directions.T
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.priors)
    scores = log_pi[None, :] + kappas[:, None] * cos
    return norms, orient, clamped, kappas, cos, scores


def sample_kl_loss(batch: SampleBatch, matrix: np.ndarray, model: MixtureModel) -> float:
    """Mean over samples of KL(P(.|x) || Q_M(.|x)), always >= 0."""
    if np.asarray(matrix).shape[0] != model.directions.shape[1]:
        raise DimensionError("model dim does not match projection output dim",
                             module="sample_embed")
    G = project_sample(matrix, batch.features)
    P = softmax(batch.logits, axis=1)
    _, _, _, _, _, scores = _posterior_terms(G, model)
    log_q = scores - _logsumexp_rows(scores)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(P > 0.0, P * (np.log(np.maximum(P, 1e-300)) - log_q), 0.0)
    return float(contrib.sum(axis=1).mean())


def _logsumexp_rows(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=1, keepdims=True)
    return np.log(np.exp(scores - m).sum(axis=1, keepdims=True)) + m


def sample_kl_grad(batch: SampleBatch, matrix: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Analytic d(loss)/dM. The table's piecewise kappa(l) is differentiated
    by its segment slope (subgradient at the knots)."""
    matrix = np.asarray(matrix, dtype=float)
    G = project_sample(matrix, batch.features)
    P = softmax(batch.logits, axis=1)
    norms, orient, clamped, kappas, cos, scores = _posterior_terms(G, model)
    Q = softmax(scores, axis=1)
    delta = Q - P                                   # (n, C), dL/dscores per sample
    slopes = np.atleast_1d(kappa_slope(model.kappa_table, clamped))
    slopes = np.where(norms >= STRENGTH_FLOOR, slopes, 0.0)
    inv_norm = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0.0)
    inv_cushion = 1.0 / (norms + ORIENT_EPS)

    # dscore_y/dg = cos_y * slope * g/l + kappa * (mu_y - cos_y * g/l) / (l+eps)
    coeff_dir = (delta * cos).sum(axis=1)           # (n,)
    dL_dg = (slopes * coeff_dir * inv_norm)[:, None] * G
    dL_dg += (kappas * inv_cushion)[:, None] * (delta @ model.directions)
    dL_dg -= (kappas * coeff_dir * inv_cushion * inv_norm)[:, None] * G
    return (dL_dg.T @ batch.features) / batch.n


def fit_sample_projection(batch: SampleBatch, config: SampleFitConfig) -> SampleFitResult:
    """Alternate (i) mixture refit on the current embeddings and (ii)
    backtracking gradient descent on M. The strength table for the projected
    space is built once up front from the initial embedding strengths; the
    best (M, model) pair seen is returned, so the final loss never exceeds
    the initial one."""
    rng = RngState(config.seed)
    n, d = batch.features.shape
    C = batch.n_categories
    if n < C:
        raise DomainError("fit_sample_projection requires n >= C", module="sample_embed")
    matrix = rng.generator.standard_normal((config.dim, d)) / math.sqrt(d)
    G = project_sample(matrix, batch.features)
    table = build_kappa_table(
        dim=config.dim,
        sigma=config.sigma,
        strengths=default_strength_grid(np.linalg.norm(G, axis=1).max(), config.grid_size),
        sample_count=config.kappa_samples,
        rng=rng.split("kappa-table"),
    )
    em: EmFitResult = fit_em(G, C, table, max_iters=config.em_max_iters, tol=config.em_tol)
    model = em.model
    loss = sample_kl_loss(batch, matrix, model)
    trace = [loss]
    best = (loss, matrix.copy(), model)
    for alternation in range(config.alternations):
        if alternation > 0:
            em = fit_em(G, C, table, init=model, max_iters=config.em_max_iters,
                        tol=config.em_tol)
            model = em.model
            loss = sample_kl_loss(batch, matrix, model)
            trace.append(loss)
        for _ in range(config.grad_steps):
            grad = sample_kl_grad(batch, matrix, model)
            step = config.learning_rate
            while True:
                candidate = matrix - step * grad
                cand_loss = sample_kl_loss(batch, candidate, model)
                if math.isfinite(cand_loss) and cand_loss <= loss:
                    matrix, loss = candidate, cand_loss
                    break
                step *= 0.5
                if step < 1e-18:
                    break  # stuck at a local kink; keep current matrix
        if not math.isfinite(loss):
            raise DivergenceError(
                "sample projection diverged; retry with a smaller learning rate",
                module="sample_embed",
            )
        G = project_sample(matrix, batch.features)
        trace.append(loss)
        if loss < best[0]:
            best = (loss, matrix.copy(), model)
        if len(trace) > 2 and abs(trace[-2] - trace[-1]) < config.tol:
            break
    if trace[-1] > best[0]:
        loss, matrix, model = best
        G = project_sample(matrix, batch.features)
        trace.append(loss)
    return SampleFitResult(
        projection=SampleProjection(matrix=matrix),
        model=model,
        embeddings=G,
        loss_trace=trace,
        table=table,
        em_trace=em.trace,
    )


def strength_uncertainty_report(embeddings: np.ndarray, logits: np.ndarray) -> StrengthUncertaintyReport:
    """Pearson correlation between ||g|| and the entropy of softmax(z)."""
    G = np.asarray(embeddings, dtype=float)
    Z = np.asarray(logits, dtype=float)
    if G.shape[0] != Z.shape[0] or G.shape[0] < 2:
        raise DomainError("need >= 2 aligned embedding/logit rows", module="sample_embed")
    strengths = np.linalg.norm(G, axis=1)
    entropies = np.array([entropy(p) for p in softmax(Z, axis=1)])
    r = pearson(strengths, entropies)
    return StrengthUncertaintyReport(pearson=r, pairs=np.column_stack([strengths, entropies]))
