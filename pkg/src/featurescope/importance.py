"""Per-sample region weights w and channel weights v, estimated on raw
regional features by alternating gradient steps on the pairwise-similarity KL
with an L1 projection, plus an exact Shapley enumeration used to verify them.

Both weight vectors are kept nonnegative with unit L1 norm so importance is
comparable across samples. The score of a region pair is a channel-weighted
cosine scaled by a large fixed concentration kappa_tilde.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError, SizeError
from .numutil import RngState, pearson, softmax
from .region_embed import RegionalBatch, sample_similarity_p

_SHAPLEY_MAX_REGIONS = 16


@dataclass(frozen=True)
class ImportanceWeights:
    w: np.ndarray  # (HW,) region weights, nonneg, L1 = 1
    v: np.ndarray  # (K,) channel weights, nonneg, L1 = 1

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        v = np.asarray(self.v, dtype=float)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)
        for name, vec in (("w", w), ("v", v)):
            if vec.ndim != 1 or vec.size == 0:
                raise DomainError(f"ImportanceWeights.{name} must be a nonempty vector",
                                  module="importance")
            if np.any(vec < 0.0) or abs(vec.sum() - 1.0) > 1e-9:
                raise DomainError(f"ImportanceWeights.{name} must be nonneg with L1 = 1",
                                  module="importance")


@dataclass
class ImportanceConfig:
    kappa_tilde: float = 1000.0
    kappa_p: float = 10.0       # concentration of the logit-side similarity rows
    learning_rate: float = 0.005
    iterations: int = 40
    seed: int = 0

    def __post_init__(self):
        for name in ("kappa_tilde", "kappa_p", "learning_rate", "iterations"):
            if getattr(self, name) <= 0:
                raise DomainError(f"ImportanceConfig.{name} must be positive", module="importance")


@dataclass
class ImportanceFitResult:
    weights: list           # ImportanceWeights per sample
    loss_trace: list


@dataclass
class ShapleyReport:
    phi: np.ndarray
    baseline_policy: str
    head_description: str
    efficiency_residual: float


class LinearSoftmaxHead:
    """Linear head over the spatial average of a regional map. `score` returns
    the target logit by default; 'prob'/'logprob' apply a softmax."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray | None = None,
                 mode: str = "logit"):
        self.weights = np.asarray(weights, dtype=float)  # (C, K)
        self.bias = np.zeros(self.weights.shape[0]) if bias is None else np.asarray(bias, float)
        if mode not in ("logit", "prob", "logprob"):
            raise DomainError(f"unknown head mode {mode!r}", module="importance")
        self.mode = mode

    def describe(self) -> str:
        return f"linear-softmax({self.weights.shape[0]}x{self.weights.shape[1]}, {self.mode})"

    def logits(self, regional: np.ndarray) -> np.ndarray:
        return self.weights @ np.asarray(regional, dtype=float).mean(axis=0) + self.bias

    def score(self, regional: np.ndarray, target: int) -> float:
        z = self.logits(regional)
        if self.mode == "logit":
            return float(z[target])
        p = softmax(z)
        if self.mode == "prob":
            return float(p[target])
        return float(np.log(p[target]))


def raw_region_score(f2_r: np.ndarray, f1_r: np.ndarray, v: np.ndarray,
                     kappa_tilde: float) -> float:
    """kappa_tilde * sum_k v_k (f2_k/||f2||)(f1_k/||f1||): log of the
    proportional channel-weighted similarity between two raw regions."""
    a = np.asarray(f2_r, dtype=float)
    b = np.asarray(f1_r, dtype=float)
    vv = np.asarray(v, dtype=float)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DomainError("raw_region_score requires nonzero regions", module="importance")
    if a.shape != b.shape or vv.shape != a.shape:
        raise DimensionError("raw_region_score operands must share the channel dim",
                             module="importance")
    return float(kappa_tilde * (vv * (a / na) * (b / nb)).sum())


def project_l1(vec: np.ndarray) -> np.ndarray:
    """|x| / ||x||_1; an all-zero input falls back to uniform (degenerate
    gradient step), with a warning."""
    import warnings

    arr = np.abs(np.asarray(vec, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise DomainError("project_l1 requires finite values", module="importance")
    total = arr.sum()
    if total == 0.0:
        warnings.warn("project_l1: all-zero weights, falling back to uniform")
        return np.full(arr.shape, 1.0 / arr.size)
    return arr / total


def _normalized_regions(batch: RegionalBatch) -> np.ndarray:
    F = batch.regional()                     # (n, R, K)
    norms = np.linalg.norm(F, axis=2)
    if np.any(norms == 0.0):
        raise DomainError("importance requires nonzero raw regional features", module="importance")
    return F / norms[:, :, None]


def importance_kl_loss(
    batch: RegionalBatch,
    w: np.ndarray,
    v: np.ndarray,
    config: ImportanceConfig,
    matches: np.ndarray | None = None,
    p_matrix: np.ndarray | None = None,
):
    """KL between the logit similarity P and the raw-feature similarity Q_w,
    with gradients in w and v (matches locally fixed).

    Returns (loss, dloss/dw, dloss/dv, matches); w is (n, HW), v is (n, K).
    """
    if batch.n < 2:
        raise DomainError("importance_kl_loss requires >= 2 samples", module="importance")
    n, R = batch.n, batch.regions
    U = _normalized_regions(batch)           # (n, R, K)
    W = np.asarray(w, dtype=float)
    V = np.asarray(v, dtype=float)
    if W.shape != (n, R) or V.shape != (n, U.shape[2]):
        raise DimensionError("weights must be (n, HW) and (n, K)", module="importance")
    P = sample_similarity_p(batch.logits, config.kappa_p) if p_matrix is None else p_matrix

    # score[i, j, r, r'] = kt * sum_k v_j[k] U_j[r,k] U_i[r',k]
    weighted = U * V[:, None, :]             # (n, R, K) query side carries v_j
    scores = config.kappa_tilde * np.einsum("jrk,isk->ijrs", weighted, U)
    if matches is None:
        matches = np.argmax(scores, axis=3)
    matched = np.take_along_axis(scores, matches[..., None], axis=3)[..., 0]  # (i, j, r)

    S = np.einsum("jr,ijr->ij", W, matched)
    np.fill_diagonal(S, -np.inf)
    m = np.max(np.where(np.isfinite(S), S, -np.inf), axis=1, keepdims=True)
    logQ = S - (np.log(np.exp(S - m).sum(axis=1, keepdims=True)) + m)
    off = ~np.eye(n, dtype=bool)
    loss = float((P[off] * (np.log(P[off] + 1e-300) - logQ[off])).sum() / n)

    Q = np.exp(logQ)
    delta = (Q - P) / n
    np.fill_diagonal(delta, 0.0)

    grad_w = np.einsum("ij,ijr->jr", delta, matched)
    # dS(i,j)/dv_j[k] = kt * sum_r w_j[r] U_j[r,k] U_i[match,k]
    U_b = U[np.arange(n)[:, None, None], matches, :]      # (i, j, r, k)
    grad_v = config.kappa_tilde * np.einsum("ij,jr,jrk,ijrk->jk", delta, W, U, U_b)
    return loss, grad_w, grad_v, matches


def fit_importance(batch: RegionalBatch, config: ImportanceConfig) -> ImportanceFitResult:
    """Alternate a joint gradient step on (w, v) with the L1 projection.
    Candidate steps are backtracked against the true (refreshed-match) loss
    and the best feasible iterate is kept, so the final loss never exceeds
    the initial one."""
    n, R = batch.n, batch.regions
    K = batch.maps.shape[1]
    if R == 1:
        w = np.ones((n, 1))
        v = np.full((n, K), 1.0 / K)
        weights = [ImportanceWeights(w=w[i], v=v[i]) for i in range(n)]
        return ImportanceFitResult(weights=weights, loss_trace=[0.0])
    if batch.n < 2:
        raise DomainError("fit_importance requires >= 2 samples", module="importance")
    P = sample_similarity_p(batch.logits, config.kappa_p)
    w = np.full((n, R), 1.0 / R)
    v = np.full((n, K), 1.0 / K)
    loss, gw, gv, _ = importance_kl_loss(batch, w, v, config, p_matrix=P)
    trace = [loss]
    best = (loss, w.copy(), v.copy())
    for _ in range(config.iterations):
        loss, gw, gv, _ = importance_kl_loss(batch, w, v, config, p_matrix=P)
        step = config.learning_rate
        accepted = False
        while step >= 1e-18:
            w_new = np.vstack([project_l1(row) for row in (w - step * gw)])
            v_new = np.vstack([project_l1(row) for row in (v - step * gv)])
            cand, _, _, _ = importance_kl_loss(batch, w_new, v_new, config, p_matrix=P)
            if math.isfinite(cand) and cand <= loss:
                w, v, loss = w_new, v_new, cand
                accepted = True
                break
            step *= 0.5
        if not math.isfinite(loss):
            raise DivergenceError("importance fit diverged", module="importance")
        trace.append(loss)
        if loss < best[0]:
            best = (loss, w.copy(), v.copy())
        if not accepted:
            break
    if trace[-1] > best[0]:
        loss, w, v = best
        trace.append(loss)
    weights = [ImportanceWeights(w=project_l1(w[i]), v=project_l1(v[i])) for i in range(n)]
    return ImportanceFitResult(weights=weights, loss_trace=trace)


def exact_shapley(
    fmap,
    head,
    target: int,
    baseline="mean",
    baseline_values: np.ndarray | None = None,
) -> ShapleyReport:
    """Exact per-region Shapley attribution of the head's target score by
    enumeration over all 2^HW region subsets.

    Masked regions are replaced according to the baseline policy: "zero", or
    "mean" with `baseline_values` holding the per-channel dataset mean.
    """
    regional = fmap.regional() if hasattr(fmap, "regional") else np.asarray(fmap, dtype=float)
    R, K = regional.shape
    if R > _SHAPLEY_MAX_REGIONS:
        raise SizeError(
            f"exact Shapley limited to {_SHAPLEY_MAX_REGIONS} regions, got {R}",
            module="importance",
        )
    if baseline == "zero":
        base = np.zeros(K)
    elif baseline == "mean":
        if baseline_values is None:
            raise DomainError("baseline 'mean' requires per-channel baseline_values",
                              module="importance")
        base = np.asarray(baseline_values, dtype=float)
        if base.shape != (K,):
            raise DimensionError("baseline_values must be (K,)", module="importance")
    else:
        raise DomainError(f"unknown baseline policy {baseline!r}", module="importance")

    values = np.empty(2 ** R)
    scratch = np.tile(base, (R, 1))
    for mask in range(2 ** R):
        scratch[:] = base
        for r in range(R):
            if mask >> r & 1:
                scratch[r] = regional[r]
        values[mask] = head.score(scratch, target)

    # weight(s) = s! (R-s-1)! / R! = 1 / (R * C(R-1, s))
    weights = np.array([1.0 / (R * math.comb(R - 1, s)) for s in range(R)])
    phi = np.zeros(R)
    full = 2 ** R - 1
    for mask in range(2 ** R):
        s = bin(mask).count("1")
        for r in range(R):
            bit = 1 << r
            if mask & bit:
                continue
            phi[r] += weights[s] * (values[mask | bit] - values[mask])
    residual = float(abs(phi.sum() - (values[full] - values[0])))
    return ShapleyReport(
        phi=phi,
        baseline_policy=baseline,
        head_description=head.describe() if hasattr(head, "describe") else repr(head),
        efficiency_residual=residual,
    )


def importance_shapley_correlation(w: np.ndarray, phi: np.ndarray) -> float:
    """Pearson correlation between estimated region weights and Shapley values."""
    return pearson(np.asarray(w, dtype=float), np.asarray(phi, dtype=float))
