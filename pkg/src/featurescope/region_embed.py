"""Regional projection h = Lambda f^(r): mimic the sample-wise similarity
through matched regional likelihoods, plus an alignment pull toward the
sample embedding's coordinate system.

The pairwise target P(x2|x1) comes from the logits; the regional side scores
each region of x2 against its best-matching region of x1 under the
strength-aware directional likelihood, weights regions by their importance,
and is normalized over the batch by a softmax (the proportional form is
unbounded under rescaling of Lambda, so both sides of the KL are normalized
the same way). Matches are held fixed within a gradient step and refreshed
every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError, DomainError
from .numutil import RngState, log_vmf_norm_const, log_vmf_norm_const_dkappa, softmax
from .vmf import (
    ORIENT_EPS,
    STRENGTH_FLOOR,
    KappaTable,
    kappa_lookup,
    kappa_slope,
    revised_log_likelihood,
)


@dataclass(frozen=True)
class RegionalFeatureMap:
    values: np.ndarray  # (K, H, W)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim != 3 or v.shape[1] * v.shape[2] < 1:
            raise DomainError("RegionalFeatureMap requires a (K, H, W) array", module="region_embed")
        if not np.all(np.isfinite(v)):
            raise DomainError("RegionalFeatureMap requires finite values", module="region_embed")

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    def regional(self) -> np.ndarray:
        """(HW, K) regional feature vectors in row-major region order."""
        k = self.channels
        return self.values.reshape(k, -1).T


@dataclass(frozen=True)
class RegionProjection:
    matrix: np.ndarray  # (d', K)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] > m.shape[1]:
            raise DomainError("region projection must be (d', K) with d' <= K", module="region_embed")
        if not np.all(np.isfinite(m)):
            raise DomainError("region projection must be finite", module="region_embed")


@dataclass
class RegionalBatch:
    """Aligned regional maps, logits and labels for one layer."""

    maps: np.ndarray    # (n, K, H, W)
    logits: np.ndarray  # (n, C)
    labels: np.ndarray  # (n,)
    ids: list

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=float)
        self.logits = np.asarray(self.logits, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.maps.ndim != 4:
            raise DomainError("RegionalBatch.maps must be (n, K, H, W)", module="region_embed")
        n = self.maps.shape[0]
        if self.logits.shape[0] != n or self.labels.shape[0] != n or len(self.ids) != n:
            raise DomainError("RegionalBatch fields disagree on the sample count",
                              module="region_embed")

    @property
    def n(self) -> int:
        return int(self.maps.shape[0])

    @property
    def regions(self) -> int:
        return int(self.maps.shape[2] * self.maps.shape[3])

    def regional(self) -> np.ndarray:
        """(n, HW, K) regional vectors, row-major region order."""
        n, k = self.maps.shape[0], self.maps.shape[1]
        return self.maps.reshape(n, k, -1).transpose(0, 2, 1)


@dataclass
class SimilarityConfig:
    kappa_p: float = 10.0
    alpha: float = 0.1
    learning_rate: float = 0.05
    iterations: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.kappa_p <= 0 or self.learning_rate <= 0 or self.iterations <= 0:
            raise DomainError("SimilarityConfig requires positive kappa_p, learning rate, iterations",
                              module="region_embed")
        if self.alpha < 0:
            raise DomainError("SimilarityConfig requires alpha >= 0", module="region_embed")


@dataclass
class RegionFitResult:
    projection: RegionProjection
    loss_trace: list
    embeddings: np.ndarray  # (n, HW, d')


def project_regions(matrix: np.ndarray, fmap: RegionalFeatureMap) -> np.ndarray:
    """(HW, d') projected regional vectors in region order r = 0..HW-1."""
    m = np.asarray(matrix, dtype=float)
    if m.shape[1] != fmap.channels:
        raise DimensionError(
            f"projection expects {m.shape[1]} channels, map has {fmap.channels}",
            module="region_embed",
        )
    return fmap.regional() @ m.T


def sample_similarity_p(logits: np.ndarray, kappa_p: float) -> np.ndarray:
    """Row-stochastic (n, n) similarity P(x2|x1) with zero diagonal:
    exp(kappa_p cos(z2, z1)) normalized over x2 != x1."""
    Z = np.asarray(logits, dtype=float)
    if Z.ndim != 2 or Z.shape[0] < 2:
        raise DomainError("sample_similarity_p requires >= 2 logit rows", module="region_embed")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("sample_similarity_p requires nonzero logit vectors", module="region_embed")
    U = Z / norms[:, None]
    scores = kappa_p * (U @ U.T)
    np.fill_diagonal(scores, -np.inf)
    return softmax(scores, axis=1)


def region_match(h2_r: np.ndarray, h1: np.ndarray, table: KappaTable):
    """Index of the region of h1 most likely to have generated h2_r under the
    strength-aware likelihood, plus that log-likelihood. Ties break to the
    lowest index."""
    h1 = np.asarray(h1, dtype=float)
    if h1.ndim != 2 or h1.shape[0] == 0:
        raise DomainError("region_match requires a nonempty (R, d') array", module="region_embed")
    h2 = np.asarray(h2_r, dtype=float)
    n2 = float(np.linalg.norm(h2))
    u2 = h2 / (n2 + ORIENT_EPS)
    kappa = kappa_lookup(table, max(n2, STRENGTH_FLOOR))
    n1 = np.linalg.norm(h1, axis=1)
    u1 = h1 / (n1 + ORIENT_EPS)[:, None]
    cos = u1 @ u2
    idx = int(np.argmax(cos))
    loglik = log_vmf_norm_const(table.dim, kappa) + kappa * float(cos[idx])
    return idx, loglik


def _regional_geometry(H: np.ndarray, table: KappaTable):
    """Strengths, cushioned orientations, kappas, normalizers and their
    derivatives for an (n, R, d') stack of projected regions."""
    norms = np.linalg.norm(H, axis=2)                        # (n, R)
    orient = H / (norms + ORIENT_EPS)[:, :, None]
    clamped = np.maximum(norms, STRENGTH_FLOOR)
    kappas = kappa_lookup(table, clamped)
    slopes = np.where(norms >= STRENGTH_FLOOR, kappa_slope(table, clamped), 0.0)
    flat = kappas.ravel()
    log_c = np.array([log_vmf_norm_const(table.dim, k) for k in flat]).reshape(kappas.shape)
    dlog_c = np.array([log_vmf_norm_const_dkappa(table.dim, k) for k in flat]).reshape(kappas.shape)
    return norms, orient, clamped, kappas, slopes, log_c, dlog_c


def _pair_scores(orient: np.ndarray, kappas: np.ndarray, log_c: np.ndarray,
                 matches: np.ndarray | None):
    """cos to the matched region and the per-(x1, x2, r) log-likelihood
    lnq[i, j, r] = lnC(kappa_jr) + kappa_jr cos(h_j^r, h_i^match)."""
    # all-pairs region cosines: [i, j, r, r'] = u_j^r . u_i^r'
    cos_all = np.einsum("jrd,isd->ijrs", orient, orient)
    if matches is None:
        matches = np.argmax(cos_all, axis=3)
    cos_matched = np.take_along_axis(cos_all, matches[..., None], axis=3)[..., 0]
    lnq = log_c[None, :, :] + kappas[None, :, :] * cos_matched
    return cos_matched, lnq, matches


def similarity_loss(
    batch: RegionalBatch,
    matrix: np.ndarray,
    weights: np.ndarray,
    table: KappaTable,
    config: SimilarityConfig,
    matches: np.ndarray | None = None,
):
    """KL between the logit-side similarity P and the region-side similarity
    Q_Lambda, with its gradient (matches treated as locally fixed).

    Returns (loss, dloss/dLambda, matches). `matches[i, j, r]` is the region
    of sample i matched by region r of sample j.
    """
    if batch.n < 2:
        raise DomainError("similarity_loss requires >= 2 samples", module="region_embed")
    matrix = np.asarray(matrix, dtype=float)
    F = batch.regional()                                  # (n, R, K)
    W = np.asarray(weights, dtype=float)
    if W.shape != (batch.n, batch.regions):
        raise DimensionError("weights must be (n, HW)", module="region_embed")
    P = sample_similarity_p(batch.logits, config.kappa_p)
    H = F @ matrix.T                                      # (n, R, d')
    norms, orient, clamped, kappas, slopes, log_c, dlog_c = _regional_geometry(H, table)
    cos_m, lnq, matches = _pair_scores(orient, kappas, log_c, matches)

    S = np.einsum("jr,ijr->ij", W, lnq)                   # (n, n)
    np.fill_diagonal(S, -np.inf)
    logQ = S - _row_logsumexp(S)
    n = batch.n
    off = ~np.eye(n, dtype=bool)
    loss = float((P[off] * (np.log(P[off] + 1e-300) - logQ[off])).sum() / n)

    Q = np.exp(logQ)
    delta = (Q - P) / n
    np.fill_diagonal(delta, 0.0)

    # chain rule into the projected regions; a = h_j^r (query side), b = the
    # matched h_i^r' (reference side)
    coef = delta[:, :, None] * W[None, :, :]              # (n, n, R)
    inv_cushion = 1.0 / (norms + ORIENT_EPS)              # (n, R)
    inv_norm = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0.0)
    ratio = (norms + ORIENT_EPS) * inv_norm               # (l+eps)/l, 0 at l = 0
    hat = orient * ratio[:, :, None]                      # exact h/||h||, (n, R, d')

    gather_i = np.arange(n)[:, None, None]
    u_b = orient[gather_i, matches, :]                    # (i, j, r, d') matched side
    hat_b = hat[gather_i, matches, :]
    inv_cushion_b = inv_cushion[gather_i, matches]

    # query side: (dlnC/dkappa + cos) * slope * a/l_a + kappa/(l_a+eps) * (u_b - cos * a/l_a)
    front = (dlog_c[None, :, :] + cos_m) * slopes[None, :, :]
    dA = front[..., None] * hat[None, :, :, :]
    dA += (kappas * inv_cushion)[None, :, :, None] * (u_b - cos_m[..., None] * hat[None, :, :, :])
    # matched side: kappa/(l_b+eps) * (u_a - cos * b/l_b)
    dB = (kappas[None, :, :] * inv_cushion_b)[..., None] * (
        orient[None, :, :, :] - cos_m[..., None] * hat_b
    )

    dH = np.einsum("ijr,ijrd->jrd", coef, dA)             # (n, R, d')
    scatter = coef[..., None] * dB                        # lands on sample i at the matched region
    flat_idx = (gather_i * batch.regions + matches).ravel()
    np.add.at(dH.reshape(n * batch.regions, -1), flat_idx, scatter.reshape(-1, H.shape[2]))

    grad = np.einsum("nrd,nrk->dk", dH, F)
    return loss, grad, matches


def _row_logsumexp(S: np.ndarray) -> np.ndarray:
    m = np.max(np.where(np.isfinite(S), S, -np.inf), axis=1, keepdims=True)
    return np.log(np.exp(S - m).sum(axis=1, keepdims=True)) + m


def align_loss(h: np.ndarray, weights: np.ndarray, g: np.ndarray):
    """-sum_r w_r cos(g, h_r) with zero-norm regions contributing 0, plus
    d(value)/dh. The concentration prefactor of the underlying directional
    model is a positive constant and is absorbed into the learning rate."""
    h = np.asarray(h, dtype=float)
    w = np.asarray(weights, dtype=float)
    g = np.asarray(g, dtype=float)
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        raise DomainError("align_loss requires a nonzero sample embedding", module="region_embed")
    if h.ndim != 2 or w.shape != (h.shape[0],):
        raise DimensionError("align_loss expects (R, d') regions and (R,) weights",
                             module="region_embed")
    norms = np.linalg.norm(h, axis=1)
    cushion = norms + ORIENT_EPS
    cos = (h @ g) / (gn * cushion)
    value = float(-(w * cos).sum())
    inv_norm = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0.0)
    hhat = h * inv_norm[:, None]
    dh = -(w / cushion)[:, None] * (g[None, :] / gn - cos[:, None] * hhat)
    return value, dh


def _total_loss_and_grad(batch, matrix, weights, g_embed, table, config, matches=None):
    loss_sim, grad_sim, matches = similarity_loss(batch, matrix, weights, table, config, matches)
    F = batch.regional()
    H = F @ np.asarray(matrix, dtype=float).T
    total_align = 0.0
    grad_align = np.zeros_like(grad_sim)
    for i in range(batch.n):
        value, dh = align_loss(H[i], weights[i], g_embed[i])
        total_align += value
        grad_align += dh.T @ F[i]
    total_align /= batch.n
    grad_align /= batch.n
    loss = loss_sim + config.alpha * total_align
    grad = grad_sim + config.alpha * grad_align
    return loss, grad, matches


def fit_region_projection(
    batch: RegionalBatch,
    g_embeddings: np.ndarray,
    weights: np.ndarray,
    table: KappaTable,
    config: SimilarityConfig,
) -> RegionFitResult:
    """Backtracking gradient descent on L_similarity + alpha * L_align.
    Matches are refreshed every iteration; the best iterate is returned so
    the final loss never exceeds the initial one."""
    rng = RngState(config.seed)
    K = batch.maps.shape[1]
    d_out = np.asarray(g_embeddings).shape[1]
    matrix = rng.generator.standard_normal((d_out, K)) / math.sqrt(K)
    loss, grad, _ = _total_loss_and_grad(batch, matrix, weights, g_embeddings, table, config)
    trace = [loss]
    best = (loss, matrix.copy())
    for _ in range(config.iterations):
        loss, grad, _ = _total_loss_and_grad(batch, matrix, weights, g_embeddings, table, config)
        step = config.learning_rate
        accepted = False
        while step >= 1e-18:
            candidate = matrix - step * grad
            cand_loss, _, _ = _total_loss_and_grad(
                batch, candidate, weights, g_embeddings, table, config
            )
            if math.isfinite(cand_loss) and cand_loss <= loss:
                matrix, loss = candidate, cand_loss
                accepted = True
                break
            step *= 0.5
        if not math.isfinite(loss):
            raise DivergenceError("region projection diverged", module="region_embed")
        trace.append(loss)
        if loss < best[0]:
            best = (loss, matrix.copy())
        if not accepted:
            break
    if trace[-1] > best[0]:
        loss, matrix = best
        trace.append(loss)
    H = batch.regional() @ matrix.T
    return RegionFitResult(projection=RegionProjection(matrix=matrix), loss_trace=trace,
                           embeddings=H)
