"""Directional density with strength-dependent concentration.

The strength-aware variant replaces the single concentration kappa with a
precomputed table kappa(l) over feature strengths l = ||f||: weak features are
modeled with a low concentration (noise dominates their orientation), strong
features with a high one. The table is built by Monte-Carlo: clean features
are placed at the point-density pole l * mu, isotropic Gaussian noise of scale
sigma is added, and the concentration of the resulting directions is
re-estimated by MLE per strength, followed by an isotonic non-decreasing pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numutil import RngState, log_vmf_norm_const

# cap for the degenerate MLE case ||mean direction|| -> 1; effectively a
# point mass while staying finite
KAPPA_MAX = 1e6

STRENGTH_FLOOR = 1e-8  # lower clamp for strengths entering table lookups
ORIENT_EPS = 1e-12     # denominator cushion when normalizing orientations


@dataclass(frozen=True)
class VmfParams:
    """Mean direction (unit norm) and concentration of one component."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        object.__setattr__(self, "mu", mu)
        if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
            raise DomainError("VmfParams requires a unit mean direction", module="vmf")
        if not math.isfinite(self.kappa) or self.kappa < 0.0:
            raise DomainError(f"VmfParams requires kappa >= 0, got {self.kappa}", module="vmf")


@dataclass(frozen=True)
class KappaTable:
    """Piecewise-linear strength -> concentration map.

    `strengths` is a strictly ascending grid; `kappas` are nonnegative and
    non-decreasing along it (enforced at construction time by the isotonic
    pass in :func:`build_kappa_table`).
    """

    dim: int
    sigma: float
    strengths: np.ndarray
    kappas: np.ndarray
    sample_count: int

    def __post_init__(self):
        s = np.asarray(self.strengths, dtype=float)
        k = np.asarray(self.kappas, dtype=float)
        object.__setattr__(self, "strengths", s)
        object.__setattr__(self, "kappas", k)
        if self.dim < 2:
            raise DomainError(f"KappaTable requires dim >= 2, got {self.dim}", module="vmf")
        if s.ndim != 1 or s.size == 0 or s.size != k.size:
            raise DomainError("KappaTable requires aligned nonempty 1-D grids", module="vmf")
        if np.any(s < 0.0) or np.any(np.diff(s) <= 0.0):
            raise DomainError("KappaTable strengths must be nonneg strictly ascending", module="vmf")
        if np.any(k < 0.0):
            raise DomainError("KappaTable kappas must be nonnegative", module="vmf")
        if np.any(np.diff(k) < 0.0):
            raise DomainError("KappaTable kappas must be non-decreasing", module="vmf")


def vmf_log_pdf(f: np.ndarray, params: VmfParams) -> float:
    """ln C_d(kappa) + kappa * cos(mu, f). Depends on f only through its direction."""
    f = np.asarray(f, dtype=float)
    n = float(np.linalg.norm(f))
    if n == 0.0:
        raise DomainError("vmf_log_pdf requires a nonzero vector", module="vmf")
    cos = float(f @ params.mu) / n
    return log_vmf_norm_const(f.size, params.kappa) + params.kappa * cos


def estimate_kappa_mle(samples, dim: int, kappa_max: float = KAPPA_MAX) -> float:
    """Concentration MLE from the norm of the mean normalized sample,
    R = ||mean_i f_i/||f_i||||:  kappa = R (d - R^2) / (1 - R^2).

    Returns `kappa_max` when R >= 1 - 1e-9 (all samples aligned).
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise DomainError("estimate_kappa_mle requires >= 2 sample vectors", module="vmf")
    if arr.shape[1] != dim:
        raise DomainError(
            f"samples have dim {arr.shape[1]}, expected {dim}", module="vmf"
        )
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("estimate_kappa_mle requires nonzero samples", module="vmf")
    rbar = float(np.linalg.norm((arr / norms[:, None]).mean(axis=0)))
    if rbar >= 1.0 - 1e-9:
        return kappa_max
    if rbar == 0.0:
        return 0.0
    kappa = rbar * (dim - rbar * rbar) / (1.0 - rbar * rbar)
    return min(kappa, kappa_max)


def isotonic_non_decreasing(values) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences
    (unit weights, L2), used to clean Monte-Carlo noise out of the table."""
    v = np.asarray(values, dtype=float)
    means: list[float] = []
    counts: list[int] = []
    for x in v:
        means.append(float(x))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, c2 = means.pop(), counts.pop()
            m1, c1 = means.pop(), counts.pop()
            means.append((m1 * c1 + m2 * c2) / (c1 + c2))
            counts.append(c1 + c2)
    return np.repeat(means, counts)


def build_kappa_table(
    dim: int,
    sigma: float,
    strengths,
    sample_count: int,
    rng: RngState,
) -> KappaTable:
    """Monte-Carlo construction of kappa(l): for each grid strength l, draw
    f_i = l * e1 + eps_i with eps_i ~ N(0, sigma^2 I), estimate the
    concentration of the directions by MLE, then apply the isotonic pass."""
    grid = np.asarray(strengths, dtype=float)
    if grid.size == 0:
        raise DomainError("build_kappa_table requires a nonempty grid", module="vmf")
    if np.any(np.diff(grid) <= 0.0) or np.any(grid < 0.0):
        raise DomainError("build_kappa_table requires an ascending nonneg grid", module="vmf")
    if sample_count < 100:
        raise DomainError("build_kappa_table requires sample_count >= 100", module="vmf")
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise DomainError(f"build_kappa_table requires sigma > 0, got {sigma}", module="vmf")
    g = rng.generator
    mu = np.zeros(dim)
    mu[0] = 1.0
    raw = np.empty(grid.size)
    for i, l in enumerate(grid):
        draws = l * mu + sigma * g.standard_normal((sample_count, dim))
        raw[i] = estimate_kappa_mle(draws, dim)
    kappas = np.maximum(isotonic_non_decreasing(raw), 0.0)
    return KappaTable(dim=dim, sigma=float(sigma), strengths=grid, kappas=kappas,
                      sample_count=int(sample_count))


def constant_kappa_table(dim: int, kappa: float, lo: float = 1e-3, hi: float = 1e3) -> KappaTable:
    """Two-point table with a constant concentration; handy for fixtures where
    strength should not influence confidence."""
    return KappaTable(
        dim=dim,
        sigma=1.0,
        strengths=np.array([lo, hi]),
        kappas=np.array([float(kappa), float(kappa)]),
        sample_count=100,
    )


def default_strength_grid(max_strength: float, size: int = 64) -> np.ndarray:
    """Log-spaced grid over [1e-3, 2 * max_strength] (resolution where kappa
    varies fastest, and headroom for strengths that grow during fitting)."""
    hi = max(2.0 * float(max_strength), 2e-3)
    return np.geomspace(1e-3, hi, int(size))


def kappa_lookup(table: KappaTable, l) -> float | np.ndarray:
    """Piecewise-linear interpolation of kappa(l), clamped to the endpoint
    values outside the grid. Total on l >= 0; accepts scalars or arrays."""
    arr = np.asarray(l, dtype=float)
    out = np.interp(arr, table.strengths, table.kappas)
    if np.ndim(l) == 0:
        return float(out)
    return out


def kappa_slope(table: KappaTable, l) -> float | np.ndarray:
    """Segment slope of the piecewise-linear kappa(l); 0 in the clamped
    regions outside the grid. At a knot the right segment's slope is used
    (subgradient choice)."""
    s, k = table.strengths, table.kappas
    arr = np.atleast_1d(np.asarray(l, dtype=float))
    seg = np.searchsorted(s, arr, side="right") - 1
    slopes = np.zeros(arr.shape)
    inside = (seg >= 0) & (seg < s.size - 1)
    idx = seg[inside]
    slopes[inside] = (k[idx + 1] - k[idx]) / (s[idx + 1] - s[idx])
    if np.ndim(l) == 0:
        return float(slopes[0])
    return slopes


def revised_log_likelihood(f: np.ndarray, mu: np.ndarray, table: KappaTable) -> float:
    """Log orientation likelihood of f under mean direction mu with the
    strength-dependent concentration kappa(||f||). The strength prior is
    category-independent and cancels in every posterior, so it is never
    evaluated here."""
    f = np.asarray(f, dtype=float)
    n = float(np.linalg.norm(f))
    if n == 0.0:
        raise DomainError("revised_log_likelihood requires a nonzero vector", module="vmf")
    kappa = kappa_lookup(table, max(n, STRENGTH_FLOOR))
    return vmf_log_pdf(f, VmfParams(mu=np.asarray(mu, dtype=float), kappa=kappa))
