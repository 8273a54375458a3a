"""Shared numerics: stable special functions, samplers, statistics helpers,
and a finite-difference gradient checker.

Everything here is pure given an explicit :class:`RngState`, so concurrent
read-only use is safe; each worker owns its own stream.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, EvaluationError, UndefinedCorrelationError

_LOG_2PI = math.log(2.0 * math.pi)

# Below this the plain power series is summed directly; above it the large-x
# asymptotic expansion is tried first (max-term-scaled series as fallback).
_SERIES_CROSSOVER = 30.0


@dataclass
class RngState:
    """Seeded random stream. Same seed + same call sequence => same samples."""

    seed: int
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def split(self, label: str) -> "RngState":
        """Derive an independent child stream keyed by (seed, label)."""
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        return RngState(int.from_bytes(digest[:8], "little"))


@dataclass
class GradCheckReport:
    max_relative_error: float
    per_parameter_errors: np.ndarray
    epsilon: float


def _log_bessel_series(order: float, x: float) -> float:
    # sum_k (x/2)^(2k+order) / (k! Gamma(order+k+1)); all terms positive, so
    # accumulating relative to the running max term avoids overflow at any x.
    log_q = 2.0 * math.log(x / 2.0)
    log_t = order * math.log(x / 2.0) - math.lgamma(order + 1.0)
    log_max = log_t
    acc = 1.0
    k = 0
    peak = x * x / 4.0  # terms decrease once k*(order+k) exceeds this
    while True:
        k += 1
        log_t += log_q - math.log(k * (order + k))
        if log_t > log_max:
            acc = acc * math.exp(log_max - log_t) + 1.0
            log_max = log_t
        else:
            acc += math.exp(log_t - log_max)
            if log_t < log_max - 60.0 and k * (order + k) > 1.2 * peak:
                break
        if k > 2_000_000:
            raise EvaluationError(
                f"log_bessel_i series did not converge (order={order}, x={x})",
                module="numutil",
            )
    return log_max + math.log(acc)


def _log_bessel_asymptotic(order: float, x: float) -> float | None:
    # Large-x expansion I_v(x) ~ e^x/sqrt(2 pi x) * sum_k (-1)^k a_k(v)/x^k.
    # Returns None when the divergent tail is reached before the tolerance,
    # which happens for order^2 not small against x.
    mu = 4.0 * order * order
    term = 1.0
    total = 1.0
    prev = 1.0
    for k in range(1, 60):
        term *= -(mu - (2.0 * k - 1.0) ** 2) / (8.0 * k * x)
        a = abs(term)
        if a >= prev:
            return None
        total += term
        prev = a
        if a < 1e-17 * abs(total):
            if total <= 0.0:
                return None
            return x - 0.5 * math.log(2.0 * math.pi * x) + math.log(total)
    return None


def log_bessel_i(order: float, x: float) -> float:
    """ln I_order(x), the log modified Bessel function of the first kind.

    Stable for x well beyond 1e4: the power series is summed directly for
    small x and with max-term scaling for large x whenever the asymptotic
    expansion cannot reach full precision (large order at moderate x).
    """
    if not (math.isfinite(order) and math.isfinite(x)):
        raise DomainError("log_bessel_i: non-finite input", module="numutil")
    if order < 0.0 or x < 0.0:
        raise DomainError(
            f"log_bessel_i requires order >= 0 and x >= 0, got ({order}, {x})",
            module="numutil",
        )
    if x == 0.0:
        return 0.0 if order == 0.0 else -math.inf
    if x < _SERIES_CROSSOVER:
        return _log_bessel_series(order, x)
    val = _log_bessel_asymptotic(order, x)
    if val is not None:
        return val
    return _log_bessel_series(order, x)


def log_vmf_norm_const(dim: int, kappa: float) -> float:
    """ln C_dim(kappa): log normalization constant of the directional density
    C_d(k) * exp(k cos(mu, f)) on the unit sphere in R^dim.

    At kappa == 0 this is -ln(area of the unit (dim-1)-sphere), taken through
    an explicit limit branch.
    """
    if dim < 2:
        raise DomainError(f"log_vmf_norm_const requires dim >= 2, got {dim}", module="numutil")
    if not math.isfinite(kappa) or kappa < 0.0:
        raise DomainError(f"log_vmf_norm_const requires kappa >= 0, got {kappa}", module="numutil")
    if kappa == 0.0:
        return math.lgamma(0.5 * dim) - math.log(2.0) - 0.5 * dim * math.log(math.pi)
    nu = 0.5 * dim - 1.0
    return nu * math.log(kappa) - 0.5 * dim * _LOG_2PI - log_bessel_i(nu, kappa)


def log_vmf_norm_const_dkappa(dim: int, kappa: float) -> float:
    """d/dkappa of ln C_dim(kappa), equal to -I_{d/2}(kappa)/I_{d/2-1}(kappa)."""
    if dim < 2:
        raise DomainError(f"requires dim >= 2, got {dim}", module="numutil")
    if kappa < 0.0:
        raise DomainError(f"requires kappa >= 0, got {kappa}", module="numutil")
    if kappa == 0.0:
        return 0.0
    nu = 0.5 * dim - 1.0
    return -math.exp(log_bessel_i(nu + 1.0, kappa) - log_bessel_i(nu, kappa))


def logsumexp(xs, axis=None):
    """Overflow-safe ln sum exp. Accepts a sequence (scalar result) or an
    ndarray with an optional axis."""
    arr = np.asarray(xs, dtype=float)
    if arr.size == 0:
        raise DomainError("logsumexp of an empty collection", module="numutil")
    m = np.max(arr, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf rows stay -inf below
    out = np.log(np.sum(np.exp(arr - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient in [-1, 1]."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise DomainError("pearson requires two equal-length vectors", module="numutil")
    if x.size < 2:
        raise DomainError("pearson requires at least 2 points", module="numutil")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError(
            "pearson undefined: zero variance in an argument", module="numutil"
        )
    r = float(xc @ yc) / (sx * sy)
    return min(1.0, max(-1.0, r))


def entropy(p: Sequence[float]) -> float:
    """Shannon entropy -sum p ln p in nats, with 0 ln 0 := 0."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("entropy requires a nonempty probability vector", module="numutil")
    if np.any(arr < -1e-12):
        raise DomainError("entropy requires nonnegative probabilities", module="numutil")
    total = float(arr.sum())
    if abs(total - 1.0) > 1e-6:
        raise DomainError(
            f"entropy requires probabilities summing to 1, got {total}", module="numutil"
        )
    pos = arr[arr > 0.0]
    return float(-(pos * np.log(pos)).sum())


def sample_vmf(mu: np.ndarray, kappa: float, rng: RngState) -> np.ndarray:
    """One draw from the directional density with mean direction mu and
    concentration kappa, via rejection sampling on the cosine marginal plus a
    uniform tangent direction. kappa == 0 gives uniform sphere samples.
    """
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    if d < 2:
        raise DomainError("sample_vmf requires dim >= 2", module="numutil")
    if abs(np.linalg.norm(mu) - 1.0) > 1e-9:
        raise DomainError("sample_vmf requires a unit mean direction", module="numutil")
    if not math.isfinite(kappa) or kappa < 0.0:
        raise DomainError(f"sample_vmf requires kappa >= 0, got {kappa}", module="numutil")
    g = rng.generator
    if kappa == 0.0:
        while True:
            z = g.standard_normal(d)
            n = np.linalg.norm(z)
            if n > 1e-12:
                return z / n
    # cosine marginal rejection sampler (beta envelope)
    b = (d - 1.0) / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + (d - 1.0) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1.0) * math.log(1.0 - x0 * x0)
    while True:
        z = g.beta(0.5 * (d - 1.0), 0.5 * (d - 1.0))
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = g.random()
        if kappa * w + (d - 1.0) * math.log(1.0 - x0 * w) - c >= math.log(u):
            break
    while True:
        t = g.standard_normal(d)
        t = t - (t @ mu) * mu
        tn = np.linalg.norm(t)
        if tn > 1e-12:
            break
    s = w * mu + math.sqrt(max(0.0, 1.0 - w * w)) * (t / tn)
    return s / np.linalg.norm(s)


def grad_check(
    loss: Callable[[np.ndarray], float],
    grad,
    params: np.ndarray,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    `grad` is the analytic gradient at `params`: either a vector or a callable
    evaluated at `params`. Per-coordinate relative error uses the denominator
    max(|analytic| + |numeric|, 1e-6) so a zero/zero coordinate scores 0.
    """
    params = np.asarray(params, dtype=float)
    if params.ndim != 1:
        raise DomainError("grad_check expects a flat parameter vector", module="numutil")
    if not (eps > 0.0 and math.isfinite(eps)):
        raise DomainError(f"grad_check requires eps > 0, got {eps}", module="numutil")
    base = float(loss(params))
    if not math.isfinite(base):
        raise EvaluationError("loss is non-finite at the probe point", module="numutil")
    analytic = np.asarray(grad(params) if callable(grad) else grad, dtype=float).ravel()
    if analytic.size != params.size:
        raise DimensionError(
            f"analytic gradient has {analytic.size} entries, expected {params.size}",
            module="numutil",
        )
    errs = np.zeros(params.size)
    for i in range(params.size):
        hi = params.copy()
        lo = params.copy()
        hi[i] += eps
        lo[i] -= eps
        f_hi = float(loss(hi))
        f_lo = float(loss(lo))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise EvaluationError(
                f"loss non-finite while probing coordinate {i}", module="numutil"
            )
        fd = (f_hi - f_lo) / (2.0 * eps)
        errs[i] = abs(analytic[i] - fd) / max(abs(analytic[i]) + abs(fd), 1e-6)
    max_err = float(errs.max()) if errs.size else 0.0
    return GradCheckReport(max_err, errs, eps)


def unit(v: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """v / (||v|| + eps); with eps == 0 raises on a zero vector."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if eps == 0.0:
        if n == 0.0:
            raise DomainError("cannot normalize a zero vector", module="numutil")
        return v / n
    return v / (n + eps)
