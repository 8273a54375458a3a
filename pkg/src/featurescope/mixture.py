"""Mixture of directional components over projected features: posterior
inference and EM fitting.

Each sample contributes with the concentration kappa(||g||) taken from the
shared strength table, so both the normalization constant and the strength
prior cancel inside posteriors; only the priors and the cosines to the
component directions matter.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateComponentError, DomainError
from .numutil import RngState, log_vmf_norm_const, logsumexp, softmax
from .vmf import STRENGTH_FLOOR, KappaTable, kappa_lookup


@dataclass(frozen=True)
class MixtureModel:
    """Category priors, unit mean directions, and the strength table they
    were fit against."""

    priors: np.ndarray      # (C,)
    directions: np.ndarray  # (C, d)
    kappa_table: KappaTable

    def __post_init__(self):
        pi = np.asarray(self.priors, dtype=float)
        mu = np.asarray(self.directions, dtype=float)
        object.__setattr__(self, "priors", pi)
        object.__setattr__(self, "directions", mu)
        if pi.ndim != 1 or mu.ndim != 2 or pi.size != mu.shape[0]:
            raise DomainError("MixtureModel priors/directions shape mismatch", module="mixture")
        if np.any(pi < 0.0) or abs(pi.sum() - 1.0) > 1e-9:
            raise DomainError("MixtureModel priors must be a probability vector", module="mixture")
        norms = np.linalg.norm(mu, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise DomainError("MixtureModel directions must be unit vectors", module="mixture")
        if self.kappa_table.dim != mu.shape[1]:
            raise DomainError(
                f"kappa table dim {self.kappa_table.dim} != directions dim {mu.shape[1]}",
                module="mixture",
            )

    @property
    def n_categories(self) -> int:
        return int(self.priors.size)

    def with_table(self, table: KappaTable) -> "MixtureModel":
        return replace(self, kappa_table=table)


@dataclass
class EmFitResult:
    model: MixtureModel
    log_likelihood: float
    trace: list
    iterations: int
    converged: bool


def _strengths_orientations(G: np.ndarray):
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] == 0:
        raise DomainError("expected a nonempty (n, d) array of vectors", module="mixture")
    norms = np.linalg.norm(G, axis=1)
    if np.any(norms == 0.0):
        raise DomainError("zero-norm vector in mixture input", module="mixture")
    return norms, G / norms[:, None]


def _log_scores(G: np.ndarray, model: MixtureModel) -> np.ndarray:
    """(n, C) matrix ln pi_y + kappa(l_i) cos(o_i, mu_y); the terms that are
    constant across categories are dropped (they cancel in posteriors)."""
    norms, orient = _strengths_orientations(G)
    kappas = kappa_lookup(model.kappa_table, np.maximum(norms, STRENGTH_FLOOR))
    cos = orient @ model.directions.T
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.priors)
    return log_pi[None, :] + kappas[:, None] * cos


def posterior(g: np.ndarray, model: MixtureModel) -> np.ndarray:
    """Category posterior of a single vector, computed in log space."""
    g = np.asarray(g, dtype=float)
    if g.ndim != 1:
        raise DomainError("posterior expects a single vector", module="mixture")
    if g.shape[0] != model.directions.shape[1]:
        raise DomainError(
            f"vector dim {g.shape[0]} != model dim {model.directions.shape[1]}",
            module="mixture",
        )
    scores = _log_scores(g[None, :], model)
    return softmax(scores, axis=1)[0]


def em_e_step(model: MixtureModel, G: np.ndarray) -> np.ndarray:
    """Responsibilities: row i is the posterior of g_i. Rows sum to 1."""
    return softmax(_log_scores(G, model), axis=1)


def em_m_step(responsibilities: np.ndarray, G: np.ndarray, table: KappaTable) -> MixtureModel:
    """mu_y = normalize(sum_i kappa(l_i) r_iy o_i); pi_y = mean_i r_iy.

    A component whose resultant vanishes despite carrying responsibility mass
    (exact cancellation) raises :class:`DegenerateComponentError`; the fit
    loop reseeds it. A component with no mass at all gets prior 0 and a
    placeholder direction (it cannot influence any posterior).
    """
    R = np.asarray(responsibilities, dtype=float)
    norms, orient = _strengths_orientations(G)
    if R.ndim != 2 or R.shape[0] != orient.shape[0]:
        raise DomainError("responsibilities do not match the sample count", module="mixture")
    if np.any(R < -1e-12) or np.any(np.abs(R.sum(axis=1) - 1.0) > 1e-6):
        raise DomainError("responsibilities must be row-stochastic", module="mixture")
    kappas = kappa_lookup(table, np.maximum(norms, STRENGTH_FLOOR))
    resultant = (kappas[:, None] * R).T @ orient  # (C, d)
    lengths = np.linalg.norm(resultant, axis=1)
    mass = R.sum(axis=0)
    cancelled = np.where((lengths < 1e-12) & (mass > 1e-12))[0]
    if cancelled.size:
        raise DegenerateComponentError(
            f"zero resultant for component(s) {cancelled.tolist()} in the M-step",
            module="mixture",
        )
    directions = np.zeros_like(resultant)
    for c in range(resultant.shape[0]):
        if lengths[c] >= 1e-12:
            directions[c] = resultant[c] / lengths[c]
        else:
            directions[c] = np.eye(resultant.shape[1])[0]  # massless placeholder
    priors = R.mean(axis=0)
    priors = priors / priors.sum()
    return MixtureModel(priors=priors, directions=directions, kappa_table=table)


def average_log_likelihood(model: MixtureModel, G: np.ndarray) -> float:
    """Mean per-sample log density (strength prior excluded; the per-sample
    normalization constant ln C(kappa(l_i)) is included, though it is constant
    across EM iterations since kappa is fixed per sample)."""
    norms, _ = _strengths_orientations(G)
    kappas = np.atleast_1d(kappa_lookup(model.kappa_table, np.maximum(norms, STRENGTH_FLOOR)))
    log_c = np.array([log_vmf_norm_const(model.kappa_table.dim, k) for k in kappas])
    scores = _log_scores(G, model)
    return float(np.mean(logsumexp(scores, axis=1) + log_c))


def farthest_point_init(G: np.ndarray, n_components: int, table: KappaTable) -> MixtureModel:
    """Seed directions from data: start at the strongest sample's direction,
    then greedily add the direction farthest (in cosine) from those chosen.
    Priors uniform."""
    norms, orient = _strengths_orientations(G)
    if orient.shape[0] < n_components:
        raise DomainError("need at least as many samples as components", module="mixture")
    chosen = [int(np.argmax(norms))]
    while len(chosen) < n_components:
        max_cos = orient @ orient[chosen].T  # (n, len(chosen))
        max_cos = max_cos.max(axis=1)
        max_cos[chosen] = np.inf
        chosen.append(int(np.argmin(max_cos)))
    priors = np.full(n_components, 1.0 / n_components)
    return MixtureModel(priors=priors, directions=orient[chosen], kappa_table=table)


def fit_em(
    G: np.ndarray,
    n_components: int,
    table: KappaTable,
    init: MixtureModel | None = None,
    max_iters: int = 200,
    tol: float = 1e-6,
    max_reseeds: int = 5,
) -> EmFitResult:
    """Alternate E/M until the average log-likelihood improves by < tol.

    A degenerate component is reseeded to the direction of the sample with
    the lowest current likelihood, up to `max_reseeds` times.
    """
    G = np.asarray(G, dtype=float)
    if n_components < 1:
        raise DomainError("fit_em requires n_components >= 1", module="mixture")
    if G.shape[0] < n_components:
        raise DomainError("fit_em requires |G| >= n_components", module="mixture")
    model = init if init is not None else farthest_point_init(G, n_components, table)
    reseeds = max_reseeds
    trace: list[float] = []
    prev = -math.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        R = em_e_step(model, G)
        try:
            model = em_m_step(R, G, table)
            if np.any(model.priors < 1e-10):  # massless components never recover
                raise DegenerateComponentError(
                    "component lost all responsibility mass", module="mixture"
                )
        except DegenerateComponentError:
            if reseeds == 0:
                raise
            reseeds -= 1
            model = _reseed_dead_components(model, R, G, table)
        ll = average_log_likelihood(model, G)
        trace.append(ll)
        if it > 1 and ll - prev < tol:
            converged = True
            break
        prev = ll
    return EmFitResult(model=model, log_likelihood=trace[-1], trace=trace,
                       iterations=it, converged=converged)


def _reseed_dead_components(model, responsibilities, G, table) -> MixtureModel:
    norms, orient = _strengths_orientations(G)
    kappas = kappa_lookup(table, np.maximum(norms, STRENGTH_FLOOR))
    resultant = (np.asarray(kappas)[:, None] * responsibilities).T @ orient
    lengths = np.linalg.norm(resultant, axis=1)
    mass = responsibilities.sum(axis=0)
    dead = (lengths < 1e-12) | (mass < 1e-10 * G.shape[0])
    directions = model.directions.copy()
    scores = _log_scores(G, model)
    per_sample_ll = logsumexp(scores, axis=1)
    order = np.argsort(per_sample_ll)  # least-explained samples first
    next_pick = 0
    for c in range(directions.shape[0]):
        if dead[c]:
            directions[c] = orient[order[next_pick]]
            next_pick += 1
        else:
            directions[c] = resultant[c] / lengths[c]
    priors = responsibilities.mean(axis=0)
    # keep reseeded components alive
    priors = np.maximum(priors, 1e-6)
    priors = priors / priors.sum()
    return MixtureModel(priors=priors, directions=directions, kappa_table=table)


def best_permutation_cosines(true_dirs: np.ndarray, fitted_dirs: np.ndarray) -> np.ndarray:
    """Per-component cosines between true and fitted directions under the
    assignment that maximizes the minimum cosine (exhaustive over
    permutations; intended for small C in recovery checks)."""
    true_dirs = np.asarray(true_dirs, dtype=float)
    fitted_dirs = np.asarray(fitted_dirs, dtype=float)
    C = true_dirs.shape[0]
    cos = true_dirs @ fitted_dirs.T
    best = None
    best_key = -np.inf
    for perm in itertools.permutations(range(C)):
        vals = cos[np.arange(C), perm]
        key = vals.min()
        if key > best_key:
            best_key = key
            best = vals
    return np.asarray(best)
