"""Comparative metrics over paired regional embeddings: adversarial attack
utilities, attacked-region histograms, trajectory typing, and distillation
dissimilarity histograms."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DomainError
from .mixture import MixtureModel, posterior
from .vmf import KappaTable


@dataclass
class PairedRegions:
    """Regional embeddings of two conditions (original/adversarial or
    teacher/student), aligned by sample id and region index. Per-sample labels
    carry the original category (side A) and the target/attained category
    (side B)."""

    h_a: np.ndarray      # (n, R, d')
    h_b: np.ndarray      # (n, R, d')
    labels_a: np.ndarray
    labels_b: np.ndarray
    sample_ids: list

    def __post_init__(self):
        self.h_a = np.asarray(self.h_a, dtype=float)
        self.h_b = np.asarray(self.h_b, dtype=float)
        self.labels_a = np.asarray(self.labels_a, dtype=int)
        self.labels_b = np.asarray(self.labels_b, dtype=int)
        if self.h_a.shape != self.h_b.shape or self.h_a.ndim != 3:
            raise DomainError("paired regions must share an (n, R, d') shape", module="analysis")
        n = self.h_a.shape[0]
        if n == 0:
            raise DomainError("paired regions must be nonempty", module="analysis")
        if self.labels_a.shape != (n,) or self.labels_b.shape != (n,) or len(self.sample_ids) != n:
            raise DomainError("per-sample labels/ids must match the pair count", module="analysis")


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


class TrajectoryType(Enum):
    TYPE1 = 1          # important -> important, target-confident, never damaged
    TYPE2 = 2          # important -> important, rebuilt after a low-strength dip
    TYPE3 = 3          # unimportant -> important
    TYPE4 = 4          # important -> unimportant
    UNATTACKED = "unattacked"
    UNTYPED = "untyped"
    INDETERMINATE = "indeterminate"


def _paired_cosines(h_a: np.ndarray, h_b: np.ndarray) -> np.ndarray:
    # 1 - ||ua - ub||^2 / 2 equals the cosine for unit vectors and returns
    # exactly 1.0 for bit-identical pairs (norm of an exact-zero difference)
    na = np.linalg.norm(h_a, axis=-1, keepdims=True)
    nb = np.linalg.norm(h_b, axis=-1, keepdims=True)
    ua = h_a / np.maximum(na, 1e-12)
    ub = h_b / np.maximum(nb, 1e-12)
    return 1.0 - 0.5 * np.square(ua - ub).sum(axis=-1)


def attack_utilities(pairs: PairedRegions) -> tuple[float, float]:
    """(mean cosine between paired regions, mean absolute strength gap)."""
    cos = _paired_cosines(pairs.h_a, pairs.h_b)
    sa = np.linalg.norm(pairs.h_a, axis=-1)
    sb = np.linalg.norm(pairs.h_b, axis=-1)
    return float(cos.mean()), float(np.abs(sa - sb).mean())


def attacked_region_histogram(
    pairs: PairedRegions,
    model: MixtureModel,
    table: KappaTable,
    threshold: float = 0.4,
    bins: int = 10,
) -> Histogram:
    """Select regions confidently pushed to the side-B category
    (posterior(target | h_b) > threshold) and histogram the side-A posterior
    of the original category for those same regions, over uniform bins on
    [0, 1]."""
    use_model = model.with_table(table)
    edges = np.linspace(0.0, 1.0, bins + 1)
    selected = []
    n, R, _ = pairs.h_a.shape
    for i in range(n):
        for r in range(R):
            post_b = posterior(pairs.h_b[i, r], use_model)
            if post_b[pairs.labels_b[i]] > threshold:
                post_a = posterior(pairs.h_a[i, r], use_model)
                selected.append(float(post_a[pairs.labels_a[i]]))
    counts, _ = np.histogram(selected, bins=edges)
    return Histogram(edges=edges, counts=counts)


def classify_trajectory(
    h_start: np.ndarray,
    h_end: np.ndarray,
    source: int,
    target: int,
    model: MixtureModel,
    table: KappaTable,
    cutoff_start: float,
    cutoff_end: float,
    theta_p: float = 0.4,
    midpoints=None,
) -> TrajectoryType:
    """Type a region's trajectory under an attack.

    "Important" means the region's strength exceeds the sample's strength
    quantile cutoff supplied by the caller (cutoff_start/cutoff_end, and per
    midpoint). `midpoints` is a sequence of (strength, cutoff) pairs from the
    per-step embeddings; without them an important->important,
    target-confident trajectory cannot be split into the direct and the
    damaged-then-rebuilt kind and INDETERMINATE is returned.
    """
    if not (0.0 < theta_p < 1.0):
        raise DomainError(f"theta_p must lie in (0, 1), got {theta_p}", module="analysis")
    use_model = model.with_table(table)
    h_start = np.asarray(h_start, dtype=float)
    h_end = np.asarray(h_end, dtype=float)
    important_start = float(np.linalg.norm(h_start)) > cutoff_start
    important_end = float(np.linalg.norm(h_end)) > cutoff_end
    post_end = posterior(h_end, use_model)
    target_confident = float(post_end[target]) > theta_p
    source_confident = float(post_end[source]) > theta_p

    if important_start and important_end:
        if target_confident:
            if midpoints is None:
                return TrajectoryType.INDETERMINATE
            dipped = any(s <= cutoff for s, cutoff in midpoints)
            return TrajectoryType.TYPE2 if dipped else TrajectoryType.TYPE1
        if source_confident:
            return TrajectoryType.UNATTACKED
        return TrajectoryType.UNTYPED
    if not important_start and important_end:
        return TrajectoryType.TYPE3
    if important_start and not important_end:
        return TrajectoryType.TYPE4
    return TrajectoryType.UNTYPED


def distill_dissimilarity(pairs: PairedRegions, bins: int = 20) -> tuple[Histogram, Histogram]:
    """Histograms of 1 - cos(h_a, h_b) over [0, 2] and of the signed strength
    difference ||h_b|| - ||h_a|| over a symmetric data-driven range. Side A is
    the reference (teacher); side B the comparison (student)."""
    cos = _paired_cosines(pairs.h_a, pairs.h_b).ravel()
    orient_vals = 1.0 - cos
    sa = np.linalg.norm(pairs.h_a, axis=-1).ravel()
    sb = np.linalg.norm(pairs.h_b, axis=-1).ravel()
    diff = sb - sa
    orient_edges = np.linspace(0.0, 2.0, bins + 1)
    orient_counts, _ = np.histogram(np.clip(orient_vals, 0.0, 2.0), bins=orient_edges)
    span = float(np.max(np.abs(diff))) if diff.size else 0.0
    if span == 0.0:
        span = 1.0
    strength_edges = np.linspace(-span, span, bins + 1)
    strength_counts, _ = np.histogram(diff, bins=strength_edges)
    return (
        Histogram(edges=orient_edges, counts=orient_counts),
        Histogram(edges=strength_edges, counts=strength_counts),
    )
