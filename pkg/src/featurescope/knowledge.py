"""Knowledge points: regional features whose maximum category posterior
clears a threshold tau, counted per layer, with the cross-layer strength
normalization that makes one tau comparable across layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLayerError, DomainError
from .mixture import MixtureModel, posterior
from .vmf import KappaTable


@dataclass
class KnowledgeConfig:
    tau: float = 0.4
    reference_layer: str | None = None

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}", module="knowledge")


@dataclass
class RegionRecord:
    index: int
    argmax_category: int
    max_posterior: float
    is_knowledge: bool
    is_reliable: bool
    tied: bool


@dataclass
class KnowledgeReport:
    total_points: int
    reliable_points: int
    ratio: float | None         # absent (None) when total == 0
    records: list


def normalize_layer_strength(h_by_layer: dict, reference_layer: str) -> tuple[dict, dict]:
    """Scale each layer's regional embeddings so that every layer's average
    strength E[||h||] equals the reference layer's. Orientations are
    untouched. Returns (scaled embeddings, per-layer scale factors)."""
    if reference_layer not in h_by_layer:
        raise DomainError(f"reference layer {reference_layer!r} not present", module="knowledge")
    averages = {}
    for layer, h in h_by_layer.items():
        arr = np.asarray(h, dtype=float)
        avg = float(np.linalg.norm(arr, axis=-1).mean()) if arr.size else 0.0
        if avg <= 0.0:
            raise DegenerateLayerError(
                f"layer {layer!r} has zero average strength", module="knowledge"
            )
        averages[layer] = avg
    ref = averages[reference_layer]
    scales = {layer: ref / avg for layer, avg in averages.items()}
    scales[reference_layer] = 1.0  # bit-identical reference
    scaled = {
        layer: (np.asarray(h, dtype=float) if layer == reference_layer
                else np.asarray(h, dtype=float) * scales[layer])
        for layer, h in h_by_layer.items()
    }
    return scaled, scales


def count_knowledge_points(
    h: np.ndarray,
    truth: np.ndarray,
    model: MixtureModel,
    table: KappaTable | None = None,
    tau: float = 0.4,
) -> KnowledgeReport:
    """Count regions with max posterior > tau (knowledge points) and the
    subset whose argmax equals the ground-truth label (reliable ones).

    `truth` holds the owning sample's label per region. Argmax ties break to
    the lowest category index and are flagged on the record.
    """
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau}", module="knowledge")
    arr = np.asarray(h, dtype=float)
    if arr.size == 0:
        return KnowledgeReport(total_points=0, reliable_points=0, ratio=None, records=[])
    if arr.ndim != 2:
        raise DomainError("count_knowledge_points expects (m, d') regions", module="knowledge")
    labels = np.asarray(truth, dtype=int)
    if labels.shape != (arr.shape[0],):
        raise DomainError("one truth label per region required", module="knowledge")
    use_model = model if table is None else model.with_table(table)
    records = []
    total = 0
    reliable = 0
    for idx in range(arr.shape[0]):
        post = posterior(arr[idx], use_model)
        best = int(np.argmax(post))
        best_p = float(post[best])
        tied = bool(np.sum(np.isclose(post, best_p, rtol=0.0, atol=1e-12)) > 1)
        is_kp = best_p > tau
        is_rel = bool(is_kp and best == labels[idx])
        total += int(is_kp)
        reliable += int(is_rel)
        records.append(RegionRecord(
            index=idx,
            argmax_category=best,
            max_posterior=best_p,
            is_knowledge=bool(is_kp),
            is_reliable=is_rel,
            tied=tied,
        ))
    ratio = reliable / total if total > 0 else None
    return KnowledgeReport(total_points=total, reliable_points=reliable, ratio=ratio,
                           records=records)


def knowledge_regions_export(report: KnowledgeReport, height: int, width: int) -> dict:
    """Per-category (row, col) grid cells of knowledge points, for heat-map
    overlays. Region indices are row-major; samples are laid out regionwise,
    so indices are reduced modulo HW."""
    cells = height * width
    overlay: dict[int, list] = {}
    for rec in report.records:
        if not rec.is_knowledge:
            continue
        r = rec.index % cells
        if rec.index < 0:
            raise DomainError(f"region index {rec.index} out of range", module="knowledge")
        overlay.setdefault(rec.argmax_category, []).append((r // width, r % width))
    return {int(cat): sorted(v) for cat, v in sorted(overlay.items())}
