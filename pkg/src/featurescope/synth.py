"""Ground-truth synthetic data generators.

Samples share a latent (label, strength) pair: the whole-sample feature is
strength * (directional draw around the label's direction) plus Gaussian
noise, regional maps put label-direction content into the designated signal
cells and isotropic noise elsewhere, and logits come from a known linear head.
Everything the evaluators need (directions, heads, masks) is part of the spec
object and is serialized next to the generated data, so similarity matrices
and Shapley values are exactly reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .numutil import RngState, sample_vmf
from .sample_embed import SampleBatch
from .region_embed import RegionalBatch


@dataclass
class SynthSpec:
    name: str
    categories: int
    dim: int                    # whole-sample feature dim
    channels: int               # regional channels K
    height: int
    width: int
    kappa_true: float
    sigma: float                # additive noise scale (features and background cells)
    strength_low: float
    strength_high: float
    signal_cells: list          # [(row, col), ...] grid cells carrying class signal
    layers: list = field(default_factory=lambda: ["layer_0"])
    layer_scale: dict = field(default_factory=dict)  # per-layer signal multiplier
    head_scale: float = 1.0
    sample_directions: np.ndarray | None = None  # (C, dim) unit rows
    region_directions: np.ndarray | None = None  # (C, channels) unit rows
    head_sample: np.ndarray | None = None        # (C, dim)
    head_region: np.ndarray | None = None        # (C, channels)

    def __post_init__(self):
        if self.categories < 1 or self.dim < 2 or self.channels < 2:
            raise ConfigError("SynthSpec requires C >= 1, dim >= 2, channels >= 2", module="synth")
        if self.height < 1 or self.width < 1:
            raise ConfigError("SynthSpec requires a nonempty grid", module="synth")
        if not self.signal_cells:
            raise ConfigError("SynthSpec requires a nonempty signal mask", module="synth")
        for row, col in self.signal_cells:
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise ConfigError(f"signal cell ({row}, {col}) outside the grid", module="synth")
        if self.strength_low < 0 or self.strength_high < self.strength_low:
            raise ConfigError("SynthSpec requires 0 <= strength_low <= strength_high", module="synth")
        if self.kappa_true < 0 or self.sigma < 0:
            raise ConfigError("SynthSpec requires kappa_true >= 0 and sigma >= 0", module="synth")
        if not self.layers:
            raise ConfigError("SynthSpec requires at least one layer", module="synth")

    def materialize(self, rng: RngState) -> "SynthSpec":
        """Fill in any missing directions/heads deterministically from rng.
        Head rows are the scaled category directions, so logit margins grow
        with feature strength."""
        g = rng.generator
        if self.sample_directions is None:
            self.sample_directions = _random_unit_rows(g, self.categories, self.dim)
        if self.region_directions is None:
            self.region_directions = _random_unit_rows(g, self.categories, self.channels)
        if self.head_sample is None:
            self.head_sample = self.head_scale * self.sample_directions
        if self.head_region is None:
            self.head_region = self.head_scale * self.region_directions
        self.sample_directions = np.asarray(self.sample_directions, dtype=float)
        self.region_directions = np.asarray(self.region_directions, dtype=float)
        self.head_sample = np.asarray(self.head_sample, dtype=float)
        self.head_region = np.asarray(self.head_region, dtype=float)
        for dirs in (self.sample_directions, self.region_directions):
            if np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > 1e-9):
                raise ConfigError("true directions must be unit vectors", module="synth")
        return self

    def scale_for(self, layer: str) -> float:
        return float(self.layer_scale.get(layer, 1.0))

    def to_json(self) -> dict:
        doc = {
            "name": self.name,
            "categories": self.categories,
            "dim": self.dim,
            "channels": self.channels,
            "height": self.height,
            "width": self.width,
            "kappa_true": self.kappa_true,
            "sigma": self.sigma,
            "strength_low": self.strength_low,
            "strength_high": self.strength_high,
            "signal_cells": [list(c) for c in self.signal_cells],
            "layers": list(self.layers),
            "layer_scale": dict(self.layer_scale),
            "head_scale": self.head_scale,
        }
        for key in ("sample_directions", "region_directions", "head_sample", "head_region"):
            val = getattr(self, key)
            if val is not None:
                doc[key] = np.asarray(val).tolist()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "SynthSpec":
        import dataclasses

        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in doc.items() if k in known}
        if "signal_cells" not in kwargs:
            raise ConfigError("synth spec missing 'signal_cells'", module="synth")
        kwargs["signal_cells"] = [tuple(c) for c in kwargs["signal_cells"]]
        for key in ("sample_directions", "region_directions", "head_sample", "head_region"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = np.asarray(kwargs[key], dtype=float)
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"invalid synth spec: {exc}", module="synth")

    @classmethod
    def load(cls, path) -> "SynthSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"synth spec not found: {path}", module="synth")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"synth spec is not valid JSON: {exc}", module="synth")
        return cls.from_json(doc)


def _random_unit_rows(g: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = g.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def _draw_direction(spec: SynthSpec, mu: np.ndarray, rng: RngState) -> np.ndarray:
    if math.isinf(spec.kappa_true):
        return mu
    return sample_vmf(mu, spec.kappa_true, rng)


def gen_sample_batch(spec: SynthSpec, n: int, rng: RngState) -> SampleBatch:
    """Whole-sample features l * (draw around the label direction) + noise,
    logits from the known linear sample head."""
    if n < spec.categories:
        raise DomainError("gen_sample_batch requires n >= C", module="synth")
    spec.materialize(rng.split("spec"))
    g = rng.generator
    labels = g.integers(0, spec.categories, size=n)
    strengths = g.uniform(spec.strength_low, spec.strength_high, size=n)
    feats = np.empty((n, spec.dim))
    for i in range(n):
        direction = _draw_direction(spec, spec.sample_directions[labels[i]], rng)
        feats[i] = strengths[i] * direction
    if spec.sigma > 0:
        feats = feats + spec.sigma * g.standard_normal((n, spec.dim))
    logits = feats @ spec.head_sample.T
    ids = [f"s{i:05d}" for i in range(n)]
    return SampleBatch(features=feats, logits=logits, labels=labels, ids=ids)


def gen_regional_batch(
    spec: SynthSpec,
    n: int,
    rng: RngState,
    layer: str | None = None,
    labels=None,
    strengths=None,
) -> RegionalBatch:
    """Feature maps with class-direction content in the signal cells and
    isotropic noise elsewhere; logits from the linear head over the spatial
    average. Pass `labels`/`strengths` to reuse a shared latent state across
    layers."""
    if n < spec.categories:
        raise DomainError("gen_regional_batch requires n >= C", module="synth")
    spec.materialize(rng.split("spec"))
    layer = layer if layer is not None else spec.layers[-1]
    scale = spec.scale_for(layer)
    g = rng.generator
    if labels is None:
        labels = g.integers(0, spec.categories, size=n)
    labels = np.asarray(labels)
    mask = np.zeros((spec.height, spec.width), dtype=bool)
    for row, col in spec.signal_cells:
        mask[row, col] = True
    maps = np.empty((n, spec.channels, spec.height, spec.width))
    for i in range(n):
        fmap = spec.sigma * g.standard_normal((spec.channels, spec.height, spec.width))
        for row in range(spec.height):
            for col in range(spec.width):
                if not mask[row, col]:
                    continue
                if strengths is not None:
                    l = float(strengths[i])
                else:
                    l = g.uniform(spec.strength_low, spec.strength_high)
                direction = _draw_direction(spec, spec.region_directions[labels[i]], rng)
                fmap[:, row, col] += scale * l * direction
        maps[i] = fmap
    logits = maps.mean(axis=(2, 3)) @ spec.head_region.T
    ids = [f"s{i:05d}" for i in range(n)]
    return RegionalBatch(maps=maps, logits=logits, labels=labels, ids=ids)
