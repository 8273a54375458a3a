import json

import numpy as np
import pytest

from featurescope.numutil import RngState
from featurescope.synth import SynthSpec


@pytest.fixture
def rng():
    return RngState(20240)


TINY_SPEC = {
    "name": "tiny",
    "categories": 4,
    "dim": 16,
    "channels": 8,
    "height": 3,
    "width": 3,
    "kappa_true": 100.0,
    "sigma": 0.3,
    "strength_low": 1.0,
    "strength_high": 6.0,
    "signal_cells": [[0, 0], [1, 2]],
    "layers": ["conv_a", "conv_b"],
    "head_scale": 2.0,
    "n": 16,
}


def write_tiny_spec(dir_path, **overrides):
    doc = dict(TINY_SPEC)
    doc.update(overrides)
    path = dir_path / "spec.json"
    path.write_text(json.dumps(doc))
    return path


FAST_FIT_SAMPLE = dict(kappa_samples=500, grad_steps=10, alternations=2)
FAST_FIT_REGION = dict(kappa_tilde=64.0, iterations=8, importance_iterations=8,
                       kappa_samples=500)


def make_regional_spec(**overrides) -> SynthSpec:
    """3x3 grid, two signal cells, four categories; the workhorse fixture for
    region-level tests."""
    kwargs = dict(
        name="reg-fixture",
        categories=4,
        dim=16,
        channels=8,
        height=3,
        width=3,
        kappa_true=100.0,
        sigma=0.4,
        strength_low=2.0,
        strength_high=6.0,
        signal_cells=[(0, 0), (1, 2)],
        head_scale=2.0,
    )
    kwargs.update(overrides)
    return SynthSpec(**kwargs)


def unit_rows(g: np.random.Generator, n: int, d: int) -> np.ndarray:
    rows = g.standard_normal((n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)
