"""Radial feature-space visualization toolkit.

Projects whole-sample and regional DNN features into a low-dimensional space
where orientation carries category identity and strength carries confidence,
estimates per-region/per-channel importance, counts discriminative knowledge
points, and computes adversarial/distillation comparison metrics. Features
and logits are ingested from tensor container files; plot-ready JSON is
emitted by the CLI and the HTTP service.
"""

__version__ = "0.1.0"
