"""Exception hierarchy. Every error names the subsystem that rejected the input."""


class FeatureScopeError(Exception):
    """Base class; `module` identifies the failing subsystem for CLI/service reporting."""

    def __init__(self, message: str, *, module: str = "featurescope"):
        self.module = module
        super().__init__(message)

    def __str__(self) -> str:
        return f"[{self.module}] {self.args[0]}"


class DomainError(FeatureScopeError):
    """Input outside the mathematical domain of an operation."""


class DimensionError(FeatureScopeError):
    """Shape mismatch between operands."""


class UndefinedCorrelationError(FeatureScopeError):
    """Pearson correlation requested on a zero-variance argument."""


class EvaluationError(FeatureScopeError):
    """A probed function returned a non-finite value."""


class DegenerateComponentError(FeatureScopeError):
    """A mixture component collapsed (zero resultant in the M-step)."""


class DivergenceError(FeatureScopeError):
    """An optimizer produced a non-finite loss."""


class FormatError(FeatureScopeError):
    """Malformed tensor container; `offset` is the failing byte position."""

    def __init__(self, message: str, *, offset: int, module: str = "tensorio"):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})", module=module)


class ManifestError(FeatureScopeError):
    """Invalid dataset manifest."""


class PairingError(FeatureScopeError):
    """Paired manifests disagree on sample ids or layers."""


class DependencyError(FeatureScopeError):
    """A pipeline stage is missing artifacts from an upstream stage."""


class ConfigError(FeatureScopeError):
    """Invalid run configuration or synth spec."""


class SizeError(FeatureScopeError):
    """Problem instance too large for an exact method."""


class DegenerateLayerError(FeatureScopeError):
    """A layer has zero average feature strength."""


class ResampleError(FeatureScopeError):
    """Feature map dims not divisible by the pooling target."""
