"""Exception types raised by the extension pipeline."""


class CvxJetError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(CvxJetError, ValueError):
    """Vectors or jets of incompatible dimension were combined."""


class InvalidJetSet(CvxJetError, ValueError):
    """A jet set failed validation."""


class DuplicatePoint(CvxJetError, ValueError):
    """Two jets share the same point."""


class SpanMismatch(CvxJetError, ValueError):
    """Augmented gradient differences do not span the requested subspace."""


class SpanNotContained(CvxJetError, ValueError):
    """Gradient differences leave the requested subspace."""


class SpanDeficient(CvxJetError, ValueError):
    """Gradient differences do not span the ambient space."""


class SpanUnfixable(CvxJetError, ValueError):
    """Rescaling the shift function did not restore the span condition."""


class IllDefinedReduction(CvxJetError, ValueError):
    """Two jets with the same projection carry different gradients."""


class Infeasible(CvxJetError):
    """No convex extension exists; carries the violating pair."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class UnsupportedModulus(CvxJetError, ValueError):
    """Modulus of continuity is not monotone or not concave."""


class NoInteriorPoint(CvxJetError):
    """The extension is nonnegative on the whole bounding box."""


class RayMiss(CvxJetError):
    """A ray from the interior point left the box before crossing zero."""


class ZeroGradient(CvxJetError):
    """The extension has a vanishing gradient at a prescribed point."""


class NonConvergence(CvxJetError):
    """An iterative solver stopped before reaching its tolerance."""
