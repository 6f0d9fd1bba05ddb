"""Exception types shared across the toolkit."""


class SparsekitError(Exception):
    """Base class for all data and format errors raised by sparsekit."""


class ContainerError(SparsekitError):
    """Malformed, inconsistent, or unreadable tensor-container data."""


class MaskError(SparsekitError):
    """Malformed mask file or incompatible mask operands."""


class DigestMismatchError(MaskError):
    """Mask provenance does not match the container it is applied to."""


class CurveError(SparsekitError):
    """Invalid sparsity-performance curve data."""


class DynamicsError(SparsekitError):
    """Invalid checkpoint series or census input."""


class ReportError(SparsekitError):
    """Report cannot be produced from the given inputs."""
