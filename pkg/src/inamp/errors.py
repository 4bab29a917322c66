"""Exceptions raised by the inamp package."""


class InAmpError(Exception):
    """Base class for every error raised by this package."""


# tensors and layers


class ShapeMismatch(InAmpError, ValueError):
    """Operand shapes disagree."""


class InvalidShape(InAmpError, ValueError):
    """A dimension is smaller than one, or a shape cannot be interpreted."""


class BroadcastError(InAmpError, ValueError):
    """The second operand cannot be broadcast onto the first."""


class InvalidAxis(InAmpError, ValueError):
    """An axis is out of range for the tensor rank."""


class NotScalar(InAmpError, ValueError):
    """Backward was requested from a non-scalar tensor."""


class DisconnectedGraph(InAmpError, ValueError):
    """The loss does not depend on any tensor requiring gradients."""


class InvalidEps(InAmpError, ValueError):
    """Finite-difference step must be strictly positive."""


class NonFiniteError(InAmpError, ArithmeticError):
    """An operation produced NaN or Inf values while debug mode was active."""


class ChannelMismatch(InAmpError, ValueError):
    """Input channel count differs from what a layer expects."""


class SpatialUnderflow(InAmpError, ValueError):
    """The input is spatially smaller than the kernel under valid padding."""


class SpatialMismatch(InAmpError, ValueError):
    """Tensors disagree in batch or spatial dimensions."""


class OddSpatialDim(InAmpError, ValueError):
    """2x2 max pooling needs even height and width."""


class LabelOutOfRange(InAmpError, ValueError):
    """A class label is outside ``[0, K)``."""


class InvalidLr(InAmpError, ValueError):
    """Learning rate must be strictly positive."""


class ReductionUnderflow(InAmpError, ValueError):
    """Channel attention hidden width rounds down to zero."""


class IndexOutOfRange(InAmpError, IndexError):
    """A band or channel index is outside the valid range."""


# configuration and data


class ConfigError(InAmpError, ValueError):
    """A configuration value is missing or invalid."""


class MsibError(InAmpError, ValueError):
    """Base class for MSIB and checkpoint container parse errors."""


class BadMagic(MsibError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(MsibError):
    """File format version is not understood."""


class TruncatedFile(MsibError):
    """File ended before the declared payload was read."""


class MissingBand(InAmpError, KeyError):
    """A spectral index needs a band the image does not have."""


class EmptyManifest(InAmpError, ValueError):
    """A manifest has no records."""


# metrics


class EmptyInput(InAmpError, ValueError):
    """No labels were given."""


class EmptyMatrix(InAmpError, ValueError):
    """A confusion matrix has no counts."""


class DegenerateMarginals(InAmpError, ValueError):
    """Expected agreement is one, so kappa is undefined."""


class NoTargetSamples(InAmpError, ValueError):
    """The target class has no true samples."""


# training


class EmptySplit(InAmpError, ValueError):
    """A data split has no samples."""


class Divergence(InAmpError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, report: object = None):  # noqa: D107
        super().__init__(message)
        self.report = report


# command line


class UnknownCommand(InAmpError, ValueError):
    """The command is not one of the known sub-commands."""


class BadFlag(InAmpError, ValueError):
    """A flag is unknown or its value cannot be parsed."""
