"""Exception types raised by tpcinr.

Each error derives from the built-in exception family a caller would expect, so
``except ValueError`` still catches a malformed file and ``except FloatingPointError``
still catches a diverged fit.
"""


class FormatError(ValueError):
    """A file or byte buffer does not conform to the INRV or INRC format."""


class UsageError(ValueError):
    """Invalid command-line usage or configuration document."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared during evaluation or training.

    Attributes:
        layer: Index of the layer where the value appeared, when known.
        epoch: Training epoch, when raised from the training loop.
        step: Optimizer step within the epoch, when raised from the training loop.
    """

    def __init__(
        self,
        message: str,
        *,
        layer: int | None = None,
        epoch: int | None = None,
        step: int | None = None,
    ):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.step = step
