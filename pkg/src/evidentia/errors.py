"""Exception hierarchy shared by every subpackage."""


class EvidentiaError(Exception):
    """Base class for all package errors."""


class ShapeError(EvidentiaError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        shown = " and ".join(str(s) for s in self.shapes)
        msg = f"{op}: incompatible shapes {shown}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(EvidentiaError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ContractError(EvidentiaError, ValueError):
    """Precondition of an operation violated by the caller."""


class TrainingAborted(EvidentiaError, RuntimeError):
    """Raised when a loss term goes non-finite during training."""

    def __init__(self, term, epoch, step, value):
        self.term = term
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(
            f"non-finite loss term {term!r}={value} at epoch {epoch}, step {step}"
        )


class MissingArtifact(EvidentiaError, FileNotFoundError):
    """A checkpoint or dataset split the caller pointed at does not exist."""
