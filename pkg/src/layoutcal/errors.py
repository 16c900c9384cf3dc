"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes, so every failure mode that can reach a
user has a dedicated class here.
"""


class LayoutCalError(Exception):
    """Base class for all engine errors."""


class ParseFailure(LayoutCalError):
    """No usable object phrase could be extracted from the prompt."""


class AmbiguousRelation(LayoutCalError):
    """A positional keyword could not be attached to a unique object."""


class UnknownTerm(LayoutCalError):
    """Position term outside the nine predefined superlative positions."""


class CycleDetected(LayoutCalError):
    """Contradictory spatial relations form an ordering cycle."""

    def __init__(self, message: str, edge=None):
        super().__init__(message)
        self.edge = edge


class AllocationOverflow(LayoutCalError):
    """Not enough free space to give every object a minimum-size box."""


class KindMismatch(LayoutCalError):
    """Operation received logits where probs were required, or vice versa."""


class ShapeMismatch(LayoutCalError):
    """Attention maps disagree on resolution or token count."""


class WindowTooLarge(LayoutCalError):
    """Sliding window exceeds the map bounds."""


class PlanStackMismatch(LayoutCalError):
    """Rectification plan regions do not fit the attention stack."""


class ExhaustedSpace(LayoutCalError):
    """Requested more distinct prompts than the grammar can produce."""


class FormatError(LayoutCalError):
    """Malformed tensor exchange file."""
