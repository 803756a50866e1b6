"""Exception hierarchy.

Every error raised on bad input derives from ``ValueError`` so callers that
only care about "the input was wrong" can catch that.
"""


class RejectedInputError(ValueError):
    """Input values are malformed (non-finite, wrong shape, out of range)."""


class ConfigurationError(ValueError):
    """A configuration object or mapping is inconsistent."""


class MissingDataError(ValueError):
    """Required observations or distributions are absent."""


class DisconnectedNetworkError(ValueError):
    """The response network splits into disjoint subsets.

    ``components`` holds the element ids of each connected component, largest
    first.
    """

    def __init__(self, message, components=None):
        super().__init__(message)
        self.components = components or []


class PlanError(ValueError):
    """A judging plan cannot be built from the requested counts."""


class SplitError(ValueError):
    """Train/validation split leaks comments across folds."""


class PipelineError(RuntimeError):
    """A multi-step pipeline cannot continue (e.g. every rater excluded)."""
