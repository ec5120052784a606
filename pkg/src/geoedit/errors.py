"""Exception taxonomy shared across the toolkit.

Contract violations (bad shapes, out-of-range knobs, degenerate inputs)
derive from :class:`ContractError`; failures that occur at runtime on valid
inputs (solver divergence, training blow-up, provider outages) derive from
:class:`RuntimeFailure`.  The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""


class ContractError(ValueError):
    """An input violated a documented precondition."""


class DimensionError(ContractError):
    """Shapes that must agree do not; the message names both shapes."""


class DegeneratePairError(ContractError):
    """A vector pair admits no unique great-circle arc (antipodal inputs)."""


class DegenerateEditError(ContractError):
    """Source and target texts embed to the same point; no edit direction."""


class ConfigError(ContractError):
    """A run configuration failed schema validation."""


class RuntimeFailure(RuntimeError):
    """A computation failed at runtime on contractually valid inputs."""


class SolverDivergenceError(RuntimeFailure):
    """Adaptive step size underflowed; carries the last integrator state."""

    def __init__(self, message, last_state=None, t=None):
        super().__init__(message)
        self.last_state = last_state
        self.t = t


class StepBudgetError(RuntimeFailure):
    """The integrator exceeded its accepted-step budget."""


class TrainingDivergedError(RuntimeFailure):
    """A training loss became non-finite; carries the last good parameters."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class ProviderError(RuntimeFailure):
    """A caption provider request failed; carries the HTTP status if any."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class CheckpointFormatError(ContractError):
    """A checkpoint file has an unknown magic, version, or corrupt layout."""


class ImageFormatError(ContractError):
    """A PGM file has a bad magic, header, or truncated pixel payload."""
