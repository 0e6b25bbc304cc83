"""Exception hierarchy shared by the simulators, filters and CLI."""


class ConfigError(ValueError):
    """Invalid parameter or configuration value."""


class InvalidDimensionError(ConfigError):
    """Fock dimension below the minimum of 2."""


class NumericalFailure(RuntimeError):
    """Base class for failures that abort a single trial."""


class StepFailureError(NumericalFailure):
    """Non-positive trace before renormalisation in a Rouchon step."""


class TruncationError(NumericalFailure):
    """The truncated Fock basis can no longer represent the state faithfully."""


class BlowUpError(NumericalFailure):
    """A classical trajectory left the configured escape bound."""


class DegenerateEnsembleError(NumericalFailure):
    """Every particle weight underflowed to zero."""


class SelectionError(NumericalFailure):
    """A candidate filter failed while conditioning on a trace."""

    def __init__(self, model_id, step, cause):
        self.model_id = model_id
        self.step = step
        self.cause = cause
        super().__init__(f"model {model_id!r} failed at step {step}: {cause}")
