"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, architecture mismatch or bad prior parameters."""


class EvaluationError(ValueError):
    """A forward evaluation received inputs it cannot handle (e.g. non-finite)."""


class NonFiniteLossError(FloatingPointError):
    """A training objective produced NaN or inf. ``objective`` names it."""

    def __init__(self, objective: str, value: float, iteration: int | None = None):
        self.objective = objective
        self.value = value
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"objective {objective!r} is non-finite ({value}){where}")


class CheckpointError(RuntimeError):
    """Checkpoint is missing, corrupt or incompatible with the requested model."""
