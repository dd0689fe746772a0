class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class TrainingDiverged(RuntimeError):
    """Raised when the pretraining loss becomes non-finite."""
