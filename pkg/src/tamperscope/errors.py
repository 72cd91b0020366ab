"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor or grid shapes are incompatible for the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or inconsistent (e.g. heads not dividing dim)."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class StorageError(OSError):
    """A file (checkpoint, manifest, PNG, prediction record) is missing or malformed."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""
