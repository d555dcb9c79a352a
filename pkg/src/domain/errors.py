"""Error types shared across the lab.  All are ValueError subclasses except where noted."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraint."""


class CapacityError(ValueError):
    """A request exceeds a fixed capacity: an exact-enumeration cap or a selection size."""


class MissingArtifactError(FileNotFoundError):
    """A prerequisite artifact (checkpoint, corpus, scores file) is not where it should be."""

    def __init__(self, path: str, hint: str = ""):
        self.path = path
        message = f"missing artifact: {path}"
        if hint:
            message += f" ({hint})"
        super().__init__(message)
