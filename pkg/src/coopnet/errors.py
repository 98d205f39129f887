"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid experiment or network configuration."""


class IdxFormatError(ValueError):
    """An IDX file has a bad magic number or dimension header."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class ConsistencyError(ValueError):
    """Paired inputs disagree (e.g. image and label counts)."""


class EmptyDatasetError(ValueError):
    pass


class NumericError(ArithmeticError):
    """A non-finite value appeared in a forward pass or gradient."""


class TrainingError(RuntimeError):
    """Training diverged; carries the epoch and batch where it happened."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class UnsupportedConfigurationError(ValueError):
    pass


class PathBudgetExceeded(ValueError):
    """Path enumeration would visit more paths than the configured budget."""

    def __init__(self, path_count, budget):
        super().__init__(
            f"path enumeration needs B_1 = {path_count} paths, budget is {budget}"
        )
        self.path_count = path_count
        self.budget = budget


class FitError(ValueError):
    pass


class NotFittedError(RuntimeError):
    pass
