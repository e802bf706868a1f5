class BayesOODError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(BayesOODError, ValueError):
    pass


class InsufficientClassSamplesError(InvalidArgumentError):
    def __init__(self, class_id, available, required):
        self.class_id = class_id
        self.available = available
        self.required = required
        super().__init__(
            f"class {class_id} has {available} samples, {required} required"
        )


class TrainingDivergedError(BayesOODError, ArithmeticError):
    def __init__(self, epoch, detail=""):
        self.epoch = epoch
        msg = f"training diverged at epoch {epoch}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class ConfigError(BayesOODError):
    pass


class DataError(BayesOODError):
    pass
