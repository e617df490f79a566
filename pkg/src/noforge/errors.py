"""Exception types shared across the engine."""


class NoForgeError(Exception):
    """Base class for all engine errors."""


class InvalidShape(NoForgeError, ValueError):
    pass


class ShapeMismatch(NoForgeError, ValueError):
    pass


class InvalidConfig(NoForgeError, ValueError):
    pass


class InvalidInput(NoForgeError, ValueError):
    pass


class ContractViolation(NoForgeError, RuntimeError):
    """A backward pass was called without a matching forward cache."""


class CorruptCheckpoint(NoForgeError, IOError):
    pass


class IncompatibleCheckpoint(NoForgeError, ValueError):
    pass


class CorruptData(NoForgeError, IOError):
    pass


class EmptyMask(NoForgeError, ValueError):
    pass


class NonFiniteGradient(NoForgeError, FloatingPointError):
    def __init__(self, param_name, epoch=None):
        self.param_name = param_name
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite gradient in parameter {param_name!r}{where}")


class NonFiniteLoss(NoForgeError, FloatingPointError):
    def __init__(self, which, epoch=None):
        self.which = which
        self.epoch = epoch
        where = f" at epoch {epoch}" if epoch is not None else ""
        super().__init__(f"non-finite {which} loss{where}")


class IOFailure(NoForgeError, IOError):
    pass


class UnknownSample(NoForgeError, KeyError):
    pass
