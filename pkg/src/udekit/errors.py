"""Exception hierarchy shared by every udekit module."""


class UdekitError(Exception):
    """Base class for all udekit errors."""


class ShapeError(UdekitError, ValueError):
    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DomainError(UdekitError, ValueError):
    pass


class ContractError(UdekitError, RuntimeError):
    pass


class ParameterError(UdekitError, ValueError):
    pass


class ConfigError(UdekitError, ValueError):
    pass


class DataError(UdekitError, ValueError):
    pass


class ExtrapolationError(UdekitError, ValueError):
    pass


class UnsupportedSolverError(UdekitError, ValueError):
    pass


class IntegrationError(UdekitError, ArithmeticError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class TrainingError(UdekitError, RuntimeError):
    def __init__(self, message, epoch=None, batch=None, trajectory=None, step=None):
        self.epoch = epoch
        self.batch = batch
        self.trajectory = trajectory
        self.step = step
        parts = [f"{k}={v}" for k, v in
                 (("epoch", epoch), ("batch", batch), ("trajectory", trajectory), ("step", step))
                 if v is not None]
        if parts:
            message = f"{message} [{', '.join(parts)}]"
        super().__init__(message)


class GradCheckFailure(UdekitError, ArithmeticError):
    def __init__(self, message, coordinate):
        self.coordinate = coordinate
        super().__init__(f"{message} at coordinate {coordinate}")
