"""Exception hierarchy. Each class maps to one CLI error category."""


class SdbError(Exception):
    category = "error"


class ParameterError(SdbError, ValueError):
    category = "parameter"


class ShapeError(SdbError, ValueError):
    category = "shape"


class NumericError(SdbError, FloatingPointError):
    category = "numeric"


class IntegrityError(SdbError):
    category = "integrity"


class VersionError(SdbError):
    category = "version"


class FrozenModelError(SdbError, RuntimeError):
    category = "frozen"


class TrainingDivergedError(SdbError, RuntimeError):
    category = "diverged"
