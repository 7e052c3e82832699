"""Exception hierarchy shared by the library, the CLI and the HTTP service.

Every class carries the process exit code the CLI uses when the error
escapes a subcommand.
"""


class RioError(Exception):
    exit_code = 4


class ConfigurationError(RioError, ValueError):
    exit_code = 2


class DataError(RioError):
    exit_code = 3


class RuntimeFailure(RioError):
    exit_code = 4


# core
class DegenerateQuaternionError(RioError, ValueError):
    pass


class InvalidPoseError(RioError, ValueError):
    pass


# radar_sim
class AliasingError(RioError, ValueError):
    pass


class OutOfRangeError(RioError, ValueError):
    pass


class InsufficientTrajectoryError(DataError, ValueError):
    pass


# registration
class ZeroOverlapError(RuntimeFailure):
    pass


class SingularStepError(RuntimeFailure):
    pass


class InsufficientCorrespondenceError(RuntimeFailure):
    pass


# fusion
class DegenerateCovarianceError(RuntimeFailure):
    pass


# motion_model
class TrainingFailureError(RuntimeFailure):
    pass


# evaluation
class NoOverlapError(DataError):
    pass
