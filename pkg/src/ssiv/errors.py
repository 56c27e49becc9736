"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SSIVError(Exception):
    exit_code = 3


class InputError(SSIVError):
    """Bad input: schema, parse or validation problems."""

    exit_code = 2


class SchemaError(InputError):
    pass


class ParseError(InputError):
    pass


class ValidationError(InputError):
    pass


class DuplicateKeyError(ValidationError):
    pass


class ReferentialError(ValidationError):
    pass


class ConsistencyError(ValidationError):
    pass


class EstimationError(SSIVError):
    exit_code = 1


class RankError(EstimationError):
    def __init__(self, message, condition_number=float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3g})")
        self.condition_number = condition_number


class InapplicableError(EstimationError):
    pass
