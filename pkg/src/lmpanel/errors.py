"""Exception hierarchy.

Every error carries a short ``code`` string; the CLI maps
:class:`DataError` to exit status 2 and :class:`NumericalError` to 3.
"""


class LMError(Exception):
    code = "LM_ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def __str__(self):
        return f"{self.code}: {self.args[0]}"


class DataError(LMError):
    """Invalid or malformed input data."""

    code = "DATA_ERROR"


class NumericalError(LMError):
    """A computation could not be carried out at the given parameters."""

    code = "NUMERICAL_ERROR"


class ZeroLikelihoodError(NumericalError):
    code = "ZERO_LIKELIHOOD"

    def __init__(self, message, subject_id=None):
        super().__init__(message)
        self.subject_id = subject_id


class InfeasibleCutsError(NumericalError):
    code = "INFEASIBLE_CUTS"
