"""Exception hierarchy.

Every domain error carries the process exit code the CLI maps it to.
"""


class ShellHomogError(Exception):
    exit_code = 1


class ConfigParse(ShellHomogError):
    exit_code = 2


class DegenerateChart(ShellHomogError):
    exit_code = 3


class OutOfDomain(ShellHomogError):
    exit_code = 4


class TubularViolation(ShellHomogError):
    exit_code = 5


class SqrtDomain(ShellHomogError):
    exit_code = 6


class ExpansionMismatch(ShellHomogError):
    exit_code = 7


class SingularBlock(ShellHomogError):
    exit_code = 8


class BadSpec(ShellHomogError):
    exit_code = 9


class UnsupportedRegime(ShellHomogError):
    exit_code = 10


class SolveFailure(ShellHomogError):
    exit_code = 11


class ScaleWarning(ShellHomogError):
    """Raised for gamma / gamma1 outside the supported window [1e-3, 1e3]."""

    exit_code = 12


class NotConvex(ShellHomogError):
    exit_code = 13


class SingularMode(ShellHomogError):
    exit_code = 14


class NotABending(ShellHomogError):
    exit_code = 15
