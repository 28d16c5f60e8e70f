"""Exception hierarchy shared by the library, the service and the CLI.

The three leaf categories map onto CLI exit codes and HTTP error codes:
schema problems (bad files, bad shapes) -> exit 2, capability limits
(operations the method does not support) -> exit 3, numeric failures
(overflow, divergence, infeasible sizes) -> exit 4.
"""


class PolyexpandError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    code = "error"


class SchemaError(PolyexpandError):
    """Malformed input: bad file, bad field, inconsistent shapes."""

    exit_code = 2
    code = "schema"


class CapabilityError(PolyexpandError):
    """A request the method cannot honor (e.g. mixed derivatives across a
    nonlinear first module, or an unsupported module kind)."""

    exit_code = 3
    code = "capability"


class NumericError(PolyexpandError):
    """Numeric failure: overflow, non-finite derivatives, infeasible sizes."""

    exit_code = 4
    code = "numeric"
