"""Exception hierarchy shared by the library and the command line."""


class ElasticTreeError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ElasticTreeError, ValueError):
    """Invalid input: malformed tree, bad file, inconsistent matching.

    ``branch_id`` names the offending branch and ``pointer`` is a JSON pointer
    into the source document, when either is known.
    """

    def __init__(self, message, branch_id=None, pointer=None):
        super().__init__(message)
        self.branch_id = branch_id
        self.pointer = pointer


class TopologyMismatchError(ValidationError):
    """Two SRVF trees do not share a branch hierarchy; pad them first."""


class NumericalError(ElasticTreeError, ArithmeticError):
    """Non-finite values or an iteration that failed to converge."""
