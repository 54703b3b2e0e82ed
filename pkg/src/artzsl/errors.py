"""Exception types shared across the package."""


class DataError(Exception):
    """Input data violates a documented format or contract.

    The command line maps DataError to exit code 1 (bad data), as opposed
    to usage and I/O problems which exit with code 2.
    """


class EmptySequenceError(DataError):
    """Embedding a token list left no in-vocabulary tokens.

    Callers catch this to skip the offending artwork or class instead of
    aborting the whole run.
    """
