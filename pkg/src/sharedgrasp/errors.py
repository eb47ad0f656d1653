"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad arguments, malformed config, or invalid input files. Exit code 1."""


class ArtifactMismatchError(Exception):
    """Incompatible artifacts, e.g. a dataset whose candidate-set hash does
    not match the supplied candidate set. Exit code 2."""


class NumericalError(Exception):
    """Non-finite values or a failed numerical sanity check. Exit code 3."""
