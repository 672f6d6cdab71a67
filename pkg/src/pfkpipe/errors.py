"""Exception types shared across the package."""


class PipelineError(Exception):
    """Base class for all pfkpipe errors."""


class ValidationError(PipelineError):
    """Invalid values, ranges, shapes, or configuration."""


class ParseError(ValidationError):
    """Malformed input text (CSV rows, headers, numeric fields)."""


class EmptySubsetError(ValidationError):
    """A feature subset with no members was used where training requires one."""


class ModelFormatError(PipelineError):
    """Corrupt, truncated, or incompatible serialized model bytes.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
