"""Exception hierarchy.

Every error raised by the package derives from :class:`RxError`.  The CLI maps
the three families onto exit codes: input validation (2), stage failures (3)
and transport failures (4).
"""


class RxError(Exception):
    exit_code = 3


class ValidationError(RxError, ValueError):
    """Malformed or out-of-contract input."""

    exit_code = 2


class InvalidDepthError(ValidationError):
    pass


class OutOfBoundsError(ValidationError):
    pass


class NonPositiveDepthError(ValidationError):
    pass


class LengthMismatchError(ValidationError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class InsufficientFramesError(ValidationError):
    pass


class KTooLargeError(ValidationError):
    pass


class KMismatchError(ValidationError):
    pass


class EmptyContextError(ValidationError):
    pass


class UnknownFrameError(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class MissingJointsError(ValidationError):
    pass


class MissingPoseError(ValidationError):
    pass


class InsufficientStaticAreaError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class MissingAssetError(ValidationError, FileNotFoundError):
    def __init__(self, path, message=None):
        self.path = str(path)
        super().__init__(message or f"missing asset: {self.path}")

    def __str__(self):
        return self.args[0]


class CorruptDescriptorFileError(ValidationError):
    pass


class DegenerateError(RxError):
    """Geometric configuration without a unique solution."""


class DegenerateConfigurationError(DegenerateError):
    pass


class DegenerateHandError(DegenerateError):
    def __init__(self, message, frame_index=None):
        self.frame_index = frame_index
        super().__init__(message)


class DegenerateKeypointsError(DegenerateError):
    pass


class NoConsensusError(RxError):
    pass


class UnrepairableDepthError(RxError):
    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"no valid depth within the repair window for keypoints {self.indices}")


class UnstabilizableClipError(RxError):
    pass


class EmptyRetrievalError(RxError):
    pass


class TransportError(RxError):
    exit_code = 4


class MalformedOutputError(RxError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class WrongArityError(RxError):
    pass


class GenerationFailedError(RxError):
    pass


class StageError(RxError):
    """A pipeline stage failed; ``partial`` holds everything computed before it."""

    def __init__(self, stage, cause, partial=None):
        self.stage = stage
        self.cause = cause
        self.partial = partial
        super().__init__(f"[{stage}] {cause}")

    @property
    def exit_code(self):
        if isinstance(self.cause, TransportError):
            return TransportError.exit_code
        return 3
