"""Exception hierarchy shared across screenr modules."""


class ScreenrError(Exception):
    """Base class for every error raised deliberately by screenr."""


class EmptyContent(ScreenrError, ValueError):
    pass


class TranscriptFormatError(ScreenrError, ValueError):
    pass


# backend


class BackendError(ScreenrError):
    """A chat completion could not be obtained."""

    retryable = False


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    retryable = True


class ServerError(BackendError):
    retryable = True


class BackendTimeout(BackendError):
    retryable = True


class NetworkError(BackendError):
    retryable = True


class MalformedResponse(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class MissingAPIKey(ScreenrError):
    pass


# review


class IncompleteDescription(ScreenrError, ValueError):
    pass


class UnreadableFile(ScreenrError):
    pass


class MissingColumn(ScreenrError):
    pass


class SampleTooLarge(ScreenrError, ValueError):
    pass


# engine


class VerdictUnparseable(ScreenrError):
    """No INCLUDE/EXCLUDE token could be found in the model's final answer.

    When raised by a screening protocol, ``result`` holds the failed
    ScreeningResult so the transcript stays inspectable.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


# batch


class CacheCorrupt(ScreenrError):
    pass


# metrics


class UnlabelledSource(ScreenrError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyMatrix(ScreenrError, ValueError):
    pass


class LengthMismatch(ScreenrError, ValueError):
    pass


class EmptyInput(ScreenrError, ValueError):
    pass


class SourceSetMismatch(ScreenrError, ValueError):
    pass


class InvalidLabel(ScreenrError, ValueError):
    pass
