"""Exception hierarchy shared by every cptsketch module."""


class CptError(Exception):
    """Base class for all library errors."""


class InputError(CptError):
    """Caller supplied a bad tree, parameter or file (CLI exit code 1)."""


class EnvironmentFailure(CptError):
    """Endpoint, credential or filesystem trouble (CLI exit code 2)."""


class InvalidTree(InputError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid tree: {lines}")


class InvalidParams(InputError):
    pass


class ShapeError(InputError):
    pass


class BoundExceeded(InputError):
    pass


class NotALeaf(InputError):
    pass


class ArityMismatch(InputError):
    pass


class MissingCondition(InputError):
    pass


class BackParseError(InputError):
    def __init__(self, message, position):
        self.position = position
        super().__init__(f"{message} at offset {position}")


class RendererFailure(CptError):
    def __init__(self, path, cause):
        self.path = tuple(path)
        self.cause = cause
        where = ".".join(map(str, self.path)) or "<root>"
        super().__init__(f"renderer failed at node {where}: {cause}")


class QuotaUnreachable(InputError):
    def __init__(self, category, filled, wanted, budget):
        self.category = category
        super().__init__(
            f"category {category!r} filled {filled}/{wanted} after {budget} samples"
        )


class EmptySuite(InputError):
    pass


class SinkError(EnvironmentFailure):
    pass


class CorruptRecord(InputError):
    def __init__(self, line, reason):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class LLMError(EnvironmentFailure):
    pass


class AuthError(LLMError):
    pass


class RateLimited(LLMError):
    pass


class Timeout(LLMError):
    pass


class MalformedResponse(LLMError):
    pass


class CacheMiss(LLMError):
    """Raised by an offline client when a prompt is not already cached."""
