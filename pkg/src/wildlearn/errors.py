"""Exception types shared across the toolkit."""


class WildlearnError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(WildlearnError):
    """Bad arguments, configs, or preconditions. CLI exit code 2."""


class FormatError(WildlearnError):
    """Malformed or truncated on-disk artifact."""


class MembershipAccessError(WildlearnError):
    """Ground-truth membership tags were read inside a code path that must not see them."""


class StageError(WildlearnError):
    """A pipeline stage failed. Carries the stage name; CLI exit code 3."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
