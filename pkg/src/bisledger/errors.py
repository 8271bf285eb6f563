"""Exception hierarchy shared by every layer of the ledger."""
from __future__ import annotations


class BISError(Exception):
    """Base class for all library errors."""


class EncodingError(BISError):
    pass


class NotFound(BISError):
    pass


class Rejected(BISError):
    """A transaction failed validation; ``check`` names the failed rule."""

    check = "Rejected"

    def __init__(self, detail: str = "", tid: bytes | None = None):
        self.detail = detail
        self.tid = tid
        msg = f"{self.check}: {detail}" if detail else self.check
        if tid is not None:
            msg += f" (tx {tid.hex()[:16]})"
        super().__init__(msg)


class Malformed(Rejected):
    check = "Malformed"


class TidMismatch(Rejected):
    check = "TidMismatch"


class BadSignature(Rejected):
    check = "BadSignature"


class MultisigIncomplete(Rejected):
    check = "MultisigIncomplete"


class Duplicate(Rejected):
    check = "Duplicate"


class ChainLinkError(Rejected):
    check = "ChainLinkError"


class ScopeError(Rejected):
    check = "ScopeError"


class InvariantViolation(Rejected):
    check = "InvariantViolation"


class AuthorizationError(Rejected):
    check = "AuthorizationError"


REJECTIONS: dict[str, type[Rejected]] = {
    cls.check: cls
    for cls in (
        Malformed, TidMismatch, BadSignature, MultisigIncomplete, Duplicate,
        ChainLinkError, ScopeError, InvariantViolation, AuthorizationError,
    )
}


class IntegrityError(BISError):
    """Off-chain payload does not hash to the value anchored on chain."""

    def __init__(self, locator: str, expected: bytes, actual: bytes):
        self.locator = locator
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"integrity check failed for {locator}: "
            f"anchored {expected.hex()}, got {actual.hex()}"
        )


class AccessDenied(BISError):
    """Read refused. ``reason`` is one of NotAnchored, Scope, Identity, Declined."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ConsensusViolation(BISError):
    pass


class VerificationFailed(BISError):
    pass


class InvalidTransition(BISError):
    pass


class ClaimRejected(BISError):
    """Insurer refused a claim on receipt (NoAccount or BadSignature)."""

    def __init__(self, reason: str, case=None):
        self.reason = reason
        self.case = case
        super().__init__(reason)


class InsufficientFunds(BISError):
    pass


class ConfigError(BISError):
    pass


class ScriptError(BISError):
    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"step {step}: {message}")
