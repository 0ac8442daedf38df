"""Exception hierarchy shared by all PEPS modules."""

from __future__ import annotations


class PepsError(Exception):
    """Base class for every error raised by this package."""


# dataplane

class MalformedPipeline(PepsError):
    """Pipeline structure is broken (cycle, bad table index)."""


class TablePlacementViolation(PepsError):
    """A rule was placed in a table its origin is not allowed to use."""


class PriorityBandViolation(PepsError):
    """A rule's priority falls outside the band reserved for its origin."""


class InvalidRule(PepsError):
    """A rule carries an action that is not allowed where it is installed."""


# policy

class PolicyParseError(PepsError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Rejection(PepsError):
    """A refused transfer, ticket or request.  ``reason`` is the report tag."""

    reason = "Rejected"


class Violation(Rejection):
    reason = "Violation"

    def __init__(self, witness, before=None, after=None):
        self.witness = witness
        self.before = before
        self.after = after
        super().__init__(f"decision changed from {before} to {after} for {witness}")


class ScopeViolation(Rejection):
    reason = "ScopeViolation"

    def __init__(self, index: int, message: str = ""):
        self.index = index
        super().__init__(message or f"policy {index} reaches outside the subscriber scope")


class StaleSequence(Rejection):
    reason = "StaleSequence"


class BadSignature(Rejection):
    reason = "BadSignature"


class BandOverflow(PepsError):
    """More policies in one transfer than its priority band can hold."""


class UniverseTooLarge(PepsError):
    pass


# controller

class UnknownSwitch(PepsError):
    pass


class DuplicateAddress(PepsError):
    pass


class UnknownPeer(Rejection):
    reason = "UnknownPeer"


class UnknownSubscriber(Rejection):
    reason = "UnknownSubscriber"


class RateLimited(Rejection):
    reason = "RateLimited"


class NotFound(PepsError):
    pass


# interdomain

class MissingPeerKey(PepsError):
    pass


class ChannelDown(PepsError):
    pass


class RptRejected(PepsError):
    def __init__(self, report):
        self.report = report
        super().__init__(report.to_line())


# location

class UnmappedPort(PepsError):
    pass


class NotAttached(PepsError):
    pass


class IpMismatch(Rejection):
    reason = "IpMismatch"


class StaleRequest(Rejection):
    reason = "StaleRequest"


class UnknownHost(Rejection):
    reason = "UnknownHost"


# simnet

class ParseError(PepsError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvariantError(PepsError):
    pass
