"""Exception types shared across the simulator."""


class IdrSimError(Exception):
    """Base class for all idrsim errors."""


class InvalidArgument(IdrSimError):
    """An operation was called with arguments violating its contract."""


class CapacityError(InvalidArgument):
    """A fixed resource pool (e.g. the synthetic prefix space) was exhausted."""


class TopologyError(IdrSimError):
    """A topology violates a structural invariant (disconnected, overlap, ...)."""


class TopologyParseError(IdrSimError):
    """Malformed topology input. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RelationshipConflict(TopologyParseError):
    """The same link was declared twice with contradictory relationships."""


class ProtocolError(IdrSimError):
    """A routing message arrived from a sender with no live session."""


class ScenarioError(IdrSimError):
    """Scenario validation failed. Carries every violation found, not just the first."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
