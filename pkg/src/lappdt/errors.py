"""Domain error types shared across the package.

Document-level errors carry a JSON-pointer-style ``path`` ("/sites/tray/to_site")
so callers and the CLI can report exactly which field is wrong.
"""

from __future__ import annotations


class LappError(Exception):
    """Base class for every domain error raised by this package."""


class PathError(LappError):
    """A document error anchored at a specific field path."""

    def __init__(self, path: str, message: str):
        self.path = path if path.startswith("/") else "/" + path
        self.message = message
        super().__init__(f"{self.path}: {message}")


class ParseError(LappError):
    """The input is not well-formed JSON."""


class SchemaError(PathError):
    """A document violates the expected structure or value ranges."""


class UnitError(PathError):
    """A quantity field is missing its unit suffix or uses the wrong one."""


# frame graph
class UnknownFrame(LappError):
    pass


class UnknownParent(LappError):
    pass


class DuplicateChild(LappError):
    pass


class WouldCreateCycle(LappError):
    pass


# twin registry
class NotFound(LappError):
    pass


class VersionConflict(LappError):
    pass


class EmptySerial(LappError):
    pass


class UnknownSite(LappError):
    pass


# plug & play
class UnknownStation(LappError):
    pass


class UnknownDevice(LappError):
    pass


class PrecisionFail(LappError):
    """Raised when a site chain's uncertainty budget exceeds the requirement."""

    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__(
            "precision gate failed: budget %.3f mm > requirement %.3f mm"
            % (verdict.budget_mm, verdict.requirement_mm)
        )


# planning
class DegeneratePlan(LappError):
    """Source and destination site are the same."""


# simulation
class ScenarioError(LappError):
    """A scenario step failed; wraps the underlying module error."""

    def __init__(self, step: str, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"scenario step '{step}': {cause}")
