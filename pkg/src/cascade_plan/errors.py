"""Exception hierarchy shared by every module."""


class PlanError(Exception):
    """Base class for all package errors."""


class DegenerateGeometry(PlanError):
    pass


class InvalidArcLength(PlanError):
    pass


class InsufficientHorizon(PlanError):
    pass


class ParseError(PlanError):
    """Malformed record in a frame log or config file."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class VersionError(PlanError):
    pass


class AugmentInfeasible(PlanError):
    pass


class RelabelDegenerate(PlanError):
    pass


class ClusterError(PlanError):
    pass


class NoCandidates(PlanError):
    pass


class ShapeError(PlanError):
    pass


class TrainingDiverged(PlanError):
    pass


class PathExhausted(PlanError):
    pass


class ConfigError(PlanError):
    pass
