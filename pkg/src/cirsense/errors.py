"""Exception hierarchy shared by every stage of the pipeline."""


class CirsenseError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(CirsenseError, ValueError):
    """Malformed system, scene or sweep configuration."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class SceneError(ConfigError):
    """A scene that cannot be represented on the recovery grid."""


class TraceFormatError(CirsenseError):
    """Unreadable or inconsistent trace / CIR container."""


class RankDeficiencyError(CirsenseError):
    """The active subcarrier set cannot resolve the requested tap set."""


class PipelineError(CirsenseError):
    """Base for recoverable per-window processing failures."""

    stage = "pipeline"


class DominoError(PipelineError):
    stage = "domino"


class MotionGateError(PipelineError):
    """No tap carries enough temporal variance to indicate motion."""

    stage = "dylign"


class EdgeError(PipelineError):
    """The maximum-variance tap sits on the candidate range boundary."""

    stage = "dylign"


class NoRespirationError(PipelineError):
    stage = "estimators"


class InvariantError(PipelineError):
    stage = "estimators"
