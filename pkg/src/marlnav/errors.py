"""Exception hierarchy shared by every layer of the package."""


class MarlNavError(Exception):
    """Base class for all package errors."""


class NotFoundError(MarlNavError, KeyError):
    """A robot id (or other keyed entity) does not exist."""

    def __str__(self):
        return Exception.__str__(self)


class InvalidScenarioError(MarlNavError, ValueError):
    pass


class ConfigError(MarlNavError, ValueError):
    """Configuration rejected; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        if isinstance(diagnostics, str):
            diagnostics = [diagnostics]
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class InvalidActionError(MarlNavError, ValueError):
    pass


class EpisodeFinishedError(MarlNavError, RuntimeError):
    pass


class ArityError(MarlNavError, ValueError):
    pass


class ConflictError(MarlNavError, ValueError):
    pass


class GatherTimeoutError(MarlNavError, TimeoutError):
    def __init__(self, cycle_id, missing):
        self.cycle_id = cycle_id
        self.missing = sorted(missing)
        super().__init__(f"cycle {cycle_id}: no state from robots {self.missing}")


class ShapeError(MarlNavError, ValueError):
    pass


class RangeError(MarlNavError, ValueError):
    pass


class NotReadyError(MarlNavError, RuntimeError):
    """Replay holds fewer transitions than requested."""


class TrainingDivergedError(MarlNavError, FloatingPointError):
    def __init__(self, message, dump=None):
        self.dump = dump or {}
        super().__init__(message)


class CompatibilityError(MarlNavError, ValueError):
    pass


class ProtocolError(MarlNavError, ValueError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class FrameTooLargeError(ProtocolError):
    pass


class UnknownKindError(ProtocolError):
    pass


class MissingFieldError(ProtocolError):
    pass


class MalformedPayloadError(ProtocolError):
    pass


class CheckpointError(MarlNavError, ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError, CompatibilityError):
    pass


class ReplayDivergenceError(MarlNavError, AssertionError):
    def __init__(self, episode, cycle, detail=""):
        self.episode = episode
        self.cycle = cycle
        super().__init__(f"episode {episode}: divergence at cycle {cycle} {detail}".rstrip())
