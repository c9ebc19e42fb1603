"""Exception hierarchy shared by every istr module."""

from typing import Optional


class IstrError(Exception):
    """Base class for all errors raised by istr."""


class DimensionError(IstrError, ValueError):
    """Tensor or array extents do not compose."""


class ArgumentError(IstrError, ValueError):
    """An argument is outside its allowed range."""


class TapeError(IstrError, RuntimeError):
    """A gradient tape was misused (e.g. replayed after being consumed)."""


class ArchError(IstrError, ValueError):
    """A model architecture descriptor is invalid or its layers do not compose."""


class ModelError(IstrError, ValueError):
    """Two models that must be compatible are not."""


class FormatError(IstrError, ValueError):
    """A file does not follow the expected binary or text layout."""


class CheckpointFormatError(FormatError):
    pass


class CheckpointVersionError(CheckpointFormatError):
    pass


class DatasetFormatError(FormatError):
    pass


class DatasetError(IstrError, ValueError):
    """A dataset is empty, inconsistent or cannot be located."""


class ConfigError(IstrError, ValueError):
    """A run or attack configuration is invalid."""


class StateError(IstrError, RuntimeError):
    """An operation was requested before its inputs exist."""


class StageError(IstrError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, message: str, path: Optional[str] = None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.path = path


class PrerequisiteError(StageError):
    """A stage was started without the artifact a previous stage produces."""

    def __init__(self, stage: str, path: str):
        super().__init__(stage, f"missing prerequisite artifact: {path}", path=path)
