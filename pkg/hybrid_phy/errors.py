"""Exception hierarchy shared by every layer of the simulator.

Library code raises these; only the CLI turns them into exit codes.
"""
from typing import Optional


class HybridPhyError(Exception):
    """Base class for all domain errors (CLI exit code 1)."""


class BlockConfigError(HybridPhyError):
    pass


class UnknownPresetError(HybridPhyError):
    def __init__(self, preset_id: object):
        super().__init__(f"Unknown preset {preset_id!r}. Valid presets are 1..6.")
        self.preset_id = preset_id


class PresetMismatchError(HybridPhyError):
    pass


class PipelineError(HybridPhyError):
    pass


class SplitPlanError(HybridPhyError):
    pass


class ProtocolViolation(HybridPhyError):
    """An interposer action was issued in a state that does not allow it."""


class CostModelError(HybridPhyError):
    pass


class BufferSearchCapExceeded(HybridPhyError):
    def __init__(self, cap: int, context: str = ""):
        msg = f"Software cannot keep up: still underrunning at buffer cap {cap}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.cap = cap


class FitError(HybridPhyError):
    pass


class IQFormatError(HybridPhyError):
    def __init__(self, message: str, path: Optional[str] = None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class GoldenCorpusError(HybridPhyError):
    pass


class ExportError(HybridPhyError):
    def __init__(self, message: str, path: Optional[str] = None):
        if path:
            message = f"{message} [{path}]"
        super().__init__(message)
        self.path = path
