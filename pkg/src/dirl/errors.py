class InsufficientDataError(RuntimeError):
    """Raised when a sampler cannot satisfy a request from the stored data."""


class CrowdedTrackError(RuntimeError):
    """Raised when obstacle placement cannot satisfy spacing constraints."""


class PhaseError(RuntimeError):
    """Raised when an orchestration phase fails; carries the phase name."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase
