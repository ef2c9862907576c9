from .layered import AlfLayeredSource, LayerConfig, PacedLayeredSource
from .audio import CbrAudioSource, TokenBucket

__all__ = [
    "AlfLayeredSource",
    "CbrAudioSource",
    "LayerConfig",
    "PacedLayeredSource",
    "TokenBucket",
]
