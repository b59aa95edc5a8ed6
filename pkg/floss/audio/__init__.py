"""
Spectral front end
"""

from .dsp import MelSplit, SpectralCodec, StftConfig, compress, decompress, istft, stft

__all__ = ["MelSplit", "SpectralCodec", "StftConfig", "compress", "decompress", "istft", "stft"]
