"""Time-domain audio feature extraction and keyword-spotting toolkit.

Behavioral desk-scale model of a ring-oscillator front end: voltage-to-time
conversion, switched-ring-oscillator band-pass channels with inherent
full-wave rectification, a first-order noise-shaped time-to-digital
converter, logarithmic feature post-processing, and a fixed-point GRU-FC
classifier, plus the measurement suite that characterizes them.
"""

from .errors import (CalibrationError, ContractError, FormatError,
                     IngestionError, SimulationError, TdfexError)
from .feature_io import Stage
from .signal_io import PcmClip, load_clip, resample_2x

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ContractError",
    "FormatError",
    "IngestionError",
    "PcmClip",
    "SimulationError",
    "Stage",
    "TdfexError",
    "__version__",
    "load_clip",
    "resample_2x",
]
