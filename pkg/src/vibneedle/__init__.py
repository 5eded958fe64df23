"""Detection of a vibrating needle in B-mode ultrasound from per-pixel temporal spectra."""

from .errors import DataError, VibNeedleError
from .evaluate import EvalRecord, EvalSummary, summarize
from .losses import LossConfig, focal_loss, total_loss, total_loss_gradient
from .model import ModelParams
from .pipeline import DetectorConfig, StreamState
from .postproc import Detection, LineFit, ransac_line
from .sim import InsertionProfile, VibrationSpec, default_spacing, generate_sequence
from .spectral import SlidingDFT, SpectralConfig, band_energy_map
from .trainer import TrainConfig, make_pairs, train

__version__ = "0.1.0"
