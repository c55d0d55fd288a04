"""MFCC extraction, cepstral normalisation, energy SAD and WPE dereverberation."""

from .mfcc import FeatureMatrix, MfccConfig, compute_mfcc, log_mel_energies, mel_filterbank, num_frames
from .normalize import apply_cmn_sliding, apply_cmvn_global
from .sad import SadConfig, energy_sad, select_speech_frames, speech_seconds
from .wpe import WpeConfig, wpe_dereverberate

__all__ = [
    "FeatureMatrix",
    "MfccConfig",
    "SadConfig",
    "WpeConfig",
    "apply_cmn_sliding",
    "apply_cmvn_global",
    "compute_mfcc",
    "energy_sad",
    "log_mel_energies",
    "mel_filterbank",
    "num_frames",
    "select_speech_frames",
    "speech_seconds",
    "wpe_dereverberate",
]
