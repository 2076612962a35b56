"""Intensity-vector DOA estimation for first-order ambisonics."""
from .core_dsp import MelBank, MultiSpec, StftConfig, istft, logmel, mel_bank, stft
from .foa_scene import EventLabel, ReverbParams, SceneSpec, frame_labels, spatial_augment, synth_scene
from .intensity import DoaTrack, estimate_track, intensity_vectors, refine_and_sum
from .music import music_doas, music_spectrum, music_track
from .oracle import OracleRefiner, oracle_masks
from .refine_fit import LossWeights, OptimConfig, RefinerParams, fit_refiner
from .tracker import doa_error, frame_recall, postprocess_doa, smooth_noas

__version__ = "0.1.0"
