"""Intensity-vector DOA pipeline: IVs, heuristic masks, refinement, angles.

Array conventions used throughout the package:

* IV field: float array (F, T, 3) holding (I_X, I_Y, I_Z) per bin.
* T-F mask: float array (F, T) with values in [0, 1].
* Frame IVs: float array (T, 2, 3) - one 3-vector per frame and track.
"""
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import kernels
from .core_dsp import MultiSpec


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass
class DoaTrack:
    """Per-frame NOAS and up to two DOAs (radians).

    ``doas[t, k]`` is (azimuth, elevation) of track slot ``k``; slots at or
    beyond ``noas[t]`` hold NaN. ``degenerate[t, k]`` marks slots whose refined
    IV had zero norm - these carry a placeholder (0, 0) and are skipped by the
    metrics. ``event_ids`` is filled for ground-truth tracks only.
    """

    noas: np.ndarray
    doas: np.ndarray
    degenerate: Optional[np.ndarray] = None
    event_ids: Optional[np.ndarray] = None
    frame_times: Optional[np.ndarray] = None

    def __post_init__(self):
        self.noas = np.asarray(self.noas, dtype=np.int64)
        self.doas = np.asarray(self.doas, dtype=np.float64).reshape(len(self.noas), 2, 2)
        if self.degenerate is None:
            self.degenerate = np.zeros((len(self.noas), 2), dtype=bool)
        if np.any((self.noas < 0) | (self.noas > 2)):
            raise ValueError("NOAS values must lie in {0, 1, 2}")

    @classmethod
    def empty(cls, n_frames: int) -> "DoaTrack":
        return cls(np.zeros(n_frames, np.int64), np.full((n_frames, 2, 2), np.nan))

    @property
    def n_frames(self) -> int:
        return len(self.noas)

    def active_slots(self) -> np.ndarray:
        """Boolean (T, 2): slot k is occupied by a usable DOA."""
        slots = np.arange(2)[None, :] < self.noas[:, None]
        return slots & ~self.degenerate

    def copy(self) -> "DoaTrack":
        return DoaTrack(
            self.noas.copy(),
            self.doas.copy(),
            self.degenerate.copy(),
            None if self.event_ids is None else self.event_ids.copy(),
            None if self.frame_times is None else self.frame_times.copy(),
        )


class RefinerOutput(NamedTuple):
    m_s1: np.ndarray
    m_n: np.ndarray
    eps_field: Optional[np.ndarray] = None


Refiner = Callable[[MultiSpec, np.ndarray], RefinerOutput]


# ---------------------------------------------------------------------------
# Per-bin quantities
# ---------------------------------------------------------------------------


def intensity_vectors(spec: MultiSpec) -> np.ndarray:
    """Re(W* . [X, Y, Z]) per bin, proportionality constant 1."""
    spec.require_bformat()
    return kernels.intensity_kernel(np.ascontiguousarray(spec.data, dtype=np.complex128))


def normalize_iv(field: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    norm = np.linalg.norm(field, axis=-1, keepdims=True)
    return field / np.maximum(norm, eps)


def bin_log_power(spec: MultiSpec, floor: float = 1e-10) -> np.ndarray:
    d = spec.require_bformat().data
    p = np.abs(d[0]) ** 2 + (np.abs(d[1]) ** 2 + np.abs(d[2]) ** 2 + np.abs(d[3]) ** 2) / 3.0
    return np.log(p + floor)


def log_power_mask(spec: MultiSpec, sharpness: float = 1.0, threshold=None, floor: float = 1e-10) -> np.ndarray:
    """Sigmoid gate on per-bin log-power.

    ``threshold`` defaults to the median log-power of each frame; a scalar or
    a per-frame array may be passed instead.
    """
    if sharpness <= 0:
        raise ValueError("sharpness must be positive")
    lp = bin_log_power(spec, floor)
    if threshold is None:
        threshold = np.median(lp, axis=0)
    return sigmoid(sharpness * (lp - np.asarray(threshold)))


def reference_azimuth(field_norm: np.ndarray, frame: Optional[int] = None):
    """Azimuth of the frequency-summed normalised IVs.

    Returns ``(azimuth, degenerate)``; arrays over frames when ``frame`` is
    None, scalars otherwise. All-zero frames get azimuth 0 and the flag set.
    """
    if frame is not None:
        if not -field_norm.shape[1] <= frame < field_norm.shape[1]:
            raise IndexError(f"frame {frame} out of range")
        s = field_norm[:, frame, :].sum(axis=0)
        degenerate = bool(s[0] == 0.0 and s[1] == 0.0)
        return (0.0 if degenerate else float(np.arctan2(s[1], s[0]))), degenerate
    s = field_norm.sum(axis=0)
    degenerate = (s[:, 0] == 0.0) & (s[:, 1] == 0.0)
    return np.where(degenerate, 0.0, np.arctan2(s[:, 1], s[:, 0])), degenerate


def angle_mask(field: np.ndarray, ref_az: np.ndarray) -> np.ndarray:
    """sigmoid of each bin's XY azimuth measured from the frame reference.

    Bins turned counterclockwise from ``ref_az`` get values above 0.5.
    """
    ref_az = np.broadcast_to(np.asarray(ref_az, dtype=np.float64), (field.shape[1],))
    return kernels.angle_mask_kernel(np.ascontiguousarray(field, dtype=np.float64), np.ascontiguousarray(ref_az))


def default_angle_mask(field: np.ndarray) -> np.ndarray:
    ref, _ = reference_azimuth(normalize_iv(field))
    return angle_mask(field, ref)


# ---------------------------------------------------------------------------
# Refinement and angle extraction
# ---------------------------------------------------------------------------


def refine_and_sum(field, m_s1, m_n, eps_field=None) -> np.ndarray:
    """Masked, epsilon-subtracted frequency sums for the two source tracks.

    track1 = sum_f m_s1 (1 - m_n) (I - I_eps)
    track2 = sum_f (1 - m_s1) (1 - m_n) (I - I_eps)
    """
    field = np.asarray(field, dtype=np.float64)
    m_s1 = np.broadcast_to(np.asarray(m_s1, dtype=np.float64), field.shape[:2])
    m_n = np.broadcast_to(np.asarray(m_n, dtype=np.float64), field.shape[:2])
    if eps_field is not None:
        eps_field = np.asarray(eps_field, dtype=np.float64)
        if eps_field.shape != field.shape:
            raise ValueError(f"eps field shape {eps_field.shape} != IV field shape {field.shape}")
        field = field - eps_field
    keep = 1.0 - m_n
    out = np.empty((field.shape[1], 2, 3))
    field = np.ascontiguousarray(field)
    out[:, 0] = kernels.frame_sums(field, np.ascontiguousarray(m_s1 * keep))
    out[:, 1] = kernels.frame_sums(field, np.ascontiguousarray((1.0 - m_s1) * keep))
    return out


def iv_to_doa(vec):
    """(azimuth, elevation, degenerate) for IV(s) along the last axis.

    Azimuth is full-quadrant and mapped to [-pi, pi). Zero vectors come back
    as (0, 0) with the degenerate flag set.
    """
    v = np.asarray(vec, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    rho = np.hypot(x, y)
    az = np.arctan2(y, x)
    az = np.where(az >= np.pi, az - 2 * np.pi, az)
    el = np.arctan2(z, rho)
    degenerate = ~np.isfinite(rho) | ((rho == 0.0) & (z == 0.0))
    az = np.where(degenerate, 0.0, az)
    el = np.where(degenerate, 0.0, el)
    if v.ndim == 1:
        return float(az), float(el), bool(degenerate)
    return az, el, degenerate


def track_from_frame_ivs(frame_ivs: np.ndarray, noas) -> DoaTrack:
    noas = np.asarray(noas, dtype=np.int64)
    az, el, deg = iv_to_doa(frame_ivs)
    doas = np.stack([az, el], axis=-1)
    occupied = np.arange(2)[None, :] < noas[:, None]
    doas[~occupied] = np.nan
    return DoaTrack(noas, doas, deg & occupied)


def identity_refiner(spec: MultiSpec, field: np.ndarray) -> RefinerOutput:
    F, T = field.shape[:2]
    return RefinerOutput(np.ones((F, T)), np.zeros((F, T)))


def angle_refiner(spec: MultiSpec, field: np.ndarray) -> RefinerOutput:
    return RefinerOutput(default_angle_mask(field), np.zeros(field.shape[:2]))


def make_logpower_refiner(sharpness: float = 1.0, threshold=None):
    """Log-power denoising gate combined with angle-mask separation."""

    def refiner(spec, field):
        keep = log_power_mask(spec, sharpness, threshold)
        return RefinerOutput(default_angle_mask(field), 1.0 - keep)

    return refiner


def estimate_track(spec: MultiSpec, refiner: Refiner, noas) -> DoaTrack:
    """IVs -> refiner masks/epsilon -> masked frame sums -> per-frame angles.

    Frames with NOAS = 1 use an all-pass separation mask, so the single
    source lands on track 1.
    """
    noas = np.asarray(noas, dtype=np.int64)
    if noas.shape != (spec.n_frames,):
        raise ValueError(f"noas has length {noas.shape}, spec has {spec.n_frames} frames")
    if not np.any(noas > 0):
        return DoaTrack.empty(spec.n_frames)
    field = intensity_vectors(spec)
    out = refiner(spec, field)
    m_s1 = np.array(np.broadcast_to(out.m_s1, field.shape[:2]), dtype=np.float64)
    m_s1[:, noas == 1] = 1.0
    frame_ivs = refine_and_sum(field, m_s1, out.m_n, out.eps_field)
    track = track_from_frame_ivs(frame_ivs, noas)
    track.frame_times = spec.config.frame_times(spec.n_frames)
    return track
