"""Broadband MUSIC on the 4-channel FOA array."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core_dsp import MultiSpec, StftConfig
from .foa_scene import direction_vector
from .intensity import DoaTrack


@dataclass
class DirectionGrid:
    """Azimuth x elevation lattice with the duplicated pole points collapsed."""

    azimuth: np.ndarray  # (G,) radians
    elevation: np.ndarray  # (G,)
    step: float

    def __len__(self):
        return len(self.azimuth)

    def vectors(self) -> np.ndarray:
        return direction_vector(self.azimuth, self.elevation)


@dataclass
class MusicSpectrum:
    grid: DirectionGrid
    values: np.ndarray  # (G,) P_MU


@dataclass
class PeakResult:
    directions: list  # [(az, el), ...] in descending height
    heights: list
    shortage: bool


def direction_grid(step_deg: float = 10.0) -> DirectionGrid:
    if not 0 < step_deg <= 90 or abs(180.0 / step_deg - round(180.0 / step_deg)) > 1e-9:
        raise ValueError(f"grid step must divide 180 degrees, got {step_deg}")
    n_az = int(round(360.0 / step_deg))
    n_el = int(round(180.0 / step_deg))
    az_deg = -180.0 + step_deg * np.arange(n_az)
    az, el = [], []
    for i in range(n_el + 1):
        e = -90.0 + step_deg * i
        if i in (0, n_el):
            az.append(0.0)
            el.append(e)
        else:
            az.extend(az_deg)
            el.extend([e] * n_az)
    return DirectionGrid(np.radians(az), np.radians(el), np.radians(step_deg))


def band_bins(config: StftConfig, lo_hz: float = 200.0, hi_hz: float = 8000.0):
    f = config.bin_frequencies()
    idx = np.flatnonzero((f >= lo_hz) & (f <= hi_hz))
    if idx.size == 0:
        raise ValueError(f"no bins inside [{lo_hz}, {hi_hz}] Hz")
    return int(idx[0]), int(idx[-1]) + 1


def spatial_covariance(spec: MultiSpec, block=None, band=None) -> np.ndarray:
    """Average of h h^H over bins in ``band`` x frames in ``block``.

    ``block`` is a half-open frame interval or an index/boolean array over
    frames; ``band`` a half-open bin interval (default 200 Hz - 8 kHz).
    """
    spec.require_bformat()
    if band is None:
        band = band_bins(spec.config)
    if block is None:
        block = (0, spec.n_frames)
    sel_f = slice(*band)
    if isinstance(block, tuple):
        h = spec.data[:, sel_f, block[0] : block[1]]
    else:
        h = spec.data[:, sel_f][:, :, np.asarray(block)]
    h = h.reshape(4, -1)
    if h.shape[1] == 0:
        raise ValueError("empty frame/bin selection for spatial covariance")
    r = h @ h.conj().T / h.shape[1]
    return 0.5 * (r + r.conj().T)


def hermitian_eig(m, tol: float = 1e-12, max_sweeps: int = 50):
    """Eigenvalues (descending) and orthonormal eigenvectors by cyclic Jacobi."""
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.abs(m).max(), 1e-300)
    if np.abs(m - m.conj().T).max() > 1e-10 * scale:
        raise ValueError("matrix is not Hermitian")
    w, v, _ = kernels.jacobi_eigh_kernel(np.ascontiguousarray(m), tol, max_sweeps)
    return w, v


def steering_vector(azimuth: float, elevation: float) -> np.ndarray:
    a = np.concatenate([[1.0], direction_vector(azimuth, elevation)])
    return a / np.linalg.norm(a)


def noise_projector(cov, n_sources: int) -> np.ndarray:
    if not 1 <= n_sources < 4:
        raise ValueError(f"n_sources must be 1, 2 or 3 on a 4-channel array, got {n_sources}")
    _, v = hermitian_eig(cov)
    en = v[:, n_sources:]
    return en @ en.conj().T


def music_spectrum(cov, n_sources: int, grid: DirectionGrid | None = None, floor: float = 1e-12) -> MusicSpectrum:
    if grid is None:
        grid = direction_grid()
    proj = np.ascontiguousarray(noise_projector(cov, n_sources))
    steer = np.concatenate([np.ones((len(grid), 1)), grid.vectors()], axis=1) / np.sqrt(2.0)
    denom = kernels.music_denominators(proj, np.ascontiguousarray(steer))
    return MusicSpectrum(grid, 1.0 / (np.maximum(denom, 0.0) + floor))


def angular_distance(az1, el1, az2, el2):
    u = direction_vector(az1, el1)
    v = direction_vector(az2, el2)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    return np.arctan2(cross, np.sum(u * v, axis=-1))


_NEIGHBOUR_CACHE: dict = {}


def _neighbours(grid: DirectionGrid) -> list:
    key = (grid.step, grid.azimuth.tobytes(), grid.elevation.tobytes())
    hit = _NEIGHBOUR_CACHE.get(key)
    if hit is not None:
        return hit
    d = angular_distance(grid.azimuth[:, None], grid.elevation[:, None], grid.azimuth[None, :], grid.elevation[None, :])
    reach = 1.5 * grid.step
    nbrs = [np.flatnonzero((row <= reach) & (np.arange(len(row)) != i)) for i, row in enumerate(d)]
    if len(_NEIGHBOUR_CACHE) > 8:
        _NEIGHBOUR_CACHE.clear()
    _NEIGHBOUR_CACHE[key] = nbrs
    return nbrs


def pick_peaks(spectrum: MusicSpectrum, n: int, min_separation: float = np.radians(20.0)) -> PeakResult:
    """Greedy pick of strict local maxima, highest first, with angular suppression."""
    if n < 1:
        raise ValueError("n must be >= 1")
    g, v = spectrum.grid, spectrum.values
    nbrs = _neighbours(g)
    maxima = [i for i in range(len(g)) if len(nbrs[i]) and np.all(v[i] > v[nbrs[i]])]
    maxima.sort(key=lambda i: -v[i])
    chosen = []
    for i in maxima:
        if all(angular_distance(g.azimuth[i], g.elevation[i], g.azimuth[j], g.elevation[j]) >= min_separation for j in chosen):
            chosen.append(i)
        if len(chosen) == n:
            break
    return PeakResult(
        [(float(g.azimuth[i]), float(g.elevation[i])) for i in chosen],
        [float(v[i]) for i in chosen],
        len(chosen) < n,
    )


def music_doas(spec: MultiSpec, n_sources: int, block=None, band=None, grid=None, min_separation=np.radians(20.0)) -> PeakResult:
    cov = spatial_covariance(spec, block, band)
    return pick_peaks(music_spectrum(cov, n_sources, grid), n_sources, min_separation)


def music_noas(spec: MultiSpec, band=None, ratio: float = 0.2, silence: float = 1e-3) -> np.ndarray:
    """Per-frame source count from the covariance eigenvalue spread.

    0 when frame power is below ``silence`` x the loudest frame, 2 when the
    second eigenvalue reaches ``ratio`` x the first, else 1.
    """
    if band is None:
        band = band_bins(spec.config)
    T = spec.n_frames
    power = np.array([np.real(np.trace(spatial_covariance(spec, (t, t + 1), band))) for t in range(T)])
    out = np.zeros(T, dtype=np.int64)
    top = power.max() if T else 0.0
    for t in range(T):
        if top <= 0 or power[t] < silence * top:
            continue
        w, _ = hermitian_eig(spatial_covariance(spec, (t, t + 1), band))
        out[t] = 2 if w[1] >= ratio * w[0] else 1
    return out


def music_track(spec: MultiSpec, noas, band=None, grid=None, block_frames: int = 1) -> DoaTrack:
    """Frame-wise MUSIC DOAs given NOAS (covariance pooled over ``block_frames``)."""
    noas = np.asarray(noas, dtype=np.int64)
    T = spec.n_frames
    doas = np.full((T, 2, 2), np.nan)
    deg = np.zeros((T, 2), dtype=bool)
    half = block_frames // 2
    for t in np.flatnonzero(noas > 0):
        lo, hi = max(0, t - half), min(T, t + half + 1)
        res = music_doas(spec, int(noas[t]), (lo, hi), band, grid)
        for k in range(noas[t]):
            if k < len(res.directions):
                doas[t, k] = res.directions[k]
            else:
                doas[t, k] = (0.0, 0.0)
                deg[t, k] = True
    return DoaTrack(noas, doas, deg, frame_times=spec.config.frame_times(T))
