"""Synthetic first-order ambisonic scenes with exact component bookkeeping.

FOA convention: W is pressure with unit gain (no 1/sqrt(2)); X, Y, Z are the
first-order real harmonics with unit peak gain. A single plane wave therefore
satisfies X^2 + Y^2 + Z^2 = W^2 and its intensity vector points exactly at
the source. SN3D / N3D / FuMa material must be rescaled before use.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core_dsp import StftConfig
from .intensity import DoaTrack

SOURCE_KINDS = ("noise", "tones")
N_TRANSFORMS = 8


@dataclass(frozen=True)
class EventLabel:
    event_id: int
    onset: float
    offset: float
    azimuth: float
    elevation: float
    source_kind: str = "noise"
    gain: float = 1.0
    band: Tuple[float, float] = (200.0, 8000.0)

    def validate(self):
        if not self.onset < self.offset:
            raise ValueError(f"event {self.event_id}: onset {self.onset} must precede offset {self.offset}")
        if not -np.pi <= self.azimuth < np.pi:
            raise ValueError(f"event {self.event_id}: azimuth {self.azimuth} outside [-pi, pi)")
        if not -np.pi / 2 <= self.elevation <= np.pi / 2:
            raise ValueError(f"event {self.event_id}: elevation {self.elevation} outside [-pi/2, pi/2]")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"event {self.event_id}: unknown source_kind {self.source_kind!r}")
        lo, hi = self.band
        if not 0 <= lo < hi:
            raise ValueError(f"event {self.event_id}: bad band {self.band}")

    def active(self, t) -> np.ndarray:
        t = np.asarray(t)
        return (t >= self.onset) & (t < self.offset)


@dataclass(frozen=True)
class ReverbParams:
    echo_count: int = 8
    delay_range: Tuple[float, float] = (0.005, 0.08)
    decay: float = 0.6
    direction_jitter: float = 1.0

    def validate(self):
        if self.echo_count < 1:
            raise ValueError("echo_count must be >= 1")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay must lie in (0, 1)")
        lo, hi = self.delay_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"delay_range must be positive and ordered, got {self.delay_range}")
        if self.direction_jitter < 0:
            raise ValueError("direction_jitter must be >= 0")


@dataclass(frozen=True)
class SceneSpec:
    duration: float
    events: Tuple[EventLabel, ...] = ()
    noise_snr: Optional[float] = None
    reverb: Optional[ReverbParams] = None
    seed: int = 0
    sample_rate: int = 48000
    noise_directions: int = 64

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def ordered_events(self) -> List[EventLabel]:
        return sorted(self.events, key=lambda e: (e.onset, e.event_id))

    def validate(self) -> "SceneSpec":
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        ids = [e.event_id for e in self.events]
        if len(set(ids)) != len(ids):
            raise ValueError("event ids must be unique")
        for e in self.events:
            e.validate()
        if self.reverb is not None:
            self.reverb.validate()
        # sweep over boundaries; offsets sort before onsets at equal times
        marks = sorted([(e.onset, 1, e.event_id) for e in self.events] + [(e.offset, -1, e.event_id) for e in self.events])
        active: set = set()
        for t, kind, eid in marks:
            if kind < 0:
                active.discard(eid)
                continue
            active.add(eid)
            if len(active) > 2:
                raise ValueError(f"overlap of {len(active)}: events {sorted(active)} are simultaneously active at t={t:.3f} s (max 2)")
        return self


@dataclass
class SceneComponents:
    direct: List[np.ndarray]  # per event in spec.ordered_events() order, each (4, N)
    noise: np.ndarray
    epsilon: np.ndarray
    mixture: np.ndarray
    spec: Optional[SceneSpec] = None

    @property
    def sample_rate(self) -> int:
        return 48000 if self.spec is None else self.spec.sample_rate


# ---------------------------------------------------------------------------
# Encoding and transforms
# ---------------------------------------------------------------------------


def direction_vector(azimuth, elevation) -> np.ndarray:
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    return np.stack([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=-1)


def encode_plane_wave(mono, azimuth: float, elevation: float) -> np.ndarray:
    """(4, N) B-format signal of a plane wave from (azimuth, elevation)."""
    mono = np.asarray(mono, dtype=np.float64)
    d = direction_vector(azimuth, elevation)
    return np.stack([mono, mono * d[0], mono * d[1], mono * d[2]])


def wrap_azimuth(az):
    """Map to [-pi, pi)."""
    return (np.asarray(az, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi


def transform_matrix(transform: int) -> np.ndarray:
    """3x3 matrix of one of the 8 azimuth rotations/reflections.

    ``transform = k + 4 * r`` reflects azimuth (az -> -az) when r = 1, then
    rotates by k * pi/2. Entries are exactly 0 or +-1.
    """
    if transform not in range(N_TRANSFORMS):
        raise ValueError(f"unknown transform id {transform!r}; expected 0..7")
    k, reflect = transform % 4, transform >= 4
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
    m = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)
    if reflect:
        m = m @ np.diag([1.0, -1.0, 1.0])
    return m


def transform_direction(azimuth, elevation, transform: int):
    k, reflect = transform % 4, transform >= 4
    az = -np.asarray(azimuth) if reflect else np.asarray(azimuth)
    return wrap_azimuth(az + k * np.pi / 2), elevation


def spatial_augment(foa: np.ndarray, transform: int) -> np.ndarray:
    """Apply an azimuth rotation/reflection as X/Y channel swaps and sign flips."""
    m = transform_matrix(transform)
    foa = np.asarray(foa)
    out = foa.copy()
    out[1:4] = np.tensordot(m, foa[1:4], axes=(1, 0))
    return out


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _event_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def band_limited_noise(n: int, band, sample_rate: int, rng) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < band[0]) | (f > band[1])] = 0.0
    return np.fft.irfft(spec, n)


def tone_complex(n: int, band, sample_rate: int, rng) -> np.ndarray:
    f0 = max(band[0], 50.0)
    harmonics = f0 * np.arange(1, int(band[1] // f0) + 1)
    harmonics = harmonics[harmonics >= band[0]]
    t = np.arange(n) / sample_rate
    phases = rng.uniform(0, 2 * np.pi, len(harmonics))
    return np.sin(2 * np.pi * harmonics[:, None] * t[None, :] + phases[:, None]).sum(axis=0)


def source_mono(event: EventLabel, n_samples: int, sample_rate: int, seed: int) -> np.ndarray:
    """Unit-RMS (times gain) mono signal gated to [onset, offset)."""
    t = np.arange(n_samples) / sample_rate
    active = event.active(t)
    out = np.zeros(n_samples)
    n = int(active.sum())
    if n == 0:
        return out
    rng = _event_rng(seed, event.event_id)
    gen = band_limited_noise if event.source_kind == "noise" else tone_complex
    sig = gen(n, event.band, sample_rate, rng)
    rms = np.sqrt(np.mean(sig**2))
    out[active] = event.gain * sig / (rms if rms > 0 else 1.0)
    return out


def sphere_directions(n: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    """``n`` directions, each marginally uniform on the sphere.

    Draws come in cyclic coordinate-permutation triples, so the directions'
    second moments are balanced across x, y, z.
    """
    n_triples, rest = divmod(n, 3)
    v = rng.standard_normal((n_triples + rest, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    base = v[:n_triples]
    dirs = np.concatenate([base, np.roll(base, 1, axis=1), np.roll(base, 2, axis=1), v[n_triples:]])
    az = wrap_azimuth(np.arctan2(dirs[:, 1], dirs[:, 0]))
    el = np.arcsin(np.clip(dirs[:, 2], -1.0, 1.0))
    return az, el


def diffuse_noise(duration: float, n_directions: int = 64, seed: int = 0, sample_rate: int = 48000, return_directions: bool = False):
    """Sum of independent white-noise plane waves, scaled by 1/sqrt(K)."""
    if n_directions < 1:
        raise ValueError("n_directions must be >= 1")
    n = int(round(duration * sample_rate))
    rng = _event_rng(seed, 1_000_000)
    az, el = sphere_directions(n_directions, rng)
    monos = rng.standard_normal((n_directions, n))
    d = direction_vector(az, el)  # (K, 3)
    out = np.empty((4, n))
    out[0] = monos.sum(axis=0)
    out[1:] = d.T @ monos
    out /= np.sqrt(n_directions)
    if return_directions:
        return out, az, el
    return out


def reverb_tail(direct_mono, azimuth, elevation, params: ReverbParams, seed: int = 0, sample_rate: int = 48000) -> np.ndarray:
    """Sparse echo model: decayed, delayed, direction-jittered plane waves."""
    params.validate()
    mono = np.asarray(direct_mono, dtype=np.float64)
    n = mono.shape[0]
    rng = _event_rng(seed, 2_000_000)
    delays = rng.uniform(params.delay_range[0], params.delay_range[1], params.echo_count)
    jitter = rng.standard_normal((params.echo_count, 2)) * params.direction_jitter
    out = np.zeros((4, n))
    for j in range(params.echo_count):
        d = int(round(delays[j] * sample_rate))
        if d >= n:
            continue
        delayed = np.zeros(n)
        delayed[d:] = mono[: n - d]
        el = float(np.clip(elevation + jitter[j, 1], -np.pi / 2, np.pi / 2))
        out += params.decay ** (j + 1) * encode_plane_wave(delayed, azimuth + jitter[j, 0], el)
    return out


def active_region(spec: SceneSpec) -> np.ndarray:
    t = np.arange(spec.n_samples) / spec.sample_rate
    mask = np.zeros(spec.n_samples, dtype=bool)
    for e in spec.events:
        mask |= e.active(t)
    return mask


def synth_scene(spec: SceneSpec) -> SceneComponents:
    """Render every component of ``spec``; deterministic in ``spec.seed``."""
    spec.validate()
    n, sr = spec.n_samples, spec.sample_rate
    direct, epsilon = [], np.zeros((4, n))
    for e in spec.ordered_events():
        mono = source_mono(e, n, sr, spec.seed)
        direct.append(encode_plane_wave(mono, e.azimuth, e.elevation))
        if spec.reverb is not None:
            epsilon += reverb_tail(mono, e.azimuth, e.elevation, spec.reverb, seed=spec.seed * 7919 + e.event_id, sample_rate=sr)
    noise = np.zeros((4, n))
    if spec.noise_snr is not None:
        noise = diffuse_noise(spec.duration, spec.noise_directions, spec.seed, sr)[:, :n]
        region = active_region(spec)
        if region.any():
            p_direct = np.mean(sum(d[0] for d in direct)[region] ** 2)
            p_noise = np.mean(noise[0, region] ** 2)
            noise *= np.sqrt(p_direct / (p_noise * 10.0 ** (spec.noise_snr / 10.0)))
    mixture = sum(direct, np.zeros((4, n))) + noise + epsilon
    return SceneComponents(direct, noise, epsilon, mixture, spec)


def frame_labels(spec: SceneSpec, config: StftConfig = StftConfig()) -> DoaTrack:
    """Ground truth per STFT frame: an event is active when the frame centre is in [onset, offset)."""
    T = config.n_frames(spec.n_samples)
    centers = config.frame_times(T)
    noas = np.zeros(T, dtype=np.int64)
    doas = np.full((T, 2, 2), np.nan)
    ids = np.full((T, 2), -1, dtype=np.int64)
    for e in spec.ordered_events():
        for t in np.flatnonzero(e.active(centers)):
            k = noas[t]
            if k >= 2:
                raise ValueError(f"more than two events active in frame {t}")
            doas[t, k] = (e.azimuth, e.elevation)
            ids[t, k] = e.event_id
            noas[t] += 1
    return DoaTrack(noas, doas, event_ids=ids, frame_times=centers)
