"""STFT / inverse STFT and mel filterbank compression."""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

CHANNELS = ("W", "X", "Y", "Z")


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 48000
    window_len: int = 8192
    hop: int = 960
    window: str = "hann"

    def __post_init__(self):
        if self.window_len < 2:
            raise ValueError(f"window_len must be >= 2, got {self.window_len}")
        if not 1 <= self.hop <= self.window_len:
            raise ValueError(f"hop must lie in [1, window_len], got {self.hop}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def coefficients(self) -> np.ndarray:
        # periodic (DFT-even) taper
        return get_window(self.window, self.window_len, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            return 0
        return 1 + (n_samples - self.window_len) // self.hop

    def frame_times(self, n_frames: int) -> np.ndarray:
        """Centre time in seconds of each analysis frame."""
        return (np.arange(n_frames) * self.hop + self.window_len / 2) / self.sample_rate

    def bin_frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.window_len, d=1.0 / self.sample_rate)


@dataclass
class MultiSpec:
    """Complex T-F data of shape (channels, F, T); B-format order is W, X, Y, Z."""

    data: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]

    def channel(self, name: str) -> np.ndarray:
        return self.data[CHANNELS.index(name)]

    def require_bformat(self):
        if self.n_channels != 4:
            raise ValueError(f"B-format needs 4 channels (W, X, Y, Z), got {self.n_channels}")
        return self


@dataclass
class MelBank:
    weights: np.ndarray  # (n_mels, F)
    centers_hz: np.ndarray

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def _as_channels(signal) -> np.ndarray:
    if isinstance(signal, (list, tuple)):
        lengths = {len(np.asarray(ch)) for ch in signal}
        if len(lengths) > 1:
            raise ValueError(f"channel length mismatch: {sorted(lengths)}")
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("signal must be 1-D or (channels, samples)")
    return x


def stft(signal, config: StftConfig = StftConfig()) -> MultiSpec:
    """Frame ``signal`` without padding and take one-sided DFTs.

    Frame ``t`` covers samples ``[t*hop, t*hop + window_len)``.

    Parameters
    ----------
    signal : array_like, shape (channels, samples) or (samples,)
    config : StftConfig

    Returns
    -------
    MultiSpec with data of shape (channels, window_len // 2 + 1, T)
    """
    x = _as_channels(signal)
    n = x.shape[1]
    if n < config.window_len:
        raise ValueError(f"signal of {n} samples is shorter than one window ({config.window_len})")
    T = config.n_frames(n)
    frames = sliding_window_view(x, config.window_len, axis=1)[:, :: config.hop][:, :T]
    spec = np.fft.rfft(frames * config.coefficients(), axis=-1)
    return MultiSpec(np.ascontiguousarray(spec.transpose(0, 2, 1)), config)


def istft(spec: MultiSpec, config: StftConfig | None = None, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse with per-sample window-energy normalisation.

    Samples not covered by any frame (and the far tails where the summed
    squared window underflows) come back as zero.
    """
    if config is not None and config != spec.config:
        raise ValueError("istft config does not match the config used for analysis")
    cfg = spec.config
    if spec.n_bins != cfg.n_bins:
        raise ValueError(f"spec has {spec.n_bins} bins, config expects {cfg.n_bins}")
    win = cfg.coefficients()
    T = spec.n_frames
    n_out = (T - 1) * cfg.hop + cfg.window_len if T else 0
    if length is None:
        length = n_out
    frames = np.fft.irfft(spec.data.transpose(0, 2, 1), n=cfg.window_len, axis=-1) * win
    out = np.zeros((spec.n_channels, max(n_out, length)))
    norm = np.zeros(max(n_out, length))
    for t in range(T):
        s = t * cfg.hop
        out[:, s : s + cfg.window_len] += frames[:, t]
        norm[s : s + cfg.window_len] += win**2
    good = norm > 1e-10 * win.max() ** 2
    out[:, good] /= norm[good]
    out[:, ~good] = 0.0
    return out[:, :length]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_bank(config: StftConfig = StftConfig(), n_mels: int = 96) -> MelBank:
    """Triangular filters with centres equally spaced in mel between 0 and Nyquist."""
    F = config.n_bins
    if not 1 <= n_mels < F:
        raise ValueError(f"n_mels must lie in [1, {F - 1}], got {n_mels}")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(config.sample_rate / 2), n_mels + 2))
    freqs = config.bin_frequencies()
    lo, ctr, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (ctr - lo)
    falling = (hi - freqs[None, :]) / (hi - ctr)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filters {empty.tolist()} cover no DFT bin; reduce n_mels")
    return MelBank(weights, edges[1:-1])


def apply_mel(bank: MelBank, field: np.ndarray) -> np.ndarray:
    """Contract the leading frequency axis of ``field`` with the filterbank.

    ``field`` may be (F, T) or (F, T, ...) - trailing axes (e.g. the three
    IV components) are compressed independently.
    """
    field = np.asarray(field)
    if field.shape[0] != bank.weights.shape[1]:
        raise ValueError(f"field has {field.shape[0]} rows, filterbank expects {bank.weights.shape[1]}")
    return np.tensordot(bank.weights, field, axes=(1, 0))


def expand_mel(bank: MelBank, mel_field: np.ndarray) -> np.ndarray:
    """Map mel-domain values back onto DFT bins (filter-weighted average)."""
    wsum = bank.weights.sum(axis=0)
    out = np.tensordot(bank.weights.T, mel_field, axes=(1, 0))
    scale = np.where(wsum > 0, 1.0 / np.where(wsum > 0, wsum, 1.0), 0.0)
    return out * scale.reshape((-1,) + (1,) * (out.ndim - 1))


def logmel(spec_channel: np.ndarray, bank: MelBank, floor: float = 1e-10) -> np.ndarray:
    if floor <= 0:
        raise ValueError("floor must be positive")
    return np.log(apply_mel(bank, np.abs(spec_channel) ** 2) + floor)
