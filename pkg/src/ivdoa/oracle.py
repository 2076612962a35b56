"""Ground-truth decomposition of synthetic scenes into masks and epsilon IVs.

The epsilon field absorbs everything that is not a direct-source or noise
IV - reverberation plus all cross terms between components - so that

    IV(mixture) = sum_i IV(direct_i) + IV(noise) + IV_eps

holds exactly.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core_dsp import MultiSpec, StftConfig, stft
from .foa_scene import SceneComponents, frame_labels
from .intensity import DoaTrack, RefinerOutput, intensity_vectors

MASK_FLOOR = 1e-12


@dataclass
class ComponentIvs:
    direct: List[np.ndarray]
    noise: np.ndarray
    epsilon: np.ndarray
    mixture: np.ndarray


def _spec(x, config) -> MultiSpec:
    return stft(x, config)


def oracle_component_ivs(components: SceneComponents, config: StftConfig = StftConfig()) -> ComponentIvs:
    if components.spec is not None and components.spec.sample_rate != config.sample_rate:
        raise ValueError(f"scene rate {components.spec.sample_rate} Hz does not match STFT config {config.sample_rate} Hz")
    mix = intensity_vectors(_spec(components.mixture, config))
    direct = [intensity_vectors(_spec(d, config)) for d in components.direct]
    noise = intensity_vectors(_spec(components.noise, config))
    eps = mix - sum(direct, np.zeros_like(mix)) - noise
    return ComponentIvs(direct, noise, eps, mix)


def slot_events(components: SceneComponents, config: StftConfig, labels: Optional[DoaTrack] = None) -> np.ndarray:
    """(T, 2) indices into ``components.direct`` for the two source slots (-1 = none).

    Taken from the labels (or the embedded scene spec); without either, the
    two loudest direct components of each frame fill the slots in index order.
    """
    n = components.mixture.shape[1]
    T = config.n_frames(n)
    if labels is None and components.spec is not None:
        labels = frame_labels(components.spec, config)
    if labels is not None and labels.event_ids is not None:
        order = [e.event_id for e in components.spec.ordered_events()] if components.spec is not None else None
        ids = labels.event_ids
        out = np.full((T, 2), -1, dtype=np.int64)
        for t in range(T):
            for k in range(2):
                if ids[t, k] >= 0:
                    out[t, k] = order.index(ids[t, k]) if order is not None else ids[t, k]
        return out
    powers = np.array([np.sum(np.abs(_spec(d[:1], config).data[0]) ** 2, axis=0) for d in components.direct]).reshape(-1, T)
    out = np.full((T, 2), -1, dtype=np.int64)
    for t in range(T):
        live = [i for i in np.argsort(-powers[:, t])[:2] if powers[i, t] > 0]
        out[t, : len(live)] = sorted(live)
    return out


def oracle_masks(components: SceneComponents, config: StftConfig = StftConfig(), labels: Optional[DoaTrack] = None):
    """Ideal ratio masks on W-channel power: (m_s1, m_n)."""
    w_direct = [np.abs(_spec(d[:1], config).data[0]) ** 2 for d in components.direct]
    p_noise = np.abs(_spec(components.noise[:1], config).data[0]) ** 2
    F, T = p_noise.shape
    slots = slot_events(components, config, labels)
    p1 = np.zeros((F, T))
    p2 = np.zeros((F, T))
    for t in range(T):
        if slots[t, 0] >= 0:
            p1[:, t] = w_direct[slots[t, 0]][:, t]
        if slots[t, 1] >= 0:
            p2[:, t] = w_direct[slots[t, 1]][:, t]
    p_src = sum(w_direct, np.zeros((F, T)))
    m_s1 = p1 / (p1 + p2 + MASK_FLOOR)
    m_n = p_noise / (p_noise + p_src + MASK_FLOOR)
    return m_s1, m_n


def oracle_epsilon(components: SceneComponents, config: StftConfig = StftConfig()) -> np.ndarray:
    return oracle_component_ivs(components, config).epsilon


def oracle_noas(labels: DoaTrack) -> np.ndarray:
    return labels.noas.copy()


class OracleRefiner:
    """Refiner backed by the true scene components.

    ``use_masks`` / ``use_epsilon`` switch each ingredient off independently
    (all-pass masks / zero epsilon) for ablations.
    """

    def __init__(self, components: SceneComponents, config: StftConfig = StftConfig(), labels=None, use_masks=True, use_epsilon=True):
        self.m_s1, self.m_n = oracle_masks(components, config, labels)
        if not use_masks:
            self.m_s1 = np.ones_like(self.m_s1)
            self.m_n = np.zeros_like(self.m_n)
        self.eps = oracle_epsilon(components, config) if use_epsilon else None

    def __call__(self, spec: MultiSpec, field: np.ndarray) -> RefinerOutput:
        if field.shape[:2] != self.m_s1.shape:
            raise ValueError(f"oracle masks are {self.m_s1.shape}, field is {field.shape[:2]}")
        return RefinerOutput(self.m_s1, self.m_n, self.eps)
