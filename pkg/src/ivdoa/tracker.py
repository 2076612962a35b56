"""NOAS smoothing, event segmentation, DOA post-processing and SEL metrics."""
from itertools import permutations

import numpy as np

from . import kernels
from .intensity import DoaTrack
from .music import angular_distance

GRID_DEG = 10.0


def smooth_noas(raw, window: int = 11) -> np.ndarray:
    """Sliding majority vote (shrunken windows at the edges, ties -> smaller count)."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be an odd positive integer, got {window}")
    raw = np.ascontiguousarray(raw, dtype=np.int64)
    if raw.size and raw.min() < 0:
        raise ValueError("NOAS counts must be non-negative")
    return kernels.majority_smooth(raw, window)


def segment_events(noas):
    """Maximal runs of constant nonzero NOAS as (onset, offset, count), offset exclusive."""
    noas = np.asarray(noas)
    events = []
    start = 0
    for t in range(1, len(noas) + 1):
        if t == len(noas) or noas[t] != noas[start]:
            if noas[start] > 0:
                events.append((start, t, int(noas[start])))
            start = t
    return events


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def discretize_deg(deg, step: float = GRID_DEG):
    return round_half_away(np.asarray(deg, dtype=np.float64) / step) * step


def wrap_deg(deg):
    """Map to [-180, 180)."""
    return (np.asarray(deg, dtype=np.float64) + 180.0) % 360.0 - 180.0


def lower_median(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    return v[(len(v) - 1) // 2]


def circular_lower_median_deg(values):
    """Lower median after cutting the circle at its widest empty gap."""
    v = np.sort(wrap_deg(values))
    if len(v) == 1:
        return v[0]
    gaps = np.diff(np.concatenate([v, [v[0] + 360.0]]))
    cut = (int(np.argmax(gaps)) + 1) % len(v)
    unrolled = np.concatenate([v[cut:], v[:cut] + 360.0])
    return float(wrap_deg(lower_median(unrolled)))


def postprocess_doa(track: DoaTrack, events=None, step: float = GRID_DEG) -> DoaTrack:
    """Snap DOAs to the ``step``-degree grid, then replace each event's values by their median.

    Medians are taken per track slot and per angle; azimuth medians respect
    wraparound. Degenerate slots are ignored and keep their flag.
    """
    if events is None:
        events = segment_events(track.noas)
    out = track.copy()
    deg = np.degrees(out.doas)
    deg[..., 0] = wrap_deg(discretize_deg(wrap_deg(deg[..., 0]), step))
    deg[..., 1] = np.clip(discretize_deg(deg[..., 1], step), -90.0, 90.0)
    usable = track.active_slots()
    for onset, offset, _ in events:
        if not 0 <= onset < offset <= track.n_frames:
            raise ValueError(f"event ({onset}, {offset}) outside track of {track.n_frames} frames")
        for k in range(2):
            rows = np.arange(onset, offset)[usable[onset:offset, k]]
            if rows.size == 0:
                continue
            az_med = circular_lower_median_deg(deg[rows, k, 0])
            el_med = lower_median(deg[rows, k, 1])
            deg[rows, k, 0] = az_med
            deg[rows, k, 1] = el_med
    out.doas = np.where(np.isnan(out.doas), np.nan, np.radians(deg))
    return out


def _frame_matches(pred: DoaTrack, truth: DoaTrack, t: int, dist):
    p = [pred.doas[t, k] for k in range(2) if pred.active_slots()[t, k]]
    g = [truth.doas[t, k] for k in range(min(2, truth.noas[t]))]
    if not p or not g:
        return []
    if len(p) < len(g):
        best = min(permutations(range(len(g)), len(p)), key=lambda perm: sum(dist(p[i], g[j]) for i, j in enumerate(perm)))
        return [dist(p[i], g[j]) for i, j in enumerate(best)]
    best = min(permutations(range(len(p)), len(g)), key=lambda perm: sum(dist(p[i], g[j]) for j, i in enumerate(perm)))
    return [dist(p[i], g[j]) for j, i in enumerate(best)]


def _great_circle(a, b):
    return float(angular_distance(a[0], a[1], b[0], b[1]))


def _rotational_abs(a, b):
    dphi = abs(a[0] - b[0])
    dphi = min(dphi, 2 * np.pi - dphi)
    return float(dphi + abs(a[1] - b[1]))


def doa_error(pred: DoaTrack, truth: DoaTrack, kind: str = "great_circle") -> float:
    """Mean matched angular error in degrees over frames where both sides are active.

    ``kind="rotational_mae"`` swaps the great-circle distance for the
    loss-style |d_azimuth (wrapped)| + |d_elevation| sum.
    """
    if pred.n_frames != truth.n_frames:
        raise ValueError(f"track lengths differ: {pred.n_frames} vs {truth.n_frames}")
    dist = _great_circle if kind == "great_circle" else _rotational_abs
    errs = []
    for t in np.flatnonzero((pred.noas > 0) & (truth.noas > 0)):
        errs.extend(_frame_matches(pred, truth, t, dist))
    if not errs:
        return float("nan")
    return float(np.degrees(np.mean(errs)))


def frame_recall(pred_noas, truth_noas) -> float:
    """Fraction of truth-active frames whose NOAS is estimated exactly."""
    pred_noas = np.asarray(pred_noas)
    truth_noas = np.asarray(truth_noas)
    if pred_noas.shape != truth_noas.shape:
        raise ValueError("NOAS sequences differ in length")
    active = truth_noas > 0
    if not active.any():
        return float("nan")
    return float(np.mean(pred_noas[active] == truth_noas[active]))


def metrics_report(pred: DoaTrack, truth: DoaTrack, n_events=None) -> dict:
    return {
        "doa_error_deg": doa_error(pred, truth),
        "frame_recall": frame_recall(pred.noas, truth.noas),
        "n_frames": int(truth.n_frames),
        "n_events": int(len(segment_events(truth.noas)) if n_events is None else n_events),
    }
