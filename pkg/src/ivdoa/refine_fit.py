"""DOA / NOAS losses with analytic gradients and a logistic mask refiner.

The refiner predicts the separation mask m_s1 and the noise mask m_n per
T-F bin from five local features (standardised logmel power, mel-compressed
normalised IV x/y/z, angle-mask value) through two independent logistic
units. A linear two-class head on frame-mean features stands in for the
NOAS branch. Everything downstream of the masks - masked sums, atan2 angles,
the permutation-invariant rotational MAE - is differentiated exactly, with
the min/abs selectors frozen at the evaluation point.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import kernels
from .core_dsp import MelBank, MultiSpec, StftConfig, apply_mel, expand_mel, logmel, mel_bank, stft
from .intensity import (
    RefinerOutput,
    default_angle_mask,
    intensity_vectors,
    iv_to_doa,
    normalize_iv,
    refine_and_sum,
    sigmoid,
)

log = logging.getLogger(__name__)

FEATURES = ("logmel", "iv_x", "iv_y", "iv_z", "angle_mask")
N_FEAT = len(FEATURES)
DEGENERATE_EPS = 1e-9
TIE_TOL = 1e-9
TWO_PI = 2.0 * np.pi


class FitDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_at: tuple = (0.5, 0.75)
    decay_factor: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")

    def lr_at(self, step: int) -> float:
        n_drops = sum(step >= int(round(f * self.steps)) for f in self.decay_at)
        return self.lr * self.decay_factor**n_drops


@dataclass
class RefinerParams:
    mask_w: np.ndarray = field(default_factory=lambda: np.zeros(N_FEAT))
    mask_b: float = 0.0
    noise_w: np.ndarray = field(default_factory=lambda: np.zeros(N_FEAT))
    noise_b: float = 0.0
    noas_w: np.ndarray = field(default_factory=lambda: np.zeros((2, N_FEAT)))
    noas_b: np.ndarray = field(default_factory=lambda: np.zeros(2))

    SIZE = 2 * (N_FEAT + 1) + 2 * N_FEAT + 2

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.mask_w, [self.mask_b], self.noise_w, [self.noise_b], np.ravel(self.noas_w), self.noas_b
        ]).astype(np.float64)

    @classmethod
    def from_vector(cls, v) -> "RefinerParams":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (cls.SIZE,):
            raise ValueError(f"expected {cls.SIZE} parameters, got {v.shape}")
        k = N_FEAT
        return cls(
            v[:k].copy(), float(v[k]), v[k + 1 : 2 * k + 1].copy(), float(v[2 * k + 1]),
            v[2 * k + 2 : 4 * k + 2].reshape(2, k).copy(), v[4 * k + 2 :].copy(),
        )

    @classmethod
    def initial(cls, seed: int, scale: float = 0.01) -> "RefinerParams":
        rng = np.random.default_rng(seed)
        return cls.from_vector(scale * rng.standard_normal(cls.SIZE))

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURES),
            "mask_w": self.mask_w.tolist(),
            "mask_b": self.mask_b,
            "noise_w": self.noise_w.tolist(),
            "noise_b": self.noise_b,
            "noas_w": np.asarray(self.noas_w).tolist(),
            "noas_b": np.asarray(self.noas_b).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RefinerParams":
        if list(d.get("features", FEATURES)) != list(FEATURES):
            raise ValueError(f"feature set {d.get('features')} does not match {list(FEATURES)}")
        return cls(
            np.asarray(d["mask_w"], float), float(d["mask_b"]), np.asarray(d["noise_w"], float),
            float(d["noise_b"]), np.asarray(d["noas_w"], float), np.asarray(d["noas_b"], float),
        )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _dphi_parts(d):
    # candidates |d|, |d + 2pi|, |d - 2pi|; returns value and selected inner term
    cands = np.stack([d, d + TWO_PI, d - TWO_PI])
    idx = np.argmin(np.abs(cands), axis=0)
    inner = np.take_along_axis(cands, idx[None], axis=0)[0]
    return np.abs(inner), inner


def rotational_mae(pred, truth):
    """(delta_theta, delta_phi) between (..., 2) arrays of (azimuth, elevation)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    dtheta = np.abs(pred[..., 1] - truth[..., 1])
    dphi, _ = _dphi_parts(pred[..., 0] - truth[..., 0])
    return dtheta, dphi


def _pair_loss(pred, truth):
    dt, dp = rotational_mae(pred, truth)
    return dt + dp


def _frame_terms(pred, truth, noas):
    """Per-frame min-permutation costs and the chosen assignment (0 = identity, 1 = swap)."""
    T = len(noas)
    cost = np.zeros(T)
    choice = np.zeros(T, dtype=np.int64)
    one = noas == 1
    two = noas == 2
    if one.any():
        cost[one] = _pair_loss(pred[one, 0], truth[one, 0])
    if two.any():
        straight = _pair_loss(pred[two, 0], truth[two, 0]) + _pair_loss(pred[two, 1], truth[two, 1])
        swapped = _pair_loss(pred[two, 0], truth[two, 1]) + _pair_loss(pred[two, 1], truth[two, 0])
        cost[two] = np.minimum(straight, swapped)
        # exact ties are common (|.| sums are often assignment-invariant); keep identity there
        choice[two] = (swapped < straight - TIE_TOL).astype(np.int64)
    return cost, choice


def doa_loss(pred, truth, noas) -> float:
    """Permutation-invariant rotational MAE, weighted by NOAS per frame.

    Frames with NOAS = 1 compare track 1 against the single truth only;
    NOAS = 0 frames are ignored. Returns 0 when no frame is active.
    """
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2, 2)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 2, 2)
    noas = np.asarray(noas, dtype=np.int64)
    if not (len(pred) == len(truth) == len(noas)):
        raise ValueError("pred, truth and noas must have the same number of frames")
    Z = noas.sum()
    if Z == 0:
        return 0.0
    cost, _ = _frame_terms(pred, truth, noas)
    return float(np.sum(noas * cost) / Z)


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.sum(np.exp(logits - m), axis=-1, keepdims=True))


def noas_bce(logits, truth) -> float:
    """Mean cross-entropy of softmax(logits) over classes {1, 2} against one-hot truth.

    ``truth`` is either one-hot (T, 2) or NOAS counts in {1, 2}.
    """
    logits = np.asarray(logits, dtype=np.float64)
    onehot = _onehot(truth)
    if len(logits) == 0:
        return 0.0
    return float(-np.mean(np.sum(onehot * _log_softmax(logits), axis=-1)))


def _onehot(truth):
    truth = np.asarray(truth)
    if truth.ndim == 2:
        return truth.astype(np.float64)
    if np.any((truth < 1) | (truth > 2)):
        raise ValueError("NOAS classes must be 1 or 2")
    return np.eye(2)[truth.astype(np.int64) - 1]


def doa_prime(field, angle_mask_values, eps_field=None):
    """Mask-network-independent DOAs: angle-mask / complement sums of I - I_eps.

    Returns ((T, 2, 2) angles, (T, 2) degenerate flags).
    """
    sums = refine_and_sum(field, angle_mask_values, 0.0, eps_field)
    az, el, deg = iv_to_doa(sums)
    return np.stack([az, el], axis=-1), deg


def total_loss(l_doa: float, l_noas: float, l_doa_prime: float, weights: LossWeights = LossWeights()) -> float:
    return l_doa + weights.lambda1 * l_noas + weights.lambda2 * l_doa_prime


# ---------------------------------------------------------------------------
# Features and training scenes
# ---------------------------------------------------------------------------


def refiner_features(spec: MultiSpec, field: np.ndarray, bank: MelBank, eps_field=None) -> np.ndarray:
    """(F, T, 5) per-bin feature stack, mel-domain features mapped back to bins."""
    lm = logmel(spec.data[0], bank)
    lm = (lm - lm.mean()) / (lm.std() + 1e-12)
    refined = field if eps_field is None else field - eps_field
    mel_iv = normalize_iv(apply_mel(bank, normalize_iv(refined)))
    feats = np.empty(field.shape[:2] + (N_FEAT,))
    feats[..., 0] = expand_mel(bank, lm)
    feats[..., 1:4] = expand_mel(bank, mel_iv)
    feats[..., 4] = default_angle_mask(field)
    return feats


@dataclass
class TrainingScene:
    field: np.ndarray  # (F, T, 3) scale-normalised I - I_eps
    feats: np.ndarray  # (F, T, N_FEAT)
    truth: np.ndarray  # (T, 2, 2)
    noas: np.ndarray  # (T,)
    frame_feats: np.ndarray  # (T, N_FEAT)
    prime_doas: np.ndarray  # (T, 2, 2)
    name: str = ""

    @property
    def l_doa_prime(self) -> float:
        return doa_loss(self.prime_doas, self.truth, self.noas)


def make_training_scene(field, feats, truth, noas, angle_mask_values=None, eps_field=None, name="") -> TrainingScene:
    field = np.asarray(field, dtype=np.float64)
    refined = field if eps_field is None else field - eps_field
    norms = np.linalg.norm(refined, axis=-1)
    scale = norms[norms > 0].mean() if np.any(norms > 0) else 1.0
    if angle_mask_values is None:
        angle_mask_values = feats[..., 4]
    prime, _ = doa_prime(field / scale, angle_mask_values, None if eps_field is None else eps_field / scale)
    return TrainingScene(
        np.ascontiguousarray(refined / scale),
        np.ascontiguousarray(feats),
        np.asarray(truth, dtype=np.float64),
        np.asarray(noas, dtype=np.int64),
        feats.mean(axis=0),
        prime,
        name,
    )


def prepare_scene(components, config: StftConfig = StftConfig(), bank: Optional[MelBank] = None, use_oracle_eps: bool = False, labels=None, name="") -> TrainingScene:
    """Build a training scene from synthetic components with oracle labels."""
    from .foa_scene import frame_labels
    from .oracle import oracle_epsilon

    bank = bank or mel_bank(config, 96)
    spec = stft(components.mixture, config)
    field = intensity_vectors(spec)
    eps = oracle_epsilon(components, config) if use_oracle_eps else None
    feats = refiner_features(spec, field, bank, eps)
    if labels is None:
        labels = frame_labels(components.spec, config)
    return make_training_scene(field, feats, labels.doas, labels.noas, feats[..., 4], eps, name)


# ---------------------------------------------------------------------------
# Loss + analytic gradient
# ---------------------------------------------------------------------------


@dataclass
class LossParts:
    total: float
    doa: float
    noas: float
    doa_prime: float
    n_degenerate: int = 0
    selectors: tuple = ()


def _angle_grads(S):
    """d(azimuth)/dS and d(elevation)/dS for (..., 3) vectors."""
    x, y, z = S[..., 0], S[..., 1], S[..., 2]
    rho2 = x * x + y * y
    rho = np.sqrt(rho2)
    r2 = rho2 + z * z
    daz = np.stack([-y / rho2, x / rho2, np.zeros_like(x)], axis=-1)
    dely = np.stack([-z * x / (rho * r2), -z * y / (rho * r2), rho / r2], axis=-1)
    return daz, dely


def scene_loss(params: RefinerParams, scene: TrainingScene, weights: LossWeights = LossWeights(), grad: bool = True):
    """Total loss on one scene and (optionally) its gradient w.r.t. the flat parameter vector."""
    a, a0, b, b0 = params.mask_w, params.mask_b, params.noise_w, params.noise_b
    J, X, z = scene.field, scene.feats, scene.noas
    m1 = sigmoid(X @ a + a0)
    mn = sigmoid(X @ b + b0)
    single = z == 1
    m1[:, single] = 1.0
    g = 1.0 - mn
    S = np.empty((J.shape[1], 2, 3))
    S[:, 0] = kernels.frame_sums(J, np.ascontiguousarray(m1 * g))
    S[:, 1] = kernels.frame_sums(J, np.ascontiguousarray((1.0 - m1) * g))

    norms = np.linalg.norm(S, axis=-1)
    rho = np.hypot(S[..., 0], S[..., 1])
    needed = np.arange(2)[None, :] < z[:, None]
    bad = np.any(needed & ((norms <= DEGENERATE_EPS) | (rho <= DEGENERATE_EPS)), axis=1)
    zz = np.where(bad, 0, z)
    if bad.any():
        log.debug("skipping %d degenerate frames", int(bad.sum()))

    az, el, _ = iv_to_doa(S)
    pred = np.stack([az, el], axis=-1)
    Z = zz.sum()
    cost, choice = _frame_terms(pred, scene.truth, zz)
    l_doa = float(np.sum(zz * cost) / Z) if Z else 0.0

    act = z > 0
    h = scene.frame_feats[act]
    logits = h @ params.noas_w.T + params.noas_b
    onehot = _onehot(z[act]) if act.any() else np.zeros((0, 2))
    l_noas = noas_bce(logits, onehot)
    l_prime = scene.l_doa_prime
    parts = LossParts(total_loss(l_doa, l_noas, l_prime, weights), l_doa, l_noas, l_prime, int(bad.sum()))

    # selector signature: assignment choice, wrap branch and abs signs of every used pair
    truth_sel = np.where(choice[:, None] == 1, np.array([1, 0])[None, :], np.array([0, 1])[None, :])
    tr = np.take_along_axis(scene.truth, truth_sel[:, :, None].repeat(2, axis=2), axis=1)
    dphi_in = pred[..., 0] - tr[..., 0]
    cands = np.stack([dphi_in, dphi_in + TWO_PI, dphi_in - TWO_PI])
    wrap_idx = np.argmin(np.abs(cands), axis=0)
    _, inner = _dphi_parts(dphi_in)
    s_phi = np.sign(inner)
    s_th = np.sign(pred[..., 1] - tr[..., 1])
    used = (np.arange(2)[None, :] < zz[:, None])
    parts.selectors = (choice[zz == 2].tobytes(), (wrap_idx * used).tobytes(), (s_phi * used).tobytes(), (s_th * used).tobytes())
    if not grad:
        return parts, None

    # dL/d(az), dL/d(el) for each predicted track
    coef = np.where(Z > 0, zz / max(Z, 1), 0.0)[:, None] * used
    daz_l = coef * s_phi
    del_l = coef * s_th
    dA, dE = _angle_grads(np.where(used[..., None], S, 1.0))
    G = daz_l[..., None] * dA + del_l[..., None] * dE
    G = np.where(used[..., None], G, 0.0)  # (T, 2, 3)

    dm1 = m1 * (1.0 - m1)
    dm1[:, single] = 0.0
    c = dm1 * g * np.einsum("ftc,tc->ft", J, G[:, 0] - G[:, 1])
    d = -mn * (1.0 - mn) * (m1 * np.einsum("ftc,tc->ft", J, G[:, 0]) + (1.0 - m1) * np.einsum("ftc,tc->ft", J, G[:, 1]))
    grad_a = np.einsum("ft,ftk->k", c, X)
    grad_b = np.einsum("ft,ftk->k", d, X)

    if act.any():
        r = (np.exp(_log_softmax(logits)) - onehot) / len(h)
        grad_nw = weights.lambda1 * r.T @ h
        grad_nb = weights.lambda1 * r.sum(axis=0)
    else:
        grad_nw = np.zeros((2, N_FEAT))
        grad_nb = np.zeros(2)
    gvec = np.concatenate([grad_a, [c.sum()], grad_b, [d.sum()], grad_nw.ravel(), grad_nb])
    return parts, gvec


def batch_loss(params: RefinerParams, scenes: List[TrainingScene], weights: LossWeights = LossWeights(), grad: bool = True):
    """Mean of per-scene losses (fixed summation order) and gradient."""
    parts_list, total_grad = [], np.zeros(RefinerParams.SIZE)
    for sc in scenes:
        parts, gv = scene_loss(params, sc, weights, grad)
        parts_list.append(parts)
        if grad:
            total_grad += gv
    n = len(scenes)
    mean = LossParts(
        sum(p.total for p in parts_list) / n,
        sum(p.doa for p in parts_list) / n,
        sum(p.noas for p in parts_list) / n,
        sum(p.doa_prime for p in parts_list) / n,
        sum(p.n_degenerate for p in parts_list),
        tuple(p.selectors for p in parts_list),
    )
    return mean, (total_grad / n if grad else None)


def loss_gradient(params: RefinerParams, scenes: List[TrainingScene], weights: LossWeights = LossWeights()) -> np.ndarray:
    return batch_loss(params, scenes, weights, grad=True)[1]


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    params: RefinerParams
    trace: list  # rows (step, L, L_doa, L_noas, L_doa_prime), loss before each update
    final: LossParts
    initial: LossParts


def fit_refiner(scenes: List[TrainingScene], opt: OptimConfig = OptimConfig(), seed: int = 0, weights: LossWeights = LossWeights(), init: Optional[RefinerParams] = None) -> FitResult:
    """Adam with step decay on the total loss over ``scenes``."""
    if not scenes:
        raise ValueError("need at least one training scene")
    params = init if init is not None else RefinerParams.initial(seed)
    theta = params.to_vector()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = []
    initial = None
    for step in range(opt.steps):
        parts, gvec = batch_loss(RefinerParams.from_vector(theta), scenes, weights)
        if initial is None:
            initial = parts
        if not np.isfinite(parts.total) or not np.all(np.isfinite(gvec)):
            raise FitDivergence(f"non-finite loss/gradient at step {step}: L={parts.total}")
        if parts.total > 10.0 * max(initial.total, 1e-12):
            raise FitDivergence(f"loss {parts.total:.4g} at step {step} exceeds 10x initial {initial.total:.4g}")
        trace.append((step, parts.total, parts.doa, parts.noas, parts.doa_prime))
        lr = opt.lr_at(step)
        m = opt.beta1 * m + (1 - opt.beta1) * gvec
        v = opt.beta2 * v + (1 - opt.beta2) * gvec**2
        mhat = m / (1 - opt.beta1 ** (step + 1))
        vhat = v / (1 - opt.beta2 ** (step + 1))
        theta = theta - lr * mhat / (np.sqrt(vhat) + opt.eps)
    final_params = RefinerParams.from_vector(theta)
    final, _ = batch_loss(final_params, scenes, weights, grad=False)
    return FitResult(final_params, trace, final, initial if initial is not None else final)


class FittedRefiner:
    """Inference-time refiner from fitted logistic parameters (epsilon = 0)."""

    def __init__(self, params: RefinerParams, bank: MelBank):
        self.params = params
        self.bank = bank

    def __call__(self, spec: MultiSpec, field: np.ndarray) -> RefinerOutput:
        feats = refiner_features(spec, field, self.bank)
        p = self.params
        return RefinerOutput(sigmoid(feats @ p.mask_w + p.mask_b), sigmoid(feats @ p.noise_w + p.noise_b))


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------


@dataclass
class GradcheckDraw:
    index: int
    rel_error: float
    excluded: bool
    reason: str = ""


def random_training_scene(rng, n_bins: int = 12, n_frames: int = 6) -> TrainingScene:
    field = rng.standard_normal((n_bins, n_frames, 3))
    feats = rng.standard_normal((n_bins, n_frames, N_FEAT))
    feats[..., 4] = rng.uniform(0, 1, (n_bins, n_frames))
    noas = rng.integers(0, 3, n_frames)
    noas[0] = 2
    truth = np.stack([rng.uniform(-np.pi, np.pi, (n_frames, 2)), rng.uniform(-np.pi / 2, np.pi / 2, (n_frames, 2))], axis=-1)
    return make_training_scene(field, feats, truth, noas)


def finite_difference(params: RefinerParams, scenes, weights=LossWeights(), step: float = 1e-5):
    """Central differences; also reports whether any selector flipped inside the stencil."""
    theta = params.to_vector()
    base, _ = batch_loss(params, scenes, weights, grad=False)
    fd = np.empty_like(theta)
    flipped = False
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        lp, _ = batch_loss(RefinerParams.from_vector(theta + e), scenes, weights, grad=False)
        lm, _ = batch_loss(RefinerParams.from_vector(theta - e), scenes, weights, grad=False)
        fd[i] = (lp.total - lm.total) / (2 * step)
        flipped |= lp.selectors != base.selectors or lm.selectors != base.selectors
    return fd, flipped


def _assignment_invariant(pred, truth) -> bool:
    """True when both assignments have identical local slopes (no kink between them)."""

    def slopes(pairs):
        out = []
        for i, j in pairs:
            _, inner = _dphi_parts(np.asarray(pred[i, 0] - truth[j, 0]))
            out += [np.sign(inner), np.sign(pred[i, 1] - truth[j, 1])]
        return out

    return slopes([(0, 0), (1, 1)]) == slopes([(0, 1), (1, 0)])


def tie_margin(params: RefinerParams, scene: TrainingScene) -> float:
    """Smallest distance of any active selector from its switching point."""
    parts, _ = scene_loss(params, scene, grad=False)
    S = np.empty((scene.field.shape[1], 2, 3))
    m1 = sigmoid(scene.feats @ params.mask_w + params.mask_b)
    m1[:, scene.noas == 1] = 1.0
    g = 1.0 - sigmoid(scene.feats @ params.noise_w + params.noise_b)
    S[:, 0] = kernels.frame_sums(scene.field, np.ascontiguousarray(m1 * g))
    S[:, 1] = kernels.frame_sums(scene.field, np.ascontiguousarray((1 - m1) * g))
    az, el, _ = iv_to_doa(S)
    pred = np.stack([az, el], axis=-1)
    margins = [np.inf]
    for t, n in enumerate(scene.noas):
        if n == 0:
            continue
        pairs = [(0, 0)] if n == 1 else [(0, 0), (1, 1), (0, 1), (1, 0)]
        for i, j in pairs:
            d = pred[t, i, 0] - scene.truth[t, j, 0]
            dphi, _ = _dphi_parts(np.asarray(d))
            margins += [abs(pred[t, i, 1] - scene.truth[t, j, 1]), float(dphi), abs(np.pi - float(dphi))]
        if n == 2 and not _assignment_invariant(pred[t], scene.truth[t]):
            s = _pair_loss(pred[t, 0], scene.truth[t, 0]) + _pair_loss(pred[t, 1], scene.truth[t, 1])
            w = _pair_loss(pred[t, 0], scene.truth[t, 1]) + _pair_loss(pred[t, 1], scene.truth[t, 0])
            margins.append(abs(float(s - w)))
    return float(min(margins))


def gradient_check(seed: int = 0, n_draws: int = 100, step: float = 1e-5, tie_tol: float = 1e-6, corrupt: bool = False, weights: LossWeights = LossWeights()) -> List[GradcheckDraw]:
    """Compare analytic and central-difference gradients over random (params, scene) draws.

    A draw is excluded as a tie when any min/abs selector lies within
    ``tie_tol`` of switching, or flips inside the difference stencil.
    """
    rng = np.random.default_rng(seed)
    draws = []
    for i in range(n_draws):
        scene = random_training_scene(rng)
        params = RefinerParams.from_vector(0.5 * rng.standard_normal(RefinerParams.SIZE))
        _, g = batch_loss(params, [scene], weights)
        if corrupt:
            g = g * 1.01 + 1e-3
        fd, flipped = finite_difference(params, [scene], weights, step)
        denom = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        err = float(np.linalg.norm(g - fd) / denom)
        margin = tie_margin(params, scene)
        excluded = flipped or margin < tie_tol
        reason = "selector flip in stencil" if flipped else (f"tie margin {margin:.2e}" if excluded else "")
        draws.append(GradcheckDraw(i, err, excluded, reason))
    return draws
