"""Hot inner loops, each with a numba and a pure-numpy implementation.

The module-level names (``jacobi_eigh_kernel``, ``frame_sums`` ...) are bound to the
numba versions unless ``IVDOA_DISABLE_NUMBA`` is set; both variants stay
importable under ``*_nb`` / ``*_np`` so tests and the benchmark can compare
them directly.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Hermitian eigendecomposition (cyclic complex Jacobi)
# ---------------------------------------------------------------------------


def _rotation(app, aqq, apq):
    # Returns (c, s, phase) zeroing apq; phase = apq / |apq|.
    mag = abs(apq)
    phase = apq / mag
    theta = (aqq - app) / (2.0 * mag)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    elif theta == 0.0:
        t = 1.0
    else:
        t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    return c, t * c, phase


_rotation_nb = njit(_rotation)


@njit
def _jacobi_eigh_nb(a, tol, max_sweeps):
    n = a.shape[0]
    A = a.copy()
    V = np.eye(n, dtype=np.complex128)
    scale = np.sqrt(np.sum(np.abs(A) ** 2))
    sweeps = 0
    if scale > 0.0:
        for sweeps in range(1, max_sweeps + 1):
            off = 0.0
            for p in range(n):
                for q in range(n):
                    if p != q:
                        off += abs(A[p, q]) ** 2
            if np.sqrt(off) <= tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    if abs(A[p, q]) == 0.0:
                        continue
                    c, s, ph = _rotation_nb(A[p, p].real, A[q, q].real, A[p, q])
                    uqp = -s * np.conj(ph)
                    uqq = c * np.conj(ph)
                    for k in range(n):
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = akp * c + akq * uqp
                        A[k, q] = akp * s + akq * uqq
                    for k in range(n):
                        apk = A[p, k]
                        aqk = A[q, k]
                        A[p, k] = c * apk + np.conj(uqp) * aqk
                        A[q, k] = s * apk + np.conj(uqq) * aqk
                    for k in range(n):
                        vkp = V[k, p]
                        vkq = V[k, q]
                        V[k, p] = vkp * c + vkq * uqp
                        V[k, q] = vkp * s + vkq * uqq
                    A[p, q] = 0.0
                    A[q, p] = 0.0
                    A[p, p] = A[p, p].real
                    A[q, q] = A[q, q].real
    w = np.empty(n)
    for i in range(n):
        w[i] = A[i, i].real
    order = np.argsort(-w)
    return w[order], V[:, order], sweeps


def _jacobi_eigh_np(a, tol, max_sweeps):
    n = a.shape[0]
    A = np.array(a, dtype=np.complex128)
    V = np.eye(n, dtype=np.complex128)
    scale = np.linalg.norm(A)
    sweeps = 0
    if scale > 0.0:
        offmask = ~np.eye(n, dtype=bool)
        for sweeps in range(1, max_sweeps + 1):
            if np.linalg.norm(A[offmask]) <= tol * scale:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    if A[p, q] == 0.0:
                        continue
                    c, s, ph = _rotation(A[p, p].real, A[q, q].real, A[p, q])
                    u = np.array([[c, s], [-s * np.conj(ph), c * np.conj(ph)]])
                    cols = [p, q]
                    A[:, cols] = A[:, cols] @ u
                    A[cols, :] = u.conj().T @ A[cols, :]
                    V[:, cols] = V[:, cols] @ u
                    A[p, q] = A[q, p] = 0.0
                    A[p, p] = A[p, p].real
                    A[q, q] = A[q, q].real
    w = np.diag(A).real.copy()
    order = np.argsort(-w)
    return w[order], V[:, order], sweeps


# ---------------------------------------------------------------------------
# Per-bin field kernels
# ---------------------------------------------------------------------------


@njit
def _intensity_nb(data):
    _, F, T = data.shape
    out = np.empty((F, T, 3))
    for f in range(F):
        for t in range(T):
            w = data[0, f, t]
            wr = w.real
            wi = w.imag
            for c in range(3):
                v = data[c + 1, f, t]
                out[f, t, c] = wr * v.real + wi * v.imag
    return out


def _intensity_np(data):
    return np.real(np.conj(data[0])[None] * data[1:4]).transpose(1, 2, 0).copy()


@njit
def _frame_sums_nb(field, weights):
    F, T, C = field.shape
    out = np.zeros((T, C))
    for f in range(F):
        for t in range(T):
            g = weights[f, t]
            if g != 0.0:
                for c in range(C):
                    out[t, c] += g * field[f, t, c]
    return out


def _frame_sums_np(field, weights):
    return np.einsum("ftc,ft->tc", field, weights)


@njit
def _angle_mask_nb(field, ref_az):
    F, T, _ = field.shape
    out = np.empty((F, T))
    cr = np.cos(ref_az)
    sr = np.sin(ref_az)
    # frames innermost to follow the (bins, frames, 3) memory layout
    for f in range(F):
        for t in range(T):
            ix = field[f, t, 0]
            iy = field[f, t, 1]
            ang = np.arctan2(-sr[t] * ix + cr[t] * iy, cr[t] * ix + sr[t] * iy)
            out[f, t] = 1.0 / (1.0 + np.exp(-ang))
    return out


def _angle_mask_np(field, ref_az):
    cr = np.cos(ref_az)[None, :]
    sr = np.sin(ref_az)[None, :]
    ix = field[..., 0]
    iy = field[..., 1]
    ang = np.arctan2(-sr * ix + cr * iy, cr * ix + sr * iy)
    return 1.0 / (1.0 + np.exp(-ang))


# ---------------------------------------------------------------------------
# MUSIC grid scan
# ---------------------------------------------------------------------------


@njit
def _music_denominators_nb(proj, steer):
    G, n = steer.shape
    out = np.empty(G)
    for g in range(G):
        acc = 0.0
        for i in range(n):
            ai = steer[g, i]
            for j in range(n):
                acc += ai * proj[i, j].real * steer[g, j]
        out[g] = acc
    return out


def _music_denominators_np(proj, steer):
    # steering vectors are real, so only Re(P) contributes to a^T P a.
    return np.einsum("gi,ij,gj->g", steer, proj.real, steer)


# ---------------------------------------------------------------------------
# NOAS majority smoothing
# ---------------------------------------------------------------------------


@njit
def _majority_smooth_nb(x, window):
    T = x.shape[0]
    half = window // 2
    out = np.empty(T, dtype=np.int64)
    if T == 0:
        return out
    vmax = 0
    for t in range(T):
        if x[t] > vmax:
            vmax = x[t]
    counts = np.zeros(vmax + 1, dtype=np.int64)
    for t in range(T):
        counts[:] = 0
        lo = max(0, t - half)
        hi = min(T, t + half + 1)
        for k in range(lo, hi):
            counts[x[k]] += 1
        best = 0
        for v in range(vmax + 1):
            if counts[v] > counts[best]:
                best = v
        out[t] = best
    return out


def _majority_smooth_np(x, window):
    x = np.asarray(x, dtype=np.int64)
    T = x.shape[0]
    if T == 0:
        return np.empty(0, dtype=np.int64)
    half = window // 2
    values = np.arange(x.max() + 1)
    onehot = (x[None, :] == values[:, None]).astype(np.int64)
    csum = np.concatenate([np.zeros((len(values), 1), np.int64), np.cumsum(onehot, axis=1)], axis=1)
    t = np.arange(T)
    lo = np.maximum(0, t - half)
    hi = np.minimum(T, t + half + 1)
    counts = csum[:, hi] - csum[:, lo]
    # argmax returns the first maximum, i.e. the smaller count on ties
    return values[np.argmax(counts, axis=0)]


# ---------------------------------------------------------------------------
# Active bindings
# ---------------------------------------------------------------------------

if USE_NUMBA:
    jacobi_eigh_kernel = _jacobi_eigh_nb
    intensity_kernel = _intensity_nb
    frame_sums = _frame_sums_nb
    # scalar atan2/exp in compiled loops loses to numpy's vectorized ufuncs here
    angle_mask_kernel = _angle_mask_np
    music_denominators = _music_denominators_nb
    majority_smooth = _majority_smooth_nb
else:
    jacobi_eigh_kernel = _jacobi_eigh_np
    intensity_kernel = _intensity_np
    frame_sums = _frame_sums_np
    angle_mask_kernel = _angle_mask_np
    music_denominators = _music_denominators_np
    majority_smooth = _majority_smooth_np

IMPLEMENTATIONS = {
    "jacobi_eigh": (_jacobi_eigh_nb, _jacobi_eigh_np),
    "intensity": (_intensity_nb, _intensity_np),
    "frame_sums": (_frame_sums_nb, _frame_sums_np),
    "angle_mask": (_angle_mask_nb, _angle_mask_np),
    "music_denominators": (_music_denominators_nb, _music_denominators_np),
    "majority_smooth": (_majority_smooth_nb, _majority_smooth_np),
}
