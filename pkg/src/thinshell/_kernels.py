"""Hot loops with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and ``THINSHELL_NUMBA`` is
not set to ``0``. ``THINSHELL_THREADS`` caps the numba thread pool. Both
paths must agree to rounding; ``tests/test_kernels.py`` checks that.
"""
from __future__ import annotations

import os

import numpy as np

FD6 = np.array([-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60])
HALF = 3  # stencil half width

_flag = os.environ.get("THINSHELL_NUMBA", "1").strip().lower()
USE_NUMBA = _flag not in ("0", "false", "no", "off")

try:  # pragma: no cover - exercised implicitly
    import numba
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # avoids a noisy TBB version warning on some installs
        numba.config.THREADING_LAYER = "workqueue"

    _threads = os.environ.get("THINSHELL_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    USE_NUMBA = False


def backend() -> str:
    return "numba" if (USE_NUMBA and HAVE_NUMBA) else "numpy"


# ---------------------------------------------------------------------------
# 6th-order centred derivative along axis 0 of an (Ns, Nt, K) array.
#
# mode 0: periodic in s.
# mode 1: reflection across both ends (midpoint grid through poles); the
#         ghost value at -s is the value at s on the opposite meridian
#         (theta + pi), times ``parity``.
# ---------------------------------------------------------------------------

def _ds_numpy(f: np.ndarray, h: float, mode: int, parity: float) -> np.ndarray:
    ns = f.shape[0]
    if mode == 1:
        half = f.shape[1] // 2
        lo = parity * np.roll(f[HALF - 1::-1], half, axis=1)
        hi = parity * np.roll(f[:-HALF - 1:-1], half, axis=1)
    else:
        lo = f[-HALF:]
        hi = f[:HALF]
    fp = np.concatenate([lo, f, hi], axis=0)
    out = FD6[0] * fp[0:ns]
    for k in range(1, 2 * HALF + 1):
        c = FD6[k]
        if c != 0.0:
            out = out + c * fp[k:k + ns]
    return out / h


if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _ds_numba(f, h, mode, parity, coef):  # pragma: no cover - compiled
        ns, nt, nk = f.shape
        out = np.empty_like(f)
        half_t = nt // 2
        for j in prange(ns):
            for t in range(nt):
                for k in range(nk):
                    acc = 0.0
                    for o in range(-3, 4):
                        c = coef[o + 3]
                        if c == 0.0:
                            continue
                        jj = j + o
                        tt = t
                        sg = 1.0
                        if mode == 1:
                            if jj < 0:
                                jj = -1 - jj
                                tt = (t + half_t) % nt
                                sg = parity
                            elif jj >= ns:
                                jj = 2 * ns - 1 - jj
                                tt = (t + half_t) % nt
                                sg = parity
                        else:
                            jj = jj % ns
                        acc += c * sg * f[jj, tt, k]
                    out[j, t, k] = acc / h
        return out

    @njit(cache=True, parallel=True)
    def _solve3_numba(a, b):  # pragma: no cover - compiled
        n = a.shape[0]
        x = np.empty_like(b)
        dets = np.empty(n)
        for i in prange(n):
            m00 = a[i, 0, 0]; m01 = a[i, 0, 1]; m02 = a[i, 0, 2]
            m10 = a[i, 1, 0]; m11 = a[i, 1, 1]; m12 = a[i, 1, 2]
            m20 = a[i, 2, 0]; m21 = a[i, 2, 1]; m22 = a[i, 2, 2]
            c00 = m11 * m22 - m12 * m21
            c01 = m12 * m20 - m10 * m22
            c02 = m10 * m21 - m11 * m20
            det = m00 * c00 + m01 * c01 + m02 * c02
            dets[i] = det
            inv = 1.0 / det if det != 0.0 else 0.0
            b0 = b[i, 0]; b1 = b[i, 1]; b2 = b[i, 2]
            # x = adj(A) b / det
            x[i, 0] = (c00 * b0 + (m02 * m21 - m01 * m22) * b1 + (m01 * m12 - m02 * m11) * b2) * inv
            x[i, 1] = (c01 * b0 + (m00 * m22 - m02 * m20) * b1 + (m02 * m10 - m00 * m12) * b2) * inv
            x[i, 2] = (c02 * b0 + (m01 * m20 - m00 * m21) * b1 + (m00 * m11 - m01 * m10) * b2) * inv
        return x, dets

    @njit(cache=True, parallel=True)
    def _det3_numba(a):  # pragma: no cover - compiled
        n = a.shape[0]
        d = np.empty(n)
        for i in prange(n):
            d[i] = (a[i, 0, 0] * (a[i, 1, 1] * a[i, 2, 2] - a[i, 1, 2] * a[i, 2, 1])
                    - a[i, 0, 1] * (a[i, 1, 0] * a[i, 2, 2] - a[i, 1, 2] * a[i, 2, 0])
                    + a[i, 0, 2] * (a[i, 1, 0] * a[i, 2, 1] - a[i, 1, 1] * a[i, 2, 0]))
        return d


def ds_fd6(f: np.ndarray, h: float, mode: int, parity: float = 1.0,
           use_numba: bool | None = None) -> np.ndarray:
    """Centred 6th-order derivative of ``f`` along axis 0.

    ``f`` has shape ``(Ns, Nt, ...)``; trailing axes are carried along.
    """
    f = np.asarray(f, dtype=float)
    shape = f.shape
    f3 = f.reshape(shape[0], shape[1], -1)
    if use_numba is None:
        use_numba = USE_NUMBA and HAVE_NUMBA
    if use_numba:
        out = _ds_numba(np.ascontiguousarray(f3), float(h), int(mode), float(parity), FD6)
    else:
        out = _ds_numpy(f3, h, mode, parity)
    return out.reshape(shape)


def solve3(a: np.ndarray, b: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Solve ``a[..., :, :] x = b[..., :]`` for stacks of 3x3 systems."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lead = b.shape[:-1]
    a = np.broadcast_to(a, lead + (3, 3))
    if use_numba is None:
        use_numba = USE_NUMBA and HAVE_NUMBA
    if use_numba:
        x, dets = _solve3_numba(np.ascontiguousarray(a.reshape(-1, 3, 3)),
                                np.ascontiguousarray(b.reshape(-1, 3)))
        if np.any(dets == 0.0):
            raise np.linalg.LinAlgError("singular 3x3 system")
        return x.reshape(lead + (3,))
    return np.linalg.solve(a, b[..., None])[..., 0]


def det3(a: np.ndarray, use_numba: bool | None = None) -> np.ndarray:
    """Determinants of a stack of 3x3 matrices."""
    a = np.asarray(a, dtype=float)
    lead = a.shape[:-2]
    if use_numba is None:
        use_numba = USE_NUMBA and HAVE_NUMBA
    if use_numba:
        return _det3_numba(np.ascontiguousarray(a.reshape(-1, 3, 3))).reshape(lead)
    return np.linalg.det(a)
