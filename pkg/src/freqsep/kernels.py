"""Hot loops: trapezoidal harmonic projection of a uniformly sampled record.

``project(x, t0, dt, omegas)`` returns ``(1/T) * trapz(x(t) * exp(-j*omega*t))``
for every omega, with ``t = t0 + n*dt`` and ``T = (len(x) - 1) * dt``.

Two implementations are kept side by side: a numba loop that walks each
frequency with a unit-modulus rotation (re-anchored every ``_ANCHOR`` samples
so roundoff cannot drift), and a blocked numpy matrix product. The module
level ``project`` is bound to one of them according to ``_accel.BACKEND``.
"""
import math

import numpy as np

from . import _accel

_ANCHOR = 128
_BLOCK_ELEMENTS = 1 << 21


@_accel.njit(cache=True)
def _project_loop(x, t0, dt, omegas):
    n = x.shape[0]
    scale = dt / ((n - 1) * dt)
    out = np.empty(omegas.shape[0], dtype=np.complex128)
    for k in range(omegas.shape[0]):
        w = omegas[k]
        step_re = math.cos(w * dt)
        step_im = -math.sin(w * dt)
        z_re = 1.0
        z_im = 0.0
        acc_re = 0.0
        acc_im = 0.0
        for i in range(n):
            if i % _ANCHOR == 0:
                phase = -w * (t0 + i * dt)
                z_re = math.cos(phase)
                z_im = math.sin(phase)
            v = x[i]
            if i == 0 or i == n - 1:
                v = 0.5 * v
            acc_re += v * z_re
            acc_im += v * z_im
            tmp = z_re * step_re - z_im * step_im
            z_im = z_re * step_im + z_im * step_re
            z_re = tmp
        out[k] = complex(acc_re * scale, acc_im * scale)
    return out


def project_numpy(x, t0, dt, omegas):
    """Blocked dense evaluation; memory bounded by ``_BLOCK_ELEMENTS`` complex entries."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    omegas = np.ascontiguousarray(omegas, dtype=np.float64)
    n = x.shape[0]
    weights = x.copy()
    weights[0] *= 0.5
    weights[-1] *= 0.5
    t = t0 + dt * np.arange(n)
    out = np.empty(omegas.shape[0], dtype=np.complex128)
    block = max(1, _BLOCK_ELEMENTS // n)
    for lo in range(0, omegas.shape[0], block):
        w = omegas[lo:lo + block]
        out[lo:lo + block] = np.exp(-1j * np.outer(w, t)) @ weights
    return out / (n - 1)


def project_jit(x, t0, dt, omegas):
    """Compiled loop (plain Python when numba is absent; only useful for tiny inputs then)."""
    return _project_loop(
        np.ascontiguousarray(x, dtype=np.float64),
        float(t0),
        float(dt),
        np.ascontiguousarray(omegas, dtype=np.float64),
    )


project = project_jit if _accel.USE_NUMBA else project_numpy
