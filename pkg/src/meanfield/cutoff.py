"""Radial cutoff functions.

``chi`` is the C^2 polynomial bump used by the construction: 1 on [0, 1],
0 on [2, inf), joined by a quintic smoothstep.  ``smooth_step`` is a C^inf
variant used only to split integrals into pieces; it never enters the
analysis.
"""

import numpy as np


def chi(s):
    s = np.asarray(s, dtype=float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t**2)


def chi_d1(s):
    s = np.asarray(s, dtype=float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    return -30.0 * t**2 * (1.0 - t) ** 2


def chi_d2(s):
    s = np.asarray(s, dtype=float)
    t = np.clip(s - 1.0, 0.0, 1.0)
    return -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def radial_cutoff(y, scale):
    """chi(|y|/scale) together with its Laplacian and the radial derivative.

    ``y`` is complex.  Returns (value, d/dr value, Laplacian) in the flat
    metric of the y-plane.
    """
    r = np.abs(y)
    s = r / scale
    c0 = chi(s)
    c1 = chi_d1(s) / scale
    c2 = chi_d2(s) / scale**2
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = np.where(r > 0, c2 + c1 / np.where(r > 0, r, 1.0), 0.0)
    return c0, c1, lap


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(s):
    """C^inf function equal to 1 on [0, 1] and 0 on [2, inf)."""
    s = np.asarray(s, dtype=float)
    a = _psi(2.0 - s)
    b = _psi(s - 1.0)
    return a / (a + b)
