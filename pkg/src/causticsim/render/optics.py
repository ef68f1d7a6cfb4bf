"""Dielectric interface optics shared by camera paths and photon paths."""

from __future__ import annotations

import math

import numpy as np
from numba import njit

JIT = dict(nogil=True, cache=True, error_model="numpy")


@njit(**JIT)
def nb_refract(dx, dy, dz, nx, ny, nz, eta):
    """Refract direction ``d`` through a surface with normal ``n``.

    ``eta`` is n_incident / n_transmitted.  The normal is flipped onto the
    incident side if needed.  Returns ``(ok, tx, ty, tz)``; ``ok`` is False
    under total internal reflection.
    """
    cos_i = -(dx * nx + dy * ny + dz * nz)
    if cos_i < 0.0:
        nx, ny, nz = -nx, -ny, -nz
        cos_i = -cos_i
    sin2_t = eta * eta * max(0.0, 1.0 - cos_i * cos_i)
    if sin2_t > 1.0:
        return False, 0.0, 0.0, 0.0
    cos_t = math.sqrt(1.0 - sin2_t)
    k = eta * cos_i - cos_t
    tx = eta * dx + k * nx
    ty = eta * dy + k * ny
    tz = eta * dz + k * nz
    inv = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz)
    return True, tx * inv, ty * inv, tz * inv


@njit(**JIT)
def nb_fresnel(cos_i, n1, n2):
    """Unpolarized Fresnel reflectance; 1.0 under total internal reflection."""
    if n1 == n2:
        return 0.0  # no interface; also avoids 0/0 at grazing incidence
    cos_i = min(1.0, max(0.0, cos_i))
    sin_t = n1 / n2 * math.sqrt(max(0.0, 1.0 - cos_i * cos_i))
    if sin_t >= 1.0:
        return 1.0
    cos_t = math.sqrt(max(0.0, 1.0 - sin_t * sin_t))
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    return min(1.0, 0.5 * (rs * rs + rp * rp))


def refract(dir_in, normal, eta_ratio: float) -> np.ndarray | None:
    """Transmitted unit direction, or ``None`` on total internal reflection.

    >>> refract((0.0, 0.0, -1.0), (0.0, 0.0, 1.0), 1 / 1.5)
    array([ 0.,  0., -1.])
    """
    if not eta_ratio > 0.0:
        raise ValueError("eta_ratio must be positive")
    d = np.asarray(dir_in, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    ok, tx, ty, tz = nb_refract(d[0], d[1], d[2], n[0], n[1], n[2], float(eta_ratio))
    if not ok:
        return None
    return np.array([tx, ty, tz])


def fresnel_reflectance(cos_theta_i: float, n1: float, n2: float) -> float:
    if not (n1 > 0.0 and n2 > 0.0):
        raise ValueError("refractive indices must be positive")
    return float(nb_fresnel(float(cos_theta_i), float(n1), float(n2)))
