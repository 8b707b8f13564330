"""Stokes/Mueller algebra, Fresnel coefficients and polarization reference frames.

Every function works on numpy arrays and broadcasts over leading axes: vectors
have shape ``(..., 3)``, Stokes vectors ``(..., 4)`` and Mueller matrices
``(..., 4, 4)``.

Frame convention: a Stokes vector is expressed in a frame ``(x, y, z)`` whose
``z`` axis is the propagation direction.  ``rotator(d)`` converts a Stokes
vector from a frame to the frame obtained by rotating it by ``d`` about ``z``,
so a change of frame from ``x_old`` to ``x_new`` is
``rotator(signed_angle(x_old, x_new, z))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# below this norm a cross product defining a frame axis is treated as degenerate
DEGENERATE_EPS = 1e-8


class TotalInternalReflection(ValueError):
    """Raised when Snell's law has no transmitted solution."""


@dataclass(frozen=True)
class ReferenceFrame:
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray


@dataclass(frozen=True)
class FresnelCoefficients:
    """Amplitude reflection coefficients for one (or an array of) incidences."""

    r_s: np.ndarray
    r_p: np.ndarray
    eta_i: float
    eta_t: float
    chi_i: np.ndarray
    chi_t: np.ndarray

    @property
    def reflectance(self) -> np.ndarray:
        return 0.5 * (self.r_s**2 + self.r_p**2)


def normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


# ---------------------------------------------------------------------------
# Fresnel


def snell_cos_t(eta_i, eta_t, cos_i):
    """Return ``(cos_t, tir)`` for the refracted angle; ``cos_t`` is 0 under TIR."""
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    sin_t2 = (eta_i / eta_t) ** 2 * (1.0 - cos_i**2)
    tir = sin_t2 > 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin_t2, 0.0, None))
    return cos_t, tir


def fresnel_amplitudes(eta_i, eta_t, cos_i):
    """Vectorized ``(r_s, r_p, cos_t, tir)``.

    Uses the index/cosine form, which stays finite at normal incidence.
    Under TIR both amplitudes are reported as magnitude one (``r_s=1, r_p=-1``
    is not meaningful for the real-valued model, so ``r_s = r_p = 1``).
    """
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    cos_t, tir = snell_cos_t(eta_i, eta_t, cos_i)
    ic, tc = eta_i * cos_i, eta_t * cos_t
    it, ti = eta_i * cos_t, eta_t * cos_i
    with np.errstate(invalid="ignore", divide="ignore"):
        r_s = (ic - tc) / (ic + tc)
        r_p = (it - ti) / (ti + it)
    r_s = np.where(tir, 1.0, r_s)
    r_p = np.where(tir, 1.0, r_p)
    return r_s, r_p, cos_t, tir


def fresnel_coefficients(eta_i: float, eta_t: float, cos_chi_i) -> FresnelCoefficients:
    if eta_i <= 0 or eta_t <= 0:
        raise ValueError("refractive indices must be positive")
    cos_chi_i = np.asarray(cos_chi_i, dtype=float)
    if np.any((cos_chi_i < 0) | (cos_chi_i > 1)):
        raise ValueError("cos_chi_i must lie in [0, 1]")
    r_s, r_p, cos_t, tir = fresnel_amplitudes(eta_i, eta_t, cos_chi_i)
    if np.any(tir):
        raise TotalInternalReflection(
            f"eta_i*sin(chi_i)/eta_t > 1 for eta_i={eta_i}, eta_t={eta_t}"
        )
    return FresnelCoefficients(
        r_s=r_s,
        r_p=r_p,
        eta_i=eta_i,
        eta_t=eta_t,
        chi_i=np.arccos(cos_chi_i),
        chi_t=np.arccos(cos_t),
    )


def fresnel_reflectance(eta_i, eta_t, cos_i):
    """Unpolarized reflectance ``F``; 1 under total internal reflection."""
    r_s, r_p, _, tir = fresnel_amplitudes(eta_i, eta_t, cos_i)
    return np.where(tir, 1.0, 0.5 * (r_s**2 + r_p**2))


def fresnel_term(eta_i, eta_t, v_i, v_t, n):
    """Energy split ``F`` written with ray directions and a normal.

    ``v_i`` and ``v_t`` are the incident and transmitted directions; only the
    magnitudes of their projections on ``n`` matter.
    """
    ci = np.abs(_dot(v_i, n))
    ct = np.abs(_dot(v_t, n))
    a = (eta_i * ci - eta_t * ct) / (eta_i * ci + eta_t * ct)
    b = (eta_t * ci - eta_i * ct) / (eta_t * ci + eta_i * ct)
    return 0.5 * a**2 + 0.5 * b**2


def transmission_amplitudes(eta_i, eta_t, cos_i):
    """``(t_s, t_p, cos_t, tir)`` amplitude transmission coefficients."""
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    cos_t, tir = snell_cos_t(eta_i, eta_t, cos_i)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_s = 2 * eta_i * cos_i / (eta_i * cos_i + eta_t * cos_t)
        t_p = 2 * eta_i * cos_i / (eta_t * cos_i + eta_i * cos_t)
    t_s = np.where(tir, 0.0, t_s)
    t_p = np.where(tir, 0.0, t_p)
    return t_s, t_p, cos_t, tir


# ---------------------------------------------------------------------------
# Mueller matrices


def _diattenuator(a, b, c):
    a, b, c = np.broadcast_arrays(a, b, c)
    m = np.zeros(a.shape + (4, 4))
    m[..., 0, 0] = a
    m[..., 1, 1] = a
    m[..., 0, 1] = b
    m[..., 1, 0] = b
    m[..., 2, 2] = c
    m[..., 3, 3] = c
    return m


def mueller_reflect(fc) -> np.ndarray:
    """Reflection Mueller matrix in the s/p frame (x axis = s direction).

    Accepts a :class:`FresnelCoefficients` or a ``(r_s, r_p)`` pair.
    """
    if isinstance(fc, FresnelCoefficients):
        r_s, r_p = fc.r_s, fc.r_p
    else:
        r_s, r_p = fc
    r_s = np.asarray(r_s, dtype=float)
    r_p = np.asarray(r_p, dtype=float)
    return _diattenuator(0.5 * (r_s**2 + r_p**2), 0.5 * (r_s**2 - r_p**2), r_s * r_p)


def mueller_transmit(eta_i, eta_t, cos_i) -> np.ndarray:
    """Transmission Mueller matrix (s/p frame); zero under TIR.

    Includes the beam-area factor ``eta_t cos_t / (eta_i cos_i)`` so that the
    unpolarized throughput ``m00`` equals ``1 - F``.
    """
    t_s, t_p, cos_t, tir = transmission_amplitudes(eta_i, eta_t, cos_i)
    cos_i = np.clip(np.asarray(cos_i, dtype=float), 0.0, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(tir | (cos_i <= 0), 0.0, eta_t * cos_t / (eta_i * cos_i))
    k = np.nan_to_num(k)
    return _diattenuator(
        0.5 * k * (t_s**2 + t_p**2), 0.5 * k * (t_s**2 - t_p**2), k * t_s * t_p
    )


def rotator(delta_theta) -> np.ndarray:
    d = np.asarray(delta_theta, dtype=float)
    c, s = np.cos(2 * d), np.sin(2 * d)
    m = np.zeros(d.shape + (4, 4))
    m[..., 0, 0] = 1.0
    m[..., 3, 3] = 1.0
    m[..., 1, 1] = c
    m[..., 1, 2] = s
    m[..., 2, 1] = -s
    m[..., 2, 2] = c
    return m


def apply(m: np.ndarray, s: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", m, s)


# ---------------------------------------------------------------------------
# Frames


def implicit_frame(z) -> ReferenceFrame:
    """Deterministic orthonormal frame around ``z``.

    Branchless orthonormal-basis construction.  For ``z = (0, 0, 1)`` the
    frame is the canonical basis.  The frame jumps when ``z`` crosses the
    plane ``z_z = 0`` from the negative side; continuity is not promised.
    """
    z = np.asarray(z, dtype=float)
    zx, zy, zz = z[..., 0], z[..., 1], z[..., 2]
    sign = np.copysign(1.0, zz)
    a = -1.0 / (sign + zz)
    b = zx * zy * a
    x = np.stack([1.0 + sign * zx * zx * a, sign * b, -sign * zx], axis=-1)
    y = np.stack([b, sign + zy * zy * a, -zy], axis=-1)
    return ReferenceFrame(x_axis=x, y_axis=y, z_axis=z)


def signed_angle(a, b, axis) -> np.ndarray:
    """Angle that rotates ``a`` onto ``b`` about ``axis`` (right-hand rule)."""
    return np.arctan2(_dot(axis, np.cross(a, b)), _dot(a, b))


def _frame_change(x_old, x_new, z, degenerate) -> np.ndarray:
    angle = np.where(degenerate, 0.0, signed_angle(x_old, x_new, z))
    return rotator(angle)


def frame_in(v_i, n_hat) -> np.ndarray:
    """``R_i``: implicit frame of ``v_i`` -> incidence frame with ``x = n x v_i``.

    ``v_i`` is the propagation direction of the light arriving at the surface.
    At normal incidence the incidence plane is undefined and the identity is
    returned.
    """
    v_i = np.asarray(v_i, dtype=float)
    s = np.cross(n_hat, v_i)
    degenerate = np.linalg.norm(s, axis=-1) < DEGENERATE_EPS
    return _frame_change(implicit_frame(v_i).x_axis, normalize(s), v_i, degenerate)


def frame_out(v_i, v_o) -> np.ndarray:
    """``R_o``: outgoing s/p frame (``x = v_o x v_i``) -> implicit frame of ``v_o``.

    For a mirror reflection about an outward normal ``n``, ``v_o x v_i`` is a
    positive multiple of ``n x v_i``, so the s axis is shared with ``frame_in``.
    """
    v_o = np.asarray(v_o, dtype=float)
    s = np.cross(v_o, v_i)
    degenerate = np.linalg.norm(s, axis=-1) < DEGENERATE_EPS
    return _frame_change(normalize(s), implicit_frame(v_o).x_axis, v_o, degenerate)


def camera_x_axis(v_o, camera_up) -> np.ndarray:
    """Pixel-frame x axis ``up x v_o`` for light travelling along ``v_o``."""
    return normalize(np.cross(camera_up, v_o))


def frame_camera(v_o, camera_up) -> np.ndarray:
    """``R_c``: implicit frame of ``v_o`` -> pixel frame with ``x = up x v_o``."""
    v_o = np.asarray(v_o, dtype=float)
    x = np.cross(camera_up, v_o)
    degenerate = np.linalg.norm(x, axis=-1) < DEGENERATE_EPS
    return _frame_change(implicit_frame(v_o).x_axis, normalize(x), v_o, degenerate)


def frame_between(x_old, x_new, z) -> np.ndarray:
    """Rotator between two arbitrary (possibly degenerate) x axes around ``z``."""
    degenerate = (np.linalg.norm(x_old, axis=-1) < DEGENERATE_EPS) | (
        np.linalg.norm(x_new, axis=-1) < DEGENERATE_EPS
    )
    return _frame_change(normalize(x_old), normalize(x_new), z, degenerate)


# ---------------------------------------------------------------------------
# Stokes parameters


def stokes_to_intensity(s) -> np.ndarray:
    return np.asarray(s, dtype=float)[..., 0]


def stokes_to_dolp(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    lin = np.hypot(s[..., 1], s[..., 2])
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(s[..., 0] > 0, lin / s[..., 0], 0.0)
    return rho


def aolp_defined(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return (s[..., 1] != 0) | (s[..., 2] != 0)


def wrap_angle(psi) -> np.ndarray:
    """Map angles onto the half-open AoLP range ``[0, pi)``."""
    psi = np.mod(psi, np.pi)
    return np.where(psi >= np.pi, 0.0, psi)


def stokes_to_aolp(s) -> np.ndarray:
    """AoLP in ``[0, pi)``; 0 where ``s1 = s2 = 0`` (see :func:`aolp_defined`)."""
    s = np.asarray(s, dtype=float)
    psi = wrap_angle(0.5 * np.arctan2(s[..., 2], s[..., 1]))
    return np.where(aolp_defined(s), psi, 0.0)


def aolp_distance(a, b) -> np.ndarray:
    """Distance between two AoLP values on the pi-periodic circle, in [0, pi/2]."""
    r = np.mod(np.asarray(a) - np.asarray(b), np.pi)
    return np.minimum(r, np.pi - r)


def is_realizable(s, rtol: float = 1e-9) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    pol = np.sqrt(s[..., 1] ** 2 + s[..., 2] ** 2 + s[..., 3] ** 2)
    return (s[..., 0] >= -rtol) & (pol <= s[..., 0] * (1 + rtol) + rtol)
