"""Mie-series reference solution for a perfectly conducting sphere.

The surface-current formulas use the Condon-Shortley phase for the
associated Legendre functions; with it the lit-side current reduces to the
physical-optics value ``2 n x H_inc`` at large ``ka``.  The far-field
amplitude functions use the phase-free angular functions ``pi_n`` and
``tau_n``.

The incident wave travels along ``+z`` with polarisation ``+x``:
``E = x exp(-j k z)``.  Spherical angles are the usual ones: ``theta`` from
``+z`` and ``phi`` from ``+x``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .assembly import EPS0, MU0
from .errors import DomainError

__all__ = [
    "MieSeries",
    "spherical_jn",
    "spherical_yn",
    "spherical_hankel2",
    "riccati_hankel2",
    "assoc_legendre_1",
    "mie_surface_current",
    "mie_current_cartesian",
    "mie_current_divergence",
    "mie_rcs",
    "mie_bistatic_rcs",
    "mie_coefficients",
    "default_terms",
]

ETA0 = math.sqrt(MU0 / EPS0)


def default_terms(ka: float, tol: float = 1e-12) -> int:
    """At least ``ceil(ka) + 15`` terms, more until the last term is below ``tol``.

    Beyond ``n ~ ka`` the Riccati-Hankel functions grow superexponentially,
    so the size of ``n^2 / |xi_n'|`` relative to the leading term bounds the
    tail.
    """
    n = int(math.ceil(ka)) + 15
    while True:
        _, dH = riccati_hankel2(n, ka)
        lead = np.max(np.abs(1.0 / dH[1: int(math.ceil(ka)) + 2]))
        if n * n / abs(dH[n]) < tol * lead or n > 10 * ka + 200:
            return n
        n += 5


# -- spherical Bessel functions -------------------------------------------------

def spherical_jn(n_max: int, x: float) -> np.ndarray:
    """``j_0 .. j_{n_max}`` at ``x > 0`` by downward (Miller) recurrence."""
    x = float(x)
    if x <= 0:
        raise DomainError("spherical Bessel functions need x > 0")
    start = n_max + 20 + int(x) + int(2 * math.sqrt(x))
    vals = np.zeros(start + 2)
    vals[start] = 1e-280
    for n in range(start, 0, -1):
        vals[n - 1] = (2 * n + 1) / x * vals[n] - vals[n + 1]
        if abs(vals[n - 1]) > 1e250:
            vals[n - 1:] *= 1e-250
    j0 = math.sin(x) / x
    j1 = math.sin(x) / x ** 2 - math.cos(x) / x
    scale = j0 / vals[0] if abs(j0) >= abs(j1) else j1 / vals[1]
    return vals[: n_max + 1] * scale


def spherical_yn(n_max: int, x: float) -> np.ndarray:
    """``y_0 .. y_{n_max}`` by upward recurrence (stable for ``y_n``)."""
    x = float(x)
    if x <= 0:
        raise DomainError("spherical Bessel functions need x > 0")
    y = np.empty(max(n_max + 1, 2))
    y[0] = -math.cos(x) / x
    y[1] = -math.cos(x) / x ** 2 - math.sin(x) / x
    for n in range(1, n_max):
        y[n + 1] = (2 * n + 1) / x * y[n] - y[n - 1]
    return y[: n_max + 1]


def spherical_hankel2(n_max: int, x: float) -> np.ndarray:
    """``h_n^(2)(x) = j_n(x) - j y_n(x)`` for ``n = 0 .. n_max``."""
    return spherical_jn(n_max, x) - 1j * spherical_yn(n_max, x)


def riccati_hankel2(n_max: int, x: float):
    """``x h_n(x)`` and its derivative ``(n+1) h_n(x) - x h_{n+1}(x)``."""
    h = spherical_hankel2(n_max + 1, x)
    n = np.arange(n_max + 1)
    return x * h[:-1], (n + 1) * h[:-1] - x * h[1:]


# -- associated Legendre ----------------------------------------------------------

def assoc_legendre_1(n_max: int, cos_theta, condon_shortley: bool = False):
    """Order-one associated Legendre data for ``n = 0 .. n_max``.

    Returns ``(P, P_over_sin, dP_dtheta)`` each of shape ``(n_max+1, M)``.
    The quotient and derivative are computed by recurrences that stay finite
    at the poles.  Without the Condon-Shortley phase ``P_1^1 = sin theta``.
    """
    mu = np.atleast_1d(np.asarray(cos_theta, dtype=float))
    if np.any(np.abs(mu) > 1 + 1e-14):
        raise DomainError("cos(theta) must lie in [-1, 1]")
    mu = np.clip(mu, -1.0, 1.0)
    sin = np.sqrt(1 - mu * mu)
    pi_n = np.zeros((n_max + 1, mu.size))
    tau_n = np.zeros_like(pi_n)
    if n_max >= 1:
        pi_n[1] = 1.0
    for n in range(2, n_max + 1):
        pi_n[n] = (2 * n - 1) / (n - 1) * mu * pi_n[n - 1] - n / (n - 1) * pi_n[n - 2]
    for n in range(1, n_max + 1):
        tau_n[n] = n * mu * pi_n[n] - (n + 1) * pi_n[n - 1]
    sign = -1.0 if condon_shortley else 1.0
    return sign * pi_n * sin, sign * pi_n, sign * tau_n


# -- series -----------------------------------------------------------------------

@dataclass(frozen=True)
class MieSeries:
    """Truncated Mie series for a PEC sphere of radius ``radius``.

    ``n_terms`` defaults to :func:`default_terms`, at least ``ceil(ka) + 15``.
    """

    wavenumber: float
    radius: float = 1.0
    n_terms: int | None = None
    eta: float = ETA0

    def __post_init__(self):
        if not self.wavenumber > 0 or not self.radius > 0:
            raise DomainError("wavenumber and radius must be positive")
        if self.n_terms is None:
            object.__setattr__(self, "n_terms", default_terms(self.ka))

    @property
    def ka(self) -> float:
        return self.wavenumber * self.radius

    @property
    def current_coefficients(self):
        """``a_n = j^-n (2n+1) / (n (n+1))`` for ``n = 1 .. N``."""
        n = np.arange(1, self.n_terms + 1)
        return (1j) ** (-n) * (2 * n + 1) / (n * (n + 1))


def _current_sums(series: MieSeries, theta):
    N = series.n_terms
    x = series.ka
    H, dH = riccati_hankel2(N, x)
    H, dH = H[1:], dH[1:]
    _, A, B = assoc_legendre_1(N, np.cos(theta), condon_shortley=True)
    A, B = A[1:], B[1:]
    a = series.current_coefficients[:, None]
    s_theta = (a * (-B / dH[:, None] + 1j * A / H[:, None])).sum(0)
    s_phi = (a * (A / dH[:, None] - 1j * B / H[:, None])).sum(0)
    last = np.abs(a[-1] / dH[-1]) * (np.abs(A[-1]) + np.abs(B[-1]))
    tail = float(np.max(last / np.maximum(np.abs(s_theta) + np.abs(s_phi), 1e-300)))
    if tail > 1e-10:
        warnings.warn(f"Mie series may be under-resolved: tail estimate {tail:.1e}", RuntimeWarning)
    return s_theta, s_phi


def mie_surface_current(series: MieSeries, theta, phi) -> np.ndarray:
    """Surface current ``(J_r, J_theta, J_phi)`` at spherical angles."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    C = 1j / (series.eta * series.ka)
    st, sp_ = _current_sums(series, theta)
    out = np.zeros((theta.size, 3), dtype=complex)
    out[:, 1] = C * np.cos(phi) * st
    out[:, 2] = C * np.sin(phi) * sp_
    return out


def _angles(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    theta = np.arccos(np.clip(x[:, 2] / r, -1.0, 1.0))
    phi = np.arctan2(x[:, 1], x[:, 0])
    return r, theta, phi


def mie_current_cartesian(series: MieSeries, x) -> np.ndarray:
    """Surface current as Cartesian vectors at points on the sphere.

    Points are projected radially onto the sphere to fix the angles.
    """
    _, theta, phi = _angles(x)
    J = mie_surface_current(series, theta, phi)
    ct, stt = np.cos(theta), np.sin(theta)
    cp, sp_ = np.cos(phi), np.sin(phi)
    e_theta = np.stack([ct * cp, ct * sp_, -stt], axis=1)
    e_phi = np.stack([-sp_, cp, np.zeros_like(cp)], axis=1)
    return J[:, 1:2] * e_theta + J[:, 2:3] * e_phi


def mie_current_divergence(series: MieSeries, x) -> np.ndarray:
    """Surface divergence of the Mie current at points on the sphere."""
    _, theta, phi = _angles(x)
    N = series.n_terms
    _, dH = riccati_hankel2(N, series.ka)
    P, _, _ = assoc_legendre_1(N, np.cos(theta), condon_shortley=True)
    n = np.arange(1, N + 1)
    coef = (1j) ** (-n) * (2 * n + 1) / dH[1:]
    C = 1j / (series.eta * series.ka)
    return C * np.cos(phi) / series.radius * (coef[:, None] * P[1:]).sum(0)


# -- far field --------------------------------------------------------------------

def _riccati_bessel(n_max: int, x: float):
    """``psi_n = x j_n``, ``xi_n = x h_n^(2)`` and derivatives, n = 1..n_max."""
    j = spherical_jn(n_max + 1, x)
    y = spherical_yn(n_max + 1, x)
    n = np.arange(1, n_max + 1)
    psi = x * j[1:-1]
    dpsi = x * j[:-2] - n * j[1:-1]
    chi = x * y[1:-1]
    dchi = x * y[:-2] - n * y[1:-1]
    return psi, dpsi, psi - 1j * chi, dpsi - 1j * dchi


def mie_coefficients(series: MieSeries):
    """Scattering coefficients ``(a_n, b_n)`` of the PEC sphere, n = 1..N."""
    psi, dpsi, xi, dxi = _riccati_bessel(series.n_terms, series.ka)
    return dpsi / dxi, psi / xi


def mie_rcs(series: MieSeries, normalised: bool = True) -> float:
    """Monostatic (backscatter) RCS; divided by ``pi a^2`` when ``normalised``."""
    a, b = mie_coefficients(series)
    n = np.arange(1, series.n_terms + 1)
    s = np.sum((2 * n + 1) * (-1.0) ** n * (a - b))
    val = abs(s) ** 2 / series.ka ** 2
    return float(val if normalised else val * math.pi * series.radius ** 2)


def mie_bistatic_rcs(series: MieSeries, theta, phi, normalised: bool = True) -> np.ndarray:
    """Bistatic RCS at observation angles (``theta = pi`` is backscatter)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    a, b = mie_coefficients(series)
    N = series.n_terms
    _, pi_n, tau_n = assoc_legendre_1(N, np.cos(theta))
    n = np.arange(1, N + 1)[:, None]
    f = (2 * n + 1) / (n * (n + 1))
    S1 = (f * (a[:, None] * pi_n[1:] + b[:, None] * tau_n[1:])).sum(0)
    S2 = (f * (a[:, None] * tau_n[1:] + b[:, None] * pi_n[1:])).sum(0)
    sigma = 4 * (np.abs(S2) ** 2 * np.cos(phi) ** 2 + np.abs(S1) ** 2 * np.sin(phi) ** 2) / series.ka ** 2
    return sigma if normalised else sigma * math.pi * series.radius ** 2
