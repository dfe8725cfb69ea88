"""Spatial correlation of wideband signals in diffuse and anisotropic fields.

The closed-form model is a product of two unnormalized sinc factors, one set by
the bandwidth and one by the band center. The exact diffuse-field band average
(``rho_wideband_quadrature``) and the spherical-harmonic series for an arbitrary
directional gain (``rho_anisotropic``) are evaluated numerically and serve as
references for the closed forms.

Conventions
-----------
Frequencies are angular (rad/s) unless a name ends in ``_hz``. Spherical
harmonics are complex, orthonormal on the unit sphere and carry the
Condon-Shortley phase. Directional gains integrate to one over the sphere, so
the isotropic gain is ``1/(4*pi)`` and its only non-zero coefficient is
``beta_00 = 1/sqrt(4*pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidBandError, QuadratureError, TruncationError

SPEED_OF_SOUND = 343.0
BESSEL_MAX_ORDER = 100
SIMPSON_MAX_LEVEL = 20
SIMPSON_MIN_LEVEL = 4


@dataclass(frozen=True)
class BandSpec:
    omega_min: float
    omega_max: float

    def __post_init__(self):
        if not (math.isfinite(self.omega_min) and math.isfinite(self.omega_max)):
            raise InvalidBandError("band edges must be finite")
        if not 0.0 <= self.omega_min < self.omega_max:
            raise InvalidBandError(
                f"need 0 <= omega_min < omega_max, got ({self.omega_min}, {self.omega_max})")

    @classmethod
    def from_hz(cls, f_lo: float, f_hi: float) -> BandSpec:
        return cls(2.0 * math.pi * f_lo, 2.0 * math.pi * f_hi)

    @property
    def delta_omega(self) -> float:
        return self.omega_max - self.omega_min

    @property
    def omega_c(self) -> float:
        return 0.5 * (self.omega_min + self.omega_max)

    @property
    def f_lo(self) -> float:
        return self.omega_min / (2.0 * math.pi)

    @property
    def f_hi(self) -> float:
        return self.omega_max / (2.0 * math.pi)


# The band of the correlation experiments: 0.5 to 4.5 kHz.
REFERENCE_BAND = BandSpec.from_hz(500.0, 4500.0)


@dataclass(frozen=True)
class PhysicalConstants:
    c: float = SPEED_OF_SOUND

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("speed of sound must be positive")


AIR = PhysicalConstants()


def sinc(x):
    """Unnormalized sinc, ``sin(x)/x`` with ``sinc(0) = 1``."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def rho_narrowband(d, omega: float, k: PhysicalConstants = AIR):
    """Diffuse-field correlation of a single-frequency signal at separation ``d``."""
    return sinc(omega * np.asarray(d, dtype=float) / k.c)


def rho_wideband_closed(d, band: BandSpec, k: PhysicalConstants = AIR):
    """Closed-form wideband correlation: bandwidth sinc times center-frequency sinc."""
    d = np.asarray(d, dtype=float)
    return sinc(band.delta_omega * d / (2.0 * k.c)) * sinc(band.omega_c * d / k.c)


def second_order_term(d, band: BandSpec, k: PhysicalConstants = AIR):
    """The bracketed correction that the closed form drops, times the bandwidth sinc.

    Equal to ``rho_second_order - rho_wideband_closed``. Singular at ``d = 0``.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("second-order term is singular at d = 0")
    x = band.omega_c * d / k.c
    return (-2.0 * sinc(band.delta_omega * d / (2.0 * k.c)) * np.cos(x) / x**2
            * np.sin(band.delta_omega * d / (4.0 * k.c)) ** 2)


def rho_second_order(d, band: BandSpec, k: PhysicalConstants = AIR):
    """Two-term approximation of the band-averaged correlation (requires ``d > 0``)."""
    return rho_wideband_closed(d, band, k) + second_order_term(d, band, k)


# -- quadrature --------------------------------------------------------------

def adaptive_simpson(f: Callable, a: float, b: float, tol: float,
                     max_level: int = SIMPSON_MAX_LEVEL, min_level: int = SIMPSON_MIN_LEVEL):
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    ``f`` may return a scalar or an array (real or complex); the error test
    uses the largest component. No interval is accepted before ``min_level``
    bisections, which guards against oscillatory integrands whose coarse
    samples agree by accident. Raises :class:`QuadratureError` when an
    interval still fails the test after ``max_level`` bisections.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if a == b:
        return 0.0 * f(a)
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = 0.0
    # explicit stack: (a, b, fa, fm, fb, whole, tol, level)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a0, b0, fa0, fm0, fb0, s0, tol0, level = stack.pop()
        m = 0.5 * (a0 + b0)
        lm, rm = 0.5 * (a0 + m), 0.5 * (m + b0)
        flm, frm = f(lm), f(rm)
        h = (b0 - a0) / 12.0
        left = h * (fa0 + 4.0 * flm + fm0)
        right = h * (fm0 + 4.0 * frm + fb0)
        err = np.max(np.abs(left + right - s0))
        if level >= min_level and err <= 15.0 * tol0:
            total = total + left + right + (left + right - s0) / 15.0
        elif level >= max(max_level, min_level):
            raise QuadratureError(
                f"no convergence on [{a0:.6g}, {b0:.6g}] after {max_level} levels "
                f"(error estimate {err:.3g})")
        else:
            stack.append((m, b0, fm0, frm, fb0, right, 0.5 * tol0, level + 1))
            stack.append((a0, m, fa0, flm, fm0, left, 0.5 * tol0, level + 1))
    return total


def rho_wideband_quadrature(d: float, band: BandSpec, k: PhysicalConstants = AIR,
                            tol: float = 1e-10) -> float:
    """Exact diffuse-field correlation: the band average of ``sinc(omega d / c)``.

    Integrated on the normalized band coordinate ``u`` in ``[0, 1]`` so that
    ``tol`` is an absolute tolerance on the correlation itself.
    """
    if d < 0:
        raise ValueError("distance must be non-negative")
    if d == 0:
        return 1.0
    scale = d / k.c

    def integrand(u):
        return float(sinc((band.omega_min + u * band.delta_omega) * scale))

    return float(adaptive_simpson(integrand, 0.0, 1.0, tol))


# -- spherical Bessel functions ----------------------------------------------

def _check_order(n: int):
    if n < 0 or n > BESSEL_MAX_ORDER:
        raise ValueError(f"order must lie in [0, {BESSEL_MAX_ORDER}], got {n}")


def spherical_bessel_orders(N: int, x) -> np.ndarray:
    """``j_0 .. j_N`` at every ``x``; returns shape ``(N + 1,) + x.shape``.

    Miller's downward recurrence, normalized by a least-squares fit to the
    closed forms of ``j_0`` and ``j_1``. The downward direction is stable for
    every order, including the oscillatory region ``n < x``.
    """
    _check_order(N)
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    if np.any(flat < 0):
        raise ValueError("x must be non-negative")
    out = np.zeros((N + 1, flat.size))
    zero = flat == 0.0
    xs = np.where(zero, 1.0, flat)
    start = int(max(N, np.max(xs)) + 20 + math.sqrt(40.0 * max(N, np.max(xs), 1.0)))
    f_next = np.zeros_like(xs)
    f_cur = np.full_like(xs, 1e-300)
    for n in range(start, 0, -1):
        f_prev = (2 * n + 1) / xs * f_cur - f_next
        if n <= N:
            out[n] = f_cur
        f_next, f_cur = f_cur, f_prev
        big = np.abs(f_cur) > 1e150
        if np.any(big):
            f_cur[big] *= 1e-150
            f_next[big] *= 1e-150
            out[:, big] *= 1e-150
    out[0] = f_cur
    j0 = np.sin(xs) / xs
    j1 = np.sin(xs) / xs**2 - np.cos(xs) / xs
    f1 = out[1] if N >= 1 else f_next
    norm = np.hypot(out[0], f1)
    out *= ((out[0] / norm) * j0 + (f1 / norm) * j1) / norm
    out[:, zero] = 0.0
    out[0, zero] = 1.0
    return out.reshape((N + 1,) + x.shape)


def spherical_bessel_j(n: int, x):
    """Spherical Bessel function of the first kind ``j_n(x)`` for ``x >= 0``.

    Upward recurrence from ``j_0`` and ``j_1`` where ``x >= n``, Miller's
    downward recurrence elsewhere.
    """
    _check_order(n)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    if n == 0:
        return sinc(x)
    res = np.empty(x.shape)
    up = x >= n
    if np.any(up):
        xu = x[up]
        a, b = np.sin(xu) / xu, np.sin(xu) / xu**2 - np.cos(xu) / xu
        for order in range(1, n):
            a, b = b, (2 * order + 1) / xu * b - a
        res[up] = b
    if np.any(~up):
        res[~up] = spherical_bessel_orders(n, x[~up])[n]
    return res if res.ndim else float(res)


# -- spherical harmonics -----------------------------------------------------

def sh_index(n: int, m: int) -> int:
    """Flat index of ``(n, m)`` in ACN order, ``n**2 + n + m``."""
    return n * n + n + m


def _polar(dirs):
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(dirs, axis=1)
    cos_t = np.clip(dirs[:, 2] / r, -1.0, 1.0)
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    return cos_t, phi


def sh_matrix(N: int, dirs) -> np.ndarray:
    """All ``Y_nm`` up to order ``N`` at ``dirs``; shape ``(K, (N + 1)**2)``.

    Fully normalized associated Legendre functions by the standard three-term
    recurrence in ``n``; negative degrees from ``Y_n,-m = (-1)**m conj(Y_nm)``.
    """
    if N < 0:
        raise ValueError("order must be non-negative")
    x, phi = _polar(dirs)
    s = np.sqrt(np.maximum(0.0, 1.0 - x * x))
    K = x.size
    P = np.zeros((N + 1, N + 1, K))
    P[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
    for m in range(1, N + 1):
        P[m, m] = -math.sqrt((2 * m + 1) / (2.0 * m)) * s * P[m - 1, m - 1]
    for m in range(0, N):
        P[m + 1, m] = math.sqrt(2 * m + 3) * x * P[m, m]
    for m in range(0, N + 1):
        for n in range(m + 2, N + 1):
            a = math.sqrt((4.0 * n * n - 1.0) / (n * n - m * m))
            b = math.sqrt(((n - 1.0) ** 2 - m * m) / (4.0 * (n - 1.0) ** 2 - 1.0))
            P[n, m] = a * (x * P[n - 1, m] - b * P[n - 2, m])
    Y = np.empty((K, (N + 1) ** 2), dtype=complex)
    for m in range(0, N + 1):
        e = np.exp(1j * m * phi)
        for n in range(m, N + 1):
            y = P[n, m] * e
            Y[:, sh_index(n, m)] = y
            if m:
                Y[:, sh_index(n, -m)] = (-1) ** m * np.conj(y)
    return Y


def spherical_harmonic(n: int, m: int, direction) -> complex:
    """Complex orthonormal spherical harmonic ``Y_nm`` at a unit direction."""
    if n < 0 or abs(m) > n:
        raise ValueError(f"need |m| <= n, got n={n}, m={m}")
    direction = np.asarray(direction, dtype=float)
    single = direction.ndim == 1
    vals = sh_matrix(n, direction)[:, sh_index(n, m)]
    return complex(vals[0]) if single else vals


def sphere_quadrature(n_theta: int, n_phi: int | None = None):
    """Product Gauss-Legendre (in cos theta) by uniform azimuth grid.

    Returns ``(dirs, weights)`` with weights summing to ``4*pi``. Exact for
    band-limited functions of degree up to ``2*n_theta - 1`` in cos theta and
    azimuthal frequency below ``n_phi`` (default ``2*n_theta``).
    """
    n_phi = 2 * n_theta if n_phi is None else n_phi
    x, w = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1.0 - x * x)
    dirs = np.stack([
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel(),
        np.repeat(x, n_phi),
    ], axis=1)
    weights = np.repeat(w, n_phi) * (2.0 * np.pi / n_phi)
    return dirs, weights


# -- directional gain and its coefficients ----------------------------------

@dataclass(frozen=True)
class DirectionalGain:
    """Average power gain ``G`` as a function of propagation direction.

    Either a continuous rule ``func(dirs) -> gains`` or a finite set of
    ``atoms`` (directions and non-negative weights), the latter describing a
    field made of discrete plane waves.
    """

    func: Callable[[np.ndarray], np.ndarray] | None = None
    atoms: tuple[np.ndarray, np.ndarray] | None = None
    normalized: bool = True

    def __call__(self, dirs):
        if self.func is None:
            raise TypeError("a discrete gain has no pointwise values")
        return np.asarray(self.func(np.asarray(dirs, dtype=float).reshape(-1, 3)), dtype=float)

    def integral(self, n_theta: int = 96) -> float:
        if self.atoms is not None:
            return float(np.sum(self.atoms[1]))
        dirs, w = sphere_quadrature(n_theta)
        return float(np.sum(self(dirs) * w))

    @classmethod
    def isotropic(cls) -> DirectionalGain:
        return cls(lambda d: np.full(len(d), 1.0 / (4.0 * np.pi)))

    @classmethod
    def von_mises_fisher(cls, axis, kappa: float) -> DirectionalGain:
        """Normalized smooth cap around ``axis``; narrower as ``kappa`` grows."""
        mu = np.asarray(axis, dtype=float)
        mu = mu / np.linalg.norm(mu)
        # kappa / (4 pi sinh kappa) * exp(kappa cos) written to avoid overflow
        log_norm = math.log(kappa / (2.0 * math.pi)) - kappa - math.log1p(-math.exp(-2.0 * kappa))

        def g(d):
            return np.exp(log_norm + kappa * (d @ mu))

        return cls(g)

    @classmethod
    def plane_waves(cls, dirs, weights=None) -> DirectionalGain:
        dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        w = np.full(len(dirs), 1.0 / len(dirs)) if weights is None else np.asarray(weights, float)
        if np.any(w < 0):
            raise ValueError("plane-wave weights must be non-negative")
        return cls(atoms=(dirs, w))


@dataclass(frozen=True)
class ShCoefficients:
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).ravel()
        if c.size != (self.order + 1) ** 2:
            raise ValueError(f"expected {(self.order + 1) ** 2} coefficients, got {c.size}")
        object.__setattr__(self, "coeffs", c)

    def __getitem__(self, nm):
        n, m = nm
        return self.coeffs[sh_index(n, m)]

    def synthesize(self, dirs) -> np.ndarray:
        """``sum beta_nm Y_nm(dir)``; reconstructs ``G`` up to the truncation order."""
        return sh_matrix(self.order, dirs) @ self.coeffs


def beta_coefficients(gain: DirectionalGain, N: int, n_theta: int | None = None) -> ShCoefficients:
    """Coefficients ``beta_nm = integral of G(y) conj(Y_nm(y))`` over the sphere.

    Continuous gains use :func:`sphere_quadrature` with ``n_theta`` polar
    nodes (default ``N + 60``); discrete gains are summed exactly.
    """
    if N < 0:
        raise ValueError("order must be non-negative")
    total = gain.integral()
    if not gain.normalized or abs(total - 1.0) > 1e-6:
        raise ValueError(f"directional gain must integrate to 1, got {total:.9g}")
    if gain.atoms is not None:
        dirs, w = gain.atoms
        vals = w
    else:
        dirs, qw = sphere_quadrature(N + 60 if n_theta is None else n_theta)
        vals = gain(dirs) * qw
    Y = sh_matrix(N, dirs)
    return ShCoefficients(N, np.conj(Y).T @ vals)


def required_order(d: float, band: BandSpec, k: PhysicalConstants = AIR) -> int:
    """Series truncation order rule: ``ceil(omega_max d / c) + 10``."""
    return int(math.ceil(band.omega_max * d / k.c)) + 10


def rho_anisotropic(separation, band: BandSpec, beta: ShCoefficients,
                    k: PhysicalConstants = AIR, tol: float = 1e-9) -> complex:
    """Band-averaged correlation for a field with gain coefficients ``beta``.

    Evaluates the truncated plane-wave series. The angular factor of each order
    does not depend on frequency, so only a radial sum is integrated over the
    band. Raises :class:`TruncationError` when ``beta`` stops below the order
    rule or when the last retained order still contributes more than ``tol``.
    """
    sep = np.asarray(separation, dtype=float).reshape(3)
    d = float(np.linalg.norm(sep))
    if d == 0.0:
        return complex(4.0 * np.pi * beta.coeffs[0] * spherical_harmonic(0, 0, [0.0, 0.0, 1.0]))
    N = beta.order
    need = required_order(d, band, k)
    if N < need:
        raise TruncationError(f"order {N} below required {need} for |d| = {d:.4g} m")
    Y = sh_matrix(N, sep / d)[0]
    ang = np.array([1j**n * np.dot(Y[n * n:(n + 1) ** 2], beta.coeffs[n * n:(n + 1) ** 2])
                    for n in range(N + 1)])
    x_hi = band.omega_max * d / k.c
    tail = 4.0 * np.pi * abs(ang[N]) * np.max(np.abs(
        spherical_bessel_orders(N, np.linspace(band.omega_min * d / k.c, x_hi, 64))[N]))
    if tail > tol:
        raise TruncationError(f"last retained order contributes {tail:.3g} > tol {tol:.3g}")
    scale = d / k.c

    def integrand(u):
        jn = spherical_bessel_orders(N, (band.omega_min + u * band.delta_omega) * scale)
        return np.dot(ang, jn)

    return complex(4.0 * np.pi * adaptive_simpson(integrand, 0.0, 1.0, tol))


def rho_direct(separation, band: BandSpec, gain: DirectionalGain,
               k: PhysicalConstants = AIR, tol: float = 1e-9) -> complex:
    """Band average of the plane-wave phase weighted by a discrete gain.

    The direct form of the correlation for a field made of a few plane waves,
    used as a reference for :func:`rho_anisotropic`.
    """
    if gain.atoms is None:
        raise TypeError("rho_direct needs a discrete (plane-wave) gain")
    dirs, w = gain.atoms
    tau = dirs @ np.asarray(separation, dtype=float).reshape(3) / k.c

    def integrand(u):
        omega = band.omega_min + u * band.delta_omega
        return np.sum(w * np.exp(1j * omega * tau))

    return complex(adaptive_simpson(integrand, 0.0, 1.0, tol))
