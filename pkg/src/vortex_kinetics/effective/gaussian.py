"""Gaussian equilibrium: the coefficient field A(x), the operator T_beta and the main term.

In the Gaussian setting the angular velocity is the constant ``-R`` and the
background linearization reduces to the single-particle operator

    (i T_beta h)(x) = -beta R x . int K(x - y) h(y) mu(y) dy,

which is ``beta`` times the generic operator ``x Omega(x) . int K(x - y) h(y) mu(y) dy``.
Functions on the plane are represented by angular Fourier modes
``h(r, theta) = sum_n h_n(r) exp(i n theta)`` on the radial grid of the
equilibrium profile.  ``T_beta`` acts mode by mode:

    (T h)_n(s) = -Omega_eff(s) 2 pi int kappa_n(s, r) h_n(r) mu(r) r dr,

with ``kappa_n`` the sine coefficient of ``W'(rho)/rho * s r sin(psi)`` in the
relative angle ``psi`` and ``Omega_eff = -beta R``.  Each ``T_n`` is
symmetric in the weighted inner product, so its exponential follows from one
symmetric eigendecomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as cheb

from ..kernels import PlaneKernel
from ..meanfield import EquilibriumProfile, classify_equilibrium
from ..quadrature import angular_sine_modes, pair_distance, relative_angles


class NotGaussianError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Angular-mode tools
# ---------------------------------------------------------------------------


def mode_numbers(n_max: int) -> np.ndarray:
    return np.arange(-n_max, n_max + 1)


def circle_modes(values: np.ndarray, n_max: int) -> np.ndarray:
    """Modes ``(1/2pi) int f(theta) exp(-i n theta) dtheta`` for ``n = -n_max..n_max`` (last axis = angle)."""
    spec = np.fft.fft(values, axis=-1) / values.shape[-1]
    idx = mode_numbers(n_max) % values.shape[-1]
    return np.moveaxis(spec[..., idx], -1, 0)


def force_circle_modes(kernel: PlaneKernel, s, r, n_max: int, n_angles: int = 128) -> np.ndarray:
    """Angular modes in ``theta`` of ``K((s, 0) - r e_theta)``; shape (2, 2 n_max + 1, len s, len r)."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    th = relative_angles(n_angles)
    z = np.stack([s[:, None, None] - r[None, :, None] * np.cos(th), np.broadcast_to(
        -r[None, :, None] * np.sin(th), (s.size, r.size, n_angles))], axis=-1)
    k = kernel.force(z)  # (s, r, P, 2)
    return np.stack([circle_modes(k[..., 0], n_max), circle_modes(k[..., 1], n_max)])


def kappa_modes(kernel: PlaneKernel, s, r, n_max: int, n_angles: int = 128) -> np.ndarray:
    """Sine coefficients ``kappa_n(s, r)``, ``n = 0..n_max``, of ``W'(rho)/rho * s r sin(psi)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    psi = relative_angles(n_angles)
    rho = pair_distance(s, r, psi)
    vals = kernel.w_radial.d1_over_r(rho) * (s[:, None, None] * r[None, :, None]) * np.sin(psi)
    return np.moveaxis(angular_sine_modes(vals, n_max), -1, 0)


@dataclass
class PlaneField:
    """Function on the plane stored as angular modes on a radial grid."""

    r: np.ndarray
    values: np.ndarray  # (2 n_max + 1, len r), modes -n_max..n_max

    @property
    def n_max(self) -> int:
        return (self.values.shape[0] - 1) // 2

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], r, n_max: int, n_angles: int = 128) -> "PlaneField":
        r = np.asarray(r, dtype=float)
        th = relative_angles(n_angles)
        x = np.stack([r[:, None] * np.cos(th), r[:, None] * np.sin(th)], axis=-1)
        return cls(r, circle_modes(np.asarray(fn(x), dtype=complex), n_max))

    def evaluate_polar(self, theta) -> np.ndarray:
        """Values on the grid radii at the given angles; shape (len r, len theta)."""
        e = np.exp(1j * np.outer(mode_numbers(self.n_max), np.atleast_1d(theta)))
        return np.einsum("nr,nt->rt", self.values, e)


# ---------------------------------------------------------------------------
# The operator T_beta
# ---------------------------------------------------------------------------


@dataclass
class TBetaOperator:
    """Per-mode matrices of ``T_beta`` on the profile grid with cached eigendecompositions."""

    profile: EquilibriumProfile
    kernel: PlaneKernel
    R: float
    n_max: int
    n_angles: int = 128
    kappa: np.ndarray = field(init=False, repr=False)  # (n_max + 1, nr, nr)
    _eig: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        r = self.profile.r
        self.kappa = kappa_modes(self.kernel, r, r, self.n_max, self.n_angles)
        self.kappa = 0.5 * (self.kappa + np.swapaxes(self.kappa, 1, 2))

    @property
    def coupling(self) -> float:
        """``-Omega_eff = beta R``."""
        return self.profile.beta * self.R

    @property
    def weights(self) -> np.ndarray:
        return self.profile.measure_weights()

    def matrix(self, n: int) -> np.ndarray:
        """``T_n`` acting on mode-``n`` radial values (negative ``n`` flips the sign)."""
        sign = 1.0 if n >= 0 else -1.0
        return sign * self.coupling * self.kappa[abs(n)] * self.weights[None, :]

    def symmetric(self, n: int) -> np.ndarray:
        d = np.sqrt(self.weights)
        sign = 1.0 if n >= 0 else -1.0
        return sign * self.coupling * (d[:, None] * self.kappa[abs(n)] * d[None, :])

    def eig(self, n: int):
        """Eigenvalues and orthonormal eigenvectors of the symmetric form of ``T_n`` (``n >= 0``)."""
        if n not in self._eig:
            self._eig[n] = np.linalg.eigh(self.symmetric(n))
        return self._eig[n]

    def apply(self, h: PlaneField) -> PlaneField:
        if not np.array_equal(h.r, self.profile.r):
            raise ValueError("field must live on the profile grid")
        out = np.empty_like(h.values)
        for i, n in enumerate(mode_numbers(h.n_max)):
            if abs(n) > self.n_max:
                raise ValueError("field has more angular modes than the operator")
            out[i] = self.matrix(int(n)) @ h.values[i]
        return PlaneField(h.r, out)

    def apply_at(self, h: PlaneField, points) -> np.ndarray:
        """``T_beta h`` at arbitrary points (Nystrom evaluation)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        s = np.linalg.norm(pts, axis=1)
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        kap = kappa_modes(self.kernel, s, self.profile.r, h.n_max, self.n_angles)  # (n+1, len s, nr)
        out = np.zeros(s.size, dtype=complex)
        w = self.weights
        for i, n in enumerate(mode_numbers(h.n_max)):
            sign = 1.0 if n >= 0 else -1.0
            out += sign * self.coupling * (kap[abs(n)] @ (w * h.values[i])) * np.exp(1j * n * phi)
        return out.reshape(np.shape(points)[:-1])

    def propagator(self, n: int, t: float) -> np.ndarray:
        """``exp(-i t T_n)`` on radial values."""
        lam, v = self.eig(abs(n))
        if n < 0:
            lam = -lam
        d = np.sqrt(self.weights)
        return (v * np.exp(-1j * t * lam)[None, :]) @ v.T * (d[None, :] / d[:, None])


def inner_beta(h1: PlaneField, h2: PlaneField, profile: EquilibriumProfile) -> complex:
    """``<h1, h2>`` in ``L^2(mu dx)`` from mode coefficients."""
    return complex(np.sum(np.conj(h1.values) * h2.values * profile.measure_weights()[None, :]))


def _gaussian_R(profile: EquilibriumProfile, R: float | None) -> float:
    if R is not None:
        return float(R)
    cls = classify_equilibrium(profile)
    if cls.tag != "Gaussian":
        raise NotGaussianError(f"profile classified {cls.tag}; a Gaussian equilibrium is required")
    return float(cls.R)


def t_beta_operator(profile: EquilibriumProfile, kernel: PlaneKernel, n_max: int = 16, R: float | None = None,
                    n_angles: int = 128) -> TBetaOperator:
    return TBetaOperator(profile, kernel, _gaussian_R(profile, R), n_max, n_angles)


def apply_T_beta(profile: EquilibriumProfile, kernel: PlaneKernel, h: PlaneField, R: float | None = None) -> PlaneField:
    return t_beta_operator(profile, kernel, max(h.n_max, 1), R).apply(h)


# ---------------------------------------------------------------------------
# Coefficient field A(x)
# ---------------------------------------------------------------------------


@dataclass
class RadialMatrixField:
    """``A(s e) = R_e diag-form R_e^T`` with tangential and normal components at ``(s, 0)``.

    ``tangential[i] = A_22((s_i, 0))``, ``normal[i] = A_11((s_i, 0))`` and
    ``cross[i] = A_12((s_i, 0))``.  The angular average uses the mean over
    the circle (normalised measure).
    """

    s: np.ndarray
    tangential: np.ndarray
    normal: np.ndarray
    cross: np.ndarray
    convention: str = "mean over the circle, 2 pi int ... mu r dr"

    def at(self, x) -> np.ndarray:
        """2x2 matrices at points ``x`` (..., 2) by rotating the radial profile (linear interpolation in ``s``)."""
        x = np.asarray(x, dtype=float)
        s = np.linalg.norm(x, axis=-1)
        c = np.where(s > 0, x[..., 0] / np.where(s > 0, s, 1), 1.0)
        sn = np.where(s > 0, x[..., 1] / np.where(s > 0, s, 1), 0.0)
        a11 = np.interp(s, self.s, self.normal)
        a22 = np.interp(s, self.s, self.tangential)
        a12 = np.interp(s, self.s, self.cross)
        rot = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)
        local = np.stack([np.stack([a11, a12], -1), np.stack([a12, a22], -1)], -2)
        return rot @ local @ np.swapaxes(rot, -1, -2)

    def to_csv_rows(self):
        return [(float(a), float(b), float(c), float(d)) for a, b, c, d in zip(self.s, self.tangential, self.normal, self.cross)]


def diffusion_matrix_at(kernel: PlaneKernel, profile: EquilibriumProfile, x, n_angles: int = 256) -> np.ndarray:
    """``A(x) = 2 pi int (mean_e K(x - r e))^{(x)2} mu(r) r dr`` at points ``x`` (..., 2)."""
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 2)
    th = relative_angles(n_angles)
    e = np.stack([np.cos(th), np.sin(th)], axis=-1)
    r = profile.r
    z = flat[:, None, None, :] - r[None, :, None, None] * e[None, None, :, :]
    avg = kernel.force(z).mean(axis=2)  # (points, nr, 2)
    w = profile.measure_weights()
    out = np.einsum("prb,prc,r->pbc", avg, avg, w)
    return out.reshape(x.shape[:-1] + (2, 2))


def diffusion_field_gaussian(kernel: PlaneKernel, profile: EquilibriumProfile, s=None, R: float | None = None,
                             n_angles: int = 256) -> RadialMatrixField:
    """Coefficient field of the Gaussian case on radii ``s`` (default: the profile grid plus the origin)."""
    _gaussian_R(profile, R)
    s = np.concatenate([[0.0], profile.r]) if s is None else np.asarray(s, dtype=float)
    pts = np.stack([s, np.zeros_like(s)], axis=-1)
    a = diffusion_matrix_at(kernel, profile, pts, n_angles)
    return RadialMatrixField(s, a[:, 1, 1], a[:, 0, 0], a[:, 0, 1])


# ---------------------------------------------------------------------------
# Main term
# ---------------------------------------------------------------------------


def chebyshev_nodes(n: int, s_max: float) -> np.ndarray:
    """First-kind Chebyshev nodes on ``(0, s_max)`` in increasing order (the origin is excluded)."""
    t = -np.cos((2 * np.arange(n) + 1) * np.pi / (2 * n))
    return 0.5 * s_max * (t + 1.0)


def _cheb_fit(values: np.ndarray, s_max: float) -> np.ndarray:
    """Interpolating Chebyshev coefficients along the last axis (values at ``chebyshev_nodes``)."""
    n = values.shape[-1]
    t = -np.cos((2 * np.arange(n) + 1) * np.pi / (2 * n))
    flat = values.reshape(-1, n)
    coef = np.array([cheb.chebfit(t, row.real, n - 1) + 1j * cheb.chebfit(t, row.imag, n - 1) for row in flat])
    return coef.reshape(values.shape)


def _cheb_eval(coef: np.ndarray, s, s_max: float) -> np.ndarray:
    t = 2.0 * np.asarray(s, dtype=float) / s_max - 1.0
    flat = coef.reshape(-1, coef.shape[-1])
    out = np.array([cheb.chebval(t, c) for c in flat])
    return out.reshape(coef.shape[:-1] + np.shape(t))


def _cheb_derivative(values: np.ndarray, s_max: float) -> np.ndarray:
    n = values.shape[-1]
    coef = _cheb_fit(values, s_max)
    dcoef = np.apply_along_axis(cheb.chebder, -1, coef) * (2.0 / s_max)
    dcoef = np.concatenate([dcoef, np.zeros(dcoef.shape[:-1] + (1,))], axis=-1)
    return _cheb_eval(dcoef, chebyshev_nodes(n, s_max), s_max)


def polar_divergence(b: np.ndarray, f_modes: np.ndarray, m: np.ndarray, s: np.ndarray, s_max: float) -> np.ndarray:
    """``div(B grad f)`` per angular mode for a rotation-equivariant matrix field.

    ``b[..., i, j, k]`` holds the polar components of ``B`` at radius ``s_k``
    (index 0 radial, 1 tangential); ``f_modes[m, k]`` the angular modes of ``f``.
    """
    fp = _cheb_derivative(f_modes, s_max)
    ims = 1j * m[:, None] / s[None, :]
    vs = b[..., 0, 0, None, :] * fp + b[..., 0, 1, None, :] * ims * f_modes
    vt = b[..., 1, 0, None, :] * fp + b[..., 1, 1, None, :] * ims * f_modes
    return _cheb_derivative(s * vs, s_max) / s + ims * vt


@dataclass
class MainTermSeries:
    """Angular modes of the main term on a Chebyshev radial grid.

    ``values[t, m, k]`` is mode ``m`` at radius ``s[k]`` and time ``times[t]``;
    ``cesaro[j]`` the time average over ``[0, T_j]``; ``limit`` the target
    ``(1/mu) div(A grad f0)``.
    """

    s: np.ndarray
    s_max: float
    modes: np.ndarray
    times: np.ndarray
    values: np.ndarray
    cesaro_T: np.ndarray
    cesaro: np.ndarray
    limit: np.ndarray
    limit_closed_form: np.ndarray
    mu: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def weighted_norm(self, modal: np.ndarray, n_quad: int = 200) -> float:
        """``(int |g|^2 mu dx)^{1/2}`` for modal data (m, k) on the Chebyshev grid."""
        t, w = np.polynomial.legendre.leggauss(n_quad)
        sq = 0.5 * self.s_max * (t + 1.0)
        wq = 0.5 * self.s_max * w
        vals = _cheb_eval(_cheb_fit(modal, self.s_max), sq, self.s_max)
        return float(np.sqrt(2 * np.pi * np.sum(np.abs(vals) ** 2 * (self.mu(sq) * sq * wq)[None, :])))

    def evaluate(self, modal: np.ndarray, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        s = np.linalg.norm(pts, axis=-1)
        phi = np.arctan2(pts[..., 1], pts[..., 0])
        vals = _cheb_eval(_cheb_fit(modal, self.s_max), s, self.s_max)  # (m, ...)
        return np.real(np.sum(vals * np.exp(1j * np.multiply.outer(self.modes, phi)), axis=0))

    def relative_cesaro_error(self) -> np.ndarray:
        ref = self.weighted_norm(self.limit)
        return np.array([self.weighted_norm(c - self.limit) / ref for c in self.cesaro])


def _time_factor(lam: np.ndarray, t: float) -> np.ndarray:
    return np.exp(-1j * t * lam)


def _cesaro_factor(lam: np.ndarray, T: float) -> np.ndarray:
    x = T * lam
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - 0.5j * x, (1.0 - np.exp(-1j * safe)) / (1j * safe))


def b_field(op: TBetaOperator, s: np.ndarray, factors: list[Callable[[np.ndarray], np.ndarray]]) -> np.ndarray:
    """Polar components of ``B[a, b](s) = int K_a(x - y) [U K_b(x - .)](y) mu(y) dy`` at ``x = (s, 0)``.

    ``U`` is a spectral function of ``T_beta`` given by ``factors`` (one
    callable ``lambda -> factor`` per output); returns shape (len factors, 2, 2, len s).
    """
    n_max = op.n_max
    c = force_circle_modes(op.kernel, s, op.profile.r, n_max, op.n_angles)  # (2, modes, s, r)
    d = np.sqrt(op.weights)
    out = np.zeros((len(factors), 2, 2, s.size), dtype=complex)
    for i, n in enumerate(mode_numbers(n_max)):
        lam, v = op.eig(abs(int(n)))
        if n < 0:
            lam = -lam
        alpha = (c[:, i] * d[None, None, :]) @ v  # (2, s, eig)
        for j, fac in enumerate(factors):
            f = fac(lam)
            out[j] += np.einsum("ase,bse,e->abs", np.conj(alpha), alpha, f)
    return out.real


def gaussian_main_term(f0: Callable[[np.ndarray], np.ndarray], profile: EquilibriumProfile, kernel: PlaneKernel,
                       t_grid, cesaro_T=(), s_max: float | None = None, n_s: int = 64, f_modes: int = 16,
                       n_max: int = 16, R: float | None = None, n_angles: int = 128) -> MainTermSeries:
    """``M(t) = -(grad - beta R x) . int K(x - y) (U_t H)(x, y) mu(y) dy`` with ``U_t = exp(-i t T_beta)`` on ``y``.

    With ``H(x, y) = -K(x - y) . (grad f0 / mu)(x)`` this equals
    ``(1/mu) div(B_t grad f0)`` where ``B_t`` is built from the force modes and
    the spectral decomposition of ``T_beta``.  Cesaro averages over ``[0, T]``
    use the exact time average of ``exp(-i t lambda)``.
    """
    R = _gaussian_R(profile, R)
    op = TBetaOperator(profile, kernel, R, n_max, n_angles)
    s_max = float(s_max or profile.grid.r_max)
    s = chebyshev_nodes(n_s, s_max)
    times = np.asarray(t_grid, dtype=float)
    cesaro_T = np.asarray(cesaro_T, dtype=float)
    factors = [(lambda lam, t=t: _time_factor(lam, t)) for t in times]
    factors += [(lambda lam, T=T: _cesaro_factor(lam, T)) for T in cesaro_T]
    b = b_field(op, s, factors)
    m = mode_numbers(f_modes)
    f_mod = PlaneField.from_function(f0, s, f_modes, max(128, 4 * f_modes + 8)).values  # (m, s)

    def mu(x):
        return profile.beta * R / (2 * np.pi) * np.exp(-profile.beta * R * np.asarray(x) ** 2 / 2)

    inv_mu = 1.0 / mu(s)
    series = np.array([polar_divergence(bt, f_mod, m, s, s_max) * inv_mu for bt in b[: times.size]])
    ces = np.array([polar_divergence(bt, f_mod, m, s, s_max) * inv_mu for bt in b[times.size:]])
    a = diffusion_field_gaussian(kernel, profile, s, R)
    a_polar = np.zeros((2, 2, s.size))
    a_polar[0, 0], a_polar[0, 1], a_polar[1, 0], a_polar[1, 1] = a.normal, a.cross, a.cross, a.tangential
    limit = polar_divergence(a_polar, f_mod, m, s, s_max) * inv_mu
    closed = -(m[:, None] ** 2) * a.tangential[None, :] / s[None, :] ** 2 * f_mod * inv_mu
    return MainTermSeries(s, s_max, m, times, series, cesaro_T, ces.reshape((cesaro_T.size,) + limit.shape),
                          limit, closed, mu)
