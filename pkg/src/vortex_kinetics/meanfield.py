"""Mean-field equilibrium on the plane, its angular velocity, and the renormalized potential.

All plane objects are radial.  The equilibrium density is represented by its
values on a composite Gauss-Legendre grid in ``r``; two-point functions
``F(x, y)`` that only depend on ``|x|``, ``|y|`` and the relative angle are
stored as cosine modes ``F_n(s, r)`` with ``F = F_0 + 2 sum_{n>=1} F_n cos(n psi)``.
Composition against the density, ``(F * G)(x, y) = int F(x, z) G(z, y) mu(z) dz``,
is diagonal in ``n``: ``(F * G)_n = F_n D G_n`` with ``D = 2 pi diag(w r mu)``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline

from .kernels import ExternalPotential, PlaneKernel, RadialProfile
from .quadrature import (
    RadialGrid,
    angular_cosine_modes,
    composite_gauss_legendre,
    pair_distance,
    radial_modes_of_pair_function,
    relative_angles,
)

log = logging.getLogger(__name__)

DEFAULT_N_ANGLES = 128
SLOPE_TABLE_SIZE = 4097


class MeanFieldError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Convolution helpers
# ---------------------------------------------------------------------------


def _convolution_mode0(w_radial: RadialProfile, s, grid: RadialGrid, n_angles: int) -> np.ndarray:
    """Matrix ``C`` with ``(W * mu)(s_i) = sum_j C_ij mu(r_j)``."""
    w0 = radial_modes_of_pair_function(w_radial, s, grid.nodes, 0, n_angles)[0]
    return 2.0 * np.pi * w0 * (grid.weights * grid.nodes)[None, :]


def _convolution_derivative(w_radial: RadialProfile, s, grid: RadialGrid, n_angles: int) -> np.ndarray:
    """Matrix ``C'`` with ``d/ds (W * mu)(s_i) = sum_j C'_ij mu(r_j)``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    psi = relative_angles(n_angles)
    rho = pair_distance(s, grid.nodes, psi)
    g = w_radial.d1_over_r(rho)
    ds = s[:, None, None] - grid.nodes[None, :, None] * np.cos(psi)[None, None, :]
    avg = np.mean(g * ds, axis=-1)
    return 2.0 * np.pi * avg * (grid.weights * grid.nodes)[None, :]


# ---------------------------------------------------------------------------
# Equilibrium profile
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumProfile:
    """Radial mean-field density ``mu_beta`` on a quadrature grid.

    ``log_mu_slope`` evaluates ``(log mu)'(r)`` at arbitrary radii; it is
    exact up to quadrature for solved profiles and user supplied for
    engineered ones.
    """

    beta: float
    grid: RadialGrid
    mu_values: np.ndarray
    z_beta: float
    omega_values: np.ndarray
    log_mu_slope: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    kernel: PlaneKernel | None = field(default=None, repr=False)
    potential: ExternalPotential | None = field(default=None, repr=False)
    residual_history: list = field(default_factory=list, repr=False)
    n_angles: int = DEFAULT_N_ANGLES

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    def mass(self) -> float:
        return float(2.0 * np.pi * np.sum(self.grid.weights * self.grid.nodes * self.mu_values))

    def measure_weights(self) -> np.ndarray:
        """``2 pi w_j r_j mu_j``: the radial part of ``mu(y) dy`` for angle-averaged integrands."""
        return 2.0 * np.pi * self.grid.weights * self.grid.nodes * self.mu_values

    def omega_at(self, r) -> np.ndarray:
        """Angular velocity ``Omega = (log mu)'/(beta r)``; the origin uses a 4-point extrapolation."""
        r = np.asarray(r, dtype=float)
        flat = np.atleast_1d(r).ravel()
        out = np.empty_like(flat)
        h = 1e-3
        small = flat < 4 * h
        if np.any(~small):
            big = flat[~small]
            out[~small] = self.log_mu_slope(big) / (self.beta * big)
        if np.any(small):
            # Omega is even in r; cubic extrapolation in r^2 from points 4h..7h
            pts = h * np.arange(4, 8)
            vals = self.log_mu_slope(pts) / (self.beta * pts)
            coef = np.polyfit(pts**2, vals, 3)
            out[small] = np.polyval(coef, flat[small] ** 2)
        return out.reshape(r.shape)

    def mu_at(self, r) -> np.ndarray:
        """Evaluate ``mu`` off-grid from the fixed-point formula (solved profiles only)."""
        if self.potential is None:
            raise MeanFieldError("off-grid evaluation needs the defining potentials")
        r = np.atleast_1d(np.asarray(r, dtype=float))
        conv = 0.0
        if self.kernel is not None:
            conv = _convolution_mode0(self.kernel.w_radial, r, self.grid, self.n_angles) @ self.mu_values
        return np.exp(-self.beta * (self.potential.v_radial.value(r) + conv)) / self.z_beta

    def to_csv_rows(self):
        return [(float(r), float(m), float(o)) for r, m, o in zip(self.r, self.mu_values, self.omega_values)]


def _auto_r_max(v: ExternalPotential, beta: float, w_sup: float) -> float:
    r = np.linspace(0.0, 60.0, 60001)
    log_mu = -beta * (v.v_radial.value(r) - v.v_radial.value(np.zeros(1))[0])
    dens = np.exp(log_mu)
    norm = 2 * np.pi * trapezoid(dens * r, r)
    # log of dens / norm * exp(2 beta ||W||), kept in log form to avoid overflow
    log_bound = log_mu - np.log(norm) + 2 * beta * w_sup
    idx = np.nonzero(log_bound > np.log(1e-14))[0]
    if idx.size == 0 or idx[-1] == r.size - 1:
        raise MeanFieldError("potential does not confine: cannot choose R_max")
    return float(np.ceil(r[idx[-1]] * 4) / 4)


def default_grid(v: ExternalPotential, beta: float, kernel: PlaneKernel | None = None,
                 n_panels: int = 24, order: int = 16) -> RadialGrid:
    w_sup = kernel.sup_norm() if kernel is not None else 0.0
    return composite_gauss_legendre(0.0, _auto_r_max(v, beta, w_sup), n_panels, order)


def solve_mu_beta(
    v: ExternalPotential,
    kernel: PlaneKernel | None,
    beta: float,
    grid: RadialGrid | None = None,
    tol: float = 1e-12,
    max_iter: int = 500,
    n_angles: int = DEFAULT_N_ANGLES,
) -> EquilibriumProfile:
    """Picard iteration ``mu <- exp(-beta (V + W * mu)) / Z`` on a radial grid."""
    if beta < 0:
        raise MeanFieldError("beta must be non-negative")
    grid = grid or default_grid(v, beta, kernel)
    r = grid.nodes
    w_sup = kernel.sup_norm() if kernel is not None else 0.0
    if beta * w_sup > 0.5:
        warnings.warn(f"beta*||W|| = {beta * w_sup:.3f} > 0.5: Picard contraction not guaranteed, damping")
    v_vals = v.v_radial.value(r)
    conv = _convolution_mode0(kernel.w_radial, r, grid, n_angles) if kernel is not None else None
    area = 2.0 * np.pi * grid.weights * r

    def gibbs(mu):
        energy = v_vals + (conv @ mu if conv is not None else 0.0)
        energy = energy - energy.min()
        unnorm = np.exp(-beta * energy)
        z = float(area @ unnorm)
        return unnorm / z, z, energy

    mu, _, _ = gibbs(np.zeros_like(r))
    history: list[float] = []
    damping = 1.0
    z = float("nan")
    for _ in range(max_iter):
        new, _, _ = gibbs(mu)
        res = float(np.max(np.abs(new - mu)))
        if history and res > history[-1]:
            damping = 0.5
        history.append(res)
        mu = (1 - damping) * mu + damping * new if damping < 1 else new
        if res < tol:
            break
        if not np.isfinite(res) or res > 1e6:
            raise MeanFieldError(f"Picard iteration diverged, last residual {res:.3e}")
    else:
        raise MeanFieldError(f"Picard iteration did not converge, last residual {history[-1]:.3e}")
    mu, _, _ = gibbs(mu)
    # Z in terms of the undisplaced energy
    energy = v_vals + (conv @ mu if conv is not None else 0.0)
    z = float(area @ np.exp(-beta * energy))
    if mu[-1] > 1e-12 * max(mu.max(), 1.0):
        warnings.warn(f"mu(R_max) = {mu[-1]:.2e}: radial grid may be too short")

    # The interaction part of the slope is smooth; tabulate it once on a dense
    # uniform grid and interpolate, falling back to direct quadrature outside.
    table = {}

    def interaction_slope(rr):
        if "spline" not in table:
            nodes = np.linspace(0.0, grid.r_max, SLOPE_TABLE_SIZE)
            vals = np.concatenate([
                _convolution_derivative(kernel.w_radial, chunk, grid, n_angles) @ mu
                for chunk in np.array_split(nodes, max(1, SLOPE_TABLE_SIZE // 256))
            ])
            table["spline"] = CubicSpline(nodes, vals)
        out = np.empty_like(rr)
        inside = rr <= grid.r_max
        out[inside] = table["spline"](rr[inside])
        if np.any(~inside):
            out[~inside] = _convolution_derivative(kernel.w_radial, rr[~inside], grid, n_angles) @ mu
        return out

    def slope(rr):
        rr = np.atleast_1d(np.asarray(rr, dtype=float))
        d = v.v_radial.d1(rr)
        if kernel is not None:
            d = d + interaction_slope(rr)
        return -beta * d

    prof = EquilibriumProfile(
        beta=float(beta), grid=grid, mu_values=mu, z_beta=z, omega_values=np.empty(0),
        log_mu_slope=slope, kernel=kernel, potential=v, residual_history=history, n_angles=n_angles,
    )
    prof.omega_values = prof.omega_at(r)
    return prof


def fixed_point_residual(profile: EquilibriumProfile) -> float:
    """``|| mu - exp(-beta (V + W * mu)) / Z ||_inf`` on the grid."""
    return float(np.max(np.abs(profile.mu_values - profile.mu_at(profile.r))))


def profile_from_omega(omega: Callable[[np.ndarray], np.ndarray], beta: float, grid: RadialGrid) -> EquilibriumProfile:
    """Density ``mu propto exp(beta int_0^r rho Omega(rho) d rho)`` for a prescribed angular velocity."""
    from scipy.integrate import quad

    r = grid.nodes
    logm = np.array([quad(lambda t: beta * t * omega(np.array([t]))[0], 0.0, x, limit=200)[0] for x in r])
    unnorm = np.exp(logm - logm.max())
    z = float(2 * np.pi * np.sum(grid.weights * r * unnorm))
    mu = unnorm / z

    def slope(rr):
        rr = np.atleast_1d(np.asarray(rr, dtype=float))
        return beta * rr * omega(rr)

    prof = EquilibriumProfile(beta=float(beta), grid=grid, mu_values=mu, z_beta=z * np.exp(logm.max()),
                              omega_values=np.empty(0), log_mu_slope=slope)
    prof.omega_values = prof.omega_at(r)
    return prof


def angular_velocity(profile: EquilibriumProfile, r=None) -> np.ndarray:
    """``Omega_beta(r) = (log mu_beta)'(r) / (beta r)``, on the profile grid by default."""
    if np.any(profile.mu_values <= 0):
        raise MeanFieldError("mu_beta vanishes inside the grid")
    return profile.omega_at(profile.r if r is None else r)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumClass:
    tag: str  # "NonDegenerate", "Gaussian" or "Other"
    R: float | None
    evidence: dict


def classify_equilibrium(profile: EquilibriumProfile, tol: float = 1e-8, r_check: float | None = None,
                         r_cap: float = 1e6) -> EquilibriumClass:
    """Decide between Gaussian{R}, NonDegenerate{R} and Other.

    For NonDegenerate the reported ``R`` is ``max(1, R_min)`` where ``R_min`` is
    the smallest constant satisfying both inequalities on the check grid.
    """
    r_end = r_check or profile.grid.r_max
    r = np.linspace(0.0, r_end, 2001)
    om = profile.omega_at(r)
    R_fit = -float(np.mean(om))
    dev = float(np.max(np.abs(om + R_fit)))
    evidence = {"omega_sup_deviation": dev, "fitted_R": R_fit}
    if dev < tol and R_fit > 0:
        return EquilibriumClass("Gaussian", R_fit, evidence)

    h = 1e-3
    rr = r[1:]
    d1 = (profile.omega_at(rr + h) - profile.omega_at(np.maximum(rr - h, 0.0))) / (
        (rr + h) - np.maximum(rr - h, 0.0))
    # Omega even in r: Omega''(0) = 2 * coefficient of r^2
    pts = h * np.arange(4, 12)
    coef = np.polyfit(pts**2, profile.omega_at(pts), 3)
    d2_0 = 2.0 * coef[-2]
    with np.errstate(divide="ignore"):
        need = np.minimum(rr, 1.0) / np.abs(d1)
    r_slope = float(np.max(need))
    r_curv = float(1.0 / abs(d2_0)) if d2_0 != 0 else np.inf
    monotone = bool(np.all(d1 > 0) or np.all(d1 < 0))
    r_min = max(r_slope, r_curv)
    evidence.update({"R_from_slope": r_slope, "R_from_curvature": r_curv, "omega_dd0": d2_0,
                     "monotone": monotone, "min_abs_slope": float(np.min(np.abs(d1)))})
    if monotone and np.isfinite(r_min) and r_min < r_cap:
        return EquilibriumClass("NonDegenerate", max(1.0, r_min), evidence)
    return EquilibriumClass("Other", None, evidence)


# ---------------------------------------------------------------------------
# Two-point functions and the renormalized potential
# ---------------------------------------------------------------------------


@dataclass
class TwoPointTable:
    """Radial x relative-angle representation of a rotation-invariant two-point function.

    ``modes[n]`` holds ``F_n(r_i, r_j)`` for ``n = 0..n_max`` on the profile grid.
    ``nystrom`` optionally evaluates the modes at off-grid radii.
    """

    profile: EquilibriumProfile
    modes: np.ndarray
    nystrom: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_max(self) -> int:
        return self.modes.shape[0] - 1

    def modes_at(self, s, r) -> np.ndarray:
        if self.nystrom is None:
            raise MeanFieldError("off-grid evaluation not available for this table")
        return self.nystrom(np.atleast_1d(np.asarray(s, float)), np.atleast_1d(np.asarray(r, float)))

    def evaluate(self, s, r, psi) -> np.ndarray:
        """``F(x, y)`` for ``|x| = s``, ``|y| = r`` (scalars or arrays) at relative angle ``psi``."""
        m = self.modes_at(s, r)
        n = np.arange(m.shape[0])
        c = np.where(n == 0, 1.0, 2.0)
        psi = np.asarray(psi, dtype=float)
        return np.tensordot(c[:, None] * np.cos(np.outer(n, np.atleast_1d(psi))), m, axes=([0], [0]))


def _flush(a: np.ndarray, floor: float = 1e-200) -> np.ndarray:
    """Zero out entries below ``floor``: repeated products otherwise reach subnormal
    floats, which make BLAS kernels orders of magnitude slower."""
    a[np.abs(a) < floor] = 0.0
    return a


def _pair_modes(kernel: PlaneKernel, profile: EquilibriumProfile, s, r, n_max: int) -> np.ndarray:
    return _flush(radial_modes_of_pair_function(kernel.w_radial, s, r, n_max, max(profile.n_angles, 4 * n_max + 8)))


def mu_convolution_power(kernel: PlaneKernel, profile: EquilibriumProfile, n: int, n_modes: int = 16) -> TwoPointTable:
    """``W^{*n}`` with ``W^{*(n+1)} = W * W^{*n}`` under the equilibrium weight."""
    if n < 1:
        raise ValueError("n must be >= 1")
    r = profile.r
    d = profile.measure_weights()
    w_grid = _pair_modes(kernel, profile, r, r, n_modes)
    power = w_grid.copy()
    for _ in range(n - 1):
        power = _flush((w_grid * d) @ power)
    power = 0.5 * (power + np.swapaxes(power, 1, 2))

    def nystrom(s, rr):
        if n == 1:
            return _pair_modes(kernel, profile, s, rr, n_modes)
        left = _pair_modes(kernel, profile, s, r, n_modes)  # W(s, grid)
        right = _pair_modes(kernel, profile, r, rr, n_modes)  # W(grid, rr)
        prev = right
        for _ in range(n - 2):
            prev = (w_grid * d) @ prev
        return (left * d) @ prev

    return TwoPointTable(profile, power, nystrom)


@dataclass
class RenormalizedPotential:
    """``W_beta = sum_n (-beta)^n W^{*(n+1)}`` truncated at ``truncation_order``."""

    table: TwoPointTable
    truncation_order: int
    tail_bound: float
    kernel_table: np.ndarray = field(repr=False)  # W modes on the grid

    @property
    def modes(self) -> np.ndarray:
        return self.table.modes

    def modes_at(self, s, r) -> np.ndarray:
        return self.table.modes_at(s, r)

    def identity_residual(self) -> float:
        """Sup over grid points and relative angles of ``|W_b + beta W_b * W - W|``."""
        prof = self.table.profile
        d = prof.measure_weights()
        res_modes = self.modes + prof.beta * (self.modes * d) @ self.kernel_table - self.kernel_table
        n = np.arange(res_modes.shape[0])
        psi = relative_angles(64)
        c = np.where(n == 0, 1.0, 2.0)[:, None] * np.cos(np.outer(n, psi))
        phys = np.tensordot(c, res_modes, axes=([0], [0]))
        return float(np.max(np.abs(phys)))


def renormalized_potential(kernel: PlaneKernel, profile: EquilibriumProfile, tol: float = 1e-12,
                           n_modes: int = 16, n_terms: int | None = None) -> RenormalizedPotential:
    """Partial sums of the beta-expansion until the geometric tail bound is below ``tol``."""
    beta = profile.beta
    w_sup = kernel.sup_norm()
    q = beta * w_sup
    if q >= 1.0:
        raise MeanFieldError(f"beta*||W|| = {q:.3f} >= 1: the renormalization series diverges")
    r = profile.r
    d = profile.measure_weights()
    w_grid = _pair_modes(kernel, profile, r, r, n_modes)
    if n_terms is None:
        n_terms = 0
        while q > 0 and q ** (n_terms + 1) * w_sup / (1 - q) >= tol:
            n_terms += 1
    tail = q ** (n_terms + 1) * w_sup / (1 - q) if q > 0 else 0.0
    total = w_grid.copy()
    term = w_grid.copy()
    for _ in range(n_terms):
        term = _flush(-beta * (term * d) @ w_grid)
        total = total + term
    total = 0.5 * (total + np.swapaxes(total, 1, 2))

    def nystrom(s, rr):
        # W_b(s, .) = W(s, .) - beta int W(s, z) W_b(z, .) mu(z) dz
        w_s_grid = _pair_modes(kernel, profile, s, r, n_modes)
        w_grid_rr = _pair_modes(kernel, profile, r, rr, n_modes)
        wb_grid_rr = w_grid_rr - beta * (total * d) @ w_grid_rr
        return _pair_modes(kernel, profile, s, rr, n_modes) - beta * (w_s_grid * d) @ wb_grid_rr

    table = TwoPointTable(profile, total, nystrom)
    return RenormalizedPotential(table, n_terms, tail, w_grid)


def renormalized_potential_exact(kernel: PlaneKernel, profile: EquilibriumProfile, n_modes: int = 16) -> np.ndarray:
    """Direct solve ``W_b (I + beta D W) = W`` per mode; used as a cross-check of the series."""
    r = profile.r
    d = profile.measure_weights()
    w_grid = _pair_modes(kernel, profile, r, r, n_modes)
    eye = np.eye(r.size)
    out = np.empty_like(w_grid)
    for n in range(w_grid.shape[0]):
        out[n] = np.linalg.solve((eye + profile.beta * d[:, None] * w_grid[n]).T, w_grid[n].T).T
    return out


# ---------------------------------------------------------------------------
# Gaussian special case
# ---------------------------------------------------------------------------


def gaussian_case_potential(R: float, beta: float, w_amplitude: float, w_width: float) -> ExternalPotential:
    """``V = R r^2/2 - W * G`` so that the Gibbs density is the centred Gaussian ``G``.

    ``G`` has variance ``1/(beta R)`` per coordinate and ``W`` is the Gaussian
    bump ``a exp(-r^2 / (2 s^2))``; then ``W * G`` is again a Gaussian bump.
    """
    s2 = w_width**2
    var = 1.0 / (beta * R)
    amp = w_amplitude * s2 / (s2 + var)
    width2 = s2 + var

    def bump(r):
        return amp * np.exp(-np.asarray(r, float) ** 2 / (2 * width2))

    def value(r):
        r = np.asarray(r, float)
        return 0.5 * R * r**2 - bump(r)

    def d1_over_r(r):
        return R + bump(r) / width2

    def d1(r):
        return np.asarray(r, float) * d1_over_r(r)

    def d2(r):
        r = np.asarray(r, float)
        return R + bump(r) * (1.0 - r**2 / width2) / width2

    from .kernels import make_external_potential

    return make_external_potential(RadialProfile(value, d1, d2, d1_over_r, "gaussian_case", (R, beta, w_amplitude, w_width)))


def gaussian_density(r, beta: float, R: float) -> np.ndarray:
    return beta * R / (2 * np.pi) * np.exp(-beta * R * np.asarray(r, float) ** 2 / 2)
