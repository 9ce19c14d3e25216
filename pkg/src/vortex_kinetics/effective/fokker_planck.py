"""Radial Fokker-Planck evolution ``d_tau f = (1/r) d_r (r a (d_r - (log mu)') f)``.

Written for ``g = f / mu`` the flux is ``r a mu d_r g``, which vanishes exactly
for ``f = mu``.  The discretization is a conservative finite-volume scheme on
uniform cells in ``[0, r_max]`` with no-flux faces at both ends and backward
Euler in time, so mass is conserved to round-off and the weighted norm of
``g`` cannot grow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator
from scipy.linalg import eigh_tridiagonal, solve_banded

from ..meanfield import EquilibriumProfile, MeanFieldError


class SolverError(RuntimeError):
    pass


@dataclass
class RadialSeries:
    """Radial densities ``values[i, j] = f(tau_i, r_j)`` on cell centres."""

    taus: np.ndarray
    r: np.ndarray
    faces: np.ndarray
    values: np.ndarray
    mu: np.ndarray

    @property
    def volumes(self) -> np.ndarray:
        return np.pi * np.diff(self.faces**2)

    def mass(self) -> np.ndarray:
        """``2 pi int f r dr`` at every stored time."""
        return self.values @ self.volumes

    def weighted_norm(self) -> np.ndarray:
        """``|| f / mu ||`` in ``L2(mu)`` at every stored time."""
        g = self.values / self.mu
        return np.sqrt((g**2 * self.mu) @ self.volumes)

    def to_csv_rows(self):
        return [(float(t), float(r), float(v)) for t, row in zip(self.taus, self.values) for r, v in zip(self.r, row)]


def _mu_on(profile: EquilibriumProfile, r: np.ndarray) -> np.ndarray:
    try:
        return profile.mu_at(r)
    except MeanFieldError:
        # profiles built from Omega alone: interpolate log mu on the quadrature nodes
        log_mu = np.log(np.maximum(profile.mu_values, 1e-300))
        return np.exp(np.interp(r, profile.r, log_mu))


def _coefficient_on(coeff, r: np.ndarray, tol_pos: float) -> np.ndarray:
    if callable(coeff):
        a = np.asarray(coeff(r), dtype=float)
    else:
        rr, vals = np.asarray(coeff.r, float), np.asarray(coeff.values, float)
        if np.min(vals) < -tol_pos:
            raise ValueError(f"coefficient is negative (min {np.min(vals):.3e}); fp_evolve needs a >= 0")
        a = PchipInterpolator(rr, vals, extrapolate=False)(r)
        # hold the end values outside the tabulated range
        a = np.where(r < rr[0], vals[0], np.where(r > rr[-1], vals[-1], a))
    if np.any(~np.isfinite(a)):
        raise SolverError("coefficient is not finite on the cell faces")
    return np.maximum(a, 0.0)


def fp_evolve(f0, coeff, profile: EquilibriumProfile, taus, n_cells: int = 400, r_max: float | None = None,
              dt_max: float = 0.01, tol_pos: float = 1e-8, method: str = "implicit") -> RadialSeries:
    """Evolve a radial density with coefficient ``a`` (a ``CoefficientField`` or callable of r).

    ``f0`` is a callable of ``r`` or an array of cell-centre values.  The
    returned series holds the state at each entry of ``taus``; the first entry
    must be 0.  ``method="implicit"`` uses backward Euler with steps of at most
    ``dt_max``; ``method="spectral"`` applies the exact propagator of the
    semi-discrete system through a symmetric tridiagonal eigendecomposition,
    which stays accurate for arbitrarily large ``tau``.
    """
    if method not in ("implicit", "spectral"):
        raise ValueError(f"unknown method {method!r}; use 'implicit' or 'spectral'")
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or taus[0] != 0.0 or np.any(np.diff(taus) < 0):
        raise ValueError("taus must start at 0 and be non-decreasing")
    r_max = float(r_max or profile.grid.r_max)
    faces = np.linspace(0.0, r_max, n_cells + 1)
    centres = 0.5 * (faces[:-1] + faces[1:])
    h = faces[1] - faces[0]
    vol = np.pi * np.diff(faces**2)
    mu_c = _mu_on(profile, centres)
    inner = faces[1:-1]
    a_f = _coefficient_on(coeff, inner, tol_pos)
    mu_f = _mu_on(profile, inner)
    cond = 2 * np.pi * inner * a_f * mu_f / h  # face conductances, no flux at r = 0 and r = r_max
    mass = vol * mu_c

    f_init = np.asarray(f0(centres) if callable(f0) else f0, dtype=float)
    if f_init.shape != centres.shape:
        raise ValueError("f0 array must match the cell centres")
    g = f_init / mu_c

    out = np.empty((taus.size, n_cells))
    out[0] = f_init
    # operator: mass_i dg_i/dt = sum over faces of cond (g_nb - g_i)
    diag = np.zeros(n_cells)
    diag[:-1] += cond
    diag[1:] += cond
    if method == "spectral":
        # symmetric form M^(-1/2) L M^(-1/2) acting on y = M^(1/2) g
        if np.any(cond <= 0):
            raise SolverError("spectral propagation needs a > 0 on every interior face")
        root = np.sqrt(mass)
        lam, vec = eigh_tridiagonal(diag / mass, -cond / (root[:-1] * root[1:]))
        # the kernel is spanned exactly by g = const; replace the computed
        # near-zero eigenpair by it so that tau -> infinity keeps the mass
        null = root / np.linalg.norm(root)
        keep = np.arange(lam.size) != np.argmin(lam)
        lam, vec = np.maximum(lam[keep], 0.0), vec[:, keep]
        y0 = root * g
        c0 = null @ y0
        coef = vec.T @ (y0 - c0 * null)
        for i in range(1, taus.size):
            decay = np.exp(-lam * taus[i]) if np.isfinite(taus[i]) else np.zeros_like(lam)
            out[i] = (c0 * null + vec @ (decay * coef)) / root * mu_c
        return RadialSeries(taus, centres, faces, out, mu_c)
    for i in range(1, taus.size):
        span = taus[i] - taus[i - 1]
        n_sub = max(1, int(np.ceil(span / dt_max))) if span > 0 else 0
        if n_sub:
            dt = span / n_sub
            ab = np.zeros((3, n_cells))
            ab[0, 1:] = -dt * cond
            ab[1] = mass + dt * diag
            ab[2, :-1] = -dt * cond
            for _ in range(n_sub):
                g = solve_banded((1, 1), ab, mass * g)
            if not np.all(np.isfinite(g)):
                raise SolverError(f"implicit solve failed before tau = {taus[i]}")
        out[i] = g * mu_c
    return RadialSeries(taus, centres, faces, out, mu_c)


def gaussian_blob(center: float, width: float) -> Callable[[np.ndarray], np.ndarray]:
    """Normalized radial annulus density ``exp(-(r - c)^2 / (2 w^2))`` with ``2 pi int f r dr = 1``."""
    rr = np.linspace(0.0, center + 12 * width, 20001)
    vals = np.exp(-((rr - center) ** 2) / (2 * width**2))
    norm = 2 * np.pi * trapezoid(vals * rr, rr)
    return lambda r: np.exp(-((np.asarray(r, float) - center) ** 2) / (2 * width**2)) / norm
