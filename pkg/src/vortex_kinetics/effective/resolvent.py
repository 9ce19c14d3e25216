"""Two-particle resolvent of the linearized mean-field operator and the coefficient a_beta.

Two-particle functions ``h(x, y)`` with ``x = s e_phi`` and ``y = r e_theta``
are expanded in angular pairs ``exp(i k1 phi + i k2 theta)``.  On such a pair
the operator ``i L2 = Omega(s) d_phi + Omega(r) d_theta + beta (i T_beta)_y``
becomes ``i k1 Omega(s) + i k2 Omega(r) + beta (iT)_{k2}``, where ``(iT)_{k2}`` is
an integral operator in ``r``.  For ``k2 != 0`` the diagonal part is
``i k2 (u - z)`` in the variable ``u = Omega(r)`` with ``z = -k1 Omega(s)/k2 + i omega/k2``,
so the solution is written ``u = Phi / (i k2 (u - z))`` with ``Phi`` smooth, and
``Phi`` solves ``Phi + beta (iT)(Phi / (i k2 (u - z))) = source`` by a Neumann
series.  Every integral against the near-singular factor is done by product
integration on a Gauss-Legendre grid in ``u``, which integrates the Cauchy
factor exactly on each panel and keeps the ``omega -> 0`` limit resolvable on
a fixed grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..kernels import PlaneKernel
from ..meanfield import EquilibriumProfile, MeanFieldError, RenormalizedPotential, classify_equilibrium
from ..quadrature import radial_modes_of_pair_function
from .gaussian import kappa_modes

log = logging.getLogger(__name__)


class NeumannDivergence(RuntimeError):
    pass


class KernelContentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Product-integration grid in u = Omega(r)
# ---------------------------------------------------------------------------


def _barycentric_weights(t: np.ndarray) -> np.ndarray:
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _differentiation_matrix(t: np.ndarray) -> np.ndarray:
    b = _barycentric_weights(t)
    diff = t[:, None] - t[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (b[None, :] / b[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


@dataclass
class OmegaGrid:
    """Composite Gauss-Legendre grid in ``u = Omega(r)`` with radial measure weights.

    ``measure[j]`` is the weight of ``r dr`` at node ``j`` for smooth integrands,
    ``density[j] = v'(u_j) / 2`` with ``v = r^2`` is the same measure per unit ``u``.
    """

    breaks: np.ndarray
    order: int
    u: np.ndarray
    r: np.ndarray
    density: np.ndarray
    measure: np.ndarray
    t_nodes: np.ndarray = field(repr=False)
    t_weights: np.ndarray = field(repr=False)
    bary: np.ndarray = field(repr=False)
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_panels(self) -> int:
        return self.breaks.size - 1

    def cauchy_weights(self, z) -> np.ndarray:
        """Weights ``c`` with ``int g(u) / (u - z) du ~ sum_j c_j g(u_j)`` for smooth ``g``.

        ``z`` may be an array; the result has shape ``z.shape + (n_nodes,)``.
        Near the pole the weights integrate the Lagrange interpolant of ``g``
        against ``1/(u - z)`` exactly on each panel.
        """
        z = np.asarray(z, dtype=complex)
        flat = z.ravel()
        t, w, b = self.t_nodes, self.t_weights, self.bary
        lo, hi = self.breaks[:-1], self.breaks[1:]
        zeta = (2.0 * flat[:, None] - (lo + hi)[None, :]) / (hi - lo)[None, :]  # (Z, P)
        inv = 1.0 / (t[None, None, :] - zeta[:, :, None])  # (Z, P, q)
        base = w[None, None, :] * inv
        near = (np.abs(zeta - 1.0) + np.abs(zeta + 1.0)) < 3.2
        if np.any(near):
            zi, pi = np.nonzero(near)
            zn = zeta[zi, pi]
            q0 = np.log(1.0 - zn) - np.log(-1.0 - zn)
            corr = q0 - base[zi, pi].sum(axis=1)
            lag = b[None, :] / (zn[:, None] - t[None, :])
            lag = lag / lag.sum(axis=1, keepdims=True)
            base[zi, pi] = base[zi, pi] + lag * corr[:, None]
        return base.reshape(z.shape + (-1,))


def omega_grid(profile: EquilibriumProfile, n_panels: int = 24, order: int = 16, r_max: float | None = None,
               u_range: tuple[float, float] | None = None) -> OmegaGrid:
    """Grid uniform in ``u = Omega(r)`` over ``[0, r_max]``; requires monotone ``Omega``."""
    r_max = float(r_max or profile.grid.r_max)
    fine = np.linspace(0.0, r_max, 2001)
    om = profile.omega_at(fine)
    d = np.diff(om)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise MeanFieldError("Omega must be strictly monotone for the u-grid")
    if u_range is None:
        u_range = (float(min(om[0], om[-1])), float(max(om[0], om[-1])))
    breaks = np.linspace(u_range[0], u_range[1], n_panels + 1)
    t, w = np.polynomial.legendre.leggauss(order)
    lo, hi = breaks[:-1, None], breaks[1:, None]
    u = ((lo + hi) / 2 + (hi - lo) / 2 * t).ravel()
    increasing = om[-1] > om[0]
    oms, rs = (om, fine) if increasing else (om[::-1], fine[::-1])
    r = np.interp(u, oms, rs)
    # Newton polish of Omega(r) = u
    for _ in range(6):
        h = 1e-6
        f = profile.omega_at(r) - u
        df = (profile.omega_at(r + h) - profile.omega_at(np.maximum(r - h, 0.0))) / (r + h - np.maximum(r - h, 0.0))
        step = np.where(np.abs(df) > 1e-14, f / df, 0.0)
        r = np.clip(r - step, 0.0, None)
    v = (r**2).reshape(n_panels, order)
    dmat = _differentiation_matrix(t)
    dv_dt = v @ dmat.T
    dv_du = dv_dt * (2.0 / (hi - lo))
    # the grid is ascending in u; when Omega decreases, r runs backwards and the Jacobian flips sign
    density = 0.5 * np.abs(dv_du.ravel())
    measure = density * ((hi - lo) / 2 * w).ravel()
    return OmegaGrid(breaks, order, u, r, density, measure, t, w, _barycentric_weights(t))


# ---------------------------------------------------------------------------
# Two-particle fields and the resolvent
# ---------------------------------------------------------------------------


@dataclass
class TwoParticleField:
    """``h(x, y) = sum_pairs h_p(s, r) exp(i k1 phi + i k2 theta)`` with ``y`` on an ``OmegaGrid``."""

    s: np.ndarray
    pairs: list
    values: np.ndarray  # (pairs, len s, len grid)
    grid: OmegaGrid


@dataclass
class ResolventSolution:
    """Output of the resolvent in factored form ``u = Phi * R0`` per pair.

    ``R0 = prefactor / (u - z)`` for ``k2 != 0`` and the scalar ``1 / (i k1 Omega(s) + omega)`` otherwise.
    """

    field: TwoParticleField
    numerators: np.ndarray  # Phi, same shape as field.values
    poles: np.ndarray  # (pairs, len s) complex, nan for k2 = 0
    prefactors: np.ndarray  # (pairs,) complex
    diagonal: np.ndarray  # (pairs, len s) used when k2 = 0
    neumann_ratios: list
    n_terms: list
    omega: complex
    coupling: float

    def values(self) -> np.ndarray:
        g = self.field.grid
        out = np.empty_like(self.numerators)
        for p, (k1, k2) in enumerate(self.field.pairs):
            if k2 == 0:
                out[p] = self.numerators[p] / self.diagonal[p][:, None]
            else:
                out[p] = self.prefactors[p] * self.numerators[p] / (g.u[None, :] - self.poles[p][:, None])
        return out

    def integrate(self, weight: np.ndarray) -> np.ndarray:
        """``int weight_p(s, r) u_p(s, r) r dr`` per pair and ``s`` with product integration."""
        g = self.field.grid
        out = np.empty(self.numerators.shape[:2], dtype=complex)
        for p, (k1, k2) in enumerate(self.field.pairs):
            smooth = weight[p] * self.numerators[p]
            if k2 == 0:
                out[p] = (smooth @ g.measure) / self.diagonal[p]
            else:
                c = g.cauchy_weights(self.poles[p])  # (s, nodes)
                out[p] = self.prefactors[p] * np.sum(c * smooth * g.density[None, :], axis=1)
        return out


def _it_matrix(kernel: PlaneKernel, profile: EquilibriumProfile, grid: OmegaGrid, k2: int, n_angles: int):
    """Dense kernel ``M`` with ``((iT)_{k2} g)(r_i) = sum_j M_ij g(r_j) * (r dr weight)`` excluding weights.

    ``(iT)_m g(r) = Omega(r) 2 pi int kappa_hat_m(r, r') g(r') mu(r') r' dr'`` with
    ``kappa_hat_m = -i sign(m) kappa_|m|``.
    """
    m = abs(k2)
    key = ("kappa", id(kernel), id(profile), n_angles)
    kap_all = grid.cache.get(key)
    if kap_all is None or kap_all.shape[0] <= m:
        kap_all = kappa_modes(kernel, grid.r, grid.r, max(m, 16), n_angles)
        kap_all = 0.5 * (kap_all + np.swapaxes(kap_all, 1, 2))
        mu = profile.mu_at(grid.r)
        om = profile.omega_at(grid.r)
        kap_all = 2 * np.pi * om[None, :, None] * kap_all * mu[None, None, :]
        grid.cache[key] = kap_all
    sign = 1.0 if k2 > 0 else -1.0
    return (-1j * sign) * kap_all[m]


def resolvent_L2(profile: EquilibriumProfile, kernel: PlaneKernel, omega: complex, source: TwoParticleField,
                 coupling: float | None = None, tol: float = 1e-13, max_terms: int = 200,
                 n_angles: int = 128, direct: bool = False) -> ResolventSolution:
    """Solve ``(i L2 + omega) u = source`` pair by pair.

    ``coupling`` multiplies ``T_beta`` on the second particle (default ``beta``).
    With ``direct=True`` the dense linear system is solved instead of summing
    the Neumann series (used as a cross-check).
    """
    omega = complex(omega)
    if omega.real == 0.0:
        raise ValueError("Re omega must be nonzero")
    beta = profile.beta if coupling is None else float(coupling)
    g = source.grid
    s = source.s
    om_s = profile.omega_at(s)
    npairs = len(source.pairs)
    numer = np.zeros_like(source.values, dtype=complex)
    poles = np.full((npairs, s.size), np.nan + 0j)
    pref = np.zeros(npairs, dtype=complex)
    diag = np.ones((npairs, s.size), dtype=complex)
    ratios, terms = [], []
    for p, (k1, k2) in enumerate(source.pairs):
        src = np.asarray(source.values[p], dtype=complex)
        if k2 == 0:
            # T_0 vanishes: the operator is diagonal
            if k1 == 0 and np.any(src != 0):
                raise KernelContentError("source has content on the (0, 0) pair, which lies in the kernel")
            diag[p] = 1j * k1 * om_s + omega
            numer[p] = src
            ratios.append([])
            terms.append(0)
            continue
        pref[p] = 1.0 / (1j * k2)
        z = -k1 * om_s / k2 + 1j * omega / k2
        poles[p] = z
        if beta == 0.0:
            numer[p] = src
            ratios.append([])
            terms.append(0)
            continue
        mat = _it_matrix(kernel, profile, g, k2, n_angles)  # (nodes, nodes)
        c = g.cauchy_weights(z) * g.density[None, :] * pref[p]  # (s, nodes): integral weights of R0

        def apply(phi):
            return beta * (phi * c) @ mat.T

        if direct:
            out = np.empty_like(src)
            eye = np.eye(g.u.size)
            for i in range(s.size):
                out[i] = np.linalg.solve(eye + beta * mat * c[i][None, :], src[i])
            numer[p] = out
            ratios.append([])
            terms.append(0)
            continue
        term = src.copy()
        total = src.copy()
        hist = []
        prev = np.max(np.abs(term))
        for k in range(1, max_terms + 1):
            term = -apply(term)
            total += term
            size = np.max(np.abs(term))
            ratio = size / prev if prev > 0 else 0.0
            hist.append(float(ratio))
            prev = size
            if size <= tol * max(np.max(np.abs(total)), 1e-300):
                break
            if k >= 3 and ratio >= 1.0:
                raise NeumannDivergence(
                    f"Neumann series diverges on pair {(k1, k2)} (term ratio {ratio:.3f}); use a smaller beta")
        else:
            raise NeumannDivergence(f"Neumann series did not converge in {max_terms} terms on pair {(k1, k2)}")
        numer[p] = total
        ratios.append(hist)
        terms.append(len(hist))
    return ResolventSolution(source, numer, poles, pref, diag, ratios, terms, omega, beta)


def resolvent_residual(profile: EquilibriumProfile, kernel: PlaneKernel, sol: ResolventSolution,
                       n_angles: int = 128) -> float:
    """Relative sup residual of ``(i L2 + omega) u - source`` on the grid.

    The diagonal part is applied pointwise to ``u`` and the integral part by
    product integration of ``u`` against the kernel of ``T_beta``.
    """
    src = sol.field
    g = src.grid
    u_vals = sol.values()
    om_s = profile.omega_at(src.s)
    om_r = profile.omega_at(g.r)
    worst = 0.0
    for p, (k1, k2) in enumerate(src.pairs):
        lhs = (1j * k1 * om_s[:, None] + 1j * k2 * om_r[None, :] + sol.omega) * u_vals[p]
        if k2 != 0 and sol.coupling != 0.0:
            mat = _it_matrix(kernel, profile, g, k2, n_angles)
            c = g.cauchy_weights(sol.poles[p]) * g.density[None, :] * sol.prefactors[p]
            lhs = lhs + sol.coupling * (sol.numerators[p] * c) @ mat.T
        scale = max(np.max(np.abs(src.values[p])), 1e-300)
        worst = max(worst, float(np.max(np.abs(lhs - src.values[p])) / scale))
    return worst


# ---------------------------------------------------------------------------
# The coefficient a_beta
# ---------------------------------------------------------------------------


@dataclass
class CoefficientField:
    """Radial coefficient ``a_beta`` with its epsilon-schedule diagnostics."""

    r: np.ndarray
    values: np.ndarray  # Richardson extrapolation of the last two schedule entries
    eps_schedule: np.ndarray
    by_eps: np.ndarray  # (len schedule, len r)
    gaps: np.ndarray  # sup_r |a(eps_k) - a(eps_{k+1})|
    flagged: bool
    neumann_terms: int
    max_neumann_ratio: float
    resolvent_residual: float
    meta: dict = field(default_factory=dict)

    @property
    def stability_gap(self) -> float:
        return float(self.gaps[-1]) if self.gaps.size else 0.0

    def to_csv_rows(self):
        last = self.by_eps[-1] - self.by_eps[-2] if self.by_eps.shape[0] > 1 else np.zeros_like(self.values)
        return [(float(r), float(a), float(abs(g))) for r, a, g in zip(self.r, self.values, last)]


def _sources(kernel: PlaneKernel, wb: RenormalizedPotential | None, s, grid: OmegaGrid, n_max: int, n_angles: int):
    """Modes ``n = 1..n_max`` of ``H_0`` and ``H_beta`` on the pair ``(n, -n)``: ``i n w_n(s, r) / s``."""
    n = np.arange(1, n_max + 1)
    w = radial_modes_of_pair_function(kernel.w_radial, s, grid.r, n_max, n_angles)[1:]
    h0 = 1j * n[:, None, None] * w / s[None, :, None]
    if wb is None:
        hb = h0.copy()
    else:
        wbm = wb.modes_at(s, grid.r)
        if wbm.shape[0] <= n_max:
            raise ValueError("renormalized potential carries fewer angular modes than requested")
        hb = 1j * n[:, None, None] * wbm[1: n_max + 1] / s[None, :, None]
    return h0, hb


def a_beta_at_eps(profile: EquilibriumProfile, kernel: PlaneKernel, wb: RenormalizedPotential | None, eps: float,
                  s, grid: OmegaGrid, n_max: int = 16, n_angles: int = 128, direct: bool = False):
    """``a(s) = int_{S^1} int H_0 Re[(i L2 + eps)^{-1} H_beta] mu dy d sigma`` for one ``eps``.

    Only the pairs ``(n, -n)`` carry content; the ``-n`` pair is the complex
    conjugate of the ``n`` pair, so ``a = (2 pi)^2 2 Re sum_{n>=1} <h0_n, u_n>``.
    """
    s = np.asarray(s, dtype=float)
    h0, hb = _sources(kernel, wb, s, grid, n_max, n_angles)
    pairs = [(int(n), -int(n)) for n in range(1, n_max + 1)]
    src = TwoParticleField(s, pairs, hb, grid)
    sol = resolvent_L2(profile, kernel, eps, src, n_angles=n_angles, direct=direct)
    mu = profile.mu_at(grid.r)
    inner = sol.integrate(np.conj(h0) * mu[None, None, :])  # (n, s)
    a = (2 * np.pi) ** 2 * 2.0 * np.real(inner.sum(axis=0))
    return a, sol


def compute_a_beta(profile: EquilibriumProfile, kernel: PlaneKernel, wb: RenormalizedPotential | None,
                   eps_schedule=(1e-2, 5e-3, 2.5e-3), s=None, n_panels: int = 24, order: int = 16,
                   n_max: int = 16, n_angles: int = 128, gap_tol: float = 0.05, require_class: bool = True,
                   r_max: float | None = None) -> CoefficientField:
    """Coefficient ``a_beta`` on radii ``s`` with epsilon halving and Richardson extrapolation.

    The flag is raised when the last stability gap exceeds ``gap_tol`` times
    the size of ``a`` or when the gaps fail to decrease along the schedule.
    """
    if require_class:
        cls = classify_equilibrium(profile)
        if cls.tag != "NonDegenerate":
            raise MeanFieldError(f"a_beta needs a NonDegenerate equilibrium, got {cls.tag}")
    eps = np.asarray(eps_schedule, dtype=float)
    if eps.size < 2 or np.any(np.diff(eps) >= 0):
        raise ValueError("eps_schedule must be decreasing with at least two entries")
    grid = omega_grid(profile, n_panels, order, r_max=r_max)
    if s is None:
        s = np.linspace(0.0, float(grid.r.max()), 41)[1:]
    s = np.asarray(s, dtype=float)
    rows, terms, ratio, resid = [], 0, 0.0, 0.0
    for e in eps:
        a, sol = a_beta_at_eps(profile, kernel, wb, e, s, grid, n_max, n_angles)
        rows.append(a)
        terms = max(terms, max(sol.n_terms) if sol.n_terms else 0)
        ratio = max([ratio] + [max(h) for h in sol.neumann_ratios if h])
        resid = max(resid, resolvent_residual(profile, kernel, sol, n_angles))
    by_eps = np.array(rows)
    gaps = np.max(np.abs(np.diff(by_eps, axis=0)), axis=1)
    values = 2.0 * by_eps[-1] - by_eps[-2]
    scale = max(float(np.max(np.abs(values))), 1e-300)
    flagged = bool(gaps[-1] > gap_tol * scale or np.any(np.diff(gaps) > 0))
    if flagged:
        log.warning("a_beta: limiting absorption not resolved on this grid (gaps %s)", gaps)
    meta = {"n_panels": n_panels, "order": order, "n_max": n_max, "circle_measure": "arc length (2 pi)",
            "u_range": [float(grid.breaks[0]), float(grid.breaks[-1])]}
    return CoefficientField(s, values, eps, by_eps, gaps, flagged, terms, ratio, resid, meta)
