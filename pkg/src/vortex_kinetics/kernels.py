"""Interaction and external potentials with their divergence-free force fields.

Two geometries are supported:

* the torus ``[0, 2*pi)^2`` with normalized Lebesgue measure, where the pair
  potential ``W`` is a finite cosine series;
* the plane, where ``W`` and the confining potential ``V`` are radial profiles.

In both cases forces are ``K = -grad_perp W`` and ``F = -grad_perp V`` with
``grad_perp = (-d/dx2, d/dx1)``, hence ``K = (dW/dx2, -dW/dx1)``.

Fourier convention on the torus: ``g_hat(k) = int g(x) exp(-i k.x) dx`` with the
normalized measure, so ``g(x) = sum_k g_hat(k) exp(i k.x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

Mode = tuple[int, int]


class KernelError(ValueError):
    """Raised when a potential specification violates a structural requirement."""


def perp(k) -> np.ndarray:
    """Rotate a 2-vector (or stack of them) by +90 degrees: (k1, k2) -> (-k2, k1)."""
    k = np.asarray(k, dtype=float)
    return np.stack([-k[..., 1], k[..., 0]], axis=-1)


def canonical_mode(k: Mode) -> Mode:
    """Representative of the pair {k, -k}: first nonzero component positive."""
    k1, k2 = int(k[0]), int(k[1])
    if k1 > 0 or (k1 == 0 and k2 > 0):
        return (k1, k2)
    return (-k1, -k2)


# ---------------------------------------------------------------------------
# Torus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusKernel:
    """Pair potential ``W(x) = sum_k a_k cos(k.x)`` on the 2-torus.

    ``amplitudes`` maps canonical modes (one per pair ``{k, -k}``) to the real
    cosine amplitude ``a_k``.  The complex Fourier coefficients are
    ``W_hat(k) = W_hat(-k) = a_k / 2`` and the force modes are
    ``K_hat(k) = -i perp(k) W_hat(k)``.
    """

    amplitudes: Mapping[Mode, float]
    modes: np.ndarray = field(init=False, repr=False)  # (Q, 2) canonical modes
    coeffs: np.ndarray = field(init=False, repr=False)  # (Q,) cosine amplitudes

    def __post_init__(self):
        keys = sorted(self.amplitudes)
        modes = np.array(keys, dtype=int).reshape(-1, 2)
        coeffs = np.array([float(self.amplitudes[k]) for k in keys], dtype=float)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def is_zero(self) -> bool:
        return self.modes.shape[0] == 0 or not np.any(self.coeffs)

    def w_hat(self) -> dict[Mode, float]:
        """Full Fourier table ``k -> W_hat(k)`` over both signs of every mode."""
        table: dict[Mode, float] = {}
        for (k1, k2), a in zip(self.modes.tolist(), self.coeffs):
            table[(k1, k2)] = 0.5 * a
            table[(-k1, -k2)] = 0.5 * a
        return table

    def k_hat(self) -> dict[Mode, np.ndarray]:
        """Full table ``k -> K_hat(k)`` (complex 2-vectors)."""
        return {k: -1j * perp(k) * w for k, w in self.w_hat().items()}

    def potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.modes.shape[0] == 0:
            return np.zeros(x.shape[:-1])
        return np.cos(x @ self.modes.T) @ self.coeffs

    def force(self, x) -> np.ndarray:
        """``K(x) = sum_k a_k sin(k.x) perp(k)``; ``x`` has shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        if self.modes.shape[0] == 0:
            return np.zeros(x.shape)
        s = np.sin(x @ self.modes.T) * self.coeffs
        return s @ perp(self.modes)

    def force_jacobian(self, x) -> np.ndarray:
        """``dK_a/dx_b`` at ``x``; shape (..., 2, 2)."""
        x = np.asarray(x, dtype=float)
        if self.modes.shape[0] == 0:
            return np.zeros(x.shape + (2,))
        c = np.cos(x @ self.modes.T) * self.coeffs
        outer = perp(self.modes)[:, :, None] * self.modes[:, None, :]
        return np.einsum("...q,qab->...ab", c, outer)

    def grad_norm_bound(self) -> float:
        """Upper bound on ``sup_x ||grad K(x)||`` (spectral norm)."""
        if self.modes.shape[0] == 0:
            return 0.0
        return float(np.sum(np.abs(self.coeffs) * np.sum(self.modes**2, axis=1)))

    def sup_norm(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))


def make_torus_kernel(mode_table) -> TorusKernel:
    """Build a torus kernel from a cosine-amplitude table.

    ``mode_table`` is either a mapping ``(k1, k2) -> a`` or an iterable of
    ``[k1, k2, a]`` triples.  Amplitudes are cosine amplitudes:
    ``{(1, 0): 1, (0, 1): 1}`` is ``W = cos x1 + cos x2``.  Listing both ``k``
    and ``-k`` is allowed only with identical amplitudes and then denotes the
    same single cosine term.
    """
    items: list[tuple[Mode, object]]
    if isinstance(mode_table, Mapping):
        items = [(tuple(k), v) for k, v in mode_table.items()]
    else:
        items = []
        for entry in mode_table:
            if len(entry) != 3:
                raise KernelError(f"torus mode entry must be [k1, k2, amplitude], got {entry!r}")
            items.append(((entry[0], entry[1]), entry[2]))

    table: dict[Mode, float] = {}
    for k, value in items:
        if len(k) != 2 or any(int(c) != c for c in k):
            raise KernelError(f"mode {k!r} is not an integer 2-vector")
        k = (int(k[0]), int(k[1]))
        if k == (0, 0):
            raise KernelError("mode (0, 0) is not allowed: the force kernel must have zero mean")
        if isinstance(value, complex) or np.iscomplexobj(value):
            if np.imag(value) != 0:
                raise KernelError(f"complex amplitude at mode {k}: W must be real and even")
            value = np.real(value)
        value = float(value)
        if not np.isfinite(value):
            raise KernelError(f"non-finite amplitude at mode {k}")
        ck = canonical_mode(k)
        if ck in table and table[ck] != value:
            raise KernelError(
                f"modes {ck} and {(-ck[0], -ck[1])} carry different amplitudes: W must be even"
            )
        table[ck] = value
    table = {k: v for k, v in table.items() if v != 0.0}
    return TorusKernel(table)


def fourier_modes(kernel: TorusKernel) -> list[list]:
    """Canonical ``[k1, k2, amplitude]`` list; ``make_torus_kernel`` inverts it."""
    return [[int(k[0]), int(k[1]), float(a)] for k, a in zip(kernel.modes, kernel.coeffs)]


# ---------------------------------------------------------------------------
# Radial profiles on the plane
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialProfile:
    """Smooth radial function ``r -> f(r)`` with first and second derivatives.

    ``d1_over_r`` evaluates ``f'(r)/r`` and must be finite at ``r = 0``
    (where it equals ``f''(0)``).
    """

    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    d1_over_r: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: tuple = ()

    def __call__(self, r):
        return self.value(np.asarray(r, dtype=float))


def gaussian_profile(amplitude: float = 1.0, width: float = 1.0) -> RadialProfile:
    """``a * exp(-r^2 / (2 s^2))``."""
    a, s2 = float(amplitude), float(width) ** 2

    def value(r):
        return a * np.exp(-np.asarray(r) ** 2 / (2 * s2))

    def d1_over_r(r):
        return -value(r) / s2

    def d1(r):
        return np.asarray(r) * d1_over_r(r)

    def d2(r):
        r = np.asarray(r)
        return value(r) * (r**2 / s2 - 1.0) / s2

    return RadialProfile(value, d1, d2, d1_over_r, "gaussian", (a, float(width)))


def bump_profile(amplitude: float = 1.0, radius: float = 1.0) -> RadialProfile:
    """Compactly supported ``a * exp(1 - 1/(1 - (r/rho)^2))`` for ``r < rho``."""
    a, rho = float(amplitude), float(radius)

    def _parts(r):
        r = np.asarray(r, dtype=float)
        u = (r / rho) ** 2
        inside = u < 1.0
        uu = np.where(inside, u, 0.0)
        g = 1.0 / (1.0 - uu)
        v = np.where(inside, a * np.exp(1.0 - g), 0.0)
        return r, inside, g, v

    def value(r):
        return _parts(r)[3]

    def d1_over_r(r):
        # f' = f * (-2 r / rho^2) g^2
        _, inside, g, v = _parts(r)
        return np.where(inside, -2.0 * v * g**2 / rho**2, 0.0)

    def d1(r):
        return np.asarray(r, dtype=float) * d1_over_r(r)

    def d2(r):
        r, inside, g, v = _parts(r)
        # f'' = f*[(2 r g^2/rho^2)^2 - 2 g^2/rho^2 - 8 r^2 g^3/rho^4]
        t = 2.0 * r * g**2 / rho**2
        return np.where(inside, v * (t**2 - 2.0 * g**2 / rho**2 - 8.0 * r**2 * g**3 / rho**4), 0.0)

    return RadialProfile(value, d1, d2, d1_over_r, "bump", (a, rho))


def polynomial_profile(coefficients: Iterable[float]) -> RadialProfile:
    """Even polynomial ``sum_j c_j r^(2j+2) / (2j+2)``, e.g. ``[1, 1]`` gives r^2/2 + r^4/4."""
    c = [float(x) for x in coefficients]

    def value(r):
        r = np.asarray(r, dtype=float)
        return sum(cj * r ** (2 * j + 2) / (2 * j + 2) for j, cj in enumerate(c)) + 0.0 * r

    def d1_over_r(r):
        r = np.asarray(r, dtype=float)
        return sum(cj * r ** (2 * j) for j, cj in enumerate(c)) + 0.0 * r

    def d1(r):
        return np.asarray(r, dtype=float) * d1_over_r(r)

    def d2(r):
        r = np.asarray(r, dtype=float)
        return sum(cj * (2 * j + 1) * r ** (2 * j) for j, cj in enumerate(c)) + 0.0 * r

    return RadialProfile(value, d1, d2, d1_over_r, "polynomial", tuple(c))


def spline_profile(r_nodes, values) -> RadialProfile:
    """Cubic-spline profile from samples; ``f'(0) = 0`` is imposed as a clamped end."""
    from scipy.interpolate import CubicSpline

    r_nodes = np.asarray(r_nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    if r_nodes[0] != 0.0:
        raise KernelError("numeric radial profiles must start at r = 0")
    free = CubicSpline(r_nodes, values, bc_type="natural")
    slope0 = float(free(0.0, 1))
    scale = max(1.0, float(np.max(np.abs(values))))
    if abs(slope0) > 1e-6 * scale / max(r_nodes[1], 1e-12):
        raise KernelError(f"profile is not smooth at the origin: f'(0) = {slope0:.3e}")
    spl = CubicSpline(r_nodes, values, bc_type=((1, 0.0), "not-a-knot"))
    r_end = float(r_nodes[-1])

    def value(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, spl(np.minimum(r, r_end)), values[-1])

    def d1(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, spl(np.minimum(r, r_end), 1), 0.0)

    def d2(r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= r_end, spl(np.minimum(r, r_end), 2), 0.0)

    def d1_over_r(r):
        r = np.asarray(r, dtype=float)
        small = r < 1e-8
        return np.where(small, d2(np.zeros_like(r)), d1(r) / np.where(small, 1.0, r))

    return RadialProfile(value, d1, d2, d1_over_r, "spline", ())


@dataclass(frozen=True)
class PlaneKernel:
    """Radial pair potential on the plane and its force ``K(x) = -(W'(r)/r) perp(x)``."""

    w_radial: RadialProfile
    cutoff_radius: float

    def potential(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.w_radial.value(np.linalg.norm(x, axis=-1))

    def force(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.w_radial.d1_over_r(np.linalg.norm(x, axis=-1))
        return -g[..., None] * perp(x)

    def grad_norm_bound(self, r_max: float | None = None) -> float:
        """Sup of the spectral norm of ``grad K`` estimated on a fine radial grid."""
        r = np.linspace(0.0, r_max or self.cutoff_radius, 4001)
        g = np.abs(self.w_radial.d1_over_r(r))
        h = np.abs(self.w_radial.d2(r))
        return float(np.max(np.maximum(g, h)))

    def sup_norm(self) -> float:
        r = np.linspace(0.0, self.cutoff_radius, 4001)
        return float(np.max(np.abs(self.w_radial.value(r))))


def _cutoff(profile: RadialProfile, threshold: float = 1e-14) -> float:
    if profile.name == "gaussian":
        a, s = profile.params
        return float(s * np.sqrt(2.0 * np.log(max(abs(a), threshold) / threshold))) if a else 0.0
    if profile.name == "bump":
        return float(profile.params[1])
    r = np.linspace(0.0, 200.0, 200001)
    above = np.nonzero(np.abs(profile.value(r)) >= threshold)[0]
    if above.size == 0:
        return 0.0
    if above[-1] == r.size - 1:
        raise KernelError("profile does not decay below 1e-14 within r = 200")
    return float(r[above[-1] + 1])


def make_plane_kernel(w_radial: RadialProfile) -> PlaneKernel:
    """Wrap a radial profile as a plane interaction kernel after smoothness checks."""
    slope0 = float(np.asarray(w_radial.d1(np.array(0.0))))
    if abs(slope0) > 1e-12:
        raise KernelError(f"W'(0) = {slope0:.3e} != 0: profile not smooth at the origin")
    return PlaneKernel(w_radial, _cutoff(w_radial))


@dataclass(frozen=True)
class ExternalPotential:
    """Radial confining potential ``V`` with force ``F(x) = -(V'(r)/r) perp(x)``."""

    v_radial: RadialProfile

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.v_radial.value(np.linalg.norm(x, axis=-1))

    def force(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self.v_radial.d1_over_r(np.linalg.norm(x, axis=-1))
        return -g[..., None] * perp(x)

    def grad_norm_bound(self, r_max: float) -> float:
        r = np.linspace(0.0, r_max, 4001)
        return float(np.max(np.maximum(np.abs(self.v_radial.d1_over_r(r)), np.abs(self.v_radial.d2(r)))))


def make_external_potential(v_radial: RadialProfile) -> ExternalPotential:
    slope0 = float(np.asarray(v_radial.d1(np.array(0.0))))
    if abs(slope0) > 1e-12:
        raise KernelError(f"V'(0) = {slope0:.3e} != 0: potential not smooth at the origin")
    return ExternalPotential(v_radial)


def eval_force(kernel, x) -> np.ndarray:
    """Evaluate the force field of a torus or plane kernel at points ``x``."""
    return kernel.force(x)


def profile_from_spec(spec: Mapping) -> RadialProfile:
    """Build a radial profile from a config mapping such as ``{family: gaussian, amplitude: 1}``."""
    spec = dict(spec)
    family = spec.pop("family")
    if family == "gaussian":
        return gaussian_profile(spec.pop("amplitude", 1.0), spec.pop("width", 1.0))
    if family == "bump":
        return bump_profile(spec.pop("amplitude", 1.0), spec.pop("radius", 1.0))
    if family == "polynomial":
        return polynomial_profile(spec.pop("coefficients"))
    raise KernelError(f"unknown radial family {family!r}")
