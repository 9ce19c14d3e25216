"""Marginals, cluster (cumulant) inversion and N-scaling diagnostics in Fourier modes.

Mode tensors are dictionaries keyed by mode tuples ``(k1, l2, ..., lm)``; ``k1``
belongs to the tagged particle and the remaining slots to background
particles.  Values are arrays over the output times.  In the uniform setting a
marginal evaluated at a background mode ``l_j = 0`` is the marginal of lower
order with slot ``j`` integrated out, which makes the cluster expansion
triangular in mode space.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .effective.torus import diffusion_matrix_torus
from .kernels import TorusKernel

Mode = tuple[int, int]
ZERO: Mode = (0, 0)


class MissingModesError(KeyError):
    pass


class ScalingError(ValueError):
    pass


def _canon(key) -> tuple:
    """Sort background slots so symmetric tensors share one key."""
    key = tuple((int(m[0]), int(m[1])) for m in key)
    return (key[0],) + tuple(sorted(key[1:]))


@dataclass
class ModeTensor:
    """Level-``m`` mode tensor with standard errors of real and imaginary parts."""

    level: int
    values: dict = field(default_factory=dict)
    se_re: dict = field(default_factory=dict)
    se_im: dict = field(default_factory=dict)

    def set(self, key, value, se_re=0.0, se_im=0.0):
        key = _canon(key)
        self.values[key] = np.asarray(value, dtype=complex)
        self.se_re[key] = np.asarray(se_re, dtype=float)
        self.se_im[key] = np.asarray(se_im, dtype=float)

    def get(self, key):
        return self.values[_canon(key)]

    def __contains__(self, key) -> bool:
        return _canon(key) in self.values

    def keys(self):
        return list(self.values)


@dataclass
class CorrelationEstimate(ModeTensor):
    """Cumulant tensor ``g^m`` over output times for an ``n_particles`` system."""

    times: np.ndarray | None = None
    n_particles: int | None = None

    def norm(self, debias: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """l2 norm over retained keys (all orderings of background slots) and its standard error.

        With ``debias`` the expected noise contribution ``se_re^2 + se_im^2`` is
        removed from every squared coefficient before summing.
        """
        sq = 0.0
        var = 0.0
        for key, v in self.values.items():
            mult = _multiplicity(key)
            s2 = self.se_re[key] ** 2 + self.se_im[key] ** 2
            sq = sq + mult * (np.abs(v) ** 2 - (s2 if debias else 0.0))
            # delta method for |v|^2
            var = var + mult**2 * 4 * ((v.real * self.se_re[key]) ** 2 + (v.imag * self.se_im[key]) ** 2)
        sq = np.maximum(np.asarray(sq, dtype=float), 0.0)
        nrm = np.sqrt(sq)
        se = np.where(nrm > 0, np.sqrt(var) / (2 * np.where(nrm > 0, nrm, 1.0)), np.sqrt(np.sqrt(var)))
        return nrm, se


def _multiplicity(key) -> int:
    """Number of distinct orderings of the background slots."""
    back = key[1:]
    counts = {}
    for m in back:
        counts[m] = counts.get(m, 0) + 1
    out = math.factorial(len(back))
    for c in counts.values():
        out //= math.factorial(c)
    return out


def marginals_from_moments(est, m_max: int = 3, required: Mapping[int, Sequence] | None = None) -> dict[int, ModeTensor]:
    """Marginal tensors ``f^1, ..., f^m_max`` from ensemble moment estimates.

    ``f^1(k)`` is the single moment, ``f^2(k, l)`` the background-averaged
    pair moment and ``f^3(k, l, q)`` the triple moment.  ``f^1(0) = 1`` is
    set exactly.  ``required`` lists keys per level that must be present.
    """
    if not 1 <= m_max <= 3:
        raise ValueError("m_max must be 1, 2 or 3")
    out = {1: ModeTensor(1)}
    out[1].set((ZERO,), np.ones(len(est.times)), np.zeros(len(est.times)), np.zeros(len(est.times)))
    for k, (mean, sr, si) in est.single.items():
        if k != ZERO:
            out[1].set((k,), mean, sr, si)
    sources = {2: est.pair, 3: est.triple}
    for m in range(2, m_max + 1):
        out[m] = ModeTensor(m)
        for key, (mean, sr, si) in sources[m].items():
            out[m].set(key, mean, sr, si)
    missing = []
    for m, keys in (required or {}).items():
        if m > m_max:
            continue
        missing += [(m, tuple(k)) for k in keys if k not in out[m]]
    if missing:
        raise MissingModesError(f"missing moment estimates: {missing}")
    return out


def _sub_key(key, subset) -> tuple:
    return (key[0],) + tuple(key[j] for j in subset)


def invert_cluster(marginals: Mapping[int, ModeTensor], m_max: int | None = None,
                   times=None, n_particles: int | None = None) -> list[CorrelationEstimate]:
    """Cumulants ``g^1..g^m_max`` by inclusion-exclusion over background slots.

    ``g^m(k, l) = sum_{sigma} (-1)^{m-1-|sigma|} f^{|sigma|+1}(k, l_sigma) prod_{j not in sigma} [l_j = 0]``.
    Every key of ``f^m`` produces a key of ``g^m``; keys with a zero
    background slot give exactly zero.  Standard errors are propagated from
    the marginal at the same key, which is the only surviving term when all
    background slots are nonzero.
    """
    m_max = m_max or max(marginals)
    out = []
    for m in range(1, m_max + 1):
        g = CorrelationEstimate(m, times=times, n_particles=n_particles)
        fm = marginals[m]
        for key in fm.keys():
            back = list(range(1, m))
            if any(key[j] == ZERO for j in back):
                g.set(key, np.zeros_like(fm.values[key]), np.zeros_like(fm.se_re[key]), np.zeros_like(fm.se_im[key]))
                continue
            total = np.zeros_like(fm.values[key])
            for size in range(m):
                for subset in itertools.combinations(back, size):
                    rest = [j for j in back if j not in subset]
                    if any(key[j] != ZERO for j in rest):
                        continue
                    sub = _sub_key(key, subset)
                    total = total + (-1) ** (m - 1 - size) * marginals[size + 1].get(sub)
            g.set(key, total, fm.se_re[key], fm.se_im[key])
        out.append(g)
    return out


def synthesize_marginals(correlations: Mapping[int, Mapping[tuple, complex]], keys_by_level: Mapping[int, Sequence]) -> dict[int, dict]:
    """Cluster expansion in mode space: ``f^m(k, l) = sum_sigma g^{|sigma|+1}(k, l_sigma) prod_{j not in sigma} [l_j = 0]``.

    ``correlations[n]`` maps canonical keys of level ``n`` to coefficients; keys
    absent from it are zero.
    """
    out = {}
    for m, keys in keys_by_level.items():
        table = {}
        for key in keys:
            key = _canon(key)
            back = list(range(1, m))
            total = 0j
            for size in range(m):
                for subset in itertools.combinations(back, size):
                    rest = [j for j in back if j not in subset]
                    if any(key[j] != ZERO for j in rest):
                        continue
                    total += correlations.get(size + 1, {}).get(_canon(_sub_key(key, subset)), 0.0)
            table[key] = total
        out[m] = table
    return out


# ---------------------------------------------------------------------------
# Scaling fits
# ---------------------------------------------------------------------------


@dataclass
class ScalingReport:
    n_values: np.ndarray
    norms: np.ndarray
    se: np.ndarray
    slope: float
    slope_se: float
    intercept: float
    level: int = 2
    derivative_order: int = 0

    def interval(self, z: float = 1.96) -> tuple[float, float]:
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "norm", "se"])
            for row in zip(self.n_values, self.norms, self.se):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2]))])


def scaling_report(n_values, norms, se=None, level: int = 2, derivative_order: int = 0) -> ScalingReport:
    """Weighted least-squares slope of ``log norm`` against ``log N``.

    Weights are ``(norm / se)^2`` (delta method).  When any standard error is
    zero the fit is unweighted and the slope error comes from the residuals.
    """
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(norms, dtype=float)
    s = np.zeros_like(y) if se is None else np.asarray(se, dtype=float)
    if np.unique(n).size < 3:
        raise ScalingError("need at least three distinct N values")
    if np.any(y <= 0) or np.any(~np.isfinite(y)):
        raise ScalingError("norms must be positive and finite for a log-log fit")
    x = np.log(n)
    ly = np.log(y)
    design = np.stack([np.ones_like(x), x], axis=1)
    if np.all(s > 0):
        sig = s / y
        w = 1.0 / sig**2
        cov = np.linalg.inv(design.T @ (design * w[:, None]))
        coef = cov @ (design.T @ (w * ly))
        slope_se = float(np.sqrt(cov[1, 1]))
    else:
        coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
        resid = ly - design @ coef
        dof = max(x.size - 2, 1)
        cov = np.linalg.inv(design.T @ design) * float(resid @ resid) / dof
        slope_se = float(np.sqrt(max(cov[1, 1], 0.0)))
    return ScalingReport(n, y, s, float(coef[1]), slope_se, float(coef[0]), level, derivative_order)


# ---------------------------------------------------------------------------
# Short-time derivatives
# ---------------------------------------------------------------------------


@dataclass
class ShortTimeDerivatives:
    d2: dict  # mode -> complex coefficient of d^2/dt^2 f^1 at t = 0
    d3: dict
    matrix: np.ndarray


def exact_short_time_derivatives(f0, kernel: TorusKernel, n_particles: int, cutoff: int | None = None) -> ShortTimeDerivatives:
    """``d2(k) = -(N-1)/N^2 (k.Ak) f0_hat(k)`` and ``d3 = 0`` for a uniform background.

    ``f0`` is a band-limited torus density (``modes()``/``coefficient(k)``).
    """
    a = diffusion_matrix_torus(kernel).matrix
    n = n_particles
    modes = [k for k in f0.modes() if cutoff is None or max(abs(k[0]), abs(k[1])) <= cutoff]
    d2, d3 = {}, {}
    for k in modes:
        kv = np.asarray(k, dtype=float)
        d2[k] = -(n - 1) / n**2 * float(kv @ a @ kv) * f0.coefficient(k)
        d3[k] = 0j
    return ShortTimeDerivatives(d2, d3, a)


@dataclass
class FiniteDifference:
    value: complex
    se_re: float
    se_im: float
    stencil_error: float


_D2 = {-1: 1.0, 0: -2.0, 1: 1.0}
_D3 = {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}
_D4 = {-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0}


def _stencil(est, mode, h, offsets: Mapping[int, float], power: int):
    t = np.asarray(est.times)
    w = np.zeros(t.size)
    for j, c in offsets.items():
        hit = np.flatnonzero(np.isclose(t, j * h, atol=1e-12))
        if hit.size != 1:
            raise MissingModesError(f"time {j * h} missing from the output grid")
        w[hit[0]] = c / h**power
    return est.se_of_combination(mode, w)


def finite_difference_derivatives(est, mode: Mode, h: float) -> dict[str, FiniteDifference]:
    """Central second and third time differences of ``f^1(mode)`` at ``t = 0``.

    The grid must contain ``{-2h, -h, 0, h, 2h}``.  Standard errors use the
    cross-time covariance of the single moment.  The truncation error of each
    stencil is estimated from the fourth and fifth differences that the same
    grid affords: ``h^2/12 |f''''|`` for the second difference and
    ``h^2/4 |f'''''|`` for the third, where the unavailable fifth derivative is
    bounded by ``|f''''| / h``.
    """
    d2 = _stencil(est, mode, h, _D2, 2)
    d3 = _stencil(est, mode, h, _D3, 3)
    d4 = _stencil(est, mode, h, _D4, 4)
    d4_bound = abs(d4[0]) + 3 * np.hypot(d4[1], d4[2])
    return {
        "d2": FiniteDifference(d2[0], d2[1], d2[2], h**2 / 12 * d4_bound),
        "d3": FiniteDifference(d3[0], d3[1], d3[2], h / 4 * d4_bound),
    }
