"""Truncated limiting hierarchy for a tagged particle in a uniform background.

State vectors live in a truncated Fock space.  Level ``m`` holds a function of
the tagged mode ``k1`` and ``m - 1`` background modes, symmetric in the
background slots, with norm ``||h^m||^2 / (m-1)!``.  Coefficients are stored
once per background multiset, so the squared norm of a stored entry carries
the weight ``1 / prod_q n_q!`` (``n_q`` = multiplicity of mode ``q``).

The generator ``G = iS`` acts on mode coefficients as

* absorption (level ``m+1 -> m``):
  ``(G+ g)(P) = -sum_i sum_q W_hat(q) (perp(q).P_i) g(P with P_i -> P_i - q, q)``
* emission (level ``m-1 -> m``):
  ``(G- g)(P) = sum_{j>=2} sum_{i!=j} W_hat(P_j) (perp(P_j).P_i) g(P without slot j, P_i -> P_i + P_j)``

with ``perp(k) = (-k2, k1)``.  Transfers that leave the sup-norm ball of radius
``Lambda`` are dropped.  ``G`` is real and anti-Hermitian in the weighted inner
product, so ``S = -iG`` is Hermitian and ``g(tau) = exp(tau G) g0``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .kernels import TorusKernel

Mode = tuple[int, int]
MAX_COEFFICIENTS = 10**7


class BasisTooLarge(ValueError):
    pass


class KrylovError(RuntimeError):
    pass


def ball(cutoff: int) -> list[Mode]:
    return [(a, b) for a in range(-cutoff, cutoff + 1) for b in range(-cutoff, cutoff + 1)]


@dataclass
class FockBasis:
    cutoff: int
    max_level: int
    modes: list = field(init=False)
    background_modes: list = field(init=False)
    keys: list = field(init=False)  # per level: list of (k1, multiset)
    index: list = field(init=False)  # per level: dict key -> local offset
    offsets: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.cutoff < 1 or self.max_level < 1:
            raise ValueError("need cutoff >= 1 and max_level >= 1")
        self.modes = ball(self.cutoff)
        self.background_modes = [m for m in self.modes if m != (0, 0)]
        nb = len(self.background_modes)
        dims = [len(self.modes) * math.comb(nb + m - 2, m - 1) for m in range(1, self.max_level + 1)]
        if sum(dims) > MAX_COEFFICIENTS:
            raise BasisTooLarge(f"basis would hold {sum(dims)} coefficients (limit {MAX_COEFFICIENTS})")
        self.keys, self.index = [], []
        weights = []
        for m in range(1, self.max_level + 1):
            level_keys = [(k, ms) for k in self.modes
                          for ms in itertools.combinations_with_replacement(self.background_modes, m - 1)]
            self.keys.append(level_keys)
            self.index.append({key: i for i, key in enumerate(level_keys)})
            weights.append([multiset_weight(ms) for _, ms in level_keys])
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        self.weights = np.concatenate([np.asarray(w, dtype=float) for w in weights])

    @property
    def dimensions(self) -> list[int]:
        return [len(k) for k in self.keys]

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def in_ball(self, k) -> bool:
        return max(abs(k[0]), abs(k[1])) <= self.cutoff

    def position(self, level: int, k1, multiset) -> int | None:
        loc = self.index[level - 1].get((tuple(k1), tuple(sorted(multiset))))
        return None if loc is None else int(self.offsets[level - 1] + loc)

    def level_slice(self, level: int) -> slice:
        return slice(int(self.offsets[level - 1]), int(self.offsets[level]))


def multiset_weight(multiset) -> float:
    """Norm weight ``1 / prod_q n_q!`` of one stored multiset coefficient."""
    w = 1.0
    for _, grp in itertools.groupby(sorted(multiset)):
        w /= math.factorial(len(list(grp)))
    return w


def enumerate_basis(cutoff: int, max_level: int) -> FockBasis:
    return FockBasis(cutoff, max_level)


@dataclass
class FockVector:
    basis: FockBasis
    data: np.ndarray

    def level(self, m: int) -> np.ndarray:
        return self.data[self.basis.level_slice(m)]

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.basis.weights * np.abs(self.data) ** 2)))

    def inner(self, other: "FockVector") -> complex:
        return complex(np.sum(self.basis.weights * np.conj(self.data) * other.data))


def _perp_dot(q, p) -> float:
    return -q[1] * p[0] + q[0] * p[1]


@dataclass
class HierarchyOperator:
    """Assembled generator ``G = iS`` (sparse, real) with absorption and emission parts."""

    basis: FockBasis
    absorb: sp.csr_matrix  # G+: couples level m+1 -> m
    emit: sp.csr_matrix  # G-: couples level m-1 -> m

    @property
    def generator(self) -> sp.csr_matrix:
        return (self.absorb + self.emit).tocsr()

    def apply_generator(self, x: np.ndarray) -> np.ndarray:
        return self.absorb @ x + self.emit @ x

    def apply_S(self, x: np.ndarray) -> np.ndarray:
        """``S x = -i G x``."""
        return -1j * self.apply_generator(x)

    def symmetrized(self) -> sp.csr_matrix:
        """Real antisymmetric ``J = D^{1/2} G D^{-1/2}`` in the orthonormal coordinates."""
        d = np.sqrt(self.basis.weights)
        return (sp.diags(d) @ self.generator @ sp.diags(1.0 / d)).tocsr()

    def hermitian_dense(self) -> np.ndarray:
        """Dense Hermitian matrix of ``S`` in orthonormal coordinates."""
        return -1j * self.symmetrized().toarray()

    def adjoint_residual(self, n_pairs: int = 100, seed: int = 0) -> float:
        """Max relative ``|<Sh, g> - <h, Sg>|`` over random complex pairs."""
        rng = np.random.default_rng(seed)
        w = self.basis.weights
        worst = 0.0
        for _ in range(n_pairs):
            h = rng.standard_normal(self.basis.size) + 1j * rng.standard_normal(self.basis.size)
            g = rng.standard_normal(self.basis.size) + 1j * rng.standard_normal(self.basis.size)
            sh, sg = self.apply_S(h), self.apply_S(g)
            lhs = np.sum(w * np.conj(sh) * g)
            rhs = np.sum(w * np.conj(h) * sg)
            scale = np.sqrt(np.sum(w * np.abs(sh) ** 2) * np.sum(w * np.abs(g) ** 2)) or 1.0
            worst = max(worst, abs(lhs - rhs) / scale)
        return worst


def build_operator(kernel: TorusKernel, basis: FockBasis) -> HierarchyOperator:
    """Assemble absorption and emission parts of the generator on ``basis``."""
    what = kernel.w_hat()
    qs = [q for q in sorted(what) if basis.in_ball(q) and what[q] != 0.0]
    rows_a, cols_a, vals_a = [], [], []
    rows_e, cols_e, vals_e = [], [], []
    for m in range(1, basis.max_level + 1):
        for (k1, ms) in basis.keys[m - 1]:
            out = basis.position(m, k1, ms)
            slots = [k1] + list(ms)
            # absorption from level m + 1
            if m < basis.max_level:
                for i, p in enumerate(slots):
                    for q in qs:
                        c = -what[q] * _perp_dot(q, p)
                        if c == 0.0:
                            continue
                        new = (p[0] - q[0], p[1] - q[1])
                        if not basis.in_ball(new) or (i > 0 and new == (0, 0)):
                            continue
                        moved = slots.copy()
                        moved[i] = new
                        col = basis.position(m + 1, moved[0], moved[1:] + [q])
                        rows_a.append(out), cols_a.append(col), vals_a.append(c)
            # emission from level m - 1
            if m > 1:
                for j in range(1, m):
                    pj = slots[j]
                    wj = what.get(pj, 0.0)
                    if wj == 0.0:
                        continue
                    for i in range(m):
                        if i == j:
                            continue
                        c = wj * _perp_dot(pj, slots[i])
                        if c == 0.0:
                            continue
                        new = (slots[i][0] + pj[0], slots[i][1] + pj[1])
                        if not basis.in_ball(new) or (i > 0 and new == (0, 0)):
                            continue
                        moved = slots.copy()
                        moved[i] = new
                        del moved[j]
                        col = basis.position(m - 1, moved[0], moved[1:])
                        rows_e.append(out), cols_e.append(col), vals_e.append(c)
    n = basis.size
    absorb = sp.coo_matrix((vals_a, (rows_a, cols_a)), shape=(n, n)).tocsr()
    emit = sp.coo_matrix((vals_e, (rows_e, cols_e)), shape=(n, n)).tocsr()
    return HierarchyOperator(basis, absorb, emit)


def initial_state(f0, basis: FockBasis) -> FockVector:
    """Level 1 carries the Fourier coefficients of ``f0``; higher levels vanish."""
    data = np.zeros(basis.size, dtype=complex)
    for k in f0.modes():
        c = f0.coefficient(k)
        if c == 0:
            continue
        if not basis.in_ball(k):
            raise ValueError(f"mode {k} of the initial density lies outside the cutoff {basis.cutoff}")
        data[basis.position(1, k, ())] = c
    return FockVector(basis, data)


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------


def _eigh(mat: np.ndarray):
    """Hermitian eigendecomposition; the MRRR driver is markedly faster than the default here."""
    return scipy.linalg.eigh(mat, driver="evr")


@dataclass
class EigenPropagator:
    """Exact propagator from a Hermitian eigendecomposition of ``S``."""

    operator: HierarchyOperator
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # orthonormal coordinates

    @classmethod
    def build(cls, operator: HierarchyOperator) -> "EigenPropagator":
        lam, vec = _eigh(operator.hermitian_dense())
        return cls(operator, lam, vec)

    def propagate(self, g0: FockVector, tau: float) -> FockVector:
        d = np.sqrt(self.operator.basis.weights)
        c = self.eigenvectors.conj().T @ (d * g0.data)
        y = self.eigenvectors @ (np.exp(1j * self.eigenvalues * tau) * c)
        return FockVector(g0.basis, y / d)


def _lanczos(matvec, v0: np.ndarray, m: int):
    """Lanczos with full reorthogonalisation; returns basis, tridiagonal and residual norm."""
    n = v0.size
    beta0 = np.linalg.norm(v0)
    V = np.zeros((n, m + 1), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[:, 0] = v0 / beta0
    for j in range(m):
        w = matvec(V[:, j])
        alpha[j] = np.real(np.vdot(V[:, j], w))
        w = w - alpha[j] * V[:, j] - (beta[j - 1] * V[:, j - 1] if j > 0 else 0)
        w -= V[:, : j + 1] @ (V[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-13 * max(1.0, abs(alpha[j])):
            return V[:, : j + 1], alpha[: j + 1], beta[:j], 0.0
        V[:, j + 1] = w / beta[j]
    return V[:, :m], alpha, beta[: m - 1], beta[m - 1]


def _expm_tridiag(alpha, beta, tau):
    t = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    lam, u = np.linalg.eigh(t)
    return u @ (np.exp(1j * lam * tau) * u[0].conj())


def evolve(operator: HierarchyOperator, g0: FockVector, taus, krylov_dim: int = 30, tol: float = 1e-12,
           method: str = "auto", max_dim: int = 120) -> list[FockVector]:
    """``g(tau) = exp(i tau S) g0`` on every entry of ``taus`` (non-negative, increasing).

    ``method='eigh'`` uses the dense eigendecomposition (bases below 5000
    coefficients); otherwise a Lanczos propagator with adaptive steps is used.
    The local error per step is estimated by the residual term of the Krylov
    approximation; if steps shrink below ``1e-6`` the subspace is enlarged up to
    ``max_dim`` before giving up.
    """
    taus = np.asarray(taus, dtype=float)
    if np.any(taus < 0) or np.any(np.diff(taus) < 0):
        raise ValueError("taus must be non-negative and non-decreasing")
    if method == "auto":
        method = "eigh" if operator.basis.size < 5000 else "krylov"
    if method == "eigh":
        prop = EigenPropagator.build(operator)
        return [prop.propagate(g0, t) for t in taus]
    j = operator.symmetrized()
    d = np.sqrt(operator.basis.weights)

    def matvec(v):
        return -1j * (j @ v)

    y = d * g0.data.astype(complex)
    t_now = 0.0
    out = []
    step = 0.5
    dim = krylov_dim
    for target in taus:
        while t_now < target - 1e-15:
            nrm = np.linalg.norm(y)
            if nrm == 0.0:
                t_now = target
                break
            V, alpha, beta, resid = _lanczos(matvec, y, dim)
            h = min(step, target - t_now)
            while True:
                c = _expm_tridiag(alpha, beta, h)
                err = nrm * resid * abs(c[-1])
                if err <= tol * max(nrm, 1.0) or resid == 0.0:
                    break
                h *= 0.5
                if h < 1e-6:
                    if dim >= max_dim:
                        raise KrylovError("Krylov propagation failed to reach the requested tolerance")
                    dim = min(2 * dim, max_dim)
                    V, alpha, beta, resid = _lanczos(matvec, y, dim)
                    h = min(step, target - t_now)
            y = nrm * (V @ c)
            t_now += h
            step = min(2 * h, 4.0) if h >= step else step
        out.append(FockVector(g0.basis, y / d))
    return out


# ---------------------------------------------------------------------------
# Observables and diagnostics
# ---------------------------------------------------------------------------


@dataclass
class TaggedObservable:
    modes: list
    coefficients: np.ndarray

    def coefficient(self, k) -> complex:
        return complex(self.coefficients[self.modes.index((int(k[0]), int(k[1])))])

    def on_grid(self, n: int = 64) -> np.ndarray:
        """Real-space samples on an ``n x n`` grid by direct summation over modes."""
        g = 2 * np.pi * np.arange(n) / n
        x = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        ks = np.array(self.modes, dtype=float)
        return np.real(np.exp(1j * (x @ ks.T)) @ self.coefficients)

    def on_grid_fft(self, n: int = 64) -> np.ndarray:
        """Same samples via an inverse FFT of the coefficient array."""
        arr = np.zeros((n, n), dtype=complex)
        for k, c in zip(self.modes, self.coefficients):
            arr[k[0] % n, k[1] % n] += c
        return np.real(np.fft.ifft2(arr) * n * n)


def tagged_observable(g: FockVector) -> TaggedObservable:
    return TaggedObservable(list(g.basis.modes), g.level(1).copy())


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray
    cluster_values: np.ndarray
    cluster_weights: np.ndarray  # |<h, P_lambda g0>|^2
    weight_sum: float
    T_list: np.ndarray
    cesaro: np.ndarray  # quadrature of the time average
    cesaro_closed_form: np.ndarray
    deviation: np.ndarray  # |cesaro - weight_sum|
    decay_exponent: float | None
    max_imag_eigenvalue: float

    def to_json_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "cluster_values": self.cluster_values.tolist(),
            "cluster_weights": self.cluster_weights.tolist(),
            "weight_sum": self.weight_sum,
            "T": self.T_list.tolist(),
            "cesaro": self.cesaro.tolist(),
            "cesaro_closed_form": self.cesaro_closed_form.tolist(),
            "deviation": self.deviation.tolist(),
            "decay_exponent": self.decay_exponent,
        }


def spectral_diagnostics(operator: HierarchyOperator, g0: FockVector, h: FockVector, T_list,
                         cluster_tol: float = 1e-9, nodes_per_unit: int = 8) -> SpectralReport:
    """Eigen-decomposition, eigenweights and Cesaro averages of ``|<h, g(tau)>|^2``."""
    mat = operator.hermitian_dense()
    # Bendixson: |Im lambda| <= ||(M - M^H)/2||_2 <= its Frobenius norm
    max_imag = float(np.linalg.norm(0.5 * (mat - mat.conj().T)))
    lam, vec = _eigh(mat)
    d = np.sqrt(operator.basis.weights)
    a = vec.conj().T @ (d * g0.data)
    b = vec.conj().T @ (d * h.data)
    contrib = np.conj(b) * a  # <h, P_i g0> per eigenvector
    # group numerically degenerate eigenvalues into spectral projections
    values, coeffs = [], []
    start = 0
    for i in range(1, lam.size + 1):
        if i == lam.size or lam[i] - lam[i - 1] > cluster_tol:
            values.append(lam[start:i].mean())
            coeffs.append(contrib[start:i].sum())
            start = i
    values, coeffs = np.array(values), np.array(coeffs)
    weights = np.abs(coeffs) ** 2
    wsum = float(weights.sum())

    def overlap(tau):
        return np.exp(1j * np.outer(tau, values)) @ coeffs

    T_list = np.asarray(T_list, dtype=float)
    ces, closed = [], []
    t_gl, w_gl = np.polynomial.legendre.leggauss(16)
    for T in T_list:
        panels = max(1, int(np.ceil(T * nodes_per_unit / 16)))
        edges = np.linspace(0.0, T, panels + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        tau = ((lo + hi) / 2 + (hi - lo) / 2 * t_gl).ravel()
        wts = ((hi - lo) / 2 * w_gl).ravel()
        ces.append(float(wts @ np.abs(overlap(tau)) ** 2) / T)
        diff = values[:, None] - values[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            kern = np.where(diff == 0, 1.0, (np.exp(1j * diff * T) - 1) / (1j * diff * T))
        closed.append(float(np.real(coeffs @ kern @ np.conj(coeffs))))
    ces, closed = np.array(ces), np.array(closed)
    dev = np.abs(ces - wsum)
    exponent = None
    if T_list.size >= 2 and np.all(dev > 0):
        exponent = float(-np.polyfit(np.log(T_list), np.log(dev), 1)[0])
    return SpectralReport(lam, values, weights, wsum, T_list, ces, closed, dev, exponent, max_imag)
