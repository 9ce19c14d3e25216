"""Uniform-background (torus) effective objects: the diffusion matrix, the next-order matrix B and the wave law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kernels import TorusKernel, perp


@dataclass(frozen=True)
class DiffusionMatrix:
    """Real symmetric 2x2 matrix with provenance."""

    matrix: np.ndarray
    source: str = ""

    def quadratic(self, k) -> float:
        k = np.asarray(k, dtype=float)
        return float(k @ self.matrix @ k)

    def is_psd(self, tol: float = 1e-12) -> bool:
        return bool(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.T)).min() >= -tol)


def _force_table(kernel: TorusKernel):
    """Modes (M, 2) and force coefficients (M, 2) over both signs of every mode."""
    table = kernel.k_hat()
    modes = np.array(sorted(table), dtype=int).reshape(-1, 2)
    coef = np.array([table[tuple(m)] for m in modes.tolist()], dtype=complex).reshape(-1, 2)
    return modes, coef


def diffusion_matrix_torus(kernel: TorusKernel) -> DiffusionMatrix:
    """``A = int K (x) K`` on the torus via Parseval, ``sum_k K_hat(k) (x) conj(K_hat(k))``."""
    _, coef = _force_table(kernel)
    a = np.einsum("ka,kb->ab", coef, coef.conj()).real if coef.size else np.zeros((2, 2))
    return DiffusionMatrix(0.5 * (a + a.T), "torus: mean of K(x)K(x)^T")


def diffusion_matrix_realspace(kernel: TorusKernel, n_grid: int = 64) -> np.ndarray:
    """Grid average of ``K (x) K``; exact for band-limited kernels once ``n_grid`` exceeds twice the bandwidth."""
    g = 2 * np.pi * np.arange(n_grid) / n_grid
    x = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    k = kernel.force(x)
    return np.einsum("ija,ijb->ab", k, k) / n_grid**2


def next_order_B(kernel: TorusKernel) -> DiffusionMatrix:
    """Next-order correction matrix evaluated mode by mode.

    ``B_ab`` is the sum of four terms, with repeated indices ``d, g`` summed::

        int (d_g K_d)(d_d K_g)(K_a * K_b)
        - 2 (int d_d K_a d_g K_b)(int K_d K_g)
        - 2 int (d_d K_a)(d_g K_b)(K_d * K_g)
        - 2 int (d_d K_a)(d_g K_d)(K_g * K_b)

    where ``*`` is convolution on the torus.  A triple integral
    ``int f g h`` becomes ``sum_{p,q} f_hat(p) g_hat(q) h_hat(-p-q)`` and a
    convolution has coefficients ``f_hat g_hat``.
    """
    modes, coef = _force_table(kernel)
    if modes.shape[0] == 0:
        return DiffusionMatrix(np.zeros((2, 2)), "torus: next-order B")
    index = {tuple(m): i for i, m in enumerate(modes.tolist())}
    m = modes.shape[0]
    # grad[p, c, d] = coefficient of d_c K_d at mode p
    grad = 1j * modes[:, :, None] * coef[:, None, :]
    # pairs (p, q) with -p-q in the table
    ip, iq, ir = [], [], []
    for i in range(m):
        for j in range(m):
            key = (-modes[i, 0] - modes[j, 0], -modes[i, 1] - modes[j, 1])
            if key in index:
                ip.append(i), iq.append(j), ir.append(index[key])
    ip, iq, ir = (np.array(v, dtype=int) for v in (ip, iq, ir))
    conv = coef[:, :, None] * coef[:, None, :]  # (K_a * K_b)_hat at each mode

    b = np.zeros((2, 2), dtype=complex)
    if ip.size:
        gp, gq, cr = grad[ip], grad[iq], conv[ir]
        # term 1: (d_g K_d)(p) (d_d K_g)(q) (K_a * K_b)(r)
        t1 = np.einsum("ngd,ndg,nab->ab", gp, gq, cr)
        # term 3: (d_d K_a)(p) (d_g K_b)(q) (K_d * K_g)(r)
        t3 = np.einsum("nda,ngb,ndg->ab", gp, gq, cr)
        # term 4: (d_d K_a)(p) (d_g K_d)(q) (K_g * K_b)(r)
        t4 = np.einsum("nda,ngd,ngb->ab", gp, gq, cr)
        b += t1 - 2 * t3 - 2 * t4
    neg = np.array([index[(-a, -c)] for a, c in modes.tolist()])
    # int f g = sum_p f_hat(p) g_hat(-p)
    dd = np.einsum("pda,pgb->dgab", grad, grad[neg])
    kk = np.einsum("pd,pg->dg", coef, coef[neg])
    b -= 2 * np.einsum("dgab,dg->ab", dd, kk)
    return DiffusionMatrix(b.real, "torus: next-order B")


def next_order_B_realspace(kernel: TorusKernel, n_grid: int = 128) -> np.ndarray:
    """Independent grid evaluation of the four terms of ``B`` (FFT circular convolutions)."""
    g = 2 * np.pi * np.arange(n_grid) / n_grid
    x = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
    k = np.moveaxis(kernel.force(x), -1, 0)  # (2, n, n)
    jac = np.moveaxis(kernel.force_jacobian(x), (-2, -1), (0, 1))  # jac[a, b] = d_b K_a
    dk = np.swapaxes(jac, 0, 1)  # dk[c, d] = d_c K_d
    fk = np.fft.fft2(k)

    def conv(a, b):
        return np.real(np.fft.ifft2(fk[a] * fk[b])) / n_grid**2

    mean = lambda f: float(np.mean(f))  # noqa: E731
    out = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            s = 0.0
            for d in range(2):
                for c in range(2):
                    s += mean(dk[c, d] * dk[d, c] * conv(a, b))
                    s -= 2 * mean(dk[d, a] * dk[c, b]) * mean(k[d] * k[c])
                    s -= 2 * mean(dk[d, a] * dk[c, b] * conv(d, c))
                    s -= 2 * mean(dk[d, a] * dk[c, d] * conv(c, b))
            out[a, b] = s
    return out


@dataclass
class WaveSeries:
    """Modal solution ``f_hat(tau, k)`` of the wave law on the torus."""

    taus: np.ndarray
    modes: list
    values: np.ndarray  # (T, M) complex
    frequencies: np.ndarray  # (M,)

    def coefficient(self, k) -> np.ndarray:
        return self.values[:, self.modes.index((int(k[0]), int(k[1])))]

    def __call__(self, x) -> np.ndarray:
        """Density values, shape (T, ...) for points ``x`` of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        ph = np.exp(1j * (x @ np.array(self.modes, dtype=float).T))
        return np.real(np.einsum("...m,tm->t...", ph, self.values))

    def energy(self) -> np.ndarray:
        """``||d_tau f||^2 + <grad f, A grad f>`` at every tau (Parseval)."""
        w2 = self.frequencies**2
        amp = np.abs(self.values[0]) ** 2
        vel = w2 * np.sin(self.frequencies * self.taus[:, None]) ** 2 * amp
        pot = w2 * np.abs(self.values) ** 2
        return np.sum(vel + pot, axis=1)


def wave_evolve(f0, a: DiffusionMatrix | np.ndarray, taus) -> WaveSeries:
    """Exact modal solution with zero initial velocity: ``f_hat(tau, k) = f0_hat(k) cos(sqrt(k.Ak) tau)``."""
    mat = a.matrix if isinstance(a, DiffusionMatrix) else np.asarray(a, dtype=float)
    if np.linalg.eigvalsh(0.5 * (mat + mat.T)).min() < -1e-12:
        raise ValueError("diffusion matrix must be positive semidefinite")
    taus = np.asarray(taus, dtype=float)
    modes = f0.modes()
    c0 = np.array([f0.coefficient(k) for k in modes], dtype=complex)
    kk = np.array(modes, dtype=float)
    freq = np.sqrt(np.maximum(np.einsum("ma,ab,mb->m", kk, mat, kk), 0.0))
    values = c0[None, :] * np.cos(freq[None, :] * taus[:, None])
    return WaveSeries(taus, modes, values, freq)


def kernel_perp_modes(kernel: TorusKernel) -> np.ndarray:
    return perp(kernel.modes)
