"""Point-vortex N-body dynamics and ensemble Monte Carlo for Fourier moments.

Particle ``1`` is the tagged particle; particles ``2..N`` form the background.
Ensembles are processed in fixed-size blocks of samples.  Every block draws its
random numbers from its own counter-derived stream, so results do not depend on
how blocks are scheduled across worker threads, and block statistics are merged
in block order.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .kernels import ExternalPotential, PlaneKernel, TorusKernel, perp

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
THREADS_ENV = "VORTEX_KINETICS_THREADS"


class IntegrationError(RuntimeError):
    pass


class SamplingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Tagged-particle densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TorusDensity:
    """Band-limited density on the torus, ``f(x) = sum_k f_hat(k) exp(i k.x)``."""

    fourier: Mapping[tuple[int, int], complex]

    @classmethod
    def from_cosines(cls, amplitudes: Mapping[tuple[int, int], float] | None = None) -> "TorusDensity":
        """``f = 1 + sum_k a_k cos(k.x)`` from canonical modes."""
        table: dict[tuple[int, int], complex] = {(0, 0): 1.0 + 0j}
        for k, a in (amplitudes or {}).items():
            k = (int(k[0]), int(k[1]))
            if k == (0, 0):
                raise ValueError("the constant mode is fixed by normalization")
            table[k] = table.get(k, 0) + 0.5 * a
            mk = (-k[0], -k[1])
            table[mk] = table.get(mk, 0) + 0.5 * a
        return cls(table)

    def coefficient(self, k) -> complex:
        return complex(self.fourier.get((int(k[0]), int(k[1])), 0.0))

    def modes(self) -> list[tuple[int, int]]:
        return sorted(self.fourier)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ks = np.array(self.modes(), dtype=float)
        c = np.array([self.fourier[k] for k in self.modes()])
        return np.real(np.exp(1j * (x @ ks.T)) @ c)

    def bound(self) -> float:
        return float(sum(abs(v) for v in self.fourier.values()))

    def bandwidth(self) -> int:
        return max((max(abs(k[0]), abs(k[1])) for k in self.fourier), default=0)


@dataclass(frozen=True)
class PlaneDensity:
    """Density on the plane with a known upper bound on the box ``[-L, L]^2`` it lives in."""

    function: Callable[[np.ndarray], np.ndarray]
    bound: float
    box: float

    def __call__(self, x) -> np.ndarray:
        return self.function(np.asarray(x, dtype=float))


def rejection_sample(density, n: int, rng: np.random.Generator, domain: str) -> np.ndarray:
    """Draw ``n`` points from ``density`` with a uniform proposal."""
    if domain == "torus":
        lo, hi, bound = 0.0, TWO_PI, density.bound()
    else:
        lo, hi, bound = -density.box, density.box, density.bound
    out = np.empty((0, 2))
    while out.shape[0] < n:
        m = max(64, 2 * (n - out.shape[0]))
        x = rng.uniform(lo, hi, size=(m, 2))
        fx = density(x)
        if np.any(fx > bound * (1 + 1e-12)):
            raise SamplingError(f"rejection bound {bound} violated: density reaches {fx.max()}")
        keep = rng.uniform(0.0, bound, size=m) < fx
        out = np.concatenate([out, x[keep]])
    return out[:n]


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


@dataclass
class ParticleState:
    positions: np.ndarray  # (N, 2)
    time: float = 0.0
    domain: str = "torus"

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if self.positions.shape[0] < 1:
            raise ValueError("need at least one particle")
        if self.domain == "torus":
            self.positions = np.mod(self.positions, TWO_PI)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


def torus_velocity(kernel: TorusKernel) -> Callable[[np.ndarray], np.ndarray]:
    """Velocity field ``(1/N) sum_j K(x_i - x_j)`` for batches ``x`` of shape (S, N, 2)."""
    modes = kernel.modes.astype(float)
    coeffs = kernel.coeffs
    kperp = perp(kernel.modes).astype(float)

    def velocity(x: np.ndarray) -> np.ndarray:
        # one mode at a time: the mode count is small, and tiny matmuls are slow
        n = x.shape[-2]
        out = np.zeros_like(x)
        x0, x1 = x[..., 0], x[..., 1]
        for q in range(modes.shape[0]):
            k0, k1 = modes[q]
            if k1 == 0:
                ph = k0 * x0
            elif k0 == 0:
                ph = k1 * x1
            else:
                ph = k0 * x0 + k1 * x1
            s, c = np.sin(ph), np.cos(ph)
            cs, ss = c.sum(axis=-1, keepdims=True), s.sum(axis=-1, keepdims=True)
            amp = s * cs
            amp -= c * ss
            amp *= coeffs[q] / n
            if kperp[q, 0] != 0:
                out[..., 0] += kperp[q, 0] * amp
            if kperp[q, 1] != 0:
                out[..., 1] += kperp[q, 1] * amp
        return out

    return velocity


def plane_velocity(kernel: PlaneKernel | None, external: ExternalPotential | None) -> Callable[[np.ndarray], np.ndarray]:
    """Direct pairwise summation on the plane plus the external field."""

    def velocity(x: np.ndarray) -> np.ndarray:
        n = x.shape[-2]
        v = np.zeros_like(x)
        if kernel is not None:
            diff = x[..., :, None, :] - x[..., None, :, :]
            v += kernel.force(diff).sum(axis=-2) / n
        if external is not None:
            v += external.force(x)
        return v

    return velocity


def dt_max(kernel, external: ExternalPotential | None = None, r_max: float = 10.0) -> float:
    """``0.05 / max(1, ||grad K|| + ||grad F||)``."""
    gk = kernel.grad_norm_bound() if kernel is not None else 0.0
    gf = external.grad_norm_bound(r_max) if external is not None else 0.0
    return 0.05 / max(1.0, gk + gf)


def _rk4(x: np.ndarray, velocity, dt: float, n_steps: int, torus: bool) -> np.ndarray:
    for _ in range(n_steps):
        k1 = velocity(x)
        k2 = velocity(x + 0.5 * dt * k1)
        k3 = velocity(x + 0.5 * dt * k2)
        k4 = velocity(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if torus:
            x = np.mod(x, TWO_PI)
    return x


def _check_finite(x: np.ndarray, offset: int = 0):
    bad = ~np.all(np.isfinite(x.reshape(x.shape[0], -1)), axis=1)
    if np.any(bad):
        raise IntegrationError(f"non-finite positions in sample {offset + int(np.argmax(bad))}")


def integrate(state: ParticleState, kernel, dt: float, t_end: float,
              external: ExternalPotential | None = None, save_every: int = 1) -> list[ParticleState]:
    """Fourth-order Runge-Kutta trajectory from ``state.time`` to ``t_end``."""
    torus = state.domain == "torus"
    velocity = torus_velocity(kernel) if torus else plane_velocity(kernel, external)
    if torus and external is not None:
        raise ValueError("external fields are only supported on the plane")
    span = t_end - state.time
    n_steps = int(np.ceil(abs(span) / dt - 1e-12)) if span else 0
    h = span / n_steps if n_steps else 0.0
    x = state.positions[None]
    traj = [ParticleState(state.positions.copy(), state.time, state.domain)]
    for step in range(1, n_steps + 1):
        x = _rk4(x, velocity, h, 1, torus)
        _check_finite(x)
        if step % save_every == 0 or step == n_steps:
            traj.append(ParticleState(x[0].copy(), state.time + step * h, state.domain))
    return traj


def hamiltonian(state: ParticleState | np.ndarray, external: ExternalPotential | None, kernel,
                domain: str | None = None) -> np.ndarray:
    """``H = sum_i V(x_i) + (1/2N) sum_{i,j} W(x_i - x_j)``, including the diagonal terms.

    Accepts a single state or a batch of positions with shape (S, N, 2).
    """
    if isinstance(state, ParticleState):
        x, domain = state.positions[None], state.domain
        single = True
    else:
        x, single = np.asarray(state, dtype=float), False
        domain = domain or "torus"
    n = x.shape[-2]
    h = np.zeros(x.shape[0])
    if external is not None:
        h += external(x).sum(axis=-1)
    if kernel is not None:
        if domain == "torus":
            if kernel.modes.shape[0]:
                ph = x @ kernel.modes.T.astype(float)
                c2 = np.cos(ph).sum(axis=-2) ** 2 + np.sin(ph).sum(axis=-2) ** 2
                h += (c2 @ kernel.coeffs) / (2 * n)
        else:
            diff = x[:, :, None, :] - x[:, None, :, :]
            h += kernel.potential(diff).sum(axis=(-1, -2)) / (2 * n)
    return float(h[0]) if single else h


# ---------------------------------------------------------------------------
# Initial data
# ---------------------------------------------------------------------------


@dataclass
class GibbsReport:
    burn_in_proposals: int
    proposal_scale: float
    acceptance_rate: float
    warnings: list = field(default_factory=list)


def _radial_inverse_cdf_sampler(external: ExternalPotential, beta: float, r_max: float):
    r = np.linspace(0.0, r_max, 20001)
    dens = r * np.exp(-beta * (external.v_radial.value(r) - external.v_radial.value(np.zeros(1))[0]))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    cdf /= cdf[-1]

    def sample(shape, rng):
        u = rng.uniform(size=shape)
        rad = np.interp(u, cdf, r)
        th = rng.uniform(0.0, TWO_PI, size=shape)
        return np.stack([rad * np.cos(th), rad * np.sin(th)], axis=-1)

    return sample


def _pair_energy(kernel, domain: str, xi: np.ndarray, others: np.ndarray) -> np.ndarray:
    """``sum_j W(xi - x_j)`` over ``others``; xi (S, 2), others (S, M, 2)."""
    if kernel is None:
        return np.zeros(xi.shape[0])
    diff = xi[:, None, :] - others
    return kernel.potential(diff).sum(axis=-1)


def gibbs_background(n_background: int, n_total: int, n_chains: int, beta: float, rng: np.random.Generator,
                     domain: str, kernel=None, external: ExternalPotential | None = None,
                     r_max: float = 10.0, burn_in_sweeps: int = 100, target: float = 0.4):
    """Metropolis chains (one per sample) targeting the restricted Gibbs measure of the background.

    Energy ``sum_i V(x_i) + (1/2N) sum_{i,j} W(x_i - x_j)`` over background indices,
    with ``N = n_total``.  Single-particle isotropic Gaussian proposals; the scale is
    adapted per chain during ``burn_in_sweeps`` sweeps (``burn_in_sweeps * n_background``
    proposals) towards acceptance ``target`` and then frozen for one measured sweep.
    """
    m = n_background
    if domain == "torus":
        x = rng.uniform(0.0, TWO_PI, size=(n_chains, m, 2))
    else:
        if external is None:
            raise SamplingError("plane Gibbs sampling needs a confining potential")
        x = _radial_inverse_cdf_sampler(external, beta, r_max)((n_chains, m), rng)
    if m == 0 or beta == 0 or (kernel is None and domain == "torus"):
        return x, GibbsReport(0, 0.0, 1.0)
    if kernel is None:
        # W = 0: the inverse-CDF draw is already exact
        return x, GibbsReport(0, 0.0, 1.0)

    scale = np.full(n_chains, 0.5)
    acc_total = 0
    idx = np.arange(m)

    def sweep(adapt: bool):
        nonlocal x
        accepted = np.zeros(n_chains)
        for i in range(m):
            old = x[:, i, :]
            new = old + scale[:, None] * rng.standard_normal((n_chains, 2))
            if domain == "torus":
                new = np.mod(new, TWO_PI)
            others = x[:, idx != i, :]
            de = (_pair_energy(kernel, domain, new, others) - _pair_energy(kernel, domain, old, others)) / n_total
            if external is not None:
                de = de + external(new) - external(old)
            ok = np.log(rng.uniform(size=n_chains)) < -beta * de
            x[ok, i, :] = new[ok]
            accepted += ok
        rate = accepted / m
        if adapt:
            scale[:] = scale * np.exp(rate - target)
        return rate

    for _ in range(burn_in_sweeps):
        sweep(True)
    rate = sweep(False)
    acc = float(np.mean(rate))
    report = GibbsReport(burn_in_sweeps * m, float(np.mean(scale)), acc)
    if not 0.1 <= acc <= 0.9:
        msg = f"Metropolis acceptance {acc:.2f} outside [0.1, 0.9] after tuning"
        warnings.warn(msg)
        report.warnings.append(msg)
    del acc_total
    return x, report


def sample_initial(kind: str, f0, n_particles: int, seed_or_rng, domain: str = "torus",
                   beta: float = 0.0, kernel=None, external: ExternalPotential | None = None,
                   n_samples: int | None = None, r_max: float = 10.0, burn_in_sweeps: int = 100):
    """Initial configurations: tagged particle from ``f0``, background uniform or Gibbs.

    Returns a ``ParticleState`` when ``n_samples`` is None, otherwise an array
    of shape (n_samples, N, 2) and the Gibbs report.
    """
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else np.random.Generator(
        np.random.Philox(np.random.SeedSequence(int(seed_or_rng))))
    s = 1 if n_samples is None else n_samples
    if kind not in ("uniform_background", "gibbs_background"):
        raise SamplingError(f"unknown initial kind {kind!r}")
    if kind == "uniform_background" and domain != "torus":
        raise SamplingError("uniform background only exists on the torus")
    tagged = rejection_sample(f0, s, rng, domain)
    if kind == "uniform_background":
        back = rng.uniform(0.0, TWO_PI, size=(s, n_particles - 1, 2))
        report = GibbsReport(0, 0.0, 1.0)
    elif kind == "gibbs_background":
        back, report = gibbs_background(n_particles - 1, n_particles, s, beta, rng, domain, kernel,
                                        external, r_max, burn_in_sweeps)
    x = np.concatenate([tagged[:, None, :], back], axis=1)
    if n_samples is None:
        return ParticleState(x[0], 0.0, domain)
    return x, report


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------

Mode = tuple[int, int]


@dataclass
class EnsembleConfig:
    n_particles: int
    n_samples: int
    seed: int
    t_grid: Sequence[float]
    single_modes: Sequence[Mode] = ()
    pair_modes: Sequence[tuple[Mode, Mode]] = ()
    triple_modes: Sequence[tuple[Mode, Mode, Mode]] = ()
    dt: float | None = None
    block_size: int = 256
    domain: str = "torus"
    index_probe: bool = False
    n_workers: int | None = None

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
            raise ValueError("t_grid must be a non-empty increasing sequence")
        if self.n_particles < 1 or self.n_samples < 1:
            raise ValueError("need N >= 1 and S >= 1")
        norm = lambda m: (int(m[0]), int(m[1]))  # noqa: E731
        self.single_modes = [norm(k) for k in self.single_modes]
        self.pair_modes = [(norm(k), norm(l)) for k, l in self.pair_modes]
        self.triple_modes = [(norm(k), norm(l), norm(q)) for k, l, q in self.triple_modes]
        needs_two = self.pair_modes or self.triple_modes or self.index_probe
        if needs_two and self.n_particles < 2:
            raise ValueError("pair moments need N >= 2")
        if self.triple_modes and self.n_particles < 3:
            raise ValueError("triple moments need N >= 3")


@dataclass
class _Stats:
    """Chan/Welford running mean and covariance of real feature vectors."""

    n: int
    mean: np.ndarray
    m2: np.ndarray  # diagonal sums of squared deviations
    cross: dict  # name -> full M2 matrix for selected feature groups

    @staticmethod
    def from_block(values: np.ndarray, groups: Mapping[str, np.ndarray]) -> "_Stats":
        n = values.shape[0]
        mean = values.mean(axis=0)
        dev = values - mean
        m2 = np.einsum("si,si->i", dev, dev)
        cross = {k: dev[:, idx].T @ dev[:, idx] for k, idx in groups.items()}
        return _Stats(n, mean, m2, cross)

    def merge(self, other: "_Stats") -> "_Stats":
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        cross = {}
        for k in self.cross:
            idx = self._groups[k]
            d = delta[idx]
            cross[k] = self.cross[k] + other.cross[k] + np.outer(d, d) * (self.n * other.n / n)
        out = _Stats(n, mean, m2, cross)
        out._groups = self._groups
        return out


@dataclass
class MomentEstimates:
    """Fourier moment estimates on the output times.

    Each entry of ``single``/``pair``/``triple`` maps a mode key to
    ``(mean, se_re, se_im)`` arrays over ``times``.
    """

    times: np.ndarray
    n_particles: int
    n_samples: int
    single: dict
    pair: dict
    triple: dict
    single_cov: dict  # mode -> (2T, 2T) covariance of (re_t..., im_t...) of one sample
    pair_by_index: dict  # {2: {...}, 3: {...}} when index_probe is set
    hamiltonian_drift: np.ndarray  # mean over samples of |H(t) - H(0)|
    hamiltonian_max_drift: float
    meta: dict

    def se_of_combination(self, mode: Mode, weights: Sequence[float]) -> tuple[complex, float, float]:
        """Estimate and standard errors of ``sum_t w_t f_hat(mode, t)`` using the time covariance."""
        w = np.asarray(weights, dtype=float)
        mean = self.single[mode][0]
        cov = self.single_cov[mode]
        t = w.size
        var_re = w @ cov[:t, :t] @ w / self.n_samples
        var_im = w @ cov[t:, t:] @ w / self.n_samples
        return complex(w @ mean), float(np.sqrt(max(var_re, 0.0))), float(np.sqrt(max(var_im, 0.0)))

    def to_json_dict(self) -> dict:
        def rec(kind, key, val):
            mean, se_re, se_im = val
            return {"kind": kind, "modes": [list(m) for m in key], "re": mean.real.tolist(),
                    "im": mean.imag.tolist(), "se_re": se_re.tolist(), "se_im": se_im.tolist()}

        moments = [rec("single", (k,), v) for k, v in self.single.items()]
        moments += [rec("pair", k, v) for k, v in self.pair.items()]
        moments += [rec("triple", k, v) for k, v in self.triple.items()]
        for j, table in self.pair_by_index.items():
            moments += [rec(f"pair_index_{j}", k, v) for k, v in table.items()]
        meta = dict(self.meta)
        meta.update({"n_particles": self.n_particles, "n_samples": self.n_samples,
                     "hamiltonian_max_drift": self.hamiltonian_max_drift})
        return {"meta": meta, "times": self.times.tolist(), "moments": moments}


def _phase_table(x: np.ndarray, modes: Sequence[Mode]) -> dict:
    if not modes:
        return {}
    ks = np.array(modes, dtype=float)
    e = np.exp(-1j * (x @ ks.T))  # (S, N, M)
    return {m: e[..., i] for i, m in enumerate(modes)}


def _observables(x: np.ndarray, cfg: EnsembleConfig) -> np.ndarray:
    """Per-sample complex observables, shape (S, n_obs), in a fixed order."""
    n = x.shape[1]
    tag_modes = sorted({k for k in cfg.single_modes} | {k for k, _ in cfg.pair_modes}
                       | {k for k, _, _ in cfg.triple_modes})
    back_modes = set()
    for _, l in cfg.pair_modes:
        back_modes.add(l)
    for _, l, q in cfg.triple_modes:
        back_modes |= {l, q, (l[0] + q[0], l[1] + q[1])}
    tag = _phase_table(x[:, :1, :], tag_modes)
    back = _phase_table(x[:, 1:, :], sorted(back_modes))
    rho = {m: v.sum(axis=1) for m, v in back.items()}
    cols = [tag[k][:, 0] for k in cfg.single_modes]
    cols += [tag[k][:, 0] * rho[l] / (n - 1) for k, l in cfg.pair_modes]
    for k, l, q in cfg.triple_modes:
        lq = (l[0] + q[0], l[1] + q[1])
        cols.append(tag[k][:, 0] * (rho[l] * rho[q] - rho[lq]) / ((n - 1) * (n - 2)))
    if cfg.index_probe:
        for j in (1, 2):
            cols += [tag[k][:, 0] * back[l][:, j - 1] for k, l in cfg.pair_modes]
    if not cols:
        return np.zeros((x.shape[0], 0), dtype=complex)
    return np.stack(cols, axis=1)


def _segments(t_grid: np.ndarray, h_max: float):
    """Integration plan: forward over non-negative times, backward over negative ones."""
    plan = []
    for direction in (1.0, -1.0):
        targets = [t for t in t_grid if (t > 0 if direction > 0 else t < 0)]
        targets = sorted(targets, key=abs)
        prev = 0.0
        steps = []
        for t in targets:
            span = t - prev
            n = int(np.ceil(abs(span) / h_max - 1e-12))
            steps.append((t, n, span / n))
            prev = t
        plan.append(steps)
    return plan


def _run_block(block: int, size: int, cfg: EnsembleConfig, kernel, external, initial_kind, f0,
               beta, r_max, burn_in_sweeps, h_max):
    ss = np.random.SeedSequence(int(cfg.seed), spawn_key=(block,))
    rng = np.random.Generator(np.random.Philox(ss))
    x0, report = sample_initial(initial_kind, f0, cfg.n_particles, rng, cfg.domain, beta, kernel, external,
                                n_samples=size, r_max=r_max, burn_in_sweeps=burn_in_sweeps)
    torus = cfg.domain == "torus"
    velocity = torus_velocity(kernel) if torus else plane_velocity(kernel, external)
    t_grid = np.asarray(cfg.t_grid, dtype=float)
    obs = {}
    ham = {}
    h_ext = external if not torus else None
    h0 = hamiltonian(x0, h_ext, kernel, cfg.domain)
    if 0.0 in t_grid:
        obs[0.0] = _observables(x0, cfg)
        ham[0.0] = np.zeros(size)
    for steps in _segments(t_grid, h_max):
        x = x0
        for t, n, h in steps:
            x = _rk4(x, velocity, h, n, torus)
            _check_finite(x, block * cfg.block_size)
            obs[t] = _observables(x, cfg)
            ham[t] = np.abs(hamiltonian(x, h_ext, kernel, cfg.domain) - h0)
    values = np.stack([obs[t] for t in t_grid], axis=1)  # (S, T, n_obs)
    drift = np.stack([ham[t] for t in t_grid], axis=1)  # (S, T)
    return values, drift, report


def run_ensemble(cfg: EnsembleConfig, kernel, f0, initial_kind: str = "uniform_background",
                 external: ExternalPotential | None = None, beta: float = 0.0, r_max: float = 10.0,
                 burn_in_sweeps: int = 100) -> MomentEstimates:
    """Monte Carlo estimate of tagged/background Fourier moments on ``cfg.t_grid``."""
    h_lim = dt_max(kernel, external, r_max)
    h_max = h_lim if cfg.dt is None else cfg.dt
    if h_max > h_lim * (1 + 1e-12):
        raise ValueError(f"dt = {h_max} exceeds dt_max = {h_lim}")
    t_grid = np.asarray(cfg.t_grid, dtype=float)
    T = t_grid.size
    n_single, n_pair, n_triple = len(cfg.single_modes), len(cfg.pair_modes), len(cfg.triple_modes)
    n_obs = n_single + n_pair + n_triple + (2 * n_pair if cfg.index_probe else 0)
    sizes = [min(cfg.block_size, cfg.n_samples - b * cfg.block_size)
             for b in range((cfg.n_samples + cfg.block_size - 1) // cfg.block_size)]

    # feature layout: for each observable o and time t: (re, im) -> index
    def features(values):
        s = values.shape[0]
        re = values.real.transpose(0, 2, 1)  # (S, n_obs, T)
        im = values.imag.transpose(0, 2, 1)
        return np.concatenate([re, im], axis=2).reshape(s, n_obs * 2 * T)

    groups = {i: np.arange(i * 2 * T, (i + 1) * 2 * T) for i in range(n_single)}
    workers = cfg.n_workers or int(os.environ.get(THREADS_ENV, "1"))

    def job(b):
        return _run_block(b, sizes[b], cfg, kernel, external, initial_kind, f0, beta, r_max, burn_in_sweeps, h_max)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(len(sizes))))
    else:
        results = [job(b) for b in range(len(sizes))]

    stats = None
    drift_sum = np.zeros(T)
    drift_max = 0.0
    reports = []
    for values, drift, report in results:  # block order
        st = _Stats.from_block(features(values), groups)
        st._groups = groups
        stats = st if stats is None else stats.merge(st)
        drift_sum += drift.sum(axis=0)
        drift_max = max(drift_max, float(drift.max()))
        reports.append(report)
    S = stats.n
    mean = stats.mean.reshape(n_obs, 2, T)
    var = stats.m2.reshape(n_obs, 2, T) / max(S - 1, 1)
    se = np.sqrt(var / S)

    def entry(i):
        return (mean[i, 0] + 1j * mean[i, 1], se[i, 0], se[i, 1])

    single = {k: entry(i) for i, k in enumerate(cfg.single_modes)}
    pair = {key: entry(n_single + i) for i, key in enumerate(cfg.pair_modes)}
    triple = {key: entry(n_single + n_pair + i) for i, key in enumerate(cfg.triple_modes)}
    by_index = {}
    if cfg.index_probe:
        base = n_single + n_pair + n_triple
        for j in (2, 3):
            off = base + (j - 2) * n_pair
            by_index[j] = {key: entry(off + i) for i, key in enumerate(cfg.pair_modes)}
    single_cov = {k: stats.cross[i] / max(S - 1, 1) for i, k in enumerate(cfg.single_modes)}
    acc = [r.acceptance_rate for r in reports]
    meta = {"seed": int(cfg.seed), "dt": h_max, "dt_max": h_lim, "block_size": cfg.block_size,
            "domain": cfg.domain, "initial_kind": initial_kind,
            "gibbs_acceptance_mean": float(np.mean(acc)) if acc else None,
            "gibbs_burn_in_proposals": reports[0].burn_in_proposals if reports else 0,
            "warnings": sorted({w for r in reports for w in r.warnings})}
    return MomentEstimates(t_grid, cfg.n_particles, S, single, pair, triple, single_cov, by_index,
                           drift_sum / S, drift_max, meta)


def ball_modes(cutoff: int, include_zero: bool = True) -> list[Mode]:
    """Integer modes with sup-norm at most ``cutoff`` in a fixed lexicographic order."""
    out = [(a, b) for a in range(-cutoff, cutoff + 1) for b in range(-cutoff, cutoff + 1)]
    return [m for m in out if include_zero or m != (0, 0)]
