import numpy as np
import pytest
from scipy import integrate

from vortex_kinetics.acceptance import gaussian_case_setup, nongaussian_setup
from vortex_kinetics.effective.resolvent import (
    KernelContentError,
    NeumannDivergence,
    TwoParticleField,
    compute_a_beta,
    omega_grid,
    resolvent_L2,
    resolvent_residual,
)
from vortex_kinetics.kernels import gaussian_profile, make_plane_kernel
from vortex_kinetics.meanfield import MeanFieldError, renormalized_potential

PAIRS = [(1, -1), (2, -2), (1, 0), (0, 1), (3, 1)]


@pytest.fixture(scope="module")
def setup():
    kernel, _, profile = nongaussian_setup()
    return kernel, profile, omega_grid(profile, n_panels=12)


def _source(grid, pairs=PAIRS, s=(0.5, 1.5)):
    s = np.asarray(s, dtype=float)
    vals = np.array([[np.exp(-grid.r**2) * (1 + 0.3 * k1 * si) * (1 + 0.1j * k2) for si in s] for k1, k2 in pairs])
    return TwoParticleField(s, list(pairs), vals, grid)


def test_grid_measure_reproduces_profile_moments(setup):
    _, profile, grid = setup
    # grid.measure carries r dr (the density is applied separately)
    mu = profile.mu_at(grid.r)
    w = profile.measure_weights()
    inside = profile.r <= grid.r.max()
    tail = w[~inside].sum()
    assert np.isclose(2 * np.pi * grid.measure @ mu, w[inside].sum(), rtol=1e-6, atol=2 * tail + 1e-10)
    assert np.isclose(2 * np.pi * grid.measure @ (mu * grid.r**2), (w * profile.r**2)[inside].sum(),
                      rtol=1e-6, atol=2 * (w * profile.r**2)[~inside].sum() + 1e-10)
    assert np.allclose(profile.omega_at(grid.r), grid.u, atol=1e-10)


@pytest.mark.parametrize("offset", [1e-1, 1e-3, 1e-6])
def test_cauchy_weights_against_adaptive_quadrature(setup, offset):
    _, _, grid = setup
    z = grid.u[37] + 0.013 * (grid.breaks[1] - grid.breaks[0]) + 1j * offset
    lo, hi = grid.breaks[0], grid.breaks[-1]
    got = grid.cauchy_weights(z) @ np.cos(grid.u)
    # singularity subtraction: smooth remainder by adaptive quadrature, log term in closed form
    smooth = lambda u: (np.cos(u) - np.cos(z)) / (u - z)
    re = integrate.quad(lambda u: smooth(u).real, lo, hi, points=[z.real], limit=400, epsabs=1e-13)[0]
    im = integrate.quad(lambda u: smooth(u).imag, lo, hi, points=[z.real], limit=400, epsabs=1e-13)[0]
    want = re + 1j * im + np.cos(z) * (np.log(hi - z) - np.log(lo - z))
    assert abs(got - want) <= 1e-8 * max(1.0, abs(want))


def test_uncoupled_resolvent_is_explicit(setup):
    kernel, profile, grid = setup
    src = _source(grid)
    sol = resolvent_L2(profile, kernel, 0.01, src, coupling=0.0)
    om_s, om_r = profile.omega_at(src.s), profile.omega_at(grid.r)
    for p, (k1, k2) in enumerate(PAIRS):
        explicit = src.values[p] / (1j * k1 * om_s[:, None] + 1j * k2 * om_r[None, :] + 0.01)
        assert np.allclose(sol.values()[p], explicit, rtol=1e-10, atol=0)


def test_resolvent_identity_and_neumann_monitor(setup):
    kernel, profile, grid = setup
    sol = resolvent_L2(profile, kernel, 0.01, _source(grid))
    assert resolvent_residual(profile, kernel, sol) <= 1e-8
    ratios = [max(h) for h in sol.neumann_ratios if h]
    assert ratios and max(ratios) < 0.2
    dense = resolvent_L2(profile, kernel, 0.01, _source(grid), direct=True)
    assert np.max(np.abs(sol.numerators - dense.numerators)) <= 1e-10 * np.max(np.abs(dense.numerators))


def test_strong_coupling_diverges(setup):
    kernel, profile, grid = setup
    with pytest.raises(NeumannDivergence):
        resolvent_L2(profile, kernel, 0.01, _source(grid, [(1, -1)]), coupling=200.0)


def test_invalid_inputs(setup):
    kernel, profile, grid = setup
    with pytest.raises(ValueError):
        resolvent_L2(profile, kernel, 0.5j, _source(grid))
    with pytest.raises(KernelContentError):
        resolvent_L2(profile, kernel, 0.01, _source(grid, [(0, 0)]))


def test_zero_interaction_gives_zero_coefficient(setup):
    _, profile, _ = setup
    zero = make_plane_kernel(gaussian_profile(0.0, 1.0))
    coeff = compute_a_beta(profile, zero, None, eps_schedule=(1e-2, 5e-3), s=[0.5, 1.5], n_max=4, n_panels=12)
    assert np.all(coeff.values == 0)


def test_coefficient_positive_stable_and_grid_converged(setup):
    kernel, profile, _ = setup
    wb = renormalized_potential(kernel, profile)
    radii = [0.6, 1.2, 2.0]
    coarse = compute_a_beta(profile, kernel, wb, s=radii, n_max=8, n_panels=24)
    fine = compute_a_beta(profile, kernel, wb, s=radii, n_max=8, n_panels=48)
    assert np.min(coarse.values) >= -1e-8
    assert np.all(np.diff(coarse.gaps) < 0) and not coarse.flagged
    assert np.max(np.abs(fine.values - coarse.values)) < coarse.stability_gap
    assert coarse.resolvent_residual <= 1e-8


def test_gaussian_equilibrium_rejected():
    kernel, profile = gaussian_case_setup()
    with pytest.raises(MeanFieldError):
        compute_a_beta(profile, kernel, None, s=[1.0])
