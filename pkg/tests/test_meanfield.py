import numpy as np
import pytest

from vortex_kinetics.kernels import gaussian_profile, make_external_potential, make_plane_kernel, polynomial_profile
from vortex_kinetics.meanfield import (
    MeanFieldError,
    angular_velocity,
    classify_equilibrium,
    fixed_point_residual,
    gaussian_case_potential,
    gaussian_density,
    mu_convolution_power,
    profile_from_omega,
    renormalized_potential,
    renormalized_potential_exact,
    solve_mu_beta,
)
from vortex_kinetics.quadrature import composite_gauss_legendre, pair_distance


@pytest.fixture(scope="module")
def quartic():
    """W = exp(-r^2/2), V = r^2/2 + r^4/4 at beta ||W|| = 0.4."""
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    potential = make_external_potential(polynomial_profile([1.0, 1.0]))
    return kernel, potential, solve_mu_beta(potential, kernel, 0.4 / kernel.sup_norm(), tol=1e-13)


@pytest.fixture(scope="module")
def gaussian_equilibrium():
    grid = composite_gauss_legendre(0.0, 8.0, 24, 16)
    return profile_from_omega(lambda r: -np.ones_like(r), 1.0, grid)


def test_harmonic_without_interaction():
    profile = solve_mu_beta(make_external_potential(polynomial_profile([1.0])), None, 1.0)
    r = profile.r
    assert np.allclose(profile.mu_values, np.exp(-r**2 / 2) / (2 * np.pi), rtol=1e-12, atol=1e-300)
    assert np.isclose(profile.z_beta, 2 * np.pi, rtol=1e-12)
    assert np.isclose(profile.mass(), 1.0, rtol=1e-12)


def test_constructed_potential_gives_gaussian_equilibrium():
    beta, R = 1.0, 1.0
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    profile = solve_mu_beta(gaussian_case_potential(R, beta, 1.0, 1.0), kernel, beta, tol=1e-13)
    assert np.allclose(profile.mu_values, gaussian_density(profile.r, beta, R), atol=1e-11)
    cls = classify_equilibrium(profile)
    assert cls.tag == "Gaussian" and np.isclose(cls.R, R, atol=1e-8)


def test_fixed_point_residual_and_refined_grid(quartic):
    kernel, potential, profile = quartic
    assert fixed_point_residual(profile) < 1e-10
    fine = solve_mu_beta(potential, kernel, profile.beta, grid=profile.grid.refined(), tol=1e-13)
    assert np.max(np.abs(fine.mu_at(profile.r) - profile.mu_values)) < 1e-6


def test_strong_coupling_rejected(quartic):
    kernel, potential, _ = quartic
    with pytest.raises(MeanFieldError):
        renormalized_potential(kernel, solve_mu_beta(potential, kernel, 1.2 / kernel.sup_norm()))


def test_angular_velocity_without_interaction():
    potential = make_external_potential(polynomial_profile([1.0, 1.0]))
    for beta in (0.3, 2.0):
        profile = solve_mu_beta(potential, None, beta)
        r = np.linspace(0.0, 3.0, 31)
        assert np.allclose(angular_velocity(profile, r), -(1 + r**2), atol=1e-8)
        # r -> 0 limit is -V''(0) = -1
        assert np.isclose(angular_velocity(profile, np.array([1e-6]))[0], -1.0, atol=1e-8)


def test_gaussian_profile_has_constant_angular_velocity(gaussian_equilibrium):
    assert np.allclose(angular_velocity(gaussian_equilibrium), -1.0, atol=1e-12)


def test_classification_nondegenerate_and_other():
    grid = composite_gauss_legendre(0.0, 6.0, 24, 16)
    nondeg = classify_equilibrium(profile_from_omega(lambda r: -(1 + r**2), 1.0, grid))
    assert nondeg.tag == "NonDegenerate" and nondeg.R == 1.0
    plateau = lambda r: -(1 + np.minimum(r, 1.0) ** 2 + np.maximum(r - 2.0, 0.0) ** 2)  # noqa: E731
    other = classify_equilibrium(profile_from_omega(plateau, 1.0, grid))
    assert other.tag == "Other"


def test_first_convolution_power_is_kernel(gaussian_equilibrium):
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    table = mu_convolution_power(kernel, gaussian_equilibrium, 1)
    psi = np.linspace(0, 2 * np.pi, 13)
    exact = np.exp(-pair_distance(1.2, 0.4, psi) ** 2 / 2)
    assert np.allclose(table.evaluate(1.2, 0.4, psi).ravel(), exact, atol=1e-13)


def test_second_convolution_power_closed_form(gaussian_equilibrium):
    a, s2, v = 1.0, 1.0, 1.0  # W amplitude, W width^2, mu variance per coordinate
    kernel = make_plane_kernel(gaussian_profile(a, np.sqrt(s2)))
    table = mu_convolution_power(kernel, gaussian_equilibrium, 2)
    x_r, y_r = 1.1, 0.6
    psi = np.linspace(0, 2 * np.pi, 9)
    alpha = 2 / s2 + 1 / v
    sum2 = x_r**2 + y_r**2 + 2 * x_r * y_r * np.cos(psi)
    exact = a**2 / (v * alpha) * np.exp(-(x_r**2 + y_r**2) / (2 * s2) + sum2 / (2 * s2**2 * alpha))
    assert np.allclose(table.evaluate(x_r, y_r, psi).ravel(), exact, atol=1e-12)


def test_convolution_power_symmetry(quartic):
    kernel, _, profile = quartic
    modes = mu_convolution_power(kernel, profile, 3).modes
    assert np.max(np.abs(modes - np.swapaxes(modes, 1, 2))) <= 1e-12 * np.max(np.abs(modes))


def test_renormalized_potential_at_zero_coupling():
    grid = composite_gauss_legendre(0.0, 8.0, 24, 16)
    profile = profile_from_omega(lambda r: -np.ones_like(r), 0.0 + 1e-300, grid)
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    wb = renormalized_potential(kernel, profile)
    assert wb.truncation_order == 0
    assert np.array_equal(wb.modes, mu_convolution_power(kernel, profile, 1).modes)


def test_renormalized_potential_identity_and_tail(quartic):
    kernel, _, profile = quartic
    wb = renormalized_potential(kernel, profile)
    assert wb.identity_residual() < 1e-8
    assert np.max(np.abs(wb.modes - renormalized_potential_exact(kernel, profile))) < 1e-11
    short = renormalized_potential(kernel, profile, n_terms=4)
    long = renormalized_potential(kernel, profile, n_terms=9)
    # physical sup-norm difference is at most the sum of all mode magnitudes
    diff = np.sum(np.abs(short.modes - long.modes) * np.where(np.arange(short.modes.shape[0]) == 0, 1, 2)[:, None, None], 0)
    assert np.max(diff) <= short.tail_bound
