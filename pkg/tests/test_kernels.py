import numpy as np
import pytest

from vortex_kinetics.kernels import (
    KernelError,
    eval_force,
    fourier_modes,
    gaussian_profile,
    make_plane_kernel,
    make_torus_kernel,
    polynomial_profile,
    profile_from_spec,
    bump_profile,
)


def _numeric_force(kernel, x, h=1e-6):
    """K = -perp grad W = (dW/dx2, -dW/dx1) by central differences of the potential."""
    x = np.asarray(x, dtype=float)
    e1, e2 = np.array([h, 0.0]), np.array([0.0, h])
    d1 = (kernel.potential(x + e1) - kernel.potential(x - e1)) / (2 * h)
    d2 = (kernel.potential(x + e2) - kernel.potential(x - e2)) / (2 * h)
    return np.array([d2, -d1])


def test_torus_force_at_quarter_period():
    kernel = make_torus_kernel({(1, 0): 1.0, (0, 1): 1.0})
    assert np.allclose(eval_force(kernel, [np.pi / 2, 0.0]), [0.0, 1.0], atol=1e-15)


def test_torus_force_matches_potential_gradient():
    kernel = make_torus_kernel([[1, 0, 1.0], [0, 1, 0.7], [1, 1, 0.4], [2, -1, 0.3]])
    rng = np.random.default_rng(1)
    for x in rng.uniform(0, 2 * np.pi, (10, 2)):
        assert np.allclose(eval_force(kernel, x), _numeric_force(kernel, x), atol=1e-8)


def test_empty_table_gives_zero_kernel():
    kernel = make_torus_kernel({})
    assert kernel.is_zero
    x = np.random.default_rng(0).uniform(0, 2 * np.pi, (5, 2))
    assert np.all(eval_force(kernel, x) == 0.0)


def test_fourier_force_is_divergence_free():
    kernel = make_torus_kernel({(1, 0): 1.0, (2, 3): 0.5, (-1, 2): 0.2})
    for k, kh in kernel.k_hat().items():
        assert np.max(np.abs(np.dot(np.asarray(k, float), kh))) == 0.0


def test_torus_force_vanishes_at_origin():
    kernel = make_torus_kernel({(1, 0): 1.0})
    assert np.all(eval_force(kernel, [0.0, 0.0]) == 0.0)


def test_fourier_modes_roundtrip():
    kernel = make_torus_kernel({(1, 0): 1.0, (0, 1): 0.7, (1, 1): 0.4})
    again = make_torus_kernel(fourier_modes(kernel))
    assert fourier_modes(again) == fourier_modes(kernel)
    x = np.random.default_rng(2).uniform(0, 2 * np.pi, (6, 2))
    assert np.array_equal(eval_force(again, x), eval_force(kernel, x))


def test_mode_table_validation():
    with pytest.raises(KernelError):
        make_torus_kernel({(0, 0): 1.0})
    with pytest.raises(KernelError):
        make_torus_kernel({(1, 0): 1.0, (-1, 0): 0.5})
    # listing both signs with equal amplitude denotes one cosine
    both = make_torus_kernel({(1, 0): 1.0, (-1, 0): 1.0})
    one = make_torus_kernel({(1, 0): 1.0})
    assert np.allclose(eval_force(both, [0.3, 0.2]), eval_force(one, [0.3, 0.2]))


def test_plane_gaussian_force_value():
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    assert np.allclose(eval_force(kernel, [1.0, 0.0]), [0.0, np.exp(-0.5)], atol=1e-15)
    assert np.allclose(eval_force(kernel, [1.0, 0.0])[1], 0.60653, atol=1e-5)


def test_plane_force_odd_and_tangential():
    kernel = make_plane_kernel(gaussian_profile(2.0, 0.7))
    assert np.all(eval_force(kernel, [0.0, 0.0]) == 0.0)
    g = np.linspace(-4, 4, 41)
    x = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    k = eval_force(kernel, x)
    assert np.max(np.abs(np.sum(x * k, -1))) < 1e-14
    assert np.allclose(eval_force(kernel, -x), -k, atol=1e-15)


@pytest.mark.parametrize("profile", [gaussian_profile(1.3, 0.8), bump_profile(1.0, 2.0), polynomial_profile([1.0, 0.5])])
def test_radial_derivatives_match_finite_differences(profile):
    r = np.linspace(0.2, 1.8, 9)
    h = 1e-5
    d1 = (profile.value(r + h) - profile.value(r - h)) / (2 * h)
    d2 = (profile.value(r + h) - 2 * profile.value(r) + profile.value(r - h)) / h**2
    assert np.allclose(profile.d1(r), d1, atol=1e-8)
    assert np.allclose(profile.d2(r), d2, atol=1e-4)
    assert np.allclose(profile.d1_over_r(r), profile.d1(r) / r, atol=1e-12)


def test_profile_from_spec():
    p = profile_from_spec({"family": "gaussian", "amplitude": 2.0, "width": 0.5})
    assert np.isclose(p.value(np.array([0.5]))[0], 2.0 * np.exp(-0.5))
    with pytest.raises(KernelError):
        profile_from_spec({"family": "lorentzian"})
