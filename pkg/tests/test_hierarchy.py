import numpy as np
import pytest

from vortex_kinetics.effective.torus import diffusion_matrix_torus
from vortex_kinetics.hierarchy import (
    BasisTooLarge,
    FockBasis,
    build_operator,
    enumerate_basis,
    evolve,
    initial_state,
    spectral_diagnostics,
    tagged_observable,
)
from vortex_kinetics.kernels import make_torus_kernel
from vortex_kinetics.nbody import TorusDensity

AXIS = {(1, 0): 1.0, (0, 1): 1.0}
GENERIC = {(1, 0): 1.0, (0, 1): 0.7, (1, 1): 0.4}


def test_level_dimensions():
    assert enumerate_basis(1, 1).dimensions == [9]
    assert enumerate_basis(1, 2).dimensions == [9, 72]
    assert enumerate_basis(1, 5).dimensions == [9, 72, 324, 1080, 2970]
    with pytest.raises(BasisTooLarge):
        enumerate_basis(3, 8)


def test_zero_kernel_operator_vanishes():
    op = build_operator(make_torus_kernel({}), FockBasis(1, 3))
    assert op.generator.count_nonzero() == 0


def test_adjoint_symmetry():
    op = build_operator(make_torus_kernel(GENERIC), FockBasis(1, 3))
    assert op.adjoint_residual(n_pairs=100) <= 1e-12


@pytest.mark.parametrize("mode", [(1, 0), (0, 1), (0, -1)])
def test_level_one_composition_matches_diffusion_matrix(mode):
    kernel = make_torus_kernel(AXIS)
    basis = FockBasis(1, 3)
    op = build_operator(kernel, basis)
    f0 = TorusDensity.from_cosines({mode if mode > (0, 0) else (-mode[0], -mode[1]): 0.5})
    g0 = initial_state(f0, basis).data
    k = np.asarray(mode, dtype=float)
    a = diffusion_matrix_torus(kernel).matrix
    pos = basis.position(1, mode, ())
    # generator squared gives -kAk f0_hat(k); the Hermitian S squared gives +kAk f0_hat(k)
    assert abs(op.apply_generator(op.apply_generator(g0))[pos] + (k @ a @ k) * 0.25) <= 1e-12
    assert abs(op.apply_S(op.apply_S(g0))[pos] - (k @ a @ k) * 0.25) <= 1e-12


def test_initial_state_entries_and_norm():
    basis = FockBasis(1, 2)
    g = initial_state(TorusDensity.from_cosines(), basis)
    assert g.data[basis.position(1, (0, 0), ())] == 1.0 and np.count_nonzero(g.data) == 1
    g = initial_state(TorusDensity.from_cosines({(1, 0): 0.5}), basis)
    nz = {basis.keys[0][i][0]: g.data[i] for i in np.flatnonzero(g.data)}
    assert nz == {(0, 0): 1.0, (1, 0): 0.25, (-1, 0): 0.25}
    assert np.isclose(g.norm(), np.sqrt(1 + 2 * 0.25**2), rtol=1e-15)
    with pytest.raises(ValueError):
        initial_state(TorusDensity.from_cosines({(2, 0): 0.5}), basis)


def test_zero_kernel_evolution_is_trivial():
    basis = FockBasis(1, 3)
    g0 = initial_state(TorusDensity.from_cosines({(1, 0): 0.5}), basis)
    for method in ("eigh", "krylov"):
        for g in evolve(build_operator(make_torus_kernel({}), basis), g0, [0.0, 1.0, 5.0], method=method):
            assert np.allclose(g.data, g0.data, atol=1e-14)
            assert np.allclose(tagged_observable(g).on_grid(16), tagged_observable(g0).on_grid(16), atol=1e-14)


def test_krylov_unitary_and_matches_eigendecomposition():
    basis = FockBasis(1, 4)
    op = build_operator(make_torus_kernel(GENERIC), basis)
    g0 = initial_state(TorusDensity.from_cosines({(1, 0): 0.5, (0, 1): 0.3}), basis)
    taus = [0.0, 0.7, 3.0, 10.0]
    kry = evolve(op, g0, taus, method="krylov")
    eig = evolve(op, g0, taus, method="eigh")
    for a, b in zip(kry, eig):
        assert abs(a.norm() - g0.norm()) <= 1e-10
        assert np.max(np.abs(a.data - b.data)) <= 1e-9


def test_short_time_taylor_expansion():
    kernel = make_torus_kernel(AXIS)
    basis = FockBasis(1, 3)
    op = build_operator(kernel, basis)
    g0 = initial_state(TorusDensity.from_cosines({(1, 0): 0.5}), basis)
    k = np.array([1.0, 0.0])
    kak = k @ diffusion_matrix_torus(kernel).matrix @ k
    pos = basis.position(1, (1, 0), ())
    taus = [0.05, 0.1]
    rem = [abs(g.data[pos] - 0.25 - 0.5 * t**2 * (-kak * 0.25)) for t, g in zip(taus, evolve(op, g0, taus, method="eigh"))]
    assert 12 < rem[1] / rem[0] < 20


def test_tagged_observable_reconstruction():
    basis = FockBasis(1, 2)
    f0 = TorusDensity.from_cosines({(1, 0): 0.5, (1, 1): -0.2})
    obs = tagged_observable(initial_state(f0, basis))
    grid = obs.on_grid(64)
    assert np.allclose(grid, obs.on_grid_fft(64), atol=1e-13)
    g = 2 * np.pi * np.arange(64) / 64
    x = np.stack(np.meshgrid(g, g, indexing="ij"), -1)
    assert np.allclose(grid, f0(x), atol=1e-13)


def test_spectral_diagnostics_zero_kernel():
    basis = FockBasis(1, 2)
    g0 = initial_state(TorusDensity.from_cosines({(1, 0): 0.5}), basis)
    rep = spectral_diagnostics(build_operator(make_torus_kernel({}), basis), g0, g0, [10.0, 50.0])
    assert np.all(rep.eigenvalues == 0)
    assert np.allclose(rep.cesaro, abs(g0.inner(g0)) ** 2, rtol=1e-13)


def test_spectral_diagnostics_generic_kernel():
    basis = FockBasis(1, 3)
    g0 = initial_state(TorusDensity.from_cosines({(1, 0): 0.5, (0, 1): 0.3}), basis)
    rep = spectral_diagnostics(build_operator(make_torus_kernel(GENERIC), basis), g0, g0, [50.0, 100.0])
    assert rep.max_imag_eigenvalue <= 1e-10
    assert np.allclose(rep.cesaro, rep.cesaro_closed_form, atol=1e-12)
    # the deviation is bounded by C/T with C from the closed form of the cross terms
    gaps = np.abs(rep.cluster_values[:, None] - rep.cluster_values[None, :])
    np.fill_diagonal(gaps, np.inf)
    amp = np.sqrt(rep.cluster_weights)
    bound = np.sum(np.outer(amp, amp) * 2 / gaps)
    assert np.all(rep.deviation * rep.T_list <= bound)
