import numpy as np
import pytest
from scipy import stats

from vortex_kinetics.kernels import eval_force, gaussian_profile, make_external_potential, make_plane_kernel, make_torus_kernel, polynomial_profile
from vortex_kinetics.meanfield import solve_mu_beta
from vortex_kinetics.nbody import (
    EnsembleConfig,
    ParticleState,
    SamplingError,
    TorusDensity,
    dt_max,
    gibbs_background,
    hamiltonian,
    integrate,
    plane_velocity,
    run_ensemble,
    sample_initial,
    torus_velocity,
)

TWO_PI = 2 * np.pi


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


def test_torus_velocity_matches_pairwise_sum():
    kernel = make_torus_kernel({(1, 0): 1.0, (0, 1): 0.7, (1, 1): 0.4, (2, -1): 0.2})
    x = _rng(0).uniform(0, TWO_PI, (3, 7, 2))
    direct = eval_force(kernel, x[:, :, None, :] - x[:, None, :, :]).sum(axis=2) / 7
    assert np.allclose(torus_velocity(kernel)(x), direct, atol=1e-14)


def test_plane_velocity_includes_external_rotation():
    external = make_external_potential(polynomial_profile([1.0]))
    x = np.array([[[1.0, 0.0], [0.0, 2.0]]])
    # V = r^2/2 gives F(x) = -perp(x) = (x2, -x1)
    assert np.allclose(plane_velocity(None, external)(x), [[[0.0, -1.0], [2.0, 0.0]]])


def test_time_step_bound():
    assert dt_max(make_torus_kernel({(1, 0): 1.0, (0, 1): 1.0})) == 0.025


def test_single_particle_is_stationary():
    kernel = make_torus_kernel({(1, 0): 1.0, (0, 1): 1.0})
    traj = integrate(ParticleState([[1.0, 2.0]]), kernel, 0.025, 1.0)
    assert np.array_equal(traj[-1].positions, np.array([[1.0, 2.0]]))


def test_rk4_self_convergence():
    kernel = make_torus_kernel({(1, 1): 1.0})
    state = ParticleState([[0.3, 1.1], [2.5, 4.0]])
    dt = 0.05
    coarse = integrate(state, kernel, dt, 1.0)[-1].positions
    fine = integrate(state, kernel, dt / 10, 1.0)[-1].positions
    assert np.max(np.abs(coarse - fine)) <= 10 * dt**4


def test_energy_drift_order_four():
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    external = make_external_potential(polynomial_profile([1.0, 1.0]))
    state = ParticleState(_rng(3).normal(size=(4, 2)), domain="plane")
    h0 = hamiltonian(state, external, kernel)
    drift = []
    for dt in (0.0125, 0.00625):
        end = integrate(state, kernel, dt, 4.0, external=external)[-1]
        drift.append(abs(hamiltonian(end, external, kernel) - h0))
    assert 12 < drift[0] / drift[1] < 22


def test_hamiltonian_values():
    kernel = make_torus_kernel({(1, 0): 1.0, (0, 1): 0.5})
    assert hamiltonian(ParticleState([[0.0, 0.0], [1.0, 1.0]]), None, None) == 0.0
    # two particles at the same point: H = (1/4) * 4 W(0) = W(0)
    same = ParticleState([[0.7, 0.2], [0.7, 0.2]])
    assert np.isclose(hamiltonian(same, None, kernel), 1.5)
    x = _rng(4).uniform(0, TWO_PI, (5, 2))
    shifted = ParticleState(x + np.array([0.9, -2.1]))
    assert np.isclose(hamiltonian(ParticleState(x), None, kernel), hamiltonian(shifted, None, kernel), atol=1e-13)


def test_zero_temperature_gibbs_background_is_uniform():
    kernel = make_torus_kernel({(1, 0): 1.0})
    pvals = []
    for seed in range(20):
        back, rep = gibbs_background(7, 8, 50, 0.0, _rng(seed), "torus", kernel)
        pvals.append(stats.kstest(back[..., 0].ravel() / TWO_PI, "uniform").pvalue)
        assert rep.acceptance_rate == 1.0
    assert stats.kstest(pvals, "uniform").pvalue > 1e-3


def test_noninteracting_plane_background_histogram():
    beta = 0.7
    external = make_external_potential(polynomial_profile([1.0, 1.0]))
    back, _ = gibbs_background(9, 10, 2000, beta, _rng(5), "plane", None, external)
    r = np.linalg.norm(back, axis=-1).ravel()
    edges = np.linspace(0.0, 3.0, 16)
    rr = np.linspace(0.0, 10.0, 200001)
    dens = rr * np.exp(-beta * (rr**2 / 2 + rr**4 / 4))
    cdf = np.concatenate([[0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(rr))])
    cdf /= cdf[-1]
    probs = np.diff(np.interp(edges, rr, cdf))
    probs = np.append(probs, 1 - probs.sum())
    counts = np.append(np.histogram(r, edges)[0], np.sum(r >= 3.0))
    keep = probs * r.size > 5
    chi2 = np.sum((counts[keep] - r.size * probs[keep]) ** 2 / (r.size * probs[keep]))
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 1e-3


def test_weakly_interacting_background_matches_mean_field():
    beta = 0.5
    kernel = make_plane_kernel(gaussian_profile(1.0, 1.0))
    external = make_external_potential(polynomial_profile([1.0, 1.0]))
    back, rep = gibbs_background(39, 40, 400, beta, _rng(6), "plane", kernel, external, burn_in_sweeps=60)
    assert 0.1 <= rep.acceptance_rate <= 0.9
    r2 = np.sum(back**2, -1)
    chain_means = r2.mean(axis=1)
    profile = solve_mu_beta(external, kernel, beta)
    expected = float(np.sum(profile.r**2 * profile.measure_weights()))
    se = chain_means.std(ddof=1) / np.sqrt(chain_means.size)
    # the background marginal differs from mu_beta by O(1/N)
    assert abs(chain_means.mean() - expected) <= 3 * se + 2.0 / 40


def test_sample_initial_shapes_and_errors():
    f0 = TorusDensity.from_cosines({(1, 0): 0.5})
    state = sample_initial("uniform_background", f0, 5, 0)
    assert state.positions.shape == (5, 2)
    x, _ = sample_initial("uniform_background", f0, 5, 0, n_samples=3)
    assert x.shape == (3, 5, 2)
    with pytest.raises(SamplingError):
        sample_initial("uniform_background", f0, 5, 0, domain="plane")
    with pytest.raises(SamplingError):
        sample_initial("lattice", f0, 5, 0)


@pytest.fixture(scope="module")
def wave_setup():
    return make_torus_kernel({(1, 0): 1.0, (0, 1): 1.0}), TorusDensity.from_cosines({(1, 0): 0.5})


def test_uniform_tagged_density_is_stationary(wave_setup):
    kernel, _ = wave_setup
    cfg = EnsembleConfig(6, 2000, 1, [0.0, 0.5, 1.0], single_modes=[(1, 0), (0, 1), (1, 1)])
    est = run_ensemble(cfg, kernel, TorusDensity.from_cosines())
    for mean, se_re, se_im in est.single.values():
        assert np.all(np.abs(mean.real) <= 3 * se_re + 1e-15)
        assert np.all(np.abs(mean.imag) <= 3 * se_im + 1e-15)


def test_initial_moments_and_error_scaling(wave_setup):
    kernel, f0 = wave_setup
    ses = []
    for s in (1000, 4000):
        est = run_ensemble(EnsembleConfig(6, s, 2, [0.0], single_modes=[(1, 0)]), kernel, f0)
        mean, se_re, se_im = est.single[(1, 0)]
        assert abs(mean[0].real - 0.25) <= 3 * se_re[0] and abs(mean[0].imag) <= 3 * se_im[0]
        ses.append(se_re[0])
    assert abs(ses[0] / ses[1] - 2.0) <= 0.4


def test_ensemble_determinism_across_workers(wave_setup):
    kernel, f0 = wave_setup
    base = dict(n_particles=8, n_samples=600, seed=9, t_grid=[0.0, 0.5], single_modes=[(1, 0)],
                pair_modes=[((1, 0), (0, 1))], block_size=128)
    a = run_ensemble(EnsembleConfig(**base, n_workers=1), kernel, f0)
    b = run_ensemble(EnsembleConfig(**base, n_workers=3), kernel, f0)
    c = run_ensemble(EnsembleConfig(**base, n_workers=1), kernel, f0)
    for est in (b, c):
        for key in a.single:
            assert all(np.array_equal(u, v) for u, v in zip(a.single[key], est.single[key]))
        for key in a.pair:
            assert all(np.array_equal(u, v) for u, v in zip(a.pair[key], est.pair[key]))


def test_ensemble_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(4, 10, 0, [0.5, 0.1])
    with pytest.raises(ValueError):
        EnsembleConfig(1, 10, 0, [0.0], pair_modes=[((1, 0), (0, 1))])
