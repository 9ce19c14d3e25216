import numpy as np
import pytest
from scipy.integrate import trapezoid

from vortex_kinetics.effective.fokker_planck import RadialSeries, SolverError, fp_evolve, gaussian_blob
from vortex_kinetics.kernels import make_external_potential, polynomial_profile
from vortex_kinetics.meanfield import solve_mu_beta


@pytest.fixture(scope="module")
def profile():
    # no interaction: mu = exp(-beta V) / Z with V = r^2/2 + r^4/4
    return solve_mu_beta(make_external_potential(polynomial_profile([1.0, 1.0])), None, 1.0)


def coeff(r):
    return 0.5 + 0.2 * np.asarray(r) ** 2


class Table:
    def __init__(self, r, values):
        self.r, self.values = r, values


def test_equilibrium_is_stationary(profile):
    ser = fp_evolve(profile.mu_at, coeff, profile, [0.0, 1.0, 10.0, 100.0])
    assert np.max(np.abs(ser.values - ser.values[0])) <= 1e-10


def test_mass_conserved_and_norm_non_increasing(profile):
    f0 = gaussian_blob(1.0, 0.2)
    taus = np.linspace(0.0, 5.0, 51)
    ser = fp_evolve(f0, coeff, profile, taus, dt_max=0.05)
    mass = ser.mass()
    assert np.max(np.abs(mass - mass[0])) <= 1e-10
    norms = ser.weighted_norm()
    assert np.all(np.diff(norms) <= 1e-14 * norms[0])
    assert norms[-1] < norms[0]


def test_relaxes_to_mass_times_equilibrium(profile):
    f0 = gaussian_blob(1.0, 0.2)
    ser = fp_evolve(lambda r: 0.7 * f0(r), coeff, profile, [0.0, 200.0], dt_max=0.5)
    target = ser.mass()[0] * ser.mu / (ser.mu @ ser.volumes)
    dist = np.sqrt(((ser.values[-1] - target) ** 2 / ser.mu) @ ser.volumes)
    assert dist <= 1e-8
    assert np.isclose(ser.mass()[0], 0.7, rtol=1e-3)


def test_gaussian_blob_is_normalized():
    f = gaussian_blob(1.5, 0.3)
    r = np.linspace(0.0, 5.0, 200001)
    assert np.isclose(2 * np.pi * trapezoid(f(r) * r, r), 1.0, rtol=1e-6)


def test_tabulated_coefficient_matches_callable(profile):
    rr = np.linspace(0.0, profile.grid.r_max, 400)
    f0 = gaussian_blob(1.0, 0.2)
    a = fp_evolve(f0, coeff, profile, [0.0, 1.0])
    b = fp_evolve(f0, Table(rr, coeff(rr)), profile, [0.0, 1.0])
    assert np.max(np.abs(a.values - b.values)) <= 1e-4 * np.max(a.values)


def test_rejects_bad_inputs(profile):
    rr = np.linspace(0.0, 3.0, 10)
    with pytest.raises(ValueError):
        fp_evolve(profile.mu_at, Table(rr, -np.ones_like(rr)), profile, [0.0, 1.0])
    with pytest.raises(SolverError):
        fp_evolve(profile.mu_at, lambda r: np.full_like(r, np.nan), profile, [0.0, 1.0])
    with pytest.raises(ValueError):
        fp_evolve(profile.mu_at, coeff, profile, [1.0, 2.0])
    with pytest.raises(ValueError):
        fp_evolve(np.ones(3), coeff, profile, [0.0, 1.0])


def test_csv_rows_layout(profile):
    ser = fp_evolve(profile.mu_at, coeff, profile, [0.0, 1.0], n_cells=20)
    assert isinstance(ser, RadialSeries)
    rows = ser.to_csv_rows()
    assert len(rows) == 2 * 20 and rows[0][0] == 0.0 and rows[-1][0] == 1.0


def test_spectral_propagator_is_the_small_step_limit(profile):
    f0 = gaussian_blob(1.0, 0.2)
    exact = fp_evolve(f0, coeff, profile, [0.0, 0.5], method="spectral")
    errs = [np.max(np.abs(fp_evolve(f0, coeff, profile, [0.0, 0.5], dt_max=dt).values[1] - exact.values[1]))
            for dt in (1e-2, 1e-3)]
    # backward Euler is first order in the step
    assert 7 < errs[0] / errs[1] < 13


def test_spectral_limit_is_mass_times_equilibrium(profile):
    f0 = gaussian_blob(1.0, 0.2)
    ser = fp_evolve(f0, coeff, profile, [0.0, 1.0, np.inf], method="spectral")
    mass = ser.mass()
    assert np.max(np.abs(mass - mass[0])) <= 1e-12
    assert np.all(np.diff(ser.weighted_norm()) <= 1e-14)
    target = mass[0] * ser.mu / (ser.mu @ ser.volumes)
    assert np.sqrt(((ser.values[-1] - target) ** 2 / ser.mu) @ ser.volumes) <= 1e-12
    with pytest.raises(ValueError):
        fp_evolve(f0, coeff, profile, [0.0, 1.0], method="euler")
