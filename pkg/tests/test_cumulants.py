import numpy as np
import pytest

from vortex_kinetics.cumulants import (
    MissingModesError,
    ModeTensor,
    ScalingError,
    exact_short_time_derivatives,
    finite_difference_derivatives,
    invert_cluster,
    marginals_from_moments,
    scaling_report,
    synthesize_marginals,
)
from vortex_kinetics.kernels import make_torus_kernel
from vortex_kinetics.nbody import EnsembleConfig, TorusDensity, run_ensemble

K10, K01, K11, Z = (1, 0), (0, 1), (1, 1), (0, 0)


@pytest.fixture(scope="module")
def initial_estimates():
    kernel = make_torus_kernel({K10: 1.0, K01: 1.0})
    f0 = TorusDensity.from_cosines({K10: 0.5})
    cfg = EnsembleConfig(6, 4000, 21, [0.0, 0.3], single_modes=[K10, K01],
                         pair_modes=[(K10, Z), (K10, K01), (K01, (0, -1)), (Z, K10)],
                         triple_modes=[(K10, K01, (0, -1))], index_probe=True)
    return run_ensemble(cfg, kernel, f0)


def test_normalization_is_exact(initial_estimates):
    f = marginals_from_moments(initial_estimates, 3)
    assert np.all(f[1].get((Z,)) == 1.0)


def test_product_initial_law(initial_estimates):
    est = initial_estimates
    f = marginals_from_moments(est, 2)
    # background slot at mode 0 integrates out exactly
    assert np.allclose(f[2].get((K10, Z))[0], f[1].get((K10,))[0], atol=1e-15)
    for key in [(K10, K01), (K01, (0, -1)), (Z, K10)]:
        v = f[2].get(key)[0]
        assert abs(v.real) <= 3 * f[2].se_re[key][0] + 1e-15
        assert abs(v.imag) <= 3 * f[2].se_im[key][0] + 1e-15


def test_background_index_exchangeability(initial_estimates):
    by = initial_estimates.pair_by_index
    for key in by[2]:
        a, b = by[2][key], by[3][key]
        for t in range(2):
            tol_re = 3 * np.hypot(a[1][t], b[1][t]) + 1e-15
            tol_im = 3 * np.hypot(a[2][t], b[2][t]) + 1e-15
            assert abs(a[0][t].real - b[0][t].real) <= tol_re
            assert abs(a[0][t].imag - b[0][t].imag) <= tol_im


def test_missing_required_keys(initial_estimates):
    with pytest.raises(MissingModesError):
        marginals_from_moments(initial_estimates, 2, required={2: [(K11, K10)]})


def _tensor(level, table):
    t = ModeTensor(level)
    for key, v in table.items():
        t.set(key, np.atleast_1d(v))
    return t


def test_uncorrelated_marginals_have_zero_cumulant():
    f1 = {(Z,): 1.0, (K10,): 0.25 + 0.1j, (K01,): -0.3j}
    f2 = {(k, l): (f1[(k,)] if l == Z else 0.0) for k in (Z, K10, K01) for l in (Z, K10, K01)}
    g = invert_cluster({1: _tensor(1, f1), 2: _tensor(2, f2)})
    assert all(np.all(v == 0) for v in g[1].values.values())


def test_cluster_roundtrip_recovers_planted_tensors():
    rng = np.random.default_rng(4)
    modes = [Z, K10, K01, K11, (0, -1)]
    nonzero = [m for m in modes if m != Z]
    planted = {1: {(k,): complex(*rng.normal(size=2)) for k in modes}}
    planted[1][(Z,)] = 1.0
    planted[2] = {(k, l): complex(*rng.normal(size=2)) for k in modes for l in nonzero}
    planted[3] = {}
    for k in modes:
        for i, l in enumerate(nonzero):
            for q in nonzero[i:]:
                planted[3][(k, l, q)] = complex(*rng.normal(size=2))
    keys = {1: [(k,) for k in modes],
            2: [(k, l) for k in modes for l in modes],
            3: [(k, l, q) for k in modes for i, l in enumerate(modes) for q in modes[i:]]}
    f = synthesize_marginals(planted, keys)
    g = invert_cluster({m: _tensor(m, f[m]) for m in (1, 2, 3)})
    for m in (2, 3):
        for key, v in g[m - 1].values.items():
            expected = planted[m].get(key, 0.0)
            assert abs(v[0] - expected) <= 1e-12
            if any(slot == Z for slot in key[1:]):
                assert v[0] == 0


def test_scaling_of_planted_law():
    n = np.array([128, 256, 512, 1024])
    rep = scaling_report(n, 0.7 / np.sqrt(n))
    assert abs(rep.slope + 0.5) < 1e-12
    rep_w = scaling_report(n, 0.7 / np.sqrt(n), 0.01 * np.ones(4))
    assert abs(rep_w.slope + 0.5) < 1e-12
    with pytest.raises(ScalingError):
        scaling_report([128, 256], [0.1, 0.07])
    with pytest.raises(ScalingError):
        scaling_report([1, 2, 3], [0.1, 0.0, 0.1])


def test_short_time_derivative_closed_form():
    kernel = make_torus_kernel({K10: 1.0, K01: 1.0})
    f0 = TorusDensity.from_cosines({K10: 0.5})
    d = exact_short_time_derivatives(f0, kernel, 10)
    # d^2/dt^2 f^1 = -0.0225 cos x1, i.e. -0.01125 on each of the modes +-(1,0)
    assert np.isclose(d.d2[K10], -0.01125, atol=1e-15)
    assert np.isclose(d.d2[(-1, 0)], -0.01125, atol=1e-15)
    assert all(v == 0 for v in d.d3.values())
    assert all(v == 0 for v in exact_short_time_derivatives(f0, kernel, 1).d2.values())


class _Series:
    """Minimal stand-in for ensemble estimates with an exact cubic time series."""

    def __init__(self, h, coeffs):
        self.times = np.array([-2 * h, -h, 0.0, h, 2 * h])
        self.n_samples = 1
        vals = sum(c * self.times**p for p, c in enumerate(coeffs)).astype(complex)
        self.single = {K10: (vals, np.zeros(5), np.zeros(5))}
        self.single_cov = {K10: np.zeros((10, 10))}

    def se_of_combination(self, mode, w):
        w = np.asarray(w)
        return complex(w @ self.single[mode][0]), 0.0, 0.0


def test_finite_differences_exact_for_cubics():
    fd = finite_difference_derivatives(_Series(0.25, [0.3, 0.1, -0.4, 0.7]), K10, 0.25)
    assert np.isclose(fd["d2"].value, -0.8, atol=1e-13)
    assert np.isclose(fd["d3"].value, 4.2, atol=1e-12)
    assert fd["d2"].stencil_error < 1e-12


def test_finite_differences_need_full_stencil():
    series = _Series(0.25, [1.0])
    series.times = series.times + 0.01
    with pytest.raises(MissingModesError):
        finite_difference_derivatives(series, K10, 0.25)
