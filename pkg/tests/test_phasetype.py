import math

import gmpy2
import mpmath
import numpy as np
import pytest

from scalekit import numkernel as nk
from scalekit.errors import NegativeArgument, ThetaOutOfRange, ValidationError
from scalekit.phasetype import PhaseTypeDist, cdf, density, mgf_kappa, sample, tilt, validate

from conftest import exponential

mpmath.mp.dps = 30


def mp_density(d):
    """Independent density alpha e^{Tx} t in mpmath."""
    alpha = mpmath.matrix([[mpmath.mpf(str(a)) for a in d.alpha]])
    T = mpmath.matrix([[mpmath.mpf(str(x)) for x in row] for row in d.T])
    t = mpmath.matrix([mpmath.mpf(str(x)) for x in d.t])

    def f(x):
        return (alpha * mpmath.expm(T * x) * t)[0]
    return f


def as_mp(x):
    return mpmath.mpf(str(x))


def test_example_f0_is_valid(f0):
    validate(f0)
    assert f0.n_phases == 3
    assert not f0.is_defective


def test_alpha_must_sum_to_one():
    with pytest.raises(ValidationError):
        PhaseTypeDist.from_arrays(["0.5", "0.6"], [["-1", "0"], ["0", "-1"]])


def test_negative_offdiagonal_rejected():
    with pytest.raises(ValidationError) as info:
        PhaseTypeDist.from_arrays(["0.5", "0.5"], [["-1", "-0.2"], ["0", "-1"]])
    assert info.value.entry == ("T", 0, 1)


def test_kill_vector_completes_rows():
    d = PhaseTypeDist.from_arrays(["1"], [["-3"]], q=["1"])
    assert d.is_defective and d.t[0] == 2


def test_kappa_exponential():
    assert abs(mgf_kappa(exponential(2), 1) - gmpy2.log(2)) < nk.tol(2)


def test_kappa_at_zero(f0, f2):
    assert abs(mgf_kappa(f0, 0)) < nk.tol(2)
    assert abs(mgf_kappa(f2, 0)) < nk.tol(2)


def test_kappa_matches_quadrature(f0):
    f = mp_density(f0)
    mgf = mpmath.quad(lambda y: mpmath.exp(mpmath.mpf("0.1") * y) * f(y), [0, 10, 40, mpmath.inf])
    kappa = mgf_kappa(f0, "0.1")
    assert kappa > 0
    assert abs(as_mp(kappa) - mpmath.log(mgf)) < 1e-10


def test_kappa_beyond_abscissa(f2):
    # F2's largest eigenvalue sits just below 0.2
    with pytest.raises(ThetaOutOfRange):
        mgf_kappa(f2, "0.2")


def test_tilt_exponential():
    res = tilt(exponential(2), 1)
    for x in ("0", "0.3", "2"):
        assert abs(density(res.tilted, x) - gmpy2.exp(-nk.big(x))) < nk.tol(2)


@pytest.mark.parametrize("x", ["0.5", "1", "2", "5", "10"])
def test_tilted_density_pointwise(f0, x):
    res = tilt(f0, "0.1")
    expected = gmpy2.exp(nk.big("0.1") * nk.big(x)) * density(f0, x) * gmpy2.exp(-res.kappa)
    assert abs(density(res.tilted, x) - expected) < 1e-10


def test_negative_tilt_is_valid(f0):
    res = tilt(f0, "-0.1")
    validate(res.tilted)
    assert res.kappa < 0
    assert not res.tilted.is_defective


@pytest.mark.parametrize("theta", ["0.1", "-0.1", "0.15"])
def test_tilt_round_trip(f0, theta):
    back = tilt(tilt(f0, theta).tilted, "-" + theta if theta[0] != "-" else theta[1:]).tilted
    for x in ("0.1", "1", "3", "7"):
        assert abs(density(back, x) - density(f0, x)) < 1e-8


def test_density_at_zero():
    assert density(exponential(2), 0) == 2


def test_density_matches_independent_expm(f2):
    f = mp_density(f2)
    for x in ("0.2", "1.5", "6"):
        assert abs(as_mp(density(f2, x)) - f(mpmath.mpf(x))) < 1e-25


@pytest.mark.parametrize("name", ["f0", "f2"])
def test_density_integrates_to_one(name, request):
    d = request.getfixturevalue(name)
    total = mpmath.quad(lambda y: as_mp(density(d, str(y))), [0, 5, 20, 80, 300, mpmath.inf])
    assert abs(total - 1) < 1e-8


def test_cdf(f0):
    assert cdf(f0, 0) == 0
    f = mp_density(f0)
    for x in ("0.5", "4"):
        assert abs(as_mp(cdf(f0, x)) - mpmath.quad(f, [0, mpmath.mpf(x)])) < 1e-20


def test_defective_cdf_limit():
    d = PhaseTypeDist.from_arrays(["1"], [["-3"]], q=["1"])
    assert abs(cdf(d, 50) - nk.big(2) / 3) < 1e-20


def test_negative_argument(f0):
    with pytest.raises(NegativeArgument):
        density(f0, -1)
    with pytest.raises(NegativeArgument):
        cdf(f0, "-0.5")


def test_sample_exponential_mean():
    draws = sample(exponential(2), 7, size=100_000)
    se = 0.5 / math.sqrt(draws.size)
    assert abs(draws.mean() - 0.5) < 3 * se


def test_sample_f0_mean(f0):
    draws = sample(f0, 8, size=100_000)
    mean = float(f0.mean())
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - mean) < 3 * se


def test_sample_is_deterministic(f0):
    assert np.array_equal(sample(f0, 99, size=500), sample(f0, 99, size=500))
    assert not np.array_equal(sample(f0, 99, size=500), sample(f0, 100, size=500))
