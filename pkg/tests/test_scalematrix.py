import warnings

import gmpy2
import numpy as np
import pytest
from gmpy2 import mpfr

from scalekit import numkernel as nk
from scalekit.errors import DimensionMismatch, NegativeArgument, TruncationWarning
from scalekit.modelbuild import Deterministic, FiniteDiscrete, build_iid_map
from scalekit.phasetype import PhaseTypeDist
from scalekit.scalematrix import (
    VTable,
    direct_block_exponential,
    jump_sum_law,
    matrix_exponent,
    norm_bound,
    scale_eval,
    scale_eval_deterministic,
    scale_eval_discrete_jumps,
    vtable_build,
)

from conftest import bundled, max_abs
from laplace import laplace_check

BUNDLED = ["example1_sn", "example1_sp", "example2_sn", "example2_sp"]


def random_pair(seed, n=2):
    rng = np.random.default_rng(seed)
    T = rng.uniform(0.1, 1.0, (n, n))
    B = rng.uniform(0.1, 1.0, (n, n))
    np.fill_diagonal(T, 0)
    np.fill_diagonal(T, -(T.sum(axis=1) + B.sum(axis=1)))
    return nk.matrix(T), nk.matrix(B)


def series_block(table, k, x):
    x = nk.big(x)
    out = nk.zeros(table.dim)
    c = mpfr(1)
    for n in range(table.n_max + 1):
        out = out + c * table[n, k]
        c = c * x / (n + 1)
    return out


def erlang(n, rate):
    T = nk.zeros(n)
    for i in range(n):
        T[i, i] = -nk.big(rate)
        if i + 1 < n:
            T[i, i + 1] = nk.big(rate)
    alpha = nk.zeros_vec(n)
    alpha[0] = mpfr(1)
    return PhaseTypeDist.from_arrays(alpha, T)


def test_vtable_first_column_is_powers():
    T, B = random_pair(1, 3)
    table = vtable_build(T, B, n_max=5)
    power = nk.eye(3)
    for n in range(6):
        assert max_abs(table[n, 1] - power) == 0 or max_abs(table[n, 1] - power) < nk.tol(2)
        power = T @ power


def test_vtable_base_cases():
    T, B = random_pair(2, 3)
    table = vtable_build(T, B, n_max=6, k_max=4)
    assert (table[0, 1] == nk.eye(3)).all()
    assert (table[1, 2] == B).all()
    assert max_abs(table[2, 3] - B @ B) < nk.tol(2)
    for k in range(2, 5):
        for n in range(k - 1):
            assert max_abs(table[n, k]) == 0


def test_vtable_recursion():
    T, B = random_pair(3, 3)
    table = vtable_build(T, B, n_max=8, k_max=4)
    for k in range(2, 5):
        for n in range(1, 9):
            rhs = T @ table[n - 1, k] + B @ table[n - 1, k - 1]
            assert max_abs(table[n, k] - rhs) < nk.tol(4)


def test_vtable_checks_shapes():
    with pytest.raises(DimensionMismatch):
        VTable(nk.eye(2), nk.eye(3))
    with pytest.raises(DimensionMismatch):
        VTable(nk.eye(3), nk.eye(3), block_sizes=(1, 1))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
@pytest.mark.parametrize("x", ["0.3", "1.0"])
def test_series_matches_block_exponential(k, x):
    T, B = random_pair(10 + k, 2)
    table = vtable_build(T, B, n_max=80, k_max=k)
    diff = series_block(table, k, x) - direct_block_exponential(T, B, k, x)
    assert max_abs(diff) < mpfr(10) ** -20


@pytest.mark.parametrize("which", ["f0", "f2"])
def test_series_matches_block_exponential_on_example_laws(which, request):
    d = request.getfixturevalue(which)
    T, B = d.T, np.outer(d.t, d.alpha)
    table = vtable_build(T, B, n_max=100, k_max=5)
    for k in range(1, 6):
        diff = series_block(table, k, "1.5") - direct_block_exponential(T, B, k, "1.5")
        assert max_abs(diff) < mpfr(10) ** -20


@pytest.mark.parametrize("n_phases,k", [(2, 1), (2, 3), (3, 2), (4, 3)])
def test_erlang_closed_form(n_phases, k):
    rate = nk.big("1.7")
    d = erlang(n_phases, rate)
    table = vtable_build(d.T, np.outer(d.t, d.alpha), n_max=120, k_max=k)
    for x in ("0.4", "2.5"):
        x = nk.big(x)
        block = series_block(table, k, x)
        for i in range(1, n_phases + 1):
            for j in range(1, n_phases + 1):
                m = k * n_phases - (i - 1) - (n_phases - j)
                if m < 1:
                    expected = mpfr(0)
                else:
                    # Erlang(m, rate) density over rate
                    expected = rate ** (m - 1) * x ** (m - 1) * gmpy2.exp(-rate * x) / gmpy2.fac(m - 1)
                assert abs(block[i - 1, j - 1] - expected) < mpfr(10) ** -15


@pytest.mark.parametrize("name", BUNDLED)
def test_w_at_zero(name):
    m = bundled(name).map_model()
    ev = scale_eval(m, 0)
    assert max_abs(ev.W - nk.eye(m.dim) / m.gamma) <= nk.tol(8)
    assert max_abs(ev.Wbar) == 0
    assert ev.right_limit_at_origin


def test_single_atom_matches_deterministic(f0):
    c = nk.big("0.65")
    det = build_iid_map(f0, "0.1", Deterministic(c))
    disc = build_iid_map(f0, "0.1", FiniteDiscrete([(c, 1)]))
    for x in ("0.3", "1.3", "2.1"):
        a = scale_eval_deterministic(det, x)
        b = scale_eval_discrete_jumps(disc, x)
        for part in ("W", "Wprime", "Wbar"):
            assert max_abs(getattr(a, part) - getattr(b, part)) < mpfr(10) ** -25 * max(1, max_abs(getattr(a, part)))


def test_jump_sum_enumeration():
    law = FiniteDiscrete([("1", "0.5"), ("2", "0.5")])
    assert dict((float(y), float(p)) for y, p in jump_sum_law(law, 1)) == {1.0: 0.5, 2.0: 0.5}
    assert dict((float(y), float(p)) for y, p in jump_sum_law(law, 2)) == {2.0: 0.25, 3.0: 0.5, 4.0: 0.25}
    assert [(float(y), float(p)) for y, p in jump_sum_law(law, 2, nk.big("2.5"))] == [(2.0, 0.25)]
    m = build_iid_map(PhaseTypeDist.from_arrays(["1"], [["-1"]]), 1, law)
    assert scale_eval(m, "2.5").k_terms_used == 3


def test_matrix_exponent_at_zero(ex1_sn):
    m = ex1_sn.map_model()
    F = matrix_exponent(m, 0)
    assert max_abs(F @ nk.ones_vec(m.dim)) < nk.tol(2)
    disc = build_iid_map(ex1_sn.f0, "0.1", FiniteDiscrete([(m.jump_law.c, 1)]))
    det = build_iid_map(ex1_sn.f0, "0.1", m.jump_law)
    assert (matrix_exponent(det, 0) == matrix_exponent(disc, 0)).all()


def test_matrix_exponent_invertible_for_large_s(ex1_sn):
    m = ex1_sn.map_model()
    for s in (5, 50, 500):
        nk.lu_factor(matrix_exponent(m, s))


@pytest.mark.parametrize("name", ["example1_sn", "example1_sp"])
def test_wbar_derivative_is_w(name):
    m = bundled(name).map_model()
    x = nk.big("0.83")
    w = scale_eval(m, x).W
    errors = []
    for h in ("1e-3", "1e-4", "1e-5"):
        h = nk.big(h)
        fd = (scale_eval(m, x + h, parts=("Wbar",)).Wbar - scale_eval(m, x - h, parts=("Wbar",)).Wbar) / (2 * h)
        errors.append(max_abs(fd - w) / max_abs(w))
    # central differences: error falls by about 100 per decade of h
    assert errors[2] < 1e-7
    assert errors[1] < errors[0] / 50 and errors[2] < errors[1] / 50


@pytest.mark.parametrize("name", ["example1_sn", "example1_sp"])
def test_w_derivative_is_wprime(name):
    m = bundled(name).map_model()
    c = m.jump_law.c
    x = c * nk.big("1.37")  # away from the lattice
    wp = scale_eval(m, x).Wprime
    errors = []
    for h in ("1e-3", "1e-4", "1e-5"):
        h = nk.big(h)
        fd = (scale_eval(m, x + h, parts=("W",)).W - scale_eval(m, x - h, parts=("W",)).W) / (2 * h)
        errors.append(max_abs(fd - wp) / max_abs(wp))
    assert errors[2] < 1e-8
    assert errors[2] < errors[0]


def test_wprime_is_right_derivative_on_lattice(ex1_sn):
    m = ex1_sn.map_model()
    x = m.jump_law.c
    wp = scale_eval(m, x).Wprime
    h = nk.big("1e-8")
    fd = (scale_eval(m, x + h, parts=("W",)).W - scale_eval(m, x, parts=("W",)).W) / h
    assert max_abs(fd - wp) / max_abs(wp) < 1e-6


@pytest.mark.parametrize("name", BUNDLED)
def test_norm_bound(name):
    m = bundled(name).map_model()
    for x in ("0", "0.2", "0.7", "1.3", "2.4"):
        w = scale_eval(m, x, parts=("W",)).W
        assert nk.mat_norm_inf(w) <= nk.big("1.01") * norm_bound(m, x)


def test_laplace_identity_small_model():
    # two phases, two jump sizes: cheap enough to integrate densely
    d = PhaseTypeDist.from_arrays(["0.6", "0.4"], [["-1.2", "0.5"], ["0.3", "-0.9"]])
    m = build_iid_map(d, "0.5", FiniteDiscrete([("0.4", "0.7"), ("0.9", "0.3")]))
    for s, rel in laplace_check(m):
        assert rel < 1e-6, (s, rel)


def test_truncation_warning():
    T, B = random_pair(7, 2)
    d = PhaseTypeDist.from_arrays(["0.5", "0.5"], [["-2", "1"], ["1", "-2"]])
    m = build_iid_map(d, "0.1", Deterministic("5"))
    with pytest.warns(TruncationWarning):
        ev = scale_eval(m, "4", n_max=10)
    assert ev.truncated
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncationWarning)
        assert not scale_eval(m, "0.2", n_max=100).truncated


def test_negative_x():
    d = PhaseTypeDist.from_arrays(["1"], [["-1"]])
    m = build_iid_map(d, 1, Deterministic(1))
    with pytest.raises(NegativeArgument):
        scale_eval(m, "-0.1")


def test_lattice_point_drops_vanishing_term(ex1_sn):
    # at x = c the k = 2 contribution is zero, so W is continuous from the left
    m = ex1_sn.map_model()
    c = m.jump_law.c
    on = scale_eval(m, c, parts=("W",)).W
    left = scale_eval(m, c - nk.big("1e-12"), parts=("W",)).W
    assert max_abs(on - left) / max_abs(on) < 1e-9
