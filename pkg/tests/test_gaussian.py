import math
import random

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import erf_grid, erf_series_mp, normal_cdf, normal_ppf, read_erf_reference
from proclimits.errors import BracketError, ConvergenceError, DomainError
from proclimits.gaussian import (
    Bracket,
    GaussianParams,
    cdf,
    erf_approx,
    expand_bracket,
    find_root_bracketed,
    ppf,
    standard_ppf,
    standard_score,
    std_cdf,
)

STD = GaussianParams(0.0, 1.0)
Q_GRID = [0.001, 0.01, 0.1, 0.5, 0.9, 0.99, 0.9973, 0.99865, 0.9999]


def test_standard_score_examples():
    p = GaussianParams(0.5, 0.25)
    assert standard_score(0.5, p) == 0.0
    assert standard_score(2.0, p) == 3.0
    assert standard_score(0.5 + 3 * math.sqrt(0.25), p) == 3.0


def test_standard_score_divides_by_std_not_variance():
    assert standard_score(4.0, GaussianParams(0.0, 4.0)) == 2.0


def test_erf_examples():
    assert erf_approx(0.0) == 0.0
    assert erf_approx(1.0) == pytest.approx(0.8427007929497149, abs=1e-7)
    assert erf_approx(-1.0) == -erf_approx(1.0)


def test_erf_clamps_beyond_six():
    assert erf_approx(6.5) == 1.0
    assert erf_approx(-40.0) == -1.0
    assert erf_approx(6.0) < 1.0 or erf_approx(6.0) == pytest.approx(1.0, abs=1e-16)


def test_erf_nan():
    with pytest.raises(ValueError):
        erf_approx(math.nan)


def test_erf_reference_file_matches_oracle():
    zs, refs = read_erf_reference()
    assert zs == erf_grid()
    rng = random.Random(0)
    for i in rng.sample(range(len(zs)), 25):
        assert refs[i] == float(erf_series_mp(zs[i]))
        # an independent implementation agrees with the series oracle
        assert refs[i] == pytest.approx(float(mpmath.erf(zs[i])), abs=1e-16)


def test_erf_accuracy_dense_grid():
    zs, refs = read_erf_reference()
    worst = max(abs(erf_approx(z) - r) for z, r in zip(zs, refs))
    assert worst <= 1e-7


def test_erf_odd_symmetry_grid():
    for z in erf_grid():
        assert erf_approx(-z) == -erf_approx(z)


def test_cdf_examples():
    assert cdf(1.7, GaussianParams(1.7, 3.0)) == 0.5
    assert cdf(3.0, STD) == pytest.approx(normal_cdf(3.0), abs=1e-6)
    assert cdf(3.0, STD) == pytest.approx(0.9986501, abs=1e-6)
    # 0.5 * (1 + erf) rounds differently on each side
    assert cdf(-3.0, STD) == pytest.approx(1.0 - cdf(3.0, STD), abs=1e-15)


def test_cdf_monotone():
    p = GaussianParams(2.0, 9.0)
    sd = 3.0
    xs = [2.0 - 8 * sd + 16 * sd * i / 9999 for i in range(10_000)]
    vals = [cdf(x, p) for x in xs]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[0] >= 0.0 and vals[-1] <= 1.0


def test_cdf_matches_reference():
    for x in [-7.5, -4.2, -1.0, 0.3, 2.2, 5.9, 8.0]:
        assert cdf(x, STD) == pytest.approx(normal_cdf(x), abs=1e-12)


def test_ppf_examples():
    assert ppf(0.5, GaussianParams(4.2, 2.0)) == pytest.approx(4.2, abs=1e-12)
    assert ppf(0.9986501, STD) == pytest.approx(3.0, abs=1e-3)
    assert ppf(0.9986501, STD) == pytest.approx(normal_ppf(0.9986501), abs=1e-9)
    for x in [-5.9, -3.0, -0.2, 0.0, 1.0, 4.4, 5.9]:
        assert ppf(cdf(x, STD), STD) == pytest.approx(x, abs=1e-6 * max(1, abs(x)))


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_ppf_domain(q):
    with pytest.raises(DomainError):
        ppf(q, STD)


@pytest.mark.parametrize("q", Q_GRID)
def test_ppf_roundtrip_grid(q):
    for params in [STD, GaussianParams(-3.0, 0.01), GaussianParams(1e4, 2.5e5)]:
        assert abs(cdf(ppf(q, params), params) - q) <= 1e-8


@pytest.mark.parametrize("q", Q_GRID)
def test_ppf_against_reference(q):
    assert standard_ppf(q) == pytest.approx(normal_ppf(q), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(
    q=st.sampled_from(Q_GRID),
    mean=st.floats(-1e4, 1e4),
    var=st.floats(1e-6, 1e6),
)
def test_ppf_affine_equivariance(q, mean, var):
    got = ppf(q, GaussianParams(mean, var))
    want = mean + math.sqrt(var) * ppf(q, STD)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("q", Q_GRID)
def test_ppf_symmetry(q):
    assert ppf(q, STD) == pytest.approx(-ppf(1 - q, STD), abs=1e-9)


def test_ppf_extreme_tails():
    # residual is bounded by erf rounding (~1e-15), not by the tail mass
    for q in [1e-12, 1e-9, 1 - 1e-9, 1 - 1e-12]:
        z = standard_ppf(q)
        assert abs(std_cdf(z) - q) <= 1e-14
        assert abs(z) < 10
    assert standard_ppf(1e-9) == pytest.approx(normal_ppf(1e-9), abs=1e-6)


def test_erf_saturates_near_one():
    assert erf_approx(5.2) == 1.0
    assert erf_approx(-5.2) == -1.0
    assert 0.0 < 1.0 - erf_approx(4.5) < 1e-9


def test_find_root_examples():
    b = Bracket(-10.0, 10.0)
    assert find_root_bracketed(0.5, b) == pytest.approx(0.0, abs=1e-9)
    assert find_root_bracketed(0.8413447, b) == pytest.approx(1.0, abs=1e-4)
    assert find_root_bracketed(0.0013499, b) == pytest.approx(-3.0, abs=1e-3)


def test_find_root_residual_within_tolerance():
    for q in [0.02, 0.3, 0.77, 0.999]:
        z = find_root_bracketed(q, Bracket(-10.0, 10.0))
        assert abs(std_cdf(z) - q) <= 1e-9


def test_find_root_invalid_bracket():
    with pytest.raises(BracketError):
        find_root_bracketed(0.99, Bracket(-1.0, 1.0))
    with pytest.raises(BracketError):
        find_root_bracketed(0.01, Bracket(0.0, 3.0))


def test_find_root_iteration_cap():
    with pytest.raises(ConvergenceError):
        find_root_bracketed(0.3, Bracket(-10.0, 10.0), tol=0.0, xtol=0.0, maxiter=3)


def test_expand_bracket_default_is_initial():
    b = expand_bracket(0.99865)
    assert (b.lo, b.hi, b.factor) == (-10.0, 10.0, 10.0)


def test_expand_bracket_grows_geometrically():
    b = expand_bracket(0.9999, factor=2.0)
    assert (b.lo, b.hi) == (2.0, 4.0)
    b = expand_bracket(1e-4, factor=2.0)
    assert (b.lo, b.hi) == (-4.0, -2.0)
    for q in [1e-4, 0.9999]:
        b = expand_bracket(q, factor=2.0)
        assert std_cdf(b.lo) <= q <= std_cdf(b.hi)
