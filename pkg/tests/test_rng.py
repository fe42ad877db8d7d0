import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from adanorm import _kernels as K
from adanorm.errors import DimensionMismatch, DomainError, NotPositiveDefinite
from adanorm.rng import (CovMatrix, SeededStream, cholesky_factor, cholesky_with_jitter,
                         outer_normals, sample_mvn, std_normal_cdf, std_normal_quantile)

M64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
SALT = 0xD1B54A32D192ED03


# pure-Python reference generator, written from the published algorithms
def mix64(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & M64


def ref_state(seed, stream):
    sm = seed ^ mix64(((stream ^ SALT) + GOLDEN) & M64)
    out = []
    for _ in range(4):
        sm = (sm + GOLDEN) & M64
        out.append(mix64(sm))
    return out


def ref_next(s):
    result = (rotl((s[0] + s[3]) & M64, 23) + s[0]) & M64
    t = (s[1] << 17) & M64
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)
    return result


def mp_quantile(u):
    # root of Phi(x) = u at 50 digits, solved on the smaller tail
    with mpmath.workdps(50):
        target = mpmath.mpf(min(u, 1.0 - u))
        lo, hi = mpmath.mpf(-40), mpmath.mpf(0)
        for _ in range(200):
            mid = (lo + hi) / 2
            if mpmath.ncdf(mid) < target:
                lo = mid
            else:
                hi = mid
        x = float((lo + hi) / 2)
    return x if u <= 0.5 else -x


def test_reference_generators_known_outputs():
    # splitmix64 from state 0 and xoshiro256++ from state (1, 2, 3, 4)
    assert mix64(GOLDEN) == 0xE220A8397B1DCDAF
    assert int(K.splitmix64(np.uint64(0))) == 0xE220A8397B1DCDAF
    assert ref_next([1, 2, 3, 4]) == 41943041


@given(st.integers(0, M64), st.integers(0, M64))
def test_stream_matches_reference(seed, stream):
    s = ref_state(seed, stream)
    expected = [ref_next(s) for _ in range(8)]
    assert [int(v) for v in SeededStream(seed, stream).u64(8)] == expected


def test_uniforms_are_open_interval_mapping():
    st_ = SeededStream(11, 3)
    raw = st_.u64(1000)
    u = st_.uniforms(1000)
    expected = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    assert np.array_equal(u, expected)
    assert np.all((u > 0) & (u < 1))


def test_determinism_and_distinct_streams():
    a = SeededStream(5, 0).normals(1000)
    assert np.array_equal(a, SeededStream(5, 0).normals(1000))
    b = SeededStream(5, 1).normals(1000)
    assert not np.array_equal(a, b)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15


def test_child_streams_are_independent_of_parent():
    root = SeededStream(5, 0)
    c0, c1 = root.child(0), root.child(1)
    assert c0.seed == c1.seed != root.seed
    assert not np.array_equal(c0.u64(4), root.u64(4))


def test_outer_normals_rows_are_child_streams():
    root = SeededStream(9, 2)
    rows = outer_normals(root, 7, 3, 4)
    for i in range(3):
        assert np.array_equal(rows[i], root.child(7 + i).normals(4))


@pytest.mark.parametrize("u,expected", [(0.5, 0.0), (0.975, 1.959964), (0.2, -0.841621)])
def test_quantile_examples(u, expected):
    assert std_normal_quantile(u) == pytest.approx(expected, abs=1e-6)


@given(st.floats(1e-300, 1 - 1e-16))
def test_quantile_against_mpmath(u):
    x = std_normal_quantile(u)
    assert x == pytest.approx(mp_quantile(u), rel=1e-14, abs=1e-15)


@given(st.floats(1e-12, 1 - 1e-12))
def test_cdf_of_quantile_is_identity(u):
    assert abs(std_normal_cdf(std_normal_quantile(u)) - u) <= 1e-12


@given(st.floats(-38.0, 8.0))
def test_cdf_against_mpmath(x):
    with mpmath.workdps(40):
        exact = float(mpmath.ncdf(x))
    assert abs(std_normal_cdf(x) - exact) <= 1e-12
    assert std_normal_cdf(x) == pytest.approx(exact, rel=1e-13)


@given(st.floats(-6.0, 6.0))
def test_quantile_of_cdf_is_identity(x):
    # Phi rounds to 1 - O(1e-16) near +6, where d quantile / du ~ 1e9
    tol = 1e-9 if x < 5.0 else 1e-9 + 2.2e-16 / (std_normal_cdf(-x) * 1.0)
    assert abs(std_normal_quantile(std_normal_cdf(x)) - x) <= tol


def test_vectorised_transforms():
    u = np.array([[0.1, 0.5], [0.9, 0.975]])
    q = std_normal_quantile(u)
    assert q.shape == (2, 2)
    assert np.allclose(std_normal_cdf(q), u, atol=1e-14)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5, math.nan])
def test_quantile_domain(u):
    with pytest.raises(DomainError):
        std_normal_quantile(u)


def test_cholesky_examples():
    assert np.array_equal(cholesky_factor(np.eye(3)), np.eye(3))
    assert np.allclose(cholesky_factor([[4.0, 0.0], [0.0, 9.0]]), [[2.0, 0.0], [0.0, 3.0]])
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    L = cholesky_factor(a)
    assert np.all(np.abs(L @ L.T - a) <= 1e-10 * (1 + np.abs(a)))
    assert np.all(np.diag(L) > 0) and L[0, 1] == 0.0


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_cholesky_reproduces_random_spd(d, seed):
    g = SeededStream(seed).normals(d * (d + 2)).reshape(d + 2, d)
    a = g.T @ g / (d + 2) + 0.1 * np.eye(d)
    L, eps = cholesky_with_jitter(a)
    assert eps == 0.0
    assert np.all(np.abs(L @ L.T - a) <= 1e-10 * (1 + np.abs(a)))


def test_cholesky_jitter_rescues_singular():
    a = np.ones((3, 3))
    L, eps = cholesky_with_jitter(a)
    assert eps in (1e-10, 1e-8, 1e-6)
    assert np.allclose(L @ L.T, a + eps * np.eye(3), atol=1e-12)


def test_cholesky_fails_after_jitter():
    with pytest.raises(NotPositiveDefinite):
        cholesky_factor(np.diag([1.0, -1.0]))


def test_cov_matrix_validation():
    with pytest.raises(DomainError):
        CovMatrix([[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(DimensionMismatch):
        CovMatrix(np.ones((2, 3)))
    c = CovMatrix([[1.0, 0.2], [0.2, 1.0]])
    with pytest.raises(ValueError):
        c.entries[0, 0] = 3.0


def test_sample_mvn_antithetic_and_deterministic():
    d = sample_mvn(np.eye(2), 2, SeededStream(1))
    assert np.array_equal(d.rows[1], -d.rows[0])
    a = sample_mvn(cholesky_factor([[2.0, 1.0], [1.0, 2.0]]), 1000, SeededStream(4, 1))
    b = sample_mvn(cholesky_factor([[2.0, 1.0], [1.0, 2.0]]), 1000, SeededStream(4, 1))
    assert np.array_equal(a.rows, b.rows)
    assert np.all(a.rows[0::2] + a.rows[1::2] == 0.0)
    assert not a.rows.flags.writeable


def test_sample_mvn_rows_are_cholesky_of_stream_normals():
    L = cholesky_factor([[2.0, 0.5, 0.1], [0.5, 1.0, 0.2], [0.1, 0.2, 3.0]])
    stream = SeededStream(8, 8)
    draws = sample_mvn(L, 10, stream)
    z = stream.normals(15).reshape(5, 3)
    assert np.allclose(draws.rows[0::2], z @ L.T, rtol=0, atol=1e-15)


def test_sample_mvn_rejects_odd_m():
    with pytest.raises(DomainError):
        sample_mvn(np.eye(2), 3, SeededStream(0))


def test_sample_variance_and_moments():
    draws = sample_mvn(cholesky_factor([[4.0]]), 200_000, SeededStream(21))
    assert 3.9 <= draws.rows[:, 0].var() <= 4.1
    sigma = np.array([[1.0, 0.6, -0.3], [0.6, 2.0, 0.4], [-0.3, 0.4, 1.5]])
    m = 200_000
    d = sample_mvn(cholesky_factor(sigma), m, SeededStream(22), sigma=sigma)
    emp = d.rows.T @ d.rows / m
    # se of a product moment of jointly normal pairs: sqrt((s_jj s_kk + s_jk^2) / (m/2))
    se = np.sqrt((np.outer(np.diag(sigma), np.diag(sigma)) + sigma**2) / (m / 2))
    assert np.all(np.abs(emp - sigma) <= 5 * se)
    assert np.allclose(d.rows.mean(axis=0), 0.0, atol=1e-12)
