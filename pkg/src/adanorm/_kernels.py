"""Compiled inner loops: portable PRNG, normal quantile, norm evaluation and
the Monte Carlo measure estimators.

Norms reach the kernels as ``(code, p, k)`` triples (see the ``K_*``
constants). Row functions return a monotone transform of the norm (``t``
space): ``sum |y_j|**p`` for the small exponents, the sum of the ``k``
largest squares for the sum-of-squares norms, and the norm itself for the
max-based and max-factored cases. Every comparison against a critical value
happens in ``t`` space, so critical values and acceptance counts come from
the same arithmetic and ties behave identically everywhere.
"""

import math

import numba
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0xD1B54A32D192ED03)
_TWO_M53 = 1.0 / 9007199254740992.0


# ----------------------------------------------------------------------------
# splitmix64 / xoshiro256++
# ----------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def splitmix64(x):
    """One splitmix64 output for state ``x`` (state advanced by the golden gamma)."""
    return _mix64(np.uint64(x) + _GOLDEN)


@njit(cache=True)
def seed_state(seed, stream_index):
    """xoshiro256++ state for ``(seed, stream_index)``.

    The splitmix64 state starts at ``seed ^ splitmix64(stream_index ^ salt)``
    and the four state words are its next four outputs.
    """
    sm = np.uint64(seed) ^ _mix64((np.uint64(stream_index) ^ _STREAM_SALT) + _GOLDEN)
    state = np.empty(4, dtype=np.uint64)
    for i in range(4):
        sm = sm + _GOLDEN
        state[i] = _mix64(sm)
    if state[0] == 0 and state[1] == 0 and state[2] == 0 and state[3] == 0:
        state[0] = np.uint64(1)
    return state


@njit(cache=True, inline="always")
def _next_u64(s):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    result = _rotl(s0 + s3, 23) + s0
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return result


@njit(cache=True)
def fill_u64(seed, stream_index, out):
    s = seed_state(seed, stream_index)
    for i in range(out.shape[0]):
        out[i] = _next_u64(s)


@njit(cache=True)
def derive_seed(seed, stream_index):
    """Seed of the child streams of ``(seed, stream_index)``."""
    s = seed_state(seed, stream_index)
    return _mix64(s[0] ^ _rotl(s[1], 17) ^ _STREAM_SALT)


@njit(cache=True)
def permutation(seed, stream_index, n):
    """Fisher-Yates shuffle of ``0..n-1`` driven by one stream."""
    s = seed_state(seed, stream_index)
    out = np.arange(n)
    for i in range(n - 1, 0, -1):
        u = np.float64(_next_u64(s) >> np.uint64(11)) * _TWO_M53
        j = int(u * (i + 1))
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return out


@njit(cache=True)
def fill_uniform(seed, stream_index, out):
    """Uniforms on the open interval (0, 1): ``((x >> 11) + 0.5) * 2**-53``."""
    s = seed_state(seed, stream_index)
    for i in range(out.shape[0]):
        out[i] = (np.float64(_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO_M53


# ----------------------------------------------------------------------------
# Standard normal quantile (Wichura, AS 241, PPND16)
# ----------------------------------------------------------------------------


@njit(cache=True)
def ndtri(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        val = -val
    return val


@njit(cache=True)
def fill_normal(seed, stream_index, out):
    s = seed_state(seed, stream_index)
    for i in range(out.shape[0]):
        u = (np.float64(_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO_M53
        out[i] = ndtri(u)


@njit(cache=True)
def fill_normal_streams(seed, first_stream, out):
    """Row ``i`` of ``out`` holds the first ``d`` normals of stream ``first_stream + i``."""
    n, d = out.shape
    for i in range(n):
        s = seed_state(seed, np.uint64(first_stream) + np.uint64(i))
        for j in range(d):
            u = (np.float64(_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO_M53
            out[i, j] = ndtri(u)


@njit(cache=True)
def antithetic_rows(z, L, out):
    """``out[2i] = L @ z[i]`` and ``out[2i+1] = -out[2i]``."""
    n, d = z.shape
    for i in range(n):
        for a in range(d):
            acc = 0.0
            for b in range(a + 1):
                acc += L[a, b] * z[i, b]
            out[2 * i, a] = acc
            out[2 * i + 1, a] = -acc


# ----------------------------------------------------------------------------
# Norms
#
# Each row function has the signature ``(U, r, s, v, p, k, buf)`` and returns
# the transformed value of ``U[r] + s * v``. Kernels receive the row function
# as their first argument, so numba compiles one specialisation per norm kind
# with no per-row dispatch.
# ----------------------------------------------------------------------------


@njit(cache=True, inline="always")
def t_linf(U, r, s, v, p, k, buf):
    m = 0.0
    for j in range(U.shape[1]):
        a = abs(U[r, j] + s * v[j])
        if a > m:
            m = a
    return m


@njit(cache=True, inline="always")
def t_l1(U, r, s, v, p, k, buf):
    t = 0.0
    for j in range(U.shape[1]):
        t += abs(U[r, j] + s * v[j])
    return t


@njit(cache=True, inline="always")
def t_l2(U, r, s, v, p, k, buf):
    t = 0.0
    for j in range(U.shape[1]):
        y = U[r, j] + s * v[j]
        t += y * y
    return t


@njit(cache=True, inline="always")
def t_l4(U, r, s, v, p, k, buf):
    t = 0.0
    for j in range(U.shape[1]):
        y = U[r, j] + s * v[j]
        q = y * y
        t += q * q
    return t


@njit(cache=True, inline="always")
def t_l6(U, r, s, v, p, k, buf):
    t = 0.0
    for j in range(U.shape[1]):
        y = U[r, j] + s * v[j]
        q = y * y
        t += q * q * q
    return t


@njit(cache=True, inline="always")
def t_lp(U, r, s, v, p, k, buf):
    t = 0.0
    for j in range(U.shape[1]):
        t += abs(U[r, j] + s * v[j]) ** p
    return t


@njit(cache=True, inline="always")
def t_lbig(U, r, s, v, p, k, buf):
    # max-factored so that sum(|y|**p) never overflows; returns the norm itself
    m = 0.0
    for j in range(U.shape[1]):
        a = abs(U[r, j] + s * v[j])
        if a > m:
            m = a
    if m == 0.0:
        return 0.0
    t = 0.0
    for j in range(U.shape[1]):
        t += (abs(U[r, j] + s * v[j]) / m) ** p
    return m * t ** (1.0 / p)


@njit(cache=True, inline="always")
def t_ssq(U, r, s, v, p, k, buf):
    # sum of the k largest squares; buf[:k] holds them in descending order
    nfill = 0
    for j in range(U.shape[1]):
        y = U[r, j] + s * v[j]
        q = y * y
        if nfill < k:
            i = nfill
            nfill += 1
        elif q > buf[k - 1]:
            i = k - 1
        else:
            continue
        while i > 0 and buf[i - 1] < q:
            buf[i] = buf[i - 1]
            i -= 1
        buf[i] = q
    t = 0.0
    for i in range(k):
        t += buf[i]
    return t


@njit(cache=True, inline="always")
def t_ssq_small(U, r, s, v, p, k, buf):
    # Branch-free form for small d: the sum of the k largest entries of q is
    # min over j of k*q_j + sum_i max(q_i - q_j, 0), attained at the k-th
    # largest q_j. Quadratic in d but much faster than sorting when d <= 16.
    d = U.shape[1]
    for j in range(d):
        y = U[r, j] + s * v[j]
        buf[j] = y * y
    best = np.inf
    for j in range(d):
        qj = buf[j]
        f = k * qj
        for i in range(d):
            e = buf[i] - qj
            f += e if e > 0.0 else 0.0
        best = f if f < best else best
    return best


# Kernel codes: one per row function.
K_L1 = 0
K_L2 = 1
K_L4 = 2
K_L6 = 3
K_LP = 4
K_LBIG = 5
K_LINF = 6
K_SSQ = 7
K_SSQ_SMALL = 8
SSQ_SMALL_MAX_D = 16


@njit(cache=True, inline="always")
def t_row(code, U, r, s, v, p, k, buf):
    # ``code`` is a compile-time literal in every kernel, so this folds to a
    # single row function.
    if code == K_L1:
        return t_l1(U, r, s, v, p, k, buf)
    elif code == K_L2:
        return t_l2(U, r, s, v, p, k, buf)
    elif code == K_L4:
        return t_l4(U, r, s, v, p, k, buf)
    elif code == K_L6:
        return t_l6(U, r, s, v, p, k, buf)
    elif code == K_LP:
        return t_lp(U, r, s, v, p, k, buf)
    elif code == K_LBIG:
        return t_lbig(U, r, s, v, p, k, buf)
    elif code == K_LINF:
        return t_linf(U, r, s, v, p, k, buf)
    elif code == K_SSQ:
        return t_ssq(U, r, s, v, p, k, buf)
    else:
        return t_ssq_small(U, r, s, v, p, k, buf)


@njit(cache=True, inline="always")
def t_to_norm(code, p, t):
    if code == K_L2 or code == K_SSQ or code == K_SSQ_SMALL:
        return math.sqrt(t)
    if code == K_L4:
        return math.sqrt(math.sqrt(t))
    if code == K_L6 or code == K_LP:
        return t ** (1.0 / p)
    return t


@njit(cache=True, inline="always")
def norm_to_t(code, p, c):
    if code == K_L2 or code == K_SSQ or code == K_SSQ_SMALL:
        return c * c
    if code == K_L4:
        return (c * c) * (c * c)
    if code == K_L6:
        return (c * c) * (c * c) * (c * c)
    if code == K_LP:
        return c ** p
    return c


@njit(cache=True)
def _rows_t(code, p, k, U, out):
    numba.literally(code)
    buf = np.empty(max(U.shape[1], 1))
    zero = np.zeros(U.shape[1])
    for i in range(U.shape[0]):
        out[i] = t_row(code, U, i, 0.0, zero, p, k, buf)


@njit(cache=True, nogil=True)
def _count_capped(code, p, k, U, s, v, t_crit, cap):
    """Acceptance count, stopping as soon as it exceeds ``cap``."""
    numba.literally(code)
    buf = np.empty(max(U.shape[1], 1))
    c = 0
    for i in range(U.shape[0]):
        if t_row(code, U, i, s, v, p, k, buf) <= t_crit:
            c += 1
            if c > cap:
                return c
    return c


@njit(cache=True, nogil=True)
def _pass(code, p, k, U, s, v, t_crit, out, buf):
    numba.literally(code)
    c = 0
    for i in range(U.shape[0]):
        t = t_row(code, U, i, s, v, p, k, buf)
        out[i] = t
        if t <= t_crit:
            c += 1
    return c


# ----------------------------------------------------------------------------
# Multiplicative factor along a unit direction
# ----------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _mf(code, p, k, U, row_t0, t_crit, c_crit, v, lip, tau, rel_tol,
        s_max, guess, work, active, buf):
    """Bisection for ``min{s >= 0 : Lambda(s) <= tau}`` along direction ``v``.

    ``Lambda(s)`` is the fraction of rows ``u`` of ``U`` with
    ``phi(u + s v) <= c_crit``. The bracket is grown geometrically around
    ``guess`` until ``Lambda(lo) > tau >= Lambda(hi)`` (``lo = 0`` always
    qualifies because ``Lambda(0) >= 1 - alpha > tau``); plain bisection then
    keeps that property until ``hi - lo <= rel_tol * hi``.

    Rows whose status cannot change inside the current bracket are settled
    once: accepted at both ends means accepted throughout (the sublevel set of
    a norm along a line is an interval), and rejected at both ends with
    ``(h_lo + h_hi - lip * (hi - lo)) / 2 > c_crit`` means rejected
    throughout (``s -> phi(u + s v)`` is ``lip``-Lipschitz with
    ``lip >= phi(v)``). Only the remaining rows are re-evaluated, which gives
    the same answer as evaluating every row at every midpoint.

    ``work`` is a ``(3, m)`` scratch array. Returns ``inf`` when ``Lambda``
    stays above ``tau`` up to ``s_max``.
    """
    numba.literally(code)
    m = U.shape[0]
    limit = tau * m
    t_a = work[0]
    t_b = work[1]
    t_mid = work[2]
    step = 0.05
    if not (guess > 0.0 and guess < s_max):
        guess = 1.0
    cnt = _pass(code, p, k, U, guess, v, t_crit, t_a, buf)
    if cnt > limit:
        lo = guess
        t_lo = t_a
        t_hi = t_b
        while True:
            hi = lo * (1.0 + step)
            if hi > s_max:
                return np.inf
            cnt = _pass(code, p, k, U, hi, v, t_crit, t_hi, buf)
            if cnt <= limit:
                break
            lo = hi
            t_lo, t_hi = t_hi, t_lo
            step *= 2.0
    else:
        hi = guess
        t_hi = t_a
        t_lo = t_b
        while True:
            if step >= 1.0:
                lo = 0.0
                for i in range(m):
                    t_lo[i] = row_t0[i]
                break
            lo = hi * (1.0 - step)
            cnt = _pass(code, p, k, U, lo, v, t_crit, t_lo, buf)
            if cnt > limit:
                break
            hi = lo
            t_lo, t_hi = t_hi, t_lo
            step *= 2.0
    margin = c_crit * 1e-10 + 1e-300
    n_act = 0
    settled = 0
    for i in range(m):
        a_lo = t_lo[i] <= t_crit
        a_hi = t_hi[i] <= t_crit
        if a_lo and a_hi:
            settled += 1
        elif (not a_lo) and (not a_hi):
            h_lo = t_to_norm(code, p, t_lo[i])
            h_hi = t_to_norm(code, p, t_hi[i])
            if 0.5 * (h_lo + h_hi - lip * (hi - lo)) <= c_crit + margin:
                active[n_act] = i
                n_act += 1
        else:
            active[n_act] = i
            n_act += 1

    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        cnt = settled
        for a in range(n_act):
            t = t_row(code, U, active[a], mid, v, p, k, buf)
            t_mid[a] = t
            if t <= t_crit:
                cnt += 1
        go_left = cnt <= limit
        if go_left:
            hi = mid
        else:
            lo = mid
        new_n = 0
        for a in range(n_act):
            i = active[a]
            if go_left:
                t_hi[i] = t_mid[a]
            else:
                t_lo[i] = t_mid[a]
            a_lo = t_lo[i] <= t_crit
            a_hi = t_hi[i] <= t_crit
            if a_lo and a_hi:
                settled += 1
            elif (not a_lo) and (not a_hi):
                h_lo = t_to_norm(code, p, t_lo[i])
                h_hi = t_to_norm(code, p, t_hi[i])
                if 0.5 * (h_lo + h_hi - lip * (hi - lo)) <= c_crit + margin:
                    active[new_n] = i
                    new_n += 1
            else:
                active[new_n] = i
                new_n += 1
        n_act = new_n
    return hi


# ----------------------------------------------------------------------------
# Dispatch on kernel code (once per call, never per row)
# ----------------------------------------------------------------------------


@njit(cache=True)
def rows_t(code, p, k, U, out):
    """Transformed norm values of every row of ``U``."""
    if code == K_L1:
        _rows_t(0, p, k, U, out)
    elif code == K_L2:
        _rows_t(1, p, k, U, out)
    elif code == K_L4:
        _rows_t(2, p, k, U, out)
    elif code == K_L6:
        _rows_t(3, p, k, U, out)
    elif code == K_LP:
        _rows_t(4, p, k, U, out)
    elif code == K_LBIG:
        _rows_t(5, p, k, U, out)
    elif code == K_LINF:
        _rows_t(6, p, k, U, out)
    elif code == K_SSQ:
        _rows_t(7, p, k, U, out)
    else:
        _rows_t(8, p, k, U, out)


@njit(cache=True, nogil=True)
def count_capped(code, p, k, U, s, v, t_crit, cap):
    """Number of rows with ``t(u + s v) <= t_crit``; stops once it exceeds ``cap``."""
    if code == K_L1:
        return _count_capped(0, p, k, U, s, v, t_crit, cap)
    elif code == K_L2:
        return _count_capped(1, p, k, U, s, v, t_crit, cap)
    elif code == K_L4:
        return _count_capped(2, p, k, U, s, v, t_crit, cap)
    elif code == K_L6:
        return _count_capped(3, p, k, U, s, v, t_crit, cap)
    elif code == K_LP:
        return _count_capped(4, p, k, U, s, v, t_crit, cap)
    elif code == K_LBIG:
        return _count_capped(5, p, k, U, s, v, t_crit, cap)
    elif code == K_LINF:
        return _count_capped(6, p, k, U, s, v, t_crit, cap)
    elif code == K_SSQ:
        return _count_capped(7, p, k, U, s, v, t_crit, cap)
    return _count_capped(8, p, k, U, s, v, t_crit, cap)


@njit(cache=True, nogil=True)
def mf_code(code, p, k, U, row_t0, t_crit, c_crit, v, lip, tau, rel_tol, s_max,
            guess, work, active, buf):
    if code == K_L1:
        return _mf(0, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_L2:
        return _mf(1, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_L4:
        return _mf(2, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_L6:
        return _mf(3, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_LP:
        return _mf(4, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_LBIG:
        return _mf(5, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_LINF:
        return _mf(6, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    elif code == K_SSQ:
        return _mf(7, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                   rel_tol, s_max, guess, work, active, buf)
    return _mf(8, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
               rel_tol, s_max, guess, work, active, buf)


@njit(cache=True, nogil=True)
def norm_and_gradient(code, p, k, v, grad, buf):
    """Norm of ``v`` and a (sub)gradient of the norm at ``v`` written to ``grad``."""
    d = v.shape[0]
    for j in range(d):
        grad[j] = 0.0
    if code == K_LINF or (code == K_LBIG and p == np.inf):
        jm = 0
        for j in range(d):
            if abs(v[j]) > abs(v[jm]):
                jm = j
        grad[jm] = 1.0 if v[jm] >= 0.0 else -1.0
        return abs(v[jm])
    if code == K_SSQ or code == K_SSQ_SMALL:
        for j in range(d):
            buf[j] = v[j] * v[j]
        q = np.sort(buf[:d])
        thr = q[d - k]
        total = 0.0
        taken = 0
        for j in range(d):
            if v[j] * v[j] > thr:
                total += v[j] * v[j]
                grad[j] = v[j]
                taken += 1
        for j in range(d):
            if taken < k and v[j] * v[j] == thr:
                total += thr
                grad[j] = v[j]
                taken += 1
        nv = math.sqrt(total)
        if nv > 0.0:
            for j in range(d):
                grad[j] /= nv
        return nv
    if code == K_L1:
        nv = 0.0
        for j in range(d):
            nv += abs(v[j])
            grad[j] = 1.0 if v[j] > 0.0 else (-1.0 if v[j] < 0.0 else 0.0)
        return nv
    mx = 0.0
    for j in range(d):
        if abs(v[j]) > mx:
            mx = abs(v[j])
    if mx == 0.0:
        return 0.0
    acc = 0.0
    for j in range(d):
        acc += (abs(v[j]) / mx) ** p
    nv = mx * acc ** (1.0 / p)
    for j in range(d):
        r = abs(v[j]) / nv
        g = r ** (p - 1.0)
        grad[j] = g if v[j] >= 0.0 else -g
    return nv


@njit(cache=True, nogil=True)
def _guess_and_lip(code, p, k, v, sigma, c_crit, z_tau, grad, buf):
    # Linearised guess: phi(u + s v) ~ s phi(v) + <grad, u>, so Lambda(s) = tau
    # near s = (c + z_{1-tau} * sd(<grad, u>)) / phi(v).
    nv = norm_and_gradient(code, p, k, v, grad, buf)
    d = v.shape[0]
    var = 0.0
    for a in range(d):
        ga = grad[a]
        if ga == 0.0:
            continue
        row = 0.0
        for b in range(d):
            row += sigma[a, b] * grad[b]
        var += ga * row
    sd = math.sqrt(var) if var > 0.0 else 0.0
    lip = nv * (1.0 + 1e-12)
    if nv <= 0.0:
        return 1.0, lip
    return (c_crit + z_tau * sd) / nv, lip


@njit(cache=True, nogil=True)
def gamma_direction(codes, ps, ks, masks, U, T0, t_crits, c_crits, scales, sigma,
                    x, kind, tau, rel_tol, max_doublings, z_tau, skip, per, best):
    """Measure values of ``x`` for a set of norms and the minimum per group.

    ``kind`` 0 is the acceptance rate, 1 the multiplicative factor (computed
    along ``x / |x|_2`` and rescaled). Norm ``q`` belongs to group ``g`` when
    bit ``g`` of ``masks[q]`` is set; ``best[g]`` receives the minimum over
    the group.

    With ``skip`` set, a norm whose acceptance count at the running minimum of
    all its groups already exceeds the target is not resolved further (its
    value cannot be the minimum) and ``per`` receives ``inf`` for it.
    ``scales`` multiply the linearised starting guesses (see ``guess_scale``).
    """
    K = codes.shape[0]
    G = best.shape[0]
    m, d = U.shape
    buf = np.empty(max(d, 1))
    if kind == 0:
        best_cnt = np.full(G, m + 1, dtype=np.int64)
        for q in range(K):
            cap = m
            if skip:
                cap = -1
                for g in range(G):
                    if (masks[q] >> g) & 1 and best_cnt[g] > cap:
                        cap = best_cnt[g]
            c = count_capped(codes[q], ps[q], ks[q], U, 1.0, x, t_crits[q], cap)
            per[q] = c / m if c <= cap else np.inf
            for g in range(G):
                if (masks[q] >> g) & 1 and c < best_cnt[g]:
                    best_cnt[g] = c
        for g in range(G):
            best[g] = best_cnt[g] / m if best_cnt[g] <= m else np.inf
        return
    nrm = 0.0
    for j in range(d):
        nrm += x[j] * x[j]
    nrm = math.sqrt(nrm)
    for g in range(G):
        best[g] = np.inf
    if nrm == 0.0:
        for q in range(K):
            per[q] = np.inf
        return
    v = x / nrm
    # the doubling cap applies to the factor on x itself
    s_max = 2.0 ** max_doublings * nrm
    guesses = np.empty(K)
    lips = np.empty(K)
    grad = np.empty(d)
    for q in range(K):
        g0, l0 = _guess_and_lip(codes[q], ps[q], ks[q], v, sigma, c_crits[q],
                                z_tau, grad, buf)
        guesses[q] = g0 * scales[q]
        lips[q] = l0
    order = np.argsort(guesses, kind="mergesort")
    work = np.empty((3, m))
    active = np.empty(m, dtype=np.int64)
    cap_tau = int(math.floor(tau * m))
    unit_best = np.full(G, np.inf)
    for r in range(K):
        q = order[r]
        if skip:
            bound = -1.0
            for g in range(G):
                if (masks[q] >> g) & 1 and unit_best[g] > bound:
                    bound = unit_best[g]
            if bound < np.inf:
                c = count_capped(codes[q], ps[q], ks[q], U, bound, v, t_crits[q],
                                 cap_tau)
                if c > cap_tau:
                    per[q] = np.inf
                    continue
        val = mf_code(codes[q], ps[q], ks[q], U, T0[q], t_crits[q], c_crits[q], v,
                      lips[q], tau, rel_tol, s_max, guesses[q], work, active, buf)
        per[q] = val / nrm
        for g in range(G):
            if (masks[q] >> g) & 1 and val < unit_best[g]:
                unit_best[g] = val
    for g in range(G):
        best[g] = unit_best[g] / nrm


@njit(cache=True, nogil=True)
def null_block(codes, ps, ks, masks, U, T0, t_crits, c_crits, scales, sigma, X,
               kind, tau, rel_tol, max_doublings, z_tau, out):
    """Per-group adaptive statistic for every row of ``X`` (outer null draws)."""
    per = np.empty(codes.shape[0])
    for i in range(X.shape[0]):
        gamma_direction(codes, ps, ks, masks, U, T0, t_crits, c_crits, scales,
                        sigma, X[i], kind, tau, rel_tol, max_doublings, z_tau,
                        True, per, out[i])


@njit(cache=True, nogil=True)
def guess_scale(code, p, k, U, row_t0, t_crit, c_crit, sigma, tau, rel_tol,
                max_doublings, z_tau, n_pilot):
    """Median ratio of the exact factor to the linearised guess.

    The pilot directions are the first ``n_pilot`` non-negated rows of ``U``,
    so the result depends on the draws and the norm only. It merely moves the
    starting point of the bracket search.
    """
    m, d = U.shape
    n = min(n_pilot, m // 2)
    if n == 0:
        return 1.0
    ratios = np.empty(n)
    work = np.empty((3, m))
    active = np.empty(m, dtype=np.int64)
    buf = np.empty(max(d, 1))
    grad = np.empty(d)
    for i in range(n):
        x = U[2 * i]
        nrm = math.sqrt(np.sum(x * x))
        if nrm == 0.0:
            ratios[i] = 1.0
            continue
        v = x / nrm
        g, lip = _guess_and_lip(code, p, k, v, sigma, c_crit, z_tau, grad, buf)
        val = mf_code(code, p, k, U, row_t0, t_crit, c_crit, v, lip, tau,
                      rel_tol, 2.0 ** max_doublings * nrm, g, work, active, buf)
        ratios[i] = val / g if (val < np.inf and g > 0.0) else 1.0
    return np.median(ratios)


# ----------------------------------------------------------------------------
# Local-linear smoothing
# ----------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def local_linear_fit(W, t, h, out):
    """Gaussian local-linear fit of ``t`` on each column of ``W`` at the data.

    The kernel matrix is symmetric, so each pair is visited once. Where the
    local design is singular the local-constant fit is used.
    """
    n, d = W.shape
    s0 = np.empty(n)
    s1 = np.empty(n)
    s2 = np.empty(n)
    t0 = np.empty(n)
    t1 = np.empty(n)
    for j in range(d):
        inv = 1.0 / h[j]
        for i in range(n):
            s0[i] = 1.0
            s1[i] = 0.0
            s2[i] = 0.0
            t0[i] = t[i]
            t1[i] = 0.0
        for i in range(n):
            xi = W[i, j]
            ti = t[i]
            for l in range(i + 1, n):
                dx = W[l, j] - xi
                z = dx * inv
                k = math.exp(-0.5 * z * z)
                kd = k * dx
                kdd = kd * dx
                tl = t[l]
                s0[i] += k
                s0[l] += k
                s1[i] += kd
                s1[l] -= kd
                s2[i] += kdd
                s2[l] += kdd
                t0[i] += k * tl
                t0[l] += k * ti
                t1[i] += kd * tl
                t1[l] -= kd * ti
        for i in range(n):
            den = s0[i] * s2[i] - s1[i] * s1[i]
            if den > 1e-10 * s0[i] * s2[i]:
                out[i, j] = (s2[i] * t0[i] - s1[i] * t1[i]) / den
            else:
                out[i, j] = t0[i] / s0[i]
