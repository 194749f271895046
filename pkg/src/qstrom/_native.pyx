# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled kernels: 64-bit modular exponentiation and the greedy matching loop.

Moduli must be below 2**63 so that products fit the 128-bit intermediate.
"""

from libc.stdlib cimport malloc, free

cdef extern from *:
    """
    static inline unsigned long long qs_mulmod(unsigned long long a,
                                               unsigned long long b,
                                               unsigned long long m) {
        return (unsigned long long)(((unsigned __int128)a * b) % m);
    }
    """
    unsigned long long qs_mulmod(unsigned long long a, unsigned long long b,
                                 unsigned long long m) nogil

ctypedef unsigned long long u64
ctypedef long long i64

MAX_MODULUS = (1 << 63) - 1


cdef inline u64 _powmod(u64 base, u64 exp, u64 mod) nogil:
    cdef u64 result = 1 % mod
    base %= mod
    while exp:
        if exp & 1:
            result = qs_mulmod(result, base, mod)
        base = qs_mulmod(base, base, mod)
        exp >>= 1
    return result


def powmod(base, exp, mod):
    if mod <= 1 or mod > MAX_MODULUS or exp < 0:
        return pow(base, exp, mod)
    return _powmod(<u64>(base % mod), <u64>exp, <u64>mod)


def dual_powmod(a, x, b, y, mod):
    """a**x * b**y mod `mod` with a shared squaring chain (Shamir's trick)."""
    if mod <= 1 or mod > MAX_MODULUS or x < 0 or y < 0:
        return pow(a, x, mod) * pow(b, y, mod) % mod
    cdef u64 m = mod
    cdef u64 ua = a % mod
    cdef u64 ub = b % mod
    cdef u64 ux = x
    cdef u64 uy = y
    cdef u64 ab = qs_mulmod(ua, ub, m)
    cdef u64 result = 1 % m
    cdef int bit
    cdef int top = 63
    with nogil:
        while top >= 0 and not (((ux >> top) | (uy >> top)) & 1):
            top -= 1
        bit = top
        while bit >= 0:
            result = qs_mulmod(result, result, m)
            if (ux >> bit) & 1:
                if (uy >> bit) & 1:
                    result = qs_mulmod(result, ab, m)
                else:
                    result = qs_mulmod(result, ua, m)
            elif (uy >> bit) & 1:
                result = qs_mulmod(result, ub, m)
            bit -= 1
    return result


cdef bint _feasible(i64 *bp, i64 *be, Py_ssize_t nb, i64 *sp, i64 *se, Py_ssize_t ns,
                    i64 volume) nogil:
    # top-`volume` buy units walked lowest-first against the cheapest sell units
    cdef i64 skip = 0, total = 0, b_left, s_left, step
    cdef Py_ssize_t i, j = 0
    for i in range(nb):
        total += be[i]
    skip = total - volume
    i = nb - 1
    while i >= 0 and skip >= be[i]:
        skip -= be[i]
        i -= 1
    if volume == 0:
        return True
    b_left = be[i] - skip
    s_left = se[0]
    while volume > 0:
        if bp[i] < sp[j]:
            return False
        step = b_left if b_left < s_left else s_left
        if step > volume:
            step = volume
        volume -= step
        b_left -= step
        s_left -= step
        if b_left == 0 and volume > 0:
            i -= 1
            b_left = be[i]
        if s_left == 0 and volume > 0:
            j += 1
            s_left = se[j]
    return True


def match_sorted(buy_prices, buy_energy, sell_prices, sell_energy):
    """Maximum-volume matching over books given in priority order.

    Buys arrive highest price first and sells cheapest first. The served set is
    the longest priority prefix on each side that can be paired; pairs are formed
    marginal-to-marginal (lowest served buy with cheapest sell). Returns
    (buy_index, sell_index, energy, trade_price) tuples.
    """
    cdef Py_ssize_t nb = len(buy_prices)
    cdef Py_ssize_t ns = len(sell_prices)
    cdef i64 *bp = <i64 *> malloc((nb + 1) * sizeof(i64))
    cdef i64 *be = <i64 *> malloc((nb + 1) * sizeof(i64))
    cdef i64 *sp = <i64 *> malloc((ns + 1) * sizeof(i64))
    cdef i64 *se = <i64 *> malloc((ns + 1) * sizeof(i64))
    cdef i64 *out = <i64 *> malloc((nb + ns + 1) * 4 * sizeof(i64))
    cdef Py_ssize_t i, j, k = 0, idx
    cdef i64 lo = 0, hi = 0, mid, tb = 0, ts = 0, skip, b_left, s_left, step, volume
    if not bp or not be or not sp or not se or not out:
        free(bp); free(be); free(sp); free(se); free(out)
        raise MemoryError()
    try:
        for idx in range(nb):
            bp[idx] = buy_prices[idx]
            be[idx] = buy_energy[idx]
            tb += be[idx]
        for idx in range(ns):
            sp[idx] = sell_prices[idx]
            se[idx] = sell_energy[idx]
            ts += se[idx]
        with nogil:
            hi = tb if tb < ts else ts
            while lo < hi:
                mid = lo + (hi - lo + 1) // 2
                if _feasible(bp, be, nb, sp, se, ns, mid):
                    lo = mid
                else:
                    hi = mid - 1
            volume = lo
            if volume > 0:
                skip = tb - volume
                i = nb - 1
                while skip >= be[i]:
                    skip -= be[i]
                    i -= 1
                b_left = be[i] - skip
                j = 0
                s_left = se[0]
                while volume > 0:
                    step = b_left if b_left < s_left else s_left
                    out[4 * k] = i
                    out[4 * k + 1] = j
                    out[4 * k + 2] = step
                    out[4 * k + 3] = (bp[i] + sp[j]) // 2
                    k += 1
                    volume -= step
                    b_left -= step
                    s_left -= step
                    if b_left == 0 and volume > 0:
                        i -= 1
                        b_left = be[i]
                    if s_left == 0 and volume > 0:
                        j += 1
                        s_left = se[j]
        return [(out[4 * idx], out[4 * idx + 1], out[4 * idx + 2], out[4 * idx + 3])
                for idx in range(k)]
    finally:
        free(bp); free(be); free(sp); free(se); free(out)
