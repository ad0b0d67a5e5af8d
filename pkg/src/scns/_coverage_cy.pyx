# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the coverage-time simulators.

Same splitmix64 substream layout as `_coverage_np`; results are bit-identical
between the two backends. This one runs the draw loops in C, which is what
makes million-trial coupon-collector estimates cheap.
"""

import numpy as np

cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t MAX_DRAWS = 100000000ULL


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline Py_ssize_t upper_bound(const double* cdf, Py_ssize_t n, double u) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if u >= cdf[mid]:
            lo = mid + 1
        else:
            hi = mid
    return lo


def uniform_coverage_draws(int M, int k, Py_ssize_t trials, object seed):
    """Draws (uniform over M items) until items 0..k-1 have all been seen."""
    out_arr = np.zeros(trials, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef uint64_t seed64 = <uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t full = (<uint64_t> 1 << k) - 1
    cdef uint64_t m64 = <uint64_t> M
    cdef uint64_t tseed, raw, mask, idx
    cdef uint64_t j
    cdef Py_ssize_t t
    cdef bint overflow = False
    with nogil:
        for t in range(trials):
            tseed = mix64(seed64 + (<uint64_t> (t + 1)) * GOLDEN)
            mask = 0
            j = 0
            while mask != full:
                j += 1
                if j > MAX_DRAWS:
                    overflow = True
                    break
                raw = mix64(tseed + j * GOLDEN)
                idx = raw % m64
                if idx < <uint64_t> k:
                    mask |= <uint64_t> 1 << idx
            if overflow:
                break
            out[t] = <int64_t> j
    if overflow:
        raise RuntimeError(f"coverage simulation exceeded {MAX_DRAWS} draws in one "
                           "trial; check the target probabilities")
    return out_arr


def categorical_coverage_draws(cnp.ndarray[double, ndim=1] cdf,
                               cnp.ndarray[int64_t, ndim=1] bit_of,
                               int n_target, Py_ssize_t trials, object seed):
    """Categorical draws (inverse CDF) until every target item has been seen."""
    out_arr = np.zeros(trials, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef double[::1] cdf_v = np.ascontiguousarray(cdf)
    cdef int64_t[::1] bits_v = np.ascontiguousarray(bit_of)
    cdef Py_ssize_t n = cdf_v.shape[0]
    cdef uint64_t seed64 = <uint64_t> (int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t full = (<uint64_t> 1 << n_target) - 1
    cdef uint64_t tseed, raw, mask
    cdef uint64_t j
    cdef double u
    cdef Py_ssize_t t, idx
    cdef int64_t b
    cdef bint overflow = False
    with nogil:
        for t in range(trials):
            tseed = mix64(seed64 + (<uint64_t> (t + 1)) * GOLDEN)
            mask = 0
            j = 0
            while mask != full:
                j += 1
                if j > MAX_DRAWS:
                    overflow = True
                    break
                raw = mix64(tseed + j * GOLDEN)
                u = <double> (raw >> 11) * (1.0 / 9007199254740992.0)
                idx = upper_bound(&cdf_v[0], n, u)
                b = bits_v[idx]
                if b >= 0:
                    mask |= <uint64_t> 1 << <uint64_t> b
            if overflow:
                break
            out[t] = <int64_t> j
    if overflow:
        raise RuntimeError(f"coverage simulation exceeded {MAX_DRAWS} draws in one "
                           "trial; check the target probabilities")
    return out_arr
