# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled error-vector kernels; see ``_pykernels`` for the reference twin."""

cdef enum:
    DIM = 7
    SIZE = 49


cdef inline void _load(object seq, double* buf, int n) except *:
    cdef int i
    for i in range(n):
        buf[i] = seq[i]


cdef inline tuple _mat_tuple(double* buf):
    return tuple([buf[i] for i in range(SIZE)])


cdef inline tuple _vec_tuple(double* buf):
    return (buf[0], buf[1], buf[2], buf[3], buf[4], buf[5], buf[6])


cdef void _matmul(double* a, double* b, double* out) noexcept nogil:
    cdef int i, j, k
    cdef double aik
    for i in range(SIZE):
        out[i] = 0.0
    for i in range(DIM):
        for k in range(DIM):
            aik = a[i * DIM + k]
            if aik == 0.0:
                continue
            for j in range(DIM):
                out[i * DIM + j] += aik * b[k * DIM + j]


cdef void _vecmat(double* v, double* m, double* out) noexcept nogil:
    cdef int j, k
    cdef double vk
    for j in range(DIM):
        out[j] = 0.0
    for k in range(DIM):
        vk = v[k]
        if vk == 0.0:
            continue
        for j in range(DIM):
            out[j] += vk * m[k * DIM + j]


def matmul(a, b):
    cdef double ca[SIZE]
    cdef double cb[SIZE]
    cdef double out[SIZE]
    _load(a, ca, SIZE)
    _load(b, cb, SIZE)
    _matmul(ca, cb, out)
    return _mat_tuple(out)


def vecmat(v, m):
    cdef double cv[DIM]
    cdef double cm[SIZE]
    cdef double out[DIM]
    _load(v, cv, DIM)
    _load(m, cm, SIZE)
    _vecmat(cv, cm, out)
    return _vec_tuple(out)


def matpow(m, long n):
    cdef double result[SIZE]
    cdef double base[SIZE]
    cdef double tmp[SIZE]
    cdef int i
    for i in range(SIZE):
        result[i] = 1.0 if i % (DIM + 1) == 0 else 0.0
    _load(m, base, SIZE)
    while n:
        if n & 1:
            _matmul(result, base, tmp)
            for i in range(SIZE):
                result[i] = tmp[i]
        n >>= 1
        if n:
            _matmul(base, base, tmp)
            for i in range(SIZE):
                base[i] = tmp[i]
    return _mat_tuple(result)


def evolve_powers(v, list powers, long steps):
    cdef double cv[DIM]
    cdef double cm[SIZE]
    cdef double out[DIM]
    cdef int i = 0
    cdef int j
    _load(v, cv, DIM)
    while steps:
        if steps & 1:
            _load(powers[i], cm, SIZE)
            _vecmat(cv, cm, out)
            for j in range(DIM):
                cv[j] = out[j]
        steps >>= 1
        i += 1
    return _vec_tuple(cv)


def sample_index(v, double u):
    cdef double acc = 0.0
    cdef double p
    cdef int j
    cdef int last = 0
    for j in range(DIM):
        p = v[j]
        if p > 0.0:
            acc += p
            last = j
            if u < acc:
                return j
    return last


def identity():
    return tuple([1.0 if i % (DIM + 1) == 0 else 0.0 for i in range(SIZE)])
