# cython: language_level=3
"""Compiled simulation kernel; the reference semantics live in ``_pykernels.py``."""

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.stdint cimport int64_t, uint64_t
from libc.stdlib cimport calloc, free, malloc
from numpy.random cimport bitgen_t

import numpy as np

cdef extern from *:
    """
    static inline uint64_t mb_mulhi(uint64_t a, uint64_t b) {
        return (uint64_t)(((unsigned __int128)a * b) >> 64);
    }
    """
    uint64_t mb_mulhi(uint64_t a, uint64_t b) nogil

cdef enum:
    ONE = 0
    TWO = 1
    BETA = 2
    MEAN = 3
    RT = 4
    ROUND_RT = 5
    KRT = 6
    QUANTILE = 7
    ZETA = 8
    QUANTILE_LOAD = 9


cdef bitgen_t* _bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("not a numpy bit generator")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline int64_t _ceil_div(int64_t a, int64_t b) noexcept nogil:
    if a >= 0:
        return (a + b - 1) // b
    return -((-a) // b)


cdef class Simulator:
    cdef bitgen_t* _rng
    cdef object _bit_generator
    cdef int64_t* _loads
    cdef int64_t* _hist
    cdef int64_t _cap
    cdef int64_t* _offsets
    cdef int _n_offsets
    cdef int _kind
    cdef uint64_t _coin
    cdef int64_t _w_plus, _w_minus
    cdef int64_t _rank, _above, _boundary
    cdef readonly int64_t n, total_weight, round, samples
    cdef readonly int64_t overloaded, max_load, min_load, quantile_load
    cdef readonly int64_t good_lo, good_hi, good_rounds, counted_rounds

    def __cinit__(self):
        self._loads = NULL
        self._hist = NULL
        self._offsets = NULL

    def __init__(self, loads, total_weight, round, samples, params, bit_generator, good_lo, good_hi):
        cdef int64_t[::1] src = np.ascontiguousarray(loads, dtype=np.int64)
        cdef int64_t i, x, span
        self.n = src.shape[0]
        self._loads = <int64_t*> malloc(self.n * sizeof(int64_t))
        if self._loads == NULL:
            raise MemoryError()
        for i in range(self.n):
            self._loads[i] = src[i]
        self.total_weight = total_weight
        self.round = round
        self.samples = samples
        self._kind = params.kind
        self._coin = params.coin_threshold
        offsets = [int(f) for f in params.offsets]
        self._n_offsets = len(offsets)
        self._offsets = <int64_t*> malloc((self._n_offsets + 1) * sizeof(int64_t))
        for i in range(self._n_offsets):
            self._offsets[i] = offsets[i]
        self._w_plus = params.w_plus
        self._w_minus = params.w_minus
        self._rank = params.rank
        self._bit_generator = bit_generator
        self._rng = _bitgen(bit_generator)
        self.good_lo = good_lo
        self.good_hi = good_hi
        self.good_rounds = 0
        self.counted_rounds = 0

        self.max_load = self._loads[0]
        self.min_load = self._loads[0]
        for i in range(self.n):
            x = self._loads[i]
            if x > self.max_load:
                self.max_load = x
            if x < self.min_load:
                self.min_load = x
        span = self.max_load - self.min_load + 1
        self._cap = 64
        while self._cap < 2 * span:
            self._cap *= 2
        self._hist = <int64_t*> calloc(self._cap, sizeof(int64_t))
        if self._hist == NULL:
            raise MemoryError()
        for i in range(self.n):
            self._hist[self._loads[i] & (self._cap - 1)] += 1
        self._boundary = _ceil_div(self.total_weight, self.n)
        self.overloaded = 0
        for i in range(self.n):
            if self._loads[i] >= self._boundary:
                self.overloaded += 1
        self.quantile_load = -1
        self._above = 0
        if self._rank > 0:
            ordered = sorted((self._loads[i] for i in range(self.n)), reverse=True)
            self.quantile_load = ordered[self._rank - 1]
            for i in range(self.n):
                if self._loads[i] > self.quantile_load:
                    self._above += 1

    def __dealloc__(self):
        free(self._loads)
        free(self._hist)
        free(self._offsets)

    def loads(self):
        out = np.empty(self.n, dtype=np.int64)
        cdef int64_t[::1] view = out
        cdef int64_t i
        for i in range(self.n):
            view[i] = self._loads[i]
        return out

    def reset_good(self):
        self.good_rounds = 0
        self.counted_rounds = 0

    def add_samples(self, int64_t count):
        self.samples += count

    cdef inline uint64_t _u64(self) noexcept nogil:
        return self._rng.next_uint64(self._rng.state)

    cdef inline int64_t _below(self) noexcept nogil:
        return <int64_t> mb_mulhi(self._u64(), <uint64_t> self.n)

    cdef inline int _level(self, int64_t dev) noexcept nogil:
        cdef int level = 0
        while level < self._n_offsets and dev < self._offsets[level]:
            level += 1
        return level

    cdef inline int64_t _choose(self, int64_t* used) noexcept nogil:
        cdef int kind = self._kind
        cdef int64_t n = self.n
        cdef int64_t w = self.total_weight
        cdef int64_t i1, i2, x
        cdef int l1, l2
        cdef bint accept
        if kind == BETA:
            kind = TWO if (self._u64() >> 11) < self._coin else ONE
        elif kind == ZETA:
            kind = MEAN if (self._u64() >> 11) < self._coin else ONE
        if kind == ONE:
            used[0] = 1
            return self._below()
        if kind == TWO:
            i1 = self._below()
            i2 = self._below()
            used[0] = 2
            return i1 if self._loads[i1] < self._loads[i2] else i2
        if kind == KRT:
            i1 = self._below()
            l1 = self._level(self._loads[i1] * n - w)
            if l1 == self._n_offsets:
                used[0] = 1
                return i1
            i2 = self._below()
            l2 = self._level(self._loads[i2] * n - w)
            used[0] = 2
            return i1 if l1 >= l2 else i2
        i1 = self._below()
        x = self._loads[i1]
        if kind == MEAN:
            accept = x * n < w
        elif kind == RT:
            accept = x * n - w < self._offsets[0]
        elif kind == ROUND_RT:
            accept = x * n - self.round < self._offsets[0]
        elif kind == QUANTILE and x == self.quantile_load:
            accept = <int64_t> mb_mulhi(self._u64(), <uint64_t> self._hist[x & (self._cap - 1)]) >= self._rank - self._above
        else:
            accept = x < self.quantile_load
        if accept:
            used[0] = 1
            return i1
        used[0] = 2
        return self._below()

    cdef int _grow(self, int64_t span) except -1 nogil:
        cdef int64_t cap = self._cap
        cdef int64_t v
        cdef int64_t* fresh
        while cap <= span:
            cap *= 2
        fresh = <int64_t*> calloc(cap, sizeof(int64_t))
        if fresh == NULL:
            with gil:
                raise MemoryError()
        for v in range(self.min_load, self.max_load + 1):
            fresh[v & (cap - 1)] = self._hist[v & (self._cap - 1)]
        free(self._hist)
        self._hist = fresh
        self._cap = cap
        return 0

    cdef int _allocate(self, int64_t i, int64_t weight) except -1 nogil:
        cdef int64_t x = self._loads[i]
        cdef int64_t y = x + weight
        cdef int64_t mask, v, target
        if y - self.min_load >= self._cap:
            self._grow(y - self.min_load + 1)
        mask = self._cap - 1
        self._loads[i] = y
        self._hist[x & mask] -= 1
        self._hist[y & mask] += 1
        if y > self.max_load:
            self.max_load = y
        if x < self._boundary and self._boundary <= y:
            self.overloaded += 1
        if self._rank > 0 and x <= self.quantile_load and self.quantile_load < y:
            self._above += 1
        if x == self.min_load and self._hist[x & mask] == 0:
            v = x + 1
            while self._hist[v & mask] == 0:
                v += 1
            self.min_load = v
        self.total_weight += weight
        self.round += 1
        target = _ceil_div(self.total_weight, self.n)
        while self._boundary < target:
            if self._boundary >= self.min_load:
                self.overloaded -= self._hist[self._boundary & mask]
            self._boundary += 1
        if self._rank > 0:
            while self._above >= self._rank:
                v = self.quantile_load + 1
                while self._hist[v & mask] == 0:
                    v += 1
                self._above -= self._hist[v & mask]
                self.quantile_load = v
        return 0

    def allocate(self, int64_t i, int64_t weight):
        if not 0 <= i < self.n:
            raise IndexError(i)
        self._allocate(i, weight)

    def advance(self, int64_t rounds):
        cdef int64_t r, i, used, weight
        cdef int64_t n = self.n
        with self._bit_generator.lock:
            with nogil:
                for r in range(rounds):
                    self.counted_rounds += 1
                    if self.good_lo <= self.overloaded <= self.good_hi:
                        self.good_rounds += 1
                    i = self._choose(&used)
                    self.samples += used
                    weight = self._w_minus if self._loads[i] * n < self.total_weight else self._w_plus
                    self._allocate(i, weight)


def coupled_run(int64_t n, int64_t m, int64_t f, bit_generator):
    """Compiled twin of ``_pykernels.coupled_run``."""
    cdef bitgen_t* rng = _bitgen(bit_generator)
    a_arr = np.zeros(n, dtype=np.int64)
    b_arr = np.full(n, f, dtype=np.int64)
    c_arr = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] a = a_arr
    cdef int64_t[::1] b = b_arr
    cdef int64_t[::1] c = c_arr
    cdef int64_t t, j1, j2, i, k
    cdef int64_t fn = f * n
    cdef int64_t max_a = 0, max_c = 0
    cdef int kind = 0
    cdef int64_t bad_round = -1, bad_bin = -1
    with bit_generator.lock:
        with nogil:
            for t in range(m):
                j1 = <int64_t> mb_mulhi(rng.next_uint64(rng.state), <uint64_t> n)
                j2 = <int64_t> mb_mulhi(rng.next_uint64(rng.state), <uint64_t> n)
                i = j1 if a[j1] * n - t < fn else j2
                a[i] += 1
                if a[i] > max_a:
                    max_a = a[i]
                i = j1 if b[j1] * n - t < fn else j2
                b[i] += 1
                i = j1 if c[j1] * n < t else j2
                c[i] += 1
                if c[i] > max_c:
                    max_c = c[i]
                for k in range(n):
                    if a[k] > b[k]:
                        kind = 1
                        break
                    if b[k] != c[k] + f:
                        kind = 2
                        break
                if kind == 0 and max_a > max_c + f:
                    kind = 3
                    k = -1
                if kind != 0:
                    bad_round = t + 1
                    bad_bin = k
                    break
    result = {
        "violation": None,
        "rounds": m if kind == 0 else bad_round,
        "max_a": int(a_arr.max()),
        "max_b": int(b_arr.max()),
        "max_c": int(c_arr.max()),
    }
    if kind != 0:
        at = {} if bad_bin < 0 else {"a": int(a[bad_bin]), "b": int(b[bad_bin]), "c": int(c[bad_bin])}
        result["violation"] = {
            "kind": ("dominance", "shift", "gap")[kind - 1],
            "round": int(bad_round),
            "bin": int(bad_bin),
            **at,
        }
    return result
