# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nearest-neighbour kernels.

Mirrors ``_kernels_py`` in interface. Squared distances are accumulated
coordinate by coordinate and abandoned once they pass the running bound;
results agree with the numpy backend up to rounding.
"""
import numpy as np
cimport numpy as cnp
from cpython.dict cimport PyDict_GetItem
from cpython.ref cimport PyObject
from libc.math cimport floor, fabs

cnp.import_array()

BACKEND = "cython"


cdef enum:
    CHUNK = 256
    MAX_LEAD = 16
    MAX_KEY = 3


cdef class Bucket:
    """Growable block of templates plus a column-major copy of their lead coordinates.

    ``nearest_sq`` first accumulates the squared distance over the lead
    coordinates for a chunk of rows in a branch-free loop, then runs the
    full comparison only for rows whose partial sum is still below the
    running bound. Partial sums never exceed the full distance, so the
    filter is exact.
    """

    cdef readonly Py_ssize_t n
    cdef readonly Py_ssize_t dim
    cdef readonly Py_ssize_t nlead
    cdef Py_ssize_t cap
    cdef object _lead_arr
    cdef object _data_arr
    cdef object _order_arr
    cdef double[:, ::1] lead
    cdef double[:, ::1] data
    cdef Py_ssize_t[::1] order

    def __init__(self, Py_ssize_t dim, lead_order, Py_ssize_t capacity=8):
        self.dim = dim
        self._order_arr = np.ascontiguousarray(lead_order, dtype=np.intp)
        self.order = self._order_arr
        self.nlead = self._order_arr.shape[0]
        self.n = 0
        self.cap = max(capacity, 1)
        self._lead_arr = np.empty((self.nlead, self.cap))
        self._data_arr = np.empty((self.cap, dim))
        self.lead = self._lead_arr
        self.data = self._data_arr

    cdef void _grow(self):
        cdef Py_ssize_t new_cap = self.cap * 2
        lead = np.empty((self.nlead, new_cap))
        data = np.empty((new_cap, self.dim))
        lead[:, : self.n] = self._lead_arr[:, : self.n]
        data[: self.n] = self._data_arr[: self.n]
        self._lead_arr, self._data_arr = lead, data
        self.lead, self.data = lead, data
        self.cap = new_cap

    def append(self, const double[::1] row):
        cdef Py_ssize_t j
        if row.shape[0] != self.dim:
            raise ValueError("row length does not match bucket dimension")
        if self.n == self.cap:
            self._grow()
        for j in range(self.dim):
            self.data[self.n, j] = row[j]
        for j in range(self.nlead):
            self.lead[j, self.n] = row[self.order[j]]
        self.n += 1

    def rows(self):
        return self._data_arr[: self.n]

    cdef double _scan(self, const double* q, const double* q_lead, double best, double stop) noexcept nogil:
        cdef Py_ssize_t i, j, start, m, n = self.n, dim = self.dim, nlead = self.nlead
        cdef double s, diff, qj
        cdef double partial[CHUNK]
        cdef const double* col
        cdef const double* row
        start = 0
        while start < n:
            m = min(<Py_ssize_t>CHUNK, n - start)
            for i in range(m):
                partial[i] = 0.0
            for j in range(nlead):
                qj = q_lead[j]
                col = &self.lead[j, start]
                for i in range(m):
                    diff = qj - col[i]
                    partial[i] += diff * diff
            for i in range(m):
                if partial[i] >= best:
                    continue
                row = &self.data[start + i, 0]
                s = 0.0
                for j in range(dim):
                    diff = q[j] - row[j]
                    s = s + diff * diff
                    if s >= best:
                        break
                if s < best:
                    best = s
                    if best < stop:
                        return best
            start += CHUNK
        return best

    def nearest_sq(self, const double[::1] q, const double[::1] q_lead, double best, double stop):
        """``min(best, min squared distance)``; may return early once below ``stop``."""
        if q.shape[0] != self.dim or q_lead.shape[0] != self.nlead:
            raise ValueError("query does not match bucket dimension")
        if self.n == 0:
            return best
        with nogil:
            best = self._scan(&q[0], &q_lead[0], best, stop)
        return best


cdef class Grid:
    """Buckets keyed by ``floor(t[:key_dims] / cell_edge)``.

    Searches visit cells in a key neighbourhood (or every cell) and skip
    any cell whose box lies at least the running bound away from the query
    in the key coordinates.
    """

    cdef readonly Py_ssize_t dim
    cdef readonly Py_ssize_t key_dims
    cdef readonly Py_ssize_t n
    cdef readonly double cell_edge
    cdef Py_ssize_t nlead
    cdef object _order_arr
    cdef Py_ssize_t[::1] order
    cdef dict buckets

    def __init__(self, Py_ssize_t dim, double cell_edge, Py_ssize_t key_dims, lead_order):
        if not cell_edge > 0:
            raise ValueError("cell_edge must be positive")
        if not 1 <= key_dims <= min(<Py_ssize_t>MAX_KEY, dim):
            raise ValueError("key_dims must lie in [1, min(3, dim)]")
        self.dim = dim
        self.cell_edge = cell_edge
        self.key_dims = key_dims
        self._order_arr = np.ascontiguousarray(lead_order, dtype=np.intp)
        self.order = self._order_arr
        self.nlead = self._order_arr.shape[0]
        if self.nlead > MAX_LEAD:
            raise ValueError("too many lead coordinates")
        self.n = 0
        self.buckets = {}

    cdef tuple _key(self, const double* q):
        if self.key_dims == 3:
            return (<long>floor(q[0] / self.cell_edge), <long>floor(q[1] / self.cell_edge),
                    <long>floor(q[2] / self.cell_edge))
        if self.key_dims == 2:
            return (<long>floor(q[0] / self.cell_edge), <long>floor(q[1] / self.cell_edge))
        return (<long>floor(q[0] / self.cell_edge),)

    def key(self, const double[::1] q):
        return self._key(&q[0])

    def add(self, const double[::1] row):
        if row.shape[0] != self.dim:
            raise ValueError("row length does not match grid dimension")
        key = self._key(&row[0])
        bucket = self.buckets.get(key)
        if bucket is None:
            bucket = Bucket(self.dim, self._order_arr)
            self.buckets[key] = bucket
        bucket.append(row)
        self.n += 1

    def rows(self):
        if not self.buckets:
            return np.empty((0, self.dim))
        return np.concatenate([b.rows() for b in self.buckets.values()])

    def bucket_sizes(self):
        return {k: (<Bucket>b).n for k, b in self.buckets.items()}

    cdef double _cell_bound(self, const double* q, long* cell) noexcept nogil:
        cdef Py_ssize_t i
        cdef double lo, hi, gap, slack, lb = 0.0
        for i in range(self.key_dims):
            lo = cell[i] * self.cell_edge
            hi = lo + self.cell_edge
            if q[i] < lo:
                gap = lo - q[i]
            elif q[i] > hi:
                gap = q[i] - hi
            else:
                continue
            # keys come from rounded divisions; keep the bound conservative
            slack = 1e-12 * (fabs(q[i]) + fabs(lo) + self.cell_edge)
            if gap > slack:
                gap -= slack
                lb += gap * gap
        return lb

    def nearest_sq(self, const double[::1] q, Py_ssize_t reach, double best, double stop):
        """Search cells within ``reach`` keys of ``q`` (all cells if ``reach < 0``)."""
        cdef double q_lead[MAX_LEAD]
        cdef long base[MAX_KEY]
        cdef long cell[MAX_KEY]
        cdef long lo[MAX_KEY]
        cdef long hi[MAX_KEY]
        cdef long a, b, c
        cdef Py_ssize_t i
        cdef PyObject* found
        cdef const double* qp
        if q.shape[0] != self.dim:
            raise ValueError("query does not match grid dimension")
        if self.n == 0:
            return best
        qp = &q[0]
        for i in range(self.nlead):
            q_lead[i] = qp[self.order[i]]
        if reach < 0:
            for key, bucket in self.buckets.items():
                for i in range(self.key_dims):
                    cell[i] = key[i]
                if self._cell_bound(qp, cell) >= best:
                    continue
                best = (<Bucket>bucket)._scan(qp, q_lead, best, stop)
                if best < stop:
                    return best
            return best
        for i in range(MAX_KEY):
            if i < self.key_dims:
                base[i] = <long>floor(qp[i] / self.cell_edge)
                lo[i] = base[i] - reach
                hi[i] = base[i] + reach
            else:
                base[i] = lo[i] = hi[i] = 0
        for a in range(lo[0], hi[0] + 1):
            cell[0] = a
            for b in range(lo[1], hi[1] + 1):
                cell[1] = b
                for c in range(lo[2], hi[2] + 1):
                    cell[2] = c
                    if self._cell_bound(qp, cell) >= best:
                        continue
                    if self.key_dims == 3:
                        key = (a, b, c)
                    elif self.key_dims == 2:
                        key = (a, b)
                    else:
                        key = (a,)
                    found = PyDict_GetItem(self.buckets, key)
                    if found == NULL:
                        continue
                    best = (<Bucket>found)._scan(qp, q_lead, best, stop)
                    if best < stop:
                        return best
        return best


def nearest_sq_many(const double[:, ::1] queries, const double[:, ::1] data):
    """For every query row: (minimum squared distance to ``data`` rows, argmin)."""
    cdef Py_ssize_t nq = queries.shape[0], n = data.shape[0], dim = data.shape[1]
    cdef Py_ssize_t a, i, j, arg
    cdef double s, diff, best
    if queries.shape[1] != dim:
        raise ValueError("query and data widths differ")
    out = np.full(nq, np.inf)
    idx = np.full(nq, -1, dtype=np.intp)
    cdef double[::1] out_v = out
    cdef Py_ssize_t[::1] idx_v = idx
    with nogil:
        for a in range(nq):
            best = out_v[a]
            arg = -1
            for i in range(n):
                s = 0.0
                for j in range(dim):
                    diff = queries[a, j] - data[i, j]
                    s = s + diff * diff
                    if s >= best:
                        break
                if s < best:
                    best = s
                    arg = i
            out_v[a] = best
            idx_v[a] = arg
    return out, idx


def min_pairwise_sq(const double[:, ::1] data):
    """Smallest squared distance over distinct row pairs, with the pair (i, j), i < j."""
    cdef Py_ssize_t n = data.shape[0], dim = data.shape[1]
    cdef Py_ssize_t a, b, j, bi = -1, bj = -1
    cdef double s, diff, best = np.inf
    with nogil:
        for a in range(n):
            for b in range(a + 1, n):
                s = 0.0
                for j in range(dim):
                    diff = data[a, j] - data[b, j]
                    s = s + diff * diff
                    if s >= best:
                        break
                if s < best:
                    best = s
                    bi = a
                    bj = b
    return best, bi, bj
