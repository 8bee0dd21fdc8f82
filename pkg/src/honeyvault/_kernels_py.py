"""Pure-numpy fallback for the compiled kernels in ``_kernels.pyx``."""
import itertools
import math

import numpy as np

BACKEND = "python"

_BLOCK = 1024


class Bucket:
    def __init__(self, dim, lead_order, capacity=8):
        self.dim = int(dim)
        self.order = np.asarray(lead_order, dtype=np.intp)
        self.nlead = self.order.size
        self.n = 0
        self._data = np.empty((max(int(capacity), 1), self.dim))

    def append(self, row):
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.dim,):
            raise ValueError("row length does not match bucket dimension")
        if self.n == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self.dim))
            grown[: self.n] = self._data[: self.n]
            self._data = grown
        self._data[self.n] = row
        self.n += 1

    def rows(self):
        return self._data[: self.n]

    def nearest_sq(self, q, q_lead, best, stop):
        if len(q) != self.dim or len(q_lead) != self.nlead:
            raise ValueError("query does not match bucket dimension")
        if self.n == 0:
            return best
        diff = self._data[: self.n] - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        return min(best, float(d2.min()))


class Grid:
    def __init__(self, dim, cell_edge, key_dims, lead_order):
        if not cell_edge > 0:
            raise ValueError("cell_edge must be positive")
        if not 1 <= key_dims <= min(3, dim):
            raise ValueError("key_dims must lie in [1, min(3, dim)]")
        self.dim = int(dim)
        self.cell_edge = float(cell_edge)
        self.key_dims = int(key_dims)
        self.order = np.asarray(lead_order, dtype=np.intp)
        self.n = 0
        self.buckets = {}

    def key(self, q):
        return tuple(math.floor(q[i] / self.cell_edge) for i in range(self.key_dims))

    def add(self, row):
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.dim,):
            raise ValueError("row length does not match grid dimension")
        key = self.key(row)
        bucket = self.buckets.get(key)
        if bucket is None:
            bucket = self.buckets[key] = Bucket(self.dim, self.order)
        bucket.append(row)
        self.n += 1

    def rows(self):
        if not self.buckets:
            return np.empty((0, self.dim))
        return np.concatenate([b.rows() for b in self.buckets.values()])

    def bucket_sizes(self):
        return {k: b.n for k, b in self.buckets.items()}

    def _cell_bound(self, q, cell):
        lb = 0.0
        for i, k in enumerate(cell):
            lo = k * self.cell_edge
            hi = lo + self.cell_edge
            if q[i] < lo:
                gap = lo - q[i]
            elif q[i] > hi:
                gap = q[i] - hi
            else:
                continue
            slack = 1e-12 * (abs(q[i]) + abs(lo) + self.cell_edge)
            if gap > slack:
                lb += (gap - slack) ** 2
        return lb

    def nearest_sq(self, q, reach, best, stop):
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError("query does not match grid dimension")
        if self.n == 0:
            return best
        q_lead = q[self.order]
        if reach < 0:
            cells = list(self.buckets)
        else:
            base = self.key(q)
            offsets = itertools.product(range(-reach, reach + 1), repeat=self.key_dims)
            cells = [tuple(b + o for b, o in zip(base, off)) for off in offsets]
        for cell in cells:
            bucket = self.buckets.get(cell)
            if bucket is None or self._cell_bound(q, cell) >= best:
                continue
            best = bucket.nearest_sq(q, q_lead, best, stop)
            if best < stop:
                return best
        return best


def nearest_sq_many(queries, data):
    queries = np.asarray(queries, dtype=np.float64)
    data = np.asarray(data, dtype=np.float64)
    if queries.shape[1] != data.shape[1]:
        raise ValueError("query and data widths differ")
    out = np.full(queries.shape[0], np.inf)
    idx = np.full(queries.shape[0], -1, dtype=np.intp)
    if data.shape[0] == 0:
        return out, idx
    data_sq = np.einsum("ij,ij->i", data, data)
    for start in range(0, queries.shape[0], _BLOCK):
        q = queries[start : start + _BLOCK]
        # Gram form locates the argmin; the reported value is recomputed exactly
        approx = np.einsum("ij,ij->i", q, q)[:, None] + data_sq[None, :] - 2.0 * q @ data.T
        arg = np.argmin(approx, axis=1)
        diff = q - data[arg]
        out[start : start + q.shape[0]] = np.einsum("ij,ij->i", diff, diff)
        idx[start : start + q.shape[0]] = arg
    return out, idx


def min_pairwise_sq(data):
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    best, bi, bj = np.inf, -1, -1
    if n < 2:
        return best, bi, bj
    sq = np.einsum("ij,ij->i", data, data)
    for start in range(0, n - 1, _BLOCK):
        block = data[start : start + _BLOCK]
        approx = sq[start : start + block.shape[0], None] + sq[None, :] - 2.0 * block @ data.T
        rows = np.arange(start, start + block.shape[0])
        approx[np.arange(block.shape[0])[:, None] >= (np.arange(n)[None, :] - start)] = np.inf
        flat = int(np.argmin(approx))
        i, j = divmod(flat, n)
        if not np.isfinite(approx[i, j]):
            continue
        diff = data[rows[i]] - data[j]
        exact = float(diff @ diff)
        if exact < best:
            best, bi, bj = exact, int(rows[i]), int(j)
    return best, bi, bj
