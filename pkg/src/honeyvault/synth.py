"""Synthetic templates: shell sampling, minimum-separation rejection, toy corpora."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from honeyvault import kernels
from honeyvault.errors import DimensionError, ExhaustionError
from honeyvault.facespace import FaceSpace, shell_project
from honeyvault.streams import FaceStreams, substream

REFERENCE_MIN_DIST = 4800.0
REFERENCE_SIGMA_MAX = 6473.7
REFERENCE_SIGMA_MIN = 304.1717
DEFAULT_MAX_ATTEMPTS = 1000

_KEY_DIMS = 3
_LEAD_DIMS = 6


def reference_sigma_profile(d: int, largest: float = REFERENCE_SIGMA_MAX, smallest: float = REFERENCE_SIGMA_MIN):
    """Geometrically decaying stds spanning the reported largest/smallest values."""
    if d == 1:
        return np.array([largest])
    return largest * (smallest / largest) ** (np.arange(d) / (d - 1))


def _lead_order(dim: int) -> np.ndarray:
    # highest-variance coordinates carry the most distance, so they give
    # the tightest partial-sum bound
    return np.arange(min(_LEAD_DIMS, dim), dtype=np.intp)


class SeparationIndex:
    """Exact grid over the first three coordinates, cell edge ``cell_edge``.

    A template lands in bucket ``floor(t[:3] / cell_edge)``. Distance in a
    coordinate subspace never exceeds the full distance, so a search within
    radius ``cell_edge`` only has to visit the 27 cells around the query,
    and cells whose box is already too far away are skipped.
    """

    def __init__(self, dim: int, cell_edge: float, backend: str | None = None):
        if not cell_edge > 0:
            raise ValueError("cell_edge must be positive")
        self.dim = int(dim)
        self.cell_edge = float(cell_edge)
        self._kernels = kernels.get_backend(backend)
        self._grid = self._kernels.Grid(self.dim, self.cell_edge, min(_KEY_DIMS, self.dim), _lead_order(self.dim))

    @classmethod
    def from_templates(cls, templates, cell_edge: float, backend: str | None = None):
        templates = np.atleast_2d(np.asarray(templates, dtype=np.float64))
        index = cls(templates.shape[1], cell_edge, backend)
        index.extend(templates)
        return index

    @property
    def backend(self) -> str:
        return self._kernels.BACKEND

    def __len__(self) -> int:
        return self._grid.n

    def key(self, t) -> tuple:
        return self._grid.key(self._check(t))

    def _check(self, t) -> np.ndarray:
        t = np.ascontiguousarray(t, dtype=np.float64)
        if t.shape != (self.dim,):
            raise DimensionError(f"expected a {self.dim}-vector, got shape {t.shape}")
        return t

    def add(self, t) -> None:
        self._grid.add(self._check(t))

    def extend(self, templates) -> None:
        for t in np.atleast_2d(np.asarray(templates, dtype=np.float64)):
            self.add(t)

    def templates(self) -> np.ndarray:
        """All stored templates, grouped by bucket."""
        return self._grid.rows()

    def bucket_sizes(self) -> dict:
        return self._grid.bucket_sizes()

    def any_within(self, t, radius: float) -> bool:
        """True when some stored template lies strictly closer than ``radius``."""
        t = self._check(t)
        r2 = float(radius) ** 2
        reach = max(1, math.ceil(radius / self.cell_edge))
        return self._grid.nearest_sq(t, reach, r2, r2) < r2

    def nearest_distance(self, t) -> float:
        """Exact distance to the closest stored template (``inf`` when empty)."""
        t = self._check(t)
        best = self._grid.nearest_sq(t, 1, math.inf, -1.0)
        if best > self.cell_edge**2:
            # the neighbourhood does not certify the minimum; widen to every cell
            best = self._grid.nearest_sq(t, -1, best, -1.0)
        return math.sqrt(best)


def nearest_distance(t, index: SeparationIndex) -> float:
    return index.nearest_distance(t)


def min_pairwise_distance(templates, backend: str | None = None):
    """Exact smallest distance over distinct pairs, with the pair indices."""
    data = np.ascontiguousarray(templates, dtype=np.float64)
    best, i, j = kernels.get_backend(backend).min_pairwise_sq(data)
    return math.sqrt(best), i, j


def nearest_distances(queries, data, backend: str | None = None):
    """Distance from each query row to its nearest ``data`` row, and that row's index."""
    q = np.ascontiguousarray(np.atleast_2d(queries), dtype=np.float64)
    x = np.ascontiguousarray(np.atleast_2d(data), dtype=np.float64)
    d2, idx = kernels.get_backend(backend).nearest_sq_many(q, x)
    return np.sqrt(d2), idx


def _draw_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        v = rng.standard_normal(dim)
        if np.any(v):
            return v


def sample_template(space: FaceSpace, rng: np.random.Generator) -> np.ndarray:
    """One synthetic template: a standard Gaussian draw placed on the shell."""
    return shell_project(_draw_direction(rng, space.dim), space)


def sample_templates(space: FaceSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, space.dim))
    zero = ~np.any(v, axis=1)
    while zero.any():
        v[zero] = rng.standard_normal((int(zero.sum()), space.dim))
        zero = ~np.any(v, axis=1)
    return shell_project(v, space)


@dataclass
class GenerationStats:
    requested: int
    accepted: int = 0
    rejected: int = 0
    seconds: float = 0.0

    @property
    def attempts(self) -> int:
        return self.accepted + self.rejected

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.attempts if self.attempts else 0.0

    @property
    def seconds_per_template(self) -> float:
        return self.seconds / self.accepted if self.accepted else math.nan

    def merge(self, other: GenerationStats) -> GenerationStats:
        return GenerationStats(
            self.requested + other.requested,
            self.accepted + other.accepted,
            self.rejected + other.rejected,
            self.seconds + other.seconds,
        )

    def to_record(self) -> dict:
        return {
            "requested": self.requested,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "attempts": self.attempts,
            "rejection_rate": self.rejection_rate,
            "seconds": self.seconds,
            "seconds_per_template": self.seconds_per_template,
        }


def generate_honey(
    space: FaceSpace,
    index: SeparationIndex,
    count: int,
    min_dist: float,
    seed: int,
    max_attempts_per_face: int = DEFAULT_MAX_ATTEMPTS,
    *,
    first_face: int = 0,
    stream: str = "honey",
):
    """Rejection-sample ``count`` templates at least ``min_dist`` from everything in ``index``.

    Face ``first_face + j`` draws from its own substream of
    ``(seed, stream)``. Accepted templates are added to ``index`` as they
    are produced. Raises :class:`ExhaustionError` once the total attempt
    budget ``count * max_attempts_per_face`` is spent.

    Returns ``(templates, stats)`` with templates as a ``(count, d)`` array.
    """
    if not min_dist > 0:
        raise ValueError("min_dist must be positive")
    if count < 0:
        raise ValueError("count must be non-negative")
    if index.dim != space.dim:
        raise DimensionError("index and face space dimensions differ")
    stats = GenerationStats(requested=count)
    out = np.empty((count, space.dim))
    if count == 0:
        return out, stats
    streams = FaceStreams(seed, stream)
    budget = count * max_attempts_per_face
    radii = space.shell_radii
    dim = space.dim
    start = time.perf_counter()
    try:
        for j in range(count):
            rng = streams(first_face + j)
            while True:
                if stats.attempts >= budget:
                    raise ExhaustionError(
                        f"accepted {stats.accepted} of {count} templates in {budget} attempts; "
                        f"min_dist={min_dist} is too large for this shell"
                    )
                v = rng.standard_normal(dim)
                norm = math.sqrt(v @ v)
                if norm == 0.0:
                    continue
                t = radii * (v / norm)
                if index.any_within(t, min_dist):
                    stats.rejected += 1
                    continue
                index.add(t)
                out[j] = t
                stats.accepted += 1
                break
    finally:
        stats.seconds = time.perf_counter() - start
    return out, stats


def generate_honey_sharded(
    space: FaceSpace,
    index: SeparationIndex,
    count: int,
    min_dist: float,
    seed: int,
    shards: int = 4,
    max_attempts_per_face: int = DEFAULT_MAX_ATTEMPTS,
    workers: int | None = None,
    *,
    stream: str = "honey",
):
    """Generate in independent shards, then merge with an exact re-check.

    Shard ``s`` owns faces ``[s*size, (s+1)*size)`` and checks them against
    a private copy of ``index`` plus its own output. Merging walks faces in
    id order and re-inserts each into ``index``; a face that now collides
    with an earlier shard's face is redrawn sequentially from a retry
    stream. The result depends on ``(seed, shards)`` but not on worker
    scheduling.
    """
    if shards < 1:
        raise ValueError("shards must be positive")
    base = index.templates()
    bounds = np.linspace(0, count, shards + 1).astype(int)

    def run(s):
        local = SeparationIndex.from_templates(base, index.cell_edge) if len(base) else SeparationIndex(
            index.dim, index.cell_edge
        )
        n = int(bounds[s + 1] - bounds[s])
        return generate_honey(
            space, local, n, min_dist, seed, max_attempts_per_face,
            first_face=int(bounds[s]), stream=stream,
        )

    start = time.perf_counter()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, range(shards)))
    stats = GenerationStats(requested=count)
    for _, st in results:
        stats.rejected += st.rejected
    out = np.empty((count, space.dim))
    redo = []
    for s, (templates, _) in enumerate(results):
        for offset, t in enumerate(templates):
            face = int(bounds[s]) + offset
            if index.any_within(t, min_dist):
                redo.append(face)
                stats.rejected += 1
                continue
            index.add(t)
            out[face] = t
            stats.accepted += 1
    for face in redo:
        extra, st = generate_honey(
            space, index, 1, min_dist, seed, max_attempts_per_face,
            first_face=face, stream=f"{stream}/retry",
        )
        out[face] = extra[0]
        stats.accepted += st.accepted
        stats.rejected += st.rejected
    stats.seconds = time.perf_counter() - start
    return out, stats


@dataclass(frozen=True)
class ToyTruth:
    """Parameters a toy corpus was drawn from."""

    shape_mean: np.ndarray
    texture_mean: np.ndarray
    basis: np.ndarray
    sigma: np.ndarray
    latents: np.ndarray
    shape_share: float

    @property
    def shape_basis(self) -> np.ndarray:
        return self.basis[: self.shape_mean.size]

    @property
    def texture_basis(self) -> np.ndarray:
        return self.basis[self.shape_mean.size :]


def _pose_directions(mean_pts: np.ndarray) -> np.ndarray:
    centred = mean_pts - mean_pts.mean(axis=0)
    n = mean_pts.shape[0]
    cols = [
        np.tile([1.0, 0.0], n),
        np.tile([0.0, 1.0], n),
        centred.reshape(-1),
        np.stack([-centred[:, 1], centred[:, 0]], axis=1).reshape(-1),
    ]
    q, _ = np.linalg.qr(np.stack(cols, axis=1))
    return q


def make_toy_corpus(
    seed: int,
    n_subjects: int,
    L: int,
    P: int,
    planted_dim: int,
    noise_scale: float = 0.0,
    sigma=None,
    *,
    shape_share: float = 0.3,
    mean_shape_ratio: float = 100.0,
    draw: str = "subjects",
):
    """Faces from a planted linear-Gaussian appearance model.

    Latent coefficients ``z ~ N(0, diag(sigma**2))`` (default
    :func:`reference_sigma_profile`) are lifted through one random orthonormal
    basis whose shape rows carry ``shape_share**2`` of the energy. Shape
    deformations are orthogonal to translation, scaling and rotation of the
    mean shape, and the mean shape is ``mean_shape_ratio`` times larger than
    a typical deformation, so faces come out close to pose-aligned.
    Isotropic noise of scale ``noise_scale`` is added to both blocks.

    The basis, means and sigma depend only on ``seed`` and the dimensions;
    ``draw`` names the substream for the subjects themselves, so a second
    call with another ``draw`` gives new faces from the same face model.

    Returns ``(pairs, truth)`` with ``pairs`` a list of ``(shape, texture)``.
    """
    if min(n_subjects, L, P, planted_dim) < 1:
        raise DimensionError("toy corpus dimensions must be positive")
    if planted_dim > min(2 * L - 4, P):
        raise DimensionError("planted_dim must fit in both the shape and texture blocks")
    if not 0.0 < shape_share < 1.0:
        raise ValueError("shape_share must lie in (0, 1)")
    sigma = reference_sigma_profile(planted_dim) if sigma is None else np.asarray(sigma, dtype=np.float64)
    if sigma.shape != (planted_dim,) or np.any(sigma <= 0):
        raise DimensionError("sigma must be planted_dim positive values")
    model_rng = substream(seed, "toy-model")
    angles = np.sort(model_rng.uniform(0.0, 2.0 * np.pi, L))
    radii = model_rng.uniform(0.5, 1.0, L)
    unit_pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    typical = shape_share * float(np.sqrt(np.sum(sigma**2)))
    scale = mean_shape_ratio * typical / np.sqrt(L)
    mean_pts = unit_pts * scale + model_rng.uniform(-1.0, 1.0, 2) * scale
    pose = _pose_directions(mean_pts)
    a = model_rng.standard_normal((2 * L, planted_dim))
    a -= pose @ (pose.T @ a)
    a, _ = np.linalg.qr(a)
    b, _ = np.linalg.qr(model_rng.standard_normal((P, planted_dim)))
    basis = np.vstack([shape_share * a, np.sqrt(1.0 - shape_share**2) * b])
    shape_mean = mean_pts.reshape(-1)
    texture_mean = model_rng.uniform(0.0, 255.0, P)

    rng = substream(seed, "toy-subjects", draw)
    z = rng.standard_normal((n_subjects, planted_dim)) * sigma
    shapes = shape_mean + z @ basis[: 2 * L].T
    textures = texture_mean + z @ basis[2 * L :].T
    if noise_scale > 0:
        shapes = shapes + noise_scale * rng.standard_normal(shapes.shape)
        textures = textures + noise_scale * rng.standard_normal(textures.shape)
    truth = ToyTruth(shape_mean, texture_mean, basis, sigma, z, shape_share)
    return list(zip(shapes, textures)), truth
