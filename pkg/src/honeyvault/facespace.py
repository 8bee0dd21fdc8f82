"""Shape, texture and combined appearance models.

Shape vectors hold ``L`` landmarks interleaved as ``(x1, y1, x2, y2, ...)``.
Texture vectors are shape-normalised colour samples of fixed length ``P``.
The combined model stacks weighted shape coefficients on top of texture
coefficients and runs a second PCA, giving the appearance-model ("AM")
coefficients that all templates live in.

All arrays are float64 and read-only once a model is built.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from honeyvault.errors import (
    DegenerateInputError,
    DimensionError,
    FormatError,
    RankDeficiencyError,
)

DEFAULT_SHELL_FACTOR = 7.0

HFM_MAGIC = b"HFM1"
HFM_VERSION = 1
_HFM_HEADER = struct.Struct("<4sI5I2d")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _as_matrix(data, what: str) -> np.ndarray:
    try:
        mat = np.asarray(data, dtype=np.float64)
    except ValueError as exc:  # ragged input
        raise DimensionError(f"{what}: vectors have unequal lengths") from exc
    if mat.ndim != 2:
        raise DimensionError(f"{what}: expected a list of equal-length vectors")
    if not np.all(np.isfinite(mat)):
        raise DegenerateInputError(f"{what}: non-finite entries")
    return mat


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def fit_pca(data, num_components: int, *, center: bool = True):
    """Principal components of the rows of ``data``.

    Parameters
    ----------
    data : sequence of equal-length vectors, shape (n, D)
    num_components : int
        Number of components to keep.
    center : bool
        Subtract the sample mean first. With ``center=False`` the data are
        taken to be zero-mean already and the returned mean is zero.

    Returns
    -------
    mean : (D,) array
    basis : (D, num_components) array with orthonormal columns, ordered by
        non-increasing variance; each column's largest-magnitude entry is
        positive.
    stds : (num_components,) array
        Per-component standard deviations (``n - 1`` normalisation).
    """
    mat = _as_matrix(data, "fit_pca")
    n, dim = mat.shape
    if n < 2:
        raise DimensionError("fit_pca needs at least two vectors")
    limit = min(dim, n - 1)
    if not 1 <= num_components <= limit:
        raise DimensionError(
            f"num_components={num_components} outside [1, {limit}] for {n} vectors of length {dim}"
        )
    mean = mat.mean(axis=0) if center else np.zeros(dim)
    centered = mat - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(n, dim) * np.finfo(np.float64).eps * (svals[0] if svals.size else 0.0)
    if svals[0] == 0.0 or svals[num_components - 1] <= tol:
        raise RankDeficiencyError(
            f"data rank is below the requested {num_components} components"
        )
    basis = _fix_signs(vt[:num_components].T)
    stds = svals[:num_components] / np.sqrt(n - 1)
    return mean, basis, stds


@dataclass(frozen=True)
class LinearModel:
    """``v = mean + basis @ b`` with orthonormal ``basis`` columns."""

    mean: np.ndarray
    basis: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean))
        object.__setattr__(self, "basis", _frozen(self.basis))
        object.__setattr__(self, "stds", _frozen(self.stds))
        if self.basis.ndim != 2 or self.basis.shape[0] != self.mean.shape[0]:
            raise DimensionError("basis rows must match the mean length")
        if self.stds.shape != (self.basis.shape[1],):
            raise DimensionError("one std per basis column required")

    @property
    def size(self) -> int:
        """Length of the modelled vectors."""
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]

    def project(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.size:
            raise DimensionError(f"expected vectors of length {self.size}, got {v.shape[-1]}")
        return (v - self.mean) @ self.basis

    def reconstruct(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[-1] != self.n_components:
            raise DimensionError(f"expected {self.n_components} coefficients, got {b.shape[-1]}")
        return b @ self.basis.T + self.mean


class ShapeModel(LinearModel):
    @property
    def n_landmarks(self) -> int:
        return self.size // 2


class TextureModel(LinearModel):
    pass


def build_shape_model(shapes, m: int) -> ShapeModel:
    mat = _as_matrix(shapes, "build_shape_model")
    if mat.shape[1] % 2:
        raise DimensionError("shape vectors must hold 2 coordinates per landmark")
    return ShapeModel(*fit_pca(mat, m))


def build_texture_model(textures, t: int) -> TextureModel:
    return TextureModel(*fit_pca(_as_matrix(textures, "build_texture_model"), t))


def default_shape_weight(shape_model: ShapeModel, texture_model: TextureModel) -> float:
    """Balance the two blocks: ``w**2`` = total texture variance / total shape variance."""
    shape_var = float(np.sum(shape_model.stds**2))
    texture_var = float(np.sum(texture_model.stds**2))
    return float(np.sqrt(texture_var / shape_var))


@dataclass(frozen=True)
class FaceSpace:
    shape_model: ShapeModel
    texture_model: TextureModel
    combined_basis: np.ndarray
    shape_weight: float
    sigma: np.ndarray
    shell_factor: float = DEFAULT_SHELL_FACTOR

    def __post_init__(self):
        object.__setattr__(self, "combined_basis", _frozen(self.combined_basis))
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        object.__setattr__(self, "shape_weight", float(self.shape_weight))
        object.__setattr__(self, "shell_factor", float(self.shell_factor))
        m, t = self.shape_model.n_components, self.texture_model.n_components
        q = self.combined_basis
        if q.ndim != 2 or q.shape[0] != m + t or q.shape[1] > m + t:
            raise DimensionError(f"combined basis must be ({m + t}, d) with d <= {m + t}")
        if self.sigma.shape != (q.shape[1],):
            raise DimensionError("one sigma per AM dimension required")
        if not (self.shape_weight > 0 and self.shell_factor > 0):
            raise ValueError("shape weight and shell factor must be positive")
        if np.any(self.sigma <= 0):
            raise RankDeficiencyError("AM standard deviations must be strictly positive")

    @property
    def dim(self) -> int:
        return self.combined_basis.shape[1]

    @property
    def q_shape(self) -> np.ndarray:
        return self.combined_basis[: self.shape_model.n_components]

    @property
    def q_texture(self) -> np.ndarray:
        return self.combined_basis[self.shape_model.n_components :]

    @property
    def shell_radii(self) -> np.ndarray:
        return self.shell_factor * self.sigma

    def digest(self) -> bytes:
        """16-byte BLAKE2b digest of the HFM1 encoding; vaults pin it."""
        return hashlib.blake2b(face_space_to_bytes(self), digest_size=16).digest()


def _stacked(shape_model, texture_model, w, x, g) -> np.ndarray:
    return np.concatenate([w * shape_model.project(x), texture_model.project(g)], axis=-1)


def build_face_space(
    shape_model: ShapeModel,
    texture_model: TextureModel,
    corpus,
    d: int,
    w: float | None = None,
    k: float = DEFAULT_SHELL_FACTOR,
) -> FaceSpace:
    """Combined appearance model over ``corpus`` (a list of ``(shape, texture)`` pairs).

    The stacked coefficient vectors are zero-mean by construction, so the
    second PCA is run without re-centering. ``w`` defaults to
    :func:`default_shape_weight`.
    """
    pairs = list(corpus)
    if len(pairs) < 2:
        raise DimensionError("build_face_space needs at least two training pairs")
    shapes = _as_matrix([p[0] for p in pairs], "corpus shapes")
    textures = _as_matrix([p[1] for p in pairs], "corpus textures")
    if shapes.shape[1] != shape_model.size or textures.shape[1] != texture_model.size:
        raise DimensionError("corpus vectors do not conform to the shape/texture models")
    if w is None:
        w = default_shape_weight(shape_model, texture_model)
    if not w > 0:
        raise ValueError("shape weight must be positive")
    total = shape_model.n_components + texture_model.n_components
    if not 1 <= d <= total:
        raise DimensionError(f"d={d} outside [1, {total}]")
    stacked = _stacked(shape_model, texture_model, w, shapes, textures)
    n = stacked.shape[0]
    if d > n - 1:
        raise DimensionError(f"d={d} exceeds the {n - 1} dimensions {n} faces can span")
    _, basis, sigma = fit_pca(stacked, d, center=False)
    return FaceSpace(shape_model, texture_model, basis, w, sigma, k)


def fit_face_space(
    corpus, m: int, t: int, d: int, w: float | None = None, k: float = DEFAULT_SHELL_FACTOR
) -> FaceSpace:
    """Shape model, texture model and combined model in one call."""
    pairs = list(corpus)
    shape_model = build_shape_model([p[0] for p in pairs], m)
    texture_model = build_texture_model([p[1] for p in pairs], t)
    return build_face_space(shape_model, texture_model, pairs, d, w, k)


def encode(x, g, space: FaceSpace) -> np.ndarray:
    """Raw AM coefficients of shape(s) ``x`` and texture(s) ``g``."""
    stacked = _stacked(space.shape_model, space.texture_model, space.shape_weight, x, g)
    return stacked @ space.combined_basis


def decode(c, space: FaceSpace):
    """Inverse of :func:`encode` on the model span; returns ``(shape, texture)``."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != space.dim:
        raise DimensionError(f"expected {space.dim} AM coefficients, got {c.shape[-1]}")
    b_s = (c @ space.q_shape.T) / space.shape_weight
    b_g = c @ space.q_texture.T
    return space.shape_model.reconstruct(b_s), space.texture_model.reconstruct(b_g)


def shell_project(u, space: FaceSpace) -> np.ndarray:
    """Map direction(s) ``u`` in whitened units onto the ``k*sigma`` shell.

    ``u`` is normalised to unit length and multiplied coordinate-wise by
    ``k * sigma``. Rows are handled independently.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != space.dim:
        raise DimensionError(f"expected {space.dim} coefficients, got {u.shape[-1]}")
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateInputError("cannot place a zero vector on the shell")
    return space.shell_radii * (u / norms)


def shell_normalize(c, space: FaceSpace) -> np.ndarray:
    """Template(s) for raw AM coefficients ``c``.

    ``c`` is whitened by ``sigma`` and then put through
    :func:`shell_project`; the net effect is a radial rescaling of ``c``
    onto the ellipsoid ``sum((t / (k*sigma))**2) == 1``.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != space.dim:
        raise DimensionError(f"expected {space.dim} coefficients, got {c.shape[-1]}")
    return shell_project(c / space.sigma, space)


def shell_residual(t, space: FaceSpace) -> np.ndarray:
    """``sum((t / (k*sigma))**2) - 1``; zero for templates on the shell."""
    t = np.asarray(t, dtype=np.float64)
    return np.sum((t / space.shell_radii) ** 2, axis=-1) - 1.0


def face_space_to_bytes(space: FaceSpace) -> bytes:
    sm, tm = space.shape_model, space.texture_model
    header = _HFM_HEADER.pack(
        HFM_MAGIC,
        HFM_VERSION,
        sm.n_landmarks,
        tm.size,
        sm.n_components,
        tm.n_components,
        space.dim,
        space.shape_weight,
        space.shell_factor,
    )
    arrays = (
        sm.mean, sm.basis, sm.stds,
        tm.mean, tm.basis, tm.stds,
        space.combined_basis, space.sigma,
    )
    return header + b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)


def face_space_from_bytes(data: bytes) -> FaceSpace:
    if len(data) < _HFM_HEADER.size:
        raise FormatError("truncated HFM1 header")
    magic, version, n_lmk, p, m, t, d, w, k = _HFM_HEADER.unpack_from(data, 0)
    if magic != HFM_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != HFM_VERSION:
        raise FormatError(f"unsupported HFM version {version}")
    s = 2 * n_lmk
    shapes = [(s,), (s, m), (m,), (p,), (p, t), (t,), (m + t, d), (d,)]
    need = _HFM_HEADER.size + 8 * sum(int(np.prod(sh)) for sh in shapes)
    if len(data) != need:
        raise FormatError(f"HFM1 payload is {len(data)} bytes, expected {need}")
    out, offset = [], _HFM_HEADER.size
    for sh in shapes:
        count = int(np.prod(sh))
        out.append(np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(sh))
        offset += 8 * count
    try:
        shape_model = ShapeModel(out[0], out[1], out[2])
        texture_model = TextureModel(out[3], out[4], out[5])
        return FaceSpace(shape_model, texture_model, out[6], w, out[7], k)
    except (ValueError, RankDeficiencyError) as exc:
        raise FormatError(f"inconsistent HFM1 contents: {exc}") from exc


def save_face_space(space: FaceSpace, path) -> None:
    Path(path).write_bytes(face_space_to_bytes(space))


def load_face_space(path) -> FaceSpace:
    return face_space_from_bytes(Path(path).read_bytes())
