"""Probe registration, template comparison and threshold calibration.

Verification is one-to-one: the claimed account's template is decoded to a
reference shape, the probe landmarks are registered to it with a
least-squares similarity transform, the registered probe is encoded and
shell-normalised, and the L2 distance to the stored template is compared
with the threshold.

Probe textures cross this boundary already sampled in the registered frame;
only the shape path is transformed here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from honeyvault.errors import (
    DegenerateInputError,
    DimensionError,
    InsufficientSamplesError,
    UnknownUserError,
)
from honeyvault.facespace import FaceSpace, decode, encode, shell_normalize, shell_project
from honeyvault.streams import substream

if TYPE_CHECKING:
    from honeyvault.vault import Vault

REFERENCE_THRESHOLD = 3578.0


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation`` on 2-D points."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64).reshape(2, 2)
        trans = np.array(self.translation, dtype=np.float64).reshape(2)
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_angle(cls, scale: float, angle: float, translation) -> SimilarityTransform:
        c, s = math.cos(angle), math.sin(angle)
        return cls(scale, np.array([[c, -s], [s, c]]), translation)

    @property
    def angle(self) -> float:
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])

    def apply_points(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def compose(self, inner: SimilarityTransform) -> SimilarityTransform:
        """``self(inner(p))``."""
        return SimilarityTransform(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * self.rotation @ inner.translation + self.translation,
        )

    def inverse(self) -> SimilarityTransform:
        rot_t = self.rotation.T
        return SimilarityTransform(1.0 / self.scale, rot_t, -(rot_t @ self.translation) / self.scale)


def _points(shape) -> np.ndarray:
    v = np.asarray(shape, dtype=np.float64)
    if v.ndim == 2 and v.shape[1] == 2:
        return v
    if v.ndim != 1 or v.size % 2:
        raise DimensionError("shape vectors hold interleaved (x, y) pairs")
    return v.reshape(-1, 2)


def estimate_similarity_transform(ref_points, test_points) -> SimilarityTransform:
    """Least-squares ``(s, R, t)`` minimising ``sum |s R ref_i + t - test_i|^2``.

    Accepts ``(n, 2)`` point arrays or flat interleaved shape vectors.
    Reflections are excluded.
    """
    src, dst = _points(ref_points), _points(test_points)
    if src.shape != dst.shape:
        raise DimensionError("point sets differ in size")
    if src.shape[0] < 2:
        raise DegenerateInputError("need at least two point pairs")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = np.sum(xs * xs)
    if var_s <= 0.0 or np.sum(xd * xd) <= 0.0:
        raise DegenerateInputError("all points coincide")
    # 2-D closed form: R = rotation by atan2(b, a), s = hypot(a, b) / var_s
    a = np.sum(xs[:, 0] * xd[:, 0] + xs[:, 1] * xd[:, 1])
    b = np.sum(xs[:, 0] * xd[:, 1] - xs[:, 1] * xd[:, 0])
    norm = math.hypot(a, b)
    if norm == 0.0:
        raise DegenerateInputError("point sets are uncorrelated; rotation undefined")
    rot = np.array([[a, -b], [b, a]]) / norm
    scale = norm / var_s
    return SimilarityTransform(scale, rot, mu_d - scale * rot @ mu_s)


def apply_transform(tf: SimilarityTransform, shape) -> np.ndarray:
    """Map every landmark of a flat shape vector through ``tf``."""
    return tf.apply_points(_points(shape)).reshape(-1)


def _deviation(tf: SimilarityTransform, spread: float) -> float:
    return abs(tf.scale - 1.0) + abs(tf.angle) + float(np.linalg.norm(tf.translation)) / spread


def reference_shape(template, space: FaceSpace) -> np.ndarray:
    """Shape decoded from a stored template (the registration target)."""
    return decode(template, space)[0]


def canonical_shape(space: FaceSpace, shape, texture, *, max_iter: int = 100, tol: float = 1e-14):
    """Enrollment pose for ``shape``.

    Aligns the shape to the model mean, then iterates registration to the
    shape decoded from its own template until the transform is the
    identity. The result is the pose :func:`verify` recovers from any
    similarity-transformed copy of the same face.
    """
    x = np.asarray(shape, dtype=np.float64)
    pts = _points(x)
    spread = float(np.sqrt(np.mean(np.sum((pts - pts.mean(axis=0)) ** 2, axis=1)))) or 1.0
    x = apply_transform(estimate_similarity_transform(x, space.shape_model.mean), x)
    best_x, best_dev = x, math.inf
    for _ in range(max_iter):
        ref = reference_shape(shell_normalize(encode(x, texture, space), space), space)
        tf = estimate_similarity_transform(x, ref)
        dev = _deviation(tf, spread)
        if dev < best_dev:
            best_x, best_dev = x, dev
        elif dev > 4 * best_dev:
            break
        if dev <= tol:
            break
        x = apply_transform(tf, x)
    return best_x


def enrollment_template(space: FaceSpace, shape, texture) -> np.ndarray:
    """Template stored for an enrolled face."""
    x = canonical_shape(space, shape, texture)
    return shell_normalize(encode(x, texture, space), space)


def probe_template(space: FaceSpace, reference_template, probe_shape, probe_texture) -> np.ndarray:
    """Register the probe to the reference template's shape and template it."""
    ref = reference_shape(reference_template, space)
    tf = estimate_similarity_transform(probe_shape, ref)
    registered = apply_transform(tf, probe_shape)
    return shell_normalize(encode(registered, probe_texture, space), space)


@dataclass(frozen=True)
class AuthDecision:
    accepted: bool
    distance: float
    threshold: float

    def __post_init__(self):
        if self.accepted != (self.distance <= self.threshold):
            raise ValueError("accepted must equal distance <= threshold")


def decide(distance: float, threshold: float) -> AuthDecision:
    return AuthDecision(bool(distance <= threshold), float(distance), float(threshold))


def _decoy_template(space: FaceSpace) -> np.ndarray:
    u = np.zeros(space.dim)
    u[0] = 1.0
    return shell_project(u, space)


def verify(
    vault: Vault,
    space: FaceSpace,
    username: str,
    probe_shape,
    probe_texture,
    threshold: float = REFERENCE_THRESHOLD,
) -> AuthDecision:
    """One-to-one verification of a probe against ``username``'s template.

    An unknown username runs the same pipeline against a fixed decoy
    template before raising :class:`UnknownUserError`, so callers that map
    the error to a rejection do not leak account existence through timing.
    """
    stored = vault.get_template(username)
    target = _decoy_template(space) if stored is None else stored
    probe = probe_template(space, target, probe_shape, probe_texture)
    decision = decide(float(np.linalg.norm(probe - target)), threshold)
    if stored is None:
        raise UnknownUserError(username)
    return decision


def isotropic_noise(dim: int, norm: float, rng: np.random.Generator, size: int | None = None):
    """Uniformly oriented vector(s) of exactly the given norm."""
    shape = (dim,) if size is None else (size, dim)
    v = rng.standard_normal(shape)
    return norm * v / np.linalg.norm(v, axis=-1, keepdims=True)


def genuine_probe(space: FaceSpace, template, noise_norm: float, rng: np.random.Generator):
    """Synthetic re-capture of an enrolled face.

    Adds isotropic AM-space noise of the given norm to the template and
    decodes the result to a ``(shape, texture)`` probe.
    """
    noise = isotropic_noise(space.dim, noise_norm, rng) if noise_norm > 0 else 0.0
    return decode(np.asarray(template) + noise, space)


def sample_shell(space: FaceSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((n, space.dim))
    while True:
        zero = np.linalg.norm(v, axis=1) == 0
        if not zero.any():
            return shell_project(v, space)
        v[zero] = rng.standard_normal((int(zero.sum()), space.dim))


def empirical_quantile_threshold(impostor_distances, target_far: float) -> float:
    """Smallest observed distance whose empirical FAR reaches ``target_far``."""
    dist = np.sort(np.asarray(impostor_distances, dtype=np.float64))
    if not 0.0 < target_far <= 1.0:
        raise ValueError("target_far must lie in (0, 1]")
    if target_far * dist.size < 1 - 1e-9:
        raise InsufficientSamplesError(
            f"{dist.size} impostor pairs cannot resolve FAR {target_far}"
        )
    return float(dist[math.ceil(target_far * dist.size - 1e-9) - 1])


@dataclass(frozen=True)
class Calibration:
    threshold: float
    target_far: float
    impostor_distances: np.ndarray = field(repr=False)

    def far_at(self, threshold: float) -> float:
        return float(np.mean(self.impostor_distances <= threshold))


def calibrate_threshold(
    space: FaceSpace,
    target_far: float,
    num_impostor_pairs: int,
    seed: int,
    noise_norm: float = 0.0,
    *,
    batch: int = 100_000,
) -> Calibration:
    """Threshold at which independent shell samples are accepted at ``target_far``.

    Each impostor pair is two independent shell samples; with
    ``noise_norm > 0`` the probe side also carries genuine-capture noise
    before being re-normalised. The returned :class:`Calibration` keeps
    every impostor distance so ROC points can be reported.
    """
    if num_impostor_pairs < 1:
        raise InsufficientSamplesError("need at least one impostor pair")
    if not 0.0 < target_far <= 1.0:
        raise ValueError("target_far must lie in (0, 1]")
    if target_far * num_impostor_pairs < 1 - 1e-9:
        raise InsufficientSamplesError(
            f"{num_impostor_pairs} impostor pairs cannot resolve FAR {target_far}"
        )
    rng = substream(seed, "calibrate-threshold")
    out = np.empty(num_impostor_pairs)
    for start in range(0, num_impostor_pairs, batch):
        n = min(batch, num_impostor_pairs - start)
        stored = sample_shell(space, n, rng)
        probe = sample_shell(space, n, rng)
        if noise_norm > 0:
            probe = shell_normalize(probe + isotropic_noise(space.dim, noise_norm, rng, n), space)
        out[start : start + n] = np.linalg.norm(probe - stored, axis=1)
    out.setflags(write=False)
    return Calibration(empirical_quantile_threshold(out, target_far), target_far, out)


def roc_points(genuine_distances, impostor_distances, thresholds=None):
    """``(thresholds, far, tar)`` arrays for a distance-based matcher."""
    gen = np.sort(np.asarray(genuine_distances, dtype=np.float64))
    imp = np.sort(np.asarray(impostor_distances, dtype=np.float64))
    if thresholds is None:
        thresholds = np.unique(np.concatenate([gen, imp]))
    thresholds = np.asarray(thresholds, dtype=np.float64)
    far = np.searchsorted(imp, thresholds, side="right") / max(imp.size, 1)
    tar = np.searchsorted(gen, thresholds, side="right") / max(gen.size, 1)
    return thresholds, far, tar


@dataclass(frozen=True)
class AccuracyReport:
    genuine_accept_rate: float
    false_accept_rate: float
    genuine_attempts: int
    impostor_attempts: int


def measure_accuracy(vault, space, genuine, impostor, threshold: float) -> AccuracyReport:
    """Accept rates over ``(username, shape, texture)`` attempt lists."""

    def rate(attempts):
        hits = [verify(vault, space, u, s, g, threshold).accepted for u, s, g in attempts]
        return (float(np.mean(hits)) if hits else 0.0), len(hits)

    tar, n_gen = rate(genuine)
    far, n_imp = rate(impostor)
    return AccuracyReport(tar, far, n_gen, n_imp)
