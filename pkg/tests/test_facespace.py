import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from honeyvault.errors import (
    DegenerateInputError,
    DimensionError,
    FormatError,
    RankDeficiencyError,
)
from honeyvault.facespace import (
    FaceSpace,
    ShapeModel,
    TextureModel,
    build_face_space,
    build_shape_model,
    build_texture_model,
    decode,
    encode,
    face_space_from_bytes,
    face_space_to_bytes,
    fit_face_space,
    fit_pca,
    load_face_space,
    save_face_space,
    shell_normalize,
    shell_project,
    shell_residual,
)
from honeyvault.synth import make_toy_corpus


def tiny_space(sigma=(2.0, 1.0), k=7.0) -> FaceSpace:
    """d=2 space whose coefficients are the raw (shape, texture) offsets."""
    shape = ShapeModel(np.zeros(2), np.array([[1.0], [0.0]]), np.array([1.0]))
    texture = TextureModel(np.zeros(1), np.array([[1.0]]), np.array([1.0]))
    return FaceSpace(shape, texture, np.eye(2), 1.0, np.array(sigma), k)


# hypothesis tests cannot take function-scoped fixtures
_SPACE = []


def _shared_space():
    if not _SPACE:
        pairs, _ = make_toy_corpus(7, 300, 50, 200, 80)
        _SPACE.append(fit_face_space(pairs, 80, 80, 80))
    return _SPACE[0]


def random_pairs(seed, n, L, P):
    rng = np.random.default_rng(seed)
    return [(rng.normal(size=2 * L) * 10, rng.normal(size=P) * 30 + 100) for _ in range(n)]


# -- PCA -------------------------------------------------------------------


def test_fit_pca_two_points_by_hand():
    mean, basis, stds = fit_pca([(0.0, 0.0), (2.0, 0.0)], 1)
    np.testing.assert_allclose(mean, [1.0, 0.0])
    np.testing.assert_allclose(basis[:, 0], [1.0, 0.0])
    # centred rows (-1, 0), (1, 0): variance 2 with n-1 normalisation
    np.testing.assert_allclose(stds, [np.sqrt(2.0)])


def test_fit_pca_matches_covariance_eigendecomposition():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(40, 6)) @ rng.normal(size=(6, 6))
    mean, basis, stds = fit_pca(data, 6)
    evals, evecs = np.linalg.eigh(np.cov(data, rowvar=False))
    order = np.argsort(evals)[::-1]
    np.testing.assert_allclose(stds**2, evals[order], rtol=1e-10)
    for j in range(6):
        assert abs(abs(basis[:, j] @ evecs[:, order[j]]) - 1.0) < 1e-9
    np.testing.assert_allclose(mean, data.mean(axis=0))


def test_fit_pca_sign_convention():
    rng = np.random.default_rng(4)
    _, basis, _ = fit_pca(rng.normal(size=(30, 8)), 5)
    for col in basis.T:
        assert col[np.argmax(np.abs(col))] > 0


def test_fit_pca_rejects_zero_components():
    with pytest.raises(DimensionError):
        fit_pca([(0.0, 1.0), (1.0, 0.0), (2.0, 2.0)], 0)


def test_fit_pca_rejects_copies_of_one_vector():
    with pytest.raises(RankDeficiencyError):
        fit_pca([(1.0, 2.0, 3.0)] * 5, 1)


def test_fit_pca_rejects_too_many_components():
    with pytest.raises(DimensionError):
        fit_pca(np.eye(3), 3)


# -- shape and texture models ---------------------------------------------


def test_zero_coefficients_decode_to_means():
    pairs = random_pairs(0, 12, 20, 30)
    sm = build_shape_model([p[0] for p in pairs], 5)
    tm = build_texture_model([p[1] for p in pairs], 5)
    np.testing.assert_array_equal(sm.reconstruct(np.zeros(5)), sm.mean)
    np.testing.assert_array_equal(tm.reconstruct(np.zeros(5)), tm.mean)
    assert sm.n_landmarks == 20


def test_full_rank_shape_and_texture_round_trip():
    pairs = random_pairs(1, 12, 20, 30)
    shapes = np.array([p[0] for p in pairs])
    textures = np.array([p[1] for p in pairs])
    sm = build_shape_model(shapes, 11)
    tm = build_texture_model(textures, 11)
    np.testing.assert_allclose(sm.reconstruct(sm.project(shapes)), shapes, atol=1e-9)
    np.testing.assert_allclose(tm.reconstruct(tm.project(textures)), textures, atol=1e-9)


def test_bases_are_orthonormal(space):
    for b in (space.shape_model.basis, space.texture_model.basis, space.combined_basis):
        np.testing.assert_allclose(b.T @ b, np.eye(b.shape[1]), atol=1e-9)


def test_reconstruction_residual_non_increasing_in_m():
    pairs = random_pairs(2, 15, 12, 10)
    shapes = np.array([p[0] for p in pairs])
    residuals = []
    for m in range(1, 15):
        sm = build_shape_model(shapes, m)
        residuals.append(np.sum((sm.reconstruct(sm.project(shapes)) - shapes) ** 2))
    assert all(b <= a * (1 + 1e-12) + 1e-9 for a, b in zip(residuals, residuals[1:]))
    assert residuals[-1] < 1e-18 * np.sum(shapes**2) + 1e-9


# -- combined model --------------------------------------------------------


def test_mean_face_only_corpus_is_rank_deficient():
    pairs = random_pairs(3, 4, 5, 6)
    sm = build_shape_model([p[0] for p in pairs], 2)
    tm = build_texture_model([p[1] for p in pairs], 2)
    with pytest.raises(RankDeficiencyError):
        build_face_space(sm, tm, [(sm.mean, tm.mean)] * 3, 1)


def test_encode_mean_face_is_zero(space):
    c = encode(space.shape_model.mean, space.texture_model.mean, space)
    np.testing.assert_allclose(c, 0.0, atol=1e-9)


def test_decode_zero_is_mean_face(space):
    x, g = decode(np.zeros(space.dim), space)
    np.testing.assert_allclose(x, space.shape_model.mean, atol=1e-9)
    np.testing.assert_allclose(g, space.texture_model.mean, atol=1e-9)


def test_encode_is_linear(toy):
    pairs, _, space = toy
    (x1, g1), (x2, g2) = pairs[3], pairs[8]
    mid = encode((x1 + x2) / 2, (g1 + g2) / 2, space)
    np.testing.assert_allclose(mid, (encode(x1, g1, space) + encode(x2, g2, space)) / 2, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 80, elements=st.floats(-3e4, 3e4)))
def test_encode_decode_identity(c):
    space = _shared_space()
    np.testing.assert_allclose(encode(*decode(c, space), space), c, atol=1e-9 * (1 + np.abs(c).max()))


@pytest.mark.parametrize("w", [1.0, None])
def test_decode_encode_identity_on_training_pairs_at_full_rank(w):
    pairs = random_pairs(5, 12, 20, 30)
    space = fit_face_space(pairs, 11, 11, 11, w=w)
    for x, g in pairs:
        xr, gr = decode(encode(x, g, space), space)
        np.testing.assert_allclose(xr, x, atol=1e-9)
        np.testing.assert_allclose(gr, g, atol=1e-9)


def test_default_shape_weight_balances_variances(space):
    shape_var = np.sum(space.shape_model.stds**2)
    texture_var = np.sum(space.texture_model.stds**2)
    assert space.shape_weight == pytest.approx(np.sqrt(texture_var / shape_var), rel=1e-12)


def test_planted_model_reconstructs_exactly(toy):
    pairs, _, space = toy
    for x, g in pairs[:20]:
        xr, gr = decode(encode(x, g, space), space)
        assert np.max(np.abs(xr - x)) <= 1e-6
        assert np.max(np.abs(gr - g)) <= 1e-6


def test_planted_sigma_recovered_at_n_2000():
    pairs, truth = make_toy_corpus(19, 2000, 50, 200, 80)
    space = fit_face_space(pairs, 80, 80, 80, w=1.0)
    z = truth.latents - truth.latents.mean(axis=0)
    # exact oracle: the principal stds of the centred latent sample
    svals = np.linalg.svd(z, compute_uv=False) / np.sqrt(z.shape[0] - 1)
    np.testing.assert_allclose(space.sigma, svals, rtol=1e-9)
    # criterion: within 5% of the per-coefficient sample std
    sample_std = truth.latents.std(axis=0, ddof=1)
    assert np.max(np.abs(space.sigma / sample_std - 1)) < 0.05


def test_fit_is_deterministic(toy):
    pairs = toy[0]
    a = face_space_to_bytes(fit_face_space(pairs, 80, 80, 80))
    b = face_space_to_bytes(fit_face_space(pairs, 80, 80, 80))
    assert a == b


def test_rejects_d_beyond_sample_span():
    pairs = random_pairs(6, 6, 10, 10)
    with pytest.raises(DimensionError):
        fit_face_space(pairs, 5, 5, 6)


# -- shell -----------------------------------------------------------------


def test_shell_normalize_axis_example():
    space = tiny_space()
    np.testing.assert_allclose(shell_normalize([5.0, 0.0], space), [14.0, 0.0])


def test_shell_points_on_axes_are_fixed():
    space = tiny_space()
    np.testing.assert_allclose(shell_normalize([14.0, 0.0], space), [14.0, 0.0])
    np.testing.assert_allclose(shell_normalize([0.0, 7.0], space), [0.0, 7.0])


def test_shell_normalize_is_radial_for_anisotropic_sigma():
    space = tiny_space()
    c = np.array([3.0, 4.0])
    t = shell_normalize(c, space)
    # same direction, rescaled onto the ellipse
    assert t[0] * c[1] == pytest.approx(t[1] * c[0])
    assert shell_residual(t, space) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(shell_normalize(t, space), t, rtol=1e-12)


def test_shell_project_changes_direction_when_anisotropic():
    space = tiny_space()
    u = np.array([1.0, 1.0])
    t = shell_project(u, space)
    np.testing.assert_allclose(t, 7.0 * np.array([2.0, 1.0]) / np.sqrt(2.0))
    assert not np.isclose(t[0], t[1])
    iso = tiny_space(sigma=(1.5, 1.5))
    t_iso = shell_project(u, iso)
    np.testing.assert_allclose(shell_project(t_iso, iso), t_iso, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 80, elements=st.floats(-1e5, 1e5)))
def test_shell_invariant_for_any_nonzero_input(c):
    if np.linalg.norm(c / _shared_space().sigma) < 1e-6:
        return
    space = _shared_space()
    assert abs(shell_residual(shell_normalize(c, space), space)) < 1e-9


def test_shell_rejects_zero_vector():
    with pytest.raises(DegenerateInputError):
        shell_normalize([0.0, 0.0], tiny_space())


def test_shell_rejects_wrong_width():
    with pytest.raises(DimensionError):
        shell_normalize([1.0, 2.0, 3.0], tiny_space())


# -- HFM1 ------------------------------------------------------------------


def test_hfm1_round_trip_is_byte_exact(space, tmp_path):
    blob = face_space_to_bytes(space)
    assert face_space_to_bytes(face_space_from_bytes(blob)) == blob
    save_face_space(space, tmp_path / "m.hfm")
    assert face_space_to_bytes(load_face_space(tmp_path / "m.hfm")) == blob
    assert load_face_space(tmp_path / "m.hfm").digest() == space.digest()


def test_hfm1_header_layout(space):
    blob = face_space_to_bytes(space)
    assert blob[:4] == b"HFM1"
    assert int.from_bytes(blob[4:8], "little") == 1
    dims = [int.from_bytes(blob[8 + 4 * i : 12 + 4 * i], "little") for i in range(5)]
    assert dims == [50, 200, 80, 80, 80]
    s, m, p, t, d = 100, 80, 200, 80, 80
    floats = s + s * m + m + p + p * t + t + (m + t) * d + d
    assert len(blob) == 4 + 4 + 20 + 16 + 8 * floats


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XFM1" + b[4:],
        lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:],
        lambda b: b[:-8],
        lambda b: b + b"\x00",
        lambda b: b[:10],
    ],
    ids=["magic", "version", "truncated", "trailing", "header"],
)
def test_hfm1_rejects_corruption(space, mutate):
    with pytest.raises(FormatError):
        face_space_from_bytes(mutate(face_space_to_bytes(space)))
