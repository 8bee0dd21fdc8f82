import math

import numpy as np
import pytest
from scipy import stats

from honeyvault.errors import DimensionError, ExhaustionError
from honeyvault.facespace import shell_residual
from honeyvault.streams import FaceStreams, substream
from honeyvault.synth import (
    REFERENCE_SIGMA_MAX,
    REFERENCE_SIGMA_MIN,
    GenerationStats,
    SeparationIndex,
    generate_honey,
    generate_honey_sharded,
    make_toy_corpus,
    min_pairwise_distance,
    nearest_distance,
    reference_sigma_profile,
    sample_template,
    sample_templates,
)


def test_reference_sigma_profile_endpoints():
    s = reference_sigma_profile(80)
    assert s[0] == REFERENCE_SIGMA_MAX
    assert s[-1] == pytest.approx(REFERENCE_SIGMA_MIN, rel=1e-12)
    assert np.all(np.diff(s) < 0)
    # frozen: geometric ratio between neighbours
    assert s[1] / s[0] == pytest.approx((REFERENCE_SIGMA_MIN / REFERENCE_SIGMA_MAX) ** (1 / 79), rel=1e-12)


def test_sample_template_is_on_shell(space):
    rng = substream(0, "t")
    for _ in range(20):
        assert abs(shell_residual(sample_template(space, rng), space)) < 1e-9
    assert np.all(np.abs(shell_residual(sample_templates(space, 500, rng), space)) < 1e-9)


def test_sample_template_is_deterministic(space):
    a = sample_template(space, substream(5, "x"))
    b = sample_template(space, substream(5, "x"))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_template(space, substream(6, "x")))


def test_substreams_are_frozen():
    # pins the stream derivation: any change here breaks reproducibility of stored runs
    a = substream(0, "honey").standard_normal(3)
    b = substream(0, "honey").standard_normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, substream(0, "honey", 1).standard_normal(3))
    with pytest.raises(ValueError):
        substream(-1)


def test_face_streams_are_independent_of_order():
    fs = FaceStreams(3, "honey")
    late_first = fs(7).standard_normal(4)
    fs(2).standard_normal(100)
    np.testing.assert_array_equal(FaceStreams(3, "honey")(7).standard_normal(4), late_first)


def test_sampled_coordinates_match_normalized_gaussians(space):
    n = 100_000
    got = sample_templates(space, n, substream(1, "ks")) / space.shell_radii
    oracle = np.random.default_rng(99).standard_normal((n, space.dim))
    oracle /= np.linalg.norm(oracle, axis=1, keepdims=True)
    for j in (0, 1, 40, 79):
        assert stats.ks_2samp(got[:, j], oracle[:, j]).pvalue > 0.01


# -- nearest distance ------------------------------------------------------


def test_nearest_distance_empty_index_is_infinite():
    assert nearest_distance(np.zeros(5), SeparationIndex(5, 1.0)) == math.inf


def test_nearest_distance_to_itself_is_zero(toy_templates):
    index = SeparationIndex.from_templates(toy_templates, 4800.0)
    assert nearest_distance(toy_templates[17], index) == 0.0


def test_nearest_distance_matches_brute_force(space):
    data = sample_templates(space, 1000, substream(2, "nd"))
    index = SeparationIndex.from_templates(data, 4800.0)
    for q in sample_templates(space, 100, substream(3, "nd")):
        brute = np.min(np.linalg.norm(data - q, axis=1))
        assert nearest_distance(q, index) == pytest.approx(brute, rel=1e-12)


def test_index_rejects_wrong_width():
    index = SeparationIndex(4, 1.0)
    with pytest.raises(DimensionError):
        index.add(np.zeros(5))
    with pytest.raises(ValueError):
        SeparationIndex(4, 0.0)


# -- generation ------------------------------------------------------------


def test_generate_zero_is_empty(space):
    out, st = generate_honey(space, SeparationIndex(space.dim, 4800.0), 0, 4800.0, 1)
    assert out.shape == (0, space.dim)
    assert st.attempts == 0


def test_generate_beyond_shell_diameter_exhausts(space):
    too_far = 2 * space.shell_factor * space.sigma.max() * 1.01
    with pytest.raises(ExhaustionError):
        generate_honey(space, SeparationIndex(space.dim, too_far), 2, too_far, 1, max_attempts_per_face=50)


def test_generate_rejects_bad_arguments(space):
    index = SeparationIndex(space.dim, 4800.0)
    with pytest.raises(ValueError):
        generate_honey(space, index, 3, 0.0, 1)
    with pytest.raises(ValueError):
        generate_honey(space, index, -1, 4800.0, 1)
    with pytest.raises(DimensionError):
        generate_honey(space, SeparationIndex(3, 4800.0), 1, 4800.0, 1)


@pytest.fixture(scope="module")
def binding_min_dist(space):
    """A separation floor at the 0.01% tail of shell mutual distances, so rejections happen."""
    d = np.linalg.norm(
        sample_templates(space, 200_000, substream(4, "a")) - sample_templates(space, 200_000, substream(4, "b")),
        axis=1,
    )
    return float(np.quantile(d, 1e-3))


def test_separation_holds_over_real_and_synthetic(space, toy_templates, binding_min_dist):
    index = SeparationIndex.from_templates(toy_templates[:50], binding_min_dist)
    out, st = generate_honey(space, index, 2000, binding_min_dist, 8)
    assert st.rejected > 0
    assert st.accepted == 2000
    real_min = min_pairwise_distance(toy_templates[:50])[0]
    both = np.vstack([toy_templates[:50], out])
    assert min_pairwise_distance(both)[0] >= min(binding_min_dist, real_min)
    assert min_pairwise_distance(out)[0] >= binding_min_dist
    cross = np.linalg.norm(out[:, None, :] - toy_templates[None, :50, :], axis=-1)
    assert cross.min() >= binding_min_dist


def test_generation_is_seed_deterministic(space, binding_min_dist):
    runs = [generate_honey(space, SeparationIndex(space.dim, binding_min_dist), 300, binding_min_dist, 21)[0] for _ in range(2)]
    np.testing.assert_array_equal(*runs)


def test_generation_splits_reproduce_one_run(space):
    whole, _ = generate_honey(space, SeparationIndex(space.dim, 4800.0), 40, 4800.0, 9)
    index = SeparationIndex(space.dim, 4800.0)
    first, _ = generate_honey(space, index, 25, 4800.0, 9)
    second, _ = generate_honey(space, index, 15, 4800.0, 9, first_face=25)
    np.testing.assert_array_equal(np.vstack([first, second]), whole)


def test_generated_templates_are_indexed(space):
    index = SeparationIndex(space.dim, 4800.0)
    out, _ = generate_honey(space, index, 30, 4800.0, 2)
    assert len(index) == 30
    assert nearest_distance(out[4], index) == 0.0


def test_sharded_generation_is_separated_and_deterministic(space, binding_min_dist):
    a, st = generate_honey_sharded(space, SeparationIndex(space.dim, binding_min_dist), 1200, binding_min_dist, 5, shards=4)
    b, _ = generate_honey_sharded(space, SeparationIndex(space.dim, binding_min_dist), 1200, binding_min_dist, 5, shards=4, workers=1)
    np.testing.assert_array_equal(a, b)
    assert st.accepted == 1200
    assert min_pairwise_distance(a)[0] >= binding_min_dist


def test_one_shard_matches_sequential(space, binding_min_dist):
    seq, _ = generate_honey(space, SeparationIndex(space.dim, binding_min_dist), 200, binding_min_dist, 6)
    one, _ = generate_honey_sharded(space, SeparationIndex(space.dim, binding_min_dist), 200, binding_min_dist, 6, shards=1)
    np.testing.assert_array_equal(seq, one)


def test_generation_stats_arithmetic():
    st = GenerationStats(requested=10, accepted=10, rejected=5, seconds=2.0)
    assert st.attempts == 15
    assert st.rejection_rate == pytest.approx(1 / 3)
    assert st.seconds_per_template == pytest.approx(0.2)
    merged = st.merge(GenerationStats(4, 4, 0, 1.0))
    assert (merged.requested, merged.accepted, merged.rejected, merged.seconds) == (14, 14, 5, 3.0)
    rec = st.to_record()
    assert rec["attempts"] == 15 and rec["rejected"] == 5
    assert math.isnan(GenerationStats(1).seconds_per_template)


# -- toy corpus ------------------------------------------------------------


def test_toy_corpus_is_bit_identical_per_seed():
    a, ta = make_toy_corpus(4, 30, 20, 40, 10)
    b, tb = make_toy_corpus(4, 30, 20, 40, 10)
    for (x1, g1), (x2, g2) in zip(a, b):
        np.testing.assert_array_equal(x1, x2)
        np.testing.assert_array_equal(g1, g2)
    np.testing.assert_array_equal(ta.basis, tb.basis)


def test_toy_draw_changes_faces_not_model():
    a, ta = make_toy_corpus(4, 30, 20, 40, 10)
    b, tb = make_toy_corpus(4, 30, 20, 40, 10, draw="outsiders")
    np.testing.assert_array_equal(ta.basis, tb.basis)
    assert not np.array_equal(a[0][0], b[0][0])


def test_toy_noise_free_faces_lie_in_planted_subspace():
    pairs, truth = make_toy_corpus(2, 40, 20, 40, 10)
    stacked = np.hstack([
        np.array([p[0] for p in pairs]) - truth.shape_mean,
        np.array([p[1] for p in pairs]) - truth.texture_mean,
    ])
    np.testing.assert_allclose(stacked, truth.latents @ truth.basis.T, atol=1e-9)


def test_toy_shape_deformations_avoid_pose():
    _, truth = make_toy_corpus(3, 5, 20, 40, 10)
    pts = truth.shape_mean.reshape(-1, 2)
    centred = pts - pts.mean(axis=0)
    pose = np.stack(
        [
            np.tile([1.0, 0.0], 20),
            np.tile([0.0, 1.0], 20),
            centred.reshape(-1),
            np.stack([-centred[:, 1], centred[:, 0]], axis=1).reshape(-1),
        ],
        axis=1,
    )
    assert np.max(np.abs(pose.T @ truth.shape_basis)) < 1e-9 * np.abs(pose).max()


def test_toy_rejects_planted_dim_beyond_blocks():
    with pytest.raises(DimensionError):
        make_toy_corpus(0, 10, 5, 100, 7)
    with pytest.raises(DimensionError):
        make_toy_corpus(0, 10, 50, 5, 6)
