import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lumbarseg import nn
from lumbarseg.localizer import (
    EmptyEdgeSetError,
    FeatureSpec,
    LocalizerHyper,
    LocalizerModel,
    VoteSet,
    aggregate_votes,
    botev_bandwidth,
    canny_edges,
    expand_box,
    extract_features,
    invert_targets,
    kde_mode,
    load_localizer,
    make_targets,
    save_localizer,
    sensitivity,
    silverman_bandwidth,
)
from lumbarseg.localizer.regressor import fit_regressor, regressor_specs, shift_case
from lumbarseg.localizer.voting import representative_plane
from lumbarseg.volume import BoundingBox, LabelVolume, Volume

# ---------------------------------------------------------------- edges


def test_step_edge_is_one_plane():
    data = np.zeros((32, 32, 32))
    data[16:] = 1000.0
    edges = canny_edges(Volume(data))
    assert np.unique(edges[:, 0]).size == 1
    assert edges[0, 0] in (15, 16)
    assert len(edges) == 32 * 32


def test_sphere_edges_hug_surface():
    r = np.indices((40, 40, 40)) - 19.5
    dist = np.sqrt((r**2).sum(axis=0))
    edges = canny_edges(Volume(np.where(dist < 10, 1000.0, 0.0)))
    d = dist[tuple(edges.T)]
    assert len(edges) > 500
    assert np.all(np.abs(d - 10) <= 1.5)


def test_constant_volume_has_no_edges():
    with pytest.raises(EmptyEdgeSetError):
        canny_edges(Volume(np.full((10, 10, 10), 5.0)))


# ---------------------------------------------------------------- features


def test_feature_spec_is_seeded_and_serialisable():
    a, b = FeatureSpec.generate(50, seed=4), FeatureSpec.generate(50, seed=4)
    assert a == b and a != FeatureSpec.generate(50, seed=5)
    assert FeatureSpec.from_dict(a.to_dict()) == a
    assert np.all(np.abs(a.probes[:, :3]) <= 100)
    assert np.all((a.probes[:, 3:] >= 2.5) & (a.probes[:, 3:] <= 25))


def test_features_match_brute_force():
    rng = np.random.default_rng(0)
    data = rng.uniform(0, 1, size=(18, 14, 22))
    v = Volume(data, (1.0, 1.5, 2.0))
    spec = FeatureSpec.generate(30, seed=1, offset_range=20, size_range=(1.0, 8.0))
    voxels = np.stack([rng.integers(0, n, 12) for n in data.shape], axis=1)
    feats = extract_features(v, voxels, spec)
    offsets, halves = spec.in_voxels(v.spacing)
    for r, c in enumerate(voxels):
        for f in range(spec.n):
            lo = np.maximum(c + offsets[f] - halves[f], 0)
            hi = np.minimum(c + offsets[f] + halves[f], np.array(data.shape) - 1)
            if np.any(hi < lo):
                expected = 0.0
            else:
                expected = data[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1].mean()
            assert feats[r, f] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_targets_by_hand():
    box = BoundingBox(2, 8, 0, 5, 10, 20)
    np.testing.assert_array_equal(make_targets([4, 4, 4], box), [2, -4, 4, -1, -6, -16])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-50, 150), min_size=9, max_size=9))
def test_targets_invert_exactly(vals):
    voxel = vals[:3]
    lo, hi = vals[3:6], vals[6:]
    box = BoundingBox(min(lo[0], hi[0]), max(lo[0], hi[0]), min(lo[1], hi[1]),
                      max(lo[1], hi[1]), min(lo[2], hi[2]), max(lo[2], hi[2]))
    back = invert_targets(make_targets(voxel, box), voxel)
    assert tuple(back[0].astype(int)) == box.as_tuple()


# ---------------------------------------------------------------- kde


def test_botev_close_to_silverman_on_normal():
    x = np.random.default_rng(0).normal(size=1000)
    h, method = botev_bandwidth(x, return_method=True)
    assert method == "botev"
    assert abs(h / silverman_bandwidth(x) - 1) < 0.25


def test_botev_scales_with_data():
    x = np.random.default_rng(1).normal(size=800)
    assert botev_bandwidth(10 * x) == pytest.approx(10 * botev_bandwidth(x), rel=1e-6)


def test_botev_rejects_degenerate_input():
    with pytest.raises(ValueError):
        botev_bandwidth(np.arange(5.0))
    with pytest.raises(ValueError):
        botev_bandwidth(np.ones(100))


def test_mode_of_single_gaussian():
    x = np.random.default_rng(2).normal(3.0, 1.0, size=4000)
    assert kde_mode(x, botev_bandwidth(x)) == pytest.approx(3.0, abs=0.15)


def test_mode_of_mixture_ignores_minor_component():
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 1, 1600), rng.normal(10, 1, 400)])
    assert abs(kde_mode(x, botev_bandwidth(x))) < 0.2


def test_mode_of_two_points():
    assert kde_mode([1.0, 1.0, 5.0], 0.5) == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- votes


def test_identical_votes_give_that_box():
    box = (3, 17, 5, 9, 0, 40)
    votes = VoteSet(np.repeat(np.array(box, dtype=float)[:, None], 40, axis=1))
    assert aggregate_votes(votes).as_tuple() == box


def test_halves_round_outward():
    assert representative_plane([4.5] * 3, is_min=True) == 4
    assert representative_plane([4.5] * 3, is_min=False) == 5


def test_swapped_planes_are_reordered():
    votes = VoteSet(np.array([[9.0] * 3, [2.0] * 3, [0] * 3, [1] * 3, [0] * 3, [1] * 3]))
    assert aggregate_votes(votes).as_tuple()[:2] == (2, 9)


def test_aggregation_clamps_to_volume():
    votes = VoteSet(np.array([[-5.0] * 3, [70.0] * 3, [0] * 3, [3] * 3, [1] * 3, [2] * 3]))
    assert aggregate_votes(votes, (50, 50, 50)).as_tuple() == (0, 49, 0, 3, 1, 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.tuples(*[st.integers(-30, 30)] * 3))
def test_aggregation_is_translation_equivariant(seed, t):
    rng = np.random.default_rng(seed)
    centre = rng.uniform(0, 60, size=(6, 1))
    votes = VoteSet(centre + rng.normal(0, 3, size=(6, 200)))
    a = np.array(aggregate_votes(votes).as_tuple())
    b = np.array(aggregate_votes(votes.shifted(t)).as_tuple())
    np.testing.assert_array_equal(b - a, np.repeat(t, 2))


def test_expand_box():
    b = BoundingBox(5, 10, 0, 3, 20, 30)
    assert expand_box(b, 15, (40, 40, 40)).as_tuple() == (0, 25, 0, 18, 5, 39)
    assert expand_box(b, 0, (40, 40, 40)) == b
    with pytest.raises(ValueError):
        expand_box(b, -1, (40, 40, 40))


def test_sensitivity():
    lab = np.zeros((10, 10, 10), dtype=np.uint8)
    lab[2:6, 2:6, 2:6] = 3
    gt = LabelVolume(lab)
    assert sensitivity(gt, BoundingBox(0, 9, 0, 9, 0, 9)) == 1.0
    assert sensitivity(gt, BoundingBox(2, 3, 0, 9, 0, 9)) == 0.5
    assert sensitivity(gt, BoundingBox(7, 9, 0, 9, 0, 9)) == 0.0
    with pytest.raises(ValueError):
        sensitivity(LabelVolume(np.zeros((3, 3, 3))), BoundingBox(0, 1, 0, 1, 0, 1))


# ---------------------------------------------------------------- regressor


def test_shift_case_moves_box_and_content():
    data = np.zeros((10, 10, 10))
    data[4, 4, 4] = 1.0
    v, b = shift_case(Volume(data), BoundingBox(3, 5, 3, 5, 3, 5), (2, -1, 0))
    assert v.data[6, 3, 4] == 1.0
    assert b.as_tuple() == (5, 7, 2, 4, 3, 5)


def test_mlp_learns_linear_offsets():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 6))
    pools = []
    for _ in range(3):
        x = rng.normal(size=(300, 8))
        pools.append((x, x @ a))
    net = nn.Model(regressor_specs(8, hidden=(32,)), seed=0)
    hyper = LocalizerHyper(epochs=150, lr=1e-2, samples_per_volume=200)
    losses = fit_regressor(net, pools, hyper, rng)
    assert losses[-1] < 0.01 * losses[0]


def test_model_rejects_wrong_widths():
    spec = FeatureSpec.generate(10)
    with pytest.raises(nn.ShapeError):
        LocalizerModel(nn.Model(regressor_specs(11, (4,))), spec)


def test_localizer_save_load(tmp_path):
    spec = FeatureSpec.generate(10, seed=2)
    m = LocalizerModel(nn.Model(regressor_specs(10, (4,)), seed=1), spec, target_scale=2.0,
                       losses=[3.0, 1.0])
    save_localizer(m, str(tmp_path / "loc.ckpt"))
    r = load_localizer(str(tmp_path / "loc.ckpt"))
    assert r.spec == spec and r.target_scale == 2.0 and r.losses == [3.0, 1.0]
    x = np.random.default_rng(0).normal(size=(5, 10))
    np.testing.assert_array_equal(r.predict_offsets(x), m.predict_offsets(x))
