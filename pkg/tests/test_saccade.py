import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.imaging import ImageBuf, read_image, to_gray
from app.saccade import (
    AnalyticScorer,
    BoundaryChains,
    Detection,
    ScoreField,
    Scorer,
    agreement,
    annotate,
    boundary_chains,
    boundary_mask,
    dense_heatmap,
    detect,
    detect_image,
    export_heatmaps,
    hill_climb,
    nms,
    quantize_heatmap,
    saccade_points,
    write_detections_csv,
)
from app.sampler import synth_image
from app.schemas import DetectParams, ScoreParams
from app.score import LandmarkChannels, Point, euclid_dist


def single_centroid_scorer():
    landmarks = LandmarkChannels.from_points([[(60, 60)]], names=("target",))
    return AnalyticScorer(landmarks, ScoreParams(), 120, 120, border=17)


# ---------- boundary chains ----------
def test_uniform_image_has_no_boundary():
    chains = boundary_chains(ImageBuf(np.full((40, 50), 120, dtype=np.uint8)))
    assert chains.total == 0
    assert chains.chains == []


def test_step_edge_gives_one_column_chain(split_image):
    chains = boundary_chains(split_image)
    assert len(chains.chains) == 1
    chain = chains.chains[0]
    assert len(chain) == split_image.height
    assert set(chain[:, 0].tolist()) == {19}
    assert chains.total == split_image.height


def test_chain_points_are_8_adjacent_and_disjoint(scene):
    chains = boundary_chains(scene.image)
    seen = set()
    for chain in chains.chains:
        assert len(chain) >= 4
        steps = np.abs(np.diff(chain, axis=0))
        assert np.all(steps.max(axis=1) == 1)
        pts = set(map(tuple, chain.tolist()))
        assert len(pts) == len(chain)
        assert not (pts & seen)
        seen |= pts


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_boundary_density_on_synthetic_scenes(seed):
    chains = boundary_chains(synth_image(seed).image)
    assert 0.05 <= chains.fraction <= 0.20


@pytest.mark.parametrize("offset", [30, -30])
def test_boundary_invariant_under_luminance_shift(scene, offset):
    gray = np.clip(to_gray(scene.image), 40, 210).astype(np.int16)
    base = ImageBuf(gray.astype(np.uint8))
    shifted = ImageBuf((gray + offset).astype(np.uint8))
    np.testing.assert_array_equal(boundary_mask(base, 15, 0), boundary_mask(shifted, 15, 0))


def test_window_larger_than_image_is_error():
    with pytest.raises(ValueError):
        boundary_chains(ImageBuf(np.zeros((10, 40), dtype=np.uint8)), window=15)


def test_saccade_points_stride_and_border():
    chain = np.array([[x, 20] for x in range(0, 40)])
    chains = BoundaryChains([chain], width=60, height=60)
    assert saccade_points(chains, stride=1, border=17) == [Point(x, 20) for x in range(17, 40)]
    assert saccade_points(chains, stride=5, border=17) == [Point(x, 20) for x in (20, 25, 30, 35)]
    assert saccade_points(BoundaryChains([], 60, 60), stride=5, border=17) == []
    with pytest.raises(ValueError):
        saccade_points(chains, stride=0, border=17)


def test_saccade_point_count_follows_stride(scene):
    chains = boundary_chains(scene.image)
    all_pts = saccade_points(chains, stride=1, border=0)
    assert len(all_pts) == chains.total
    sparse = saccade_points(chains, stride=5, border=0)
    expected = sum(math.ceil(len(c) / 5) for c in chains.chains)
    assert len(sparse) == expected


# ---------- heatmaps ----------
def test_dense_heatmap_dims_zero_model(blank_model, scene):
    field = dense_heatmap(blank_model, scene.image)
    assert field.data.shape == (3, 184, 144)
    assert field.border == 17
    assert not np.any(field.data)
    assert field.at(2, Point(17, 17)) == 0.0


def test_dense_heatmap_image_too_small(model):
    with pytest.raises(ValueError):
        dense_heatmap(model, ImageBuf(np.zeros((30, 80, 3), dtype=np.uint8)))


def test_quantize_heatmap_levels():
    data = np.array([[[0.49, 0.5, 0.79, 0.8, 1.7, -0.3]]])
    out = quantize_heatmap(ScoreField(data, 0)).data
    np.testing.assert_array_equal(out[0, 0], [0.0, 0.5, 0.5, 0.8, 0.8, 0.0])


def test_export_heatmaps_writes_image_sized_maps(tmp_path):
    data = np.zeros((3, 4, 6), dtype=np.float32)
    data[0, 1, 2] = 1.0
    data[2, 3, 5] = 0.5
    img = ImageBuf(np.full((8, 10, 3), 100, dtype=np.uint8))
    paths = export_heatmaps(ScoreField(data, 2), img, str(tmp_path))
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["heatmap.ppm", "heatmap_c0.pgm", "heatmap_c1.pgm", "heatmap_c2.pgm", "overlay.ppm"]
    c0 = read_image(str(tmp_path / "heatmap_c0.pgm"))
    assert (c0.width, c0.height) == (10, 8)
    assert c0.data[3, 4, 0] == 255
    rgb = read_image(str(tmp_path / "heatmap.ppm")).data
    assert tuple(rgb[3, 4]) == (255, 0, 0)
    assert tuple(rgb[5, 7]) == (0, 0, 128)
    overlay = read_image(str(tmp_path / "overlay.ppm")).data
    assert tuple(overlay[0, 0]) == (50, 50, 50)


# ---------- hill climbing ----------
def test_hill_climb_converges_from_every_start_in_the_cone():
    scorer = single_centroid_scorer()
    target = Point(60, 60)
    for y in range(17, 103):
        for x in range(17, 103):
            d = euclid_dist((x, y), target)
            point, score, _ = hill_climb(scorer, (x, y), 0)
            if d <= 39:
                assert point == target, (x, y)
                assert score == 1.0
            elif d >= 40:
                assert point == (x, y)
                assert score == 0.0


def test_hill_climb_evaluation_bound():
    rng = np.random.default_rng(0)
    for x, y in rng.integers(17, 103, size=(50, 2)):
        scorer = single_centroid_scorer()
        _, _, evals = hill_climb(scorer, (int(x), int(y)), 0, max_iters=50)
        assert evals <= 9 * 50
        assert evals == scorer.evals


def test_hill_climb_rejects_start_outside_region():
    with pytest.raises(ValueError):
        hill_climb(single_centroid_scorer(), (5, 60), 0)


def test_hill_climb_tie_break_prefers_north():
    # two centroids at equal distance north and south of the start
    landmarks = LandmarkChannels.from_points([[(60, 50), (60, 70)]], names=("t",))
    scorer = AnalyticScorer(landmarks, ScoreParams(), 120, 120, border=17)
    point, score, _ = hill_climb(scorer, (60, 60), 0)
    assert point == Point(60, 50)
    assert score == 1.0


class OffsetScorer(AnalyticScorer):
    """Analytic cone shifted down so the rim of the cone scores negative."""

    def _evaluate(self, points):
        return super()._evaluate(points) - 0.1


def test_hill_climb_leaves_exact_zero_plateau_start_unmoved():
    scorer = single_centroid_scorer()
    point, score, evals = hill_climb(scorer, (60, 17), 0)
    assert point == Point(60, 17)
    assert score == 0.0
    assert evals == 1


def test_hill_climb_climbs_out_of_negative_scores():
    landmarks = LandmarkChannels.from_points([[(60, 60)]], names=("target",))
    scorer = OffsetScorer(landmarks, ScoreParams(), 120, 120, border=17)
    start_score = scorer.score([(60, 97)])[0, 0]
    assert start_score < 0
    point, score, _ = hill_climb(scorer, (60, 97), 0)
    assert point == Point(60, 60)
    assert score == pytest.approx(0.9)


def test_scorer_without_overrides_cannot_be_built():
    class EvaluateOnly(Scorer):
        def _evaluate(self, points):
            return np.zeros((len(points), 1))

    with pytest.raises(TypeError):
        EvaluateOnly(40, 40, 5, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(17, 102), st.integers(17, 102), st.integers(1, 12))
def test_hill_climb_never_decreases_score(x, y, max_iters):
    scorer = single_centroid_scorer()
    start_score = scorer.score([(x, y)])[0, 0]
    _, score, _ = hill_climb(scorer, (x, y), 0, max_iters=max_iters)
    assert score >= start_score


# ---------- NMS and detection ----------
detections_strategy = st.lists(
    st.builds(
        Detection,
        channel=st.integers(0, 1),
        point=st.builds(Point, st.integers(0, 60), st.integers(0, 60)),
        score=st.floats(0.5, 1.0),
        evals_used=st.just(0),
    ),
    max_size=30,
)


@given(detections_strategy, st.floats(1, 30))
def test_nms_separates_kept_detections(dets, radius):
    kept = nms(dets, radius)
    for i, a in enumerate(kept):
        for b in kept[i + 1 :]:
            if a.channel == b.channel:
                assert euclid_dist(a.point, b.point) > radius
    for d in dets:
        if d not in kept:
            assert any(
                k.channel == d.channel and k.score >= d.score and euclid_dist(k.point, d.point) <= radius for k in kept
            )


def test_dense_detect_on_analytic_field_finds_every_landmark(scene):
    scorer = AnalyticScorer(scene.landmarks, ScoreParams(), scene.image.width, scene.image.height, border=17)
    dets, evals = detect(scorer, scene.image, "dense")
    assert evals == 144 * 184
    for c in range(3):
        found = sorted((d.point.x, d.point.y) for d in dets if d.channel == c)
        truth = sorted((p.x, p.y) for p in scene.landmarks.points(c))
        assert len(found) == len(truth)
        for f, t in zip(found, truth):
            assert euclid_dist(f, t) <= 1
    assert all(d.score >= 0.5 for d in dets)


def test_saccade_detect_on_analytic_field_is_economical(scene):
    w, h = scene.image.width, scene.image.height
    dense = detect(AnalyticScorer(scene.landmarks, ScoreParams(), w, h, 17), scene.image, "dense")[0]
    scorer = AnalyticScorer(scene.landmarks, ScoreParams(), w, h, 17)
    sacc, evals = detect(scorer, scene.image, "saccade")
    assert evals == scorer.evals
    assert evals < 0.10 * 144 * 184
    assert agreement(dense, sacc, 3, 5.0) == [1.0, 1.0, 1.0]


def test_saccade_pruning_only_saves_work(scene):
    w, h = scene.image.width, scene.image.height
    pruned = detect(AnalyticScorer(scene.landmarks, ScoreParams(), w, h, 17), scene.image, "saccade")
    literal = detect(
        AnalyticScorer(scene.landmarks, ScoreParams(), w, h, 17), scene.image, "saccade", DetectParams(prune=False)
    )
    assert pruned[1] <= literal[1]
    assert agreement(literal[0], pruned[0], 3, 5.0) == [1.0, 1.0, 1.0]


def test_zero_model_detects_nothing(blank_model, small_image):
    for mode in ("dense", "saccade"):
        dets, evals = detect_image(blank_model, small_image, mode)
        assert dets == []
    assert detect_image(blank_model, small_image, "dense")[1] == 26 * 26


def test_unknown_mode_is_error(blank_model, small_image):
    with pytest.raises(ValueError):
        detect_image(blank_model, small_image, "sparse")


def test_agreement_with_no_reference_is_full():
    ref = [Detection(0, Point(10, 10), 0.9, 0)]
    cand = [Detection(0, Point(13, 14), 0.8, 0)]
    assert agreement(ref, cand, 2, 5.0) == [1.0, 1.0]
    assert agreement(ref, [], 2, 5.0) == [0.0, 1.0]


def test_detections_csv_and_annotation(tmp_path):
    dets = [Detection(0, Point(20, 21), 0.91234567, 40), Detection(2, Point(30, 31), 0.6, 12)]
    path = tmp_path / "d.csv"
    write_detections_csv(str(path), dets, 52)
    lines = path.read_text().splitlines()
    assert lines[0] == "channel,x,y,score,evals"
    assert lines[1] == "0,20,21,0.912346,40"
    assert lines[-1] == "# evals=52"
    canvas = annotate(ImageBuf(np.zeros((50, 50, 3), dtype=np.uint8)), dets)
    assert tuple(canvas[21, 20]) == (255, 0, 0)
    assert tuple(canvas[31, 30]) == (0, 0, 255)
