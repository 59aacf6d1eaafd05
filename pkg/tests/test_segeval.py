import statistics
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from curvexpand.segeval.augment import Augmentation, expand_with_augmentation, sample_augmentation
from curvexpand.segeval.fid import DiagonalCovarianceFallback, feature_distance, frechet_distance
from curvexpand.segeval.report import CRACK500_REFERENCE, compare_methods, to_csv, to_markdown
from curvexpand.segeval.segmenter import EvalReport, SegHyperparams, select_best, train_segmenter


def _pair(seed=0, size=16):
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), bool)
    mask[:, 6:9] = True
    image = np.where(mask, 0.2, 0.8) + rng.normal(0, 0.03, (size, size))
    return image.clip(0, 1), mask


# -- segmenter -----------------------------------------------------------------------------


def test_segmenter_overfits_single_sample():
    x, y = _pair()
    report, state = train_segmenter((x[None], y[None]), (x[None], y[None]), SegHyperparams(epochs=60, lr=5e-3))
    assert report.best_miou >= 95.0
    assert set(state) and report.best_epoch == int(np.argmax(report.miou))


def test_segmenter_zero_lr_is_flat():
    x, y = _pair()
    report, _ = train_segmenter((x[None], y[None]), (x[None], y[None]), SegHyperparams(epochs=5, lr=0.0))
    assert len(set(report.miou)) == 1 and len(set(report.f1)) == 1


def test_segmenter_is_deterministic():
    xs, ys = zip(*(_pair(s) for s in range(4)))
    data = (np.stack(xs), np.stack(ys))
    a, _ = train_segmenter(data, data, SegHyperparams(epochs=3), seed=5)
    b, _ = train_segmenter(data, data, SegHyperparams(epochs=3), seed=5)
    assert a.miou == b.miou and a.f1 == b.f1


def test_segmenter_rejects_empty_sets():
    x, y = _pair()
    with pytest.raises(ValueError):
        train_segmenter((x[:0], y[:0]), (x[None], y[None]))


def test_select_best_uses_miou_only():
    assert select_best([50.0, 70.0, 70.0, 60.0], [90.0, 10.0, 99.0, 99.0]) == (1, 70.0, 10.0)


@given(st.lists(st.floats(0, 100), min_size=1, max_size=20))
def test_select_best_is_argmax(mious):
    idx, best, _ = select_best(mious, [0.0] * len(mious))
    assert best == max(mious) and mious.index(best) == idx


def test_eval_report_json_roundtrip():
    r = EvalReport("scp", 5, 2, [1.0, 2.0], [3.0, 4.0], 1, 2.0, 4.0)
    assert EvalReport.from_json(r.to_json()) == r


# -- augmentation --------------------------------------------------------------------------


@given(arrays(np.float64, (6, 6), elements=st.floats(0, 1)), st.booleans(), st.booleans())
def test_flips_are_involutions(a, h, v):
    aug = Augmentation("flip_rotate", h, v, 0)
    assert np.array_equal(aug.apply_image(aug.apply_image(a)), a)


@given(arrays(np.bool_, (8, 8)))
def test_half_turn_preserves_foreground_count(mask):
    aug = Augmentation("flip_rotate", rot90=2)
    assert aug.apply_mask(mask).sum() == mask.sum()


@given(st.integers(0, 1000))
def test_geometric_transform_is_paired(seed):
    image, mask = _pair(seed % 7)
    aug = sample_augmentation("flip_rotate", mask.shape, np.random.default_rng(seed))
    out_x, out_y = aug.apply_image(image), aug.apply_mask(mask)
    # the dark stripe moves with the mask
    assert np.all(out_x[out_y] < 0.5) and np.all(out_x[~out_y] > 0.5)


@given(st.integers(0, 1000))
def test_cutout_only_touches_its_box(seed):
    image, mask = _pair(seed % 7)
    aug = sample_augmentation("cutout", mask.shape, np.random.default_rng(seed))
    y0, x0, y1, x1 = aug.box
    inside = np.zeros_like(mask)
    inside[y0:y1, x0:x1] = True
    out_x, out_y = aug.apply_image(image), aug.apply_mask(mask)
    assert np.array_equal(out_x[~inside], image[~inside]) and np.array_equal(out_y[~inside], mask[~inside])
    assert not out_x[inside].any() and not out_y[inside].any()


def test_augmented_expansion_size_and_prefix():
    xs, ys = zip(*(_pair(s) for s in range(3)))
    x, y = np.stack(xs), np.stack(ys)
    ex, ey = expand_with_augmentation(x, y, 4, "flip_rotate", seed=1)
    assert ex.shape == (12, 16, 16) and ey.dtype == bool
    assert np.array_equal(ex[:3], x)
    with pytest.raises(ValueError):
        sample_augmentation("mixup", (4, 4), np.random.default_rng(0))


# -- feature distance ----------------------------------------------------------------------


def _images(n, seed=0):
    return np.random.default_rng(seed).uniform(0.2, 0.6, (n, 16, 16))


def test_identical_sets_have_zero_distance():
    x = _images(80)
    assert feature_distance(x, x) == pytest.approx(0.0, abs=1e-8)


def test_identity_projector_shift_sweep_matches_closed_form():
    x = _images(80)
    previous = -1.0
    for delta in (0.0, 0.05, 0.1, 0.2, 0.3):
        d = feature_distance(x, x + delta, projector="identity")
        # a constant shift moves all 16 pooled features by delta and leaves covariances unchanged
        assert d == pytest.approx(16 * delta**2, abs=1e-6)
        assert d > previous
        previous = d


def test_black_and_white_sets_differ():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiagonalCovarianceFallback)
        assert feature_distance(np.zeros((8, 16, 16)), np.ones((8, 16, 16))) > 0


def test_small_sets_warn_and_use_diagonal():
    with pytest.warns(DiagonalCovarianceFallback):
        feature_distance(_images(5), _images(5, 1))
    _, diagonal = frechet_distance(np.zeros((4, 8)), np.ones((4, 8)))
    assert diagonal


def test_gaussian_frechet_closed_form():
    # diagonal Gaussians: ||mu_a - mu_b||^2 + sum (s_a - s_b)^2
    rng = np.random.default_rng(0)
    a = rng.normal(0, 1, (20000, 3))
    b = rng.normal(1, 2, (20000, 3))
    d, diagonal = frechet_distance(a, b)
    assert not diagonal and d == pytest.approx(3 * 1 + 3 * 1, rel=0.05)


def test_feature_distance_rejects_empty():
    with pytest.raises(ValueError):
        feature_distance(_images(0), _images(3))


# -- report --------------------------------------------------------------------------------


def _report(method, ratio, seed, best):
    return EvalReport(method, ratio, seed, [best], [best - 5], 0, best, best - 5)


def test_single_run_row():
    [row] = compare_methods([_report("original", None, 0, 61.0)])
    assert (row.runs, row.miou_mean, row.miou_std, row.f1_mean) == (1, 61.0, 0.0, 56.0)


@given(st.lists(st.floats(0, 100), min_size=2, max_size=6))
def test_rows_average_seeds(values):
    rows = compare_methods([_report("scp", 5, i, v) for i, v in enumerate(values)])
    assert len(rows) == 1
    assert rows[0].miou_mean == pytest.approx(statistics.mean(values), abs=1e-9)
    assert rows[0].miou_std == pytest.approx(statistics.stdev(values), abs=1e-6)


def test_enumeration_gives_one_row_per_method_ratio():
    reports = [_report(m, r, s, 50.0 + s) for m, r in
               [("original", None), ("scp", 2), ("scp", 5), ("cutout", 5), ("flip_rotate", 5)] for s in range(3)]
    rows = compare_methods(reports)
    assert [(r.method, r.ratio) for r in rows] == [
        ("original", None), ("scp", 2), ("scp", 5), ("cutout", 5), ("flip_rotate", 5)]
    assert all(r.runs == 3 and r.miou_mean == 51.0 for r in rows)
    csv_text = to_csv(rows)
    assert csv_text.splitlines()[0].startswith("method,ratio") and len(csv_text.splitlines()) == 6


def test_markdown_carries_reference_values():
    assert CRACK500_REFERENCE == {"original": 73.2, "scp": 78.4}
    md = to_markdown(compare_methods([_report("original", None, 0, 60.0)]))
    assert "73.2" in md and "78.4" in md
    assert "73.2" not in to_markdown([], reference=False)
