import numpy as np
import pytest
from hypothesis import given
from hypothesis.extra.numpy import arrays

from curvexpand.segeval import confusion, f1, miou
from curvexpand.segeval.metrics import iou_from_counts

from oracles import confusion_oracle, f1_oracle, miou_oracle


def test_identical_masks():
    gt = np.zeros((8, 8), bool)
    gt[2:4] = True
    assert miou(gt, gt) == 100.0
    assert f1(gt, gt) == 100.0


def test_complement_on_half_mask():
    gt = np.zeros((8, 8), bool)
    gt[:4] = True
    assert miou(~gt, gt) == 0.0


def test_all_background_prediction():
    gt = np.zeros((8, 8), bool)
    gt[0, 0] = True
    assert f1(np.zeros_like(gt), gt) == 0.0


def test_empty_masks_are_perfect():
    z = np.zeros((4, 4), bool)
    assert miou(z, z) == 100.0 and f1(z, z) == 100.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        miou(np.zeros((4, 4), bool), np.zeros((4, 5), bool))
    with pytest.raises(ValueError):
        f1(np.zeros((4, 4), bool), np.zeros((5, 4), bool))


def test_uint8_masks_accepted():
    gt = np.zeros((4, 4), np.uint8)
    gt[0] = 255
    assert miou(gt, gt > 0) == 100.0


@given(arrays(np.bool_, (8, 8)), arrays(np.bool_, (8, 8)))
def test_against_counting_oracle(pred, gt):
    assert tuple(confusion(pred, gt)) == confusion_oracle(pred, gt)
    assert abs(miou(pred, gt) - miou_oracle(pred, gt)) <= 1e-9
    assert abs(f1(pred, gt) - f1_oracle(pred, gt)) <= 1e-9
    c = confusion(pred, gt)
    assert sum(c) == pred.size
    iou_fg, _ = iou_from_counts(c)
    assert abs(f1(pred, gt) - 100 * 2 * iou_fg / (1 + iou_fg)) <= 1e-9
    assert 0.0 <= miou(pred, gt) <= 100.0
