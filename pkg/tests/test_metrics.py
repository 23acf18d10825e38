import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from austkit import metrics
from austkit.datagen import CompositeSample


def test_ap_perfect():
    gt = np.array([1, 0, 1, 0])
    assert metrics.average_precision(gt.astype(float), gt) == 100.0


def test_ap_hand_walked_staircase():
    # ranks: 0.9 hit (P=1, R=.5), 0.8 miss, 0.3 hit (P=2/3, R=1), 0.1 miss
    ap = metrics.average_precision(np.array([0.9, 0.8, 0.3, 0.1]), np.array([1, 0, 1, 0]))
    assert ap == pytest.approx((1.0 * 0.5 + 2.0 / 3.0 * 0.5) * 100)
    assert ap == pytest.approx(83.333333, abs=1e-5)


def test_ap_anti_correlated_single_positive_equals_prevalence():
    # 2x2 with one positive ranked last: precision at its rank is 1/4 = prevalence
    gt = np.array([[0, 0], [1, 0]])
    assert metrics.average_precision(1.0 - gt, gt) == pytest.approx(25.0)


def test_ap_anti_correlated_two_positives_staircase():
    # positives at ranks 3 and 4 of 4: AP = (1/3 + 2/4) / 2
    gt = np.array([[1, 0], [0, 1]])
    assert metrics.average_precision(1.0 - gt, gt) == pytest.approx(100 * (1 / 3 + 2 / 4) / 2)


def test_ap_ties_keep_index_order():
    gt = np.array([0, 1])
    assert metrics.average_precision(np.array([0.5, 0.5]), gt) == pytest.approx(50.0)
    assert metrics.average_precision(np.array([0.5, 0.5]), gt[::-1]) == pytest.approx(100.0)


def test_ap_empty_gt_excluded():
    assert metrics.average_precision(np.ones(4), np.zeros(4)) is None
    rep = metrics.evaluate_predictions([np.ones((2, 2)), np.eye(2)], [np.zeros((2, 2)), np.eye(2)])
    assert rep.ap == 100.0 and rep.ap_excluded == 1 and rep.n_images == 2


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 20))
def test_ap_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(30)
    gt = rng.random(30) > 0.6
    gt[0] = True
    a = metrics.average_precision(scores, gt)
    assert metrics.average_precision(np.exp(3 * scores) - 7, gt) == pytest.approx(a, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 20))
def test_metrics_invariant_to_pixel_permutation(seed):
    rng = np.random.default_rng(seed)
    # distinct scores so the ranking has no ties to reorder
    scores = rng.permutation(25) / 25.0
    gt = rng.random(25) > 0.5
    gt[3] = True
    perm = rng.permutation(25)
    assert metrics.average_precision(scores[perm], gt[perm]) == pytest.approx(metrics.average_precision(scores, gt))
    assert metrics.f1_and_iou(scores[perm], gt[perm]) == metrics.f1_and_iou(scores, gt)


def test_f1_iou_examples():
    assert metrics.f1_and_iou(np.array([1, 0, 1.0]), np.array([1, 0, 1])) == (1.0, 100.0)
    f1, iou = metrics.f1_and_iou(np.array([1, 1, 0, 0.0]), np.array([1, 0, 1, 0]))
    assert f1 == 0.5 and iou == pytest.approx(100 / 3)
    assert metrics.f1_and_iou(np.zeros(4), np.array([1, 0, 1, 0])) == (0.0, 0.0)
    assert metrics.f1_and_iou(np.zeros(4), np.zeros(4)) == (1.0, 100.0)


def test_threshold_is_inclusive():
    assert metrics.confusion(np.array([0.5, 0.49]), np.array([1, 1])) == (1, 0, 1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 20), t=st.floats(0.05, 0.95))
def test_f1_iou_identity(seed, t):
    rng = np.random.default_rng(seed)
    f1, iou = metrics.f1_and_iou(rng.random(16), rng.random(16) > 0.5, t)
    assert f1 == pytest.approx(2 * iou / (100 + iou), abs=1e-12)
    assert 0 <= f1 <= 1 and 0 <= iou <= 100


def _sample(mask, k):
    return CompositeSample(np.zeros((3,) + mask.shape), mask.astype(float), np.zeros(mask.shape, int),
                           {"id": f"{k:04d}"})


def test_dataset_of_one_perfect_prediction():
    gt = np.zeros((4, 4))
    gt[1:3, 1:3] = 1
    rep = metrics.evaluate_dataset(lambda samples: [s.gt_mask for s in samples], [_sample(gt, 0)])
    assert (rep.ap, rep.f1, rep.iou) == (100.0, 1.0, 100.0)


def test_mean_of_perfect_and_wrong():
    gt = np.eye(3)
    rep = metrics.evaluate_predictions([gt, 1 - gt], [gt, gt])
    assert rep.iou == 50.0 and [m.iou for m in rep.per_image] == [100.0, 0.0]


def test_pooled_protocol_differs_from_macro():
    preds = [np.array([0.9, 0.1]), np.array([0.8, 0.95])]
    gts = [np.array([1, 0]), np.array([1, 0])]
    macro = metrics.evaluate_predictions(preds, gts)
    pooled = metrics.evaluate_predictions(preds, gts, ap_protocol="pooled")
    assert macro.ap == pytest.approx(75.0)
    assert pooled.ap == pytest.approx(100 * (1 / 2 + 2 / 3) / 2)
    with pytest.raises(ValueError):
        metrics.evaluate_predictions(preds, gts, ap_protocol="weird")


def test_report_text_round_trip():
    rng = np.random.default_rng(1)
    preds = [rng.random((4, 4)) for _ in range(3)]
    gts = [rng.random((4, 4)) > 0.5 for _ in range(3)]
    rep = metrics.evaluate_predictions(preds, gts, style=[(0.1, 0.7), None, (0.2, 0.6)])
    back = metrics.EvalReport.from_text(rep.to_text())
    for key in metrics.EvalReport._KEYS:
        assert getattr(back, key) == getattr(rep, key)
    assert rep.style_images == 2 and rep.s_inter == pytest.approx(0.15)
    csv_lines = rep.per_image_csv().splitlines()
    assert csv_lines[0] == "image_id,ap,f1,iou" and len(csv_lines) == 4


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        metrics.evaluate_dataset(lambda s: [], [])


def test_parallel_evaluation_matches_serial():
    from austkit.datagen import GeneratorConfig, generate
    from austkit.model import AustNet, ModelConfig
    samples = generate(GeneratorConfig(size=(16, 16), seed=4), 20)
    model = AustNet(ModelConfig(input_size=(16, 16)))
    serial = metrics.evaluate_dataset(model, samples, batch_size=4)
    parallel = metrics.evaluate_dataset(model, samples, batch_size=4, jobs=2)
    assert serial.to_text() == parallel.to_text()
    assert serial.per_image_csv() == parallel.per_image_csv()
