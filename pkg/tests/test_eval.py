import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rntraj.dataset import make_windows
from rntraj.evaluation import ModelBundle, ade, evaluate_model, evaluate_predictions, fde, segmented_ade
from rntraj.synthetic import linear_motion_scene

from helpers import ade_oracle, fde_oracle, offset_local_model, random_window, tiny_local

finite = st.floats(-50.0, 50.0, allow_nan=False)


def pair(t=12, n=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 3, (t, n, 2)), rng.normal(0, 3, (t, n, 2))


def test_constant_offset():
    truth = np.zeros((12, 2, 2))
    pred = truth + np.array([3.0, 4.0])
    assert ade(pred, truth) == 5.0 and fde(pred, truth) == 5.0


def test_offset_only_at_final_step():
    truth = np.zeros((12, 1, 2))
    pred = truth.copy()
    pred[-1, 0] = [3.0, 4.0]
    assert fde(pred, truth) == 5.0
    assert ade(pred, truth) == pytest.approx(5.0 / 12, abs=1e-15)


def test_fde_averages_pedestrians():
    truth = np.zeros((12, 2, 2))
    pred = truth.copy()
    pred[-1, 0] = [1.0, 0.0]
    pred[-1, 1] = [0.0, 3.0]
    assert fde(pred, truth) == 2.0


def test_random_instances_match_oracle():
    rng = np.random.default_rng(5)
    for _ in range(100):
        t, n = int(rng.integers(1, 15)), int(rng.integers(1, 6))
        pred, truth = rng.normal(0, 4, (t, n, 2)), rng.normal(0, 4, (t, n, 2))
        assert abs(ade(pred, truth) - ade_oracle(pred, truth)) <= 1e-12
        assert abs(fde(pred, truth) - fde_oracle(pred, truth)) <= 1e-12


@settings(max_examples=60)
@given(arrays(np.float64, (12, 3, 2), elements=finite), arrays(np.float64, (12, 3, 2), elements=finite),
       arrays(np.float64, (2,), elements=finite))
def test_metric_properties(pred, truth, shift):
    a = ade(pred, truth)
    assert a >= 0 and fde(pred, truth) >= 0
    assert (a == 0) == bool(np.all(pred == truth))
    assert ade(pred + shift, truth + shift) == pytest.approx(a, rel=1e-9, abs=1e-9)
    assert np.mean(segmented_ade(pred, truth)) == pytest.approx(a, rel=1e-12, abs=1e-12)


def test_subnormal_offset_is_not_zero():
    truth = np.zeros((12, 1, 2))
    pred = np.full((12, 1, 2), 1e-308)
    assert ade(pred, truth) > 0 and fde(pred, truth) > 0


def test_segmented_ade_hand_values():
    truth = np.zeros((12, 1, 2))
    pred = truth.copy()
    pred[:4, 0, 0] = 1.0
    pred[4:8, 0, 0] = 2.0
    pred[8:, 0, 1] = 6.0
    assert segmented_ade(pred, truth) == [1.0, 2.0, 6.0]
    assert ade(pred, truth) == 3.0


def test_metric_input_errors():
    pred, truth = pair()
    with pytest.raises(ValueError):
        ade(pred, truth[:-1])
    with pytest.raises(ValueError):
        ade(np.zeros((12, 0, 2)), np.zeros((12, 0, 2)))
    with pytest.raises(ValueError):
        segmented_ade(pred[:11], truth[:11])


def test_window_level_averaging():
    # windows with different pedestrian counts weigh equally
    a = random_window(1, seed=0)
    b = random_window(4, seed=1)
    preds = [a.target + [3.0, 4.0], b.target]
    assert evaluate_predictions(preds, [a, b])["ade"] == pytest.approx(2.5, abs=1e-12)


@pytest.fixture(scope="module")
def linear_windows():
    return make_windows(linear_motion_scene(n_steps=24), stride=1)


def test_offset_model_recovers_offset(linear_windows):
    res = evaluate_model(ModelBundle(offset_local_model()), linear_windows, runs=5)
    assert res.ade == pytest.approx(5.0, abs=1e-9) and res.fde == pytest.approx(5.0, abs=1e-9)
    doc = res.to_document()
    assert doc["std"]["ade"] == pytest.approx(0.0, abs=1e-12)


def test_evaluate_is_seed_deterministic():
    windows = [random_window(3, seed=i) for i in range(4)]
    bundle = ModelBundle(tiny_local(seed=1))
    a = evaluate_model(bundle, windows, runs=3, seed=7).to_document()
    b = evaluate_model(bundle, windows, runs=3, seed=7).to_document()
    c = evaluate_model(bundle, windows, runs=3, seed=8).to_document()
    assert a == b and a != c
    assert np.mean(a["segmented_ade"]) == pytest.approx(a["ade"], abs=1e-12)


def test_runs_are_averaged():
    windows = [random_window(2, seed=i) for i in range(3)]
    bundle = ModelBundle(tiny_local(seed=2))
    five = evaluate_model(bundle, windows, runs=5)
    one = evaluate_model(bundle, windows, runs=1)
    assert one.per_run[0] == five.per_run[0]
    assert five.ade == pytest.approx(np.mean([r["ade"] for r in five.per_run]), abs=1e-15)


def test_empty_evaluation_set():
    with pytest.raises(ValueError):
        evaluate_model(ModelBundle(tiny_local()), [], runs=1)
    with pytest.raises(ValueError):
        evaluate_model(ModelBundle(tiny_local()), [random_window()], runs=0)
