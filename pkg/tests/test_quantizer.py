import numpy as np
import pytest

import aib.tensor as T
from aib.exceptions import ConfigError, DimensionError
from aib.quantizer import (
    commitment_loss,
    init_anchors,
    quantization_loss,
    quantize,
    straight_through,
)
from aib.tensor import Tape, Tensor, backward
from aib.training import OptimState, sgd_step


def score_tensor(data):
    return Tensor(np.asarray(data, float), requires_grad=True)


def test_init_anchors_spots():
    assert np.allclose(init_anchors(5).as_array(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert np.allclose(init_anchors(2).as_array(), [0.0, 1.0])
    assert np.allclose(init_anchors(1).as_array(), [0.5])
    assert init_anchors(20).q == 20
    with pytest.raises(ConfigError):
        init_anchors(0)


def test_quantize_nearest_and_tie_break():
    anchors = init_anchors(3)  # 0, 0.5, 1
    maps = quantize(score_tensor([0.6, 0.1, 0.95]), anchors)
    assert np.array_equal(maps.assignment, [1, 0, 2])
    assert np.allclose(maps.quantized.data, [0.5, 0.0, 1.0])
    # 0.25 is equidistant from 0 and 0.5: lowest index wins
    maps = quantize(score_tensor([0.25]), anchors)
    assert maps.assignment[0] == 0
    assert maps.quantized.data[0] == 0.0


def test_quantize_exhaustive_oracle():
    rng = np.random.default_rng(0)
    values = np.sort(rng.uniform(-0.5, 1.5, 11))
    anchors = init_anchors(11)
    anchors.values.data[:] = values
    scores = rng.uniform(-1, 2, 10000)
    maps = quantize(score_tensor(scores), anchors)
    # exhaustive scan with explicit lowest-index tie handling
    for i in range(0, 10000, 7):
        d = np.abs(scores[i] - values)
        best = min(range(11), key=lambda j: (d[j], j))
        assert maps.assignment[i] == best
    # vectorized full check
    dists = np.abs(scores[:, None] - values[None, :])
    assert np.array_equal(maps.assignment, dists.argmin(axis=1))
    assert np.allclose(maps.quantized.data, values[maps.assignment])


def test_quantize_preserves_shape():
    maps = quantize(score_tensor(np.zeros((2, 1, 3, 3))), init_anchors(4))
    assert maps.assignment.shape == (2, 1, 3, 3)
    assert maps.quantized.shape == (2, 1, 3, 3)


def test_straight_through_forward_and_identity_backward():
    a = score_tensor([0.6, 0.1])
    anchors = init_anchors(3)
    with Tape():
        maps = quantize(a, anchors)
        st = straight_through(a, maps.quantized)
        out = T.sum_all(T.mul(st, Tensor(np.array([2.0, 5.0]))))
    assert np.allclose(st.data, [0.5, 0.0])
    backward(out)
    assert np.allclose(a.grad, [2.0, 5.0])  # identity jacobian toward a
    assert anchors.values.grad is None  # no anchor grads through this path


def test_straight_through_shape_check():
    with pytest.raises(DimensionError):
        straight_through(score_tensor([1.0, 2.0]), Tensor(np.zeros(3)))


def test_quantization_loss_routes_to_anchors_only():
    a = score_tensor([0.6, 0.1, 0.9])
    anchors = init_anchors(3)
    with Tape():
        maps = quantize(a, anchors)
        loss = quantization_loss(a, maps, anchors)
    backward(loss)
    assert a.grad is None
    # d/dv mean((a - v_k)^2) = -2(a - v_k)/n on assigned anchors
    g = anchors.values.grad
    assert np.isclose(g[1], -2 * (0.6 - 0.5) / 3)
    assert np.isclose(g[0], -2 * (0.1 - 0.0) / 3)
    assert np.isclose(g[2], -2 * (0.9 - 1.0) / 3)


def test_commitment_loss_routes_to_scores_only():
    a = score_tensor([0.6, 0.1, 0.9])
    anchors = init_anchors(3)
    with Tape():
        maps = quantize(a, anchors)
        loss = commitment_loss(a, maps)
    backward(loss)
    assert anchors.values.grad is None
    assert np.allclose(a.grad, 2 * (a.data - maps.quantized.data) / 3)


def test_loss_values():
    a = score_tensor([0.6, 0.1])
    maps = quantize(a, init_anchors(3))
    expect = np.mean((np.array([0.6, 0.1]) - np.array([0.5, 0.0])) ** 2)
    assert np.isclose(float(quantization_loss(a, maps).data), expect)
    assert np.isclose(float(commitment_loss(a, maps).data), expect)


def test_one_sgd_step_moves_anchors_toward_centroids():
    rng = np.random.default_rng(3)
    scores = rng.uniform(0, 1, 256)
    a = score_tensor(scores)
    anchors = init_anchors(4)
    before = anchors.as_array().copy()
    with Tape():
        maps = quantize(a, anchors)
        loss = quantization_loss(a, maps, anchors)
    backward(loss)
    state = OptimState(lr=0.05, momentum=0.0, weight_decay=0.0)
    sgd_step([anchors.values], state)
    after = anchors.as_array()
    for k in range(4):
        mask = maps.assignment == k
        assert mask.any()
        centroid = scores[mask].mean()
        # strictly closer to the assignment centroid than before the step
        assert abs(after[k] - centroid) < abs(before[k] - centroid)


def test_assignment_consistency_guard():
    from aib.exceptions import ContractError

    a = score_tensor([0.3])
    anchors = init_anchors(3)
    maps = quantize(a, anchors)
    anchors.values.data[:] = [5.0, 6.0, 7.0]  # stale assignment now inconsistent
    with pytest.raises(ContractError):
        quantization_loss(a, maps, anchors)
