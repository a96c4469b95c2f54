import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from perspcam.errors import InvalidArgumentError
from perspcam.losses import (LossParts, LossWeights, l_depth, l_joint, l_pose, l_shape, l_vert,
                             total_loss)

positive = st.floats(1e-3, 1e3, allow_nan=False)
parts = st.tuples(*[st.floats(0, 10, allow_nan=False)] * 4)


def test_depth_examples():
    assert l_depth(1.0, 1.0) == 0
    assert l_depth(1.2, 1.0) == pytest.approx(0.2, abs=1e-12)
    assert l_depth(2.0, 4.0) == 0.5
    with pytest.raises(InvalidArgumentError):
        l_depth(1.0, 0.0)


@given(tz=positive, gt=positive, a=st.floats(1e-3, 1e3))
def test_depth_scale_invariance(tz, gt, a):
    assert l_depth(a * tz, a * gt) == pytest.approx(l_depth(tz, gt), rel=1e-12, abs=1e-12)


def test_shape_examples():
    b = np.zeros(10)
    assert l_shape(b, b) == 0
    b[0] = 1.0
    assert l_shape(b, np.zeros(10)) == pytest.approx(0.1)
    c = b.copy()
    c[0] = -1.0
    assert l_shape(b, c) == pytest.approx(2 * l_shape(b, np.zeros(10)))


def test_pose_examples():
    t = np.zeros((16, 3))
    assert l_pose(t, t) == 0
    g = t.copy()
    g[5] = [np.pi / 2, 0, 0]
    assert l_pose(t, g) == pytest.approx(np.pi / 32, abs=1e-12)
    with pytest.raises(InvalidArgumentError):
        l_pose(t, t[:15])


@given(v=arrays(float, 3, elements=st.floats(-3, 3, allow_nan=False)))
def test_pose_representation_invariance(v):
    n = np.linalg.norm(v)
    if n < 1e-6:
        return
    other = v + 2 * np.pi * v / n  # same rotation, one extra full turn
    assert l_pose(v[None], other[None]) < 1e-7
    flipped = -v / n * (2 * np.pi - n)  # opposite axis, complementary angle
    assert l_pose(v[None], flipped[None]) < 1e-7


def test_joint_and_vertex_examples():
    j = np.random.default_rng(0).normal(size=(16, 3))
    assert l_joint(j, j) == 0 and l_vert(j, j) == 0
    off = j + [0.01, 0, 0]
    assert l_joint(off, j) == pytest.approx(0.01 / 3)
    assert l_vert(j + [0.02, 0, 0], j) == pytest.approx(2 * l_vert(off, j))


def test_total_loss_examples():
    assert total_loss((0, 0, 0, 0)) == 0
    assert total_loss((0.1, 0.2, 0.01, 0.02), LossWeights(1, 1, 5, 5)) == pytest.approx(0.45)
    assert total_loss(LossParts(0.1, 0.2, 0.01, 0.02)) == pytest.approx(0.45)
    assert total_loss((3, 4, 5, 6), LossWeights(0, 0, 0, 0)) == 0
    with pytest.raises(InvalidArgumentError):
        LossWeights(w_pose=-1)


@given(p=parts, q=parts, w=parts, c=st.floats(0, 10))
def test_total_loss_linearity(p, q, w, c):
    weights = LossWeights(*w)
    summed = tuple(a + b for a, b in zip(p, q))
    assert total_loss(summed, weights) == pytest.approx(
        total_loss(p, weights) + total_loss(q, weights), rel=1e-9, abs=1e-9)
    scaled = LossWeights(*(c * x for x in w))
    assert total_loss(p, scaled) == pytest.approx(c * total_loss(p, weights), rel=1e-9, abs=1e-9)


@given(a=arrays(float, (5, 3), elements=st.floats(-1, 1)),
       b=arrays(float, (5, 3), elements=st.floats(-1, 1)))
def test_losses_non_negative(a, b):
    assert l_joint(a, b) >= 0 and l_vert(a, b) >= 0 and l_pose(a, b) >= 0
    assert l_shape(a.ravel(), b.ravel()) >= 0
