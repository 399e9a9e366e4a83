import math

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from placekit.boxaug import (
    AugmentParams,
    BoxPool,
    find_neighbors,
    geometry_aware_augment,
    modified_regression_pair,
    regression_loss,
    sample_box,
    sample_box_array,
    smooth_l1,
)
from placekit.geometry import Box3D, angle_diff
from conftest import car

PI = math.pi


def at(x, y, z, theta=0.0):
    return Box3D.make(x, y, z, 1.5, 1.6, 3.9, theta)


def test_params_validation():
    with pytest.raises(ValueError):
        AugmentParams(radius=0)
    with pytest.raises(ValueError):
        AugmentParams(eps_theta=4.0)
    with pytest.raises(ValueError):
        AugmentParams(jitter=-1)
    with pytest.raises(ValueError):
        AugmentParams(alpha=-0.1)
    with pytest.raises(ValueError):
        AugmentParams(per_dim_scale=(1, 1))
    p = AugmentParams(k_max=5, jitter=1.0)
    assert AugmentParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        AugmentParams.from_dict({"bogus": 1})


def test_neighbors_empty_pool(rng):
    assert find_neighbors(at(0, 0, 1), [], 10, PI / 12, 3, rng) == []


def test_neighbors_distance(rng):
    b = at(0, 0, 0.001)
    near, far = at(3, 0, 4), at(9, 0, 12)
    assert find_neighbors(b, [near, far], 10, PI / 12, 3, rng) == [near]


def test_neighbors_orientation(rng):
    b = at(0, 0, 0.001)
    turned = at(3, 0, 4, PI / 2)
    assert find_neighbors(b, [turned], 10, PI / 12, 3, rng) == []


def test_neighbors_wrapped_orientation(rng):
    b = at(0, 0, 1, PI - 0.05)
    other = at(1, 0, 1, -PI + 0.05)
    assert find_neighbors(b, [other], 10, PI / 12, 3, rng) == [other]


def test_neighbors_subset_when_too_many(rng):
    pool = [at(0.1 * i, 0, 5) for i in range(10)]
    seen = set()
    for _ in range(200):
        got = find_neighbors(at(0, 0, 5.5), pool, 10, PI / 12, 3, rng)
        assert len(got) == 3
        seen.update(id(g) for g in got)
    assert len(seen) == 10


def test_forced_identity_weight(rng):
    b = at(2, 1.5, 20)
    out = geometry_aware_augment(b, [at(4, 1.5, 30)], AugmentParams(radius=15), rng, weights=[1.0, 0.0])
    assert out == b


def test_forced_half_weights(rng):
    b = at(2, 1.5, 20)
    out = geometry_aware_augment(b, [at(4, 1.5, 30)], AugmentParams(radius=15), rng, weights=[0.5, 0.5])
    assert (out.x, out.y, out.z) == pytest.approx((3.0, 1.5, 25.0))
    assert out.alpha_consistent()


def test_bad_weights_rejected(rng):
    with pytest.raises(ValueError):
        geometry_aware_augment(at(2, 1.5, 20), [at(4, 1.5, 30)], AugmentParams(radius=15), rng, weights=[0.6, 0.6])


def test_zero_jitter_is_identity(rng):
    b = at(2, 1.5, 20)
    assert geometry_aware_augment(b, [], AugmentParams(jitter=0.0), rng) == b


@pytest.mark.parametrize("theta", [-PI / 2, 0.0, 0.7, 2.5])
def test_jitter_box_frame(theta):
    rng = np.random.default_rng(1)
    b = at(2, 1.5, 20, theta)
    params = AugmentParams(jitter=2.0)
    c, s = math.cos(theta), math.sin(theta)
    for _ in range(500):
        out = geometry_aware_augment(b, [], params, rng)
        dx, dz = out.x - b.x, out.z - b.z
        along = dx * c - dz * s
        across = dx * s + dz * c
        assert abs(along) <= 2.0 and abs(across) <= 2.0
        assert abs(along) > 2 * abs(across)
        assert out.y == b.y and out.dims.tolist() == b.dims.tolist() and out.theta == b.theta


def test_jitter_camera_frame():
    rng = np.random.default_rng(1)
    b = at(2, 1.5, 20, 0.9)
    params = AugmentParams(jitter=2.0, jitter_frame="camera")
    signs = set()
    for _ in range(500):
        out = geometry_aware_augment(b, [], params, rng)
        dx, dz = out.x - b.x, out.z - b.z
        assert abs(dz) > 2 * abs(dx) and abs(dz) <= 2.0
        signs.add((dx > 0, dz > 0))
    assert len(signs) == 4


def test_determinism():
    pool = [at(1, 1.5, 21), at(3, 1.5, 19), at(-2, 1.5, 24)]
    b = at(0, 1.5, 20)
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(99)
        outs.append([geometry_aware_augment(b, pool, AugmentParams(), rng) for _ in range(20)])
    assert outs[0] == outs[1]


def test_sample_box_alpha_zero(rng):
    mu = at(1, 1.5, 10, 0.3)
    assert sample_box(mu, AugmentParams(alpha=0.0), rng) == mu


def test_sample_box_forced_eps(rng):
    mu = at(1, 1.5, 10, 0.3)
    out = sample_box(mu, AugmentParams(alpha=0.1), rng, eps=[1, 0, 0, 0, 0, 0, 0])
    assert out.x == pytest.approx(1.1, abs=1e-15)
    assert out.vector[1:].tolist() == mu.vector[1:].tolist()
    assert out.alpha_consistent()


def test_sample_box_clamps_and_wraps(rng):
    mu = Box3D.make(1, 1.5, 10, 0.15, 0.15, 0.15, PI - 0.01)
    out = sample_box(mu, AugmentParams(alpha=1.0), rng, eps=[0, 0, 0, -1, -1, -1, 1])
    assert out.h == out.w == out.l == 0.1
    assert out.theta == pytest.approx(-PI + 0.99)


def test_sample_array_matches_sequential():
    mu = at(1, 1.5, 10, 0.3)
    p = AugmentParams()
    arr = sample_box_array(mu, p, np.random.default_rng(8), 50)
    rng = np.random.default_rng(8)
    seq = np.array([sample_box(mu, p, rng).vector for _ in range(50)])
    assert np.allclose(arr, seq, atol=1e-12)


def test_sample_statistics():
    mu = at(1, 1.5, 10, 0.3)
    p = AugmentParams(alpha=0.1, per_dim_scale=(1, 2, 1, 1, 1, 1, 0.5))
    draws = sample_box_array(mu, p, np.random.default_rng(3), 100_000)
    cov = np.cov(draws.T)
    want = np.diag((0.1 * np.array(p.per_dim_scale)) ** 2)
    assert np.allclose(cov, want, atol=3e-4)


def test_regression_pair_degenerate(rng):
    b_gt, mu = at(2, 1.5, 20), at(2.5, 1.5, 21)
    p = AugmentParams(alpha=0.0, jitter=0.0)
    b_hat, b_tilde = modified_regression_pair(b_gt, mu, [], p, rng)
    assert b_hat == mu and b_tilde == b_gt
    assert smooth_l1(b_gt, b_gt) == 0.0


def test_regression_loss_hand_value(rng):
    b_gt = at(2, 1.5, 20)
    pool = [at(4, 1.5, 30)]
    loss = regression_loss(b_gt, b_gt, pool, AugmentParams(alpha=0.1, radius=15), rng,
                           weights=[0.5, 0.5], eps=[1, 0, 0, 0, 0, 0, 0])
    # b_hat x=2.1, b_tilde (3, 25): 0.5*0.9**2 + (5 - 0.5)
    assert loss == pytest.approx(0.405 + 4.5, abs=1e-12)


def test_smooth_l1_wraps_yaw():
    a, b = at(0, 0, 10, PI - 0.1), at(0, 0, 10, -PI + 0.1)
    assert smooth_l1(a, b) == pytest.approx(0.5 * 0.2 ** 2)


boxes = st.builds(
    lambda x, z, t: at(x, 1.5, z, t),
    st.floats(-20, 20), st.floats(1, 60), st.floats(-PI, PI),
)


@settings(max_examples=200, deadline=None)
@given(boxes, st.lists(boxes, max_size=8), st.integers(0, 2**32 - 1))
def test_augment_preserves_size_and_yaw(b, pool, seed):
    out = geometry_aware_augment(b, BoxPool(pool), AugmentParams(), np.random.default_rng(seed))
    assert (out.h, out.w, out.l, out.theta) == (b.h, b.w, b.l, b.theta)
    assert out.alpha_consistent()


@settings(max_examples=200, deadline=None)
@given(boxes, st.lists(boxes, max_size=12), st.integers(0, 2**32 - 1))
def test_neighbors_are_sound(b, pool, seed):
    p = AugmentParams(radius=15.0, eps_theta=0.8, k_max=4)
    got = find_neighbors(b, pool, p.radius, p.eps_theta, p.k_max, np.random.default_rng(seed))
    brute = [n for n in pool
             if np.linalg.norm(n.loc - b.loc) < p.radius and angle_diff(n.theta, b.theta) < p.eps_theta]
    assert len(got) == min(len(brute), p.k_max)
    assert all(any(g is n for n in brute) for g in got)


def test_pool_without():
    pool = BoxPool([car(0, 10), car(3, 10), car(6, 10)])
    rest = pool.without(1)
    assert len(rest) == 2 and rest.locs[:, 0].tolist() == [0.0, 6.0]
