import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from rplusx.context import ContextExample, nearest_context_warp
from rplusx.descriptors import KeypointSet
from rplusx.estimators import NearestContextWarp, RigidRegistration
from rplusx.hands import HandTrajectory
from rplusx.synthetic import random_transform


def test_rigid_registration_params_and_clone():
    est = RigidRegistration(inlier_threshold=0.02, random_state=4)
    assert est.get_params() == {"inlier_threshold": 0.02, "max_iterations": 500, "random_state": 4}
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "transform_")


def test_rigid_registration_fit_transform():
    rng = np.random.default_rng(0)
    T = random_transform(rng)
    X = rng.normal(size=(30, 3))
    y = T.apply(X)
    y[:5] += 1.0
    est = RigidRegistration(inlier_threshold=0.01).fit(X, y)
    assert not est.inlier_mask_[:5].any() and est.inlier_mask_[5:].all()
    assert np.allclose(est.transform(X[5:]), y[5:])
    assert np.allclose(est.inverse_transform(y[5:]), X[5:])
    assert est.score(X[5:], y[5:]) == pytest.approx(0.0, abs=1e-12)
    plain = RigidRegistration().fit(X[5:], y[5:])
    assert np.allclose(plain.rotation_, T.rotation) and plain.rms_ < 1e-12


def test_rigid_registration_input_checks():
    with pytest.raises(NotFittedError):
        RigidRegistration().transform(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        RigidRegistration().fit(np.zeros((4, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        RigidRegistration().fit(np.eye(3), np.eye(4)[:, :3])


def test_nearest_context_warp_estimator():
    rng = np.random.default_rng(1)
    kps = [rng.normal(size=(5, 3)) for _ in range(3)]
    trajs = [HandTrajectory.from_array(rng.normal(size=(4, 2, 3)), ("a", "b")) for _ in range(3)]
    est = NearestContextWarp().fit(kps, trajs)
    g = random_transform(rng)
    live = g.apply(kps[2])
    best, T, rms = est.select(live)
    assert best == 2 and rms < 1e-9
    assert np.allclose(est.predict(live), g.apply(trajs[2].positions()))
    examples = [ContextExample(KeypointSet(k), t) for k, t in zip(kps, trajs)]
    ref = nearest_context_warp(examples, KeypointSet(live)).positions()
    assert np.array_equal(NearestContextWarp().fit(examples).predict(live), ref)
    assert est.score([live]) == pytest.approx(0.0, abs=1e-9)
    assert clone(est).get_params() == {}
