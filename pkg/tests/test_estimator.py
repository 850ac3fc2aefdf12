"""The sklearn-style estimator wrapper."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from warpreg.estimator import DeformableRegistration
from warpreg.loss import ncc_ssd
from warpreg.synth import SynthConfig, make_pair
from warpreg.tensor import Tensor


def pair_stack(n=3, size=16, seed=0, amplitude=1.5):
    cfg = SynthConfig(size=size, count=n, amplitude=amplitude, control_grid=4, seed=seed)
    rng = np.random.default_rng(cfg.seed)
    stack = np.empty((n, 2, size, size))
    for i in range(n):
        src, tgt, _ = make_pair(cfg, rng)
        stack[i, 0] = src[0]
        stack[i, 1] = tgt[0]
    return stack


def small_estimator(**overrides):
    defaults = dict(levels=2, width_scale=0.125, iters=8, batch_size=2, seed=0)
    defaults.update(overrides)
    return DeformableRegistration(**defaults)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = small_estimator()
        params = est.get_params()
        assert params["levels"] == 2
        assert params["width_scale"] == 0.125
        est2 = DeformableRegistration(**params)
        assert est2.get_params() == params

    def test_set_params(self):
        est = small_estimator()
        est.set_params(iters=3, lr=5e-4)
        assert est.iters == 3
        assert est.lr == 5e-4

    def test_clone_unfitted_copy(self):
        est = small_estimator()
        est.fit(pair_stack(n=2))
        fresh = clone(est)
        assert not hasattr(fresh, "checkpoint_")
        assert fresh.get_params() == est.get_params()

    def test_not_fitted_errors(self):
        est = small_estimator()
        X = pair_stack(n=1)
        with pytest.raises(NotFittedError):
            est.predict(X)
        with pytest.raises(NotFittedError):
            est.transform(X)


class TestFitPredictTransform:
    def test_fit_returns_self_and_sets_state(self):
        est = small_estimator()
        X = pair_stack(n=2)
        assert est.fit(X) is est
        assert hasattr(est, "checkpoint_")
        assert len(est.loss_history_) == est.iters

    def test_output_shapes(self):
        est = small_estimator().fit(pair_stack(n=2))
        X = pair_stack(n=3, seed=1)
        u = est.predict(X)
        warped = est.transform(X)
        assert u.shape == (3, 2, 16, 16)
        assert warped.shape == (3, 1, 16, 16)

    def test_deterministic(self):
        X = pair_stack(n=2)
        a = small_estimator().fit(X).predict(X)
        b = small_estimator().fit(X).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_fit_improves_similarity_on_training_data(self):
        X = pair_stack(n=2, seed=2)
        est = small_estimator(iters=60, seed=1).fit(X)
        warped = est.transform(X)
        for i in range(len(X)):
            before = ncc_ssd(Tensor(X[i, 0][None]), Tensor(X[i, 1][None])).values[0, 0, 0]
            after = ncc_ssd(Tensor(warped[i]), Tensor(X[i, 1][None])).values[0, 0, 0]
            assert after < before

    def test_fit_transform_shortcut(self):
        X = pair_stack(n=2, seed=3)
        warped = small_estimator().fit_transform(X)
        assert warped.shape == (2, 1, 16, 16)


class TestValidation:
    def test_wrong_rank_rejected(self):
        est = small_estimator()
        with pytest.raises(ValueError, match="n_pairs, 2"):
            est.fit(np.zeros((2, 16, 16)))

    def test_wrong_channel_count_rejected(self):
        est = small_estimator()
        with pytest.raises(ValueError, match="n_pairs, 2"):
            est.fit(np.zeros((2, 3, 16, 16)))

    def test_non_finite_rejected(self):
        est = small_estimator()
        X = pair_stack(n=1)
        X[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            est.fit(X)

    def test_divisibility_rejected(self):
        est = small_estimator(levels=3)
        with pytest.raises(ValueError, match="divisible"):
            est.fit(np.zeros((1, 2, 12, 12)))

    def test_predict_validates_too(self):
        est = small_estimator().fit(pair_stack(n=1))
        with pytest.raises(ValueError, match="n_pairs, 2"):
            est.predict(np.zeros((1, 1, 16, 16)))
