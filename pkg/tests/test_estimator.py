"""Estimator facade: protocol compliance, regression quality, validation."""
import numpy as np
import pytest

from neuralvol.estimator import FieldRegressor, validate_coords, validate_targets


def toy_data(rng, n=4096):
    X = rng.random((n, 3))
    y = 10.0 + 4.0 * np.sin(3.0 * X[:, 0]) * X[:, 1] + 2.0 * X[:, 2] ** 2
    return X, y


def small_est(**kw):
    args = dict(n_levels=4, log2_hashmap_size=12, base_resolution=4,
                n_neurons=16, n_hidden_layers=2, n_steps=250,
                batch_size=2048, seed=3)
    args.update(kw)
    return FieldRegressor(**args)


def test_get_set_params_roundtrip():
    est = FieldRegressor(n_steps=7, encoding="densegrid")
    params = est.get_params()
    assert params["n_steps"] == 7 and params["encoding"] == "densegrid"
    assert set(params) >= {"n_levels", "n_neurons", "loss", "seed", "batch_size"}
    twin = FieldRegressor(**params)
    assert twin.get_params() == params

    est.set_params(n_steps=9, seed=5)
    assert est.n_steps == 9 and est.seed == 5
    with pytest.raises(ValueError):
        est.set_params(gamma=1.0)


def test_repr_shows_only_overrides():
    assert repr(FieldRegressor()) == "FieldRegressor()"
    r = repr(FieldRegressor(n_steps=9))
    assert "n_steps=9" in r and "n_levels" not in r


def test_fit_predict_smooth_function(rng):
    X, y = toy_data(rng)
    Xt, yt = toy_data(rng, n=512)
    est = small_est().fit(X, y)
    assert est.score(Xt, yt) > 0.95
    pred = est.predict(Xt)
    assert pred.shape == (512,) and pred.dtype == np.float64
    assert len(est.history_.losses) == 250
    assert est.history_.losses[-1] < est.history_.losses[0]
    assert est.n_features_in_ == 3


def test_predict_respects_value_scale(rng):
    X = rng.random((2048, 3))
    y = np.full(2048, 42.5)
    est = small_est(n_steps=120).fit(X, y)
    assert est.value_range_ == (42.5, 43.5)
    pred = est.predict(X[:100])
    assert np.all(np.abs(pred - 42.5) < 0.2)


def test_same_seed_same_model(rng):
    X, y = toy_data(rng, n=1024)
    a = small_est(n_steps=40).fit(X, y).predict(X[:64])
    b = small_est(n_steps=40).fit(X, y).predict(X[:64])
    assert np.array_equal(a, b)


def test_refit_resets(rng):
    X, y = toy_data(rng, n=1024)
    est = small_est(n_steps=30)
    first = est.fit(X, y).predict(X[:32])
    again = est.fit(X, y).predict(X[:32])
    assert np.array_equal(first, again)  # fit() does not resume


def test_partial_fit_streams(rng):
    X, y = toy_data(rng, n=2048)
    est = small_est()
    est.partial_fit(X, y)
    r0 = est.value_range_
    losses = [est.history_.losses[0]]
    for _ in range(80):
        est.partial_fit(X, y)
        losses.append(est.history_.losses[-1])
    assert est.value_range_ == r0  # scale frozen at first call
    assert len(est.history_.losses) == 81
    assert est.history_.steps == list(range(81))
    assert losses[-1] < losses[0]


def test_unfitted_predict_rejected():
    with pytest.raises(ValueError, match="not fitted"):
        FieldRegressor().predict(np.zeros((2, 3)))


def test_input_validation(rng):
    X, y = toy_data(rng, n=64)
    est = small_est(n_steps=1)
    with pytest.raises(ValueError):
        est.fit(X[:, :2], y)
    with pytest.raises(ValueError):
        est.fit(X * 2.0, y)  # outside the unit cube
    with pytest.raises(ValueError):
        est.fit(X - 0.5, y)
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        est.fit(bad, y)
    with pytest.raises(ValueError):
        est.fit(X, y[:-1])
    with pytest.raises(ValueError):
        est.fit(X, np.full_like(y, np.inf))
    with pytest.raises(ValueError):
        small_est(encoding="fourier").fit(X, y)
    with pytest.raises(ValueError):
        small_est(n_steps=0).fit(X, y)


def test_boundary_coordinate_accepted():
    X = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.5, 0.5]])
    y = np.array([1.0, 2.0, 3.0])
    est = small_est(n_steps=2, batch_size=3).fit(X, y)
    assert np.isfinite(est.predict(X)).all()


def test_validation_helpers():
    X = validate_coords([[0.1, 0.2, 0.3]])
    assert X.shape == (1, 3) and X.dtype == np.float64
    assert validate_targets([1, 2], 2).tolist() == [1.0, 2.0]
    assert validate_targets(np.ones((3, 1)), 3).shape == (3,)  # column vector ok
    with pytest.raises(ValueError):
        validate_coords(np.zeros((3, 3, 3)))
    with pytest.raises(ValueError):
        validate_targets([[1.0, 2.0]], 2)
