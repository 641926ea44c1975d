import numpy as np
import pytest

from legato.probe import fit_ridge, probe_downstream, probe_mse_per_latent


def _latents(rng, n):
    return rng.normal(size=(n, 4)) + np.arange(1, 5)


def test_identity_representation():
    rng = np.random.default_rng(0)
    z_tr, z_te = _latents(rng, 400), _latents(rng, 400)
    assert probe_downstream(z_tr, z_tr, z_te, z_te) < 1e-6


def test_noise_representation_gives_target_variance():
    rng = np.random.default_rng(1)
    z_tr, z_te = _latents(rng, 2000), _latents(rng, 2000)
    per = probe_mse_per_latent(rng.normal(size=(2000, 8)), z_tr, rng.normal(size=(2000, 8)), z_te)
    np.testing.assert_allclose(per, 1.0, atol=0.15)


def test_constant_representation_predicts_training_mean():
    rng = np.random.default_rng(2)
    z_tr, z_te = _latents(rng, 500), _latents(rng, 500)
    coef, intercept = fit_ridge(np.ones((500, 3)), z_tr)
    np.testing.assert_array_equal(coef, 0.0)
    np.testing.assert_allclose(intercept, z_tr.mean(axis=0))
    per = probe_mse_per_latent(np.ones((500, 3)), z_tr, np.ones((500, 3)), z_te)
    np.testing.assert_allclose(per, ((z_te - z_tr.mean(axis=0)) ** 2).mean(axis=0))


def test_scale_covariance():
    rng = np.random.default_rng(3)
    z_tr, z_te = _latents(rng, 400), _latents(rng, 400)
    mix = rng.normal(size=(4, 6))
    X_tr = z_tr @ mix + 0.3 * rng.normal(size=(400, 6))
    X_te = z_te @ mix + 0.3 * rng.normal(size=(400, 6))
    base = probe_downstream(X_tr, z_tr, X_te, z_te)
    scaled = probe_downstream(10 * X_tr, z_tr, 10 * X_te, z_te)
    assert abs(scaled - base) / base < 0.01


def test_singular_system_raises():
    with pytest.raises(np.linalg.LinAlgError):
        fit_ridge(np.ones((3, 2)), np.ones(3), lam=0.0)
