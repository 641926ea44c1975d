import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from legato import LegatoEncoder
from legato.synthetic import SimSpec, simulate

PARAMS = dict(embed_dim=6, latent_dim=5, hidden_dim=6, max_epochs=3, random_state=0)


@pytest.fixture(scope="module")
def views():
    return simulate(SimSpec(K=4, w=0.5, N=120, feature_dim=4, seed=0)).views


def test_get_params_and_clone():
    enc = LegatoEncoder(**PARAMS)
    params = enc.get_params()
    assert params["latent_dim"] == 5 and params["variant"] == "full"
    twin = clone(enc)
    assert twin.get_params() == params
    twin.set_params(alpha=0.5)
    assert twin.alpha == 0.5 and enc.alpha == 0.01


def test_fit_transform_shapes_and_determinism(views):
    enc = LegatoEncoder(**PARAMS).fit(views)
    Z = enc.transform(views)
    assert Z.shape == (120, 5)
    assert enc.n_views_ == 4 and enc.n_latent_ == 2 and enc.view_dims_ == [4] * 4
    again = LegatoEncoder(**PARAMS).fit_transform(views)
    assert again.tobytes() == Z.tobytes()
    assert np.isfinite(enc.score(views))
    A = enc.learned_adjacency(views)
    np.testing.assert_allclose(A, A.T, atol=1e-15)


def test_not_fitted_and_bad_input(views):
    with pytest.raises(NotFittedError):
        LegatoEncoder().transform(views)
    enc = LegatoEncoder(**PARAMS).fit(views)
    with pytest.raises(ValueError):
        enc.transform(views[:3])
    with pytest.raises(ValueError):
        LegatoEncoder(validation_fraction=1.5).fit(views)
    with pytest.raises(ValueError):
        LegatoEncoder().fit([v[:2] for v in views])


def test_variant_parameter(views):
    enc = LegatoEncoder(**PARAMS, variant="GlobalPool").fit(views)
    assert enc.n_latent_ == 1
