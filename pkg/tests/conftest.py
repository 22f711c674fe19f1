"""Shared fixtures: small worlds and cheap GP registries."""

import numpy as np
import pytest

from terranav import gp
from terranav.world import DisturbanceParams, flat_world, make_world


@pytest.fixture(scope="session")
def flat_grass_world():
    return flat_world(size_x=40.0, size_y=30.0)

@pytest.fixture(scope="session")
def default_world():
    return make_world(seed=3)


def make_tiny_model(rng=None, residual_scale=1e-3, sigma2=1e-4, n=12):
    """Small GP with near-zero residuals; cheap stand-in for a trained model."""
    rng = rng if rng is not None else np.random.default_rng(0)
    X = rng.normal(size=(n, gp.INPUT_DIM))
    Y = rng.normal(scale=residual_scale, size=(n, gp.OUTPUT_DIM))
    return gp.GpModel(
        sigma2=np.full(3, sigma2),
        lengthscales=np.ones((3, gp.INPUT_DIM)),
        noise2=np.full(3, max(sigma2 * 1e-2, 1e-12)),
        X=X,
        Y=Y,
        log_likelihoods=np.zeros(3),
    )


def make_zero_registry(labels=("grass", "mud"), sigma2=1e-16):
    """Registry whose models predict ~zero mean and ~zero variance."""
    models = {}
    for i, lbl in enumerate(labels):
        rng = np.random.default_rng(100 + i)
        X = rng.normal(size=(8, gp.INPUT_DIM))
        models[lbl] = gp.GpModel(
            sigma2=np.full(3, sigma2),
            lengthscales=np.ones((3, gp.INPUT_DIM)),
            noise2=np.full(3, sigma2),
            X=X,
            Y=np.zeros((8, gp.OUTPUT_DIM)),
            log_likelihoods=np.zeros(3),
        )
    return gp.GpRegistry(models)


@pytest.fixture(scope="session")
def tiny_registry():
    rng = np.random.default_rng(0)
    return gp.GpRegistry({
        "grass": make_tiny_model(rng),
        "mud": make_tiny_model(rng, residual_scale=5e-3, sigma2=1e-3),
    })


@pytest.fixture(scope="session")
def calm_disturbances():
    """Noise-free, slip-free ground truth for deterministic closed-loop tests."""
    return {
        "grass": DisturbanceParams(),
        "mud": DisturbanceParams(k_vy=0.1, k_vx=0.9, k_omega=0.05),
    }
