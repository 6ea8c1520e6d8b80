from __future__ import annotations

import json

import numpy as np
import pytest

from teshape import MarketInstance, ModelKind, PiecewiseLinear, Quadratic

# Four-agent reference market used throughout: one agent produces nothing,
# preferences span a 5x range in curvature.
QUARTET_A = (5.0, 8.0, 7.0, 0.0)
QUARTET_B = (2.0, 5.0, 3.0, 10.0)
QUARTET_M = (6.0, 5.0, 6.0, 5.0)


def quartet_instance(model: ModelKind = ModelKind.MTES) -> MarketInstance:
    return MarketInstance(
        production=QUARTET_A,
        preferences=tuple(Quadratic(b, m) for b, m in zip(QUARTET_B, QUARTET_M)),
        model=model,
    )


@pytest.fixture
def quartet() -> MarketInstance:
    return quartet_instance()


@pytest.fixture
def quartet_path(tmp_path):
    path = tmp_path / "quartet.json"
    payload = {
        "model": "mtes",
        "agents": [
            {"a": a, "utility": {"kind": "quadratic", "b": b, "m": m}}
            for a, b, m in zip(QUARTET_A, QUARTET_B, QUARTET_M)
        ],
    }
    path.write_text(json.dumps(payload))
    return path


def random_quadratic_instance(
    rng: np.random.Generator,
    n_max: int = 50,
    param_low: float = 0.01,
    model: ModelKind = ModelKind.MTES,
) -> MarketInstance:
    """Random all-quadratic instance with parameters in [param_low, 10]."""
    n = int(rng.integers(1, n_max + 1))
    a = rng.uniform(0.0, 10.0, size=n)
    if a.sum() <= 0:
        a[0] = 1.0
    b = rng.uniform(param_low, 10.0, size=n)
    m = rng.uniform(param_low, 10.0, size=n)
    return MarketInstance(
        production=tuple(float(v) for v in a),
        preferences=tuple(Quadratic(float(bi), float(mi)) for bi, mi in zip(b, m)),
        model=model,
    )


def random_pwl_instance(
    rng: np.random.Generator, n_max: int = 50, model: ModelKind = ModelKind.MTES
) -> MarketInstance:
    n = int(rng.integers(1, n_max + 1))
    a = rng.uniform(0.0, 10.0, size=n)
    if a.sum() <= 0:
        a[0] = 1.0
    beta = rng.uniform(0.01, 10.0, size=n)
    phi = rng.uniform(0.01, 10.0, size=n)
    return MarketInstance(
        production=tuple(float(v) for v in a),
        preferences=tuple(
            PiecewiseLinear(float(bi), float(pi)) for bi, pi in zip(beta, phi)
        ),
        model=model,
    )
