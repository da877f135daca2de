import os

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def pytest_configure(config):
    np.seterr(all="ignore")


@pytest.fixture
def fixture_path():
    return lambda name: os.path.join(FIXTURES, name)


def poly_value(q, x):
    """Term-by-term evaluation of the quadric polynomial (test oracle)."""
    A, B, C, D, E, F, G, H, I, J = q
    X, Y, Z = x
    return (A * X * X + B * Y * Y + C * Z * Z + 2 * D * X * Y + 2 * E * X * Z
            + 2 * F * Y * Z + 2 * G * X + 2 * H * Y + 2 * I * Z + J)


def constraint_rows(x, n, projected=True):
    """Point row and three gradient rows of one oriented point, written out by hand."""
    X, Y, Z = x
    v = [X * X, Y * Y, Z * Z, 2 * X * Y, 2 * X * Z, 2 * Y * Z, 2 * X, 2 * Y, 2 * Z, 1.0]
    gx = [2 * X, 0, 0, 2 * Y, 2 * Z, 0, 2, 0, 0, 0]
    gy = [0, 2 * Y, 0, 2 * X, 0, 2 * Z, 0, 2, 0, 0]
    gz = [0, 0, 2 * Z, 0, 2 * X, 2 * Y, 0, 0, 2, 0]
    G = np.array([gx, gy, gz], dtype=float)
    if projected:
        n = np.asarray(n, dtype=float)
        G = (np.eye(3) - np.outer(n, n)) @ G
    return np.vstack([v, G])


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)
