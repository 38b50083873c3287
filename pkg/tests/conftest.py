"""Shared helpers for building variables and random SPD matrices in tests."""

import numpy as np
import pytest

from fgddf.variables import VariableId, VariableKind, VariableOrdering


def pose(owner: int, time: int = 0) -> VariableId:
    return VariableId(VariableKind.ROBOT_POSE, owner, time, 3)


def target(owner: int, time: int = 0, dim: int = 2) -> VariableId:
    return VariableId(VariableKind.TARGET_STATE, owner, time, dim)


def bias(owner: int, time: int = 0) -> VariableId:
    return VariableId(VariableKind.BIAS_STATE, owner, time, 2)


def scalar_var(owner: int, time: int = 0) -> VariableId:
    """A 1-d target block; handy for hand-computable cases."""
    return VariableId(VariableKind.TARGET_STATE, owner, time, 1)


def ordering(*vs) -> VariableOrdering:
    return VariableOrdering(vs)


def random_spd(rng: np.random.Generator, n: int, jitter: float = 0.5) -> np.ndarray:
    """Random symmetric positive definite matrix with bounded condition number."""
    a = rng.normal(size=(n, n))
    m = a @ a.T + jitter * n * np.eye(n)
    return 0.5 * (m + m.T)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
