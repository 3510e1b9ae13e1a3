"""Shared fixtures.

System objects are session scoped because each fresh AffineSystem pays a
one-time native compilation of its field expressions.  Tests that need a
nonstandard grid reuse these instances where possible and only build new
systems when the expressions themselves differ.
"""

import numpy as np
import pytest

import endmap as em


@pytest.fixture(scope="session")
def working():
    sys_ = em.builtin("working")
    # warm the compiled kernels so per-test timings measure compute only
    em.endpoint(sys_, sys_.zero_control())
    em.exp_map(sys_, np.array([0.1, 0.1]))
    em.conjugate_scan(sys_, np.array([0.1, 0.1]))
    em.variational_jacobian(sys_, sys_.zero_control())
    return sys_


@pytest.fixture(scope="session")
def working_fine():
    # oversample 1 lets a K-interval constant control integrate at step T/K
    sys_ = em.builtin("working", oversample=1)
    em.endpoint(sys_, sys_.constant_control(0.0, K=8))
    return sys_


@pytest.fixture(scope="session")
def heisenberg():
    sys_ = em.builtin("heisenberg")
    em.endpoint(sys_, sys_.zero_control())
    em.variational_jacobian(sys_, sys_.zero_control())
    return sys_


@pytest.fixture(scope="session")
def martinet():
    sys_ = em.builtin("martinet-flat")
    em.endpoint(sys_, sys_.zero_control())
    em.variational_jacobian(sys_, sys_.zero_control())
    return sys_


@pytest.fixture(scope="session")
def double_integrator():
    sys_ = em.builtin("double-integrator")
    em.endpoint(sys_, sys_.zero_control())
    em.exp_map(sys_, np.array([0.1, 0.1]))
    em.variational_jacobian(sys_, sys_.zero_control())
    return sys_


@pytest.fixture(scope="session")
def scalar_blowup():
    # x' = x^2 + u, the classic finite-time escape under u = 1
    sys_ = em.make_system(["x1^2"], [["1"]], n=1, T=2.0, name="blowup")
    try:
        em.endpoint(sys_, sys_.constant_control(0.0))
    except em.ExplosionGuard:
        pass
    return sys_


@pytest.fixture(scope="session")
def line_system():
    # x' = u on the line; every normal extremal is a straight march
    sys_ = em.make_system(["0"], [["1"]], n=1, name="line")
    em.endpoint(sys_, sys_.zero_control())
    em.exp_map(sys_, np.array([0.5]))
    return sys_
