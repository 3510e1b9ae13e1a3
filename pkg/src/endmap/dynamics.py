"""Affine control systems under piecewise-constant controls.

The objects here realize the map from a control grid to a trajectory, its
terminal point, the quadratic cost, and the derivative of the terminal
point with respect to the grid values.  Integration is classical RK4 with
a fixed step; runs that leave a guard ball raise :class:`ExplosionGuard`
instead of returning truncated data silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _compile
from .vfexpr import ExprVectorField


class ExplosionGuard(RuntimeError):
    """The trajectory left the guard ball (or overflowed) before time T.

    Carries the estimated failure time ``t_star`` and the partial
    trajectory up to the last finite sample.
    """

    def __init__(self, t_star: float, trajectory: "Trajectory | None" = None):
        super().__init__(f"trajectory left the guard ball at t = {t_star:.6g}")
        self.t_star = float(t_star)
        self.trajectory = trajectory


@dataclass(frozen=True)
class ControlGrid:
    """Piecewise-constant control on a uniform K-interval grid over [0, T]."""

    values: np.ndarray  # (K, m)
    T: float

    def __post_init__(self):
        v = np.ascontiguousarray(np.atleast_2d(np.asarray(self.values, dtype=float)))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError("control values must form a K x m matrix with K, m >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        if not (float(self.T) > 0.0):
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "T", float(self.T))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def knots(self) -> np.ndarray:
        # left endpoints of the K intervals
        return np.arange(self.K) * (self.T / self.K)

    @staticmethod
    def constant(u: "np.ndarray | float", K: int, T: float, m: int | None = None) -> "ControlGrid":
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if m is not None and u.shape != (m,):
            raise ValueError(f"expected a length-{m} constant control")
        return ControlGrid(np.tile(u, (K, 1)), T)

    @staticmethod
    def zero(m: int, K: int, T: float) -> "ControlGrid":
        return ControlGrid(np.zeros((K, m)), T)


@dataclass(frozen=True)
class Trajectory:
    """Sampled trajectory; ``converged`` is False when the guard fired."""

    times: np.ndarray
    states: np.ndarray
    converged: bool

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class VariationalFrame:
    """Forward and backward variational data sampled at the grid knots.

    MT is the terminal fundamental matrix; Nsamples[k] propagates a state
    perturbation at knot k to time T; Bsamples[k] stacks the controlled
    fields at the knot state, column per channel.
    """

    MT: np.ndarray        # (n, n)
    Msamples: np.ndarray  # (K+1, n, n), Msamples[0] = Id
    Nsamples: np.ndarray  # (K+1, n, n), Nsamples[K] = Id exactly
    Bsamples: np.ndarray  # (K+1, n, m)


class AffineSystem:
    """Drift plus control-linear fields with a horizon and solver defaults."""

    def __init__(
        self,
        f0: ExprVectorField,
        f: "list[ExprVectorField] | tuple[ExprVectorField, ...]",
        T: float = 1.0,
        x0: "np.ndarray | None" = None,
        guard_radius: float = 1e6,
        K: int = 16,
        oversample: int = 32,
        name: str = "",
    ):
        if not isinstance(f0, ExprVectorField):
            raise TypeError("f0 must be an expression-backed vector field")
        f = tuple(f)
        if len(f) < 1:
            raise ValueError("need at least one controlled field")
        for fj in f:
            if not isinstance(fj, ExprVectorField):
                raise TypeError("controlled fields must be expression-backed")
        n = f0.n
        if any(fj.n != n for fj in f):
            raise ValueError("all fields must share the state dimension")
        for label, fld in [("f0", f0)] + [(f"f{j + 1}", fj) for j, fj in enumerate(f)]:
            if len(fld) != n:
                raise ValueError(
                    f"{label} has {len(fld)} components, expected the state dimension {n}"
                )
        if not (float(T) > 0.0):
            raise ValueError("horizon T must be positive")
        if x0 is None:
            x0 = np.zeros(n)
        x0 = np.ascontiguousarray(np.asarray(x0, dtype=float).reshape(-1))
        if x0.shape != (n,):
            raise ValueError(f"x0 must have length {n}")
        if not (guard_radius > 0.0):
            raise ValueError("guard_radius must be positive")
        if K < 1 or oversample < 1:
            raise ValueError("K and oversample must be >= 1")
        self.f0 = f0
        self.f = f
        self.n = n
        self.m = len(f)
        self.T = float(T)
        self.x0 = x0
        self.guard_radius = float(guard_radius)
        self.K = int(K)
        self.oversample = int(oversample)
        self.name = name
        self._compiled = None

    @property
    def compiled(self) -> _compile.CompiledSystem:
        if self._compiled is None:
            self._compiled = _compile.compile_system(
                self.f0.components,
                [fj.components for fj in self.f],
                self.n,
                self.m,
            )
        return self._compiled

    def zero_control(self, K: int | None = None) -> ControlGrid:
        return ControlGrid.zero(self.m, K or self.K, self.T)

    def constant_control(self, u, K: int | None = None) -> ControlGrid:
        return ControlGrid.constant(u, K or self.K, self.T, m=self.m)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<AffineSystem{tag} n={self.n} m={self.m} T={self.T}>"


def _check_control(sys: AffineSystem, u: ControlGrid):
    if u.m != sys.m:
        raise ValueError(f"control has {u.m} channels, system expects {sys.m}")
    if abs(u.T - sys.T) > 1e-12 * max(1.0, sys.T):
        raise ValueError("control horizon differs from the system horizon")


def _partial(xs: np.ndarray, h: float, idx: int) -> Trajectory:
    # keep samples up to the last finite one; the guard row may be inf/nan
    rows = xs[: idx + 1]
    finite = np.all(np.isfinite(rows), axis=1)
    stop = int(np.argmin(finite)) if not finite.all() else len(rows)
    rows = rows[:stop] if stop else rows[:1]
    times = np.arange(rows.shape[0]) * h
    return Trajectory(times, rows.copy(), converged=False)


def integrate(sys: AffineSystem, u: ControlGrid) -> Trajectory:
    """March the state under ``u``; raise ExplosionGuard outside the guard ball."""
    _check_control(sys, u)
    S = u.K * sys.oversample
    h = sys.T / S
    xs = np.empty((S + 1, sys.n))
    status, idx = sys.compiled.run_control(
        sys.x0, u.values, sys.oversample, h, sys.guard_radius**2, xs
    )
    if status:
        raise ExplosionGuard(idx * h, _partial(xs, h, idx))
    times = np.linspace(0.0, sys.T, S + 1)
    return Trajectory(times, xs, converged=True)


def endpoint(sys: AffineSystem, u: ControlGrid) -> np.ndarray:
    """Terminal state of the trajectory under ``u``."""
    return integrate(sys, u).states[-1].copy()


def cost(u: ControlGrid) -> float:
    """Quadratic control cost (T/K) * sum of squared grid values."""
    return (u.T / u.K) * float(np.sum(u.values * u.values))


def cost_gradient(u: ControlGrid) -> np.ndarray:
    """Gradient of cost in the flattened (interval-major) coordinates."""
    return (2.0 * u.T / u.K) * u.values.ravel()


def variational_jacobian(sys: AffineSystem, u: ControlGrid):
    """Derivative of the terminal point in the grid values, plus frame data.

    Returns ``(J, frame)`` with J of shape (n, K*m); column k*m + i is the
    response of the terminal point to the indicator of interval k in
    channel i, computed as the interval integral of N(s) f_i(x(s)) by the
    midpoint rule on the oversampled grid.  N solves the backward adjoint
    of the linearized dynamics from the identity at time T.
    """
    _check_control(sys, u)
    K, n, m = u.K, sys.n, sys.m
    S = K * sys.oversample
    h = sys.T / S
    # dense state path at half the variational step (midpoints at odd rows)
    hd = 0.5 * h
    xs = np.empty((2 * S + 1, n))
    status, idx = sys.compiled.run_control(
        sys.x0, u.values, 2 * sys.oversample, hd, sys.guard_radius**2, xs
    )
    if status:
        raise ExplosionGuard(idx * hd, _partial(xs, hd, idx))
    Mk = np.empty((K + 1, n, n))
    sys.compiled.var_forward(xs, u.values, sys.oversample, h, Mk)
    Nk = np.empty((K + 1, n, n))
    Bk = np.empty((K + 1, n, m))
    cols = np.zeros((n, K * m))
    sys.compiled.var_backward(xs, u.values, sys.oversample, h, Nk, Bk, cols)
    frame = VariationalFrame(MT=Mk[K].copy(), Msamples=Mk, Nsamples=Nk, Bsamples=Bk)
    return cols, frame
