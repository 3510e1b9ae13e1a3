"""Normal extremal flows, shooting, multipliers, and regularity tests.

The normal Hamiltonian system is flowed with the feedback control
u_i = <p, f_i(x)> substituted, so the control-law residual is zero by
construction on every sample.  The covector normalization for flows is
the fixed cost multiplier -1/2; multiplier solutions from the linear
identity p(T) dE(u) = -p0 dC(u) are reported projectivized to unit norm
instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import ndtri

from .dynamics import (
    AffineSystem,
    ControlGrid,
    ExplosionGuard,
    Trajectory,
    cost_gradient,
    variational_jacobian,
)
from .vfexpr import ad

P0_NORMALIZATION = -0.5


@dataclass(frozen=True)
class ExtremalArc:
    """A sampled normal extremal with its induced control and cost."""

    times: np.ndarray
    states: np.ndarray     # (steps+1, n)
    covectors: np.ndarray  # (steps+1, n)
    controls: np.ndarray   # (steps+1, m)
    cost: float
    p0norm: float = P0_NORMALIZATION

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def terminal_covector(self) -> np.ndarray:
        return self.covectors[-1]

    def hamiltonian(self, sys: AffineSystem) -> np.ndarray:
        """Reduced Hamiltonian <p, f0> + 1/2 sum u_i^2 at every sample."""
        comp = sys.compiled
        zero_u = np.zeros(sys.m)
        drift = np.empty(sys.n)
        out = np.empty(len(self.times))
        for t in range(len(self.times)):
            comp.state_rhs(self.states[t], zero_u, drift)
            out[t] = self.covectors[t] @ drift + 0.5 * float(
                self.controls[t] @ self.controls[t]
            )
        return out


def flow_steps(sys: AffineSystem, p0init: np.ndarray) -> int:
    """Step count for the Hamiltonian flow, grown with the covector norm.

    Large covectors drive exponential transients with local rate about
    sqrt(2 (1 + |p|)); the count keeps the fourth-order error of the
    marcher at a fixed relative level along such transients while never
    dropping below the grid resolution of the system.
    """
    s = float(np.linalg.norm(p0init))
    rate = math.sqrt(2.0 * (1.0 + s))
    base = sys.K * sys.oversample
    return max(base, int(math.ceil(2.0 * rate**1.25 * sys.T)))


def _flow_end(sys: AffineSystem, p0init: np.ndarray, nsteps: int):
    """Endpoint-only Hamiltonian flow.

    Returns (x(T), p(T), cost, ok); ok is False when the guard fired.
    """
    n = sys.n
    z0 = np.zeros(2 * n + 1)
    z0[:n] = sys.x0
    z0[n : 2 * n] = p0init
    h = sys.T / nsteps
    dummy = np.empty((1, 1))
    z, status, _ = sys.compiled.run_ham(z0, nsteps, h, sys.guard_radius**2, dummy, False)
    if status:
        return None, None, math.inf, False
    return z[:n].copy(), z[n : 2 * n].copy(), float(z[2 * n]), True


def normal_flow(sys: AffineSystem, p0init, nsteps: int | None = None) -> ExtremalArc:
    """Flow the normal Hamiltonian system from (x0, p0init), storing the path."""
    p0init = np.asarray(p0init, dtype=float).reshape(-1)
    if p0init.shape != (sys.n,):
        raise ValueError(f"initial covector must have length {sys.n}")
    if nsteps is None:
        nsteps = flow_steps(sys, p0init)
    n = sys.n
    z0 = np.zeros(2 * n + 1)
    z0[:n] = sys.x0
    z0[n : 2 * n] = p0init
    h = sys.T / nsteps
    zs = np.empty((nsteps + 1, 2 * n + 1))
    _, status, idx = sys.compiled.run_ham(z0, nsteps, h, sys.guard_radius**2, zs, True)
    if status:
        rows = zs[: idx + 1, :n]
        finite = np.all(np.isfinite(rows), axis=1)
        stop = int(np.argmin(finite)) if not finite.all() else len(rows)
        rows = rows[: max(stop, 1)]
        partial = Trajectory(np.arange(rows.shape[0]) * h, rows.copy(), converged=False)
        raise ExplosionGuard(idx * h, partial)
    times = np.linspace(0.0, sys.T, nsteps + 1)
    states = zs[:, :n].copy()
    covectors = zs[:, n : 2 * n].copy()
    controls = np.empty((nsteps + 1, sys.m))
    B = np.empty((n, sys.m))
    for t in range(nsteps + 1):
        sys.compiled.b_mat(states[t], B)
        controls[t] = covectors[t] @ B
    return ExtremalArc(times, states, covectors, controls, cost=float(zs[-1, 2 * n]))


def phi(sys: AffineSystem, p0init, K: int | None = None) -> ControlGrid:
    """Project the induced control of the normal flow onto the K-grid.

    Grid values are interval averages of u(t), integrated per interval
    with Simpson weights on the flow samples.
    """
    K = K or sys.K
    base = flow_steps(sys, np.asarray(p0init, dtype=float))
    # an even number of substeps per interval, at least the default policy
    q = 2 * max(1, math.ceil(base / (2 * K)))
    arc = normal_flow(sys, p0init, nsteps=K * q)
    w = np.ones(q + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    hs = (sys.T / K) / q
    values = np.empty((K, sys.m))
    for k in range(K):
        block = arc.controls[k * q : k * q + q + 1]
        values[k] = (hs / 3.0) * (w @ block) * (K / sys.T)
    return ControlGrid(values, sys.T)


def exp_map(sys: AffineSystem, p0init, nsteps: int | None = None) -> np.ndarray:
    """Endpoint of the normal extremal from p0init (continuous flow)."""
    p0init = np.asarray(p0init, dtype=float).reshape(-1)
    if nsteps is None:
        nsteps = flow_steps(sys, p0init)
    x, _, _, ok = _flow_end(sys, p0init, nsteps)
    if not ok:
        raise ExplosionGuard(sys.T, None)
    return x


def conjugate_scan(sys: AffineSystem, p0init, nsteps: int | None = None) -> tuple[int, str]:
    """Count interior conjugate events along a normal extremal arc.

    Integrates the Jacobi (variational) equation of the Hamiltonian flow
    from the identity covector block and watches det of dx(t)/dp0.  A sign
    change strictly inside (0, T) means the arc left the field of extremals
    and cannot be a minimizer past that time.

    Returns (crossings, status).  Status 'ok' means the whole arc was
    scanned; 'partial' means the determinant lost floating-point range
    partway (the reported crossings cover the scanned prefix);
    'exploded' means the state guard fired.
    """
    p0init = np.asarray(p0init, dtype=float).reshape(-1)
    if p0init.shape != (sys.n,):
        raise ValueError(f"initial covector must have length {sys.n}")
    if nsteps is None:
        nsteps = flow_steps(sys, p0init)
    n = sys.n
    z0 = np.zeros(2 * n + 1)
    z0[:n] = sys.x0
    z0[n : 2 * n] = p0init
    dets = np.full(nsteps + 1, np.nan)
    _, status, idx = sys.compiled.run_ham_det(
        z0, nsteps, sys.T / nsteps, sys.guard_radius**2, dets
    )
    if status == 1:
        return 0, "exploded"
    arr = dets[: idx + 1]
    bad = ~np.isfinite(arr)
    full = not bad.any()
    if not full:
        arr = arr[: int(np.argmax(bad))]
    # skip the ramp near t = 0 where the block is degenerate by construction
    lo = max(2, int(0.02 * nsteps))
    if arr.size <= lo + 1:
        return 0, "partial"
    seg = arr[lo:]
    sg = np.sign(seg)
    sg = sg[sg != 0.0]
    crossings = int(np.sum(sg[1:] * sg[:-1] < 0.0)) if sg.size > 1 else 0
    return crossings, "ok" if (full and status == 0) else "partial"


# ---------------------------------------------------------------------------
# shooting


@dataclass(frozen=True)
class ShootSolution:
    p0: np.ndarray
    cost: float
    defect: float
    endpoint: np.ndarray
    pT: np.ndarray

    @property
    def p0proj(self) -> float:
        # magnitude of the cost component of the projectivized multiplier
        return 0.5 / math.hypot(float(np.linalg.norm(self.pT)), 0.5)


@dataclass(frozen=True)
class ShootResult:
    solutions: list
    best_defect: float

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)

    @property
    def best(self):
        return self.solutions[0] if self.solutions else None


def _halton(index: int, base: int) -> float:
    out = 0.0
    f = 1.0
    i = index
    while i > 0:
        f /= base
        out += f * (i % base)
        i //= base
    return out


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def ball_seeds(n: int, count: int, radius: float, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy covector seeds in the n-ball."""
    if n + 1 > len(_PRIMES):
        raise ValueError("seed sweep supports n <= 11")
    start = 20 + seed * max(count, 1)
    pts = np.empty((count, n))
    for row in range(count):
        idx = start + row
        g = np.array([ndtri(_halton(idx, _PRIMES[j])) for j in range(n)])
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            g[0], nrm = 1.0, 1.0
        u = _halton(idx, _PRIMES[n])
        pts[row] = (radius * u ** (1.0 / n) / nrm) * g
    return pts


def shoot(
    sys: AffineSystem,
    target,
    seeds=None,
    shoot_tol: float = 1e-8,
    dedup_tol: float = 1e-6,
    seed_radius: float = 10.0,
    nseeds: int = 64,
    seed: int = 0,
    max_nfev: int = 200,
    sweep: bool = True,
) -> ShootResult:
    """Solve exp(p0) = target from many seeds; keep distinct converged roots.

    The defect tolerance is relative to 1 + |target|.  Returns the
    solutions sorted by (cost, p0) and the best defect seen, which callers
    use as the non-convergence diagnostic when the list is empty.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.shape != (sys.n,):
        raise ValueError(f"target must have length {sys.n}")
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    n = sys.n
    scale = 1.0 + float(np.linalg.norm(target))
    big = 1e9

    def raw_endpoint(p0):
        x, _, _, ok = _flow_end(sys, p0, flow_steps(sys, p0))
        return x if ok else None

    def residual(p0):
        x = raw_endpoint(p0)
        if x is None or not np.all(np.isfinite(x)):
            return np.full(n, big)
        return x - target

    def jacobian(p0):
        # Per-component relative steps: along stiff branches a component can
        # sit many orders below the overall norm while the endpoint stays
        # exponentially sensitive to it, and any absolute-sized probe blows
        # up.  A small absolute floor covers exact zeros.
        J = np.empty((n, n))
        pnorm = float(np.linalg.norm(p0))
        for j in range(n):
            # Strictly relative for nonzero components: a floor tied to the
            # overall norm can exceed a stiff component by many orders and
            # push every probe past the blow-up set.
            hj = 1e-6 * abs(p0[j]) if p0[j] != 0.0 else 1e-8 * (1.0 + pnorm)
            done = False
            for _ in range(8):
                e = np.zeros(n)
                e[j] = hj
                xp = raw_endpoint(p0 + e)
                xm = raw_endpoint(p0 - e)
                if xp is not None and xm is not None:
                    J[:, j] = (xp - xm) / (2.0 * hj)
                    done = True
                    break
                hj *= 0.1  # back off toward the base point near the blow-up set
            if not done:
                J[:, j] = 0.0
        return J

    seed_list = []
    if seeds is not None:
        for s in np.atleast_2d(np.asarray(seeds, dtype=float)):
            seed_list.append(np.asarray(s, dtype=float).reshape(n))
    if sweep:
        seed_list.extend(ball_seeds(n, nseeds, seed_radius, seed=seed))

    found = []
    best_defect = math.inf
    for p0_start in seed_list:
        try:
            # termination is judged by the defect test below, so the
            # solver's own tolerances sit near machine level; the default
            # step tolerance quits one Newton step short on stiff branches
            res = least_squares(
                residual,
                p0_start,
                jac=jacobian,
                method="lm",
                x_scale="jac",
                ftol=1e-14,
                xtol=1e-14,
                gtol=1e-14,
                max_nfev=max_nfev,
            )
        except Exception:
            continue
        p0 = res.x
        x, pT, c, ok = _flow_end(sys, p0, flow_steps(sys, p0))
        if not ok:
            continue
        defect = float(np.linalg.norm(x - target))
        best_defect = min(best_defect, defect)
        if defect <= shoot_tol * scale:
            found.append(ShootSolution(p0=p0, cost=c, defect=defect, endpoint=x, pT=pT))

    found.sort(key=lambda s: (s.cost, tuple(s.p0)))
    kept = []
    for sol in found:
        dup = any(
            np.linalg.norm(sol.p0 - k.p0) < dedup_tol * (1.0 + np.linalg.norm(k.p0))
            for k in kept
        )
        if not dup:
            kept.append(sol)
    return ShootResult(solutions=kept, best_defect=best_defect)


# ---------------------------------------------------------------------------
# Lagrange multipliers and classification


@dataclass(frozen=True)
class MultiplierSolution:
    """A projectivized solution of p(T) dE(u) = -lam0 dC(u)."""

    pT: np.ndarray
    lam0: float
    residual: float
    classification: str  # regular-consistent | abnormal | degenerate
    corank: int

    @property
    def vector(self) -> np.ndarray:
        return np.append(self.pT, self.lam0)


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def _rank(mat: np.ndarray, rank_tol: float) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if len(s) == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def lagrange_multipliers(
    sys: AffineSystem,
    u: ControlGrid,
    abn_tol: float = 1e-6,
    rank_tol: float = 1e-8,
    null_tol: float = 1e-3,
) -> list[MultiplierSolution]:
    """Multipliers annihilating the stacked differential [dE; dC] at u.

    Directions whose singular value is below rank_tol (relative) count as
    an exact null space; within it the basis is rotated so at most one
    direction carries the cost component, which separates abnormal from
    degenerate directions instead of reporting an arbitrary mixture.
    Approximate directions up to null_tol are also reported (the finite
    grid makes the normal-case identity hold only to O(1/K^2)), and the
    smallest direction is always included so the result is never empty.
    """
    J, _ = variational_jacobian(sys, u)
    dc = cost_gradient(u)
    G = np.vstack([J, dc])
    U, s, _ = np.linalg.svd(G)
    d = G.shape[0]
    svals = np.zeros(d)
    svals[: len(s)] = s
    smax = float(svals[0]) if svals.size else 0.0

    corank = sys.n - _rank(J, rank_tol)

    if smax == 0.0:
        strict = np.ones(d, dtype=bool)
    else:
        strict = svals <= rank_tol * smax
    approx = np.zeros(d, dtype=bool)
    if smax > 0.0:
        approx = (svals <= null_tol * smax) & ~strict
        if not strict.any() and not approx.any():
            approx[int(np.argmin(svals))] = True

    out = []

    W = U[:, strict]
    if W.shape[1] > 1:
        # rotate so only the last column carries the cost-multiplier row
        row = W[-1].copy()
        nrm = float(np.linalg.norm(row))
        if nrm > 0.0:
            Q = np.eye(W.shape[1])
            v = row.copy()
            v[-1] += math.copysign(nrm, row[-1]) if row[-1] != 0 else nrm
            vn = float(np.linalg.norm(v))
            if vn > 0.0:
                Q = Q - 2.0 * np.outer(v, v) / (vn * vn)
            W = W @ Q
    for i in range(W.shape[1]):
        vec = _canonical_sign(W[:, i] / np.linalg.norm(W[:, i]))
        out.append((vec, float(np.linalg.norm(vec @ G))))
    for i in np.nonzero(approx)[0]:
        vec = _canonical_sign(U[:, i].copy())
        out.append((vec, float(svals[i])))

    sols = []
    for vec, resid in out:
        lam0 = float(vec[-1])
        pT = vec[:-1]
        if abs(lam0) < abn_tol:
            kind = "abnormal"
        elif float(np.linalg.norm(pT)) < abn_tol:
            kind = "degenerate"
        else:
            kind = "regular-consistent"
        sols.append(
            MultiplierSolution(
                pT=pT, lam0=lam0, residual=resid, classification=kind, corank=corank
            )
        )
    sols.sort(key=lambda ms: ms.residual)
    return sols


def kalman_regularity(sys: AffineSystem, rank_tol: float = 1e-8) -> str:
    """Linear-test classification at the base point.

    Only meaningful when the drift vanishes there; otherwise the
    controllability matrix of the linearization has no bearing and the
    verdict is "inapplicable".
    """
    jet = sys.f0.jet(sys.x0)
    if float(np.linalg.norm(jet.value)) > 1e-12:
        return "inapplicable"
    A = jet.jacobian
    B = np.column_stack([fj.value(sys.x0) for fj in sys.f])
    blocks = [B]
    for _ in range(sys.n - 1):
        blocks.append(A @ blocks[-1])
    rank = _rank(np.hstack(blocks), rank_tol)
    return "regular" if rank == sys.n else "abnormal-candidate"


@dataclass(frozen=True)
class ConeReport:
    """Bracket spans along the reference trajectory of the first channel."""

    t: float
    x: np.ndarray
    brackets: list  # ad^k f1.f2 values at x, k = 0..kmax
    span_dim: int
    H1: bool
    H2: bool
    H3: bool


def pontryagin_cone(
    sys: AffineSystem,
    tsample: float,
    kmax: int,
    rank_tol: float = 1e-8,
    h_bracket: float = 1e-5,
) -> ConeReport:
    """Iterated-bracket span test along the flow of f0 + f1.

    Nested brackets beyond the first level are evaluated by directional
    differencing, so for kmax >= 3 the rank tolerance is floored at 1e-5
    to keep differencing noise from inflating the span dimension.
    """
    if sys.m != 2:
        raise ValueError("the cone test is defined for two-channel systems")
    if not (0.0 <= tsample <= sys.T):
        raise ValueError("tsample must lie in [0, T]")
    n = sys.n
    if tsample == 0.0:
        x = sys.x0.copy()
    else:
        nsteps = max(64, sys.oversample * sys.K)
        h = tsample / nsteps
        xs = np.empty((nsteps + 1, n))
        uref = np.array([[1.0, 0.0]])
        status, idx = sys.compiled.run_control(
            sys.x0, uref, nsteps, h, sys.guard_radius**2, xs
        )
        if status:
            raise ExplosionGuard(idx * h, None)
        x = xs[-1].copy()

    f1, f2 = sys.f[0], sys.f[1]
    vals = []
    for k in range(kmax + 1):
        vals.append(ad(f1, f2, k, h_bracket=h_bracket).value(x))
    tol = rank_tol if kmax <= 2 else max(rank_tol, 1e-5)

    span = np.array(vals)
    span_dim = _rank(span, tol)
    h1_rows = np.array(vals[: max(n - 1, 0)])
    H1 = _rank(h1_rows, tol) == n - 1
    w = ad(f2, f1, 2, h_bracket=h_bracket).value(x)
    H2 = _rank(np.vstack([span, w]), tol) > span_dim
    h3_rows = np.array(vals[: max(n - 2, 0)])
    f1x = f1.value(x)
    if h3_rows.size == 0:
        H3 = float(np.linalg.norm(f1x)) > tol
    else:
        H3 = _rank(np.vstack([h3_rows, f1x]), tol) > _rank(h3_rows, tol)
    return ConeReport(
        t=float(tsample), x=x, brackets=vals, span_dim=span_dim, H1=H1, H2=H2, H3=H3
    )
