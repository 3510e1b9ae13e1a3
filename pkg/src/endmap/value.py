"""Value function, level-set sampling, and abnormal-minimizer diagnostics.

The value of a target is the cheapest quadratic cost over controls whose
trajectory ends there.  Two solvers cross-validate each other: shooting
through the exponential map and a quadratic-penalty direct method on the
control grid.  Level sets are sampled by root-finding the flow cost along
rays of initial covectors; a per-point cross-check separates the sphere
(minimizing points) from the wave front (non-minimizing ones).

All sweeps are deterministic: direction grids and seed sweeps come from
fixed low-discrepancy sequences shifted by an integer seed, never from a
stochastic generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtri

from .dynamics import (
    AffineSystem,
    ControlGrid,
    ExplosionGuard,
    cost as control_cost,
    cost_gradient,
    endpoint,
    variational_jacobian,
)
from .extremal import (
    _flow_end,
    _halton,
    _PRIMES,
    conjugate_scan,
    flow_steps,
    phi,
    shoot,
)


# ---------------------------------------------------------------------------
# direct method


@dataclass(frozen=True)
class DirectResult:
    control: ControlGrid
    cost: float
    defect: float
    converged: bool
    mu: float


def direct_minimize(
    sys: AffineSystem,
    target,
    u0: ControlGrid | None = None,
    target_tol: float = 1e-6,
    mu_max: float = 1e12,
    inner_maxiter: int = 120,
) -> DirectResult:
    """Quadratic-penalty minimization of cost subject to reaching the target.

    Minimizes cost(u) + mu |E(u) - target|^2 with an exact gradient from
    the variational Jacobian, doubling mu from 1 until the defect is below
    target_tol or mu exceeds mu_max (then converged=False).  The inner
    minimizer is a quasi-Newton bound-free solve; deterministic given u0.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.shape != (sys.n,):
        raise ValueError(f"target must have length {sys.n}")
    K = u0.K if u0 is not None else sys.K
    uflat = (u0.values.ravel().copy() if u0 is not None else np.zeros(K * sys.m))
    w = 2.0 * sys.T / K

    def to_grid(vec):
        return ControlGrid(vec.reshape(K, sys.m), sys.T)

    def defect_of(vec):
        try:
            return float(np.linalg.norm(endpoint(sys, to_grid(vec)) - target))
        except ExplosionGuard:
            return math.inf

    def make_objective(mu):
        def fun(vec):
            grid = to_grid(vec)
            try:
                J, _ = variational_jacobian(sys, grid)
                res = endpoint(sys, grid) - target
            except ExplosionGuard:
                # push back toward cheaper (hence tamer) controls
                return 1e30, w * vec
            f = control_cost(grid) + mu * float(res @ res)
            g = w * vec + 2.0 * mu * (J.T @ res)
            return f, g

        return fun

    mu = 1.0
    defect = defect_of(uflat)
    converged = defect < target_tol
    while not converged and mu <= mu_max:
        res = minimize(
            make_objective(mu),
            uflat,
            jac=True,
            method="L-BFGS-B",
            options=dict(maxiter=inner_maxiter, ftol=1e-16, gtol=1e-12),
        )
        uflat = res.x
        defect = defect_of(uflat)
        if defect < target_tol:
            converged = True
            break
        mu *= 2.0
    grid = to_grid(uflat)
    return DirectResult(
        control=grid,
        cost=control_cost(grid),
        defect=defect,
        converged=converged,
        mu=mu,
    )


# ---------------------------------------------------------------------------
# value function


@dataclass(frozen=True)
class ValueResult:
    """Best-known value at a target with the witnesses that achieve it."""

    S: float | None
    reachable: bool
    method: str  # shooting | direct | both | none
    control: ControlGrid | None
    p0: np.ndarray | None
    shoot_cost: float | None
    direct_cost: float | None
    shoot_defect: float
    direct_defect: float


def value_at(
    sys: AffineSystem,
    target,
    target_tol: float = 1e-6,
    seed: int = 0,
    nseeds: int = 64,
    seed_radius: float = 10.0,
    run_direct: bool = True,
    direct_K: int | None = None,
) -> ValueResult:
    """Infimum of the cost over controls reaching the target.

    Shooting explores all normal extremal solutions from a deterministic
    seed sweep; the direct method descends from the zero control on a
    grid of direct_K intervals (default max(sys.K, 128); the gap of a
    piecewise-constant control against the smooth optimum falls off as
    1/K^2, so the system grid is usually too coarse to corroborate the
    shooting cost).  The smaller of the two wins; when neither reaches
    the target within target_tol the point is reported unreachable.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    sh = shoot(
        sys,
        target,
        shoot_tol=target_tol,
        seed=seed,
        nseeds=nseeds,
        seed_radius=seed_radius,
    )
    shoot_cost = sh.solutions[0].cost if sh.solutions else None
    shoot_defect = sh.solutions[0].defect if sh.solutions else sh.best_defect

    direct_cost = None
    direct_defect = math.inf
    direct_res = None
    if run_direct:
        if direct_K is None:
            direct_K = max(sys.K, 128)
        u0 = ControlGrid.zero(sys.m, direct_K, sys.T)
        direct_res = direct_minimize(sys, target, u0=u0, target_tol=target_tol)
        direct_defect = direct_res.defect
        if direct_res.converged:
            direct_cost = direct_res.cost

    if shoot_cost is None and direct_cost is None:
        return ValueResult(
            S=None,
            reachable=False,
            method="none",
            control=None,
            p0=None,
            shoot_cost=None,
            direct_cost=None,
            shoot_defect=shoot_defect,
            direct_defect=direct_defect,
        )

    if shoot_cost is not None and (direct_cost is None or shoot_cost <= direct_cost):
        best = sh.solutions[0]
        winner_control = phi(sys, best.p0)
        winner_p0 = best.p0
        S = shoot_cost
    else:
        winner_control = direct_res.control
        winner_p0 = None
        S = direct_cost
    method = (
        "both"
        if (shoot_cost is not None and direct_cost is not None)
        else ("shooting" if shoot_cost is not None else "direct")
    )
    return ValueResult(
        S=S,
        reachable=True,
        method=method,
        control=winner_control,
        p0=winner_p0,
        shoot_cost=shoot_cost,
        direct_cost=direct_cost,
        shoot_defect=shoot_defect,
        direct_defect=direct_defect,
    )


# ---------------------------------------------------------------------------
# level sets


@dataclass(frozen=True)
class LevelPoint:
    endpoint: np.ndarray
    p0: np.ndarray
    cost: float
    pnorm: float
    p0proj: float
    flag: str  # sphere | front


@dataclass(frozen=True)
class LevelSetCloud:
    r: float
    points: list          # minimizing points (flag == sphere)
    front_points: list    # bracketed level crossings beaten by a cheaper control
    metadata: dict = field(default_factory=dict)

    @property
    def all_points(self) -> list:
        return sorted(
            list(self.points) + list(self.front_points),
            key=lambda p: (p.pnorm, tuple(p.endpoint)),
        )


def _directions(n: int, count: int, seed: int) -> np.ndarray:
    """Deterministic unit directions with mirror structure.

    For planar systems the grid is 4 axis directions, mirrored half-circle
    pairs, and eight families of near-axis tails with offsets decaying to
    1e-305; level sets hugging an axis are only reachable through such
    exponentially small components.  Tail offsets below about 1e-8 leave
    the norm of the direction equal to 1 in floating point, so mirrored
    pairs are exact reflections bit for bit.
    """
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        dirs = []
        if count >= 4:
            dirs += [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)]
        per_family = count // 16
        if per_family >= 1:
            exps = np.linspace(4.0, 305.0, per_family)
            for main_axis in (0, 1):
                for main_sign in (1.0, -1.0):
                    for tau_sign in (1.0, -1.0):
                        for e in exps:
                            tau = 10.0 ** (-float(e))
                            d = np.zeros(2)
                            d[main_axis] = main_sign
                            d[1 - main_axis] = tau_sign * tau
                            dirs.append(tuple(d / np.linalg.norm(d)))
        remaining = count - len(dirs)
        pairs = max(remaining // 2, 0)
        for j in range(pairs):
            th = math.pi * (j + 0.5 + 0.25 * ((seed * 29) % 2)) / pairs
            c, s = math.cos(th), math.sin(th)
            dirs.append((c, s))
            dirs.append((c, -s))
        return np.array(dirs[:count] if len(dirs) > count else dirs)
    dirs = []
    for i in range(n):
        for sign in (1.0, -1.0):
            d = np.zeros(n)
            d[i] = sign
            dirs.append(d)
    need = max(count - len(dirs), 0)
    pairs = (need + 1) // 2
    start = 20 + seed * max(pairs, 1)
    for row in range(pairs):
        g = np.array([ndtri(_halton(start + row, _PRIMES[j])) for j in range(n)])
        nrm = float(np.linalg.norm(g))
        if nrm == 0.0:
            g[0], nrm = 1.0, 1.0
        dirs.append(g / nrm)
        dirs.append(-g / nrm)
    return np.array(dirs[:count])


def _cost_on_ray(sys: AffineSystem, d: np.ndarray, s: float, nsteps: int):
    if s == 0.0:
        return sys.x0.copy(), np.zeros(sys.n), 0.0, True
    x, pT, c, ok = _flow_end(sys, s * d, nsteps)
    if not ok or not np.isfinite(c):
        return None, None, math.inf, False
    return x, pT, c, True


def level_set_sample(
    sys: AffineSystem,
    r: float,
    count: int = 256,
    level_tol: float = 1e-9,
    s_max: float = 1e6,
    grid_size: int = 48,
    seed: int = 0,
    cross_check: bool = True,
) -> LevelSetCloud:
    """Sample the level set of the value function at level r.

    Along each unit covector direction the flow cost is bracketed over a
    geometric grid of scales and every sign change is bisected down to
    |cost - r| <= level_tol * r, with the flow step count frozen per
    bracket so the bisected function is smooth.  The cross-check then
    separates sphere from wave front per point: a conjugate-point scan of
    the arc first (past-conjugate arcs never minimize), then a shoot for a
    cheaper extremal onto the same endpoint.  Beaten points are kept
    separately and excluded from the sphere cloud.
    """
    if not (r > 0.0):
        raise ValueError("level r must be positive")
    dirs = _directions(sys.n, count, seed)
    grid = np.concatenate([[0.0], np.geomspace(s_max * 1e-8, s_max, grid_size)])
    sphere = []
    front = []
    skipped_dirs = 0
    failed_roots = 0
    for d in dirs:
        costs = np.empty(len(grid))
        for i, s in enumerate(grid):
            _, _, c, ok = _cost_on_ray(sys, d, s, flow_steps(sys, s * d))
            costs[i] = c if ok else math.inf
        roots = []
        for i in range(len(grid) - 1):
            lo_c, hi_c = costs[i] - r, costs[i + 1] - r
            if lo_c == 0.0 and i == 0:
                continue
            if not ((lo_c < 0.0 <= hi_c) or (hi_c < 0.0 <= lo_c)):
                continue
            nsteps = flow_steps(sys, grid[i + 1] * d)
            lo, hi = grid[i], grid[i + 1]
            _, _, c_lo, _ = _cost_on_ray(sys, d, lo, nsteps)
            _, _, c_hi, _ = _cost_on_ray(sys, d, hi, nsteps)
            f_lo, f_hi = c_lo - r, c_hi - r
            if not ((f_lo < 0.0 <= f_hi) or (f_hi < 0.0 <= f_lo)):
                continue
            found = None
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if mid == lo or mid == hi:
                    break
                x, pT, c_mid, ok = _cost_on_ray(sys, d, mid, nsteps)
                f_mid = c_mid - r
                if ok and abs(f_mid) <= level_tol * r:
                    found = (mid, x, pT, c_mid)
                    break
                if (f_mid < 0.0) == (f_lo < 0.0):
                    lo, f_lo = mid, f_mid
                else:
                    hi, f_hi = mid, f_mid
            if found is None:
                failed_roots += 1
            else:
                roots.append(found)
        if not roots:
            skipped_dirs += 1
            continue
        for s_star, x, pT, c in roots:
            p0 = s_star * d
            point = LevelPoint(
                endpoint=x,
                p0=p0,
                cost=c,
                pnorm=float(np.linalg.norm(p0)),
                p0proj=0.5 / math.hypot(float(np.linalg.norm(pT)), 0.5),
                flag="sphere",
            )
            if cross_check and _beaten_by_cheaper(sys, point, r):
                front.append(
                    LevelPoint(
                        endpoint=point.endpoint,
                        p0=point.p0,
                        cost=point.cost,
                        pnorm=point.pnorm,
                        p0proj=point.p0proj,
                        flag="front",
                    )
                )
            else:
                sphere.append(point)
    metadata = dict(
        system=sys.name,
        T=sys.T,
        r=r,
        count=count,
        level_tol=level_tol,
        s_max=s_max,
        grid_size=grid_size,
        seed=seed,
        cross_check=cross_check,
        skipped_directions=skipped_dirs,
        failed_roots=failed_roots,
        n_sphere=len(sphere),
        n_front=len(front),
    )
    return LevelSetCloud(r=r, points=sphere, front_points=front, metadata=metadata)


def _beaten_by_cheaper(sys: AffineSystem, point: LevelPoint, r: float) -> bool:
    # Stage 1: an arc that crossed a conjugate point strictly inside (0, T)
    # cannot minimize.  The scan is exact (variational flow), cheap, and
    # equivariant under sign symmetries of the system, so mirrored clouds
    # stay mirrored bitwise.
    crossings, status = conjugate_scan(sys, point.p0)
    if crossings > 0:
        return True
    if status == "exploded":
        return False
    # Stage 2: cut points without a conjugate point (a distinct extremal
    # reaching the same endpoint cheaper).  Seeds derived from the point
    # itself keep the check equivariant; the reflection across the chord
    # to the target probes the opposite branch of the flow.
    p0 = point.p0
    seeds = [np.zeros(sys.n)] + [a * p0 for a in (0.5, 0.25, 0.1, 0.02)]
    w = point.endpoint - sys.x0
    nw = float(np.linalg.norm(w))
    if nw > 0.0:
        wh = w / nw
        refl = p0 - 2.0 * float(p0 @ wh) * wh
        seeds += [a * refl for a in (1.0, 0.3, 0.1)]
    res = shoot(
        sys,
        point.endpoint,
        seeds=seeds,
        sweep=False,
        shoot_tol=1e-10,
        max_nfev=40,
    )
    # the defect bound is far tighter than the cost margin, so a nearby
    # endpoint of a genuinely cheaper arc cannot fake a beat
    margin = 1e-5 * max(r, 1.0)
    return any(sol.cost < r - margin for sol in res.solutions)


# ---------------------------------------------------------------------------
# properness scan


@dataclass(frozen=True)
class ScanRow:
    delta: float
    target: np.ndarray
    pnorm: float
    p0proj: float
    cost: float
    found: bool


@dataclass(frozen=True)
class PropernessScan:
    A: np.ndarray
    direction: np.ndarray
    rows: list
    metadata: dict = field(default_factory=dict)


def properness_scan(
    sys: AffineSystem,
    A,
    direction,
    deltas,
    seed: int = 0,
    nseeds: int = 64,
    seed_radius: float = 10.0,
    shoot_tol: float = 1e-8,
    step_cap: float = 0.8,
    carry: int = 4,
    max_substeps: int = 400,
) -> PropernessScan:
    """Track minimal covector norms as targets approach A along a ray.

    The largest offset gets a full seed sweep.  Smaller offsets are reached
    by continuation in log(offset): per-component log-sensitivities of the
    tracked solution, measured over the last accepted hop, choose the next
    hop length and extrapolate the warm-start seed multiplicatively.
    Branches whose covector components collapse or blow up exponentially
    as the offset shrinks are followed this way far outside any fixed seed
    ball, with the hop length contracting automatically as the branch
    stiffens.
    """
    A = np.asarray(A, dtype=float).reshape(-1)
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if A.shape != (sys.n,) or direction.shape != (sys.n,):
        raise ValueError(f"A and direction must have length {sys.n}")
    deltas = [float(d) for d in deltas]
    if any(d <= 0.0 for d in deltas):
        raise ValueError("offsets must be positive")
    order = sorted(set(deltas), reverse=True)

    def by_norm(sols):
        return sorted(sols, key=lambda s: (float(np.linalg.norm(s.p0)), tuple(s.p0)))

    def record(dlt, sol):
        if sol is None:
            return ScanRow(
                delta=dlt,
                target=A + dlt * direction,
                pnorm=math.nan,
                p0proj=math.nan,
                cost=math.nan,
                found=False,
            )
        return ScanRow(
            delta=dlt,
            target=A + dlt * direction,
            pnorm=float(np.linalg.norm(sol.p0)),
            p0proj=sol.p0proj,
            cost=sol.cost,
            found=True,
        )

    results = {}
    hist: list[tuple[float, np.ndarray]] = []
    warm: list[np.ndarray] = []
    substeps = 0
    for pos, dlt in enumerate(order):
        if pos == 0 or not hist:
            res = shoot(
                sys,
                A + dlt * direction,
                shoot_tol=shoot_tol,
                seed=seed,
                nseeds=nseeds,
                seed_radius=seed_radius,
            )
            sols = by_norm(res.solutions)
            if sols:
                hist = [(dlt, sols[0].p0)]
                warm = [s.p0 for s in sols[:carry]]
            results[dlt] = record(dlt, sols[0] if sols else None)
            continue
        fails = 0
        sol_at = None
        while hist[-1][0] > dlt and substeps < max_substeps:
            d_cur, p_cur = hist[-1]
            kap = np.zeros(sys.n)
            if len(hist) >= 2:
                d_pre, p_pre = hist[-2]
                dl = math.log(d_cur / d_pre)
                if dl != 0.0:
                    for i in range(sys.n):
                        a, b = p_pre[i], p_cur[i]
                        if a != 0.0 and b != 0.0 and (a > 0.0) == (b > 0.0):
                            kap[i] = math.log(abs(b) / abs(a)) / dl
            kmax = float(np.max(np.abs(kap))) if kap.size else 0.0
            span = math.log(d_cur / dlt)
            step = min(span, step_cap / max(kmax, 1.0)) / (2.0**fails)
            d_new = dlt if step >= span - 1e-12 else d_cur * math.exp(-step)
            ratio = d_new / d_cur
            pred = p_cur.copy()
            for i in range(sys.n):
                if kap[i] != 0.0 and p_cur[i] != 0.0:
                    pred[i] = math.copysign(abs(p_cur[i]) * ratio ** kap[i], p_cur[i])
            res = shoot(
                sys,
                A + d_new * direction,
                seeds=[pred] + warm,
                sweep=False,
                shoot_tol=shoot_tol,
                max_nfev=120,
            )
            substeps += 1
            sols = by_norm(res.solutions)
            if sols:
                hist.append((d_new, sols[0].p0))
                warm = [s.p0 for s in sols[:carry]]
                fails = 0
                if d_new == dlt:
                    sol_at = sols[0]
            else:
                fails += 1
                if fails > 6:
                    break
        results[dlt] = record(dlt, sol_at)
    rows = [results[d] for d in deltas]
    metadata = dict(
        system=sys.name,
        T=sys.T,
        seed=seed,
        nseeds=nseeds,
        seed_radius=seed_radius,
        step_cap=step_cap,
        carry=carry,
        substeps=substeps,
    )
    return PropernessScan(A=A, direction=direction, rows=rows, metadata=metadata)


# ---------------------------------------------------------------------------
# tangency diagnostics


@dataclass(frozen=True)
class TangencyWindow:
    window: float
    count: int
    max_angle: float  # radians; NaN when the window is empty


@dataclass(frozen=True)
class TangencyReport:
    A: np.ndarray
    normal: np.ndarray
    windows: list
    slope: float
    intercept: float
    slope_points: int


def tangency_fit(
    cloud: LevelSetCloud,
    A,
    H,
    fit_window: float = 0.2,
    shrink: float = 2.0,
    nwindows: int = 5,
) -> TangencyReport:
    """Angles between cloud chords from A and the hyperplane normal to H.

    H is the normal vector of the hyperplane the chords are compared
    against.  Windows shrink geometrically from fit_window; each reports
    the maximum chord angle among sphere points within that distance of A
    (NaN when no point is that close, which happens once the level set
    thins below floating-point resolution near an abnormal target).  The
    slope is a log-log regression of the normal offset against the
    in-plane distance over the second window: the outermost shell of the
    level set need not be graph-like over the hyperplane, the asymptotic
    law lives close to A.
    """
    A = np.asarray(A, dtype=float).reshape(-1)
    H = np.asarray(H, dtype=float).reshape(-1)
    nH = float(np.linalg.norm(H))
    if nH == 0.0:
        raise ValueError("hyperplane normal must be nonzero")
    Hhat = H / nH
    pts = np.array([p.endpoint for p in cloud.points]) if cloud.points else np.empty((0, len(A)))
    windows = []
    slope = math.nan
    intercept = math.nan
    slope_pts = 0
    if len(pts):
        rel = pts - A
        dist = np.linalg.norm(rel, axis=1)
        off = rel @ Hhat
        inplane = np.linalg.norm(rel - np.outer(off, Hhat), axis=1)
        ok = dist > 0.0
        angles = np.full(len(pts), math.nan)
        angles[ok] = np.arcsin(np.clip(np.abs(off[ok]) / dist[ok], 0.0, 1.0))
        for i in range(nwindows):
            w = fit_window / shrink**i
            sel = ok & (dist <= w)
            windows.append(
                TangencyWindow(
                    window=w,
                    count=int(sel.sum()),
                    max_angle=float(np.max(angles[sel])) if sel.any() else math.nan,
                )
            )
        fit_sel = ok & (dist <= fit_window / shrink) & (np.abs(off) > 0.0) & (inplane > 0.0)
        slope_pts = int(fit_sel.sum())
        if slope_pts >= 2:
            coef = np.polyfit(np.log(inplane[fit_sel]), np.log(np.abs(off[fit_sel])), 1)
            slope, intercept = float(coef[0]), float(coef[1])
    else:
        for i in range(nwindows):
            windows.append(
                TangencyWindow(window=fit_window / shrink**i, count=0, max_angle=math.nan)
            )
    return TangencyReport(
        A=A,
        normal=Hhat,
        windows=windows,
        slope=slope,
        intercept=intercept,
        slope_points=slope_pts,
    )
