"""Discrete action functionals, analytic gradients, and boundary-value
minimization.

Paths are uniform time grids with one configuration lift per node. The
action uses midpoint quadrature, except that the linear-in-velocity term
is summed in telescoped form, so the value at parameter c equals the value
at c = 0 minus c times the mean displacement, bit-exactly. Consequently a
fixed-endpoint minimizer does not depend on c, which the unit-time kernel
exploits to serve every c from one set of solves.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .dynamics import apriori_bounds
from .errors import KernelNotBuiltError, ValidationError
from .model import ModelParams, force, mean_v, mean_w, potential_hessian
from .torus import Configuration, ConfigurationClass, cyclic_relabel
from .util import stable_hash

GRAD_TOL = 1e-8
DEFAULT_LEVELS = (16, 32, 64)
TIE_TOL = 1e-12


@dataclass(frozen=True)
class DiscretePath:
    """Uniform time grid with one n-particle lift per node."""

    times: np.ndarray
    nodes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2 or times.ndim != 1 or nodes.shape[0] != times.size:
            raise ValidationError("need times (m+1,) and nodes (m+1, n)")
        if times.size < 2:
            raise ValidationError("a path needs at least two nodes")
        dts = np.diff(times)
        if np.ptp(dts) > 1e-12 * max(1.0, abs(times[-1] - times[0])):
            raise ValidationError("time grid must be uniform")
        for row in (nodes[0], nodes[-1]):
            Configuration(np.sort(row), wide=True)  # endpoint sanity
        times.setflags(write=False)
        nodes.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "nodes", nodes)

    @property
    def m(self) -> int:
        return self.times.size - 1

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / self.m)

    def velocities(self) -> np.ndarray:
        """Finite-difference velocities on the m midpoints."""
        return np.diff(self.nodes, axis=0) / self.dt

    def midpoints(self) -> tuple[np.ndarray, np.ndarray]:
        tm = 0.5 * (self.times[:-1] + self.times[1:])
        qm = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        return tm, qm

    def monotone_defect(self) -> float:
        """Most negative particle gap over all nodes (0 for n = 1)."""
        if self.n == 1:
            return 0.0
        return float(np.diff(self.nodes, axis=1).min())

    def second_differences(self) -> np.ndarray:
        """Interior second differences / dt^2, one row per interior node."""
        return np.diff(self.nodes, 2, axis=0) / self.dt**2


@dataclass(frozen=True)
class BvpResult:
    path: DiscretePath
    action: float
    shift: np.ndarray
    converged: bool
    grad_norm: float
    action_richardson: float = float("nan")
    """Grid-limit estimate from the two finest levels; ``action`` itself
    keeps the final-grid quadrature so kernel comparisons stay exact."""


# -- batched action and gradient --------------------------------------------


def _action_batch(paths: np.ndarray, t0: float, dt: float, params: ModelParams):
    """Actions of a batch of paths, shape (P, m+1, n) -> (P,).

    The c-linear term is added last in telescoped form, so actions at
    different c differ exactly by c times the mean displacement.
    """
    pot = params.potentials
    v = np.diff(paths, axis=1) / dt
    kin = 0.5 * dt * np.mean(v**2, axis=2).sum(axis=1)
    m = paths.shape[1] - 1
    tm = t0 + dt * (np.arange(m) + 0.5)
    qm = 0.5 * (paths[:, :-1] + paths[:, 1:])
    potsum = mean_v(pot, tm[None, :], qm) + mean_w(pot, qm)
    base = kin - dt * potsum.sum(axis=1)
    return base - params.c * (paths[:, -1].mean(axis=1) - paths[:, 0].mean(axis=1))


def _action_grad_batch(paths: np.ndarray, t0: float, dt: float, params: ModelParams):
    """Actions and full per-node gradients for a batch of paths."""
    pot = params.potentials
    P, mp1, n = paths.shape
    m = mp1 - 1
    v = np.diff(paths, axis=1) / dt
    tm = t0 + dt * (np.arange(m) + 0.5)
    qm = 0.5 * (paths[:, :-1] + paths[:, 1:])
    potsum = mean_v(pot, tm[None, :], qm) + mean_w(pot, qm)
    base = 0.5 * dt * np.mean(v**2, axis=2).sum(axis=1) - dt * potsum.sum(axis=1)
    act = base - params.c * (paths[:, -1].mean(axis=1) - paths[:, 0].mean(axis=1))
    fmid = force(pot, tm[None, :], qm)
    g = np.zeros_like(paths)
    g[:, 1:] += v / n
    g[:, :-1] -= v / n
    g[:, 0] += params.c / n
    g[:, -1] -= params.c / n
    g[:, :-1] += (0.5 * dt / n) * fmid
    g[:, 1:] += (0.5 * dt / n) * fmid
    return act, g


def discrete_action(path: DiscretePath, params: ModelParams) -> float:
    """Midpoint-quadrature action of one path."""
    return float(_action_batch(path.nodes[None], float(path.times[0]), path.dt, params)[0])


def action_gradient(path: DiscretePath, params: ModelParams) -> np.ndarray:
    """Exact gradient of the discrete action with respect to every node."""
    _, g = _action_grad_batch(path.nodes[None], float(path.times[0]), path.dt, params)
    return g[0]


# -- boundary-value solver ---------------------------------------------------


@dataclass
class BatchSolution:
    paths: np.ndarray
    actions: np.ndarray
    grad_norms: np.ndarray
    converged: np.ndarray
    actions_richardson: np.ndarray | None = None


def _resample(paths: np.ndarray, m_new: int) -> np.ndarray:
    """Linear time reinterpolation of a batch onto a finer uniform grid."""
    P, mp1, n = paths.shape
    m_old = mp1 - 1
    pos = np.arange(m_new + 1) * (m_old / m_new)
    i0 = np.minimum(pos.astype(int), m_old - 1)
    w = (pos - i0)[None, :, None]
    return (1.0 - w) * paths[:, i0] + w * paths[:, i0 + 1]


def _lbfgs_batch(paths, t0, dt, params, gtol, maxiter):
    """Minimize the summed action over interior nodes of a batch.

    The objective is separable across paths, so joint L-BFGS descent
    reaches a state where every path satisfies its own discrete
    Euler-Lagrange system.
    """
    P, mp1, n = paths.shape
    if mp1 <= 2:
        return paths
    shape = (P, mp1 - 2, n)

    def fun(x):
        paths[:, 1:-1] = x.reshape(shape)
        act, g = _action_grad_batch(paths, t0, dt, params)
        return act.sum(), g[:, 1:-1].reshape(-1)

    x0 = paths[:, 1:-1].reshape(-1).copy()
    res = _scipy_minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": maxiter, "maxcor": 12, "ftol": 1e-18,
                 "gtol": min(0.1 * gtol, 1e-9)},
    )
    paths[:, 1:-1] = res.x.reshape(shape)
    return paths


def _interior_hessian(nodes: np.ndarray, t0: float, dt: float,
                      params: ModelParams) -> np.ndarray:
    """Dense Hessian of the action with respect to interior nodes.

    Block-tridiagonal in time with n x n particle blocks; used by the
    Newton polish once quasi-Newton descent stalls at the line-search
    noise floor.
    """
    mp1, n = nodes.shape
    m = mp1 - 1
    nvar = (m - 1) * n
    h = np.zeros((nvar, nvar))
    eye = np.eye(n)
    tm = t0 + dt * (np.arange(m) + 0.5)
    qm = 0.5 * (nodes[:-1] + nodes[1:])
    mid_h = [potential_hessian(params.potentials, float(tm[k]), qm[k]) for k in range(m)]
    for j in range(1, m):
        r = (j - 1) * n
        diag = (2.0 / (n * dt)) * eye - (dt / 4.0) * (mid_h[j - 1] + mid_h[j])
        h[r:r + n, r:r + n] += diag
        if j < m - 1:
            off = (-1.0 / (n * dt)) * eye - (dt / 4.0) * mid_h[j]
            h[r:r + n, r + n:r + 2 * n] += off
            h[r + n:r + 2 * n, r:r + n] += off.T
    return h


def _newton_polish(nodes: np.ndarray, t0: float, dt: float, params: ModelParams,
                   gtol: float, max_steps: int = 12) -> np.ndarray:
    """Newton iterations on the discrete Euler-Lagrange system for one
    path; steps are only accepted while the gradient norm decreases."""
    mp1, n = nodes.shape
    if mp1 <= 2:
        return nodes
    cur = nodes.copy()
    _, g = _action_grad_batch(cur[None], t0, dt, params)
    gn = np.abs(g[0, 1:-1]).max()
    for _ in range(max_steps):
        if gn <= 1e-14:
            break
        hess = _interior_hessian(cur, t0, dt, params)
        try:
            step = np.linalg.solve(hess, g[0, 1:-1].reshape(-1))
        except np.linalg.LinAlgError:
            break
        trial = cur.copy()
        trial[1:-1] -= step.reshape(mp1 - 2, n)
        _, g_t = _action_grad_batch(trial[None], t0, dt, params)
        gn_t = np.abs(g_t[0, 1:-1]).max()
        if not np.isfinite(gn_t) or gn_t >= gn:
            break
        cur, g, gn = trial, g_t, gn_t
    return cur


def solve_fixed_endpoints(starts, ends, t0, t1, params,
                          levels=DEFAULT_LEVELS, gtol=GRAD_TOL,
                          maxiter=500) -> BatchSolution:
    """Fixed-endpoint action minimization for a batch of endpoint pairs.

    Quasi-Newton descent from straight-line initial paths, refined on
    doubled time grids; per-path convergence is judged by the max norm of
    the interior gradient.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    span = t1 - t0
    if span <= 0:
        raise ValidationError("time span must be positive")
    P, n = starts.shape
    if span < 4.0 / max(levels):
        # degenerate span: a single straight segment
        paths = np.stack([starts, ends], axis=1)
        acts = _action_batch(paths, t0, span, params)
        return BatchSolution(paths, acts, np.zeros(P), np.ones(P, bool))
    ms = sorted({max(1, round(lvl * span)) for lvl in levels})
    frac = np.linspace(0.0, 1.0, ms[0] + 1)[None, :, None]
    paths = (1.0 - frac) * starts[:, None, :] + frac * ends[:, None, :]
    acts_prev = None
    for k, m in enumerate(ms):
        if k:
            acts_prev = _action_batch(paths, t0, span / ms[k - 1], params)
            paths = _resample(paths, m)
        dt = span / m
        paths = _lbfgs_batch(paths, t0, dt, params, gtol, maxiter)
    dt = span / ms[-1]
    acts, g = _action_grad_batch(paths, t0, dt, params)
    gnorm = np.abs(g[:, 1:-1]).max(axis=(1, 2)) if paths.shape[1] > 2 else np.zeros(P)
    bad = np.flatnonzero(gnorm > gtol)
    for p in bad:
        paths[p] = _newton_polish(paths[p], t0, dt, params, gtol)
    if bad.size:
        acts, g = _action_grad_batch(paths, t0, dt, params)
        gnorm = np.abs(g[:, 1:-1]).max(axis=(1, 2))
    if acts_prev is not None and ms[-1] == 2 * ms[-2]:
        rich = acts + (acts - acts_prev) / 3.0
    else:
        rich = acts.copy()
    return BatchSolution(paths, acts, gnorm, gnorm <= gtol, rich)


def integer_shift_candidates(mb: np.ndarray, window: int,
                             max_product: int = 25_000):
    """Integer shift vectors k keeping ``mb + k`` sorted with spread <= 3.

    Crossed endpoints never beat their sorted rearrangement for this
    symmetric Lagrangian, so the enumeration is restricted to
    monotone-compatible vectors. When the raw product enumeration would
    exceed ``max_product`` candidates, only suffix bumps combined with
    common shifts are enumerated.
    """
    n = mb.size
    out = []
    if (2 * window + 1) ** n <= max_product:
        for k in itertools.product(range(-window, window + 1), repeat=n):
            kk = np.array(k, dtype=float)
            pts = mb + kk
            if np.any(np.diff(pts) < -1e-12):
                continue
            if pts[-1] - pts[0] > 3.0 + 1e-12:
                continue
            out.append(np.array(k, dtype=int))
    else:
        for r in range(n):
            bump = np.zeros(n, dtype=int)
            if r:
                bump[-r:] = 1  # advance the top r particles one extra turn
            for z in range(-window, window + 1):
                k = bump + z
                pts = mb + k
                if np.all(np.diff(pts) >= -1e-12) and pts[-1] - pts[0] <= 3.0 + 1e-12:
                    out.append(k.copy())
    # deterministic preference order: small shifts first
    out.sort(key=lambda k: (int(np.abs(k).sum()), tuple(np.abs(k)), tuple(k)))
    return out


def _kinetic_lower_bounds(start, ends, span, c, pot_sup):
    delta = ends - start[None, :]
    kin = 0.5 * np.mean(delta**2, axis=1) / span
    return kin - c * delta.mean(axis=1) - pot_sup * span


def minimize_bvp(ma: Configuration, mb: Configuration, t_span, params: ModelParams,
                 allow_integer_shifts: bool = False,
                 levels=DEFAULT_LEVELS, gtol=GRAD_TOL) -> BvpResult:
    """Least-action path between two configurations.

    With ``allow_integer_shifts`` the endpoint is minimized over integer
    shift vectors inside the window given by the a priori velocity bound;
    candidates are pre-screened by a kinetic lower bound against the best
    straight-line action. Ties between equal-action shifts resolve to the
    smallest shift in (|k|-sum, |k|, k) lexicographic order.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    span = t1 - t0
    if span <= 0:
        raise ValidationError("time span must have positive length")
    if ma.n != mb.n:
        raise ValidationError("endpoint particle counts differ")
    if allow_integer_shifts:
        r_c, _ = apriori_bounds(params)
        window = math.ceil(r_c * span) + 1
        cands = integer_shift_candidates(mb.points, window)
    else:
        cands = [np.zeros(ma.n, dtype=int)]
    ends = np.stack([mb.points + k for k in cands])
    if len(cands) > 1:
        starts = np.repeat(ma.points[None, :], len(cands), axis=0)
        frac = np.linspace(0.0, 1.0, 17)[None, :, None]
        straight = (1.0 - frac) * starts[:, None, :] + frac * ends[:, None, :]
        s_act = _action_batch(straight, t0, span / 16, params)
        pot_sup = params.potentials.v_sup() + params.potentials.w_sup()
        lb = _kinetic_lower_bounds(ma.points, ends, span, params.c, pot_sup)
        keep = np.flatnonzero(lb <= s_act.min() + 1e-9)
        cands = [cands[i] for i in keep]
        ends = ends[keep]
    starts = np.repeat(ma.points[None, :], len(cands), axis=0)
    sol = solve_fixed_endpoints(starts, ends, t0, t1, params, levels, gtol)
    best = int(np.argmin(sol.actions))
    # first candidate (in preference order) within tie tolerance wins
    for i in range(len(cands)):
        if sol.actions[i] <= sol.actions[best] + TIE_TOL:
            best = i
            break
    m = sol.paths.shape[1] - 1
    path = DiscretePath(times=t0 + (span / m) * np.arange(m + 1), nodes=sol.paths[best])
    rich = sol.actions_richardson
    return BvpResult(
        path=path,
        action=float(sol.actions[best]),
        shift=cands[best],
        converged=bool(sol.converged[best]),
        grad_norm=float(sol.grad_norms[best]),
        action_richardson=float(rich[best]) if rich is not None else float(sol.actions[best]),
    )


# -- unit-time kernel between configuration classes --------------------------


@dataclass
class KernelEntry:
    value: float
    converged: bool
    relabel: int
    shift: int


@dataclass
class KernelTable:
    """Unit-time minimal actions between grid classes, stored per
    candidate representative so one build serves every c.

    ``act0[i, j, s]`` is the c = 0 action of the minimizer from node i to
    the s-th representative of node j (+inf where pruned); ``disp`` the
    mean displacement. The c-assembly is
    ``K_c = min_s (act0 - c * disp)``.
    """

    n: int
    cand_r: np.ndarray
    cand_z: np.ndarray
    act0: np.ndarray
    disp: np.ndarray
    conv: np.ndarray
    c_values: np.ndarray
    key: str = ""

    def assemble(self, c: float):
        """Kernel matrix at parameter c plus winning candidate indices."""
        if not np.any(np.isclose(self.c_values, c, atol=1e-9)):
            raise KernelNotBuiltError(
                f"kernel was built for c in {np.round(self.c_values, 6).tolist()}, not {c}"
            )
        vals = self.act0 - c * self.disp
        best = np.argmin(vals, axis=2)
        k = np.take_along_axis(vals, best[..., None], axis=2)[..., 0]
        ok = np.take_along_axis(self.conv, best[..., None], axis=2)[..., 0]
        return k, best, ok

    def candidate_endpoint(self, node_points: np.ndarray, s: int) -> np.ndarray:
        return cyclic_relabel(node_points, int(self.cand_r[s])) + int(self.cand_z[s])


def _class_points(nodes) -> np.ndarray:
    return np.stack([nd.canonical.points for nd in nodes])


def build_kernel(nodes, params: ModelParams, c_values,
                 levels=DEFAULT_LEVELS, gtol=GRAD_TOL,
                 cache_dir=None) -> KernelTable:
    """All-pairs unit-time kernel over a list of configuration classes.

    Candidate representatives of the target class are its cyclic relabels
    combined with common integer shifts inside the a priori window taken
    over the requested c values; a kinetic lower bound against the best
    straight-line action prunes candidates before the batched solve.
    """
    c_values = np.atleast_1d(np.asarray(c_values, dtype=float))
    pts = _class_points(nodes)
    N, n = pts.shape
    window = 1
    for c in c_values:
        r_c, _ = apriori_bounds(params.with_c(float(c)))
        window = max(window, math.ceil(r_c) + 1)
    cand_r = np.repeat(np.arange(n), 2 * window + 1)
    cand_z = np.tile(np.arange(-window, window + 1), n)
    key = None
    if cache_dir is not None:
        key = stable_hash({
            "model": {k: v for k, v in params.to_config().items() if k != "c"},
            "nodes": [nd.key() for nd in nodes],
            "levels": list(levels), "gtol": gtol, "window": window,
            "c_values": np.round(c_values, 9).tolist(),
        })
        cached = _load_kernel(cache_dir, key)
        if cached is not None:
            return cached
    S = cand_r.size
    reps = np.empty((N, S, n))
    for s in range(S):
        for j in range(N):
            reps[j, s] = cyclic_relabel(pts[j], int(cand_r[s])) + cand_z[s]
    # disp[i, j, s] = mean displacement from node i to the s-th rep of node j
    disp = reps.mean(axis=2)[None, :, :] - pts.mean(axis=1)[:, None, None]

    # straight-line screening
    frac = np.linspace(0.0, 1.0, 17)
    starts_full = np.broadcast_to(pts[:, None, None, :], (N, N, S, n))
    ends_full = np.broadcast_to(reps[None, :, :, :], (N, N, S, n))
    flat_starts = starts_full.reshape(-1, n)
    flat_ends = ends_full.reshape(-1, n)
    straight = (1 - frac[None, :, None]) * flat_starts[:, None, :] \
        + frac[None, :, None] * flat_ends[:, None, :]
    s_act0 = _action_batch(straight, 0.0, 1.0 / 16, params.with_c(0.0)).reshape(N, N, S)
    pot_sup = params.potentials.v_sup() + params.potentials.w_sup()
    kin_lb = 0.5 * np.mean((flat_ends - flat_starts) ** 2, axis=1).reshape(N, N, S)
    keep = np.zeros((N, N, S), dtype=bool)
    for c in c_values:
        lb_c = kin_lb - c * disp - pot_sup
        ub_c = (s_act0 - c * disp).min(axis=2)
        keep |= lb_c <= ub_c[..., None] + 1e-9
    act0 = np.full((N, N, S), np.inf)
    conv = np.zeros((N, N, S), dtype=bool)
    idx = np.flatnonzero(keep.reshape(-1))
    sol = solve_fixed_endpoints(
        flat_starts[idx], flat_ends[idx], 0.0, 1.0, params.with_c(0.0), levels, gtol
    )
    act0.reshape(-1)[idx] = sol.actions
    conv.reshape(-1)[idx] = sol.converged
    table = KernelTable(n=n, cand_r=cand_r, cand_z=cand_z, act0=act0,
                        disp=disp, conv=conv, c_values=c_values, key=key or "")
    if cache_dir is not None:
        _store_kernel(cache_dir, key, table)
    return table


def h1_kernel(a: ConfigurationClass, b: ConfigurationClass, params: ModelParams,
              levels=DEFAULT_LEVELS, gtol=GRAD_TOL) -> KernelEntry:
    """Unit-time minimal action between two classes (without the +alpha
    normalization, which consumers add)."""
    table = build_kernel([a, b], params, [params.c], levels, gtol)
    k, best, ok = table.assemble(params.c)
    s = int(best[0, 1])
    return KernelEntry(value=float(k[0, 1]), converged=bool(ok[0, 1]),
                       relabel=int(table.cand_r[s]), shift=int(table.cand_z[s]))


def kernel_segment(table: KernelTable, nodes, params: ModelParams,
                   i: int, j: int, levels=DEFAULT_LEVELS, gtol=GRAD_TOL) -> BvpResult:
    """Re-solve the winning representative of kernel entry (i, j) at the
    table's stored resolution, returning the full path."""
    _, best, _ = table.assemble(params.c)
    s = int(best[i, j])
    start = nodes[i].canonical.points
    end = table.candidate_endpoint(nodes[j].canonical.points, s)
    sol = solve_fixed_endpoints(start[None], end[None], 0.0, 1.0, params.with_c(0.0),
                                levels, gtol)
    m = sol.paths.shape[1] - 1
    path = DiscretePath(times=np.arange(m + 1) / m, nodes=sol.paths[0])
    act_c = float(sol.actions[0]) - params.c * float(end.mean() - start.mean())
    return BvpResult(path=path, action=act_c,
                     shift=np.full(table.n, int(table.cand_z[s])),
                     converged=bool(sol.converged[0]),
                     grad_norm=float(sol.grad_norms[0]))


# -- disk cache ---------------------------------------------------------------


def _kernel_paths(cache_dir, key):
    base = os.path.join(cache_dir, key[:24])
    return base + ".json", base + "_act0.bin", base + "_disp.bin", base + "_conv.bin"


def _store_kernel(cache_dir, key, table: KernelTable):
    os.makedirs(cache_dir, exist_ok=True)
    meta_p, act_p, disp_p, conv_p = _kernel_paths(cache_dir, key)
    table.act0.astype(np.float64).tofile(act_p)
    table.disp.astype(np.float64).tofile(disp_p)
    table.conv.astype(np.uint8).tofile(conv_p)
    meta = {
        "key": key, "n": table.n, "shape": list(table.act0.shape),
        "cand_r": table.cand_r.tolist(), "cand_z": table.cand_z.tolist(),
        "c_values": table.c_values.tolist(),
    }
    with open(meta_p, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def _load_kernel(cache_dir, key):
    meta_p, act_p, disp_p, conv_p = _kernel_paths(cache_dir, key)
    if not all(os.path.exists(p) for p in (meta_p, act_p, disp_p, conv_p)):
        return None
    with open(meta_p, encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("key") != key:
        return None
    shape = tuple(meta["shape"])
    return KernelTable(
        n=meta["n"],
        cand_r=np.array(meta["cand_r"], dtype=int),
        cand_z=np.array(meta["cand_z"], dtype=int),
        act0=np.fromfile(act_p, dtype=np.float64).reshape(shape),
        disp=np.fromfile(disp_p, dtype=np.float64).reshape(shape),
        conv=np.fromfile(conv_p, dtype=np.uint8).reshape(shape).astype(bool),
        c_values=np.array(meta["c_values"], dtype=float),
        key=key,
    )
