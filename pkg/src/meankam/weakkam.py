"""Backward/forward value-function sweeps on configuration-class grids,
the additive eigenvalue alpha(c), conjugate fixed-point pairs, calibrated
curves, and the regularity diagnostics of the value function.

The backward sweep is a min-plus product with the unit-time kernel; its
normalized increments bracket -alpha(c). Grid value iteration is meant for
n in {1, 2, 3}; for larger n use ``alpha_from_orbit``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .action import (
    DiscretePath,
    KernelTable,
    _action_batch,
    minimize_bvp,
    kernel_segment,
    solve_fixed_endpoints,
)
from .errors import ValidationError
from .model import ModelParams, force, mean_v, mean_w
from .torus import (
    Configuration,
    ConfigurationClass,
    align_lift,
    canonicalize,
    cyclic_relabel,
    dist_S,
)

SWEEP_TOL = 1e-8
MAX_SWEEPS = 10_000


# -- grids -------------------------------------------------------------------


def _gap_compositions(total: int, parts: int):
    """Positive integer compositions of ``total`` into ``parts`` parts."""
    if parts == 1:
        yield (total,)
        return
    for head in range(1, total - parts + 2):
        for rest in _gap_compositions(total - head, parts - 1):
            yield (head,) + rest


@dataclass
class GridSpec:
    """Finite set of canonical configuration classes in gap coordinates."""

    n: int
    base_res: int
    gap_res: int
    nodes: list
    points: np.ndarray
    _dist: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.nodes)

    def index_of(self, cls: ConfigurationClass) -> int:
        key = cls.key()
        for i, nd in enumerate(self.nodes):
            if nd.key() == key:
                return i
        raise KeyError("class is not a grid node")

    def nearest(self, cls: ConfigurationClass) -> tuple[int, float]:
        ds = [dist_S(cls.canonical, nd.canonical) for nd in self.nodes]
        i = int(np.argmin(ds))
        return i, float(ds[i])

    def pairwise_dist(self) -> np.ndarray:
        if self._dist is None:
            N = self.size
            d = np.zeros((N, N))
            for i in range(N):
                for j in range(i + 1, N):
                    d[i, j] = d[j, i] = dist_S(
                        self.nodes[i].canonical, self.nodes[j].canonical
                    )
            self._dist = d
        return self._dist

    def spacing(self) -> float:
        """Largest nearest-neighbor distance; the snapping radius."""
        d = self.pairwise_dist() + np.diag(np.full(self.size, np.inf))
        return float(d.min(axis=1).max())


def build_grid(n: int, base_res: int, gap_res: int | None = None) -> GridSpec:
    """Product grid over base point and gap simplex, canonicalized and
    de-duplicated. Value iteration is intended for n <= 3."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if gap_res is None:
        gap_res = base_res
    seen = {}
    if n == 1:
        for i in range(base_res):
            cls = canonicalize(Configuration(np.array([i / base_res])))
            seen.setdefault(cls.key(), cls)
    else:
        for comp in _gap_compositions(gap_res, n):
            gaps = np.array(comp, dtype=float) / gap_res
            offsets = np.concatenate(([0.0], np.cumsum(gaps)[:-1]))
            for i in range(base_res):
                pts = i / base_res + offsets
                cls = canonicalize(Configuration(pts))
                seen.setdefault(cls.key(), cls)
    nodes = [seen[k] for k in sorted(seen)]
    points = np.stack([nd.canonical.points for nd in nodes])
    return GridSpec(n=n, base_res=base_res, gap_res=gap_res, nodes=nodes, points=points)


# -- value tables and sweeps ---------------------------------------------------


@dataclass
class ValueTable:
    grid: GridSpec
    values: np.ndarray
    c: float
    alpha: float = float("nan")
    alpha_bracket: tuple = (float("nan"), float("nan"))
    residual: float = float("nan")
    converged: bool = False
    sweeps: int = 0

    def value_at(self, cls: ConfigurationClass) -> float:
        """Exact at canonical nodes (hence at every representative of a
        node's class); nearest-node lookup otherwise."""
        try:
            return float(self.values[self.grid.index_of(cls)])
        except KeyError:
            i, _ = self.grid.nearest(cls)
            return float(self.values[i])

    def fitted_lipschitz(self) -> float:
        d = self.grid.pairwise_dist()
        iu = np.triu_indices(self.grid.size, k=1)
        dd = d[iu]
        dv = np.abs(self.values[:, None] - self.values[None, :])[iu]
        mask = dd > 1e-9
        return float((dv[mask] / dd[mask]).max())


def lax_oleinik_backward(table: ValueTable, kernel: np.ndarray):
    """One backward sweep: U'(B) = min_A [U(A) + k(A, B)] (Jacobi, all
    updates from the old table). Returns the swept table and increments."""
    new_vals = (table.values[:, None] + kernel).min(axis=0)
    inc = new_vals - table.values
    return replace(table, values=new_vals), inc


def lax_oleinik_forward(table: ValueTable, kernel: np.ndarray):
    """One forward sweep: U'(A) = max_B [U(B) - k(A, B)]."""
    new_vals = (table.values[None, :] - kernel).max(axis=1)
    inc = new_vals - table.values
    return replace(table, values=new_vals), inc


def solve_alpha(params: ModelParams, grid: GridSpec, ktable: KernelTable,
                tol: float = SWEEP_TOL, max_sweeps: int = MAX_SWEEPS) -> ValueTable:
    """Backward fixed point and effective Hamiltonian.

    Iterates U <- (backward sweep) - max(increments) until the increment
    oscillation falls below tol; alpha(c) is minus the converged increment,
    with the bracket [-max inc, -min inc] reported. Non-convergence is
    flagged, not raised.
    """
    kernel, _, kconv = ktable.assemble(params.c)
    table = ValueTable(grid=grid, values=np.zeros(grid.size), c=params.c)
    lo = hi = math.nan
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        swept, inc = lax_oleinik_backward(table, kernel)
        lo, hi = float(inc.min()), float(inc.max())
        table = replace(swept, values=swept.values - hi)
        if hi - lo < tol:
            break
    values = table.values - table.values.min()
    alpha = -0.5 * (lo + hi)
    converged = (hi - lo < tol) and bool(kconv.all())
    return ValueTable(
        grid=grid, values=values, c=params.c, alpha=alpha,
        alpha_bracket=(-hi, -lo), residual=hi - lo,
        converged=converged, sweeps=sweeps,
    )


def solve_conjugate(minus: ValueTable, ktable: KernelTable, params: ModelParams,
                    tol: float = SWEEP_TOL, max_sweeps: int = MAX_SWEEPS) -> ValueTable:
    """Forward fixed point started from the backward one.

    The returned table is pinned by the additive constant that makes
    max(U+ - U-) = 0, so U+ <= U- pointwise with equality attained on the
    detected equality nodes.
    """
    kernel, _, _ = ktable.assemble(params.c)
    vals = minus.values.copy()
    span = math.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        new_vals = (vals[None, :] - kernel).max(axis=1) - minus.alpha
        inc = new_vals - vals
        vals = new_vals - inc.max()
        span = float(inc.max() - inc.min())
        if span < tol:
            break
    vals = vals - (vals - minus.values).max()
    return ValueTable(
        grid=minus.grid, values=vals, c=minus.c, alpha=minus.alpha,
        alpha_bracket=minus.alpha_bracket, residual=span,
        converged=span < tol, sweeps=sweeps,
    )


def equality_nodes(minus: ValueTable, plus: ValueTable, tol: float = 1e-4) -> np.ndarray:
    """Indices where the conjugate pair touches (U- - U+ < tol)."""
    return np.flatnonzero(minus.values - plus.values < tol)


# -- calibrated curves ---------------------------------------------------------


@dataclass
class CalibratedCurve:
    path: DiscretePath
    node_chain: list
    defect: float
    converged: bool

    def end_velocity(self) -> np.ndarray:
        """One-sided second-order velocity at the final time."""
        q = self.path.nodes
        dt = self.path.dt
        return (3.0 * q[-1] - 4.0 * q[-2] + q[-3]) / (2.0 * dt)


def calibrated_curve(start: ConfigurationClass, minus: ValueTable,
                     ktable: KernelTable, params: ModelParams,
                     horizon: int, levels=(16, 32, 64)) -> CalibratedCurve:
    """Backward argmin chain of length ``horizon`` from a grid node,
    stitched from the stored unit-time minimizers into one path on
    [-horizon, 0]."""
    grid = minus.grid
    kernel, _, _ = ktable.assemble(params.c)
    cur = grid.index_of(start)
    chain = [cur]
    segments = []
    step_actions = []
    junction = grid.points[cur].copy()
    all_converged = True
    for _ in range(horizon):
        prev = int(np.argmin(minus.values + kernel[:, cur]))
        seg = kernel_segment(ktable, grid.nodes, params, prev, cur, levels=levels)
        all_converged &= seg.converged
        aligned = align_lift(seg.path.nodes, junction)
        segments.append(aligned)
        step_actions.append(seg.action)
        junction = aligned[0].copy()
        cur = prev
        chain.append(cur)
    segments.reverse()
    chain.reverse()
    step_actions.reverse()
    m = segments[0].shape[0] - 1
    nodes = np.concatenate([segments[0]] + [s[1:] for s in segments[1:]], axis=0)
    times = -float(horizon) + np.arange(horizon * m + 1) * (1.0 / m)
    path = DiscretePath(times=times, nodes=nodes)
    defect = abs(
        float(minus.values[chain[-1]] - minus.values[chain[0]])
        - (sum(step_actions) + horizon * minus.alpha)
    )
    return CalibratedCurve(path=path, node_chain=chain, defect=defect,
                           converged=all_converged)


def calibration_step_defects(curve: CalibratedCurve, minus: ValueTable,
                             params: ModelParams) -> np.ndarray:
    """Per-step calibration defects |U(end) - U(start) - (action + alpha)|
    along the stitched chain."""
    m = curve.path.m // (len(curve.node_chain) - 1)
    out = []
    for j in range(len(curve.node_chain) - 1):
        seg_nodes = curve.path.nodes[j * m:(j + 1) * m + 1]
        t0 = float(curve.path.times[j * m])
        act = float(_action_batch(seg_nodes[None], t0, curve.path.dt, params)[0])
        du = minus.values[curve.node_chain[j + 1]] - minus.values[curve.node_chain[j]]
        out.append(abs(float(du) - (act + minus.alpha)))
    return np.array(out)


# -- Hamilton-Jacobi residual ---------------------------------------------------


@dataclass
class HjSample:
    node: int
    residual: float
    grad_u: np.ndarray
    dt_u: float


@dataclass
class HjReport:
    samples: list
    skipped: list

    @property
    def max_residual(self) -> float:
        return max((s.residual for s in self.samples), default=0.0)


def hj_residual(minus: ValueTable, ktable: KernelTable, params: ModelParams,
                sample_nodes=None, levels=(16, 32, 64),
                degeneracy_tol: float = 1e-9) -> HjReport:
    """Hamilton-Jacobi residual along unit-time calibrated segments.

    At each sample node M the spatial differential is read from the
    calibrated curve's final speed (one-sided finite difference), and the
    time derivative from the energy identity with an independent velocity
    estimate (last midpoint velocity completed by the force). The reported
    residual is the mismatch of the two Hamiltonian evaluations and
    aggregates quadrature and interpolation error. Nodes whose backward
    argmin is degenerate within ``degeneracy_tol`` are skipped.
    """
    grid = minus.grid
    kernel, _, _ = ktable.assemble(params.c)
    if sample_nodes is None:
        sample_nodes = range(grid.size)
    samples, skipped = [], []
    for b in sample_nodes:
        vals = minus.values + kernel[:, b]
        order = np.sort(vals)
        if order.size > 1 and order[1] - order[0] < degeneracy_tol:
            skipped.append(int(b))
            continue
        a = int(np.argmin(vals))
        seg = kernel_segment(ktable, grid.nodes, params, a, b, levels=levels)
        nodes = align_lift(seg.path.nodes, grid.points[b])
        dt = seg.path.dt
        q_end = nodes[-1]
        v_fd = (3.0 * nodes[-1] - 4.0 * nodes[-2] + nodes[-3]) / (2.0 * dt)
        v_mid = (nodes[-1] - nodes[-2]) / dt
        v_dyn = v_mid + 0.5 * dt * force(params.potentials, 0.0, q_end)
        pot = float(mean_v(params.potentials, 0.0, q_end)) + float(
            mean_w(params.potentials, q_end))
        h_fd = 0.5 * float(np.mean(v_fd**2)) + pot
        h_dyn = 0.5 * float(np.mean(v_dyn**2)) + pot
        dt_u = minus.alpha - h_dyn
        samples.append(HjSample(
            node=int(b),
            residual=abs(dt_u + h_fd - minus.alpha),
            grad_u=v_fd - params.c,
            dt_u=dt_u,
        ))
    return HjReport(samples=samples, skipped=skipped)


# -- semiconcavity ---------------------------------------------------------------


def sweep_values_at(targets: np.ndarray, minus: ValueTable, ktable: KernelTable,
                    params: ModelParams, levels=(16, 32, 64)) -> np.ndarray:
    """One backward sweep evaluated at arbitrary configurations:
    v(N) = min over grid classes A and representatives of N of
    [U(A) + unit-time action] + alpha."""
    grid = minus.grid
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    T, n = targets.shape
    window = int(np.max(np.abs(ktable.cand_z))) if ktable.cand_z.size else 1
    reps = []
    for r in range(n):
        for z in range(-window, window + 1):
            reps.append((r, z))
    N = grid.size
    starts, ends, owner = [], [], []
    pot_sup = params.potentials.v_sup() + params.potentials.w_sup()
    for t_idx in range(T):
        tgt = targets[t_idx]
        cand_pts = np.stack([cyclic_relabel(tgt, r) + z for r, z in reps])
        for a in range(N):
            delta = cand_pts - grid.points[a][None, :]
            lb = 0.5 * np.mean(delta**2, axis=1) - params.c * delta.mean(axis=1) - pot_sup
            # coarse upper bound: straight midpoint actions
            frac = np.linspace(0, 1, 9)[None, :, None]
            straight = (1 - frac) * grid.points[a][None, None, :] + frac * cand_pts[:, None, :]
            sa = _action_batch(straight, 0.0, 1.0 / 8, params)
            keep = np.flatnonzero(lb <= sa.min() + 1e-9)
            for s in keep:
                starts.append(grid.points[a])
                ends.append(cand_pts[s])
                owner.append((t_idx, a))
    sol = solve_fixed_endpoints(np.stack(starts), np.stack(ends), 0.0, 1.0,
                                params, levels=levels)
    out = np.full(T, np.inf)
    for (t_idx, a), act in zip(owner, sol.actions):
        cand = minus.values[a] + act
        if cand < out[t_idx]:
            out[t_idx] = cand
    return out + minus.alpha


@dataclass
class SemiconcavityReport:
    worst_excess: float
    bound_constant: float
    probes: int


def semiconcavity_check(minus: ValueTable, ktable: KernelTable, params: ModelParams,
                        probe_nodes=None, deltas=(0.01, 0.02),
                        levels=(16, 32, 64)) -> SemiconcavityReport:
    """Midpoint quasiconcavity of one backward sweep.

    Probes v(x+h) + v(x-h) - 2 v(x) - (K/n) |h|^2 with the curvature
    constant K = 1 + 3 max(||V''||, ||W''||) and |h| the Euclidean norm;
    the excess should be non-positive up to solver tolerance.
    """
    grid = minus.grid
    pot = params.potentials
    k_const = 1.0 + 3.0 * max(pot.v_xx_sup(), pot.w_xx_sup())
    n = grid.n
    if probe_nodes is None:
        probe_nodes = range(0, grid.size, max(1, grid.size // 6))
    triples = []
    specs = []
    for b in probe_nodes:
        x = grid.points[b]
        gaps = np.diff(np.concatenate((x, [x[0] + 1.0]))) if n > 1 else np.array([1.0])
        for delta in deltas:
            if n > 1 and delta >= gaps.min() / 2:
                continue
            hs = [np.full(n, delta)]
            hs.extend(delta * np.eye(n)[i] for i in range(min(n, 2)))
            for h in hs:
                triples.extend([x + h, x - h, x])
                specs.append(float(np.dot(h, h)))
    vals = sweep_values_at(np.stack(triples), minus, ktable, params, levels)
    worst = -math.inf
    for i, h2 in enumerate(specs):
        vp, vm, v0 = vals[3 * i], vals[3 * i + 1], vals[3 * i + 2]
        worst = max(worst, float(vp + vm - 2 * v0 - (k_const / n) * h2))
    return SemiconcavityReport(worst_excess=worst, bound_constant=k_const,
                               probes=len(specs))


# -- domination and orbit-based alpha --------------------------------------------


def domination_check(minus: ValueTable, params: ModelParams, n_paths: int = 200,
                     max_steps: int = 3, m_per_unit: int = 64,
                     seed: int = 0) -> float:
    """Max domination defect of the fixed point over random
    piecewise-linear node paths: U(end) - U(start) - (action + s alpha)."""
    grid = minus.grid
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(n_paths):
        steps = int(rng.integers(1, max_steps + 1))
        idx = rng.integers(0, grid.size, size=steps + 1)
        total = 0.0
        for j in range(steps):
            a, b = grid.points[idx[j]], grid.points[idx[j + 1]]
            frac = np.linspace(0, 1, m_per_unit + 1)[None, :, None]
            straight = (1 - frac) * a[None, None, :] + frac * b[None, None, :]
            total += float(_action_batch(straight, float(j), 1.0 / m_per_unit, params)[0])
        defect = float(
            minus.values[idx[-1]] - minus.values[idx[0]]
            - (total + steps * minus.alpha)
        )
        worst = max(worst, defect)
    return worst


def alpha_from_orbit(params: ModelParams, start: ConfigurationClass,
                     horizon: float = 16.0, levels=(16, 32, 64)) -> float:
    """Orbit-wise estimate -action/T from one long c-minimal segment;
    the O(1/T) boundary layer is the accuracy limit. Intended for particle
    counts beyond the grid solver's reach."""
    res = minimize_bvp(start.canonical, start.canonical, (0.0, horizon), params,
                       allow_integer_shifts=True, levels=levels)
    return -res.action / horizon
