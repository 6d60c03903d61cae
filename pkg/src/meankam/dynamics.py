"""Euler-Lagrange flow of the mean-field system and the constructive
a priori bounds on minimizer velocity and acceleration."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, UnsupportedError
from .model import ModelParams, PotentialSpec, force, mean_v, mean_w


@dataclass(frozen=True)
class PhasePoint:
    """Time, configuration lift, and velocity of an n-particle state."""

    t: float
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if q.shape != v.shape or q.ndim != 1:
            raise DimensionMismatchError("q and v must be 1-d arrays of equal length")
        object.__setattr__(self, "q", q.copy())
        object.__setattr__(self, "v", v.copy())

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class Trajectory:
    """Velocity-Verlet samples: times (K+1,), positions and velocities
    (K+1, n)."""

    times: np.ndarray
    qs: np.ndarray
    vs: np.ndarray

    def point(self, k: int) -> PhasePoint:
        return PhasePoint(float(self.times[k]), self.qs[k], self.vs[k])

    @property
    def end(self) -> PhasePoint:
        return self.point(len(self.times) - 1)

    def to_csv_rows(self):
        n = self.qs.shape[1]
        header = ["t"] + [f"q_{i+1}" for i in range(n)] + [f"v_{i+1}" for i in range(n)]
        rows = [
            [self.times[k], *self.qs[k], *self.vs[k]] for k in range(len(self.times))
        ]
        return header, rows


def integrate(start: PhasePoint, duration: float, step: float,
              pot: PotentialSpec) -> Trajectory:
    """Velocity-Verlet trajectory sampled every step.

    ``duration`` may be negative (backward flow); the scheme is
    time-reversible and exact for zero force.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    nsteps = max(1, round(abs(duration) / step))
    h = duration / nsteps
    times = start.t + h * np.arange(nsteps + 1)
    qs = np.empty((nsteps + 1, start.n))
    vs = np.empty_like(qs)
    q, v = start.q.copy(), start.v.copy()
    qs[0], vs[0] = q, v
    f = force(pot, start.t, q)
    for k in range(nsteps):
        vh = v + 0.5 * h * f
        q = q + h * vh
        f = force(pot, times[k + 1], q)
        v = vh + 0.5 * h * f
        qs[k + 1], vs[k + 1] = q, v
    return Trajectory(times=times, qs=qs, vs=vs)


def energy(p: PhasePoint, pot: PotentialSpec) -> float:
    """Conserved energy of the autonomous flow:
    ``||v||^2/2 + Vbar + Wbar`` (the c=0 Hamiltonian).

    Requires time-independent V.
    """
    if pot.time_dependent:
        raise UnsupportedError("energy is only defined for time-independent V")
    kin = 0.5 * float(np.mean(p.v**2))
    return kin + float(mean_v(pot, 0.0, p.q)) + float(mean_w(pot, p.q))


def apriori_bounds(params: ModelParams) -> tuple[float, float]:
    """Velocity and acceleration bounds for unit-time minimizers.

    Returns (R_c, accel): any c-minimal monotone curve over a unit
    interval has speed at most R_c and acceleration at most accel. The
    chain of constants follows the comparison with a straight line between
    integer-shifted endpoints of range [-1, 1]:

        C1 = ||V||_inf + ||W||_inf
        C2 = 2 + 2|c| + C1           (straight-line action bound)
        C4 = 2 sqrt(C2 + C1 + c^2)   (L1 velocity bound)
        accel = ||V'||_inf + ||W'||_inf
        R_c = C4 + accel
    """
    pot = params.potentials
    c1 = pot.v_sup() + pot.w_sup()
    c2 = 2.0 + 2.0 * abs(params.c) + c1
    c4 = 2.0 * math.sqrt(c2 + c1 + params.c**2)
    accel = pot.v_x_sup() + pot.w_x_sup()
    return c4 + accel, accel
