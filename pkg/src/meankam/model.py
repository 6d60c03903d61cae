"""Potentials, the mean-field Lagrangian/Hamiltonian at finite n, and the
mean-field force.

Potentials are truncated Fourier series: the external potential V is a
series in (t, x), both 1-periodic; the pair interaction W is an even
cosine series in x with its constant adjusted so W(0) = 0. Derivative
sup-norms are over-estimated term-wise, which keeps the a priori constants
of the velocity bound computable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatchError, ValidationError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class PotentialSpec:
    """Finite Fourier data for V(t, x) and W(x), with a common amplitude
    scale ``eps`` applied to both.

    ``v_terms`` rows are (freq_t, freq_x, kind, amplitude) with kind 0 for
    cosine and 1 for sine of 2*pi*(freq_t*t + freq_x*x). ``w_terms`` rows
    are (freq, amplitude) cosine terms; the constant -sum(amplitudes) is
    added so that W(0) == 0.
    """

    v_ft: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_fx: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_kind: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    v_amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_freq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w_amp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    eps: float = 1.0

    def __post_init__(self):
        for name in ("v_ft", "v_fx", "v_kind", "v_amp", "w_freq", "w_amp"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.v_ft.size == self.v_fx.size == self.v_kind.size == self.v_amp.size):
            raise ValidationError("V term arrays must share a length")
        if self.w_freq.size != self.w_amp.size:
            raise ValidationError("W term arrays must share a length")
        if np.any(self.w_freq < 1):
            raise ValidationError("W frequencies must be positive integers")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_terms(cls, v_terms=(), w_terms=(), eps: float = 1.0) -> "PotentialSpec":
        """Build from (freq_t, freq_x, 'cos'|'sin', amplitude) rows for V
        and (freq, amplitude) rows for W."""
        kinds = {"cos": 0, "sin": 1}
        vt = [(float(ft), float(fx), kinds[k], float(a)) for ft, fx, k, a in v_terms]
        vt = np.array(vt, dtype=float).reshape(-1, 4)
        wt = np.array([(float(f), float(a)) for f, a in w_terms], dtype=float).reshape(-1, 2)
        return cls(
            v_ft=vt[:, 0], v_fx=vt[:, 1], v_kind=vt[:, 2].astype(int), v_amp=vt[:, 3],
            w_freq=wt[:, 0], w_amp=wt[:, 1], eps=float(eps),
        )

    @classmethod
    def free(cls) -> "PotentialSpec":
        return cls.from_terms()

    @classmethod
    def from_config(cls, cfg: dict) -> "PotentialSpec":
        return cls.from_terms(
            v_terms=cfg.get("v_terms", ()),
            w_terms=cfg.get("w_terms", ()),
            eps=cfg.get("eps", 1.0),
        )

    def to_config(self) -> dict:
        kinds = {0: "cos", 1: "sin"}
        return {
            "v_terms": [
                [float(ft), float(fx), kinds[int(k)], float(a)]
                for ft, fx, k, a in zip(self.v_ft, self.v_fx, self.v_kind, self.v_amp)
            ],
            "w_terms": [[float(f), float(a)] for f, a in zip(self.w_freq, self.w_amp)],
            "eps": float(self.eps),
        }

    def scaled(self, eps: float) -> "PotentialSpec":
        return replace(self, eps=float(eps))

    # -- pointwise evaluation (broadcasting) -------------------------------

    @property
    def time_dependent(self) -> bool:
        return bool(np.any((self.v_ft != 0) & (self.v_amp != 0)))

    @property
    def w_const(self) -> float:
        return -float(self.w_amp.sum())

    def v(self, t, x):
        """V(t, x); ``t`` and ``x`` broadcast."""
        if self.v_amp.size == 0:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)
        t = np.asarray(t, dtype=float)[..., None]
        x = np.asarray(x, dtype=float)[..., None]
        phase = TWO_PI * (self.v_ft * t + self.v_fx * x)
        vals = np.where(self.v_kind == 0, np.cos(phase), np.sin(phase))
        return self.eps * (self.v_amp * vals).sum(axis=-1)

    def v_x(self, t, x):
        if self.v_amp.size == 0:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)
        t = np.asarray(t, dtype=float)[..., None]
        x = np.asarray(x, dtype=float)[..., None]
        phase = TWO_PI * (self.v_ft * t + self.v_fx * x)
        dvals = np.where(self.v_kind == 0, -np.sin(phase), np.cos(phase))
        return self.eps * (self.v_amp * TWO_PI * self.v_fx * dvals).sum(axis=-1)

    def v_xx(self, t, x):
        if self.v_amp.size == 0:
            return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)
        t = np.asarray(t, dtype=float)[..., None]
        x = np.asarray(x, dtype=float)[..., None]
        phase = TWO_PI * (self.v_ft * t + self.v_fx * x)
        vals = np.where(self.v_kind == 0, np.cos(phase), np.sin(phase))
        return -self.eps * (self.v_amp * (TWO_PI * self.v_fx) ** 2 * vals).sum(axis=-1)

    def w(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.w_amp.size == 0:
            return np.zeros(theta.shape)
        phase = TWO_PI * self.w_freq * theta[..., None]
        return self.eps * (self.w_const + (self.w_amp * np.cos(phase)).sum(axis=-1))

    def w_x(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.w_amp.size == 0:
            return np.zeros(theta.shape)
        phase = TWO_PI * self.w_freq * theta[..., None]
        return self.eps * (-(self.w_amp * TWO_PI * self.w_freq) * np.sin(phase)).sum(axis=-1)

    def w_xx(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.w_amp.size == 0:
            return np.zeros(theta.shape)
        phase = TWO_PI * self.w_freq * theta[..., None]
        return self.eps * (-(self.w_amp * (TWO_PI * self.w_freq) ** 2) * np.cos(phase)).sum(axis=-1)

    # -- sup-norm over-estimates -------------------------------------------

    def v_sup(self) -> float:
        return self.eps * float(np.abs(self.v_amp).sum())

    def w_sup(self) -> float:
        return self.eps * (abs(self.w_const) + float(np.abs(self.w_amp).sum()))

    def v_x_sup(self) -> float:
        return self.eps * float((np.abs(self.v_amp) * TWO_PI * np.abs(self.v_fx)).sum())

    def w_x_sup(self) -> float:
        return self.eps * float((np.abs(self.w_amp) * TWO_PI * self.w_freq).sum())

    def v_xx_sup(self) -> float:
        return self.eps * float((np.abs(self.v_amp) * (TWO_PI * np.abs(self.v_fx)) ** 2).sum())

    def w_xx_sup(self) -> float:
        return self.eps * float((np.abs(self.w_amp) * (TWO_PI * self.w_freq) ** 2).sum())


@dataclass(frozen=True)
class ModelParams:
    """Particle count, cohomology parameter c, and the potentials."""

    n: int
    c: float = 0.0
    potentials: PotentialSpec = field(default_factory=PotentialSpec.free)

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("particle count must be >= 1")

    def with_c(self, c: float) -> "ModelParams":
        return replace(self, c=float(c))

    def to_config(self) -> dict:
        return {"n": self.n, "c": self.c, "potentials": self.potentials.to_config()}


# -- mean-field quantities (q of shape (..., n)) ----------------------------


def mean_v(pot: PotentialSpec, t, q) -> np.ndarray:
    """(1/n) sum_i V(t, q_i); leading axes of q broadcast against t."""
    q = np.asarray(q, dtype=float)
    return pot.v(np.asarray(t, dtype=float)[..., None], q).mean(axis=-1)

def mean_w(pot: PotentialSpec, q) -> np.ndarray:
    """(1/(2 n^2)) sum_{i,j} W(q_i - q_j)."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    diffs = q[..., :, None] - q[..., None, :]
    return pot.w(diffs).sum(axis=(-2, -1)) / (2.0 * n * n)


def eval_mean_potentials(pot: PotentialSpec, t: float, q) -> tuple[float, float]:
    """Mean external and pair potentials at one configuration."""
    q = np.asarray(q, dtype=float)
    return float(mean_v(pot, t, q)), float(mean_w(pot, q))


def force(pot: PotentialSpec, t, q) -> np.ndarray:
    """Mean-field acceleration: component i is
    ``-V'(t, q_i) - (1/n) sum_j W'(q_i - q_j)``."""
    q = np.asarray(q, dtype=float)
    n = q.shape[-1]
    f = -pot.v_x(np.asarray(t, dtype=float)[..., None], q)
    if pot.w_amp.size:
        diffs = q[..., :, None] - q[..., None, :]
        f = f - pot.w_x(diffs).sum(axis=-1) / n
    return f


def potential_hessian(pot: PotentialSpec, t: float, q: np.ndarray) -> np.ndarray:
    """Hessian of Vbar + Wbar at one configuration, shape (n, n)."""
    q = np.asarray(q, dtype=float)
    n = q.size
    h = np.zeros((n, n))
    diffs = q[:, None] - q[None, :]
    wxx = pot.w_xx(diffs)
    np.fill_diagonal(wxx, 0.0)
    h -= wxx / (n * n)
    np.fill_diagonal(h, pot.v_xx(t, q) / n + wxx.sum(axis=1) / (n * n))
    return h


def _check_pair(q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != v.shape:
        raise DimensionMismatchError(f"shape mismatch: {q.shape} vs {v.shape}")
    return q, v


def lagrangian(params: ModelParams, t, q, v) -> float:
    """Mean-field Lagrangian at parameter c:
    ``(1/n) sum_i (v_i^2/2 - c v_i) - Vbar - Wbar``."""
    q, v = _check_pair(q, v)
    kin = np.mean(0.5 * v**2 - params.c * v, axis=-1)
    out = kin - mean_v(params.potentials, t, q) - mean_w(params.potentials, q)
    return float(out) if np.ndim(out) == 0 else out


def hamiltonian(params: ModelParams, t, q, p) -> float:
    """Legendre transform: ``||c + p||^2/2 + Vbar + Wbar`` in the
    (1/n)-weighted norm."""
    q, p = _check_pair(q, p)
    kin = np.mean(0.5 * (params.c + p) ** 2, axis=-1)
    out = kin + mean_v(params.potentials, t, q) + mean_w(params.potentials, q)
    return float(out) if np.ndim(out) == 0 else out


def weighted_norm(v) -> float:
    """(1/n)-weighted L2 norm of a velocity/momentum vector."""
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(np.mean(v**2, axis=-1)))
