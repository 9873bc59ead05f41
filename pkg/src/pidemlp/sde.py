"""Euler-Maruyama simulation of jump-diffusions on the grid {0, T/K, ..., T}.

A trajectory from ``t`` to ``s`` takes one step per grid cell it meets.  The
step in cell ``k`` runs over ``[max(t, (k-1)T/K), min(s, kT/K)]`` and freezes
the coefficients at the state reached at the start of that interval:

    X <- X + beta(X) dt + sigma(X) dW + F(X) J,
    J  = sum_j G(z_j) - dt * g_mean        (compensated compound Poisson).

Cells the interval does not meet are skipped.  The nonempty cells are
numbered 0, 1, ... and that number is the segment index used for every draw,
so any consumer that rebuilds the same plan reads the same increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import relunet
from .model import ConfigError, PideModel
from .randomness import ThetaBatch, ThetaIndex, gaussians, mark_uniforms, poisson_counts


class SimulationError(RuntimeError):
    """Non-finite state during a simulation step."""

    def __init__(self, theta: ThetaIndex, segment: int, message: str = "non-finite state"):
        super().__init__(f"{message} at theta={theta} segment={segment}")
        self.theta = theta
        self.segment = segment


def grid_point(k, K: int, T: float):
    return T * k / K


def grid_floor(t: float, K: int, T: float) -> float:
    """Largest grid point strictly below ``t`` (0 when there is none)."""
    if K < 1 or not T > 0:
        raise ValueError("need K >= 1 and T > 0")
    best = 0.0
    for k in range(K + 1):
        p = grid_point(k, K, T)
        if p < t:
            best = p
    return best


def cell_bounds(t, s, k: int, K: int, T: float):
    """Start and length of the step in cell ``k`` (length <= 0 means no step)."""
    lo = np.maximum(t, grid_point(k - 1, K, T))
    hi = np.minimum(s, grid_point(k, K, T))
    return lo, hi - lo


@dataclass(frozen=True)
class EmTrajectoryRequest:
    theta: ThetaIndex
    K: int
    t: float
    s: float
    x: np.ndarray


@dataclass(frozen=True)
class EmSegmentPlan:
    """Steps ``(start, end, anchor_time)``; the anchor is the step's own start."""

    segments: tuple[tuple[float, float, float], ...]

    @property
    def deltas(self) -> list[float]:
        return [b - a for a, b, _ in self.segments]


def segment_plan(t: float, s: float, K: int, T: float) -> EmSegmentPlan:
    if not 0.0 <= t <= s <= T:
        raise ValueError(f"need 0 <= t <= s <= T, got t={t}, s={s}, T={T}")
    if K < 1:
        raise ValueError("K must be >= 1")
    out = []
    for k in range(1, K + 1):
        lo, dt = cell_bounds(t, s, k, K, T)
        if dt > 0:
            lo = float(lo)
            out.append((lo, lo + float(dt), lo))
    return EmSegmentPlan(tuple(out))


# ---------------------------------------------------------------------------
# draws
# ---------------------------------------------------------------------------


def segment_draws(model: PideModel, batch: ThetaBatch, seg, dt) -> tuple[np.ndarray, np.ndarray]:
    """Brownian increment and compensated jump vector for one segment per row."""
    d = model.d
    dt = np.asarray(dt, dtype=np.float64)
    dW = np.sqrt(dt)[:, None] * gaussians(batch, seg, d)
    levy = model.levy
    J = np.zeros((len(batch), d))
    if levy.intensity > 0:
        counts = poisson_counts(batch, seg, levy.intensity * dt)
        seg = np.broadcast_to(np.asarray(seg, dtype=np.int64), (len(batch),))
        for j in range(int(counts.max(initial=0))):
            rows = np.nonzero(counts > j)[0]
            marks = levy.jump_sampler(mark_uniforms(batch.take(rows), seg[rows], j, d))
            J[rows] += model.jump_G(marks)
    J = J - dt[:, None] * levy.g_mean
    return dW, J


@dataclass
class DrawLog:
    """Record of every draw consumed, keyed by theta path.

    ``times[path]`` holds the random time fraction; ``segments[(path, seg)]``
    holds ``(start, dt, dW, J)``.
    """

    times: dict = field(default_factory=dict)
    segments: dict = field(default_factory=dict)

    def add_times(self, batch: ThetaBatch, fractions) -> None:
        for row, frac in enumerate(np.asarray(fractions)):
            self.times[tuple(int(v) for v in batch.paths[row])] = float(frac)

    def add_segments(self, batch: ThetaBatch, seg, start, dt, dW, J) -> None:
        for row in range(len(batch)):
            key = (tuple(int(v) for v in batch.paths[row]), int(seg[row]))
            self.segments[key] = (float(start[row]), float(dt[row]), tuple(dW[row].tolist()), tuple(J[row].tolist()))

    def consistent_with(self, other: DrawLog) -> list[str]:
        """Keys present in both logs whose values differ."""
        bad = [f"time {k}" for k in self.times.keys() & other.times.keys() if self.times[k] != other.times[k]]
        bad += [f"segment {k}" for k in self.segments.keys() & other.segments.keys()
                if self.segments[k] != other.segments[k]]
        return bad


# ---------------------------------------------------------------------------
# coefficient evaluation
# ---------------------------------------------------------------------------


class StepCoefficients:
    """Batched ``beta(x)``, ``sigma(x) v`` and ``F(x) v``.

    In networked mode every term is the realization of the model's networks;
    directional networks are built once per distinct direction.
    """

    def __init__(self, model: PideModel, networked: bool = False):
        if networked and model.nets is None:
            raise ConfigError("networked evaluation requires a NetworkCoefficientSet")
        self.model = model
        self.networked = networked

    def beta(self, x):
        if self.networked:
            return relunet.realize(self.model.nets.phi_beta, x)
        return self.model.beta(x)

    def _directional(self, factory, x, v):
        out = np.empty_like(x)
        uniq, inverse = np.unique(v, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        for u, direction in enumerate(uniq):
            rows = np.nonzero(inverse == u)[0]
            out[rows] = relunet.realize(factory(direction), x[rows])
        return out

    def sigma_apply(self, x, v):
        if self.networked:
            return self._directional(self.model.nets.phi_sigma_dir, x, v)
        return self.model.sigma_apply(x, v)

    def F_apply(self, x, v):
        if self.networked:
            return self._directional(self.model.nets.phi_F_dir, x, v)
        return self.model.F_apply(x, v)

    def g(self, x):
        if self.networked:
            return relunet.realize(self.model.nets.phi_g, x)[:, 0]
        return np.asarray(self.model.g(x), dtype=np.float64)

    def f(self, u):
        u = np.asarray(u, dtype=np.float64)
        if self.networked:
            return relunet.realize(self.model.nets.phi_f, u[:, None])[:, 0]
        return np.asarray(self.model.f(u), dtype=np.float64)


def em_endpoints(model: PideModel, batch: ThetaBatch, t, s, x, K: int, *, coefficients=None,
                 log: DrawLog | None = None, path_hook=None) -> np.ndarray:
    """Euler-Maruyama endpoints for a batch of trajectories.

    ``t``, ``s`` have shape ``(N,)`` (or are scalars), ``x`` has shape ``(N, d)``;
    row ``r`` uses the streams of ``batch`` row ``r``.
    """
    n = len(batch)
    T = model.T
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,))
    if np.any(t < 0) or np.any(s < t) or np.any(s > T):
        raise ValueError("need 0 <= t <= s <= T for every trajectory")
    if K < 1:
        raise ValueError("K must be >= 1")
    coef = StepCoefficients(model) if coefficients is None else coefficients
    X = np.array(np.broadcast_to(x, (n, model.d)), dtype=np.float64)
    seg = np.zeros(n, dtype=np.int64)
    for k in range(1, K + 1):
        lo, dt = cell_bounds(t, s, k, K, T)
        rows = np.nonzero(dt > 0)[0]
        if rows.size == 0:
            continue
        sub = batch.take(rows)
        dtr = dt[rows]
        dW, J = segment_draws(model, sub, seg[rows], dtr)
        if log is not None:
            log.add_segments(sub, seg[rows], lo[rows], dtr, dW, J)
        Xr = X[rows]
        new = Xr + coef.beta(Xr) * dtr[:, None] + coef.sigma_apply(Xr, dW) + coef.F_apply(Xr, J)
        finite = np.isfinite(new).all(axis=1)
        if not finite.all():
            bad = int(np.argmin(finite))
            raise SimulationError(sub.theta(bad), int(seg[rows][bad]))
        X[rows] = new
        seg[rows] += 1
        if path_hook is not None:
            path_hook(rows, lo[rows] + dtr, new)
    return X


def em_endpoint(model: PideModel, req: EmTrajectoryRequest, seed: int, networked: bool = False) -> np.ndarray:
    batch = ThetaBatch.single(seed, req.theta)
    x = np.asarray(req.x, dtype=np.float64).reshape(1, model.d)
    coef = StepCoefficients(model, networked)
    return em_endpoints(model, batch, req.t, req.s, x, req.K, coefficients=coef)[0]


def em_path(model: PideModel, req: EmTrajectoryRequest, seed: int) -> list[tuple[float, np.ndarray]]:
    """``(time, state)`` at the start and after every step (for trajectory dumps)."""
    x = np.asarray(req.x, dtype=np.float64).reshape(1, model.d)
    out = [(float(req.t), x[0].copy())]

    def hook(rows, times, states):
        out.append((float(times[0]), states[0].copy()))

    em_endpoints(model, ThetaBatch.single(seed, req.theta), req.t, req.s, x, req.K, path_hook=hook)
    return out


def _require_martingale(model: PideModel) -> None:
    probe = np.linspace(-2.0, 2.0, 5 * model.d).reshape(5, model.d)
    probe = probe * np.arange(1, model.d + 1)
    if np.any(model.beta(probe) != 0):
        raise ConfigError("martingale check requires zero drift")
    x, y = probe[:2], probe[3:]
    if not np.allclose(model.g(0.25 * x + 0.75 * y), 0.25 * model.g(x) + 0.75 * model.g(y), rtol=1e-10, atol=1e-10):
        raise ConfigError("martingale check requires an affine terminal condition g")


def exact_endpoint_martingale_check(model: PideModel, t: float, x, n_samples: int, K: int,
                                    seed: int) -> tuple[float, float]:
    """Mean of ``g(X_T)`` over ``n_samples`` trajectories and its 3-sigma half-width.

    Under zero drift and compensated jumps the Euler scheme is a martingale,
    so the mean estimates ``g(x)`` exactly.  With one sample the half-width is
    ``inf``.
    """
    _require_martingale(model)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(1, model.d)
    batch = ThetaBatch.single(seed, ThetaIndex.root()).children(0, range(1, n_samples + 1))
    X = em_endpoints(model, batch, t, model.T, np.repeat(x, n_samples, axis=0), K)
    vals = np.asarray(model.g(X), dtype=np.float64)
    mean = float(vals.mean())
    if n_samples == 1:
        return mean, math.inf
    return mean, float(3.0 * vals.std(ddof=1) / math.sqrt(n_samples))
