"""Full-history recursive multilevel Picard estimator over Euler-Maruyama paths.

For level ``n`` and base ``m`` the estimator at ``(t, x)`` with index ``theta`` is

    U_n = 1{n>=1} / m^n * sum_{i=1}^{m^n} g(X^{(theta,0,-i)}_T)
        + sum_{l=0}^{n-1} (T-t)/m^{n-l} * sum_{i=1}^{m^{n-l}}
              [ f(U_l^{(theta,l,i)}) - 1{l>=1} f(U_{l-1}^{(theta,-l,i)}) ]

where both inner estimators are evaluated at the random time
``tau = t + (T-t) * frac^{(theta,l,i)}`` and the endpoint ``X^{(theta,l,i)}_tau``,
and ``U_0 = 0``.

Queries are evaluated breadth-first: all queries that share a level are
pushed through one batched call, so the Python-level work grows with the
number of recursion nodes, not with the number of paths.
"""

from __future__ import annotations

import math
import os
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import multiprocessing as mp
import numpy as np

from .model import BenchmarkId, PideModel, benchmark_solution
from .randomness import Purpose, ThetaBatch, ThetaIndex, mathfrak_T
from .sde import DrawLog, StepCoefficients, em_endpoints


@dataclass(frozen=True)
class MlpParams:
    n: int
    m: int
    K: int
    t: float
    x: tuple[float, ...]
    seed: int
    root_theta: ThetaIndex = field(default_factory=ThetaIndex.root)

    def __post_init__(self):
        if self.n < 0:
            raise ValueError(f"n must be >= 0, got {self.n}")
        if self.m < 1 or self.K < 1:
            raise ValueError("m and K must be >= 1")
        object.__setattr__(self, "x", tuple(float(v) for v in np.asarray(self.x).reshape(-1)))


@dataclass(frozen=True)
class EvalCounters:
    paths: int = 0
    f_evals: int = 0
    g_evals: int = 0


@dataclass(frozen=True)
class MlpResult:
    value: float
    evaluations: EvalCounters
    depth_reached: int


class _Counter:
    def __init__(self):
        self.paths = 0
        self.f_evals = 0
        self.g_evals = 0
        self.depth = 0


@dataclass
class _Context:
    model: PideModel
    m: int
    K: int
    coef: StepCoefficients
    log: DrawLog | None
    counter: _Counter


def _estimate(ctx: _Context, level: int, batch: ThetaBatch, t: np.ndarray, x: np.ndarray) -> np.ndarray:
    N = len(batch)
    if level == 0:
        return np.zeros(N)
    ctx.counter.depth = max(ctx.counter.depth, level)
    model, m, K = ctx.model, ctx.m, ctx.K
    T = model.T

    # terminal term
    M = m**level
    kids = batch.children(0, range(-1, -M - 1, -1))
    ends = em_endpoints(model, kids, np.repeat(t, M), T, np.repeat(x, M, axis=0), K,
                        coefficients=ctx.coef, log=ctx.log)
    ctx.counter.paths += N * M
    ctx.counter.g_evals += N * M
    value = ctx.coef.g(ends).reshape(N, M).mean(axis=1)

    for ell in range(level):
        M = m ** (level - ell)
        kids = batch.children(ell, range(1, M + 1))
        frac = kids.uniforms(Purpose.TIME_FRACTION, 0)
        if ctx.log is not None:
            ctx.log.add_times(kids, frac)
        t_rep = np.repeat(t, M)
        tau = mathfrak_T(t_rep, frac, T)
        ends = em_endpoints(model, kids, t_rep, tau, np.repeat(x, M, axis=0), K,
                            coefficients=ctx.coef, log=ctx.log)
        ctx.counter.paths += N * M
        inner = ctx.coef.f(_estimate(ctx, ell, kids, tau, ends))
        ctx.counter.f_evals += N * M
        if ell >= 1:
            kids_minus = batch.children(-ell, range(1, M + 1))
            inner = inner - ctx.coef.f(_estimate(ctx, ell - 1, kids_minus, tau, ends))
            ctx.counter.f_evals += N * M
        value = value + (T - t) / M * inner.reshape(N, M).sum(axis=1)
    return value


def mlp_values(model: PideModel, n: int, m: int, K: int, t: float, xs, thetas: Sequence[ThetaIndex],
               seed: int, *, networked: bool = False, log: DrawLog | None = None,
               counter: _Counter | None = None) -> np.ndarray:
    """Estimator values for queries ``(thetas[q], xs[q])`` sharing ``(n, m, K, t)``."""
    if not 0.0 <= t <= model.T:
        raise ValueError(f"t={t} outside [0, T={model.T}]")
    xs = np.asarray(xs, dtype=np.float64).reshape(len(thetas), model.d)
    batch = ThetaBatch.from_thetas(seed, list(thetas))
    ctx = _Context(model, m, K, StepCoefficients(model, networked), log, counter or _Counter())
    return _estimate(ctx, n, batch, np.full(len(thetas), float(t)), xs)


def _chunk_values(args):
    model, n, m, K, t, xs, thetas, seed, networked = args
    return mlp_values(model, n, m, K, t, xs, thetas, seed, networked=networked)


def mlp_values_parallel(model: PideModel, n: int, m: int, K: int, t: float, xs, thetas, seed: int, *,
                        networked: bool = False, workers: int = 1) -> np.ndarray:
    """``mlp_values`` split over worker processes; results do not depend on ``workers``."""
    thetas = list(thetas)
    xs = np.asarray(xs, dtype=np.float64).reshape(len(thetas), model.d)
    if workers <= 1 or len(thetas) < 2:
        return mlp_values(model, n, m, K, t, xs, thetas, seed, networked=networked)
    bounds = np.linspace(0, len(thetas), min(workers, len(thetas)) + 1).astype(int)
    jobs = [(model, n, m, K, t, xs[a:b], thetas[a:b], seed, networked) for a, b in zip(bounds[:-1], bounds[1:])]
    method = "fork" if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context(method)) as pool:
        parts = list(pool.map(_chunk_values, jobs))
    return np.concatenate(parts)


def mlp_estimate(model: PideModel, p: MlpParams, *, networked: bool = False,
                 log: DrawLog | None = None) -> MlpResult:
    counter = _Counter()
    value = mlp_values(model, p.n, p.m, p.K, p.t, [p.x], [p.root_theta], p.seed,
                       networked=networked, log=log, counter=counter)
    return MlpResult(
        value=float(value[0]),
        evaluations=EvalCounters(counter.paths, counter.f_evals, counter.g_evals),
        depth_reached=counter.depth,
    )


def path_count(n: int, m: int) -> int:
    """Trajectories simulated by one level-``n`` estimator."""
    P = [0]
    for level in range(1, n + 1):
        total = m**level
        for ell in range(level):
            total += m ** (level - ell) * (1 + P[ell] + (P[ell - 1] if ell >= 1 else 0))
        P.append(total)
    return P[n]


def evaluation_counts(n: int, m: int) -> EvalCounters:
    """Paths, f- and g-evaluations of one level-``n`` estimator, by recurrence."""
    P, Fv, Gv = [0], [0], [0]
    for level in range(1, n + 1):
        p = g = m**level
        f = 0
        for ell in range(level):
            M = m ** (level - ell)
            both = ell >= 1
            p += M * (1 + P[ell] + (P[ell - 1] if both else 0))
            f += M * (1 + both + Fv[ell] + (Fv[ell - 1] if both else 0))
            g += M * (Gv[ell] + (Gv[ell - 1] if both else 0))
        P.append(p)
        Fv.append(f)
        Gv.append(g)
    return EvalCounters(P[n], Fv[n], Gv[n])


def mlp_error_bound(c: float, d: int, T: float, n: int, m: int, x) -> float:
    """A-priori L2 error bound of the level-``n`` estimator against the Euler-scheme fixed point."""
    if c < 2 or n < 1 or m < 1:
        raise ValueError("need c >= 2 and n, m >= 1")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    dc = float(d) ** c
    return (
        6.0 * math.exp(m / 2.0) * m ** (-n / 2.0) * math.exp(12.0 * c * T * n)
        * math.sqrt(c * dc / T) * math.sqrt(dc + float(x @ x))
    )


def default_K_rule(n: int) -> int:
    return max(1, n * n)


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    m: int
    K: int
    reps: int
    exact: float
    mean: float
    bias: float
    rmse: float
    bound: float
    wall_time_s: float | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def convergence_study(model: PideModel, benchmark_id, levels: Sequence[int], reps: int,
                      K_rule: Callable[[int], int] = default_K_rule, seed: int = 0, *, t: float = 0.0,
                      x=None, workers: int = 1, timing: bool = True) -> list[ConvergenceRow]:
    """RMSE of the estimator against a closed form, one row per ``n = m`` level.

    Replicate ``r`` uses root index ``(r,)`` with the same master seed at every
    level, so errors are paired across rows.
    """
    bid = BenchmarkId.parse(benchmark_id)
    x = np.zeros(model.d) if x is None else np.asarray(x, dtype=np.float64).reshape(model.d)
    exact = benchmark_solution(model, bid, t, x)
    thetas = [ThetaIndex((r,)) for r in range(reps)]
    rows = []
    for n in levels:
        K = int(K_rule(n))
        start = time.perf_counter()
        vals = mlp_values_parallel(model, n, n, K, t, np.repeat(x[None], reps, axis=0), thetas, seed,
                                   workers=workers)
        wall = time.perf_counter() - start
        err = vals - exact
        rows.append(ConvergenceRow(
            n=n, m=n, K=K, reps=reps, exact=exact, mean=float(vals.mean()), bias=float(err.mean()),
            rmse=float(np.sqrt(np.mean(err**2))),
            bound=mlp_error_bound(model.c, model.d, model.T, n, n, x) if n >= 1 else math.inf,
            wall_time_s=wall if timing else None,
        ))
    return rows


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
