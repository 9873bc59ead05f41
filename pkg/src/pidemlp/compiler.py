"""Compile Euler-Maruyama trajectories and MLP estimators into ReLU networks.

For one frozen scenario (master seed, root index, t, n, m, K) every random
time and every Brownian/jump increment is regenerated from the same counter
streams the estimator reads, so the compiled network's realization agrees
with :func:`pidemlp.mlp.mlp_estimate` up to floating-point reassociation.

With ``L`` the length of a trajectory network's dimension vector, ``df`` and
``dg`` those of the nonlinearity and terminal networks, every level-``n``
network has length ``(n+1) L + n (df-2) + dg - 1``.  Terms of a level-``n``
sum that are naturally shorter are padded with one-dimensional identity
networks so that all summands share that length.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import relunet
from .mlp import mlp_values
from .model import ConfigError, PideModel
from .randomness import Purpose, ThetaBatch, ThetaIndex, mathfrak_T
from .relunet import DimVector, ReluNetwork, compose_nets, dim_compose, dim_sum, identity_net, sum_nets
from .sde import DrawLog, cell_bounds, segment_draws

DEFAULT_PARAM_CEILING = 50_000_000


class ResourceLimitError(RuntimeError):
    """The predicted network exceeds the configured parameter ceiling."""

    def __init__(self, predicted_params: int, ceiling: int):
        super().__init__(f"predicted parameter count {predicted_params} exceeds ceiling {ceiling}")
        self.predicted_params = predicted_params
        self.ceiling = ceiling


# ---------------------------------------------------------------------------
# piecewise-linear nonlinearities
# ---------------------------------------------------------------------------


def build_pl_f_network(f: Callable, lipschitz_L: float, radius_R: float, grid_h: float) -> ReluNetwork:
    """One-hidden-layer network interpolating ``f`` on ``-R, -R+h, ..., R``.

    Outside ``[-R, R]`` the end slopes continue linearly.  The sup error on
    ``[-R, R]`` is at most ``L h`` and the result is ``L``-Lipschitz.
    """
    if not radius_R > 0 or not 0 < grid_h <= radius_R:
        raise ValueError("need R > 0 and 0 < h <= R")
    count = int(math.ceil(2 * radius_R / grid_h - 1e-12))
    xi = np.minimum(-radius_R + grid_h * np.arange(count + 1), radius_R)
    xi[-1] = radius_R
    y = np.array([float(f(v)) for v in xi])
    if not np.all(np.isfinite(y)):
        bad = xi[~np.isfinite(y)][0]
        raise ValueError(f"f is not finite at breakpoint {bad}")
    slopes = np.diff(y) / np.diff(xi)
    if np.any(np.abs(slopes) > lipschitz_L * (1 + 1e-12) + 1e-12):
        raise ValueError("f is not L-Lipschitz on the grid")
    # hidden units: (w - xi_0)^+, (xi_0 - w)^+, (w - xi_j)^+ for interior j
    w1 = np.concatenate([[1.0, -1.0], np.ones(count - 1)])[:, None]
    b1 = np.concatenate([[-xi[0], xi[0]], -xi[1:-1]])
    w2 = np.concatenate([[slopes[0], -slopes[0]], np.diff(slopes)])[None, :]
    return ReluNetwork([(w1, b1), (w2, np.array([y[0]]))])


# ---------------------------------------------------------------------------
# scenario and structure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioBinding:
    master_seed: int
    root_theta: ThetaIndex
    t: float
    n: int
    m: int
    K: int

    def __post_init__(self):
        if self.n < 0 or self.m < 1 or self.K < 1:
            raise ValueError("need n >= 0, m >= 1, K >= 1")


@dataclass(frozen=True)
class CoefficientShapes:
    """Depth-harmonised coefficient architectures shared by every compiled network."""

    d: int
    K: int
    step_depth: int
    beta: DimVector
    sigma: DimVector
    F: DimVector
    f: DimVector
    g: DimVector

    @property
    def step(self) -> DimVector:
        ident = relunet.standard_dim(self.step_depth, self.d)
        return dim_sum(dim_sum(dim_sum(ident, self.beta), self.sigma), self.F)

    @property
    def trajectory(self) -> DimVector:
        out = self.step
        for _ in range(self.K - 1):
            out = dim_compose(self.step, out)
        return out

    @property
    def c_deps(self) -> float:
        return float(2 * self.d + self.f.sup_norm + self.g.sup_norm + self.beta.sup_norm
                     + self.sigma.sup_norm + self.F.sup_norm)


def _harmonised(model: PideModel):
    if model.nets is None:
        raise ConfigError("compilation requires a NetworkCoefficientSet")
    nets = model.nets
    zero = np.zeros(model.d)
    beta, sig0, F0 = nets.phi_beta, nets.phi_sigma_dir(zero), nets.phi_F_dir(zero)
    depth = max(beta.depth, sig0.depth, F0.depth)
    if min(beta.depth, sig0.depth, F0.depth, nets.phi_f.depth, nets.phi_g.depth) < 3:
        raise ConfigError("coefficient networks need dimension vectors of length >= 3")

    def ext(net: ReluNetwork) -> ReluNetwork:
        return relunet.extend_depth(net, depth - net.depth) if net.depth < depth else net

    return depth, ext


def coefficient_shapes(model: PideModel, K: int) -> CoefficientShapes:
    depth, ext = _harmonised(model)
    nets, zero = model.nets, np.zeros(model.d)
    return CoefficientShapes(
        d=model.d, K=K, step_depth=depth,
        beta=ext(nets.phi_beta).dims, sigma=ext(nets.phi_sigma_dir(zero)).dims,
        F=ext(nets.phi_F_dir(zero)).dims, f=nets.phi_f.dims, g=nets.phi_g.dims,
    )


def predicted_depth(n: int, K: int, dims_beta: int, dims_sigma: int, dims_F: int, dims_f: int, dims_g: int) -> int:
    """Length of the dimension vector of a compiled level-``n`` estimator."""
    if min(dims_beta, dims_sigma, dims_F, dims_f, dims_g) < 3:
        raise ValueError("all dimension-vector lengths must be >= 3")
    L = K * (max(dims_beta, dims_sigma, dims_F) - 1) + 1
    return (n + 1) * L + n * (dims_f - 2) + dims_g - 1


def predicted_dims(shapes: CoefficientShapes, n: int, m: int) -> DimVector:
    """Exact dimension vector of a compiled level-``n`` estimator."""
    X = shapes.trajectory
    L = len(X)
    df = len(shapes.f)
    U = [dim_compose(shapes.g, X)]  # level 0: zero network of this shape

    def pad(p: int) -> DimVector:
        return relunet.standard_dim(p, 1)

    for level in range(1, n + 1):
        terms = [dim_compose(pad(level * (df - 2 + L) + 1), dim_compose(shapes.g, X))] * m**level
        for ell in range(level):
            inner = dim_compose(U[ell], X)
            if ell < level - 1:
                inner = dim_compose(pad((level - 1 - ell) * (df - 2 + L) + 1), inner)
            terms += [dim_compose(shapes.f, inner)] * m ** (level - ell)
            if ell >= 1:
                minus = dim_compose(pad((level - ell) * (df - 2 + L) + 1), dim_compose(U[ell - 1], X))
                terms += [dim_compose(shapes.f, minus)] * m ** (level - ell)
        total = terms[0]
        for term in terms[1:]:
            total = dim_sum(total, term)
        U.append(total)
    return U[n]


def theorem_param_envelope(c: float, d: int, eps: float, delta: float, b: float, C_delta_eta: float = 1.0) -> float:
    """Polynomial parameter envelope ``C d^{3c+12c^2+2c(6+delta)} eps^{-6c-6-delta}``.

    ``b`` bounds the coefficient network sizes; it fixes the constant, which is
    supplied directly as ``C_delta_eta``, so it is only validated here.
    """
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("need eps and delta in (0, 1)")
    if not b > 0 or not C_delta_eta > 0:
        raise ValueError("need b > 0 and a positive constant")
    exponent_d = 3 * c + 12 * c**2 + 2 * c * (6 + delta)
    return float(C_delta_eta * float(d) ** exponent_d * eps ** (-6 * c - 6 - delta))


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


def _trajectory_draws(model: PideModel, batch: ThetaBatch, t, s, K: int, log: DrawLog | None = None):
    """Per row and cell: ``(dt, dW, J)``, with zeros for cells the trajectory misses."""
    n, d = len(batch), model.d
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,))
    dts = np.zeros((n, K))
    dWs = np.zeros((n, K, d))
    Js = np.zeros((n, K, d))
    seg = np.zeros(n, dtype=np.int64)
    for k in range(1, K + 1):
        lo, dt = cell_bounds(t, s, k, K, model.T)
        rows = np.nonzero(dt > 0)[0]
        if rows.size == 0:
            continue
        sub = batch.take(rows)
        dW, J = segment_draws(model, sub, seg[rows], dt[rows])
        if log is not None:
            log.add_segments(sub, seg[rows], lo[rows], dt[rows], dW, J)
        dts[rows, k - 1] = dt[rows]
        dWs[rows, k - 1] = dW
        Js[rows, k - 1] = J
        seg[rows] += 1
    return dts, dWs, Js


class _TrajectoryBuilder:
    def __init__(self, model: PideModel, K: int):
        self.model = model
        self.K = K
        self.depth, ext = _harmonised(model)
        nets = model.nets
        self.beta = ext(nets.phi_beta)
        self.sigma = lambda v: ext(nets.phi_sigma_dir(v))
        self.F = lambda v: ext(nets.phi_F_dir(v))
        self.ident = identity_net(model.d, self.depth)

    def build(self, dts, dWs, Js) -> ReluNetwork:
        net = None
        for k in range(self.K):
            step = sum_nets(
                [1.0, float(dts[k]), 1.0, 1.0],
                [self.ident, self.beta, self.sigma(dWs[k]), self.F(Js[k])],
            )
            net = step if net is None else compose_nets(step, net)
        return net


def compile_em_trajectory(model: PideModel, theta: ThetaIndex, K: int, t: float, s: float, seed: int) -> ReluNetwork:
    """Network whose realization at ``x`` is the Euler-Maruyama endpoint from ``(t, x)`` to ``s``."""
    if not 0.0 <= t <= s <= model.T:
        raise ValueError(f"need 0 <= t <= s <= T, got t={t}, s={s}")
    builder = _TrajectoryBuilder(model, K)
    dts, dWs, Js = _trajectory_draws(model, ThetaBatch.single(seed, theta), t, s, K)
    return builder.build(dts[0], dWs[0], Js[0])


# ---------------------------------------------------------------------------
# MLP estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledMlp:
    network: ReluNetwork
    predicted_depth: int
    predicted_width_bound: float
    c_deps: float
    scenario: ScenarioBinding
    predicted_dims: DimVector = field(repr=False)


class _MlpCompiler:
    def __init__(self, model: PideModel, binding: ScenarioBinding, log: DrawLog | None):
        self.model = model
        self.b = binding
        self.log = log
        self.traj = _TrajectoryBuilder(model, binding.K)
        self.shapes = coefficient_shapes(model, binding.K)
        self.L = len(self.shapes.trajectory)
        self.df = len(self.shapes.f)
        self.phi_f = model.nets.phi_f
        self.phi_g = model.nets.phi_g

    def _pad(self, p: int) -> ReluNetwork:
        return identity_net(1, p)

    def _trajectories(self, batch: ThetaBatch, t, s) -> list[ReluNetwork]:
        dts, dWs, Js = _trajectory_draws(self.model, batch, t, s, self.b.K, self.log)
        return [self.traj.build(dts[r], dWs[r], Js[r]) for r in range(len(batch))]

    def compile(self, level: int, batch: ThetaBatch, t: float) -> ReluNetwork:
        """Level-``level`` network at time ``t`` for the single index in ``batch``."""
        if level == 0:
            return relunet.zero_net(dim_compose(self.shapes.g, self.shapes.trajectory))
        m, T, L, df = self.b.m, self.model.T, self.L, self.df
        coeffs: list[float] = []
        terms: list[ReluNetwork] = []

        M = m**level
        kids = batch.children(0, range(-1, -M - 1, -1))
        pad = self._pad(level * (df - 2 + L) + 1)
        for X in self._trajectories(kids, t, T):
            terms.append(compose_nets(pad, compose_nets(self.phi_g, X)))
            coeffs.append(1.0 / M)

        for ell in range(level):
            M = m ** (level - ell)
            kids = batch.children(ell, range(1, M + 1))
            frac = kids.uniforms(Purpose.TIME_FRACTION, 0)
            if self.log is not None:
                self.log.add_times(kids, frac)
            taus = mathfrak_T(np.full(M, t), frac, T)
            paths = self._trajectories(kids, t, taus)
            kids_minus = batch.children(-ell, range(1, M + 1)) if ell >= 1 else None
            for i in range(M):
                tau = float(taus[i])
                inner = compose_nets(self.compile(ell, kids.take([i]), tau), paths[i])
                if ell < level - 1:
                    inner = compose_nets(self._pad((level - 1 - ell) * (df - 2 + L) + 1), inner)
                terms.append(compose_nets(self.phi_f, inner))
                coeffs.append((T - t) / M)
                if ell >= 1:
                    minus = compose_nets(self.compile(ell - 1, kids_minus.take([i]), tau), paths[i])
                    minus = compose_nets(self._pad((level - ell) * (df - 2 + L) + 1), minus)
                    terms.append(compose_nets(self.phi_f, minus))
                    coeffs.append(-(T - t) / M)

        depth = terms[0].depth
        for term in terms:
            if term.depth != depth:
                raise AssertionError(f"summand depth {term.depth} differs from {depth} at level {level}")
        return sum_nets(coeffs, terms)


def compile_mlp(model: PideModel, binding: ScenarioBinding, *, ceiling: int | None = DEFAULT_PARAM_CEILING,
                log: DrawLog | None = None) -> CompiledMlp:
    """Compile the level-``n`` estimator of ``binding`` into one ReLU network on R^d."""
    if not 0.0 <= binding.t <= model.T:
        raise ValueError(f"t={binding.t} outside [0, T={model.T}]")
    shapes = coefficient_shapes(model, binding.K)
    dims = predicted_dims(shapes, binding.n, binding.m)
    if ceiling is not None and relunet.param_count(dims) > ceiling:
        raise ResourceLimitError(relunet.param_count(dims), ceiling)
    compiler = _MlpCompiler(model, binding, log)
    root = ThetaBatch.single(binding.master_seed, binding.root_theta)
    net = compiler.compile(binding.n, root, float(binding.t))
    depth = predicted_depth(binding.n, binding.K, len(shapes.beta), len(shapes.sigma), len(shapes.F),
                            len(shapes.f), len(shapes.g))
    return CompiledMlp(
        network=net,
        predicted_depth=depth,
        predicted_width_bound=shapes.c_deps * (3 * binding.m) ** binding.n,
        c_deps=shapes.c_deps,
        scenario=binding,
        predicted_dims=dims,
    )


# ---------------------------------------------------------------------------
# equivalence
# ---------------------------------------------------------------------------


def relative_deviation(a, b):
    """``|a - b| / (1 + |b|)``: relative for large values, absolute near zero."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / (1.0 + np.abs(b))


@dataclass(frozen=True)
class EquivalenceReport:
    points: np.ndarray
    estimator: np.ndarray
    network: np.ndarray
    tolerance: float

    @property
    def abs_dev(self) -> np.ndarray:
        return np.abs(self.network - self.estimator)

    @property
    def rel_dev(self) -> np.ndarray:
        return relative_deviation(self.network, self.estimator)

    @property
    def max_abs(self) -> float:
        return float(self.abs_dev.max(initial=0.0))

    @property
    def max_rel(self) -> float:
        return float(self.rel_dev.max(initial=0.0))

    @property
    def passed(self) -> bool:
        return self.max_rel <= self.tolerance

    def rows(self) -> list[dict]:
        return [
            {"point": i, "x": ";".join(repr(float(v)) for v in self.points[i]), "estimator": float(self.estimator[i]),
             "network": float(self.network[i]), "abs_dev": float(self.abs_dev[i]), "rel_dev": float(self.rel_dev[i])}
            for i in range(len(self.points))
        ]


def verify_equivalence(model: PideModel, binding: ScenarioBinding, points: Sequence, *, tolerance: float = 1e-6,
                       ceiling: int | None = DEFAULT_PARAM_CEILING, compiled: CompiledMlp | None = None,
                       networked: bool = True) -> EquivalenceReport:
    """Compare the compiled network with the estimator at each point under one scenario."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, model.d)
    compiled = compile_mlp(model, binding, ceiling=ceiling) if compiled is None else compiled
    est = mlp_values(model, binding.n, binding.m, binding.K, binding.t, pts, [binding.root_theta] * len(pts),
                     binding.master_seed, networked=networked)
    net = relunet.realize(compiled.network, pts)[:, 0]
    return EquivalenceReport(pts, est, net, tolerance)


def draw_log_mismatches(model: PideModel, binding: ScenarioBinding, *, ceiling: int | None = None) -> tuple[int, list[str]]:
    """Compile and estimate under draw logging; return (shared key count, differing keys)."""
    compile_log, estimate_log = DrawLog(), DrawLog()
    compile_mlp(model, binding, ceiling=ceiling, log=compile_log)
    mlp_values(model, binding.n, binding.m, binding.K, binding.t, np.zeros((1, model.d)), [binding.root_theta],
               binding.master_seed, log=estimate_log)
    shared = len(compile_log.times.keys() & estimate_log.times.keys())
    shared += len(compile_log.segments.keys() & estimate_log.segments.keys())
    missing = [f"segment on one side only: {k}" for k in compile_log.segments.keys() ^ estimate_log.segments.keys()]
    missing += [f"time only on one side: {k}" for k in compile_log.times.keys() ^ estimate_log.times.keys()]
    return shared, compile_log.consistent_with(estimate_log) + missing


def compile_report(compiled: CompiledMlp) -> dict:
    net = compiled.network
    return {
        "depth": net.depth,
        "predicted_depth": compiled.predicted_depth,
        "width": net.dims.sup_norm,
        "predicted_width_bound": compiled.predicted_width_bound,
        "c_deps": compiled.c_deps,
        "param_count": net.param_count,
        "stored_scalars": net.stored_scalars(),
        "nonzeros": net.nnz(),
        "dims_match_prediction": net.dims == compiled.predicted_dims,
    }
