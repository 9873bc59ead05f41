"""Problem definitions for semilinear jump-diffusion PIDEs.

All coefficient callables are *batched* over a leading axis:

==========  =======================  ==============
callable    input                    output
==========  =======================  ==============
beta        ``(N, d)``               ``(N, d)``
sigma       ``(N, d)``               ``(N, d, d)``
jump_F      ``(N, d)``               ``(N, d, d)``
jump_G      marks ``(N, d)``         ``(N, d)``
g           ``(N, d)``               ``(N,)``
f           any shape                same shape
==========  =======================  ==============

The jump coefficient is always evaluated in factored form
``gamma(y, z) = jump_F(y) @ jump_G(z)``.  Only finite-activity (compound
Poisson) Levy measures are supported; the compensator ``int G dnu`` is an
analytic input.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import ndtri

from . import relunet
from .randomness import RngStream, ThetaBatch, ThetaIndex, gaussians
from .relunet import ReluNetwork


class ConfigError(ValueError):
    """Model or run configuration is inconsistent."""


class AssumptionError(ValueError):
    """A coefficient returned a non-finite value at a sampled point."""


# ---------------------------------------------------------------------------
# coefficient kinds: batched callables that also know their network form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorField:
    """``x -> A x + b`` on R^k with values in R^l (kinds zero/constant/linear/affine)."""

    kind: str
    matrix: np.ndarray
    offset: np.ndarray

    @classmethod
    def zero(cls, d: int, out: int | None = None) -> VectorField:
        out = d if out is None else out
        return cls("zero", np.zeros((out, d)), np.zeros(out))

    @classmethod
    def constant(cls, value, d: int) -> VectorField:
        value = np.asarray(value, dtype=np.float64).reshape(-1)
        return cls("constant", np.zeros((value.size, d)), value)

    @classmethod
    def linear(cls, matrix) -> VectorField:
        a = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls("linear", a, np.zeros(a.shape[0]))

    @classmethod
    def affine(cls, matrix, offset) -> VectorField:
        a = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls("affine", a, np.asarray(offset, dtype=np.float64).reshape(a.shape[0]))

    def __call__(self, x):
        # explicit row-wise sums keep each row independent of the batch size
        return (np.asarray(x)[:, None, :] * self.matrix).sum(axis=-1) + self.offset

    def network(self) -> ReluNetwork:
        return relunet.affine_net(self.matrix, self.offset)


@dataclass(frozen=True)
class MatrixField:
    """``x -> M0 + sum_c x_c T[:, :, c]``, a d x d matrix depending affinely on x."""

    kind: str
    tensor: np.ndarray
    offset: np.ndarray

    @classmethod
    def zero(cls, d: int) -> MatrixField:
        return cls("zero", np.zeros((d, d, d)), np.zeros((d, d)))

    @classmethod
    def constant(cls, value, d: int) -> MatrixField:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = float(value) * np.eye(d)
        return cls("constant", np.zeros((d, d, d)), value.reshape(d, d))

    @classmethod
    def linear(cls, tensor) -> MatrixField:
        t = np.asarray(tensor, dtype=np.float64)
        return cls("linear", t, np.zeros(t.shape[:2]))

    @classmethod
    def affine(cls, tensor, offset) -> MatrixField:
        t = np.asarray(tensor, dtype=np.float64)
        return cls("affine", t, np.asarray(offset, dtype=np.float64).reshape(t.shape[:2]))

    def __call__(self, x):
        x = np.asarray(x)
        return (self.tensor * x[:, None, None, :]).sum(axis=-1) + self.offset

    def apply(self, x, v):
        """Batched ``M(x_n) @ v_n``."""
        return (self(x) * np.asarray(v)[:, None, :]).sum(axis=-1)

    def direction_network(self, v) -> ReluNetwork:
        v = np.asarray(v, dtype=np.float64)
        slope = np.einsum("abc,b->ac", self.tensor, v)
        return relunet.affine_net(slope, self.offset @ v)


@dataclass(frozen=True)
class ScalarField:
    """``x -> w . x + b`` on R^d (terminal conditions)."""

    kind: str
    weights: np.ndarray
    offset: float

    @classmethod
    def constant(cls, value: float, d: int) -> ScalarField:
        return cls("constant", np.zeros(d), float(value))

    @classmethod
    def linear(cls, weights) -> ScalarField:
        return cls("linear", np.asarray(weights, dtype=np.float64).reshape(-1), 0.0)

    @classmethod
    def affine(cls, weights, offset: float) -> ScalarField:
        return cls("affine", np.asarray(weights, dtype=np.float64).reshape(-1), float(offset))

    def __call__(self, x):
        return (np.asarray(x) * self.weights).sum(axis=-1) + self.offset

    def network(self) -> ReluNetwork:
        return relunet.affine_net(self.weights[None, :], [self.offset])


@dataclass(frozen=True)
class ScalarMap:
    """``u -> a u + b`` on R (nonlinearities of affine kind)."""

    kind: str
    slope: float
    offset: float

    @classmethod
    def constant(cls, value: float) -> ScalarMap:
        return cls("constant", 0.0, float(value))

    @classmethod
    def linear(cls, slope: float) -> ScalarMap:
        return cls("linear", float(slope), 0.0)

    @classmethod
    def affine(cls, slope: float, offset: float) -> ScalarMap:
        return cls("affine", float(slope), float(offset))

    def __call__(self, u):
        return self.slope * np.asarray(u, dtype=np.float64) + self.offset

    def network(self) -> ReluNetwork:
        return relunet.affine_net([[self.slope]], [self.offset])


@dataclass(frozen=True)
class GaussianMarks:
    """Jump marks ``mean + std * N(0, I)`` drawn from uniforms by inverse CDF."""

    mean: np.ndarray
    std: float

    def __call__(self, u):
        return self.mean + self.std * ndtri(u)


@dataclass(frozen=True)
class ConstantMarks:
    value: np.ndarray

    def __call__(self, u):
        return np.broadcast_to(self.value, np.shape(u)).copy()


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LevySpec:
    """Finite-activity Levy measure ``nu = intensity * law(mark)``.

    ``jump_sampler`` maps uniforms of shape ``(N, d)`` to marks ``(N, d)``.
    """

    dim: int
    intensity: float = 0.0
    jump_sampler: Callable | None = None
    g_mean: np.ndarray | None = None
    g_second_moment_bound: float = 0.0

    def __post_init__(self):
        if self.intensity < 0:
            raise ConfigError(f"intensity must be >= 0, got {self.intensity}")
        if self.g_second_moment_bound < 0:
            raise ConfigError("g_second_moment_bound must be >= 0")
        g_mean = np.zeros(self.dim) if self.g_mean is None else np.asarray(self.g_mean, dtype=np.float64)
        if g_mean.shape != (self.dim,):
            raise ConfigError(f"g_mean must have shape ({self.dim},), got {g_mean.shape}")
        if self.intensity == 0 and np.any(g_mean != 0):
            raise ConfigError("a zero-intensity Levy measure must have g_mean = 0")
        if self.intensity > 0 and self.jump_sampler is None:
            raise ConfigError("positive intensity requires a jump_sampler")
        object.__setattr__(self, "g_mean", g_mean)

    @classmethod
    def none(cls, d: int) -> LevySpec:
        return cls(dim=d)

    @classmethod
    def gaussian_linear(cls, intensity: float, mean, std: float, G: VectorField) -> LevySpec:
        """Gaussian marks pushed through an affine ``G``; moments in closed form."""
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        first = G.matrix @ mean + G.offset
        second = float(first @ first + std**2 * np.sum(G.matrix**2))
        return cls(
            dim=mean.size,
            intensity=float(intensity),
            jump_sampler=GaussianMarks(mean, float(std)),
            g_mean=intensity * first,
            g_second_moment_bound=intensity * second,
        )


@dataclass(frozen=True)
class NetworkCoefficientSet:
    phi_beta: ReluNetwork
    phi_sigma_dir: Callable[[np.ndarray], ReluNetwork]
    phi_F_dir: Callable[[np.ndarray], ReluNetwork]
    phi_g: ReluNetwork
    phi_f: ReluNetwork


@dataclass(frozen=True)
class PideModel:
    d: int
    T: float
    c: float
    beta: Callable
    sigma: Callable
    jump_F: Callable
    jump_G: Callable
    levy: LevySpec
    f: Callable
    g: Callable
    nets: NetworkCoefficientSet | None = None
    exactly_networked: bool = False
    name: str = "custom"
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.c < 2:
            raise ConfigError(f"c must be >= 2, got {self.c}")
        if self.levy.dim != self.d:
            raise ConfigError("Levy spec dimension does not match d")

    def gamma(self, y, z):
        return (self.jump_F(y) * self.jump_G(z)[:, None, :]).sum(axis=-1)

    def sigma_apply(self, x, v):
        return (self.sigma(x) * v[:, None, :]).sum(axis=-1)

    def F_apply(self, x, v):
        return (self.jump_F(x) * v[:, None, :]).sum(axis=-1)


def networks_from_kinds(beta, sigma, jump_F, g, f) -> NetworkCoefficientSet:
    return NetworkCoefficientSet(
        phi_beta=beta.network(),
        phi_sigma_dir=sigma.direction_network,
        phi_F_dir=jump_F.direction_network,
        phi_g=g.network(),
        phi_f=f.network(),
    )


def make_model(d, T, c, beta, sigma, jump_F, jump_G, levy, f, g, name="custom", networked=True, **meta):
    """Build a model from coefficient kinds, attaching exact network forms."""
    nets = networks_from_kinds(beta, sigma, jump_F, g, f) if networked else None
    return PideModel(
        d=d, T=float(T), c=float(c), beta=beta, sigma=sigma, jump_F=jump_F, jump_G=jump_G,
        levy=levy, f=f, g=g, nets=nets, exactly_networked=networked, name=name, meta=meta,
    )


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------


class BenchmarkId(str, enum.Enum):
    CONST_AFFINE = "const_affine"
    LINEAR_EXP = "linear_exp"

    @classmethod
    def parse(cls, value) -> BenchmarkId:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"constaffine": "const_affine", "linearexp": "linear_exp"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown benchmark id {value!r}") from None


def const_affine_model(d=1, g0=2.0, f0=1.0, T=1.0, c=2.0, sigma=1.0, levy=None, beta=None) -> PideModel:
    """Constant terminal value and constant nonlinearity; any dynamics."""
    levy = LevySpec.none(d) if levy is None else levy
    return make_model(
        d, T, c,
        beta=VectorField.zero(d) if beta is None else beta,
        sigma=MatrixField.constant(sigma, d),
        jump_F=MatrixField.constant(1.0, d),
        jump_G=VectorField.linear(np.eye(d)),
        levy=levy,
        f=ScalarMap.constant(f0),
        g=ScalarField.constant(g0, d),
        name="const_affine",
        benchmark=BenchmarkId.CONST_AFFINE,
    )


def linear_exp_model(d=1, weights=None, offset=0.0, T=1.0, c=2.0, sigma=None, jump_F=None,
                     jump_G=None, levy=None) -> PideModel:
    """Affine terminal value, ``f(u) = u``, martingale dynamics: ``u = g(x) e^{T-t}``."""
    weights = np.ones(d) if weights is None else np.asarray(weights, dtype=np.float64)
    sigma = MatrixField.constant(1.0, d) if sigma is None else sigma
    if not isinstance(sigma, MatrixField):
        sigma = MatrixField.constant(sigma, d)
    return make_model(
        d, T, c,
        beta=VectorField.zero(d),
        sigma=sigma,
        jump_F=MatrixField.constant(1.0, d) if jump_F is None else jump_F,
        jump_G=VectorField.linear(np.eye(d)) if jump_G is None else jump_G,
        levy=LevySpec.none(d) if levy is None else levy,
        f=ScalarMap.linear(1.0),
        g=ScalarField.affine(weights, offset),
        name="linear_exp",
        benchmark=BenchmarkId.LINEAR_EXP,
    )


def _probe_points(d: int, count: int = 8) -> np.ndarray:
    batch = ThetaBatch.from_thetas(20240611, [ThetaIndex((-99, k)) for k in range(count)])
    return 3.0 * gaussians(batch, 0, d)


def _check_benchmark(model: PideModel, bid: BenchmarkId) -> None:
    xs = _probe_points(model.d)
    us = np.linspace(-5.0, 5.0, 7)
    if bid is BenchmarkId.CONST_AFFINE:
        if not np.allclose(model.g(xs), model.g(np.zeros((1, model.d)))[0], rtol=0, atol=1e-12):
            raise ConfigError("const_affine benchmark requires a constant terminal condition g")
        if not np.allclose(model.f(us), model.f(np.zeros(1))[0], rtol=0, atol=1e-12):
            raise ConfigError("const_affine benchmark requires a constant nonlinearity f")
        return
    if np.any(model.beta(xs) != 0):
        raise ConfigError("linear_exp benchmark requires zero drift (beta == 0)")
    if not np.allclose(model.f(us), us, rtol=1e-12, atol=1e-12):
        raise ConfigError("linear_exp benchmark requires f(u) = u")
    x, y = xs[:4], xs[4:]
    mid = model.g(0.3 * x + 0.7 * y)
    lin = 0.3 * model.g(x) + 0.7 * model.g(y)
    if not np.allclose(mid, lin, rtol=1e-10, atol=1e-10):
        raise ConfigError("linear_exp benchmark requires an affine terminal condition g")


def benchmark_solution(model: PideModel, bid, t: float, x) -> float:
    """Closed-form solution value ``u(t, x)`` for a benchmark-compatible model."""
    bid = BenchmarkId.parse(bid)
    if not 0.0 <= t <= model.T:
        raise ConfigError(f"t={t} outside [0, T={model.T}]")
    _check_benchmark(model, bid)
    x = np.asarray(x, dtype=np.float64).reshape(1, model.d)
    if bid is BenchmarkId.CONST_AFFINE:
        g0 = float(model.g(x)[0])
        f0 = float(model.f(np.zeros(1))[0])
        return g0 + f0 * (model.T - t)
    return float(model.g(x)[0]) * math.exp(model.T - t)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    """Worst observed ratio (lhs / rhs) per inequality; ratio <= 1 means satisfied."""

    ratios: dict[str, float]
    sample_count: int
    not_checked: tuple[str, ...] = ("jump_pointwise_bound", "jacobian_determinant")
    tolerance: float = 1e-9

    @property
    def passed_by_check(self) -> dict[str, bool]:
        return {k: v <= 1.0 + self.tolerance for k, v in self.ratios.items()}

    @property
    def violated(self) -> list[str]:
        return [k for k, ok in self.passed_by_check.items() if not ok]

    @property
    def passed(self) -> bool:
        return not self.violated

    def as_dict(self) -> dict:
        return {
            "pass": self.passed,
            "ratios": dict(self.ratios),
            "violated": self.violated,
            "not_checked": list(self.not_checked),
            "sample_count": self.sample_count,
        }


def _finite(name: str, values, points) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(values.reshape(values.shape[0], -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise AssumptionError(f"{name} is not finite at point {np.asarray(points)[i].tolist()}")
    return values


def validate_assumptions(model: PideModel, sample_count: int, stream: RngStream) -> AssumptionReport:
    """Sampled check of the Lipschitz and growth-at-zero conditions.

    Point pairs are ``10 * N(0, I)``.  The jump part uses the bound
    ``int |(F(x)-F(y)) G(z)|^2 dnu <= |F(x)-F(y)|_2^2 * g_second_moment_bound``,
    so a reported jump contribution may overstate the true value.  The check
    is advisory: sampling cannot certify a global inequality.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    d, c, T = model.d, model.c, model.T
    batch = ThetaBatch.single(stream.master_seed, stream.theta).children(0, range(sample_count))
    x = 10.0 * gaussians(batch, 0, d)
    y = 10.0 * gaussians(batch, 1, d)
    w = 10.0 * gaussians(batch, 2, 2)
    m2 = model.levy.g_second_moment_bound

    dx2 = np.sum((x - y) ** 2, axis=1)
    db = _finite("beta", model.beta(x), x) - _finite("beta", model.beta(y), y)
    ds = _finite("sigma", model.sigma(x), x) - _finite("sigma", model.sigma(y), y)
    dF = _finite("jump_F", model.jump_F(x), x) - _finite("jump_F", model.jump_F(y), y)
    jump = np.linalg.norm(dF, ord=2, axis=(1, 2)) ** 2 * m2
    lhs = np.sum(db**2, axis=1) + np.sum(ds**2, axis=(1, 2)) + jump
    ratios = {"lipschitz_coefficients": float(np.max(lhs / (c * dx2)))}

    fw1 = _finite("f", model.f(w[:, 0]), w[:, :1])
    fw2 = _finite("f", model.f(w[:, 1]), w[:, 1:])
    ratios["lipschitz_f"] = float(np.max((fw1 - fw2) ** 2 / (c * (w[:, 0] - w[:, 1]) ** 2)))

    gx = _finite("g", model.g(x), x)
    gy = _finite("g", model.g(y), y)
    ratios["lipschitz_g"] = float(np.max((gx - gy) ** 2 / (c * d**c / T * dx2)))

    zero = np.zeros((1, d))
    b0 = _finite("beta", model.beta(zero), zero)[0]
    s0 = _finite("sigma", model.sigma(zero), zero)[0]
    F0 = _finite("jump_F", model.jump_F(zero), zero)[0]
    f0 = float(_finite("f", model.f(np.zeros(1)), zero)[0])
    g0 = float(_finite("g", model.g(zero), zero)[0])
    growth = (
        b0 @ b0 + np.sum(s0**2) + np.linalg.norm(F0, ord=2) ** 2 * m2
        + T**3 * (abs(f0) + 1.0) ** 2 + T * g0**2
    )
    ratios["growth_at_zero"] = float(growth / (c * d**c))
    return AssumptionReport(ratios=ratios, sample_count=sample_count)


def check_networks(model: PideModel, n_points: int = 100, n_directions: int = 10, seed: int = 7) -> float:
    """Largest scaled deviation ``|R(phi)(x) - coef(x)| / (1 + |coef(x)|)`` over all nets."""
    if model.nets is None:
        raise ConfigError("model has no network coefficients")
    nets, d = model.nets, model.d
    root = ThetaBatch.single(seed, ThetaIndex((-98,)))
    x = gaussians(root.children(1, range(n_points)), 0, d)
    worst = 0.0

    def dev(a, b):
        a = np.asarray(a, dtype=np.float64).reshape(len(x), -1)
        b = np.asarray(b, dtype=np.float64).reshape(len(x), -1)
        scale = 1.0 + np.linalg.norm(b, axis=1)
        return float(np.max(np.linalg.norm(a - b, axis=1) / scale))

    worst = max(worst, dev(relunet.realize(nets.phi_beta, x), model.beta(x)))
    worst = max(worst, dev(relunet.realize(nets.phi_g, x), model.g(x)))
    u = x[:, :1] * 3.0
    worst = max(worst, dev(relunet.realize(nets.phi_f, u), model.f(u[:, 0])))
    dirs = gaussians(root.children(2, range(n_directions)), 0, d)
    ref_s = nets.phi_sigma_dir(np.zeros(d)).dims
    ref_F = nets.phi_F_dir(np.zeros(d)).dims
    for v in dirs:
        ns, nF = nets.phi_sigma_dir(v), nets.phi_F_dir(v)
        if ns.dims != ref_s or nF.dims != ref_F:
            raise ConfigError("directional networks must have a direction-independent architecture")
        vv = np.broadcast_to(v, x.shape)
        worst = max(worst, dev(relunet.realize(ns, x), model.sigma_apply(x, vv)))
        worst = max(worst, dev(relunet.realize(nF, x), model.F_apply(x, vv)))
    return worst


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def _vector_field(spec: dict | None, d: int, where: str) -> VectorField:
    spec = {"kind": "zero"} if spec is None else spec
    kind = spec.get("kind")
    try:
        if kind == "zero":
            return VectorField.zero(d)
        if kind == "constant":
            return VectorField.constant(spec["value"], d)
        if kind == "linear":
            return VectorField.linear(spec["matrix"])
        if kind == "affine":
            return VectorField.affine(spec["matrix"], spec["offset"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc.args[0]!r}") from None
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _matrix_field(spec: dict | None, d: int, where: str) -> MatrixField:
    spec = {"kind": "zero"} if spec is None else spec
    kind = spec.get("kind")
    try:
        if kind == "zero":
            return MatrixField.zero(d)
        if kind == "constant":
            return MatrixField.constant(spec["value"], d)
        if kind == "linear":
            return MatrixField.linear(spec["tensor"])
        if kind == "affine":
            return MatrixField.affine(spec["tensor"], spec["offset"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc.args[0]!r}") from None
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _scalar_field(spec: dict, d: int, where: str) -> ScalarField:
    kind = spec.get("kind")
    try:
        if kind == "zero":
            return ScalarField.constant(0.0, d)
        if kind == "constant":
            return ScalarField.constant(spec["value"], d)
        if kind == "linear":
            return ScalarField.linear(spec["weights"])
        if kind == "affine":
            return ScalarField.affine(spec["weights"], spec["offset"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc.args[0]!r}") from None
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _scalar_map(spec: dict, where: str) -> ScalarMap:
    kind = spec.get("kind")
    try:
        if kind == "zero":
            return ScalarMap.constant(0.0)
        if kind == "constant":
            return ScalarMap.constant(spec["value"])
        if kind == "linear":
            return ScalarMap.linear(spec["slope"])
        if kind == "affine":
            return ScalarMap.affine(spec["slope"], spec["offset"])
    except KeyError as exc:
        raise ConfigError(f"{where}: missing field {exc.args[0]!r}") from None
    raise ConfigError(f"{where}: unknown kind {kind!r}")


def _mark_vector(raw, d: int, where: str) -> np.ndarray:
    # a scalar is broadcast to every coordinate
    vec = np.asarray(raw, dtype=np.float64).reshape(-1)
    if vec.size == 1:
        vec = np.full(d, vec[0])
    if vec.size != d:
        raise ConfigError(f"{where}: expected {d} coordinates, got {vec.size}")
    return vec


def _levy(spec: dict | None, d: int, G: VectorField) -> LevySpec:
    if not spec or float(spec.get("intensity", 0.0)) == 0.0:
        return LevySpec.none(d)
    marks = spec.get("marks", {"kind": "gaussian", "mean": 0.0, "std": 1.0})
    intensity = float(spec["intensity"])
    if marks.get("kind") == "gaussian":
        mean = _mark_vector(marks.get("mean", 0.0), d, "model.levy.marks.mean")
        levy = LevySpec.gaussian_linear(intensity, mean, float(marks.get("std", 1.0)), G)
        if "g_mean" in spec:
            levy = LevySpec(d, intensity, levy.jump_sampler, spec["g_mean"],
                            float(spec.get("g_second_moment_bound", levy.g_second_moment_bound)))
        return levy
    if marks.get("kind") == "constant":
        value = _mark_vector(marks["value"], d, "model.levy.marks.value")
        gz = G(value[None, :])[0]
        return LevySpec(d, intensity, ConstantMarks(value), spec.get("g_mean", intensity * gz),
                        float(spec.get("g_second_moment_bound", intensity * gz @ gz)))
    raise ConfigError(f"model.levy.marks: unknown kind {marks.get('kind')!r}")


def model_from_config(cfg: dict) -> PideModel:
    """Build a networked model from a key/value tree (see README for the schema)."""
    if not isinstance(cfg, dict):
        raise ConfigError("model: expected a mapping")
    try:
        d = int(cfg["d"])
    except KeyError:
        raise ConfigError("model: missing field 'd'") from None
    T = float(cfg.get("T", 1.0))
    c = float(cfg.get("c", 2.0))
    bench = cfg.get("benchmark")
    if bench is not None:
        bid = BenchmarkId.parse(bench)
        if bid is BenchmarkId.CONST_AFFINE:
            cfg = {"beta": {"kind": "zero"}, "sigma": {"kind": "constant", "value": 1.0},
                   "f": {"kind": "constant", "value": cfg.get("f0", 1.0)},
                   "g": {"kind": "constant", "value": cfg.get("g0", 2.0)}, **cfg}
        else:
            cfg = {"beta": {"kind": "zero"}, "sigma": {"kind": "constant", "value": 1.0},
                   "f": {"kind": "linear", "slope": 1.0},
                   "g": {"kind": "linear", "weights": [1.0] * d}, **cfg}
    G = _vector_field(cfg.get("jump_G", {"kind": "linear", "matrix": np.eye(d).tolist()}), d, "model.jump_G")
    F = _matrix_field(cfg.get("jump_F", {"kind": "constant", "value": 1.0}), d, "model.jump_F")
    if "g" not in cfg or "f" not in cfg:
        raise ConfigError("model: fields 'f' and 'g' are required unless a benchmark is given")
    model = make_model(
        d, T, c,
        beta=_vector_field(cfg.get("beta"), d, "model.beta"),
        sigma=_matrix_field(cfg.get("sigma"), d, "model.sigma"),
        jump_F=F,
        jump_G=G,
        levy=_levy(cfg.get("levy"), d, G),
        f=_scalar_map(cfg["f"], "model.f"),
        g=_scalar_field(cfg["g"], d, "model.g"),
        name=BenchmarkId.parse(bench).value if bench is not None else str(cfg.get("name", "custom")),
        **({"benchmark": BenchmarkId.parse(bench)} if bench is not None else {}),
    )
    if bench is not None:
        _check_benchmark(model, BenchmarkId.parse(bench))
    return model
