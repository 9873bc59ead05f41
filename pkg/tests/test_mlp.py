import math

import numpy as np
import pytest

from pidemlp import mlp
from pidemlp import model as M
from pidemlp import sde
from pidemlp.model import LevySpec, MatrixField, ScalarField, ScalarMap, VectorField
from pidemlp.randomness import ThetaBatch, ThetaIndex, sample_time_fraction


def jump_model(d=2, f=None, g=None, beta=None):
    G = VectorField.linear(np.eye(d))
    rng = np.random.default_rng(d)
    return M.make_model(
        d, 1.0, 2.0,
        beta=VectorField.affine(0.2 * rng.normal(size=(d, d)), 0.1 * rng.normal(size=d)) if beta is None else beta,
        sigma=MatrixField.affine(0.1 * rng.normal(size=(d, d, d)), 0.5 * np.eye(d)),
        jump_F=MatrixField.constant(0.3, d),
        jump_G=G,
        levy=LevySpec.gaussian_linear(1.0, np.zeros(d), 0.5, G),
        f=ScalarMap.affine(0.5, 0.1) if f is None else f,
        g=ScalarField.affine(rng.normal(size=d), 0.2) if g is None else g,
    )


def naive_mlp(model, n, m, K, t, x, theta, seed):
    """Scalar depth-first recursion written straight from the defining formula."""
    if n == 0:
        return 0.0
    T = model.T

    def endpoint(th, s):
        return sde.em_endpoint(model, sde.EmTrajectoryRequest(th, K, t, s, np.asarray(x)), seed)

    def f(u):
        return float(model.f(np.array([u]))[0])

    total = 0.0
    for i in range(1, m**n + 1):
        total += float(model.g(endpoint(theta.child(0, -i), T)[None])[0])
    value = total / m**n
    for ell in range(n):
        Mn = m ** (n - ell)
        acc = 0.0
        for i in range(1, Mn + 1):
            th = theta.child(ell, i)
            tau = t + (T - t) * sample_time_fraction(seed, th)
            X = endpoint(th, tau)
            acc += f(naive_mlp(model, ell, m, K, tau, X, th, seed))
            if ell >= 1:
                acc -= f(naive_mlp(model, ell - 1, m, K, tau, X, theta.child(-ell, i), seed))
        value += (T - t) / Mn * acc
    return value


# --- examples ------------------------------------------------------------------------


def test_level_zero_is_zero():
    res = mlp.mlp_estimate(jump_model(), mlp.MlpParams(0, 3, 2, 0.0, [1.0, 1.0], 5))
    assert res.value == 0.0
    assert res.evaluations == mlp.EvalCounters(0, 0, 0)


def test_const_affine_is_exact():
    model = M.const_affine_model(d=2)
    for n, m in [(1, 1), (2, 3), (3, 2)]:
        res = mlp.mlp_estimate(model, mlp.MlpParams(n, m, 3, 0.0, [0.5, -1.0], 11))
        assert abs(res.value - 3.0) <= 1e-12


def test_terminal_time_returns_g():
    model = jump_model()
    x = np.array([0.4, -1.2])
    for n in (1, 2, 3):
        res = mlp.mlp_estimate(model, mlp.MlpParams(n, 2, 3, 1.0, x, 1))
        assert res.value == pytest.approx(float(model.g(x[None])[0]), abs=1e-14)


def test_zero_nonlinearity_reduces_to_monte_carlo():
    model = jump_model(f=ScalarMap.linear(0.0))
    x = np.array([0.3, 0.1])
    n, m, K, seed = 2, 3, 4, 21
    root = ThetaIndex.root()
    res = mlp.mlp_estimate(model, mlp.MlpParams(n, m, K, 0.25, x, seed))
    kids = ThetaBatch.single(seed, root).children(0, range(-1, -m**n - 1, -1))
    ends = sde.em_endpoints(model, kids, 0.25, 1.0, np.tile(x, (m**n, 1)), K)
    assert res.value == pytest.approx(float(model.g(ends).mean()), abs=1e-13)


@pytest.mark.parametrize("n, m, K, t", [(1, 2, 2, 0.0), (2, 2, 3, 0.1), (3, 2, 2, 0.0), (2, 3, 2, 0.4)])
def test_batched_estimator_matches_naive_recursion(n, m, K, t):
    model = jump_model()
    x = np.array([0.7, -0.3])
    theta = ThetaIndex((0, 4))
    got = mlp.mlp_values(model, n, m, K, t, [x], [theta], 13)[0]
    want = naive_mlp(model, n, m, K, t, x, theta, 13)
    assert abs(got - want) <= 1e-12 * (1 + abs(want))


# --- counters ---------------------------------------------------------------------------


def _brute_counts(n, m):
    # direct enumeration of the recursion tree
    if n == 0:
        return 0, 0, 0
    p, f, g = m**n, 0, m**n
    for ell in range(n):
        Mn = m ** (n - ell)
        p += Mn
        a = _brute_counts(ell, m)
        f += Mn
        p, f, g = p + Mn * a[0], f + Mn * a[1], g + Mn * a[2]
        if ell >= 1:
            b = _brute_counts(ell - 1, m)
            f += Mn
            p, f, g = p + Mn * b[0], f + Mn * b[1], g + Mn * b[2]
    return p, f, g


def test_counters_examples():
    assert [mlp.path_count(n, 5) for n in range(6)] == [0, 10, 105, 1105, 11580, 121330]
    assert mlp.evaluation_counts(3, 3) == mlp.EvalCounters(255, 159, 117)


@pytest.mark.parametrize("n, m", [(1, 1), (2, 2), (3, 3), (4, 2), (2, 5)])
def test_counters_agree_with_run_and_enumeration(n, m):
    rec = mlp.evaluation_counts(n, m)
    assert (rec.paths, rec.f_evals, rec.g_evals) == _brute_counts(n, m)
    assert rec.paths == mlp.path_count(n, m)
    res = mlp.mlp_estimate(jump_model(d=1), mlp.MlpParams(n, m, 1, 0.0, [0.0], 2))
    assert res.evaluations == rec
    assert res.depth_reached == n


# --- bound ---------------------------------------------------------------------------------


def test_error_bound_values():
    expect = 6 * math.exp(0.5) * math.exp(24) * math.sqrt(2)
    assert mlp.mlp_error_bound(2, 1, 1.0, 1, 1, [0.0]) == pytest.approx(expect, rel=1e-14)
    assert mlp.mlp_error_bound(2, 1, 1.0, 1, 1, [0.0]) == pytest.approx(3.705e11, rel=1e-3)
    c, T, m = 2.0, 1.0, 4
    ratio = mlp.mlp_error_bound(c, 2, T, 3, m, [1, 1]) / mlp.mlp_error_bound(c, 2, T, 2, m, [1, 1])
    assert ratio == pytest.approx(m**-0.5 * math.exp(12 * c * T), rel=1e-12)
    with pytest.raises(ValueError):
        mlp.mlp_error_bound(1.5, 1, 1.0, 1, 1, [0.0])


# --- reproducibility -----------------------------------------------------------------------


def test_bitwise_reproducible_and_worker_independent():
    model = jump_model()
    thetas = [ThetaIndex((r,)) for r in range(6)]
    xs = np.random.default_rng(0).normal(size=(6, 2))
    a = mlp.mlp_values(model, 3, 3, 2, 0.0, xs, thetas, 8)
    b = mlp.mlp_values(model, 3, 3, 2, 0.0, xs, thetas, 8)
    c = mlp.mlp_values_parallel(model, 3, 3, 2, 0.0, xs, thetas, 8, workers=3)
    assert np.array_equal(a, b) and np.array_equal(a, c)
    singles = [mlp.mlp_values(model, 3, 3, 2, 0.0, xs[q:q + 1], thetas[q:q + 1], 8)[0] for q in range(6)]
    assert np.array_equal(a, singles)
    assert not np.array_equal(a, mlp.mlp_values(model, 3, 3, 2, 0.0, xs, thetas, 9))


def test_convergence_study_const_affine():
    model = M.const_affine_model(d=1)
    rows = mlp.convergence_study(model, "const_affine", [1, 2, 3], 20, seed=3, timing=False)
    assert [r.K for r in rows] == [1, 4, 9]
    assert all(r.rmse <= 1e-12 for r in rows)
    assert all(r.wall_time_s is None for r in rows)


def test_params_validation():
    with pytest.raises(ValueError):
        mlp.MlpParams(-1, 1, 1, 0.0, [0.0], 0)
    with pytest.raises(ValueError):
        mlp.MlpParams(1, 0, 1, 0.0, [0.0], 0)
    with pytest.raises(ValueError):
        mlp.mlp_estimate(jump_model(), mlp.MlpParams(1, 1, 1, 2.0, [0.0, 0.0], 0))
