"""Acceptance suite: one test and one verdict line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary under "acceptance criteria".
"""

import math

import numpy as np
import pytest

from pidemlp import cli, compiler, mlp, sde
from pidemlp import model as M
from pidemlp.model import LevySpec, MatrixField, ScalarField, ScalarMap, VectorField
from pidemlp.randomness import ThetaBatch, ThetaIndex

import acclog
import cliruns
import netlaws
import scenarios

GRID = [(n, m, K) for n in range(4) for m in (1, 2, 3) for K in (1, 2, 3)]
DIMS = (1, 2, 3)


@pytest.fixture(scope="module")
def compiled_grid():
    """Every (d, n, m, K) of the grid compiled once, with its 20-point equivalence report."""
    out = {}
    for d in DIMS:
        model = scenarios.networked_linear_exp(d)
        pts = np.random.default_rng(500 + d).normal(size=(20, d))
        for n, m, K in GRID:
            b = compiler.ScenarioBinding(100 + d, ThetaIndex.root(), 0.0, n, m, K)
            comp = compiler.compile_mlp(model, b, ceiling=None)
            out[d, n, m, K] = (comp, compiler.verify_equivalence(model, b, pts, compiled=comp))
    return out


def test_network_estimator_equivalence(compiled_grid):
    worst = max(rep.max_rel for _, rep in compiled_grid.values())
    bad = [key for key, (_, rep) in compiled_grid.items() if not rep.max_rel <= 1e-6]
    ok = acclog.record("1 network/estimator equivalence", not bad,
                       f"{len(compiled_grid)} configurations x 20 points, max rel dev {worst:.3e} (limit 1e-6)")
    assert ok, bad


def test_structural_formulas(compiled_grid):
    bad = []
    for key, (comp, _) in compiled_grid.items():
        net = comp.network
        if net.depth != comp.predicted_depth:
            bad.append((key, "depth", net.depth, comp.predicted_depth))
        if not net.dims.sup_norm <= comp.predicted_width_bound:
            bad.append((key, "width", net.dims.sup_norm, comp.predicted_width_bound))
        if net.param_count != net.stored_scalars():
            bad.append((key, "params", net.param_count, net.stored_scalars()))
    ratio = max(c.network.dims.sup_norm / c.predicted_width_bound for c, _ in compiled_grid.values())
    ok = acclog.record("2 structural formulas", not bad,
                       f"{len(compiled_grid)} configurations, depth/param equalities exact, "
                       f"max width/bound {ratio:.3f}")
    assert ok, bad


def test_network_algebra_laws():
    laws = [netlaws.law_compose, netlaws.law_sum, netlaws.law_affine, netlaws.law_identity, netlaws.law_extend,
            netlaws.law_compose_assoc, netlaws.law_sum_assoc, netlaws.law_triangle]
    results = {law.__name__: law(count=100) for law in laws}
    worst = max(w for w, _ in results.values())
    failures = sum(f for _, f in results.values())
    ok = acclog.record("3 network algebra laws", worst <= 1e-9 and failures == 0,
                       f"{len(laws)} laws x 100 instances, worst abs error {worst:.3e} (limit 1e-9), "
                       f"{failures} identity failures")
    assert ok, results


def test_mlp_convergence():
    workers = mlp.default_workers()
    levels = [1, 2, 3, 4, 5]
    lin = M.linear_exp_model(d=1, sigma=1.0)
    rows = mlp.convergence_study(lin, "linear_exp", levels, 200, seed=2024, x=[1.0], workers=workers)
    const = M.const_affine_model(d=1)
    crow = mlp.convergence_study(const, "const_affine", levels, 200, seed=2024, x=[1.0], workers=workers)
    rmse = {r.n: r.rmse for r in rows}
    checks = {
        "rmse5 < rmse2": rmse[5] < rmse[2],
        "rmse5 <= 0.15e": rmse[5] <= 0.15 * math.e,
        "const_affine <= 1e-10": all(r.rmse <= 1e-10 for r in crow),
        "rmse <= 1.2 bound": all(r.rmse <= 1.2 * r.bound for r in rows + crow),
    }
    table = ", ".join(f"n={r.n}:K={r.K}:{r.rmse:.4f}" for r in rows)
    ok = acclog.record("4 MLP convergence", all(checks.values()),
                       f"LinearExp RMSE {table}; limit {0.15 * math.e:.4f}; "
                       f"ConstAffine max {max(r.rmse for r in crow):.1e}")
    assert ok, checks


def test_jump_martingale():
    d = 2
    G = VectorField.linear(np.eye(d))
    model = M.make_model(
        d, 1.0, 2.0, beta=VectorField.zero(d), sigma=MatrixField.constant(0.0, d),
        jump_F=MatrixField.constant(1.0, d), jump_G=G,
        levy=LevySpec.gaussian_linear(1.0, [0.5, -0.3], 1.0, G),
        f=ScalarMap.linear(1.0), g=ScalarField.affine([1.0, 2.0], 0.5),
    )
    x = np.array([1.0, -0.5])
    gx = float(model.g(x[None])[0])
    failed = []
    for seed in range(100):
        mean, half = sde.exact_endpoint_martingale_check(model, 0.0, x, 100_000, 4, seed)
        if not abs(mean - gx) <= half:
            failed.append(seed)
    ok = acclog.record("5 jump martingale", len(failed) < 1,
                       f"{len(failed)}/100 seeds outside the 3-sigma interval (limit < 1%)")
    assert ok, failed


def test_second_moment_envelope():
    worst = 0.0
    bad = []
    for d in (1, 2, 4):
        models = {
            "linear_exp": scenarios.networked_linear_exp(d),
            "const_affine": M.const_affine_model(d=d, levy=LevySpec.gaussian_linear(
                1.0, np.zeros(d), 0.5, VectorField.linear(np.eye(d)))),
        }
        x = np.linspace(-1.0, 1.0, d)
        for name, model in models.items():
            batch = ThetaBatch.single(77, ThetaIndex.root()).children(0, range(10_000))
            X = sde.em_endpoints(model, batch, 0.0, model.T, np.tile(x, (10_000, 1)), 16)
            lhs = float(np.mean(d**model.c + np.sum(X**2, axis=1)))
            env = (d**model.c + x @ x) * math.exp(7 * model.c * model.T)
            worst = max(worst, lhs / env)
            if not lhs <= 1.05 * env:
                bad.append((name, d, lhs, env))
    ok = acclog.record("6 second-moment envelope", not bad,
                       f"d in (1, 2, 4), 1e4 paths, max moment/envelope {worst:.3e} (limit 1.05)")
    assert ok, bad


def test_polynomial_parameter_scaling():
    c = 2.0
    ds = [1, 2, 4, 8]
    counts, coeff_sizes = [], []
    for d in ds:
        model = scenarios.networked_linear_exp(d)
        comp = compiler.compile_mlp(model, compiler.ScenarioBinding(3, ThetaIndex.root(), 0.0, 2, 2, 2), ceiling=None)
        counts.append(comp.network.param_count)
        nets = model.nets
        zero = np.zeros(d)
        sizes = [nets.phi_beta.param_count, nets.phi_sigma_dir(zero).param_count,
                 nets.phi_F_dir(zero).param_count, nets.phi_f.param_count, nets.phi_g.param_count]
        coeff_sizes.append(max(sizes) / d**c)
    slope = float(np.polyfit(np.log(ds), np.log(counts), 1)[0])
    envelope = 3 * c + 12 * c**2 + 2 * c * 7
    # coefficient networks must stay within a fixed multiple of d^c
    b_fit = 4 * max(coeff_sizes)
    ok = acclog.record("7 polynomial parameter scaling", slope <= envelope,
                       f"param counts {counts}, log-log slope {slope:.3f} (limit {envelope:g}); "
                       f"coefficient nets within b d^c / 4 for b = {b_fit:.1f}")
    assert ok


def test_cli_determinism(tmp_path):
    config = cliruns.write_config(tmp_path)
    runs = {w: cliruns.run_all(tmp_path / f"w{w}", w, config) for w in (1, 2, 3)}
    repeat = cliruns.run_all(tmp_path / "w1-again", 1, config)
    bad = []
    for name in cli.SUBCOMMANDS:
        ref = runs[1][name]
        if ref[0] != 0 or not ref[1]:
            bad.append((name, "exit", ref[0]))
        if repeat[name] != ref or any(runs[w][name] != ref for w in (2, 3)):
            bad.append((name, "bytes"))
    files = sum(len(runs[1][name][1]) for name in cli.SUBCOMMANDS)
    ok = acclog.record("8 CLI determinism", not bad,
                       f"{len(cli.SUBCOMMANDS)} subcommands, {files} artifacts, identical for a rerun and "
                       f"workers 1/2/3")
    assert ok, bad
