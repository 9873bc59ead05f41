import math

import numpy as np
import pytest

from pidemlp import compiler as C
from pidemlp import model as M
from pidemlp import relunet as R
from pidemlp import sde
from pidemlp.model import ConfigError
from pidemlp.randomness import ThetaIndex

import scenarios


def binding(n, m, K, t=0.0, seed=5, theta=(0,)):
    return C.ScenarioBinding(seed, ThetaIndex(theta), t, n, m, K)


# --- piecewise-linear nonlinearities ---------------------------------------------------


def test_pl_network_reproduces_affine():
    net = C.build_pl_f_network(lambda w: w, 1.0, 2.0, 0.3)
    assert abs(R.realize(net, np.array([5.3]))[0] - 5.3) <= 1e-12
    xs = np.linspace(-10, 10, 101)[:, None]
    assert np.abs(R.realize(net, xs)[:, 0] - xs[:, 0]).max() <= 1e-12


def test_pl_network_abs_is_exact():
    net = C.build_pl_f_network(abs, 1.0, 1.0, 1.0)
    xs = np.linspace(-7, 7, 57)[:, None]
    assert np.abs(R.realize(net, xs)[:, 0] - np.abs(xs[:, 0])).max() <= 1e-12


def test_pl_network_sin_error_and_slope():
    h = math.pi / 16
    net = C.build_pl_f_network(math.sin, 1.0, math.pi, h)
    offsets = np.random.default_rng(0).uniform(0, 1, 10_000)
    xs = -math.pi + offsets * 2 * math.pi
    err = np.abs(R.realize(net, xs[:, None])[:, 0] - np.sin(xs)).max()
    assert err <= h
    grid = np.linspace(-8, 8, 4001)
    vals = R.realize(net, grid[:, None])[:, 0]
    assert np.abs(np.diff(vals) / np.diff(grid)).max() <= 1.0 + 1e-12


def test_pl_network_errors():
    with pytest.raises(ValueError):
        C.build_pl_f_network(lambda w: 1.0 / w if w else math.inf, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        C.build_pl_f_network(lambda w: w, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        C.build_pl_f_network(lambda w: 3 * w, 1.0, 1.0, 0.5)


# --- formulas ---------------------------------------------------------------------------


def test_predicted_depth_examples():
    assert C.predicted_depth(0, 1, 3, 3, 3, 3, 3) == 5
    assert C.predicted_depth(1, 2, 3, 3, 3, 3, 3) == 13
    assert C.predicted_depth(2, 1, 3, 3, 3, 4, 3) == 15
    assert C.predicted_depth(1, 1, 3, 3, 3, 3, 3) == 9
    # F participates in the max
    assert C.predicted_depth(0, 1, 3, 3, 5, 3, 3) == 7
    with pytest.raises(ValueError):
        C.predicted_depth(0, 1, 2, 3, 3, 3, 3)


def test_envelope_ratios():
    c, delta = 2.0, 0.5
    env = C.theorem_param_envelope(c, 3, 0.2, delta, 1.0)
    assert C.theorem_param_envelope(c, 6, 0.2, delta, 1.0) / env == pytest.approx(2 ** (3 * c + 12 * c**2 + 2 * c * (6 + delta)), rel=1e-12)
    assert C.theorem_param_envelope(c, 3, 0.1, delta, 1.0) / env == pytest.approx(2 ** (6 * c + 6 + delta), rel=1e-12)
    for delta in (1e-6, 0.5, 1 - 1e-6):
        assert math.isfinite(C.theorem_param_envelope(c, 2, 0.5, delta, 1.0))
    with pytest.raises(ValueError):
        C.theorem_param_envelope(c, 2, 1.5, 0.5, 1.0)


# --- trajectories -------------------------------------------------------------------------


@pytest.mark.parametrize("d, K, t, s", [(1, 3, 0.0, 1.0), (2, 4, 0.1, 0.8), (3, 2, 0.3, 0.45)])
def test_trajectory_network_equals_em(d, K, t, s):
    model = scenarios.networked_linear_exp(d)
    theta = ThetaIndex((0, 2, -1))
    net = C.compile_em_trajectory(model, theta, K, t, s, 9)
    xs = np.random.default_rng(d).normal(size=(20, d))
    for x in xs:
        want = sde.em_endpoint(model, sde.EmTrajectoryRequest(theta, K, t, s, x), 9)
        got = R.realize(net, x)
        assert np.abs(got - want).max() <= 1e-8 * (1 + np.linalg.norm(want))
    shapes = C.coefficient_shapes(model, K)
    nets = model.nets
    zero = np.zeros(d)
    depths = [nets.phi_beta.depth, nets.phi_sigma_dir(zero).depth, nets.phi_F_dir(zero).depth]
    assert net.depth == K * (max(depths) - 1) + 1
    widths = [nets.phi_beta.dims.sup_norm, nets.phi_sigma_dir(zero).dims.sup_norm, nets.phi_F_dir(zero).dims.sup_norm]
    assert net.dims.sup_norm <= 2 * d + sum(widths)
    assert net.dims == shapes.trajectory


def test_trajectory_requires_networks():
    model = scenarios.networked_linear_exp(1)
    bare = M.PideModel(1, 1.0, 2.0, model.beta, model.sigma, model.jump_F, model.jump_G, model.levy, model.f, model.g)
    with pytest.raises(ConfigError):
        C.compile_em_trajectory(bare, ThetaIndex.root(), 2, 0.0, 1.0, 1)
    with pytest.raises(ConfigError):
        C.compile_mlp(bare, binding(1, 1, 1))


# --- full estimator -----------------------------------------------------------------------


def test_level_zero_compiles_to_zero():
    model = scenarios.networked_linear_exp(2)
    rep = C.verify_equivalence(model, binding(0, 2, 2), np.random.default_rng(0).normal(size=(20, 2)))
    assert rep.max_abs == 0.0 and rep.passed
    assert np.all(rep.network == 0.0)


def test_const_affine_compiles_to_constant():
    model = M.const_affine_model(d=2)
    rep = C.verify_equivalence(model, binding(1, 1, 1), np.random.default_rng(1).normal(size=(20, 2)))
    assert np.abs(rep.network - 3.0).max() <= 1e-12
    assert np.abs(rep.estimator - 3.0).max() <= 1e-12


def test_linear_exp_equivalence():
    model = scenarios.networked_linear_exp(2)
    pts = np.random.default_rng(2).normal(size=(20, 2))
    rep = C.verify_equivalence(model, binding(2, 2, 2), pts)
    assert rep.max_rel <= 1e-6
    assert rep.passed
    assert len(rep.rows()) == 20


def test_equivalence_at_interior_time_and_nonroot_index():
    model = scenarios.networked_linear_exp(1)
    pts = np.random.default_rng(3).normal(size=(10, 1))
    rep = C.verify_equivalence(model, binding(2, 2, 3, t=0.35, theta=(4, -1)), pts)
    assert rep.max_rel <= 1e-6


def test_structure_matches_prediction():
    model = scenarios.networked_linear_exp(2)
    for n, m, K in [(1, 1, 1), (1, 3, 2), (2, 2, 2), (3, 1, 3)]:
        compiled = C.compile_mlp(model, binding(n, m, K))
        net = compiled.network
        assert net.depth == compiled.predicted_depth
        assert net.dims == compiled.predicted_dims
        assert net.dims.sup_norm <= compiled.predicted_width_bound
        assert net.param_count == net.stored_scalars()
        report = C.compile_report(compiled)
        assert report["dims_match_prediction"]


def test_draw_logs_agree():
    model = scenarios.networked_linear_exp(2)
    shared, mismatches = C.draw_log_mismatches(model, binding(2, 2, 2, t=0.1))
    assert shared > 0
    assert mismatches == []


def test_ceiling_refuses_with_predicted_size():
    model = scenarios.networked_linear_exp(2)
    with pytest.raises(C.ResourceLimitError) as info:
        C.compile_mlp(model, binding(3, 3, 3), ceiling=1000)
    expected = R.param_count(C.predicted_dims(C.coefficient_shapes(model, 3), 3, 3))
    assert info.value.predicted_params == expected
    assert str(expected) in str(info.value)


def test_relative_deviation():
    assert C.relative_deviation(1.0, 0.0) == 1.0
    assert C.relative_deviation(101.0, 100.0) == pytest.approx(1 / 101)
