"""Game construction, expression wiring, control grids and config files."""

import numpy as np
import pytest
from conftest import make_game, uniform_pair

from mfgz.game import (ConfigError, ControlPath, GameError, TimeMesh,
                       build_game, control_grid, eval_f, eval_terminal_cost,
                       load_config, parse_config, shipped_config_names)
from mfgz.measures import EmpiricalMeasure, quantize, QuantizationSpec


def test_control_grid_endpoints():
    grid = control_grid(((0.0, 1.0),), 2)
    assert grid.tolist() == [[0.0], [1.0]]


def test_control_grid_three_points():
    grid = control_grid(((0.0, 1.0),), 3)
    assert grid.ravel().tolist() == [0.0, 0.5, 1.0]


def test_control_grid_lexicographic_square():
    grid = control_grid(((0.0, 1.0), (0.0, 1.0)), 2)
    assert grid.tolist() == [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]


def test_control_grid_contains_corners():
    box = ((-1.0, 2.0), (0.5, 3.5))
    grid = control_grid(box, 4)
    rows = {tuple(r) for r in grid.tolist()}
    for c0 in (-1.0, 2.0):
        for c1 in (0.5, 3.5):
            assert (c0, c1) in rows


def test_control_grid_singleton():
    assert control_grid(((2.0, 2.0),), 1).tolist() == [[2.0]]
    with pytest.raises(GameError):
        control_grid(((0.0, 1.0),), 1)


def test_eval_f_paper_drift_at_origin():
    spec = make_game(f="1/(1+x1*x1) + feature(mean_sin) + u1 - 0.1*v1")
    nu = EmpiricalMeasure.uniform_atoms(np.array([-0.7, 0.7]))
    out = eval_f(spec, 0.0, 0.0, nu, 0.0, 0.0)
    assert out == pytest.approx([1.0], abs=1e-15)


def test_eval_f_zero_everywhere(rng):
    spec = make_game(f="0")
    for _ in range(10):
        nu = EmpiricalMeasure.uniform_atoms(rng.normal(size=3))
        assert eval_f(spec, rng.random(), rng.normal(), nu, 0.5, 0.5) == [0.0]


def test_eval_f_mean_feature():
    spec = make_game(f="feature(mean)")
    nu = EmpiricalMeasure.uniform_atoms(np.array([1.0, 3.0]))
    assert eval_f(spec, 0.0, 0.0, nu, 0.0, 0.0) == [2.0]


def test_terminal_cost_symmetric_zero():
    spec = make_game(m="sin(x1) - z1")
    ens = uniform_pair([-0.9, 0.9], [-0.4, 0.4])
    assert eval_terminal_cost(spec, ens, ens.x_measure.atoms) == pytest.approx(0.0, abs=1e-16)


def test_terminal_cost_mean():
    spec = make_game(m="x1")
    ens = uniform_pair([1.0, 3.0], [0.0])
    assert eval_terminal_cost(spec, ens, ens.x_measure.atoms) == 2.0


def test_terminal_cost_single_atoms():
    spec = make_game(m="sin(x1) - z1")
    ens = uniform_pair([np.pi / 2], [0.0])
    assert eval_terminal_cost(spec, ens, ens.x_measure.atoms) == pytest.approx(1.0)


def test_terminal_cost_length_mismatch():
    spec = make_game()
    ens = uniform_pair([0.0, 1.0], [0.0])
    with pytest.raises(GameError):
        eval_terminal_cost(spec, ens, np.zeros((3, 1)))


def test_terminal_cost_law_invariant(rng):
    spec = make_game(m="sin(x1)*z1 + x1*x1")
    atoms = rng.normal(size=6)
    zs = rng.normal(size=4)
    ens = uniform_pair(atoms, zs)
    base = eval_terminal_cost(spec, ens, ens.x_measure.atoms)
    for _ in range(20):
        perm = rng.permutation(6)
        ens_p = uniform_pair(atoms[perm], zs)
        assert eval_terminal_cost(spec, ens_p, ens_p.x_measure.atoms) == pytest.approx(
            base, abs=1e-12)


def test_expression_variable_validation():
    with pytest.raises(GameError):
        make_game(f="z1")  # target variable not visible to the drift
    with pytest.raises(GameError):
        make_game(m="u1")  # controls not visible to the terminal cost
    with pytest.raises(GameError):
        make_game(f="x2")  # out of range for dim 1
    with pytest.raises(GameError):
        make_game(f="feature(mean)", dim=2, m="x1")  # mean feature needs dim 1


def test_time_mesh_validation():
    with pytest.raises(GameError):
        TimeMesh(1.0, 1.0, 4)
    mesh = TimeMesh(0.0, 1.0, 4)
    assert mesh.tau == 0.25
    assert mesh.index_of(0.5) == 2
    with pytest.raises(GameError):
        mesh.index_of(0.3)


def test_control_path_box_validation():
    mesh = TimeMesh(0.0, 1.0, 2)
    with pytest.raises(GameError):
        ControlPath.constant(mesh, 2.0, ((0.0, 1.0),))


def test_parse_config_rejects_duplicates():
    with pytest.raises(ConfigError):
        parse_config("a = 1\na = 2")


def test_shipped_configs_all_build():
    names = shipped_config_names()
    assert {"example1_gaussian", "example2_dirac", "mean_variance",
            "vehicles", "nonseparable_quadratic"} <= set(names)
    for name in names:
        spec, defaults, _ = load_config(name)
        assert spec.horizon > 0
        assert len(defaults.grid_axes) in (1, spec.dim)


def test_config_missing_key():
    with pytest.raises(ConfigError):
        build_game({"horizon": "1"})


def test_config_unknown_name():
    with pytest.raises(ConfigError):
        load_config("no_such_config")


def test_example1_config_drift_value():
    spec, defaults, _ = load_config("example1_gaussian")
    mu = quantize(QuantizationSpec(defaults.x_law.family, defaults.x_law.params, 8))
    out = eval_f(spec, 0.0, 0.0, mu, 0.0, 0.0)
    assert out == pytest.approx([1.0], abs=1e-12)
