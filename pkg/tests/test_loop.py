"""Loop assembly and simulation."""

import csv

import numpy as np
import pytest

from quantaw import loop
from quantaw.errors import AssemblyError

from conftest import TINY_CONTROLLER, TINY_PLANT, random_stable_loop


def test_assembled_blocks():
    plant = loop.PlantModel(**TINY_PLANT)
    ctrl = loop.ControllerModel(**TINY_CONTROLLER)
    cl = loop.assemble_closed_loop(plant, ctrl, loop.QuantizerSpec([0.5]))
    assert np.array_equal(cl.A, [[0.7, -0.5], [0.5, 0.1]])
    assert np.array_equal(cl.B, [[1.0], [0.0]])
    assert np.array_equal(cl.H, [[-0.5, -0.5]])
    assert np.array_equal(cl.R, [[0.0], [1.0]])
    assert cl.n == 2 and cl.n_plant == 1 and cl.n_controller == 1 and cl.n_inputs == 1


def test_input_matrix():
    cl = random_stable_loop(0)
    E = np.ones((cl.n_controller, cl.n_inputs))
    assert np.array_equal(cl.input_matrix(None), cl.B)
    assert np.allclose(cl.input_matrix(E), cl.B + cl.R @ E)
    with pytest.raises(AssemblyError):
        cl.input_matrix(np.ones((cl.n_controller + 1, cl.n_inputs)))


def test_dimension_mismatches_are_named():
    plant = loop.PlantModel(A=[[0.5]], B=[[1.0]], C=[[1.0]])
    ctrl = loop.ControllerModel(A=[[0.1]], B=[[0.2]], C=[[1.0]], D=[[0.0]])
    with pytest.raises(AssemblyError, match="plant.B"):
        loop.PlantModel(A=[[0.5]], B=[[1.0], [2.0]], C=[[1.0]])
    with pytest.raises(AssemblyError, match="controller.D"):
        loop.ControllerModel(A=[[0.1]], B=[[0.2]], C=[[1.0]], D=[[0.0], [0.0]])
    with pytest.raises(AssemblyError, match="controller.B"):
        # two measurement columns against a single plant output
        loop.assemble_closed_loop(
            plant,
            loop.ControllerModel(A=[[0.1]], B=[[0.2, 0.3]], C=[[1.0]], D=[[0.0, 0.0]]),
            loop.QuantizerSpec([0.5]),
        )
    with pytest.raises(AssemblyError, match="quantizer"):
        loop.assemble_closed_loop(plant, ctrl, loop.QuantizerSpec([0.5, 0.5]))


def test_simulate_shapes_and_flags(tiny_loop):
    traj = loop.simulate(tiny_loop, None, [2.0, 0.0], 25)
    assert traj.states.shape == (26, 2)
    assert traj.inputs_raw.shape == (26, 1)
    assert traj.inputs_quantized.shape == (26, 1)
    assert traj.compensation_active.shape == (26,)
    assert traj.horizon == 25
    assert not traj.compensation_active[-1]
    assert traj.compensation_active[:-1].all()


def test_simulate_schedule(tiny_loop):
    sched = np.zeros(10, dtype=bool)
    sched[3:7] = True
    E = np.array([[0.4]])
    traj = loop.simulate(tiny_loop, E, [2.0, 0.0], 10, schedule=sched)
    assert np.array_equal(traj.compensation_active[:-1], sched)
    with pytest.raises(AssemblyError):
        loop.simulate(tiny_loop, E, [2.0, 0.0], 10, schedule=np.ones(7, dtype=bool))


def test_step_matches_simulate(tiny_loop):
    E = np.array([[0.3]])
    x = np.array([1.7, -0.4])
    traj = loop.simulate(tiny_loop, E, x, 5)
    for j in range(5):
        x = loop.step(tiny_loop, E, x)
        assert np.array_equal(x, traj.states[j + 1])


def _ordered_matvec(M, v):
    # same fixed column-order accumulation the kernels document
    acc = np.zeros(M.shape[0])
    for k in range(v.shape[0]):
        acc += M[:, k] * v[k]
    return acc


def test_manual_rollout_agrees():
    cl = random_stable_loop(42, n_p=3, n_c=2)
    E = np.full((cl.n_controller, cl.n_inputs), 0.1)
    x = np.array([0.9, -1.1, 0.3, 0.0, 0.0])
    traj = loop.simulate(cl, E, x, 30)
    B_E = cl.input_matrix(E)
    for j in range(30):
        u = _ordered_matvec(cl.H, x)
        e = loop.psi(u, cl.quantizer)
        assert np.array_equal(traj.inputs_raw[j], u)
        x = _ordered_matvec(cl.A, x) + _ordered_matvec(B_E, e)
    assert np.array_equal(traj.states[30], x)


def test_uncompensated_ignores_E_rows(tiny_loop):
    # schedule all-off must match E=None exactly
    E = np.array([[5.0]])
    off = np.zeros(15, dtype=bool)
    a = loop.simulate(tiny_loop, E, [2.0, 0.0], 15, schedule=off)
    b = loop.simulate(tiny_loop, None, [2.0, 0.0], 15)
    assert np.array_equal(a.states, b.states)


def test_trajectory_csv_roundtrip(tmp_path, tiny_loop):
    traj = loop.simulate(tiny_loop, np.array([[0.25]]), [2.0, 0.0], 12)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["j", "x_1", "x_2", "u_raw_1", "u_q_1", "comp_active"]
    assert len(rows) == 14
    got = np.array([[float(v) for v in r[1:3]] for r in rows[1:]])
    assert np.array_equal(got, traj.states)  # repr round-trips exactly


def test_simulate_validation(tiny_loop):
    with pytest.raises(AssemblyError):
        loop.simulate(tiny_loop, None, [1.0, 2.0, 3.0], 5)
    with pytest.raises(ValueError):
        loop.simulate(tiny_loop, None, [1.0, 2.0], -1)
    traj = loop.simulate(tiny_loop, None, [1.0, 2.0], 0)
    assert traj.states.shape == (1, 2)
