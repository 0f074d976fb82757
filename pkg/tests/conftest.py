import copy
import json

import numpy as np
import pytest

from quantaw import loop, sdp, synthesis, certify


def random_stable_loop(seed, n_p=2, n_c=2, n_u=1, n_y=1, radius=0.8, theta=0.5):
    """Random output-feedback loop rescaled so rho(A_CL) = radius.

    Scaling A_p, B_p, A_c, B_c by a common factor scales every block of
    the closed-loop matrix by that factor, so the spectral radius can be
    dialed exactly.
    """
    rng = np.random.default_rng(seed)
    while True:
        A_p = rng.standard_normal((n_p, n_p))
        B_p = rng.standard_normal((n_p, n_u))
        C_p = rng.standard_normal((n_y, n_p))
        A_c = rng.standard_normal((n_c, n_c))
        B_c = rng.standard_normal((n_c, n_y))
        C_c = rng.standard_normal((n_u, n_c))
        D_c = rng.standard_normal((n_u, n_y))
        plant = loop.PlantModel(A=A_p, B=B_p, C=C_p)
        ctrl = loop.ControllerModel(A=A_c, B=B_c, C=C_c, D=D_c)
        cl = loop.assemble_closed_loop(plant, ctrl, loop.QuantizerSpec(np.full(n_u, theta)))
        rho = sdp.spectral_radius(cl.A)
        if rho > 1e-6:
            break
    a = radius / rho
    plant = loop.PlantModel(A=a * A_p, B=a * B_p, C=C_p)
    ctrl = loop.ControllerModel(A=a * A_c, B=a * B_c, C=C_c, D=D_c)
    return loop.assemble_closed_loop(plant, ctrl, loop.QuantizerSpec(np.full(n_u, theta)))


def random_iterate(seed, cl, psd=True):
    """Random synthesis point with P > 0 (no feasibility implied)."""
    rng = np.random.default_rng(seed)
    n, n_u = cl.n, cl.n_inputs
    G = rng.standard_normal((n, n))
    P = G @ G.T + 0.1 * np.eye(n) if psd else 0.5 * (G + G.T)
    Gu = rng.standard_normal((n, n))
    U = Gu @ Gu.T
    from quantaw import lmi
    return lmi.SynthesisIterate(
        tau=float(rng.uniform(0.05, 0.95)),
        P=P,
        E=rng.standard_normal((cl.n_controller, n_u)),
        S1=rng.uniform(0.0, 2.0, n_u),
        S2=rng.uniform(0.0, 2.0, n_u),
        U=U,
    )


# hand-picked loop with an unstable plant (rho(A_p) = 1.2): the open
# quantization deadzone is then unstable, which keeps the trace
# objective bounded and synthesis convergent in a couple of seconds
TINY_PLANT = dict(A=[[1.2]], B=[[1.0]], C=[[1.0]])
TINY_CONTROLLER = dict(A=[[0.1]], B=[[0.5]], C=[[-0.5]], D=[[-0.5]])


def tiny_problem_dict(theta=0.5, **synth_overrides):
    synth = {
        "epsilon": 1e-3,
        "k_max": 200,
        "tau_grid": [0.1, 0.9, 9],
        "u_structure": "free-psd",
        "objective": "trace-of-U",
        "delta": 1e-7,
    }
    synth.update(synth_overrides)
    # deep copies: schema tests mutate the returned dict in place
    return {
        "plant": copy.deepcopy(TINY_PLANT),
        "controller": copy.deepcopy(TINY_CONTROLLER),
        "theta": [theta],
        "synthesis": synth,
        "simulation": {"x0": [2.0, 0.0], "horizon": 40, "schedule": None},
    }


@pytest.fixture(scope="session")
def tiny_loop():
    plant = loop.PlantModel(**TINY_PLANT)
    ctrl = loop.ControllerModel(**TINY_CONTROLLER)
    return loop.assemble_closed_loop(plant, ctrl, loop.QuantizerSpec([0.5]))


@pytest.fixture(scope="session")
def tiny_config():
    return synthesis.SynthesisConfig(
        epsilon=1e-3, line_search=sdp.LineSearchConfig(0.1, 0.9, 9)
    )


@pytest.fixture(scope="session")
def tiny_synthesis(tiny_loop, tiny_config):
    """One shared synthesis run on the tiny loop: (E, iterate, trace)."""
    return synthesis.synthesize(tiny_loop, tiny_config)


@pytest.fixture(scope="session")
def tiny_certificate(tiny_loop, tiny_synthesis):
    _, iterate, _ = tiny_synthesis
    cert = certify.check_conditions(iterate, tiny_loop)
    assert cert.valid
    return cert


@pytest.fixture
def tiny_problem_path(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_problem_dict()))
    return str(path)
