"""File formats: schema validation, lossless round-trips, digests."""

import hashlib
import json

import numpy as np
import pytest

from quantaw import certify, examples, fileio, lmi, sdp, synthesis
from quantaw.errors import SchemaError

from conftest import tiny_problem_dict

# floats chosen to expose any formatting that is not shortest-roundtrip
AWKWARD = [0.1, 1e-17, 1.0000000000000002, -0.0, 1.7976931348623157e308]


def test_bundled_examples_parse():
    for name in examples.NAMES:
        pf = examples.load_example(name)
        cl = pf.assemble()
        assert cl.n == pf.plant.A.shape[0] + pf.controller.A.shape[0]
    with pytest.raises(KeyError):
        examples.example_bytes("example9")


def test_problem_round_trip(tmp_path):
    pf = examples.load_example("example2")
    path = tmp_path / "copy.json"
    fileio.save_problem(pf, path)
    back = fileio.load_problem(path)
    assert np.array_equal(back.plant.A, pf.plant.A)
    assert np.array_equal(back.controller.D, pf.controller.D)
    assert np.array_equal(back.quantizer.theta, pf.quantizer.theta)
    assert back.synthesis == pf.synthesis
    assert back.simulation.horizon == pf.simulation.horizon
    assert back.simulation.schedule == pf.simulation.schedule
    assert np.array_equal(back.simulation.x0, pf.simulation.x0)


def test_problem_schema_errors(tmp_path):
    def load(mutate):
        data = tiny_problem_dict()
        mutate(data)
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError) as exc:
            fileio.load_problem(path)
        return exc.value

    err = load(lambda d: d.pop("plant"))
    assert err.field == "plant"
    err = load(lambda d: d["plant"].pop("B"))
    assert err.field == "plant.B"
    err = load(lambda d: d["plant"].update(A=[["x", "y"]]))
    assert err.field == "plant.A"
    err = load(lambda d: d.update(theta=[-0.5]))
    assert err.field == "theta"
    err = load(lambda d: d["synthesis"].update(tau_grid=[0.1, 0.9]))
    assert err.field == "synthesis.tau_grid"
    err = load(lambda d: d["synthesis"].update(u_structure="diagonal"))
    assert err.field == "synthesis.u_structure"
    err = load(lambda d: d["synthesis"].update(k_max=0))
    assert err.field == "synthesis.k_max"
    err = load(lambda d: d.update(simulation={"x0": [1.0, 0.0], "horizon": 10,
                                              "schedule": [True] * 7}))
    assert err.field == "simulation.schedule"
    err = load(lambda d: d.update(simulation={"x0": [1.0, 0.0], "horizon": 10,
                                              "schedule": {"on_at": 4, "off_at": 2}}))
    assert err.field == "simulation.schedule.off_at"

    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(SchemaError) as exc:
        fileio.load_problem(path)
    assert exc.value.field == "file"


def test_result_round_trip_is_lossless(tmp_path):
    rf = fileio.ResultFile(
        E=np.array([AWKWARD[:3]]),
        P=np.array([[1.0, AWKWARD[1]], [AWKWARD[1], 2.0]]),
        S1=np.array([0.1, 1e-17, AWKWARD[2]]),
        S2=np.array([AWKWARD[2], 0.0, 2.0]),
        tau=0.1 + 0.2,  # 0.30000000000000004
        U=np.array([[AWKWARD[4], 0.0], [0.0, 1e-300]]),
        mu=-1e-17,
        varrho=None,
        omega_trace=np.array(AWKWARD),
        iterations=57,
        residuals={"lambda_max_main": -5.4e-4, "level": -0.0},
        tool_version="0.1.0",
        input_digest="ab" * 32,
    )
    path = tmp_path / "result.json"
    fileio.save_result(rf, path)
    back = fileio.load_result(path)
    assert np.array_equal(back.E, rf.E)
    assert np.array_equal(back.P, rf.P)
    assert np.array_equal(back.U, rf.U)
    assert back.tau == rf.tau
    assert back.mu == rf.mu and back.varrho is None
    assert np.array_equal(back.omega_trace, rf.omega_trace)
    assert back.iterations == rf.iterations
    assert back.residuals == rf.residuals
    assert back.tool_version == rf.tool_version
    assert back.input_digest == rf.input_digest
    # negative zero survives too
    assert np.signbit(back.residuals["level"])

    it = back.iterate()
    assert isinstance(it, lmi.SynthesisIterate)
    assert it.tau == rf.tau and np.array_equal(it.P, rf.P)


def test_result_schema_errors(tmp_path):
    rf_dict = {
        "E": [[0.1]], "P": [[1.0]], "S1": [0.1], "S2": [0.1], "tau": 0.5,
        "U": [[1.0]], "mu": -0.01, "varrho": 0.01, "omega_trace": [1.0],
        "iterations": 3, "residuals": {}, "tool_version": "x", "input_digest": "y",
    }
    path = tmp_path / "r.json"

    def load(**patch):
        data = {**rf_dict, **patch}
        for key, val in list(patch.items()):
            if val is _MISSING:
                del data[key]
        path.write_text(json.dumps(data))
        with pytest.raises(SchemaError) as exc:
            fileio.load_result(path)
        return exc.value

    _MISSING = object()
    assert load(P=_MISSING).field == "P"
    assert load(tau="half").field == "tau"
    assert load(iterations=-1).field == "iterations"
    assert load(S1=[[0.1]]).field == "S1"


def test_certificate_round_trip(tmp_path, tiny_certificate):
    path = tmp_path / "cert.json"
    fileio.save_certificate(tiny_certificate, path, tool_version="0.1.0")
    back = fileio.load_certificate(path)
    assert back.valid
    assert back.tau == tiny_certificate.tau
    assert np.array_equal(back.P, tiny_certificate.P)
    assert np.array_equal(back.E, tiny_certificate.E)
    assert back.mu == tiny_certificate.mu
    assert back.varrho == tiny_certificate.varrho
    assert back.residuals == tiny_certificate.residuals
    assert back.margins == tiny_certificate.margins

    # violations survive the trip
    import dataclasses
    broken = dataclasses.replace(
        tiny_certificate, mu=None, varrho=None,
        violations=(certify.Violation("level", 0.25),),
    )
    fileio.save_certificate(broken, path, tool_version="0.1.0")
    back = fileio.load_certificate(path)
    assert not back.valid
    assert back.violations == (certify.Violation("level", 0.25),)
    assert back.mu is None


def test_file_digest(tmp_path):
    path = tmp_path / "blob.bin"
    payload = b"\x00\x01digest me\xff"
    path.write_bytes(payload)
    assert fileio.file_digest(path) == hashlib.sha256(payload).hexdigest()


def test_synthesis_settings_config():
    st = fileio.SynthesisSettings(epsilon=1e-3, tau_grid=(0.1, 0.9, 9))
    cfg = st.config()
    assert isinstance(cfg, synthesis.SynthesisConfig)
    assert cfg.epsilon == 1e-3
    assert cfg.line_search == sdp.LineSearchConfig(0.1, 0.9, 9)
    assert cfg.ustruct.kind == "free-psd"
    # overrides win, None overrides are ignored
    cfg = st.config(epsilon=None, k_max=7, tau_grid=(0.2, 0.4, 3))
    assert cfg.epsilon == 1e-3
    assert cfg.k_max == 7
    assert cfg.line_search.count == 3


def test_schedule_flags():
    sim = fileio.SimulationSettings(x0=np.zeros(2), horizon=6,
                                    schedule={"on_at": 2, "off_at": 4})
    assert list(sim.schedule_flags()) == [False, False, True, True, False, False]
    sim = fileio.SimulationSettings(x0=np.zeros(2), horizon=3, schedule={"on_at": 1})
    assert list(sim.schedule_flags()) == [False, True, True]
    sim = fileio.SimulationSettings(x0=np.zeros(2), horizon=3,
                                    schedule=[True, False, True])
    assert list(sim.schedule_flags()) == [True, False, True]
    sim = fileio.SimulationSettings(x0=np.zeros(2), horizon=3, schedule=None)
    assert sim.schedule_flags() is None
