"""Problem and result files.

JSON on disk, validated field by field so error messages pinpoint the
offending entry (``plant.B``, ``synthesis.tau_grid``, ...).  Floats pass
through Python's shortest-roundtrip repr in both directions, so
save/load is lossless bit for bit.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import lmi, sdp, synthesis
from .certify import Certificate, VerificationMargins, Violation
from .errors import SchemaError
from .loop import ControllerModel, PlantModel, QuantizerSpec, assemble_closed_loop


def file_digest(path):
    """Hex sha256 of a file's raw bytes."""
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _require(mapping, key, path):
    if not isinstance(mapping, dict):
        raise SchemaError(path or "file", "expected an object")
    if key not in mapping:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    return mapping[key]


def _matrix(value, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a rectangular numeric matrix") from None
    if arr.ndim != 2 or arr.size == 0:
        raise SchemaError(path, "expected a non-empty 2-d matrix")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(path, "matrix entries must be finite")
    return arr


def _vector(value, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a numeric vector") from None
    if arr.ndim != 1 or arr.size == 0:
        raise SchemaError(path, "expected a non-empty 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(path, "vector entries must be finite")
    return arr


def _number(value, path, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise SchemaError(path, "must be finite")
    if minimum is not None and value < minimum:
        raise SchemaError(path, f"must be >= {minimum}")
    if maximum is not None and value > maximum:
        raise SchemaError(path, f"must be <= {maximum}")
    return value


def _integer(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {type(value).__name__}")
    if minimum is not None and value < minimum:
        raise SchemaError(path, f"must be >= {minimum}")
    return value


@dataclass(frozen=True)
class SynthesisSettings:
    epsilon: float = 1e-4
    k_max: int = 2000
    tau_grid: tuple = (0.01, 0.99, 50)
    u_structure: str = "free-psd"
    objective: str = "trace-of-U"
    delta: float = 1e-7

    def config(self, **overrides):
        """Build the synthesis configuration, applying CLI-style overrides."""
        merged = {
            "epsilon": self.epsilon,
            "k_max": self.k_max,
            "tau_grid": self.tau_grid,
            "u_structure": self.u_structure,
            "objective": self.objective,
            "delta": self.delta,
            "tol": sdp.DEFAULT_TOL,
            "backend": sdp.DEFAULT_BACKEND,
        }
        merged.update({k: v for k, v in overrides.items() if v is not None})
        grid = merged["tau_grid"]
        return synthesis.SynthesisConfig(
            epsilon=merged["epsilon"],
            k_max=merged["k_max"],
            ustruct=lmi.UStructure(merged["u_structure"]),
            omega=lmi.Objective(merged["objective"]),
            line_search=sdp.LineSearchConfig(grid[0], grid[1], int(grid[2])),
            delta=merged["delta"],
            tol=merged["tol"],
            backend=merged["backend"],
        )


@dataclass(frozen=True)
class SimulationSettings:
    x0: np.ndarray
    horizon: int
    schedule: object = None  # None | list of flags | {"on_at": j, "off_at": j}

    def schedule_flags(self):
        """Per-step compensation flags implied by the schedule entry."""
        if self.schedule is None:
            return None
        if isinstance(self.schedule, dict):
            on_at = self.schedule.get("on_at", 0)
            off_at = self.schedule.get("off_at")
            flags = np.zeros(self.horizon, dtype=bool)
            flags[on_at : (self.horizon if off_at is None else off_at)] = True
            return flags
        return np.asarray(self.schedule, dtype=bool)


@dataclass(frozen=True)
class ProblemFile:
    """Validated problem description: models plus run settings."""

    plant: PlantModel
    controller: ControllerModel
    quantizer: QuantizerSpec
    synthesis: SynthesisSettings
    simulation: SimulationSettings | None = None

    def assemble(self):
        return assemble_closed_loop(self.plant, self.controller, self.quantizer)


def _parse_synthesis(section):
    if section is None:
        return SynthesisSettings()
    kwargs = {}
    if "epsilon" in section:
        kwargs["epsilon"] = _number(section["epsilon"], "synthesis.epsilon", minimum=0.0)
    if "k_max" in section:
        kwargs["k_max"] = _integer(section["k_max"], "synthesis.k_max", minimum=1)
    if "delta" in section:
        kwargs["delta"] = _number(section["delta"], "synthesis.delta", minimum=0.0)
    if "tau_grid" in section:
        grid = section["tau_grid"]
        if not isinstance(grid, (list, tuple)) or len(grid) != 3:
            raise SchemaError("synthesis.tau_grid", "expected [min, max, count]")
        a = _number(grid[0], "synthesis.tau_grid[0]", minimum=0.0, maximum=1.0)
        b = _number(grid[1], "synthesis.tau_grid[1]", minimum=0.0, maximum=1.0)
        c = _integer(grid[2], "synthesis.tau_grid[2]", minimum=1)
        kwargs["tau_grid"] = (a, b, c)
    if "u_structure" in section:
        kind = section["u_structure"]
        try:
            lmi.UStructure(kind)
        except ValueError as exc:
            raise SchemaError("synthesis.u_structure", str(exc)) from None
        kwargs["u_structure"] = kind
    if "objective" in section:
        kind = section["objective"]
        try:
            lmi.Objective(kind)
        except ValueError as exc:
            raise SchemaError("synthesis.objective", str(exc)) from None
        kwargs["objective"] = kind
    return SynthesisSettings(**kwargs)


def _parse_schedule(raw, horizon):
    if raw is None:
        return None
    if isinstance(raw, dict):
        on_at = raw.get("on_at", 0)
        off_at = raw.get("off_at")
        on_at = _integer(on_at, "simulation.schedule.on_at", minimum=0)
        if off_at is not None:
            off_at = _integer(off_at, "simulation.schedule.off_at", minimum=on_at)
            if off_at > horizon:
                raise SchemaError("simulation.schedule.off_at", f"exceeds horizon {horizon}")
        if on_at > horizon:
            raise SchemaError("simulation.schedule.on_at", f"exceeds horizon {horizon}")
        return {"on_at": on_at, "off_at": off_at}
    if isinstance(raw, (list, tuple)):
        if len(raw) != horizon:
            raise SchemaError(
                "simulation.schedule", f"needs one flag per step ({horizon}), got {len(raw)}"
            )
        return [bool(v) for v in raw]
    raise SchemaError("simulation.schedule", "expected null, a flag list, or {on_at, off_at}")


def _parse_simulation(section):
    if section is None:
        return None
    x0 = _vector(_require(section, "x0", "simulation"), "simulation.x0")
    horizon = _integer(_require(section, "horizon", "simulation"), "simulation.horizon", minimum=0)
    schedule = _parse_schedule(section.get("schedule"), horizon)
    return SimulationSettings(x0=x0, horizon=horizon, schedule=schedule)


def problem_from_dict(data):
    if not isinstance(data, dict):
        raise SchemaError("file", "top level must be an object")
    plant_d = _require(data, "plant", "")
    ctrl_d = _require(data, "controller", "")
    theta = _vector(_require(data, "theta", ""), "theta")
    if np.any(theta <= 0.0):
        raise SchemaError("theta", "levels must be strictly positive")

    # PlantModel/ControllerModel raise AssemblyError on cross-field mismatches,
    # naming the offending field; the CLI treats those as schema failures too.
    plant = PlantModel(
        A=_matrix(_require(plant_d, "A", "plant"), "plant.A"),
        B=_matrix(_require(plant_d, "B", "plant"), "plant.B"),
        C=_matrix(_require(plant_d, "C", "plant"), "plant.C"),
    )
    controller = ControllerModel(
        A=_matrix(_require(ctrl_d, "A", "controller"), "controller.A"),
        B=_matrix(_require(ctrl_d, "B", "controller"), "controller.B"),
        C=_matrix(_require(ctrl_d, "C", "controller"), "controller.C"),
        D=_matrix(_require(ctrl_d, "D", "controller"), "controller.D"),
    )
    quantizer = QuantizerSpec(theta)
    return ProblemFile(
        plant=plant,
        controller=controller,
        quantizer=quantizer,
        synthesis=_parse_synthesis(data.get("synthesis")),
        simulation=_parse_simulation(data.get("simulation")),
    )


def load_problem(path):
    """Read and validate a problem file; SchemaError pinpoints any issue."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError("file", f"not valid JSON: {exc}") from None
    return problem_from_dict(data)


def problem_to_dict(pf):
    data = {
        "plant": {
            "A": pf.plant.A.tolist(),
            "B": pf.plant.B.tolist(),
            "C": pf.plant.C.tolist(),
        },
        "controller": {
            "A": pf.controller.A.tolist(),
            "B": pf.controller.B.tolist(),
            "C": pf.controller.C.tolist(),
            "D": pf.controller.D.tolist(),
        },
        "theta": pf.quantizer.theta.tolist(),
        "synthesis": {
            "epsilon": pf.synthesis.epsilon,
            "k_max": pf.synthesis.k_max,
            "tau_grid": list(pf.synthesis.tau_grid),
            "u_structure": pf.synthesis.u_structure,
            "objective": pf.synthesis.objective,
            "delta": pf.synthesis.delta,
        },
    }
    if pf.simulation is not None:
        data["simulation"] = {
            "x0": pf.simulation.x0.tolist(),
            "horizon": pf.simulation.horizon,
            "schedule": pf.simulation.schedule,
        }
    return data


def save_problem(pf, path):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(pf), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class ResultFile:
    """Synthesis output: gain, certificate data, and run provenance."""

    E: np.ndarray
    P: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    tau: float
    U: np.ndarray
    mu: float | None
    varrho: float | None
    omega_trace: np.ndarray
    iterations: int
    residuals: dict
    tool_version: str
    input_digest: str

    def iterate(self):
        return lmi.SynthesisIterate(
            tau=self.tau, P=self.P, E=self.E, S1=self.S1, S2=self.S2, U=self.U
        )


def result_to_dict(rf):
    return {
        "E": rf.E.tolist(),
        "P": rf.P.tolist(),
        "S1": rf.S1.tolist(),
        "S2": rf.S2.tolist(),
        "tau": rf.tau,
        "U": rf.U.tolist(),
        "mu": rf.mu,
        "varrho": rf.varrho,
        "omega_trace": np.asarray(rf.omega_trace, dtype=float).tolist(),
        "iterations": rf.iterations,
        "residuals": {k: float(v) for k, v in rf.residuals.items()},
        "tool_version": rf.tool_version,
        "input_digest": rf.input_digest,
    }


def result_from_dict(data):
    if not isinstance(data, dict):
        raise SchemaError("file", "top level must be an object")
    mu = data.get("mu")
    varrho = data.get("varrho")
    return ResultFile(
        E=_matrix(_require(data, "E", ""), "E"),
        P=_matrix(_require(data, "P", ""), "P"),
        S1=_vector(_require(data, "S1", ""), "S1"),
        S2=_vector(_require(data, "S2", ""), "S2"),
        tau=_number(_require(data, "tau", ""), "tau"),
        U=_matrix(_require(data, "U", ""), "U"),
        mu=None if mu is None else _number(mu, "mu"),
        varrho=None if varrho is None else _number(varrho, "varrho"),
        omega_trace=np.asarray(_require(data, "omega_trace", ""), dtype=float),
        iterations=_integer(_require(data, "iterations", ""), "iterations", minimum=0),
        residuals={k: float(v) for k, v in _require(data, "residuals", "").items()},
        tool_version=str(_require(data, "tool_version", "")),
        input_digest=str(_require(data, "input_digest", "")),
    )


def save_result(rf, path):
    with open(path, "w") as fh:
        json.dump(result_to_dict(rf), fh, indent=2)
        fh.write("\n")


def load_result(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError("file", f"not valid JSON: {exc}") from None
    return result_from_dict(data)


def certificate_to_dict(cert, tool_version):
    return {
        "tau": cert.tau,
        "P": cert.P.tolist(),
        "E": cert.E.tolist(),
        "S1": cert.S1.tolist(),
        "S2": cert.S2.tolist(),
        "U": cert.U.tolist(),
        "mu": cert.mu,
        "varrho": cert.varrho,
        "residuals": {k: float(v) for k, v in cert.residuals.items()},
        "margins": {"eig": cert.margins.eig, "sim_rel": cert.margins.sim_rel},
        "violations": [
            {"condition": v.condition, "residual": v.residual} for v in cert.violations
        ],
        "tool_version": tool_version,
    }


def save_certificate(cert, path, tool_version):
    with open(path, "w") as fh:
        json.dump(certificate_to_dict(cert, tool_version), fh, indent=2)
        fh.write("\n")


def load_certificate(path):
    with open(path) as fh:
        data = json.load(fh)
    margins = VerificationMargins(
        eig=float(data["margins"]["eig"]), sim_rel=float(data["margins"]["sim_rel"])
    )
    return Certificate(
        tau=float(data["tau"]),
        P=np.asarray(data["P"], dtype=float),
        E=np.asarray(data["E"], dtype=float),
        S1=np.asarray(data["S1"], dtype=float),
        S2=np.asarray(data["S2"], dtype=float),
        U=np.asarray(data["U"], dtype=float),
        mu=None if data["mu"] is None else float(data["mu"]),
        varrho=None if data["varrho"] is None else float(data["varrho"]),
        residuals={k: float(v) for k, v in data["residuals"].items()},
        margins=margins,
        violations=tuple(
            Violation(v["condition"], float(v["residual"])) for v in data["violations"]
        ),
    )
