"""Bundled benchmark problems.

Two single-input loops exercising the main usage patterns:

* ``example1``: unstable third-order plant with a stabilizing third-order
  controller, coarse level 0.5, region measured on the plant substate
  through a scalar weight.
* ``example2``: two-state plant/controller pair with a fine level 0.0035,
  region measured by P itself; its simulation schedule switches the
  compensator on mid-run and back off, which makes the effect visible in
  the input traces.
"""

from importlib import resources

from . import fileio

NAMES = ("example1", "example2")


def _resource(name):
    if name not in NAMES:
        raise KeyError(f"unknown example {name!r}; available: {', '.join(NAMES)}")
    return resources.files(__package__).joinpath("data", f"{name}.json")


def example_bytes(name):
    """Raw bytes of the bundled problem file (digest-stable)."""
    return _resource(name).read_bytes()


def load_example(name):
    """Parse a bundled example into a ProblemFile."""
    import json

    data = json.loads(example_bytes(name).decode("utf-8"))
    return fileio.problem_from_dict(data)
