"""Adversarial testing of neural AC power flow surrogates.

Thin layer over the C++ core: structured results come back as dicts and
vectors as numpy arrays.
"""

import json
from pathlib import Path

from . import _core
from ._core import (
    ConfigError,
    DimensionError,
    Error,
    Grid,
    Model,
    NumericError,
    ParseError,
    ValidationError,
)

__all__ = [
    "ConfigError", "DimensionError", "Error", "Grid", "Model", "NumericError", "ParseError",
    "ValidationError", "case_path", "load_case", "solve_pf", "pf_output_jacobian", "gen_dataset", "train",
    "max_error", "constrained_error", "max_error_campaign", "verify", "run_command",
]


def case_path():
    """Bundled 14-bus case: the packaged copy when installed, else the source tree."""
    packaged = Path(__file__).parent / "data" / "case14.m"
    return packaged if packaged.exists() else Path(_core.builtin_case_path())


def load_case(path=None):
    return Grid(str(path if path is not None else case_path()))


def solve_pf(grid, x, init=None):
    return json.loads(_core.solve_pf(grid, x, init))


def pf_output_jacobian(grid, x):
    return _core.pf_output_jacobian(grid, x)


def gen_dataset(grid, n, seed, sampling=None):
    """Returns (x, y) arrays with one sample per row."""
    return _core.gen_dataset(grid, n, seed, json.dumps(sampling or {}))


def train(grid, x, y, config=None):
    return _core.train(grid, x, y, json.dumps(config or {}))


def max_error(grid, model, bus_id, quantity, mode="max_error", solver=None):
    return json.loads(_core.run_max_error(grid, model, bus_id, quantity, mode, json.dumps(solver or {})))


def constrained_error(grid, model, bus_id, x0, lower_bound=0.94, delta=0.04, solver=None):
    return json.loads(
        _core.run_constrained(grid, model, bus_id, x0, lower_bound, delta, json.dumps(solver or {})))


def max_error_campaign(grid, model, workers=1):
    return json.loads(_core.max_error_campaign(grid, model, workers))


def verify(grid, model, result):
    return json.loads(_core.verify_result(grid, model, json.dumps(result)))


def run_command(command, config, path=None):
    """Runs a pipeline command ("gen-data", "train", ...) with a run-config dict."""
    return json.loads(_core.run_command(command, json.dumps(config), None if path is None else str(path)))
