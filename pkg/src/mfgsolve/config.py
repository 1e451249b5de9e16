"""Flat dotted-key run configuration with deterministic snapshots.

Every tunable lives under a dotted key ("grid.npts") with a typed
default; command-line overrides arrive as KEY=VALUE strings.  Model
parameters are forwarded to the catalog factory under the "model."
prefix, so any factory keyword is reachable without listing it here.
The snapshot is a sorted, repr-formatted text block: two runs with equal
snapshots are byte-identical all the way to their output tables.
"""

from dataclasses import dataclass

import numpy as np

from .catalog import CATALOG, example_catalog
from .errors import ValidationError
from .grids import StateGrid, TimeGrid
from .measures import gaussian_law, point_law, uniform_law

DEFAULTS = {
    "model.name": "crowd-aversion",
    "grid.dim": 1,
    "grid.half_width": 2.0,
    "grid.npts": 81,
    "time.horizon": 0.5,
    "time.steps": 64,
    "init.kind": "gaussian",  # gaussian | uniform | point
    "init.mean": 0.0,
    "init.std": 0.3,
    "init.x": 0.0,
    "solver.mode": "explicit",  # transport march for plain forward solves
    "solver.R": "none",  # none | auto | numeric level for the side rows
    "solver.damping": 0.5,
    "solver.scheme": "picard",
    "solver.max_iters": 200,
    "solver.tol": 1e-3,
    "solver.force_lp": False,
    "particles.n": 20000,
    "particles.batch": 100000,
    "particles.gap_tol": 0.05,
    "certificate.n_random": 10,
    "certificate.perturbation": 0.25,
    "seed": 0,
}


def _parse_value(raw):
    """Best-effort typed parse: bool, int, float, then bare string."""
    s = raw.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    return s


def parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValidationError("override %r is not KEY=VALUE" % pair)
        key, raw = pair.split("=", 1)
        out[key.strip()] = _parse_value(raw)
    return out


def make_config(overrides=None):
    cfg = dict(DEFAULTS)
    for key, val in (overrides or {}).items():
        if key not in cfg and not key.startswith("model."):
            raise ValidationError(
                "unknown configuration key %r (known keys: %s, plus model.* factory arguments)"
                % (key, ", ".join(sorted(DEFAULTS)))
            )
        cfg[key] = val
    if cfg["model.name"] not in CATALOG:
        raise ValidationError(
            "unknown model %r; catalog has: %s" % (cfg["model.name"], ", ".join(sorted(CATALOG)))
        )
    return cfg


def snapshot(cfg):
    lines = ["%s = %r" % (k, cfg[k]) for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


@dataclass
class Scenario:
    coeffs: object
    grid: StateGrid
    tgrid: TimeGrid
    nu: np.ndarray
    config: dict


def build_scenario(cfg) -> Scenario:
    """Instantiate model, grids, and the initial law from a config mapping."""
    dim = int(cfg["grid.dim"])
    half_width = float(cfg["grid.half_width"])
    model_kwargs = {
        key[len("model."):]: val
        for key, val in cfg.items()
        if key.startswith("model.") and key != "model.name"
    }
    model_kwargs.setdefault("dim", dim)
    model_kwargs.setdefault("half_width", half_width)
    coeffs = example_catalog(cfg["model.name"], **model_kwargs)
    grid = StateGrid(dim=dim, half_width=half_width, npts=int(cfg["grid.npts"]))
    tgrid = TimeGrid(horizon=float(cfg["time.horizon"]), steps=int(cfg["time.steps"]))
    kind = cfg["init.kind"]
    if kind == "gaussian":
        mean = np.full(dim, float(cfg["init.mean"]))
        nu = gaussian_law(grid, mean=mean if dim > 1 else float(cfg["init.mean"]),
                          std=float(cfg["init.std"]))
    elif kind == "uniform":
        nu = uniform_law(grid)
    elif kind == "point":
        x = np.full(dim, float(cfg["init.x"]))
        nu = point_law(grid, x if dim > 1 else float(cfg["init.x"]))
    else:
        raise ValidationError("init.kind must be gaussian, uniform, or point")
    return Scenario(coeffs=coeffs, grid=grid, tgrid=tgrid, nu=nu, config=cfg)


def resolve_radius(cfg, scenario):
    """Turn the solver.R setting into a level or None."""
    raw = cfg["solver.R"]
    if isinstance(raw, str):
        if raw == "none":
            return None
        if raw == "auto":
            from .best_response import feasibility_radius

            return feasibility_radius(
                scenario.coeffs, scenario.nu, scenario.grid, scenario.tgrid
            )
        raise ValidationError("solver.R must be 'none', 'auto', or a number")
    return float(raw)
