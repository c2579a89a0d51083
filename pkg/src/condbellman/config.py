"""JSON problem configs and the named presets."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .controls import BoxSet, ControlSet, ExplicitGridSet, RiskConstrainedSet, UpperLevelSet
from .generators import (Additive, EntropicWealthDependent, PortfolioIdentity, REWARDS,
                         ScalingFamily, TerminalExpUtility, TerminalIdentity, WealthDynamics,
                         estimate_K)
from .risk import ConditionalRiskMeasure
from .sharing import SharingProblem
from .solver import GridConfig, Problem
from .tree import TreeError, tree_from_config


class ConfigError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


PRESETS = {
    "paper-example-3.2": {
        "tree": {"template": "binomial", "T": 2, "p": 0.6, "up": 1.0, "down": -1.0},
        "forward": {"kind": "wealth_consumption"},
        "backward": {"kind": "additive", "reward": "consumption_exp", "weight": 1.0},
        "terminal": {"kind": "exponential_utility", "a": 1.0},
        "controls": {"kind": "risk_constrained", "risk": "entropic", "gamma": 1.0,
                     "consumption": True, "solvency": True},
        "grid": {"points": 41, "h": 0.05, "polish_tol": 1e-7, "refinement": True, "levels": 3},
        "x0": 1.0,
        "seed": 0,
    },
    "paper-example-4.2": {
        "tree": {"template": "binomial", "T": 2, "p": 0.6, "up": 1.0, "down": -1.0},
        "forward": {"kind": "self_financing"},
        "backward": {"kind": "entropic_wealth_dependent", "gamma_min": 0.5, "gamma_max": 2.0,
                     "shape": "decreasing"},
        "terminal": {"kind": "identity"},
        "controls": {"kind": "unbounded"},
        "grid": {"points": 21, "h": 0.05, "polish_tol": 1e-7, "refinement": False},
        "x0": 1.0,
        "seed": 0,
    },
    "paper-prop-4.3": {
        "sharing": {
            "tree": {"template": "binomial", "T": 2, "p": 0.6, "up": 0.2, "down": -0.1},
            "endowments": {"kind": "geometric", "initial": [1.0, 2.0], "exposure": [1.0, -0.5]},
            "t": 0,
            "budget": 100000,
        },
        "seed": 0,
    },
}

TOP_KEYS = {"preset", "name", "tree", "forward", "backward", "terminal", "controls", "grid",
            "x0", "seed", "sharing", "k_battery", "workers"}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "tree":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(text: str) -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    if "preset" in raw:
        name = raw["preset"]
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; known: {sorted(PRESETS)}")
        raw = _merge(PRESETS[name], {k: v for k, v in raw.items() if k != "preset"})
        raw.setdefault("name", name)
    return raw


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    return parse_config(text)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _num(sec: dict, key: str, where: str, default=None, lo=None, hi=None, integer=False):
    if key not in sec:
        if default is None:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}.{key}", "expected an integer")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{where}.{key}", f"value {v} outside [{lo}, {hi}]")
    return int(v) if integer else float(v)


def _section(cfg, key):
    sec = cfg.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(key, "missing or not an object")
    if "kind" not in sec and key != "tree":
        raise ConfigError(f"{key}.kind", "missing")
    return sec


TREE_KEYS = {"nodes", "template", "T", "p", "up", "down", "probs", "shocks"}


def build_tree(sec: dict, where: str = "tree"):
    if not isinstance(sec, dict):
        raise ConfigError(where, "must be an object")
    extra = sorted(set(sec) - TREE_KEYS)
    if extra:
        raise ConfigError(f"{where}.{extra[0]}", "unknown field")
    try:
        return tree_from_config(sec)
    except (TreeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


def _affine(v, where):
    """A bound: number, or {"const": a, "slope": b} meaning a + b x."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, dict):
        a, b = float(v.get("const", 0.0)), float(v.get("slope", 0.0))
        return lambda node, x: a + b * float(np.asarray(x))
    if v is None:
        return None
    raise ConfigError(where, f"bound must be a number or {{const, slope}}, got {v!r}")


@dataclass
class Built:
    problem: Problem
    grid: GridConfig
    cfg: dict
    regime: str = "general"
    K: float | None = None
    refinement: bool = False
    levels: int = 3
    notes: list = field(default_factory=list)


def build_problem(cfg: dict, grid_points=None, control_res=None, workers=None) -> Built:
    """Config -> Problem. Raises ConfigError, or NoKError for the unbounded kind."""
    tree = build_tree(_section(cfg, "tree"))

    fw = _section(cfg, "forward")
    kind = fw["kind"]
    if kind in ("wealth_consumption", "self_financing"):
        if tree.shock_dim == 0:
            raise ConfigError("tree", "wealth dynamics need shock data")
        forward = WealthDynamics(consumption=kind == "wealth_consumption")
    elif kind == "portfolio_identity":
        forward = PortfolioIdentity(dim=_num(fw, "dim", "forward", 1, lo=1, integer=True))
    else:
        raise ConfigError("forward.kind", f"unknown forward generator {kind!r}")

    bw = _section(cfg, "backward")
    kind = bw["kind"]
    if kind == "entropic_wealth_dependent":
        gmin = _num(bw, "gamma_min", "backward", 1.0, lo=1e-12)
        gmax = _num(bw, "gamma_max", "backward", gmin, lo=gmin)
        shape = bw.get("shape", "decreasing")
        if shape not in ("decreasing", "increasing", "constant"):
            raise ConfigError("backward.shape", f"unknown shape {shape!r}")
        backward = EntropicWealthDependent(gmin, gmax, shape)
    elif kind == "scaling_family":
        backward = ScalingFamily()
    elif kind == "additive":
        reward = bw.get("reward", "zero")
        if reward not in REWARDS:
            raise ConfigError("backward.reward", f"unknown reward {reward!r}; known: {sorted(REWARDS)}")
        backward = Additive(reward, _num(bw, "weight", "backward", 1.0))
    else:
        raise ConfigError("backward.kind", f"unknown backward generator {kind!r}")

    term = cfg.get("terminal", {"kind": "identity"})
    kind = term.get("kind", "identity")
    if kind in ("identity", "terminal_identity"):
        terminal = TerminalIdentity()
    elif kind == "exponential_utility":
        terminal = TerminalExpUtility(_num(term, "a", "terminal", 1.0, lo=1e-12))
    else:
        raise ConfigError("terminal.kind", f"unknown terminal generator {kind!r}")

    x0 = cfg.get("x0", 1.0)
    if isinstance(x0, list):
        x0 = np.asarray(x0, dtype=float)
    elif isinstance(x0, (int, float)) and not isinstance(x0, bool):
        x0 = float(x0)
    else:
        raise ConfigError("x0", f"expected a number or list, got {x0!r}")

    g = cfg.get("grid", {})
    grid = GridConfig(
        points=grid_points or _num(g, "points", "grid", 21, lo=3, hi=100001, integer=True),
        h=control_res or _num(g, "h", "grid", 0.05, lo=1e-6, hi=100.0),
        polish_tol=_num(g, "polish_tol", "grid", 1e-7, lo=1e-14, hi=1.0),
        root_halfwidth=g.get("root_halfwidth"),
        workers=workers or 1,
    )
    if grid.points % 2 == 0:
        raise ConfigError("grid.points", "use an odd count so x0 is a grid point")

    ct = _section(cfg, "controls")
    kind = ct["kind"]
    built = Built(None, grid, cfg, refinement=bool(g.get("refinement", False)),
                  levels=int(g.get("levels", 3)))
    if kind == "box":
        d = _num(ct, "dim", "controls", forward.control_dim(tree, 0), lo=1, integer=True)
        controls = BoxSet(_affine(ct.get("lower", -1.0), "controls.lower"),
                          _affine(ct.get("upper", 1.0), "controls.upper"), d,
                          bool(ct.get("strict", False)))
    elif kind == "risk_constrained":
        risk = ct.get("risk", "entropic")
        if risk not in ("entropic", "neg_expectation"):
            raise ConfigError("controls.risk", f"unknown risk measure {risk!r}")
        rho = ConditionalRiskMeasure(risk, _num(ct, "gamma", "controls", 1.0, lo=1e-12))
        consumption = bool(ct.get("consumption", True))
        if not isinstance(forward, WealthDynamics) or forward.consumption != consumption:
            raise ConfigError("controls.consumption", "must agree with the forward generator")
        controls = RiskConstrainedSet(rho, consumption, bool(ct.get("solvency", True)))
    elif kind == "unbounded":
        battery = cfg.get("k_battery") or [0.0, float(np.max(x0)), 1e3, 1e6]
        est = estimate_K(forward, backward, tree, battery)
        controls = UpperLevelSet(forward, backward, est.K)
        built.regime, built.K = "bounded_gain", est.K
        built.notes.append(f"K estimated at {est.K:.10g} (argmax {est.argmax})")
    elif kind == "explicit_grid":
        if "grid" not in ct:
            raise ConfigError("controls.grid", "missing")
        grid_spec = ct["grid"]
        if isinstance(grid_spec, dict):
            try:
                grids = {int(k): np.asarray(v, dtype=float) for k, v in grid_spec.items()}
            except (TypeError, ValueError) as exc:
                raise ConfigError("controls.grid", str(exc)) from None
            missing = [n for t in range(tree.T) for n in tree.stage_range(t) if n not in grids]
            if missing:
                raise ConfigError("controls.grid", f"no grid for node {missing[0]}")
        else:
            grids = np.asarray(grid_spec, dtype=float)
        controls = ExplicitGridSet(grids)
    else:
        raise ConfigError("controls.kind", f"unknown control set {kind!r}")
    built.problem = Problem(tree, forward, backward, terminal, controls, x0,
                            name=cfg.get("name", "custom"))
    return built


def build_sharing(cfg: dict) -> tuple[SharingProblem, dict]:
    sec = cfg.get("sharing")
    if not isinstance(sec, dict):
        raise ConfigError("sharing", "missing or not an object")
    tree = build_tree(sec.get("tree", {}), "sharing.tree")
    end = sec.get("endowments")
    if isinstance(end, dict) and end.get("kind") == "geometric":
        init = np.asarray(end.get("initial", [1.0, 1.0]), dtype=float)
        expo = np.asarray(end.get("exposure", [0.0] * len(init)), dtype=float)
        if len(expo) != len(init):
            raise ConfigError("sharing.endowments.exposure", "one exposure per agent")
        price = tree.prices(0.0)
        price = price[:, 0] if price.ndim == 2 and price.shape[1] else np.zeros(tree.n_nodes)
        H = init[:, None] * np.exp(expo[:, None] * price[None, :])
    elif isinstance(end, list):
        H = np.asarray(end, dtype=float)
        if H.ndim == 2 and H.shape[1] != tree.n_nodes:
            raise ConfigError("sharing.endowments", f"need {tree.n_nodes} values per agent")
        if H.ndim == 1:
            H = np.repeat(H[:, None], tree.n_nodes, axis=1)
    else:
        raise ConfigError("sharing.endowments", "expected a list or {kind: geometric}")
    try:
        prob = SharingProblem(tree, H)
    except ValueError as exc:
        raise ConfigError("sharing.endowments", str(exc)) from None
    t = int(sec.get("t", 0))
    if not 0 <= t <= tree.T:
        raise ConfigError("sharing.t", f"stage {t} outside 0..{tree.T}")
    return prob, {"t": t, "budget": int(sec.get("budget", 100000))}
