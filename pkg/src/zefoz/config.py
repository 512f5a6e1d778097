"""Strict JSON configuration: unit-tagged tensors, fields and noise defaults.

Every physical quantity carries an explicit unit. Unknown keys, duplicate keys,
non-finite numbers and unit mismatches are rejected with the JSON path of the
offending entry.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .decoherence import DEFAULT_SAMPLES, DEFAULT_SEED, NOISE_MODES, NoiseVector
from .hamiltonian import SpinSystem, TransitionId, labeled_transition
from .search import GridSpec
from .spin_core import Constants, EulerAngles, HalfInteger, TensorSpec

FREQUENCY_UNITS = {"Hz": 1e-6, "kHz": 1e-3, "MHz": 1.0, "GHz": 1e3}  # to MHz
FIELD_UNITS = {"T": 1.0, "mT": 1e-3, "uT": 1e-6, "nT": 1e-9}  # to tesla
DIMENSIONLESS = {"1": 1.0}
CONSTANT_UNITS = {"MHz/T": 1.0, "GHz/T": 1e3, "Hz/T": 1e-6}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class _Obj(dict):
    """JSON object that remembers keys seen more than once."""

    duplicates: list


def _pairs(pairs):
    obj = _Obj()
    obj.duplicates = []
    for k, v in pairs:
        if k in obj:
            obj.duplicates.append(k)
        obj[k] = v
    return obj


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def _finite_float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"number {text} overflows to a non-finite value")
    return v


class _Node:
    """A JSON value plus its path, with typed accessors that raise ConfigError."""

    def __init__(self, value, path="$"):
        self.value = value
        self.path = path

    def fail(self, msg):
        raise ConfigError(self.path, msg)

    def obj(self, required=(), optional=(), free=False) -> "_Node":
        """Check this is an object; ``free`` allows arbitrary (user-named) keys."""
        if not isinstance(self.value, dict):
            self.fail(f"expected an object, got {type(self.value).__name__}")
        dups = getattr(self.value, "duplicates", [])
        if dups:
            raise ConfigError(f"{self.path}.{dups[0]}", "duplicate key")
        allowed = set(required) | set(optional)
        for k in [] if free else self.value:
            if k not in allowed:
                raise ConfigError(f"{self.path}.{k}", f"unknown key (allowed: {', '.join(sorted(allowed))})")
        for k in required:
            if k not in self.value:
                raise ConfigError(f"{self.path}.{k}", "missing required key")
        return self

    def has(self, key) -> bool:
        return key in self.value

    def __getitem__(self, key) -> "_Node":
        if isinstance(key, int):
            return _Node(self.value[key], f"{self.path}[{key}]")
        return _Node(self.value[key], f"{self.path}.{key}")

    def get(self, key, default=None):
        return self[key] if key in self.value else default

    def number(self) -> float:
        if isinstance(self.value, bool) or not isinstance(self.value, (int, float)):
            self.fail(f"expected a number, got {json.dumps(self.value)}")
        return float(self.value)

    def integer(self) -> int:
        if isinstance(self.value, bool) or not isinstance(self.value, int):
            self.fail(f"expected an integer, got {json.dumps(self.value)}")
        return self.value

    def string(self) -> str:
        if not isinstance(self.value, str):
            self.fail(f"expected a string, got {json.dumps(self.value)}")
        return self.value

    def numbers(self, n: int | None = None) -> list[float]:
        if not isinstance(self.value, list):
            self.fail("expected an array of numbers")
        if n is not None and len(self.value) != n:
            self.fail(f"expected {n} numbers, got {len(self.value)}")
        return [self[i].number() for i in range(len(self.value))]

    def unit(self, table: dict) -> float:
        u = self.string()
        if u not in table:
            self.fail(f"unit {u!r} not accepted here (expected one of {', '.join(table)})")
        return table[u]


def _quantity(node: _Node, units: dict) -> float:
    node.obj(required=("value", "unit"))
    return node["value"].number() * node["unit"].unit(units)


def _tensor(node: _Node, units: dict) -> TensorSpec:
    node.obj(required=("principal", "unit"), optional=("euler_deg",))
    scale = node["unit"].unit(units)
    vals = [v * scale for v in node["principal"].numbers(3)]
    angles = node["euler_deg"].numbers(3) if node.has("euler_deg") else [0.0, 0.0, 0.0]
    return TensorSpec(tuple(vals), EulerAngles.from_degrees(*angles))


def _spin(node: _Node) -> HalfInteger:
    v = node.value
    try:
        return HalfInteger.parse(v)
    except (TypeError, ValueError) as exc:
        node.fail(str(exc))


def _system(node: _Node, name: str, constants: Constants) -> SpinSystem:
    node.obj(required=("A", "g"), optional=("S", "I", "g_n", "g_n_tensor", "Q", "label", "notes"))
    g_n = 0.0
    if node.has("g_n"):
        g_n = _quantity(node["g_n"], DIMENSIONLESS)
    return SpinSystem(
        A=_tensor(node["A"], FREQUENCY_UNITS),
        g=_tensor(node["g"], DIMENSIONLESS),
        S=_spin(node["S"]) if node.has("S") else HalfInteger(1),
        I=_spin(node["I"]) if node.has("I") else HalfInteger(1),
        g_n=g_n,
        g_n_tensor=_tensor(node["g_n_tensor"], DIMENSIONLESS) if node.has("g_n_tensor") else None,
        Q=_tensor(node["Q"], FREQUENCY_UNITS) if node.has("Q") else None,
        label=node["label"].string() if node.has("label") else name,
        constants=constants,
    )


@dataclass(frozen=True)
class TransitionRef:
    system: str
    levels: tuple  # ints or zero-field labels

    def resolve(self, systems: dict[str, SpinSystem]) -> TransitionId:
        sys = systems[self.system]
        a, b = self.levels
        if isinstance(a, str):
            return labeled_transition(sys, a, b)
        lo, hi = sorted((a, b))
        if hi >= sys.dim:
            raise ValueError(f"level {hi} does not exist in a {sys.dim}-level system")
        return TransitionId(lo, hi)


@dataclass(frozen=True)
class Config:
    systems: dict[str, SpinSystem]
    transitions: dict[str, TransitionRef]
    constants: Constants = field(default_factory=Constants)
    optical_offset: float | None = None  # MHz
    noise: NoiseVector = NoiseVector(3e-6, "worst-case")
    map_magnitude: float = 5e-3  # T
    map_grid: GridSpec = field(default_factory=GridSpec)
    inhomogeneity_spread: float = 0.0
    inhomogeneity_samples: int = DEFAULT_SAMPLES
    seeds: dict[str, int] = field(default_factory=dict)
    t1: float | None = None  # s
    sha256: str = ""
    source: str = ""

    def seed(self, name: str) -> int:
        return self.seeds.get(name, DEFAULT_SEED)

    def transition(self, name: str) -> tuple[SpinSystem, TransitionId]:
        if name not in self.transitions:
            raise KeyError(f"transition {name!r} not defined (have: {', '.join(self.transitions)})")
        ref = self.transitions[name]
        return self.systems[ref.system], ref.resolve(self.systems)


TOP_KEYS = (
    "description",
    "notes",
    "constants",
    "optical_offset",
    "noise",
    "map",
    "inhomogeneity",
    "seeds",
    "transitions",
    "t1",
)


def _window(node: _Node) -> tuple[float, float, float]:
    lo, hi, step = node.numbers(3)
    if not step > 0:
        node.fail("step must be positive")
    if hi < lo:
        node.fail("range max is below min")
    return (lo, hi, step)


def load_config_text(text: str, source: str = "<string>") -> Config:
    raw = text.encode("utf-8")
    try:
        doc = json.loads(text, object_pairs_hook=_pairs, parse_constant=_reject_constant, parse_float=_finite_float)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ConfigError("$", f"invalid JSON at byte offset {offset}: {exc.msg}") from None
    except ValueError as exc:
        raise ConfigError("$", str(exc)) from None

    root = _Node(doc).obj(required=("systems",), optional=TOP_KEYS)

    constants = Constants()
    if root.has("constants"):
        c = root["constants"].obj(optional=("mu_B_over_h", "mu_n_over_h"))
        constants = Constants(
            _quantity(c["mu_B_over_h"], CONSTANT_UNITS) if c.has("mu_B_over_h") else constants.mu_B_over_h,
            _quantity(c["mu_n_over_h"], CONSTANT_UNITS) if c.has("mu_n_over_h") else constants.mu_n_over_h,
        )

    sys_node = root["systems"].obj(free=True)
    if not sys_node.value:
        sys_node.fail("at least one system is required")
    systems = {}
    for name in sys_node.value:
        try:
            systems[name] = _system(sys_node[name], name, constants)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(sys_node[name].path, str(exc)) from None

    transitions = {}
    if root.has("transitions"):
        tn = root["transitions"].obj(free=True)
        for name in tn.value:
            node = tn[name].obj(required=("system", "levels"))
            sname = node["system"].string()
            if sname not in systems:
                node["system"].fail(f"system {sname!r} is not defined")
            lv = node["levels"]
            if not isinstance(lv.value, list) or len(lv.value) != 2:
                lv.fail("expected two level labels or indices")
            levels = tuple(x if isinstance(x, str) else lv[i].integer() for i, x in enumerate(lv.value))
            ref = TransitionRef(sname, levels)
            try:
                ref.resolve(systems)
            except (ValueError, KeyError) as exc:
                lv.fail(str(exc))
            transitions[name] = ref

    kw = {}
    if root.has("optical_offset"):
        kw["optical_offset"] = _quantity(root["optical_offset"], FREQUENCY_UNITS)
    if root.has("noise"):
        n = root["noise"].obj(required=("magnitude",), optional=("mode", "direction"))
        mode = n["mode"].string() if n.has("mode") else "worst-case"
        if mode not in NOISE_MODES:
            n["mode"].fail(f"mode must be one of {', '.join(NOISE_MODES)}")
        direction = tuple(n["direction"].numbers(3)) if n.has("direction") else None
        magnitude = _quantity(n["magnitude"], FIELD_UNITS)
        try:
            kw["noise"] = NoiseVector(magnitude, mode, direction)
        except ValueError as exc:
            n.fail(str(exc))
    if root.has("map"):
        m = root["map"].obj(optional=("magnitude", "theta_deg", "phi_deg"))
        if m.has("magnitude"):
            kw["map_magnitude"] = _quantity(m["magnitude"], FIELD_UNITS)
        default = GridSpec()
        kw["map_grid"] = GridSpec(
            _window(m["theta_deg"]) if m.has("theta_deg") else default.theta,
            _window(m["phi_deg"]) if m.has("phi_deg") else default.phi,
        )
    if root.has("inhomogeneity"):
        h = root["inhomogeneity"].obj(required=("fractional_spread",), optional=("samples",))
        spread = h["fractional_spread"].number()
        if spread < 0:
            h["fractional_spread"].fail("must be nonnegative")
        kw["inhomogeneity_spread"] = spread
        if h.has("samples"):
            s = h["samples"].integer()
            if s < 10:
                h["samples"].fail("need at least 10 samples")
            kw["inhomogeneity_samples"] = s
    if root.has("seeds"):
        sn = root["seeds"].obj(free=True)
        kw["seeds"] = {k: sn[k].integer() for k in sn.value}
    if root.has("t1"):
        t1 = _quantity(root["t1"], {"s": 1.0, "ms": 1e-3, "us": 1e-6})
        if not t1 > 0:
            root["t1"].fail("must be positive")
        kw["t1"] = t1
    if root.has("notes"):
        nn = root["notes"]
        if not isinstance(nn.value, list) or not all(isinstance(x, str) for x in nn.value):
            nn.fail("expected an array of strings")
    if root.has("description"):
        root["description"].string()

    return Config(
        systems=systems,
        transitions=transitions,
        constants=constants,
        sha256=hashlib.sha256(raw).hexdigest(),
        source=source,
        **kw,
    )


def parse_config(path) -> Config:
    p = Path(path)
    return load_config_text(p.read_bytes().decode("utf-8"), str(p))
