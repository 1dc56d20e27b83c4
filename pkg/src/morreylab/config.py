"""Flat ``key = value`` experiment configs with per-subcommand schemas."""
from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Option:
    type: str  # int, float, str, bool, list[int], list[float], list[str]
    default: object
    help: str = ""


GLOBAL_OPTIONS = {
    "seed": Option("int", 0, "random seed"),
    "workers": Option("int", 1, "worker processes"),
    "out_dir": Option("str", ".", "output directory"),
}

SCHEMAS: dict[str, dict[str, Option]] = {
    "scan": {
        "energy": Option("str", "w_magic_plus", "energy spec, e.g. w_c:{c:1.1}"),
        "a_max": Option("float", 10.0, "largest stretch a of diag(√a, 1/√a)"),
        "a_steps": Option("int", 91, "number of a values in [1, a_max]"),
        "dtheta": Option("float", 1.0, "direction grid step in degrees"),
        "tol": Option("float", 1e-6, "negativity tolerance"),
        "full": Option("bool", False, "write every grid value instead of per-a minima"),
        "out": Option("str", "report.csv", "CSV output"),
    },
    "laminate-search": {
        "energy": Option("list[str]", ["w_magic_plus"], "energy spec (repeatable)"),
        "a_list": Option("list[float]", [float(a) for a in range(1, 11)], "comma-separated a values"),
        "n_list": Option("list[int]", [4, 5, 6, 7], "comma-separated wave counts"),
        "trials": Option("int", 100_000, "number of trials"),
        "tol": Option("float", 1e-9, "negativity tolerance"),
        "resolution": Option("int", 0, "0 = exact pattern weights, else midpoint grid size"),
        "checkpoint": Option("str", "", "checkpoint JSON path (resumable)"),
        "out": Option("str", "best.json", "summary JSON output"),
    },
    "families": {
        "kind": Option("str", "smooth", "smooth, radial-expanding or radial-contracting"),
        "energy": Option("str", "w_magic_plus", "w_magic_plus or burkholder:{p:...}"),
        "a1": Option("float", 3.0, "smooth laminate: larger diagonal entry"),
        "a2": Option("float", 1 / 3, "smooth laminate: smaller diagonal entry"),
        "profiles": Option("int", 5, "number of random profiles"),
        "points": Option("int", 200, "samples per profile"),
        "out": Option("str", "families.csv", "CSV output"),
    },
    "pinn": {
        "f0": Option("float", 3.0, "F0 = diag(a, 1/a)"),
        "grid": Option("int", 128, "quadrature points per axis"),
        "iters": Option("int", 2000, "Adam iterations"),
        "lr": Option("float", 1e-3, "initial learning rate"),
        "decay_at": Option("list[int]", [], "decay milestones; empty scales 700,1400,1800"),
        "dump_field": Option("str", "", "CSV path for the trained field"),
    },
    "fem": {
        "domain": Option("str", "square", "square or disc"),
        "levels": Option("int", 4, "uniform refinements of the coarse mesh"),
        "energy": Option("str", "w_magic_plus", "energy spec"),
        "a": Option("float", 2.0, "F0 = diag(√a, 1/√a)"),
        "cstar": Option("float", 0.0, "if > 0: W_c with c = cstar inside the circles"),
        "init": Option("str", "homogeneous", "homogeneous, random:<amp> or a nodal CSV"),
        "max_iter": Option("int", 500, "trust-region iterations"),
        "tol": Option("float", 1e-7, "max-norm step tolerance"),
        "save_field": Option("str", "", "nodal CSV for restarts"),
        "out": Option("str", "fields.csv", "element CSV output"),
    },
    "curl": {
        "lc": Option("float", 0.5, "Curl penalty length L_c"),
        "a": Option("float", 2.0, "F0 = diag(√a, 1/√a)"),
        "levels": Option("int", 3, "disc refinements"),
        "init": Option("str", "homogeneous", "homogeneous or checkerboard:<b>:<delta>"),
        "max_iter": Option("int", 300, "trust-region iterations"),
        "project": Option("bool", False, "also compute the compatible projection"),
        "out": Option("str", "fields.csv", "element CSV output"),
    },
}


def coerce(opt: Option, value):
    """Convert a CLI string or a decoded JSON value to the option's type."""
    t = opt.type
    if t.startswith("list["):
        inner = Option(t[5:-1], None)
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()] if inner.type != "str" else [value]
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"expected a list, got {value!r}")
        return [coerce(inner, v) for v in value]
    if t == "bool":
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {value!r}")
    if t == "int":
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if t == "float":
        return float(value)
    return str(value)


@dataclass
class ExperimentConfig:
    subcommand: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        schema = self.schema(self.subcommand)
        unknown = sorted(set(self.values) - set(schema))
        if unknown:
            raise ValueError(f"unknown keys for {self.subcommand}: {', '.join(unknown)}")
        full = {k: opt.default for k, opt in schema.items()}
        for k, v in self.values.items():
            full[k] = coerce(schema[k], v)
        self.values = full

    @staticmethod
    def schema(subcommand) -> dict[str, Option]:
        if subcommand not in SCHEMAS:
            raise ValueError(f"unknown subcommand {subcommand!r}")
        return {**GLOBAL_OPTIONS, **SCHEMAS[subcommand]}

    def __getitem__(self, key):
        return self.values[key]

    def to_text(self) -> str:
        lines = [f"subcommand = {self.subcommand}"]
        lines += [f"{k} = {json.dumps(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, subcommand: str | None = None) -> "ExperimentConfig":
        values = parse_flat(text)
        sub = values.pop("subcommand", None)
        if subcommand is not None and sub is not None and sub != subcommand:
            raise ValueError(f"config is for {sub!r}, not {subcommand!r}")
        sub = subcommand or sub
        if sub is None:
            raise ValueError("config has no subcommand")
        return cls(sub, values)


def parse_flat(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment; values are JSON or bare strings."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"line {n}: expected key = value")
        key, val = key.strip().replace("-", "_"), val.strip()
        if key in out:
            raise ValueError(f"line {n}: duplicate key {key!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out
