"""Experiment configuration: a flat key = value text format with explicit
schema versioning, field-precise validation, canonical serialization and a
platform-stable hash. Unknown keys are hard errors (silent typos corrupt
scientific runs)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .laws import BiasLaw, OffspringLaw

SCHEMA_VERSION = 1

EXPERIMENTS = ("gamma", "trap-tail", "trap-time-tail", "walk", "displacement",
               "dichotomy", "pair-constants", "snapshot-stability",
               "constants")


def _parse_offspring(text: str):
    out = {}
    for part in text.replace(",", " ").split():
        try:
            k, v = part.split(":")
            out[int(k)] = float(v)
        except ValueError as exc:
            raise ConfigError(f"offspring: bad entry {part!r}") from exc
    return out


def _fmt_offspring(mapping) -> str:
    return ",".join(f"{k}:{mapping[k]!r}" for k in sorted(mapping))


def _parse_bias(text: str):
    toks = text.split()
    if not toks:
        raise ConfigError("bias: empty")
    if toks[0] == "atoms":
        atoms = {}
        for part in toks[1:]:
            try:
                v, p = part.split(":")
                atoms[float(v)] = float(p)
            except ValueError as exc:
                raise ConfigError(f"bias: bad atom {part!r}") from exc
        if not atoms:
            raise ConfigError("bias: atoms requires value:prob entries")
        return ("atoms", atoms)
    if toks[0] == "uniform":
        if len(toks) != 3:
            raise ConfigError("bias: uniform requires exactly `uniform q Q`")
        return ("uniform", (float(toks[1]), float(toks[2])))
    raise ConfigError(f"bias: unknown kind {toks[0]!r} (atoms|uniform)")


def _fmt_bias(spec) -> str:
    kind, payload = spec
    if kind == "atoms":
        return "atoms " + " ".join(f"{v!r}:{p!r}" for v, p in sorted(payload.items()))
    return f"uniform {payload[0]!r} {payload[1]!r}"


def _parse_int_list(text: str):
    try:
        return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


def _parse_float_list(text: str):
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad float list {text!r}") from exc


@dataclass
class ExperimentConfig:
    experiment: str = "gamma"
    offspring: dict = field(default_factory=lambda: {0: 0.25, 2: 0.75})
    bias: tuple = ("atoms", {2.0: 0.5, 3.0: 0.5})
    seed: int = 1
    workers: int = 1
    out: str = "out"
    # ensemble knobs
    replicas: int = 500
    distances: tuple = (64, 128, 256, 512)
    step_budget: int = 10 ** 7
    regen_horizon: int = 10 ** 4
    # snapshot knobs
    snapshot_k: int = 8
    snapshot_first: int = 200
    snapshot_window: int = 100
    snapshot_count: int = 10 ** 4
    k_stop: int = 30
    # estimator knobs
    n_traps: int = 10 ** 6
    top_fraction: float = 0.01
    quantiles: tuple = (0.99, 0.995, 0.999)
    k_ladder: tuple = (4, 6, 8)
    lambda_grid: tuple = (0.25, 0.5, 1.0, 2.0, 4.0)
    laplace_n: int = 256
    laplace_replicas: int = 2000
    dichotomy_beta: float = 2.0
    deep_fraction: float = 0.01
    psi_distance: int = 10 ** 4
    trap_cap: int = 10 ** 8

    _PARSERS = {
        "experiment": str,
        "offspring": _parse_offspring,
        "bias": _parse_bias,
        "seed": int,
        "workers": int,
        "out": str,
        "replicas": int,
        "distances": _parse_int_list,
        "step_budget": int,
        "regen_horizon": int,
        "snapshot_k": int,
        "snapshot_first": int,
        "snapshot_window": int,
        "snapshot_count": int,
        "k_stop": int,
        "n_traps": int,
        "top_fraction": float,
        "quantiles": _parse_float_list,
        "k_ladder": _parse_int_list,
        "lambda_grid": _parse_float_list,
        "laplace_n": int,
        "laplace_replicas": int,
        "dichotomy_beta": float,
        "deep_fraction": float,
        "psi_distance": int,
        "trap_cap": int,
    }

    _FORMATTERS = {
        "offspring": _fmt_offspring,
        "bias": _fmt_bias,
        "distances": lambda v: ",".join(str(x) for x in v),
        "quantiles": lambda v: ",".join(repr(x) for x in v),
        "k_ladder": lambda v: ",".join(str(x) for x in v),
        "lambda_grid": lambda v: ",".join(repr(x) for x in v),
    }

    _RANGES = {
        "seed": (0, 2 ** 63 - 1),
        "workers": (1, 256),
        "replicas": (1, 10 ** 7),
        "step_budget": (1, 10 ** 12),
        "regen_horizon": (1, 10 ** 9),
        "snapshot_k": (2, 20),
        "snapshot_first": (1, 10 ** 6),
        "snapshot_window": (1, 10 ** 4),
        "snapshot_count": (1, 10 ** 8),
        "k_stop": (10, 200),
        "n_traps": (1, 10 ** 9),
        "laplace_n": (8, 10 ** 6),
        "laplace_replicas": (100, 10 ** 7),
        "psi_distance": (100, 10 ** 7),
        "trap_cap": (10 ** 3, 10 ** 9),
    }

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"experiment: {self.experiment!r} not one of {EXPERIMENTS}")
        try:
            self.offspring_law()
        except ValueError as exc:
            raise ConfigError(f"offspring: {exc}") from exc
        try:
            self.bias_law()
        except ValueError as exc:
            raise ConfigError(f"bias: {exc}") from exc
        for name, (lo, hi) in self._RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ConfigError(f"{name}: {v} outside [{lo}, {hi}]")
        if not 0.0 < self.top_fraction <= 0.5:
            raise ConfigError(f"top_fraction: {self.top_fraction} outside (0, 0.5]")
        if not all(0.9 < qq < 0.9999 for qq in self.quantiles):
            raise ConfigError("quantiles: must lie in (0.9, 0.9999)")
        if not all(2 <= k <= 16 for k in self.k_ladder):
            raise ConfigError("k_ladder: entries must lie in 2..16")
        if max(self.k_ladder) > self.snapshot_k + 1:
            raise ConfigError("k_ladder: entries must not exceed snapshot_k + 1")
        if self.dichotomy_beta <= 1.0:
            raise ConfigError(f"dichotomy_beta: {self.dichotomy_beta} must exceed 1")
        if not 0.0 < self.deep_fraction <= 0.5:
            raise ConfigError(f"deep_fraction: {self.deep_fraction} outside (0, 0.5]")
        if not self.distances or sorted(self.distances) != list(self.distances):
            raise ConfigError("distances: must be a nonempty ascending list")

    def offspring_law(self) -> OffspringLaw:
        return OffspringLaw.from_map(self.offspring)

    def bias_law(self) -> BiasLaw:
        kind, payload = self.bias
        if kind == "atoms":
            return BiasLaw.from_atoms(payload)
        return BiasLaw.from_uniform(*payload)

    # -- serialization -------------------------------------------------------

    # execution-environment fields: serialized, but excluded from the hash
    # so that worker count or output path cannot change record streams
    _EXECUTION_FIELDS = ("workers", "out")

    def to_text(self, include_execution: bool = True) -> str:
        lines = [f"schema = {SCHEMA_VERSION}"]
        for f in fields(self):
            name = f.name
            if not include_execution and name in self._EXECUTION_FIELDS:
                continue
            v = getattr(self, name)
            if name in self._FORMATTERS:
                v = self._FORMATTERS[name](v)
            lines.append(f"{name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key == "schema":
                if value != str(SCHEMA_VERSION):
                    raise ConfigError(f"schema: version {value!r} unsupported "
                                      f"(this build reads {SCHEMA_VERSION})")
                continue
            if key not in cls._PARSERS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            seen.add(key)
            try:
                setattr(cfg, key, cls._PARSERS[key](value))
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        return hashlib.sha256(
            self.to_text(include_execution=False).encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        import copy

        out = copy.deepcopy(self)
        for k, v in kw.items():
            setattr(out, k, v)
        out.validate()
        return out
