"""Run configuration: one validated schema, presets, files, flag overrides.

A run is described by a plain JSON object (human-editable key/value text).
Values merge with precedence flag > file > preset > built-in default, and
unknown keys are rejected with the full key path so a typo never silently
falls back to a default.  Byte sizes accept suffixed strings ("64M", "2GiB")
anywhere the schema wants bytes.

Presets cover the shipped experiment families; each is a full config the
other layers may override key by key.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field

from .adversary import ATTACK_KINDS
from .sim import MODELS, SimConfig
from .timing import LatencyConfig
from .workload import PATTERNS, SyntheticSpec, TraceRecord, generate, open_trace, parse_trace

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad run configuration; the message names the offending key path."""


_SIZE_RE = re.compile(r"^(\d+)\s*(?:([KMGT])(?:I?B)?|B)?$", re.IGNORECASE)
_SIZE_SHIFT = {"": 0, "K": 10, "M": 20, "G": 30, "T": 40}


def parse_size(value, path: str = "size") -> int:
    """Bytes from an int or a suffixed string; binary units throughout."""
    if isinstance(value, bool):
        raise ConfigError(f"{path}: expected a byte size, got {value!r}")
    if isinstance(value, int):
        if value <= 0:
            raise ConfigError(f"{path}: size must be positive, got {value}")
        return value
    if isinstance(value, str):
        m = _SIZE_RE.match(value.strip())
        if m:
            return int(m.group(1)) << _SIZE_SHIFT[(m.group(2) or "").upper()]
    raise ConfigError(f"{path}: cannot parse size {value!r}")


def _check_keys(d: dict, allowed, path: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(f"unknown config key {where!r}")


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


# ------------------------------------------------------------------ schema
@dataclass(frozen=True)
class WorkloadConfig:
    """Either a trace file to replay or a synthetic generator spec."""

    trace: str | None = None
    pattern: str = "uniform"
    footprint: int = 16 << 20
    n_accesses: int = 10000
    read_frac: float = 0.7
    accesses_per_instruction: float = 0.01
    zipf_s: float = 1.0
    stride: int | None = None
    enclave_id: int = 1
    seed: int | None = None  # None: follow the run seed

    @classmethod
    def from_dict(cls, d: dict, path: str = "workload") -> "WorkloadConfig":
        _check_keys(d, (f.name for f in dataclasses.fields(cls)), path)
        d = dict(d)
        if "footprint" in d:
            d["footprint"] = parse_size(d["footprint"], f"{path}.footprint")
        if d.get("stride") is not None:
            d["stride"] = parse_size(d["stride"], f"{path}.stride")
        if "pattern" in d and d["pattern"] not in PATTERNS:
            raise ConfigError(
                f"{path}.pattern: must be one of {PATTERNS}, got {d['pattern']!r}"
            )
        cfg = cls(**d)
        if cfg.trace is None:
            try:
                cfg._spec(seed=0)  # range checks fire at load time
            except ValueError as e:
                raise ConfigError(f"{path}: {e}") from e
        return cfg

    def _spec(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            pattern=self.pattern,
            footprint_bytes=self.footprint,
            n_accesses=self.n_accesses,
            read_frac=self.read_frac,
            accesses_per_instruction=self.accesses_per_instruction,
            zipf_s=self.zipf_s,
            enclave_id=self.enclave_id,
            seed=self.seed if self.seed is not None else seed,
            **({"stride_bytes": self.stride} if self.stride is not None else {}),
        )

    def records(self, default_seed: int) -> list[TraceRecord]:
        if self.trace is not None:
            with open_trace(self.trace) as fh:
                return list(parse_trace(fh))
        return generate(self._spec(default_seed))


@dataclass(frozen=True)
class AttackPlan:
    kinds: tuple[str, ...] = ATTACK_KINDS
    seeds: int = 100

    @classmethod
    def from_dict(cls, d: dict, path: str = "attack") -> "AttackPlan":
        _check_keys(d, (f.name for f in dataclasses.fields(cls)), path)
        kinds = tuple(d.get("kinds", ATTACK_KINDS))
        for k in kinds:
            if k not in ATTACK_KINDS:
                raise ConfigError(f"{path}.kinds: unknown attack kind {k!r}")
        seeds = d.get("seeds", 100)
        if not isinstance(seeds, int) or seeds <= 0:
            raise ConfigError(f"{path}.seeds: must be a positive integer")
        return cls(kinds=kinds, seeds=seeds)


def _latency_from_dict(d: dict, path: str = "latency") -> LatencyConfig:
    _check_keys(d, (f.name for f in dataclasses.fields(LatencyConfig)), path)
    try:
        return dataclasses.replace(LatencyConfig(), **d)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e


@dataclass(frozen=True)
class RunConfig:
    model: str = "secscale"
    models: tuple[str, ...] = ()
    total_size: int = 64 << 20
    epc_size: int = 1 << 20
    seed: int = 0
    deferred: bool = True
    clubbing: bool = True
    top_cache: bool = True
    eshr_entries: int = 32
    freshness_mode: str = "prng"
    dfp_accuracy: float = 0.5
    dfp_lookahead: int = 256
    latency: LatencyConfig = field(default_factory=LatencyConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    attack: AttackPlan | None = None
    sweep: tuple[dict, ...] = ()
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, (f.name for f in dataclasses.fields(cls)), "")
        d = dict(d)
        for key in ("total_size", "epc_size"):
            if key in d:
                d[key] = parse_size(d[key], key)
        if "model" in d and d["model"] not in MODELS:
            raise ConfigError(f"model: must be one of {MODELS}, got {d['model']!r}")
        if "models" in d:
            for m in d["models"]:
                if m not in MODELS:
                    raise ConfigError(f"models: unknown model {m!r}")
            d["models"] = tuple(d["models"])
        if "latency" in d:
            d["latency"] = _latency_from_dict(d["latency"])
        if "workload" in d:
            d["workload"] = WorkloadConfig.from_dict(d["workload"])
        if d.get("attack") is not None:
            d["attack"] = AttackPlan.from_dict(d["attack"])
        if "sweep" in d:
            rows = d["sweep"]
            if not isinstance(rows, (list, tuple)):
                raise ConfigError("sweep: must be a list of override objects")
            d["sweep"] = tuple(rows)
        cfg = cls(**d)
        # surface model-layer range errors now, with schema context
        try:
            cfg.to_sim_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cfg

    def to_sim_config(self, model: str | None = None) -> SimConfig:
        return SimConfig(
            model=model or self.model,
            total_size=self.total_size,
            epc_size=self.epc_size,
            seed=self.seed,
            deferred=self.deferred,
            clubbing=self.clubbing,
            top_cache=self.top_cache,
            eshr_entries=self.eshr_entries,
            freshness_mode=self.freshness_mode,
            dfp_accuracy=self.dfp_accuracy,
            dfp_lookahead=self.dfp_lookahead,
            latency=self.latency,
        )

    def records(self) -> list[TraceRecord]:
        return self.workload.records(self.seed)


# ----------------------------------------------------------------- presets
_THRASH_WORKLOAD = {
    # footprint 2x the default EPC: roughly half of all accesses fault
    "pattern": "uniform",
    "footprint": "2M",
    "n_accesses": 6000,
    "read_frac": 0.7,
    "accesses_per_instruction": 0.000125,
}

PRESETS: dict[str, dict] = {
    # five-model ordering on a thrashing uniform trace
    "trend": {
        "models": ["baseline", "secscale", "penglai", "dfp", "sgx-client"],
        "total_size": "64M",
        "epc_size": "1M",
        "workload": dict(_THRASH_WORKLOAD),
    },
    # page-fault penalty sensitivity of the synchronous-fault designs
    "fault-sweep": {
        "model": "sgx-client",
        "total_size": "64M",
        "epc_size": "1M",
        "workload": dict(_THRASH_WORKLOAD),
        "sweep": [
            {"latency": {"sgx_fault_penalty": p}}
            for p in (5000, 10000, 20000, 30000, 40000)
        ],
    },
    # clubbing and the top-digest cache, each toggled off in turn
    "ablation": {
        "model": "secscale",
        "total_size": "64M",
        "epc_size": "1M",
        "workload": {
            "pattern": "zipf",
            "zipf_s": 1.0,
            "footprint": "8M",
            "n_accesses": 6000,
            "accesses_per_instruction": 0.000125,
        },
        "sweep": [{}, {"clubbing": False}, {"top_cache": False}],
    },
    # footprint inside the page cache: integrity machinery is the only cost
    "merkle-only": {
        "model": "sgx-client",
        "total_size": "64M",
        "epc_size": "1M",
        "workload": dict(_THRASH_WORKLOAD, footprint="512K"),
    },
    # crypto latencies zeroed: paging is the only cost
    "fault-only": {
        "model": "sgx-client",
        "total_size": "64M",
        "epc_size": "1M",
        "latency": {"crypto_block_cycles": 0, "crypto_occupancy_cycles": 0},
        "workload": dict(_THRASH_WORKLOAD),
    },
    # the full physical-adversary suite
    "attack-suite": {
        "attack": {"kinds": list(ATTACK_KINDS), "seeds": 100},
    },
}


# ------------------------------------------------------------------ loading
def load_config(
    path: str | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Merge preset, file and flag layers, then validate once."""
    return RunConfig.from_dict(merge_layers(path, preset, overrides))


def merge_layers(
    path: str | None = None,
    preset: str | None = None,
    overrides: dict | None = None,
) -> dict:
    merged: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(
                f"preset: must be one of {sorted(PRESETS)}, got {preset!r}"
            )
        merged = _deep_merge(merged, PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        merged = _deep_merge(merged, loaded)
    if overrides:
        merged = _deep_merge(merged, overrides)
    return merged


def expand_sweep(merged: dict) -> list[RunConfig]:
    """One RunConfig per sweep row, each row deep-merged over the base."""
    base = {k: v for k, v in merged.items() if k != "sweep"}
    rows = merged.get("sweep") or [{}]
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            raise ConfigError(f"sweep[{i}]: must be an override object")
        out.append(RunConfig.from_dict(_deep_merge(base, row)))
    return out
