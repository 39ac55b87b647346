"""Run configuration: INI files, strict key validation, CLI precedence.

A config file is optional; every value has a default and every value can
be overridden by a command-line flag.  Precedence is flags over file
over defaults.  Unknown sections or keys are rejected loudly instead of
being ignored, since a typo that silently reverts to a default is the
worst possible failure mode for a numerical sweep.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

_SCHEMA: dict[str, dict[str, str]] = {
    "problem": {
        "preset": "str",
        "bundle": "str",
        "contrast": "float",
        "seed": "int",
        "source": "str",
    },
    "partition": {
        "count": "int",
        "seed": "int",
        "balance_tol": "float",
        "file": "str",
    },
    "aux": {
        "nov": "int",
        "cpo_mode": "str",
        "cpo_value": "float",
    },
    "cem": {
        "layers": "int",
    },
    "run": {
        "threads": "int",
        "output": "str",
        "verbose": "bool",
    },
    "study": {
        "nov_list": "int_list",
        "layers_list": "int_list",
        "contrast_list": "float_list",
    },
    "bench": {
        "threads_list": "int_list",
    },
}

# Maps (section, key) to the RunConfig field name.
_FIELD_OF = {
    ("problem", "preset"): "preset",
    ("problem", "bundle"): "bundle",
    ("problem", "contrast"): "contrast",
    ("problem", "seed"): "seed",
    ("problem", "source"): "source",
    ("partition", "count"): "part_count",
    ("partition", "seed"): "part_seed",
    ("partition", "balance_tol"): "balance_tol",
    ("partition", "file"): "partition_file",
    ("aux", "nov"): "nov",
    ("aux", "cpo_mode"): "cpo_mode",
    ("aux", "cpo_value"): "cpo_value",
    ("cem", "layers"): "layers",
    ("run", "threads"): "threads",
    ("run", "output"): "output",
    ("run", "verbose"): "verbose",
    ("study", "nov_list"): "nov_list",
    ("study", "layers_list"): "layers_list",
    ("study", "contrast_list"): "contrast_list",
    ("bench", "threads_list"): "threads_list",
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one CLI invocation."""

    preset: str | None = None
    bundle: str | None = None
    contrast: float | None = None
    seed: int = 0
    source: str = "ones"
    part_count: int = 16
    part_seed: int = 0
    balance_tol: float = 0.3
    partition_file: str | None = None
    nov: int = 3
    cpo_mode: str = "computed"
    cpo_value: float | None = None
    layers: int = 2
    threads: int | None = None
    output: str = "out"
    verbose: bool = False
    nov_list: tuple[int, ...] = (3,)
    layers_list: tuple[int, ...] = (1, 2, 3)
    contrast_list: tuple[float, ...] = ()
    threads_list: tuple[int, ...] = (1, 2, 8)

    def digest(self) -> str:
        payload = {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def as_dict(self) -> dict:
        return {f.name: _jsonable(getattr(self, f.name)) for f in fields(self)}


def _jsonable(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def _parse_value(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "str":
            return raw
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int_list":
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        if kind == "float_list":
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: unhandled kind {kind}")  # pragma: no cover


def read_config_file(path: str | os.PathLike) -> dict[str, object]:
    """Parse an INI file into RunConfig field overrides, strictly."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    overrides: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            known = ", ".join(sorted(_SCHEMA))
            raise ConfigError(
                f"{path}: unknown section [{section}]; known sections: {known}"
            )
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                known = ", ".join(sorted(_SCHEMA[section]))
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]; known keys: {known}"
                )
            if raw.strip() == "":
                continue
            kind = _SCHEMA[section][key]
            overrides[_FIELD_OF[(section, key)]] = _parse_value(
                kind, raw, f"{path} [{section}] {key}"
            )
    return overrides


def resolve_config(
    config_path: str | os.PathLike | None,
    cli_overrides: dict[str, object],
) -> RunConfig:
    """Defaults, then file values, then CLI values (None means unset)."""
    cfg = RunConfig()
    if config_path is not None:
        cfg = replace(cfg, **read_config_file(config_path))
    actual = {k: v for k, v in cli_overrides.items() if v is not None}
    valid = {f.name for f in fields(RunConfig)}
    unknown = set(actual) - valid
    if unknown:
        raise ConfigError(f"unknown config overrides: {sorted(unknown)}")
    return replace(cfg, **actual)
