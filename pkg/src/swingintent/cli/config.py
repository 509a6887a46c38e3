"""Pipeline configuration: profiles, schema validation, hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema
import yaml

PROFILES = ("desk", "full")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_RANGE = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "nrounds": _POS_INT, "eta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "max_depth": _POS_INT, "min_child_weight": {"type": "number", "minimum": 0},
        "gamma": {"type": "number", "minimum": 0},
        "subsample": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "colsample_by_tree": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "swingintent pipeline config",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "profile": {"enum": list(PROFILES)},
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pitches": {"type": ["string", "null"]},
                "events": {"type": ["string", "null"]},
            },
        },
        "columns": {"type": "object", "additionalProperties": {"type": "string"}},
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_batters": _POS_INT, "n_pitchers": _POS_INT, "n_team_games": _POS_INT},
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "chains": {"type": "integer", "minimum": 2}, "warmup": _POS_INT,
                "draws": {"type": "integer", "minimum": 100},
                "target_accept": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_tree_depth": _POS_INT,
                "test_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "gbm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "hit": _TRAIN,
                "pitch": {"type": "object", "additionalProperties": False,
                          "properties": {k: _TRAIN for k in "ABCDEF"}},
                "pitch_all": _TRAIN,
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "bs_range": _RANGE, "sl_range": _RANGE, "resolution": {"type": "integer", "minimum": 1},
                "simulate_n": _POS_INT, "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "reference": {"type": ["object", "null"]},
    },
}

# Scale profiles.  "desk" shortens MCMC and boosting so the synthetic
# pipeline runs in minutes; "full" uses the tuned settings.
DEFAULTS = {
    "desk": {
        "profile": "desk",
        "inputs": {"pitches": None, "events": None},
        "columns": {},
        "synth": {"n_batters": 60, "n_pitchers": 40, "n_team_games": 250},
        "sampler": {"chains": 4, "warmup": 500, "draws": 500, "target_accept": 0.8, "max_tree_depth": 10,
                    "test_fraction": 0.2},
        "gbm": {"hit": {"nrounds": 200, "eta": 0.1}, "pitch": {}, "pitch_all": {"nrounds": 60, "eta": 0.15}},
        "chain": {"bs_range": [-3.0, 1.0], "sl_range": [-0.4, 0.1], "resolution": 9, "simulate_n": 200_000,
                  "tol": 1e-10},
        "reference": None,
    },
    "full": {
        "profile": "full",
        "inputs": {"pitches": None, "events": None},
        "columns": {},
        "synth": {"n_batters": 700, "n_pitchers": 800, "n_team_games": 4860},
        "sampler": {"chains": 4, "warmup": 2000, "draws": 2000, "target_accept": 0.8, "max_tree_depth": 10,
                    "test_fraction": 0.2},
        "gbm": {"hit": {}, "pitch": {}, "pitch_all": {}},
        "chain": {"bs_range": [-3.0, 1.0], "sl_range": [-0.4, 0.1], "resolution": 21, "simulate_n": 1_000_000,
                  "tol": 1e-10},
        "reference": "builtin",
    },
}


class ConfigError(ValueError):
    """Schema violation, reported with the offending field and line."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _node_line(root, path) -> int | None:
    """1-based line of the YAML node at ``path`` (or its deepest existing parent)."""
    node, line = root, None
    if node is not None:
        line = node.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == str(key)), None)
            if nxt is None:
                # point at the key itself when the value is absent/unknown
                k_node = next((k for k, _ in node.value if k.value == str(key)), None)
                return k_node.start_mark.line + 1 if k_node is not None else line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def _error_message(err: jsonschema.ValidationError, root, source: str) -> str:
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            path = path + [extra[0]]
    field = ".".join(str(p) for p in path) or "<root>"
    line = _node_line(root, path) if root is not None else None
    where = f"{source}:{line}" if line is not None else source
    return f"{where}: field '{field}': {err.message}"


def validate(raw: dict, root=None, source: str = "<config>"):
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("\n".join(_error_message(e, root, source) for e in errors))


def load_config(path=None, seed=None, profile=None) -> dict:
    """Resolve a config: profile defaults, then the file, then CLI overrides.

    Raises
    ------
    ConfigError
        On a schema violation (message carries ``file:line: field``), a
        missing seed, or a referenced input path that does not exist.
    """
    raw, root, source = {}, None, "<config>"
    if path is not None:
        source = str(path)
        text = Path(path).read_text()
        try:
            root = yaml.compose(text)
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{source}:1: top level must be a mapping")
    if seed is not None:
        raw = {**raw, "seed": seed}
    if profile is not None:
        raw = {**raw, "profile": profile}
    validate(raw, root, source)
    cfg = _merge(DEFAULTS[raw.get("profile", "desk")], raw)
    base = Path(path).parent if path is not None else Path(".")
    for key, p in cfg["inputs"].items():
        if p is None:
            continue
        resolved = Path(p) if Path(p).is_absolute() else base / p
        if not resolved.exists():
            line = _node_line(root, ["inputs", key]) if root is not None else None
            where = f"{source}:{line}" if line is not None else source
            raise ConfigError(f"{where}: field 'inputs.{key}': path does not exist: {resolved}")
        cfg["inputs"][key] = str(resolved.resolve())
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the resolved config; input paths contribute by content, not location."""
    c = copy.deepcopy(cfg)
    for key, p in c["inputs"].items():
        if p is not None:
            c["inputs"][key] = file_hash(p)
    return hashlib.sha256(json.dumps(c, sort_keys=True).encode()).hexdigest()[:16]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
