"""Run configuration: JSON document, defaults, and flag precedence.

A config is a JSON object with the fixed section set {schedule, model, edit,
pruning, caption, bench} plus a top-level integer `seed`.  Unknown sections
or keys are rejected so a typo never silently falls back to a default.
Precedence is flag > config file > built-in default; the merged document is
validated before any work starts.
"""

import copy
import hashlib
import json
import os

from ..errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "schedule": {
        "t_max": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
    },
    "model": {
        "base": 16,
        "train_steps": 2000,
        "batch_size": 16,
        "lr": 2e-3,
        "log_every": 100,
        "dataset_n": 500,
        "dataset_seed": 100,
        "noise": 0.0,
    },
    "edit": {
        "t0": 450,
        "s_for": 40,
        "s_gen": 40,
        "alpha_inner": 0.0,
        "alpha_outer": 0.0,
        "rho": 0.0,
        "outer_per_step": True,
        "source_text": "a dim small disc on dark background",
        "target_text": "a bright small disc on dark background",
        "train_steps": 150,
        "batch_pairs": 4,
        "lr": 5e-3,
        "field_lr_scale": 0.1,
        "w_dir": 1.0,
        "w_fid": 5.0,
        "w_reg": 0.01,
        "t_low": 100,
        "t_high": 600,
        "pairs_n": 250,
        "pairs_seed": 0,
    },
    "pruning": {
        "rho": 0.5,
        "lambda_sparsity": 0.1,
        "train_steps": 300,
        "lr": 3e-3,
        "log_every": 50,
        "dataset_n": 24,
        "dataset_seed": 7,
        "maps_per_batch": 4,
    },
    "caption": {
        "backend": "mock",
        "endpoint": "",
        "model": "",
        "timeout_ms": 10000,
        "instruction": "describe the shape, its size, and its brightness",
    },
    "bench": {
        "n_tokens": 4096,
        "channels": 64,
        "rhos": [0.0, 0.1, 0.2, 0.5, 0.9],
        "repeats": 20,
    },
}


def load_config(path):
    """Parse a JSON config file; returns (document, raw bytes).

    A missing file, undecodable bytes, or a non-object root are all config
    errors (exit code 1), never runtime failures.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(
            f"config root must be a JSON object, got {type(doc).__name__}"
        )
    return doc, raw


def _merge_value(path, default, value):
    if isinstance(default, bool):
        # bool first: bool is an int subtype and would satisfy the int check
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ConfigError(f"{path} must be a list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise ConfigError(f"{path}: unsupported config value type")


def effective_config(doc=None, overrides=None):
    """Overlay a config document and flag overrides onto the defaults.

    `overrides` maps dotted paths ("edit.alpha_inner", "seed") to values from
    explicitly passed flags.  Unknown sections or keys raise ConfigError.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if doc:
        for section, body in doc.items():
            if section == "seed":
                cfg["seed"] = _merge_value("seed", DEFAULTS["seed"], body)
                continue
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in body.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                cfg[section][key] = _merge_value(
                    f"{section}.{key}", DEFAULTS[section][key], value
                )
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        if dotted == "seed":
            cfg["seed"] = _merge_value("seed", DEFAULTS["seed"], value)
            continue
        section, _, key = dotted.partition(".")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {dotted}")
        cfg[section][key] = _merge_value(dotted, DEFAULTS[section][key], value)
    validate_config(cfg)
    return cfg


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def validate_config(cfg):
    """Range checks over a merged config; messages name the offending key."""
    _require(cfg["seed"] >= 0, f"seed must be >= 0, got {cfg['seed']}")
    s = cfg["schedule"]
    _require(s["t_max"] >= 1, f"schedule.t_max must be >= 1, got {s['t_max']}")
    _require(
        0.0 < s["beta_start"] <= s["beta_end"] < 1.0,
        "schedule requires 0 < beta_start <= beta_end < 1, got "
        f"{s['beta_start']}, {s['beta_end']}",
    )
    m = cfg["model"]
    _require(m["base"] >= 1, f"model.base must be >= 1, got {m['base']}")
    _require(m["train_steps"] >= 0, f"model.train_steps must be >= 0, got {m['train_steps']}")
    _require(m["batch_size"] >= 1, f"model.batch_size must be >= 1, got {m['batch_size']}")
    _require(m["lr"] > 0.0, f"model.lr must be > 0, got {m['lr']}")
    _require(m["log_every"] >= 1, f"model.log_every must be >= 1, got {m['log_every']}")
    _require(m["dataset_n"] >= 1, f"model.dataset_n must be >= 1, got {m['dataset_n']}")
    _require(m["noise"] >= 0.0, f"model.noise must be >= 0, got {m['noise']}")
    e = cfg["edit"]
    _require(
        0 < e["t0"] <= s["t_max"],
        f"edit.t0 must be in (0, {s['t_max']}], got {e['t0']}",
    )
    _require(e["s_for"] >= 1, f"edit.s_for must be >= 1, got {e['s_for']}")
    _require(e["s_gen"] >= 1, f"edit.s_gen must be >= 1, got {e['s_gen']}")
    for knob in ("alpha_inner", "alpha_outer"):
        _require(
            0.0 <= e[knob] <= 1.0,
            f"edit.{knob} must be in [0, 1], got {e[knob]}",
        )
    _require(0.0 <= e["rho"] < 1.0, f"edit.rho must be in [0, 1), got {e['rho']}")
    _require(e["train_steps"] >= 1, f"edit.train_steps must be >= 1, got {e['train_steps']}")
    _require(e["batch_pairs"] >= 1, f"edit.batch_pairs must be >= 1, got {e['batch_pairs']}")
    _require(e["lr"] > 0.0, f"edit.lr must be > 0, got {e['lr']}")
    _require(
        e["field_lr_scale"] >= 0.0,
        f"edit.field_lr_scale must be >= 0, got {e['field_lr_scale']}",
    )
    for knob in ("w_dir", "w_fid", "w_reg"):
        _require(e[knob] >= 0.0, f"edit.{knob} must be >= 0, got {e[knob]}")
    _require(
        1 <= e["t_low"] <= e["t_high"] <= s["t_max"],
        f"edit requires 1 <= t_low <= t_high <= {s['t_max']}, got "
        f"{e['t_low']}, {e['t_high']}",
    )
    _require(e["pairs_n"] >= 1, f"edit.pairs_n must be >= 1, got {e['pairs_n']}")
    for knob in ("source_text", "target_text"):
        _require(e[knob].strip() != "", f"edit.{knob} must be a nonempty string")
    p = cfg["pruning"]
    _require(0.0 <= p["rho"] < 1.0, f"pruning.rho must be in [0, 1), got {p['rho']}")
    _require(
        p["lambda_sparsity"] >= 0.0,
        f"pruning.lambda_sparsity must be >= 0, got {p['lambda_sparsity']}",
    )
    _require(p["train_steps"] >= 1, f"pruning.train_steps must be >= 1, got {p['train_steps']}")
    _require(p["lr"] > 0.0, f"pruning.lr must be > 0, got {p['lr']}")
    _require(p["log_every"] >= 1, f"pruning.log_every must be >= 1, got {p['log_every']}")
    _require(p["dataset_n"] >= 1, f"pruning.dataset_n must be >= 1, got {p['dataset_n']}")
    _require(
        p["maps_per_batch"] >= 1,
        f"pruning.maps_per_batch must be >= 1, got {p['maps_per_batch']}",
    )
    c = cfg["caption"]
    _require(
        c["backend"] in ("mock", "http"),
        f"caption.backend must be 'mock' or 'http', got {c['backend']!r}",
    )
    if c["backend"] == "http":
        _require(c["endpoint"].strip() != "", "caption.backend http requires caption.endpoint")
    _require(c["timeout_ms"] > 0, f"caption.timeout_ms must be > 0, got {c['timeout_ms']}")
    _require(c["instruction"].strip() != "", "caption.instruction must be a nonempty string")
    b = cfg["bench"]
    _require(b["n_tokens"] >= 1, f"bench.n_tokens must be >= 1, got {b['n_tokens']}")
    _require(b["channels"] >= 1, f"bench.channels must be >= 1, got {b['channels']}")
    _require(b["repeats"] >= 1, f"bench.repeats must be >= 1, got {b['repeats']}")
    _require(len(b["rhos"]) >= 1, "bench.rhos must be a nonempty list")
    for r in b["rhos"]:
        _require(0.0 <= r < 1.0, f"bench.rhos entries must be in [0, 1), got {r}")


def config_hash(raw_bytes, cfg):
    """Identity of this run's configuration.

    When a config file was given, the hash covers its exact bytes, so it
    changes iff the file bytes change.  Without a file the hash covers the
    canonical serialization of the effective (all-defaults plus flags)
    config.
    """
    if raw_bytes is not None:
        return hashlib.sha256(raw_bytes).hexdigest()
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
