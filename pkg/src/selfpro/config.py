"""Run configuration: documented keys, INI parsing, overrides and hashing.

Config files are flat INI sections; every key is globally unique, has a
typed default, and unknown keys are rejected with a nearest-match hint.
Command-line overrides ("key=value") are applied after the file. The config
hash is a SHA-256 over the sorted, canonicalized merged key/value pairs, so
it is stable under key reordering.
"""

from __future__ import annotations

import configparser
import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .pretrain import PretrainConfig
from .prompt import PromptConfig

# key -> (canonical section, type, default)
SCHEMA: dict[str, tuple[str, type, object]] = {
    # pretraining
    "epochs": ("pretrain", int, 400),
    "lr": ("pretrain", float, 5e-4),
    "tau": ("pretrain", float, 0.5),
    "n_negatives": ("pretrain", int, 256),
    "ema_momentum": ("pretrain", float, 0.99),
    "pretext": ("pretrain", str, "graphacl"),
    "sgd_momentum": ("pretrain", float, 0.9),
    "negatives_use_projector": ("pretrain", bool, False),
    "hidden_dim": ("pretrain", int, 256),
    "embed_dim": ("pretrain", int, 256),
    "encoder_depth": ("pretrain", int, 2),
    "projector_depth": ("pretrain", int, 1),
    # prompt tuning
    "mode": ("prompt", str, "none"),
    "injection": ("prompt", str, "fixed"),
    "mu": ("prompt", float, 0.5),
    "sim_kind": ("prompt", str, "dot"),
    "tau_tune": ("prompt", float, 0.5),
    "tune_lr": ("prompt", float, 0.01),
    "tune_epochs": ("prompt", int, 200),
    "two_hop_mode": ("prompt", str, "union"),
    "patience": ("prompt", int, 50),
    "tune_momentum": ("prompt", float, 0.9),
    # harness protocols
    "k": ("harness", int, 1),
    "n_val_per_class": ("harness", int, 5),
    "n_repeats": ("harness", int, 10),
    "val_frac": ("harness", float, 0.2),
    "test_frac": ("harness", float, 0.1),
    "protocol": ("harness", str, "few_shot"),
    "semi_train_per_class": ("harness", int, 20),
    "semi_n_val": ("harness", int, 500),
    "semi_n_test": ("harness", int, 1000),
    "lp_pretrain_per_repeat": ("harness", bool, True),
    # run-wide
    "seed": ("run", int, 0),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    kind = SCHEMA[key][1]
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r} expects {kind.__name__}, got {raw!r}") from None


def _reject_unknown(key: str):
    if key not in SCHEMA:
        hint = difflib.get_close_matches(key, SCHEMA.keys(), n=1)
        suffix = f"; nearest valid key: {hint[0]!r}" if hint else ""
        raise ConfigError(f"unknown config key {key!r}{suffix} "
                          f"(valid keys: {', '.join(sorted(SCHEMA))})")


def hash_mapping(mapping: dict) -> str:
    """SHA-256 over sorted key=value lines; values canonicalized via JSON."""
    lines = [f"{k}={json.dumps(mapping[k], sort_keys=True)}" for k in sorted(mapping)]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


@dataclass
class RunConfig:
    values: dict
    hash: str

    def __getitem__(self, key):
        return self.values[key]

    def pretrain_config(self) -> PretrainConfig:
        v = self.values
        return PretrainConfig(
            epochs=v["epochs"], lr=v["lr"], tau=v["tau"], n_negatives=v["n_negatives"],
            ema_momentum=v["ema_momentum"], pretext=v["pretext"],
            sgd_momentum=v["sgd_momentum"],
            negatives_use_projector=v["negatives_use_projector"],
            hidden_dim=v["hidden_dim"], embed_dim=v["embed_dim"],
            encoder_depth=v["encoder_depth"], projector_depth=v["projector_depth"],
            seed=v["seed"])

    def prompt_config(self) -> PromptConfig:
        v = self.values
        return PromptConfig(
            mode=v["mode"], injection=v["injection"], mu=v["mu"], sim_kind=v["sim_kind"],
            tau_tune=v["tau_tune"], tune_lr=v["tune_lr"], tune_epochs=v["tune_epochs"],
            two_hop_mode=v["two_hop_mode"], patience=v["patience"],
            tune_momentum=v["tune_momentum"], seed=v["seed"])


def parse_config(path=None, overrides=()) -> RunConfig:
    """Merge defaults <- config file <- key=value overrides, then hash."""
    values = {key: spec[2] for key, spec in SCHEMA.items()}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _reject_unknown(key)
                values[key] = _coerce(key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        _reject_unknown(key)
        values[key] = _coerce(key, raw)
    return RunConfig(values, hash_mapping(values))


def default_config() -> RunConfig:
    return parse_config(None, ())


def write_template(path) -> Path:
    """Write a fully-commented config file with all defaults, grouped by section."""
    sections: dict[str, list[str]] = {}
    for key, (section, _, default) in SCHEMA.items():
        sections.setdefault(section, []).append(f"{key} = {default}")
    lines = []
    for section in ("run", "pretrain", "prompt", "harness"):
        lines.append(f"[{section}]")
        lines.extend(sections.get(section, []))
        lines.append("")
    path = Path(path)
    path.write_text("\n".join(lines))
    return path
