"""Flat ``section.key = value`` run configuration.

Precedence, lowest first: built-in defaults, config file, environment
variables (``NOISYPLL_SECTION__KEY``), command-line flags.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

ENV_PREFIX = "NOISYPLL_"


class ConfigError(ValueError):
    pass


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip().lower()
    return None if t in ("auto", "none", "") else float(t)


def _opt_int(text):
    t = str(text).strip().lower()
    return None if t in ("auto", "none", "") else int(t)


def _float_or_inf(text):
    t = str(text).strip().lower()
    return math.inf if t in ("inf", "off") else float(t)


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


# key -> (parser, default)
SCHEMA = {
    "run.seeds": (_int_list, [0]),
    "run.workers": (int, 1),
    "dataset.num_classes": (int, 5),
    "dataset.num_samples": (int, 2000),
    "dataset.feature_dim": (int, 2),
    "dataset.q": (float, 0.3),
    "dataset.eta": (float, 0.3),
    "dataset.class_separation": (float, 3.0),
    "dataset.train_frac": (float, 0.8),
    "dataset.val_frac": (float, 0.1),
    "dataset.merge_validation": (_bool, False),
    "model.hidden": (_int_list, [64, 64]),
    "optim.lr": (float, 0.01),
    "optim.momentum": (float, 0.9),
    "optim.epochs": (int, 300),
    "optim.batch_size": (int, 64),
    "loss.kind": (str, "pll"),
    "loss.lambda_c": (float, 1.0),
    "loss.lambda_r": (float, 1.0),
    "loss.lambda_g": (float, 0.7),
    "refine.enabled": (_bool, True),
    "refine.tau_eps": (_float_or_inf, 0.008),
    "refine.num_aug": (int, 1),
    "refine.aug_sigma": (_opt_float, None),
    "refine.swapping": (_bool, False),
    "refine.e0_mode": (str, "convergence"),
    "refine.e0_fixed": (_opt_int, None),
    "metrics.bins": (int, 100),
    "theory.alpha": (float, 1.0),
    "theory.epsilon": (float, 0.1),
    "theory.imbalance": (float, 2.0),
    "theory.eta_init": (float, 0.2),
    "theory.m_init": (float, 0.5),
    "theory.num_classes": (int, 4),
    "theory.q": (float, 0.3),
    "theory.n": (int, 10_000),
    "theory.perturbation": (str, "adversarial"),
    "sweep.tau_eps": (_str_list, []),
    "sweep.e0": (_str_list, []),
    "sweep.swapping": (_str_list, []),
    "sweep.num_aug": (_str_list, []),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, raw):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _ = SCHEMA[key]
        try:
            self.values[key] = parser(raw) if isinstance(raw, str) else raw
        except ValueError as err:
            raise ConfigError(f"bad value for {key}: {err}") from None
        return self

    def with_overrides(self, **pairs):
        out = RunConfig(dict(self.values))
        for k, v in pairs.items():
            out.set(k, v)
        return out

    def section(self, name):
        prefix = name + "."
        return {k[len(prefix) :]: v for k, v in self.values.items() if k.startswith(prefix)}

    def dumps(self):
        lines = []
        for k in SCHEMA:
            v = self.values[k]
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif v is None:
                v = "auto"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


def parse_config_text(text, cfg=None):
    cfg = cfg or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            cfg.set(key, value)
        except ConfigError as err:
            raise ConfigError(f"line {lineno}: {err}") from None
    return cfg


def env_overrides(cfg, environ=None):
    environ = os.environ if environ is None else environ
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        cfg.set(key, value)
    return cfg


def load_config(path=None, environ=None):
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            parse_config_text(fh.read(), cfg)
    return env_overrides(cfg, environ)
