"""Experiment configuration: JSON files with dotted-path overrides.

A config file holds any subset of :data:`DEFAULTS`; missing keys take the
default.  A run manifest is also accepted as a config (its ``config`` entry
is used), which is how rows are reproduced from a manifest alone.
"""

import copy
import json
from dataclasses import dataclass

from mffqi.envs import EnvSpec
from mffqi.exceptions import ConfigurationError, ContractViolation
from mffqi.fqi import FqiConfig

EXPERIMENTS = ("train", "oracle-compare", "sweep-agents", "sweep-batch", "convergence", "concentration")

DEFAULTS = {
    "experiment": "train",
    "env": {"kind": "discrete_chain", "n_agents": 4, "r_max": 1.0, "gamma": 0.9, "seed": 0, "params": {}},
    "fqi": {"kappa": 100, "lam": 1e-6, "bandwidth": 1.0, "embedding_kernel": "gaussian_mmd", "tau": None,
            "initial_q": 0.0},
    "batch_size": 200,
    "grids": {
        "n_agents": [4, 8, 16, 32, 64],
        "batch_size": [25, 50, 100, 200],
        "kappa": [0, 1, 2, 3, 4, 5, 6, 8, 10, 12, 15, 20, 25, 30, 40, 60, 100],
        "exponent": [0.5, 1.0, 1.5],
    },
    "seeds": [0, 1, 2, 3, 4],
    "eval": {"n_draws": 8, "heldout_size": 200, "heldout_seed_offset": 1000003, "fit_max_kappa": 30,
             "plateau_kappa": 100},
    "concentration": {"n_values": [8, 16, 32, 64, 128, 256], "resamples": 200, "ref_factor": 100, "dim": 1,
                      "bandwidth": 1.0},
    "output": "results.csv",
    "jobs": 1,
}


def deep_merge(base, update):
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "params":
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text):
    """``"fqi.kappa=50"`` -> ``(["fqi", "kappa"], 50)``; values are JSON when they parse."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_override(cfg, path, value):
    node = cfg
    for key in path[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override inside non-object at {'.'.join(path)}")
    node[path[-1]] = value


def load_raw(path=None, overrides=(), experiment=None):
    """Merged config dict from an optional file, overrides and a subcommand."""
    user = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigurationError("config root must be a JSON object")
        if "config" in user and "git_describe" in user:
            user = user["config"]
    cfg = deep_merge(DEFAULTS, user)
    for text in overrides:
        apply_override(cfg, *parse_override(text))
    if experiment is not None:
        cfg["experiment"] = experiment
    return cfg


@dataclass
class ExperimentConfig:
    experiment: str
    env: EnvSpec
    fqi: FqiConfig
    batch_size: int
    grids: dict
    seeds: list
    eval: dict
    concentration: dict
    output: str
    raw: dict
    jobs: int = 1

    @classmethod
    def from_raw(cls, raw):
        if raw["experiment"] not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {raw['experiment']!r}")
        try:
            env = EnvSpec.from_dict(raw["env"])
            fqi = FqiConfig(**raw["fqi"])
        except (TypeError, KeyError, ContractViolation) as exc:
            raise ConfigurationError(f"invalid config: {exc}") from exc
        seeds = [int(s) for s in raw["seeds"]]
        if not seeds or len(set(seeds)) != len(seeds):
            raise ConfigurationError("seeds must be a nonempty list of distinct integers")
        for name, grid in raw["grids"].items():
            if not grid:
                raise ConfigurationError(f"grid {name!r} is empty")
        if int(raw["batch_size"]) < 1:
            raise ConfigurationError("batch_size must be positive")
        jobs = int(raw.get("jobs", 1))
        if jobs < 1:
            raise ConfigurationError("jobs must be at least 1")
        return cls(raw["experiment"], env, fqi, int(raw["batch_size"]), raw["grids"], seeds, raw["eval"],
                   raw["concentration"], raw["output"], raw, jobs)


def load_config(path=None, overrides=(), experiment=None):
    return ExperimentConfig.from_raw(load_raw(path, overrides, experiment))
