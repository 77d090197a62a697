"""JSON containers for batches and fitted models.

Both files share one layout: a ``format``/``version`` tag, a ``header`` with
the scalar metadata and flat per-record arrays.  Floats go through
:func:`json.dumps`, whose ``repr`` encoding is the shortest string that
round-trips, so save/load is lossless.  Keys are sorted so identical inputs
produce identical bytes.
"""

import json
import math

import numpy as np

from mffqi.exceptions import ConfigurationError
from mffqi.fqi import Batch, TransitionRecord
from mffqi.kernels import BaseKernel, Config, EmbeddingKernel
from mffqi.regression import QModel

BATCH_FORMAT = "mffqi.batch"
MODEL_FORMAT = "mffqi.model"
VERSION = 1


def _flat(arr):
    return [float(v) for v in np.asarray(arr).ravel()]


def _unflat(values, n, d):
    return np.asarray(values, dtype=np.float64).reshape(n, d)


def _dump(obj, path):
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _load(path, fmt):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if obj.get("format") != fmt:
        raise ConfigurationError(f"{path} is not a {fmt} file")
    if obj.get("version") != VERSION:
        raise ConfigurationError(f"unsupported {fmt} version {obj.get('version')}")
    return obj


def batch_to_dict(batch):
    header = {
        "d": batch.dim,
        "n_agents": batch.n_agents,
        "n": len(batch),
        "n_actions": batch.n_actions,
        "gamma": batch.gamma,
        "r_max": batch.r_max,
        "env": batch.meta.get("env"),
        "seed": batch.meta.get("seed"),
    }
    records = [
        {"action": r.action, "reward": r.reward, "sample": _flat(r.sample), "next_sample": _flat(r.next_sample)}
        for r in batch.records
    ]
    return {"format": BATCH_FORMAT, "version": VERSION, "header": header, "records": records}


def batch_from_dict(obj):
    h = obj["header"]
    n, d = h["n_agents"], h["d"]
    records = [
        TransitionRecord(_unflat(r["sample"], n, d), r["action"], r["reward"], _unflat(r["next_sample"], n, d))
        for r in obj["records"]
    ]
    if len(records) != h["n"]:
        raise ConfigurationError(f"header says {h['n']} records, found {len(records)}")
    meta = {"env": h.get("env"), "seed": h.get("seed")}
    return Batch(records, h["r_max"], h["gamma"], h["n_actions"], meta=meta)


def save_batch(batch, path):
    _dump(batch_to_dict(batch), path)


def load_batch(path):
    return batch_from_dict(_load(path, BATCH_FORMAT))


def model_to_dict(model):
    header = {
        "d": model.support[0].dim,
        "n_support": len(model.support),
        "q_max": None if math.isinf(model.q_max) else model.q_max,
        "truncated": model.truncated,
        "symmetric_clamp": model.symmetric_clamp,
        "base": model.base.to_dict(),
        "emb": model.emb.to_dict(),
    }
    support = [{"action": c.action, "n_agents": c.n_agents, "sample": _flat(c.states)} for c in model.support]
    return {"format": MODEL_FORMAT, "version": VERSION, "header": header, "support": support,
            "alpha": _flat(model.alpha)}


def model_from_dict(obj):
    h = obj["header"]
    support = [Config(s["action"], _unflat(s["sample"], s["n_agents"], h["d"])) for s in obj["support"]]
    q_max = math.inf if h["q_max"] is None else h["q_max"]
    return QModel(support, obj["alpha"], BaseKernel(**h["base"]), EmbeddingKernel(**h["emb"]), q_max,
                  h["truncated"], h["symmetric_clamp"])


def save_model(model, path):
    _dump(model_to_dict(model), path)


def load_model(path):
    return model_from_dict(_load(path, MODEL_FORMAT))
