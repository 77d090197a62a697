import json
import math

import numpy as np
import pytest

from mffqi.envs import DISCRETE_CHAIN, GAUSSIAN_DRIFT, EnvSpec, GaussianDriftParams, collect_batch, reference_chain
from mffqi.exceptions import ConfigurationError
from mffqi.fqi import FqiConfig, run_mffqi
from mffqi.io import load_batch, load_model, save_batch, save_model
from mffqi.kernels import BaseKernel, Config, EmbeddingKernel
from mffqi.regression import QModel, predict_batch


def test_batch_round_trip_lossless(tmp_path):
    spec = EnvSpec(GAUSSIAN_DRIFT, GaussianDriftParams(d=2, drifts=((0.1, 0.0), (0.0, -0.1)), reward_weights=(1, 1)),
                   n_agents=4, seed=9)
    batch = collect_batch(spec, 15)
    path = tmp_path / "b.json"
    save_batch(batch, path)
    again = load_batch(path)
    assert len(again) == 15 and again.gamma == batch.gamma and again.n_actions == batch.n_actions
    for a, b in zip(batch.records, again.records):
        np.testing.assert_array_equal(a.sample, b.sample)
        np.testing.assert_array_equal(a.next_sample, b.next_sample)
        assert (a.action, a.reward) == (b.action, b.reward)
    assert again.meta == batch.meta


def test_batch_header_fields(tmp_path):
    batch = collect_batch(reference_chain(seed=4), 6)
    path = tmp_path / "b.json"
    save_batch(batch, path)
    header = json.loads(path.read_text())["header"]
    assert {"d", "n_agents", "n", "n_actions", "gamma", "r_max", "env", "seed"} <= set(header)
    assert header["env"]["kind"] == DISCRETE_CHAIN and header["seed"] == 4
    assert header["env"]["params"]["spacing"] == 3.0


def test_save_is_byte_stable(tmp_path):
    batch = collect_batch(reference_chain(obs_noise=0.1), 10)
    save_batch(batch, tmp_path / "a.json")
    save_batch(load_batch(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_model_round_trip(tmp_path, reference_batch):
    model, _, _ = run_mffqi(reference_batch, FqiConfig(kappa=10, lam=1e-6, bandwidth=1.0))
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(again.alpha, model.alpha)
    assert again.base == model.base and again.emb == model.emb and again.q_max == model.q_max
    queries = reference_batch.next_configs(1)[:20]
    np.testing.assert_array_equal(predict_batch(again, queries), predict_batch(model, queries))
    save_model(again, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_infinite_cap_stored_as_null(tmp_path):
    model = QModel([Config(0, [[0.0]])], [1.0], BaseKernel(), EmbeddingKernel())
    save_model(model, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["header"]["q_max"] is None
    assert math.isinf(load_model(tmp_path / "m.json").q_max)


def test_wrong_container_rejected(tmp_path):
    batch = collect_batch(reference_chain(), 3)
    save_batch(batch, tmp_path / "b.json")
    with pytest.raises(ConfigurationError):
        load_model(tmp_path / "b.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_batch(tmp_path / "bad.json")
    with pytest.raises(ConfigurationError):
        load_batch(tmp_path / "missing.json")
    obj = json.loads((tmp_path / "b.json").read_text())
    obj["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(obj))
    with pytest.raises(ConfigurationError):
        load_batch(tmp_path / "v.json")
