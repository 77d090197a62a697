"""Desk-scale experiments: training, oracle comparison, sweeps and curves.

Every experiment returns a list of :class:`ResultRow`.  Rows are produced in
a fixed order (grid value, then seed) and depend only on the configuration,
so two runs of the same config write identical CSV files.  Wall-clock times
are kept on the rows but written to a separate sidecar file.
"""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from mffqi.envs import DISCRETE_CHAIN, collect_batch
from mffqi.exceptions import ConfigurationError
from mffqi.fqi import bellman_residual, run_mffqi
from mffqi.kernels import BaseKernel, Config, inner_matrix, self_inner
from mffqi.oracle import compare_q, oracle_for
from mffqi.regression import QModel

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_FIELDS = ("schema_version", "experiment", "seed", "n_agents", "batch_size", "kappa", "lam", "metric", "value")


@dataclass
class ResultRow:
    experiment: str
    seed: object
    n_agents: object
    batch_size: object
    kappa: object
    lam: object
    metric: str
    value: float
    wall_clock: float = None


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_rows(rows, path):
    """Results CSV (header row, RFC 4180 quoting) plus ``<path>.timings.csv``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(CSV_FIELDS)
        for r in rows:
            writer.writerow([SCHEMA_VERSION, r.experiment, _fmt(r.seed), _fmt(r.n_agents), _fmt(r.batch_size),
                             _fmt(r.kappa), _fmt(r.lam), r.metric, _fmt(float(r.value))])
    with open(str(path) + ".timings.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(("row", "experiment", "metric", "wall_clock"))
        for i, r in enumerate(rows):
            writer.writerow([i, r.experiment, r.metric, _fmt(r.wall_clock)])


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def is_oracle_env(spec):
    return spec.kind == DISCRETE_CHAIN and spec.params.deterministic


def heldout_batch(cfg, spec):
    seed = spec.seed + int(cfg.eval["heldout_seed_offset"])
    return collect_batch(spec, int(cfg.eval["heldout_size"]), seed=seed)


def train(spec, fqi, batch_size, keep_history=False):
    batch = collect_batch(spec, batch_size)
    model, policy, diag = run_mffqi(batch, fqi, keep_history=keep_history)
    return batch, model, diag


def error_metric(cfg, spec, model):
    """Primary error: sup error to the oracle, else held-out Bellman residual."""
    if is_oracle_env(spec):
        report = compare_q(model, oracle_for(spec), spec, n_draws=int(cfg.eval["n_draws"]), seed=spec.seed)
        return "sup_err", report.sup_err
    return "heldout_bellman_residual", bellman_residual(model, heldout_batch(cfg, spec))


def run_train(cfg, batch=None):
    """Fit on ``batch`` (collected from ``cfg.env`` when omitted)."""
    t0 = time.perf_counter()
    spec = cfg.env
    if batch is None:
        batch = collect_batch(spec, cfg.batch_size)
    model, _, diag = run_mffqi(batch, cfg.fqi)
    common = dict(experiment="train", seed=batch.meta.get("seed", spec.seed), n_agents=batch.n_agents,
                  batch_size=len(batch), kappa=cfg.fqi.kappa, lam=cfg.fqi.lam)
    rows = [ResultRow(metric=f"fit_residual_{k + 1}", value=v, **common) for k, v in enumerate(diag.residuals)]
    rows.append(ResultRow(metric="bellman_residual", value=bellman_residual(model, batch), **common))
    if batch.meta.get("env") == spec.to_dict():
        rows.append(ResultRow(metric="heldout_bellman_residual",
                              value=bellman_residual(model, heldout_batch(cfg, spec)), **common))
    for r in rows:
        r.wall_clock = time.perf_counter() - t0
    return rows, model, batch


def evaluate_model(cfg, model, batch=None):
    """Rows grading an existing model under ``cfg.env``."""
    t0 = time.perf_counter()
    spec = cfg.env
    common = dict(experiment="evaluate", seed=spec.seed, n_agents=spec.n_agents,
                  batch_size=None if batch is None else len(batch), kappa=None, lam=None)
    rows = []
    if batch is not None:
        rows.append(ResultRow(metric="bellman_residual", value=bellman_residual(model, batch), **common))
    rows.append(ResultRow(metric="heldout_bellman_residual", value=bellman_residual(model, heldout_batch(cfg, spec)),
                          **common))
    if is_oracle_env(spec):
        report = compare_q(model, oracle_for(spec), spec, n_draws=int(cfg.eval["n_draws"]), seed=spec.seed)
        rows.extend(ResultRow(metric=k, value=v, **common) for k, v in report.as_dict().items())
    for r in rows:
        r.wall_clock = time.perf_counter() - t0
    return rows


def oracle_compare(cfg):
    if not is_oracle_env(cfg.env):
        raise ConfigurationError("oracle-compare needs a discrete_chain env with deterministic transitions")
    t0 = time.perf_counter()
    spec = cfg.env
    _, model, _ = train(spec, cfg.fqi, cfg.batch_size)
    table = oracle_for(spec)
    report = compare_q(model, table, spec, n_draws=int(cfg.eval["n_draws"]), seed=spec.seed)
    elapsed = time.perf_counter() - t0
    common = dict(experiment="oracle-compare", seed=spec.seed, n_agents=spec.n_agents, batch_size=cfg.batch_size,
                  kappa=cfg.fqi.kappa, lam=cfg.fqi.lam)
    rows = [ResultRow(metric=k, value=v, wall_clock=elapsed, **common) for k, v in report.as_dict().items()]
    rows.append(ResultRow(metric="q_max", value=spec.q_max, wall_clock=elapsed, **common))
    return rows, table


def _sweep_job(job):
    cfg, spec, n = job
    t0 = time.perf_counter()
    _, model, _ = train(spec, cfg.fqi, n)
    metric, value = error_metric(cfg, spec, model)
    return metric, value, time.perf_counter() - t0


def _sweep(cfg, name, points):
    """Train and grade at every ``(grid value, spec, batch size)`` point for each seed.

    Each (point, seed) pair is an independent job; with ``cfg.jobs > 1`` they
    run in worker processes and results are merged back in grid order.
    """
    keys, jobs = [], []
    for grid_value, spec0, n in points:
        for seed in cfg.seeds:
            keys.append((grid_value, seed, n))
            jobs.append((cfg, replace(spec0, seed=seed), n))
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(job) for job in jobs]
    rows, groups = [], {}
    for (grid_value, seed, n), (_, spec, _), (metric, value, elapsed) in zip(keys, jobs, results):
        rows.append(ResultRow(name, seed, spec.n_agents, n, cfg.fqi.kappa, cfg.fqi.lam, metric, value, elapsed))
        groups.setdefault(grid_value, []).append(value)
        logger.info("%s %s seed=%d %s=%.6g", name, grid_value, seed, metric, value)
    return rows, groups, metric


def _summary(name, groups, metric, key):
    rows, means = [], []
    for grid_value, values in groups.items():
        fields = {"n_agents": None, "batch_size": None, key: grid_value}
        mean = float(np.mean(values))
        means.append(mean)
        rows.append(ResultRow(name, None, kappa=None, lam=None, metric=f"{metric}_mean", value=mean, **fields))
        rows.append(ResultRow(name, None, kappa=None, lam=None, metric=f"{metric}_std",
                              value=float(np.std(values, ddof=1)) if len(values) > 1 else 0.0, **fields))
    if len(groups) > 1:
        rho = float(stats.spearmanr(list(groups), means).statistic)
        rows.append(ResultRow(name, None, None, None, None, None, f"spearman_{key}_vs_{metric}_mean", rho))
    return rows


def sweep_agents(cfg):
    grid = [int(v) for v in cfg.grids["n_agents"]]
    points = [(N, replace(cfg.env, n_agents=N), cfg.batch_size) for N in grid]
    rows, groups, metric = _sweep(cfg, "sweep-agents", points)
    return rows + _summary("sweep-agents", groups, metric, "n_agents")


def sweep_batch(cfg):
    grid = [int(v) for v in cfg.grids["batch_size"]]
    rows, groups, metric = _sweep(cfg, "sweep-batch", [(n, cfg.env, n) for n in grid])
    rows += _summary("sweep-batch", groups, metric, "batch_size")
    for a in cfg.grids.get("exponent", []):
        name = f"sweep-batch:coupled:a={a}"
        points = []
        for N in cfg.grids["n_agents"]:
            points.append((int(N), replace(cfg.env, n_agents=int(N)), max(1, int(round(N ** a)))))
        coupled, groups, metric = _sweep(cfg, name, points)
        rows += coupled + _summary(name, groups, metric, "n_agents")
    return rows


def fit_decay_rate(kappas, errors, plateau):
    """Geometric rate from a log-linear fit of ``errors - plateau`` against ``kappas``."""
    kappas = np.asarray(kappas, dtype=float)
    excess = np.asarray(errors, dtype=float) - plateau
    keep = excess > 0
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(kappas[keep], np.log(excess[keep]), 1)[0]
    return float(np.exp(slope))


def convergence_curve(cfg):
    """Error to the oracle (or Bellman residual) along the iterations of one run."""
    t0 = time.perf_counter()
    spec = cfg.env
    grid = sorted(int(k) for k in cfg.grids["kappa"])
    plateau_kappa = max(int(cfg.eval["plateau_kappa"]), grid[-1])
    batch, model, diag = train(spec, replace(cfg.fqi, kappa=plateau_kappa), cfg.batch_size, keep_history=True)
    oracle = oracle_for(spec) if is_oracle_env(spec) else None
    zero = QModel.zero(model.support, model.base, model.emb, model.q_max)

    def at(k):
        return zero if k == 0 else replace(model, alpha=diag.history[k - 1])

    def sup_err(m):
        return compare_q(m, oracle, spec, n_draws=int(cfg.eval["n_draws"]), seed=spec.seed).sup_err

    common = dict(seed=spec.seed, n_agents=spec.n_agents, batch_size=cfg.batch_size, lam=cfg.fqi.lam)
    rows, errs = [], []
    for k in grid:
        m = at(k)
        if oracle is not None:
            errs.append(sup_err(m))
            rows.append(ResultRow("convergence", kappa=k, metric="sup_err", value=errs[-1], **common))
        rows.append(ResultRow("convergence", kappa=k, metric="bellman_residual", value=bellman_residual(m, batch),
                              **common))
    if oracle is not None:
        plateau = sup_err(at(plateau_kappa))
        fit_max = int(cfg.eval["fit_max_kappa"])
        sel = [(k, e) for k, e in zip(grid, errs) if 1 <= k <= fit_max]
        rate = fit_decay_rate([k for k, _ in sel], [e for _, e in sel], plateau)
        rows.append(ResultRow("convergence", kappa=plateau_kappa, metric="plateau_sup_err", value=plateau, **common))
        rows.append(ResultRow("convergence", kappa=None, metric="decay_rate", value=rate, **common))
    for r in rows:
        r.wall_clock = time.perf_counter() - t0
    return rows


def concentration_curve(cfg):
    """Mean MMD between ``N``-point samples and a large reference sample.

    The reference distribution is a standard normal in ``dim`` dimensions;
    the reference sample has ``ref_factor * max(N)`` points.
    """
    conf = cfg.concentration
    grid = sorted(int(v) for v in conf["n_values"])
    resamples, dim = int(conf["resamples"]), int(conf["dim"])
    base = BaseKernel(float(conf["bandwidth"]))
    seed = cfg.seeds[0]
    n_ref = int(conf["ref_factor"]) * grid[-1]
    ref = Config(0, np.random.default_rng([seed, 0]).standard_normal((n_ref, dim)))
    ref_self = self_inner([ref], base)[0]
    rows, means = [], []
    for N in grid:
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, 1, N])
        samples = [Config(0, rng.standard_normal((N, dim))) for _ in range(resamples)]
        cross = inner_matrix(samples, [ref], base)[:, 0]
        mmd = np.sqrt(np.maximum(self_inner(samples, base) + ref_self - 2.0 * cross, 0.0))
        mean, sem = float(mmd.mean()), float(mmd.std(ddof=1) / np.sqrt(resamples))
        means.append(mean)
        elapsed = time.perf_counter() - t0
        rows.append(ResultRow("concentration", seed, N, None, None, None, "mmd_mean", mean, elapsed))
        rows.append(ResultRow("concentration", seed, N, None, None, None, "mmd_stderr", sem, elapsed))
    slope = float(np.polyfit(np.log(grid), np.log(means), 1)[0]) if len(grid) > 1 else float("nan")
    rows.append(ResultRow("concentration", seed, None, None, None, None, "loglog_slope", slope))
    rows.append(ResultRow("concentration", seed, n_ref, None, None, None, "n_ref", float(n_ref)))
    return rows


def embedding_error(sample, reference, base):
    """RKHS distance between the embeddings of two samples of the same action."""
    a, b = Config(0, sample), Config(0, reference)
    val = self_inner([a], base)[0] + self_inner([b], base)[0] - 2.0 * inner_matrix([a], [b], base)[0, 0]
    return float(np.sqrt(max(val, 0.0)))
