"""``mffqi`` command line.

Every subcommand reads a JSON config (``--config``) with dotted-path
overrides (``--set fqi.kappa=50``), writes its results CSV to ``--out`` and a
manifest ``<out>.manifest.json`` holding the resolved config.  Passing a
manifest back as ``--config`` reproduces the run.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

from mffqi.exceptions import ConfigurationError, ContractViolation, NumericalError
from mffqi.harness import experiments as ex
from mffqi.harness.config import load_config
from mffqi.io import load_batch, load_model, save_batch, save_model

logger = logging.getLogger("mffqi")


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def write_manifest(cfg, out, command, inputs=None):
    manifest = {
        "schema_version": ex.SCHEMA_VERSION,
        "command": command,
        "config": cfg.raw,
        "git_describe": git_describe(),
        "seeds": cfg.seeds,
        "env_seed": cfg.env.seed,
        "inputs": inputs or {},
    }
    path = str(out) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _out(args, cfg, default=None):
    return args.out or default or cfg.output


def cmd_collect(args, cfg):
    out = _out(args, cfg, "batch.json")
    batch = ex.collect_batch(cfg.env, cfg.batch_size)
    save_batch(batch, out)
    write_manifest(cfg, out, "collect")
    print(f"wrote {len(batch)} records to {out}")


def cmd_train(args, cfg):
    batch = load_batch(args.batch) if args.batch else None
    rows, model, batch = ex.run_train(cfg, batch)
    out = _out(args, cfg)
    ex.write_rows(rows, out)
    save_model(model, args.model_out)
    write_manifest(cfg, out, "train", {"batch": args.batch, "model_out": args.model_out})
    print(f"trained on {len(batch)} records; model written to {args.model_out}")


def cmd_evaluate(args, cfg):
    model = load_model(args.model)
    batch = load_batch(args.batch) if args.batch else None
    rows = ex.evaluate_model(cfg, model, batch)
    out = _out(args, cfg)
    ex.write_rows(rows, out)
    write_manifest(cfg, out, "evaluate", {"model": args.model, "batch": args.batch})
    for r in rows:
        print(f"{r.metric}={r.value:.6g}")


def cmd_oracle_compare(args, cfg):
    rows, table = ex.oracle_compare(cfg)
    out = _out(args, cfg)
    ex.write_rows(rows, out)
    if args.oracle_csv:
        table.to_csv(args.oracle_csv)
    write_manifest(cfg, out, "oracle-compare", {"oracle_csv": args.oracle_csv})
    for r in rows:
        print(f"{r.metric}={r.value:.6g}")


def _experiment(name, func):
    def run(args, cfg):
        rows = func(cfg)
        out = _out(args, cfg)
        ex.write_rows(rows, out)
        write_manifest(cfg, out, name)
        print(f"wrote {len(rows)} rows to {out}")

    return run


COMMANDS = {
    "collect": ("train", cmd_collect, "collect a transition batch from the configured environment"),
    "train": ("train", cmd_train, "fit MF-FQI on a batch and save the model"),
    "evaluate": ("train", cmd_evaluate, "grade a saved model"),
    "oracle-compare": ("oracle-compare", cmd_oracle_compare, "train and compare against exact value iteration"),
    "sweep-agents": ("sweep-agents", _experiment("sweep-agents", ex.sweep_agents), "error vs observed agents N"),
    "sweep-batch": ("sweep-batch", _experiment("sweep-batch", ex.sweep_batch), "error vs batch size n"),
    "convergence": ("convergence", _experiment("convergence", ex.convergence_curve), "error vs iteration count"),
    "concentration": ("concentration", _experiment("concentration", ex.concentration_curve),
                      "empirical embedding error vs N"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mffqi", description="Mean-field fitted Q-iteration experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, _, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config or run manifest")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dotted path; VALUE is parsed as JSON when possible")
        p.add_argument("--out", help="output path (results CSV, or the batch file for collect)")
        if name == "train":
            p.add_argument("--batch", help="batch file to train on instead of collecting one")
            p.add_argument("--model-out", default="model.json", help="where to save the fitted model")
        if name == "evaluate":
            p.add_argument("--model", required=True, help="model file written by train")
            p.add_argument("--batch", help="batch for the in-sample Bellman residual")
        if name == "oracle-compare":
            p.add_argument("--oracle-csv", help="also write the exact Q-table here")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    experiment, handler, _ = COMMANDS[args.command]
    try:
        cfg = load_config(args.config, args.overrides, experiment)
        handler(args, cfg)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"mffqi: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"mffqi: numerical failure: {exc}", file=sys.stderr)
        for key, value in getattr(exc, "diagnostics", {}).items():
            print(f"  {key}: {value}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
