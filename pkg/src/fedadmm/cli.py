"""Command line entry point: ``fedadmm {generate,run,sweep,report}``.

Every command reads a JSON config (see ``RunConfig``).  Precedence is
flag > file > default; ``FEDADMM_OUTPUT_DIR`` sits between the file and an
explicit ``--out``.

Exit codes: 0 on a stopping-rule exit, 2 when the iteration cap was hit,
1 on a bad config, 3 when the run failed (divergence, stalled inner solve).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import RunConfig, from_dict, load_config, parse_override
from .data import save_dataset
from .errors import ConfigError, FedError
from .harness import (
    SweepSpec, build_dataset, median_sweep, read_sweep_csv, render_table, run_experiment,
    write_run_outputs, write_sweep_outputs,
)

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_FAILED = 0, 1, 2, 3
STOPPED = ("stopped_by_gradient", "stopped_by_gap")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedadmm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field; VALUE is parsed as JSON when possible")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("generate", help="write a synthetic dataset and its manifest")
    common(g)
    r = sub.add_parser("run", help="run one algorithm, write trace CSV and summary JSON")
    common(r)
    r.add_argument("--algorithm")
    r.add_argument("--max-iters", type=int)
    s = sub.add_parser("sweep", help="median CR / wall time over a parameter grid")
    common(s)
    s.add_argument("--workers", type=int)
    rep = sub.add_parser("report", help="render a sweep summary CSV as a text table")
    rep.add_argument("summary_csv")
    return p


def _resolve(args) -> RunConfig:
    overrides = dict(parse_override(text) for text in args.set)
    for key in ("seed", "algorithm", "max_iters", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.config:
        return load_config(args.config, overrides)
    raw = {}
    env_dir = os.environ.get("FEDADMM_OUTPUT_DIR")
    if env_dir:
        raw["output_dir"] = env_dir
    raw.update(overrides)
    return from_dict(raw)


def cmd_generate(cfg: RunConfig) -> int:
    if cfg.dataset != "synthetic":
        raise ConfigError("dataset: generate needs a synthetic dataset")
    path = save_dataset(build_dataset(cfg), cfg.output_dir)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    result = run_experiment(cfg)
    trace_path, summary_path = write_run_outputs(result, cfg.output_dir)
    s = result.summary
    print(f"{s['algorithm']}: {s['status']} k={s['k']} cr={s['cr']} f={s['f']:.6g}")
    print(f"wrote {trace_path} and {summary_path}")
    if s["status"] in STOPPED:
        return EXIT_OK
    return EXIT_CAP if s["status"] == "iteration_cap" else EXIT_FAILED


def cmd_sweep(cfg: RunConfig) -> int:
    spec = SweepSpec.product(
        cfg.grid_n or [cfg.n], cfg.grid_m or [cfg.m], cfg.grid_rho or [cfg.rho], cfg.grid_k0 or [cfg.k0],
        instances=cfg.instances, base_seed=cfg.seed,
    )
    workers = cfg.workers if cfg.workers is not None else (os.cpu_count() or 1)
    result = median_sweep(spec, cfg.algorithms or [cfg.algorithm], cfg, workers=workers)
    csv_path, json_path = write_sweep_outputs(result, cfg.output_dir)
    print(render_table(result.rows))
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_report(path) -> int:
    print(render_table(read_sweep_csv(path)))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(args.summary_csv)
    try:
        cfg = _resolve(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return {"generate": cmd_generate, "run": cmd_run, "sweep": cmd_sweep}[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
