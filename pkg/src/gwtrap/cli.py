"""Reproducible experiment runner.

Subcommands are the experiment kinds plus `run` (dispatch on the config's
experiment field) and `dump-trap`. Identical (config, seed) pairs reproduce
byte-identical record streams for any worker count; the manifest lists every
output with its checksum.

Exit codes: 0 success, 1 unexpected error, 2 config error, 3 too few
samples, 4 trap too large, 5 step budget exceeded, 6 law/solver errors.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
import time

from . import __version__
from ._rng import TRAP, Stream
from .config import EXPERIMENTS, ExperimentConfig
from .errors import (ConfigError, GwtrapError, NoRoot, NotSupercritical,
                     StepBudgetExceeded, TooFewSamples, TrapTooLarge)

EXIT_CODES = {
    ConfigError: 2,
    TooFewSamples: 3,
    TrapTooLarge: 4,
    StepBudgetExceeded: 5,
    NotSupercritical: 6,
    NoRoot: 6,
}


def _load_config(args) -> ExperimentConfig:
    if args.config:
        try:
            text = open(args.config).read()
        except OSError as exc:
            raise ConfigError(f"config: cannot read {args.config}: {exc}")
        cfg = ExperimentConfig.from_text(text)
    else:
        cfg = ExperimentConfig()
    if args.command not in ("run", "dump-trap"):
        cfg.experiment = args.command
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _write_outputs(cfg: ExperimentConfig, records: list[str],
                   summary: list[str], t0: float) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    header = [
        f"# gwtrap {__version__}",
        f"# config_hash {cfg.config_hash()}",
        f"# seed {cfg.seed}",
        f"# experiment {cfg.experiment}",
    ]
    paths = {}
    rec_path = os.path.join(cfg.out, "records.txt")
    with open(rec_path, "w") as fh:
        fh.write("\n".join(header + records) + "\n")
    paths["records.txt"] = rec_path
    sum_path = os.path.join(cfg.out, "summary.txt")
    with open(sum_path, "w") as fh:
        fh.write("\n".join([f"gwtrap {__version__}  experiment={cfg.experiment}",
                            f"config_hash={cfg.config_hash()}  seed={cfg.seed}",
                            ""] + summary) + "\n")
    paths["summary.txt"] = sum_path
    cfg_path = os.path.join(cfg.out, "config.txt")
    with open(cfg_path, "w") as fh:
        fh.write(cfg.to_text())
    paths["config.txt"] = cfg_path
    man_path = os.path.join(cfg.out, "manifest.txt")
    with open(man_path, "w") as fh:
        fh.write(f"artifact = gwtrap-{__version__}\n")
        fh.write(f"config_hash = {cfg.config_hash()}\n")
        fh.write(f"seed = {cfg.seed}\n")
        fh.write(f"started = {t0:.3f}\n")
        fh.write(f"finished = {time.time():.3f}\n")
        for name, path in sorted(paths.items()):
            digest = hashlib.sha256(open(path, "rb").read()).hexdigest()
            size = os.path.getsize(path)
            fh.write(f"output = {name} sha256:{digest} bytes:{size}\n")


def _cmd_experiment(cfg: ExperimentConfig, args) -> int:
    from .experiments import pair_constants_for_file, run_experiment

    t0 = time.time()
    if cfg.experiment == "pair-constants" and getattr(args, "pair", None):
        result = pair_constants_for_file(cfg, args.pair)
    else:
        result = run_experiment(cfg)
    _write_outputs(cfg, result.records, result.summary, t0)
    for line in result.summary:
        print(line)
    print(f"[gwtrap] outputs in {cfg.out}  "
          f"({time.time() - t0:.1f}s, workers={cfg.workers})")
    return 0


def _cmd_dump_trap(cfg: ExperimentConfig, args) -> int:
    from .laws import harris_transform
    from .tree import sample_trap

    harris = harris_transform(cfg.offspring_law())
    nu = cfg.bias_law()
    rng = Stream.from_seed(cfg.seed, 0, TRAP)
    chunks = []
    for i in range(args.count):
        trap = sample_trap(harris, nu, rng, cap=cfg.trap_cap)
        chunks.append(trap.tree.to_text(header={
            "trap": i, "omega": repr(trap.omega), "depth": trap.D,
            "v_base": trap.v_base}))
    text = "".join(chunks)
    if args.out:
        os.makedirs(cfg.out, exist_ok=True)
        path = os.path.join(cfg.out, "traps.txt")
        with open(path, "w") as fh:
            fh.write(text)
        print(f"[gwtrap] wrote {args.count} traps to {path}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gwtrap",
        description="biased random walks on Galton-Watson trees with traps")
    parser.add_argument("--version", action="version",
                        version=f"gwtrap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out", default=None)
    sub.add_parser("run", parents=[common],
                   help="run the experiment named in the config")
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, parents=[common])
        if kind == "pair-constants":
            p.add_argument("--pair", default=None,
                           help="serialized pair file (single-pair mode)")
    dump = sub.add_parser("dump-trap", parents=[common])
    dump.add_argument("--count", type=int, default=10)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "dump-trap":
            return _cmd_dump_trap(cfg, args)
        return _cmd_experiment(cfg, args)
    except GwtrapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 1
    except Exception as exc:  # noqa: BLE001 - map to the documented exit code
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
