"""``beamalign`` command line: train, eval, sweep, beampattern, inspect-checkpoint.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numerical error,
3 I/O or checkpoint-integrity error.  ``BEAMALIGN_OUT_DIR`` overrides the
output directory of ``train`` and ``sweep``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import subprocess
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import SystemConfig, apply_overrides, parse_config, validate
from .errors import BeamAlignError, CheckpointError, ConfigError, VariantMismatchError
from .experiments import (BEAMPATTERN_COLUMNS, RESULTS_COLUMNS, SWEEP_KINDS, beampattern_rows,
                          eval_setup, inspect_summary, results_rows, run_sweep, write_csv)
from .training import train

OUT_DIR_ENV = "BEAMALIGN_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("beamalign")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args, base: SystemConfig | None = None) -> SystemConfig:
    if getattr(args, "config", None):
        base = parse_config(args.config)
    cfg = base if base is not None else SystemConfig()
    return validate(apply_overrides(cfg, _overrides(getattr(args, "set", None))))


def _out_dir(args) -> Path:
    return Path(os.environ.get(OUT_DIR_ENV) or args.out_dir)


def cmd_train(args) -> int:
    cfg = _config(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(cfg, _out_dir(args), resume=resume)
    last = result.history[-1] if result.history else None
    msg = f"trained {cfg.scheme}/{cfg.variant} to iteration {result.iteration}"
    if last is not None:
        msg += f" (batch gain {last.mean_gain_db:.2f} dB)"
    print(msg)
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    base = ckpt.config if ckpt is not None and not args.config else None
    cfg = _config(args, base)
    scheme, params, cfg = eval_setup(args.scheme, ckpt, cfg)
    write_csv(args.out, RESULTS_COLUMNS, results_rows(scheme, params, cfg))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    path = run_sweep(args.kind, cfg, _out_dir(args))
    print(f"wrote {path}")
    if args.plot_hook:
        subprocess.run(shlex.split(args.plot_hook) + [str(path)], check=True)
    return EXIT_OK


def cmd_beampattern(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    write_csv(args.out, BEAMPATTERN_COLUMNS, beampattern_rows(ckpt, args.channel_seed))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    print(json.dumps(inspect_summary(load_checkpoint(args.checkpoint)), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beamalign", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    sp = sub.add_parser("train", help="train one scheme and write checkpoint + log")
    with_config(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint (or a non-learned scheme)")
    with_config(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--scheme", help="proposed, dnn_noa, rnn_a, exhaustive or mrt_mrc")
    sp.add_argument("--out", required=True, help="results CSV path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="train and evaluate one sweep: fig4 gain vs test SNR per variant, fig5 gain vs T for C2/C3, fig6 gain vs T against the baselines")
    sp.add_argument("kind", choices=SWEEP_KINDS)
    with_config(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--plot-hook", help="command run with the sweep CSV path appended")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("beampattern", help="per-step beampatterns of one episode")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--channel-seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_beampattern)

    sp = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary as JSON")
    sp.add_argument("checkpoint")
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, VariantMismatchError) as exc:
        return _fail(EXIT_USAGE, "config error", exc)
    except (CheckpointError, OSError) as exc:
        return _fail(EXIT_IO, "i/o error", exc)
    except (BeamAlignError, FloatingPointError, subprocess.CalledProcessError) as exc:
        return _fail(EXIT_RUNTIME, "runtime error", exc)


def _fail(code: int, kind: str, exc: Exception) -> int:
    print(f"{kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
