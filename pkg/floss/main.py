"""
Command-line entry point for FLOSS: train, separate, eval, ablate, selftest
"""

import argparse
import os
import sys
from typing import List, Optional

from loguru import logger

from .utils.config import Config, ConfigManager
from .utils.exceptions import (
    AudioIOError, CheckpointError, ConfigurationError, DataError, NumericalError, ValidationError,
)
from .utils.logger import log_run_header, setup_logging


EXIT_OK = 0
EXIT_SELFTEST_FAILED = 1
EXIT_CODES = (
    ((ConfigurationError, ValidationError, DataError), 2),
    ((NumericalError,), 3),
    ((AudioIOError, CheckpointError), 4),
)


def exit_code_for(error: Exception) -> int:
    for kinds, code in EXIT_CODES:
        if isinstance(error, kinds):
            return code
    raise error


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="./config/config.yaml",
                        help="YAML run config (missing file means built-in defaults)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: performance.threads or $FLOSS_THREADS)")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="floss",
        description="Flow matching for single-channel source separation",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="train a model on synthetic mixtures")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--out-dir", help="override train.output_dir")

    p = sub.add_parser("separate", parents=[common], help="separate WAV mixtures")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--input", required=True, nargs="+", help="mono WAV mixture(s)")
    p.add_argument("--sources", type=int, help="number of sources K (default: data.n_sources)")
    p.add_argument("--schedule", help="linear:N | custom5 | custom5r | single")
    p.add_argument("--seed", type=int, help="seed of the initial noise draw")
    p.add_argument("--out-dir", default="./separated", help="directory for <stem>_src{k}.wav")
    p.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA weights")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on the synthetic eval set")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("--schedule", help="linear:N | custom5 | custom5r | single")
    p.add_argument("--n-mixtures", type=int, help="override eval.n_mixtures")
    p.add_argument("--out-dir", default=None, help="directory for metrics.csv")

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate an ablation grid")
    p.add_argument("--axis", action="append", default=[], metavar="NAME[=V1,V2]",
                   help="loss, time_weighting, noise, assignment or schedule; repeatable")
    p.add_argument("--out-dir", default="./runs/ablation", help="directory for the grid runs and ablation.csv")

    sub.add_parser("selftest", parents=[common], help="run the invariant checklist")
    return parser


def load_config(args: argparse.Namespace) -> Config:
    overrides = list(args.set)
    if args.threads is not None:
        overrides.append(f"performance.threads={args.threads}")
    if getattr(args, "sources", None) is not None:
        overrides.append(f"data.n_sources={args.sources}")
    if getattr(args, "seed", None) is not None:
        overrides.append(f"sample.seed={args.seed}")
    if getattr(args, "schedule", None):
        overrides.append(f"sample.schedule={args.schedule}")
    if args.command == "train":
        if args.steps is not None:
            overrides.append(f"train.steps={args.steps}")
        if args.out_dir:
            overrides.append(f"train.output_dir={args.out_dir}")
    if args.command == "eval" and args.n_mixtures is not None:
        overrides.append(f"eval.n_mixtures={args.n_mixtures}")
    return ConfigManager(args.config, overrides).get_config()


def cmd_train(args, config: Config) -> int:
    from .pipeline.trainer import Trainer

    result = Trainer(config).train()
    print(f"✅ Trained {result.steps_run} steps, checkpoint {result.checkpoint_path}")
    return EXIT_OK


def cmd_separate(args, config: Config) -> int:
    from .core.sampler import Separator

    separator = Separator.from_checkpoint(args.model, config, use_ema=not args.raw_weights)
    if len(args.input) == 1:
        result = separator.separate_file(args.input[0], args.out_dir)
        print(f"✅ {result['input_path']} -> {', '.join(result['outputs'])} (NFE {result['nfe']})")
        return EXIT_OK

    results = separator.batch_separate(args.input, args.out_dir)
    for r in results:
        if r["success"]:
            print(f"✅ {r['input_path']} -> {', '.join(r['outputs'])}")
        else:
            print(f"❌ {r['input_path']}: {r['error']}")
    failed = sum(not r["success"] for r in results)
    return EXIT_OK if not failed else 4


def cmd_eval(args, config: Config) -> int:
    from .nn.eqnet import EqNet
    from .pipeline.evaluate import Evaluator

    model = EqNet.from_checkpoint(args.model, use_ema=config.sample.use_ema)
    model.eval()
    out_path = os.path.join(args.out_dir, "metrics.csv") if args.out_dir else None
    report = Evaluator(model, config).evaluate(out_path=out_path)
    print(f"SI-SDR mean {report.mean:.2f} dB, median {report.median:.2f} dB, "
          f"baseline {report.baseline_mean:.2f} dB, NFE {report.nfe}")
    return EXIT_OK


def cmd_ablate(args, config: Config) -> int:
    from .ablation import Ablation, parse_axes

    ablation = Ablation(config, parse_axes(args.axis), args.out_dir)
    ablation.check_feasible()
    rows = ablation.run()
    for r in rows:
        print(f"{r.loss:10} {r.time_weighting:14} {r.noise:12} {r.assignment:9} {r.schedule:10} "
              f"NFE {r.nfe:3d}  SI-SDR {r.sisdr:7.2f}  baseline {r.baseline:7.2f}")
    return EXIT_OK


def cmd_selftest(args, config: Config) -> int:
    from .nn.tensorcore import seed_everything
    from .selftest import run_selftest

    seed_everything(0)
    results = run_selftest()
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST_FAILED


COMMANDS = {
    "train": cmd_train,
    "separate": cmd_separate,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        setup_logging(config)
        log_run_header(config, args.command)

        from .nn.tensorcore import set_threads
        set_threads(config.performance.threads)
        return COMMANDS[args.command](args, config)
    except (ConfigurationError, ValidationError, DataError, NumericalError, AudioIOError, CheckpointError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
