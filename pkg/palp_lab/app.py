import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from palp_lab.models.config import AblationGrid, LabConfig
from palp_lab.models.prompt import Prompt
from palp_lab.models.role import Composition, RunMode, Weighting
from palp_lab.runner import LabRunner, composition_defaults

OUT_ENV = "PALP_LAB_OUT"
DEFAULT_T_GRID = (999, 900, 750, 500, 250, 100, 10)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    pass


class LabArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _common_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--out", help=f"output root (env {OUT_ENV})")
    parser.add_argument("--base", help="pretrained base checkpoint")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--progress", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--verbose", action="store_true")
    return parser


def _training_flags() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--mode", choices=[mode.value for mode in RunMode])
    parser.add_argument("--subject", dest="subject_class")
    parser.add_argument("--subject-images", type=int)
    parser.add_argument("--target-prompt")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--beta", type=float)
    parser.add_argument("--share-noise", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--rescale", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--weighting", choices=[w.value for w in Weighting])
    parser.add_argument("--lambda", dest="lambda_palp", type=float)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--batch", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--lora-rank", type=int)
    parser.add_argument("--eval-samples", type=int)
    return parser


def build_parser() -> LabArgumentParser:
    common, training = _common_flags(), _training_flags()
    parser = LabArgumentParser(prog="palp-lab", description="Prompt-aligned personalization on a toy diffusion model")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=LabArgumentParser)

    pretrain = commands.add_parser("pretrain", parents=[common], help="train the base denoiser")
    pretrain.add_argument("--steps", dest="pretrain_steps", type=int)
    pretrain.add_argument("--lr", dest="pretrain_lr", type=float)
    pretrain.add_argument("--timesteps", type=int)
    pretrain.add_argument("--n-per-cell", type=int)
    pretrain.add_argument("--require-target", action=argparse.BooleanOptionalAction, default=None)

    commands.add_parser("personalize", parents=[common, training], help="personalize one subject")
    multi = commands.add_parser("multi", parents=[common, training], help="personalize two subjects together")
    multi.add_argument("--composition", choices=[c.value for c in Composition])
    multi.add_argument("--subject-prompt", dest="subject_prompts", action="append", help="y_P per subject, in order")

    ablate = commands.add_parser("ablate", parents=[common, training], help="run an ablation grid")
    ablate.add_argument("grid", nargs="?", help="ablation grid JSON file")
    ablate.add_argument("--workers", type=int)

    probe = commands.add_parser("probe", parents=[common], help="single-step x0 estimates over t")
    probe.add_argument("--prompt", default="sketch,circle")
    probe.add_argument("--adapter", help="personalized checkpoint to attach to the base")
    probe.add_argument("--t-grid", default=",".join(str(t) for t in DEFAULT_T_GRID))

    report = commands.add_parser("report", parents=[common], help="merge metric CSVs into a report")
    report.add_argument("metrics", nargs="+", help="metrics.csv files")

    calibrate = commands.add_parser("calibrate", parents=[common], help="oracle accuracy on held-out images")
    calibrate.add_argument("--n", type=int, default=1000)
    return parser


def _read_json(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return data


def resolve_config(args: argparse.Namespace) -> LabConfig:
    """
    Merges configuration sources.

    Precedence, highest first: command line flag, PALP_LAB_OUT (output root only),
    config file, built-in default. `multi` falls back to the composition scales.
    """
    values: dict[str, Any] = {}
    if args.command == "multi":
        values.update(composition_defaults())
    if args.config:
        values.update(_read_json(args.config))
    if os.getenv(OUT_ENV):
        values["out"] = os.getenv(OUT_ENV)
    for field in LabConfig.model_fields:
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    return LabConfig.model_validate(values)


def _execute(runner: LabRunner, args: argparse.Namespace):
    match args.command:
        case "pretrain":
            return runner.pretrain()
        case "personalize":
            return runner.personalize()
        case "multi":
            return runner.multi()
        case "ablate":
            values = _read_json(args.grid) if args.grid else {}
            grid = AblationGrid.model_validate({"workers": runner.config.workers, **values})
            if args.workers is not None:
                grid = grid.model_copy(update={"workers": args.workers})
            return runner.ablate(grid)
        case "probe":
            t_grid = [int(t) for t in args.t_grid.split(",") if t.strip()]
            return runner.probe(Prompt.parse(args.prompt), t_grid, args.adapter)
        case "report":
            return runner.report(args.metrics)
        case "calibrate":
            return runner.calibrate(args.n)
    raise ConfigError(f"Unknown command: {args.command}")


def run(argv: Sequence[str] | None = None) -> int:
    """
    Command line entry point.

    Returns:
        0 on success, 1 on a usage or configuration error, 2 when the command itself fails
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        config = resolve_config(args)
        if args.command == "ablate" and args.grid:
            _read_json(args.grid)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_CONFIG

    try:
        runner = LabRunner(config, config.out)
        manifest = _execute(runner, args)
    except (ConfigError, ValidationError) as e:
        print(f"❌ Config error: {e}")
        return EXIT_CONFIG
    except Exception as e:
        logging.getLogger(__name__).debug("Command failed", exc_info=True)
        print(f"❌ Error: {e}")
        return EXIT_RUNTIME

    print(f"✅ {args.command} finished: {manifest.output_dir}")
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
