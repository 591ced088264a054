"""psdlab - command-line entry point.

  psdlab run --config cfg.json [--out DIR] [--seed N]
  psdlab sweep --config cfg.json --axis p|rho [--values 0.001,0.01] [--jobs N]
  psdlab correlate --config cfg.json [--jobs N]
  psdlab gen-data [--config cfg.json] --out DIR
  psdlab inspect runs/badnets/report.json

Exit codes: 0 success, 1 pipeline failure, 2 configuration error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from psdlab import __version__
from psdlab.config import RunConfig, format_validation_error, load_config
from psdlab.data import DatasetManifest, save_npz
from psdlab.errors import ConfigError, PsdLabError, StageError
from psdlab.experiments import run_correlation, run_sweep, write_correlation, write_sweep
from psdlab.pipeline import prepare, run_pipeline
from psdlab.reports import summarize_report, write_run_artifacts
from psdlab.settings import Settings, get_settings
from psdlab.telemetry import export_textfile

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PIPELINE = 1
EXIT_CONFIG = 2

DEFAULT_SWEEP_VALUES = {
    "p": [0.001, 0.005, 0.01, 0.05],
    "rho": [0.01, 0.05, 0.1, 0.2],
}


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psdlab", description="SAM-enhanced poisoned-sample detection lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration (JSON)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="override the config's master seed")
    common.add_argument("--jobs", type=int, help="parallel sweep cells (default PSDLAB_JOBS)")

    run = sub.add_parser("run", parents=[common], help="one poison/train/detect/evaluate pipeline")
    run.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", parents=[common], help="sweep the poisoning ratio or rho")
    sweep.add_argument("--axis", choices=sorted(DEFAULT_SWEEP_VALUES), required=True)
    sweep.add_argument("--values", type=_float_list, help="comma-separated axis values, increasing")
    sweep.set_defaults(handler=cmd_sweep)

    correlate = sub.add_parser("correlate", parents=[common], help="Top-2 TAC vs detector AUC study")
    correlate.set_defaults(handler=cmd_correlate)

    gen = sub.add_parser("gen-data", parents=[common], help="write the poisoned training set")
    gen.set_defaults(handler=cmd_gen_data)

    inspect = sub.add_parser("inspect", help="print the metrics table of a run")
    inspect.add_argument("report", type=Path, help="report.json or a run directory")
    inspect.set_defaults(handler=cmd_inspect)
    return parser


def _config(args, required: bool = True) -> RunConfig:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        config = RunConfig()
    else:
        config = load_config(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _out_dir(args, config: RunConfig, settings: Settings) -> Path:
    if args.out is not None:
        out = args.out
    elif config.output_dir is not None:
        out = config.output_dir
    else:
        out = settings.output_root / args.command / f"{config.attack.name}-seed{config.seed}"
    args.resolved_out = out
    return out


def _jobs(args, settings: Settings) -> int:
    jobs = args.jobs if args.jobs is not None else settings.jobs
    if jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {jobs}")
    return jobs


def cmd_run(args, settings: Settings) -> int:
    config = _config(args)
    out = _out_dir(args, config, settings)
    report = run_pipeline(config)
    write_run_artifacts(report, out)
    print(summarize_report(report.payload))
    return EXIT_OK


def cmd_sweep(args, settings: Settings) -> int:
    config = _config(args)
    out = _out_dir(args, config, settings)
    values = args.values if args.values is not None else DEFAULT_SWEEP_VALUES[args.axis]
    seeds = [config.seed] if args.seed is not None else config.grid.seeds
    result = run_sweep(config, args.axis, values, seeds, _jobs(args, settings))
    for path in write_sweep(result, out):
        print(path)
    return EXIT_OK


def cmd_correlate(args, settings: Settings) -> int:
    config = _config(args)
    if args.seed is not None:
        config = config.with_overrides(grid={**config.grid.model_dump(), "seeds": [args.seed]})
    out = _out_dir(args, config, settings)
    result = run_correlation(config, _jobs(args, settings))
    write_correlation(result, out)
    r = result.overall["r"]
    print(f"pearson_r={'n/a' if r is None else f'{r:.4f}'} cells={len(result.cells)} -> {out}")
    return EXIT_OK


def cmd_gen_data(args, settings: Settings) -> int:
    config = _config(args, required=False)
    out = _out_dir(args, config, settings)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(config)
    save_npz(prepared.train_set, out / "train.npz")
    save_npz(prepared.reference, out / "reference.npz")
    save_npz(prepared.evaluation, out / "evaluation.npz")
    DatasetManifest.describe(prepared.train_set, prepared.plan, config.seed).write(out / "dataset.json")
    logger.info("Dataset written to %s (%d poisoned of %d)", out,
                int(prepared.train_set.poisoned.sum()), len(prepared.train_set))
    print(out)
    return EXIT_OK


def cmd_inspect(args, settings: Settings) -> int:
    path = args.report / "report.json" if args.report.is_dir() else args.report
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"report not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    print(summarize_report(payload))
    return EXIT_OK


def _export_metrics(settings: Settings, out: Path | None) -> None:
    target = settings.metrics_textfile
    if target is None:
        return
    if out is not None and target.resolve().is_relative_to(out.resolve()):
        logger.warning("Metrics textfile %s is inside the run directory; not written", target)
        return
    export_textfile(target)


def main(argv: list[str] | None = None) -> int:
    settings = get_settings()
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    args.resolved_out = None
    try:
        return args.handler(args, settings)
    except ValidationError as e:
        for line in format_validation_error(e):
            logger.error("Invalid config: %s", line)
        return EXIT_CONFIG
    except ConfigError as e:
        logger.error("Invalid config: %s", e)
        return EXIT_CONFIG
    except StageError as e:
        logger.error("Pipeline failed at stage '%s': %s", e.stage, e.cause)
        return EXIT_PIPELINE
    except PsdLabError as e:
        logger.error("Pipeline failed: %s", e)
        return EXIT_PIPELINE
    finally:
        _export_metrics(settings, args.resolved_out)


if __name__ == "__main__":
    sys.exit(main())
