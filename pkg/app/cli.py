"""
Command line front end: python -m app.cli <command> [options]

Data goes to files in --output-dir; diagnostics go to stderr. Exit codes:
0 success, 1 operation error, 2 usage or configuration error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from app.core.config import configure_logging, settings
from app.core.errors import ConfigError, EstimationError
from app.core.output import write_json, write_manifest, write_table
from app.models.psd import IndicatorTaper, LinearTaper, NoTaper
from app.models.run import RunConfig
from app.models.simulation import ScenarioConfig
from app.services.analysis import analysis_service
from app.services.ingest import ingest
from app.services.simulation import simulation_service

logger = logging.getLogger(__name__)

STOCHASTIC = {"bootstrap", "simulate", "report"}
CALIBRATED = "calibrated"
SCENARIO_FILE = "scenario.json"


class UsageError(Exception):
    pass


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--input", type=Path, help="CSV with subject,unit_location,subunit,response (TSV curve for adjust)")
    shared.add_argument("--output-dir", type=Path, default=Path("."), help="Directory for output tables")
    shared.add_argument("--config", type=Path, help="JSON run configuration (flags override it)")
    shared.add_argument("--seed", type=int, help="Seed for stochastic commands")
    shared.add_argument("--kernel", dest="kernel_family", choices=["epanechnikov", "quartic", "triangular"])
    shared.add_argument("--bandwidth", type=float, help="Global bandwidth h")
    shared.add_argument("--bandwidth-near", type=float, help="Bandwidth for |delta| <= split")
    shared.add_argument("--bandwidth-far", type=float, help="Bandwidth for |delta| > split")
    shared.add_argument("--split", type=float, help="Lag separating the two bandwidth regimes")
    shared.add_argument("--delta-max", type=float, help="Largest lag of the output grid")
    shared.add_argument("--delta-points", type=int, help=f"Grid points (default {settings.DELTA_GRID_POINTS})")
    shared.add_argument("--delta0", type=float, help=f"CV lag cut-off (default {settings.CV_DELTA0:g})")
    shared.add_argument("--criterion", choices=["cv1", "cv2"])
    shared.add_argument("--candidates", type=_floats, help="Comma-separated candidate bandwidths")
    shared.add_argument("--candidates-near", type=_floats)
    shared.add_argument("--candidates-far", type=_floats)
    shared.add_argument("--block-length", type=float, help="Bootstrap block length L*")
    shared.add_argument("--replicates", type=int, help="Bootstrap replicates B")
    shared.add_argument("--taper", choices=["none", "w1", "w2"], help="PSD taper weight")
    shared.add_argument("--taper-d1", type=float, help="w1 cut-off, or start of the w2 ramp")
    shared.add_argument("--taper-d2", type=float, help="End of the w2 ramp")
    shared.add_argument("--domain-length", type=float, help="Domain length L (default: largest location)")
    shared.add_argument("--workers", type=int, help="Parallel worker processes")
    shared.add_argument("--log-level", default=None, help="Logging level (default from settings)")

    parser = argparse.ArgumentParser(prog="python -m app.cli", description="Kernel correlation estimation for hierarchical spatial data")
    commands = parser.add_subparsers(dest="command", required=True)
    estimate = commands.add_parser("estimate", parents=[shared], help="rho-hat and G-hat on a lag grid")
    estimate.add_argument("--surface", action="store_true", help="Also write the covariance surface")
    commands.add_parser("cv", parents=[shared], help="Cross-validated bandwidth selection")
    commands.add_parser("bootstrap", parents=[shared], help="Block bootstrap standard errors")
    commands.add_parser("adjust", parents=[shared], help="Positive semidefinite adjustment of a curve")
    simulate = commands.add_parser("simulate", parents=[shared], help="Run a simulation scenario")
    simulate.add_argument("--scenario", help=f"Preset: sim1_style, sim3 or {CALIBRATED} (needs --input)")
    simulate.add_argument("--scenario-file", type=Path, help="JSON scenario definition")
    simulate.add_argument("--replications", type=int)
    simulate.add_argument(
        "--bandwidths",
        type=_floats,
        help=f"Bandwidths of the calibrated runs (default {','.join(f'{h:g}' for h in settings.CALIBRATED_BANDWIDTHS)})",
    )
    commands.add_parser("report", parents=[shared], help="Full analysis bundle")
    return parser


def _taper(args):
    if args.taper is None:
        return None
    if args.taper == "none":
        return NoTaper()
    if args.taper == "w1":
        if args.taper_d1 is None:
            raise UsageError("--taper w1 needs --taper-d1")
        return IndicatorTaper(d=args.taper_d1)
    if args.taper_d1 is None or args.taper_d2 is None:
        raise UsageError("--taper w2 needs --taper-d1 and --taper-d2")
    return LinearTaper(d1=args.taper_d1, d2=args.taper_d2)


def load_config(args) -> RunConfig:
    base = RunConfig()
    if args.config is not None:
        try:
            base = RunConfig.model_validate(json.loads(args.config.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
    overrides = {
        name: getattr(args, name, None)
        for name in (
            "seed", "kernel_family", "bandwidth", "bandwidth_near", "bandwidth_far", "split",
            "delta_max", "delta_points", "delta0", "criterion", "candidates", "candidates_near",
            "candidates_far", "block_length", "replicates", "domain_length", "workers",
            "scenario", "replications",
        )
    }
    overrides["taper"] = _taper(args)
    return base.merged(overrides)


def _read_curve(path: Path):
    frame = pd.read_csv(path, sep="\t")
    if frame.shape[1] < 2:
        raise ConfigError(f"{path} needs two columns: delta and value")
    return frame.iloc[:, 0].to_numpy(dtype=float), frame.iloc[:, 1].to_numpy(dtype=float)


def _require_input(args) -> Path:
    if args.input is None:
        raise UsageError("--input is required")
    return args.input


def cmd_estimate(args, config: RunConfig) -> List[Path]:
    data = ingest(_require_input(args), config.domain_length)
    curve, surface = analysis_service.estimate(data, config, surface=args.surface)
    out = args.output_dir
    written = [
        write_table(curve.to_frame(), out / "curve.tsv"),
        write_table(pd.DataFrame(curve.g_hat, columns=[f"{x:g}" for x in data.subunit_grid]), out / "g_hat.tsv"),
    ]
    if surface is not None:
        written.append(write_table(surface.to_frame(data.subunit_grid), out / "surface.tsv"))
    return written


def cmd_cv(args, config: RunConfig) -> List[Path]:
    data = ingest(_require_input(args), config.domain_length)
    report = analysis_service.cross_validate(data, config)
    out = args.output_dir
    summary = {
        "criterion": report.criterion.value,
        "delta0": report.delta_cap,
        "split": report.split_delta,
        "h": report.best.h,
        "h_far": report.best.h_far,
        "min_score": report.min_score,
        "reliable": report.best.reliable,
    }
    return [
        write_table(report.to_frame(), out / "cv_scores.tsv"),
        write_json(summary, out / "cv_summary.json"),
    ]


def cmd_bootstrap(args, config: RunConfig) -> List[Path]:
    data = ingest(_require_input(args), config.domain_length)
    curve, report = analysis_service.bootstrap(data, config)
    out = args.output_dir
    return [
        write_table(report.to_frame(), out / "bootstrap_sd.tsv"),
        write_table(curve.to_frame(), out / "curve.tsv"),
        write_json(report.to_dict(), out / "bootstrap.json"),
    ]


def cmd_adjust(args, config: RunConfig) -> List[Path]:
    delta, rho = _read_curve(_require_input(args))
    adjusted = analysis_service.adjust(delta, rho, config)
    out = args.output_dir
    return [
        write_table(adjusted.to_frame(), out / "adjusted.tsv"),
        write_table(adjusted.spectrum_frame(), out / "spectrum.tsv"),
    ]


def _read_scenario(path: Path) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read scenario {path}: {e}")


def resolve_scenarios(args, config: RunConfig) -> List[ScenarioConfig]:
    """Scenario file, preset or data-calibrated runs, with seed and replications applied"""
    seed = analysis_service.require_seed(config)
    if args.scenario_file is not None:
        scenario = _read_scenario(args.scenario_file).model_copy(update={"seed": seed})
        if config.replications is not None:
            scenario = scenario.model_copy(update={"replications": config.replications})
        return [scenario]
    if config.scenario is None:
        raise UsageError("simulate needs --scenario or --scenario-file")
    if config.scenario == CALIBRATED:
        data = ingest(_require_input(args), config.domain_length)
        return simulation_service.calibrated(
            data,
            args.bandwidths,
            config.replications,
            seed,
            bootstrap_replicates=config.replicates,
            delta_max=config.delta_max,
            block_length=config.block_length,
        )
    return [simulation_service.scenario(config.scenario, config.replications, seed)]


def cmd_simulate(args, config: RunConfig) -> List[Path]:
    scenarios = resolve_scenarios(args, config)
    out = args.output_dir
    written = [write_json([s.model_dump(mode="json") for s in scenarios], out / SCENARIO_FILE)]
    if len(scenarios) == 1:
        report = simulation_service.run(scenarios[0], workers=config.workers)
        written.append(write_table(report.to_frame(), out / "experiment.tsv"))
        written.append(write_json(report.summary(), out / "experiment.json"))
        return written
    summaries = {}
    for scenario in scenarios:
        report = simulation_service.run(scenario, workers=config.workers)
        written.append(write_table(report.to_frame(), out / f"experiment_{scenario.name}.tsv"))
        summaries[scenario.name] = report.summary()
    written.append(write_json(summaries, out / "experiment.json"))
    return written


def cmd_report(args, config: RunConfig) -> List[Path]:
    data = ingest(_require_input(args), config.domain_length)
    report = analysis_service.report(data, config)
    out = args.output_dir
    return [
        write_table(report.cv.to_frame(), out / "cv_scores.tsv"),
        write_table(report.curve.to_frame(), out / "curve.tsv"),
        write_table(report.bootstrap.to_frame(), out / "bootstrap_sd.tsv"),
        write_table(report.adjusted.spectrum_frame(), out / "spectrum.tsv"),
        write_table(report.histogram, out / "lag_histogram.tsv"),
        write_json(report.summary(), out / "report.json"),
    ]


COMMANDS = {
    "estimate": cmd_estimate,
    "cv": cmd_cv,
    "bootstrap": cmd_bootstrap,
    "adjust": cmd_adjust,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(args)
        if args.command in STOCHASTIC and config.seed is None:
            raise UsageError(f"{args.command} is stochastic; pass --seed")
        written = COMMANDS[args.command](args, config)
        kernel = config.kernel()
        write_manifest(
            args.output_dir,
            args.command,
            config,
            input_path=args.input if args.input is not None else getattr(args, "scenario_file", None),
            outputs=written,
            kernel=None if kernel is None else kernel.describe(),
            scenario_path=args.output_dir / SCENARIO_FILE if args.command == "simulate" else None,
        )
    except (UsageError, ConfigError, ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except EstimationError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
