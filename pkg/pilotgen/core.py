#!/usr/bin/env python
#
# Command line tool running the pilot design experiments described by a configuration file:
# LMMSE baseline tables, joint training, SNR sweeps, sample export and the property suite.
#
# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import argparse
import os
import os.path
import sys
from typing import List
from typing import Optional
from typing import Sequence

import pilotcheck.core as pilotcheck
from mimo_pilot import __version__
from pilotlib.checkpoint import load_checkpoint
from pilotlib.checkpoint import save_checkpoint
from pilotlib.config_parser import ExperimentConfig
from pilotlib.config_parser import load_config
from pilotlib.core import STREAM_EXPORT
from pilotlib.core import STREAM_TEST
from pilotlib.core import CheckpointError
from pilotlib.core import ConfigError
from pilotlib.core import Diagnostics
from pilotlib.core import DimensionError
from pilotlib.core import DivergenceError
from pilotlib.core import PilotlibError
from pilotlib.core import UnsupportedPilotShapeError
from pilotlib.export import RunManifest
from pilotlib.export import write_baseline_csv
from pilotlib.export import write_curves_csv
from pilotlib.export import write_estimates_csv
from pilotlib.export import write_pilots_csv
from pilotlib.export import write_report_json
from pilotlib.export import write_samples_binary
from pilotlib.export import write_samples_csv
from pilotlib.export import write_sweep_csv
from pilotlib.mimo_model import SampleStream
from pilotlib.mimo_model import channel_from_stacked
from pilotlib.mimo_model import simulate_reception
from pilotlib.trainer import baseline_table
from pilotlib.trainer import evaluate
from pilotlib.trainer import resolve_system
from pilotlib.trainer import snr_sweep
from pilotlib.trainer import train

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3
EXIT_VERIFY_FAILED = pilotcheck.EXIT_VERIFY_FAILED


class FatalError(RuntimeError):
    """
    Class for runtime errors (not caused by bugs but by user input). Carries the exit code.
    """

    def __init__(self, msg: str, exit_code: int = EXIT_CONFIG_ERROR):
        super().__init__(msg)
        self.exit_code = exit_code


def parse_snr_list(text: str) -> List[float]:
    try:
        values = [float(item) for item in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of SNRs in dB")
    if not values:
        raise argparse.ArgumentTypeError("the SNR list must not be empty")
    return values


def load_experiment(args: argparse.Namespace, diagnostics: Diagnostics) -> ExperimentConfig:
    if not os.path.isfile(args.config):
        raise FatalError(f"config file not found: {args.config}")
    try:
        experiment = load_config(args.config, diagnostics)
    except ConfigError as e:
        raise FatalError(str(e))
    return experiment.with_overrides(
        seed=args.seed,
        snr_list_db=getattr(args, "snr_list", None),
        strict_budgets=args.strict_budgets,
        fair_baseline=args.fair_baseline,
    )


def make_manifest(command: str, experiment: ExperimentConfig, out_dir: str) -> RunManifest:
    """Create the output directory and write manifest.json into it. Called once the config is valid."""
    cfg = experiment.train
    manifest = RunManifest(
        command=command,
        config=experiment.as_dict(),
        seed=cfg.seed,
        flags={
            "strict_budgets": cfg.strict_budgets,
            "fair_baseline": cfg.fair_baseline,
            "cross_snr": cfg.cross_snr,
            "use_sic": cfg.use_sic,
            "sic_order": cfg.sic_order if isinstance(cfg.sic_order, str) else [k + 1 for k in cfg.sic_order],
        },
    )
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    manifest.write(os.path.join(out_dir, "manifest.json"))
    return manifest


def _written(path: str) -> None:
    print(f"Output written to {path}")


############################
# Commands
############################
def cmd_baseline(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    experiment = load_experiment(args, diagnostics)
    manifest = make_manifest("baseline", experiment, args.out)
    try:
        rows = baseline_table(
            experiment.system,
            experiment.train,
            experiment.snr_points(),
            experiment.monte_carlo_samples,
            experiment.covariances(),
        )
    except UnsupportedPilotShapeError as e:
        raise FatalError(f"{args.config}: {e}")
    path = os.path.join(args.out, "baseline.csv")
    write_baseline_csv(path, rows, manifest.digest)
    _written(path)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    experiment = load_experiment(args, diagnostics)
    manifest = make_manifest("train", experiment, args.out)
    exit_code = EXIT_OK
    try:
        report = train(experiment.system, experiment.train, experiment.covariances(), diagnostics)
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        report = e.report
        exit_code = EXIT_DIVERGED
        if report is None:
            return exit_code

    paths = [
        os.path.join(args.out, "report.json"),
        os.path.join(args.out, "curves.csv"),
        os.path.join(args.out, "pilots.csv"),
        os.path.join(args.out, "model.ckpt"),
    ]
    write_report_json(paths[0], report, manifest.digest)
    write_curves_csv(paths[1], report, manifest.digest)
    write_pilots_csv(paths[2], report.final_pilots, manifest.digest)
    save_checkpoint(paths[3], report.model, experiment.train, manifest.digest)
    for path in paths:
        _written(path)
    return exit_code


def cmd_sweep(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    experiment = load_experiment(args, diagnostics)
    manifest = make_manifest("sweep", experiment, args.out)
    try:
        rows = snr_sweep(
            experiment.system, experiment.train, experiment.snr_points(), experiment.covariances(), diagnostics
        )
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    path = os.path.join(args.out, "sweep.csv")
    write_sweep_csv(path, rows, manifest.digest)
    _written(path)
    return EXIT_OK


def cmd_samples(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    if args.count < 1:
        raise FatalError("--count must be positive")
    experiment = load_experiment(args, diagnostics)
    manifest = make_manifest("samples", experiment, args.out)
    system = resolve_system(experiment.system, experiment.train)
    stream = SampleStream(
        system, experiment.covariances(system), experiment.train.seed, STREAM_EXPORT, args.count, args.count
    )
    g, z = next(iter(stream))

    paths = []
    if args.format == "csv":
        paths.append(os.path.join(args.out, "samples.csv"))
        write_samples_csv(paths[-1], g, z, manifest.digest)
    else:
        paths.append(os.path.join(args.out, "samples.bin"))
        write_samples_binary(paths[-1], g, z, manifest.digest)

    if args.checkpoint:
        model = _load_model(args.checkpoint, experiment)
        # received signal with the stored pilots, then the online estimates
        y = simulate_reception(model.pilots(), channel_from_stacked(system, g), z, system).vector_form
        paths.append(os.path.join(args.out, "estimates.csv"))
        write_estimates_csv(paths[-1], system, model.estimate(y), manifest.digest)
    for path in paths:
        _written(path)
    return EXIT_OK


def _load_model(path: str, experiment: ExperimentConfig):
    try:
        model, _ = load_checkpoint(path, experiment.system)
    except CheckpointError as e:
        raise FatalError(str(e))
    return model


def cmd_evaluate(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    experiment = load_experiment(args, diagnostics)
    model = _load_model(args.checkpoint, experiment)
    system = resolve_system(experiment.system, experiment.train)
    cfg = experiment.train
    stream = SampleStream(
        system, experiment.covariances(system), cfg.seed, STREAM_TEST, cfg.test_samples, cfg.eval_batch_size
    )
    try:
        mse = evaluate(model.with_system(system), stream)
    except DimensionError as e:
        raise FatalError(f"{args.checkpoint}: {e}")
    print("%.9g" % mse)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, diagnostics: Diagnostics) -> int:
    if args.samples < 1:
        raise FatalError("--samples must be positive")
    return pilotcheck.report(pilotcheck.run_checks(args.seed or 0, args.samples, args.inject_fault))


COMMANDS = {
    "baseline": cmd_baseline,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "samples": cmd_samples,
    "evaluate": cmd_evaluate,
    "verify": cmd_verify,
}


def _add_experiment_arguments(parser: argparse.ArgumentParser, snr_list: bool = False) -> None:
    parser.add_argument("--config", help="Experiment configuration file", required=True)
    parser.add_argument("--seed", type=int, default=None, help="Override the seed of the [run] section")
    parser.add_argument("--out", default=".", help="Directory for the output files (default: current directory)")
    parser.add_argument(
        "--strict-paper",
        "--strict-budgets",
        dest="strict_budgets",
        action="store_true",
        help="All users keep the configured budget; per-user SNR offsets are ignored",
    )
    parser.add_argument(
        "--fair-baseline",
        action="store_true",
        help="Report the LMMSE baseline with heuristic pilots normalized to the power budget",
    )
    if snr_list:
        parser.add_argument(
            "--snr-list",
            type=parse_snr_list,
            default=None,
            help="Comma-separated SNR points in dB, e.g. 5,15,25",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="pilotgen v%s - Pilot design and channel estimation experiments" % __version__,
        prog=os.path.basename(sys.argv[0]) if sys.argv and sys.argv[0] else "pilotgen",
    )
    parser.add_argument("--quiet", action="store_true", help="Do not print info and warning lines")
    subparsers = parser.add_subparsers(dest="command", required=True)

    _add_experiment_arguments(subparsers.add_parser("baseline", help="LMMSE baseline table"), snr_list=True)
    _add_experiment_arguments(subparsers.add_parser("train", help="Joint training of pilots and estimators"))
    _add_experiment_arguments(
        subparsers.add_parser("sweep", help="Proposed scheme against LMMSE over SNR"), snr_list=True
    )

    samples = subparsers.add_parser("samples", help="Export channel and noise realizations")
    _add_experiment_arguments(samples)
    samples.add_argument("--count", type=int, default=100, help="Number of realizations")
    samples.add_argument("--format", choices=["csv", "binary"], default="csv")
    samples.add_argument("--checkpoint", default=None, help="Also export the estimates of this model")

    evaluate_parser = subparsers.add_parser("evaluate", help="Test MSE of a stored model")
    _add_experiment_arguments(evaluate_parser)
    evaluate_parser.add_argument("--checkpoint", required=True, help="Checkpoint written by the train command")

    verify = subparsers.add_parser("verify", help="Run the numerical property suite")
    pilotcheck.add_arguments(verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    diagnostics = Diagnostics(warn=not args.quiet, info=not args.quiet)

    try:
        return COMMANDS[args.command](args, diagnostics)
    except FatalError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except PilotlibError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
