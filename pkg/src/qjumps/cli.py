"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a comparison statistic missed its threshold.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, ExperimentConfig, list_presets
from .jcmodel import NeoclassicalError, SteadyStateError
from .mcwf import NormUnderflowError, StepSizeError
from .meter import SamplingError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_THRESHOLD = 0, 2, 3, 4

NUMERICAL_ERRORS = (NeoclassicalError, SteadyStateError, NormUnderflowError, StepSizeError,
                    SamplingError, FloatingPointError, np.linalg.LinAlgError)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="INI or JSON config file")
    src.add_argument("--preset", help=f"shipped preset ({', '.join(list_presets())})")
    common.add_argument("--seed", type=int, help="override seeds.base_seed")
    common.add_argument("--out", type=Path, help="output directory (default: output.directory)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--normalized", action="store_true",
                        help="divide Q functions by pi so they integrate to one")

    p = argparse.ArgumentParser(prog="qjumps", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("semiclassical", parents=[common], help="neoclassical roots and localization time")
    sub.add_parser("steady-state", parents=[common], help="master-equation steady state and its Q function")
    sub.add_parser("trajectory", parents=[common], help="one trajectory with the meter signal")
    sub.add_parser("stage1", parents=[common], help="trajectories, dip detection, conditioned amplitudes")
    for name, text in (("stage2", "charge ensembles against the analytic densities"),
                       ("analytic", "analytic charge densities only")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--jumps", type=Path, help="jumps.json written by stage1")
    cp = sub.add_parser("compare", parents=[common], help="compare a finals CSV with the configured target")
    cp.add_argument("finals", type=Path, help="CSV with a q column, or qx and qy columns")
    cp.add_argument("--statistic", choices=("L1", "KS", "chi2"))
    cp.add_argument("--threshold", type=float)
    cp.add_argument("--target-index", type=int, default=0,
                    help="which configured ensemble (homodyne angle) to compare against")
    cp.add_argument("--jumps", type=Path)
    return p


def load_config(args) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_file(args.config)
    elif args.preset is not None:
        config = ExperimentConfig.preset(args.preset)
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = config.replace(seeds={"base_seed": args.seed})
    if args.normalized:
        config = config.replace(output={"normalized": True})
    return config


def _read_finals(path: Path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names or ()
    if "qx" in names and "qy" in names:
        return data["qx"] + 1j * data["qy"]
    if "q" in names:
        return np.atleast_1d(data["q"])
    raise ConfigError(f"{path}: expected a q column or qx, qy columns")


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or Path(config.output.directory)
    rd = harness.RunDirectory(out, config, args.command)
    try:
        if args.command == "semiclassical":
            summary = harness.run_semiclassical(config)
            rd.write_json("roots.json", summary)
            print(harness.format_semiclassical(summary))
        elif args.command == "steady-state":
            s = harness.run_steady_state(config, rd, normalized=config.output.normalized)
            print(f"<n>_ss = {s['photon_number']:.4f}")
        elif args.command == "trajectory":
            s = harness.run_single_trajectory(config, rd)
            print(f"{s['clicks']} clicks, mean photon number {s['mean_photon_number']:.3f}, "
                  f"{len(s['dips'])} dips")
        elif args.command == "stage1":
            s = harness.run_stage1(config, rd, workers=args.workers)
            print(f"{s['events']} dips, {s['metastable_jumps']} metastable jumps -> {out / 'jumps.json'}")
        elif args.command == "stage2":
            reports = harness.run_stage2(config, rd, workers=args.workers, jumps_path=args.jumps)
            for r in reports:
                print(f"{r.details['label']}: {r.statistic} = {r.value:.5f} "
                      f"(threshold {r.threshold}) {'pass' if r.passed else 'FAIL'}")
            if any(not r.passed for r in reports):
                return EXIT_THRESHOLD
        elif args.command == "analytic":
            for s in harness.run_analytic(config, rd, jumps_path=args.jumps):
                print(json.dumps(s, sort_keys=True))
        elif args.command == "compare":
            targets = harness.stage2_targets(config, args.jumps)
            if not 0 <= args.target_index < len(targets):
                raise ConfigError(f"target index {args.target_index} out of range")
            label, _, target = targets[args.target_index]
            finals = _read_finals(args.finals)
            stat = args.statistic or config.stage2.statistic or (
                "L1" if np.iscomplexobj(finals) else "KS")
            thr = args.threshold if args.threshold is not None else config.stage2.threshold
            report = harness.compare_histograms(finals, target, stat, thr, config.stage2.bin_width)
            report.details["label"] = label
            rd.write_json("comparison.json", report.to_dict())
            print(f"{label}: {report.statistic} = {report.value:.5f} "
                  f"(threshold {report.threshold}) {'pass' if report.passed else 'FAIL'}")
            if not report.passed:
                return EXIT_THRESHOLD
    except ConfigError as exc:
        rd.log(f"config error: {exc}")
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        rd.log(f"numerical failure: {exc!r}")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        rd.close()
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
