"""Command-line entry point.

``blindsim run`` executes a named experiment scenario (or a scenario JSON
file) and prints one pass/fail line per check; ``blindsim calibrate``
re-derives a detector preset from its calibration targets.

Exit codes: 0 success, 1 experiment check failed, 2 missing or invalid
configuration, 3 unknown scenario, 4 calibration failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .apd import (CalibrationError, CalibrationTargets, DetectorParams,
                  calibrate, load_preset, save_preset)
from .harness import Scenario, UnknownScenarioError, run_scenario

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_UNKNOWN_SCENARIO = 3
EXIT_CALIBRATION_FAILED = 4

# calibration targets and baseline circuit parameters per shipped preset
CALIBRATION_SPECS = {
    "model1": {
        "base": DetectorParams(),
        "targets": CalibrationTargets(
            blinding_power=10e-12, wavelength=820e-9,
            gap_click_prob=0.8, gap_width=2e-6, p_high=13e-12),
        "eta_grid": (0.30, 0.40, 0.50, 0.60, 0.70, 0.80),
        "meta": {
            "description": "passively quenched Si APD, 360 kOhm bias resistor",
            "wavelength_m": 820e-9,
            "target_blinding_power_w": 10e-12,
            "gap_width_s": 2e-6,
            "p_high_w": 13e-12,
        },
    },
    "model2": {
        "base": DetectorParams(
            r_bias=400e3, c_total=1e-12, tau_recharge=0.4e-6,
            v_click_fraction=0.60, v_ready_fraction=0.60,
            deadtime=1e-6, dark_rate=50.0),
        "targets": CalibrationTargets(blinding_power=280e-12,
                                      wavelength=780e-9),
        "eta_grid": (0.05, 0.08, 0.10, 0.12, 0.15, 0.20, 0.30),
        "meta": {
            "description": ("passively quenched Si APD, 400 kOhm bias "
                            "resistor, 1 us deadtime"),
            "wavelength_m": 780e-9,
            "target_blinding_power_w": 280e-12,
        },
    },
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blindsim",
                                description="Blinded-detector QKD simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment scenario")
    run.add_argument("--scenario", required=True,
                     help="scenario name (e1..e7, all) or a scenario JSON file")
    run.add_argument("--preset", default=None, help="detector preset override")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--trials", type=int, default=None,
                     help="trial-count override")
    run.add_argument("--workers", type=int, default=None,
                     help="sweep worker processes")

    cal = sub.add_parser("calibrate", help="calibrate a detector preset")
    cal.add_argument("--preset", required=True, choices=sorted(CALIBRATION_SPECS))
    cal.add_argument("--out", default=None,
                     help="preset output path (default: print only)")
    cal.add_argument("--seed", type=int, default=12345)
    return p


def _load_scenario(args) -> Scenario:
    name = args.scenario
    if os.path.exists(name) or name.endswith(".json"):
        if not os.path.exists(name):
            raise FileNotFoundError(name)
        sc = Scenario.load(name)
    else:
        sc = Scenario(name=name)
    if args.preset is not None:
        sc.preset = args.preset
    if args.seed is not None:
        sc.seed = args.seed
    if args.out is not None:
        sc.out_dir = args.out
    if args.trials is not None:
        sc.trials = args.trials
    if args.workers is not None:
        sc.workers = args.workers
    if sc.name == "e6" and args.preset is None and sc.preset == "model1":
        sc.preset = "model2"      # the A/B-pulse tests target the fast model
    return sc


def _cmd_run(args) -> int:
    try:
        sc = _load_scenario(args)
    except (FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as e:
        print(f"bad scenario configuration: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        load_preset(sc.preset)
    except (FileNotFoundError, json.JSONDecodeError, KeyError) as e:
        print(f"preset '{sc.preset}' not available: {e}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        results = run_scenario(sc)
    except UnknownScenarioError as e:
        print(str(e), file=sys.stderr)
        return EXIT_UNKNOWN_SCENARIO

    failed = False
    for res in results:
        for line in res.summary_lines():
            print(line)
        for out in res.outputs:
            print(f"  wrote {out}")
        failed = failed or not res.passed
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def _cmd_calibrate(args) -> int:
    spec = CALIBRATION_SPECS[args.preset]
    try:
        params, report = calibrate(spec["base"], spec["targets"],
                                   seed=args.seed, eta_grid=spec["eta_grid"])
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return EXIT_CALIBRATION_FAILED
    print(json.dumps({"achieved": report["achieved"],
                      "residuals": report["residuals"]}, indent=2))
    if args.out:
        meta = dict(spec["meta"])
        meta["measured_blinding_threshold_w"] = report["achieved"]["threshold"]
        if report["achieved"].get("gap_prob") is not None:
            meta["gap_click_prob"] = report["achieved"]["gap_prob"]
        save_preset(args.out, params, meta)
        print(f"wrote {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_calibrate(args)


if __name__ == "__main__":
    sys.exit(main())
