"""Command line entry point ``discover``.

Exit codes: 0 success, 2 input or configuration error, 3 a stage failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import fixtures
from .changepoint import DeclarationRule, bocpd, mean_return_series
from .pipeline import (InputError, PipelineConfig, StageError, ingest_prices, replay_trace,
                       run_pipeline, write_outputs)
from .simulate import NoiseFamily, sample_scm

EXIT_OK, EXIT_INPUT, EXIT_STAGE = 0, 2, 3

SCENARIOS = ("two_regime", "stationary", "one_factor", "nested_latent", "drift")


def _cmd_run(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.output:
        cfg.output_dir = args.output
    report = run_pipeline(cfg, trace_dir=args.trace)
    print(str(Path(cfg.output_dir) / "report.json"))
    return EXIT_STAGE if report.failed else EXIT_OK


def _cmd_replay(args) -> int:
    report = replay_trace(args.trace)
    write_outputs(report, args.output)
    print(str(Path(args.output) / "report.json"))
    return EXIT_STAGE if report.failed else EXIT_OK


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: line {e.lineno}: {e.msg}") from None


def _cmd_simulate(args) -> int:
    sc = _load_json(args.scenario)
    kind = sc.get("fixture")
    if kind not in SCENARIOS:
        raise InputError(f"fixture must be one of {SCENARIOS}")
    seed = int(sc.get("seed", 0))
    out = Path(args.output or sc.get("output", "sim"))
    out.mkdir(parents=True, exist_ok=True)
    if kind == "two_regime":
        text, scms = fixtures.two_regime_price_csv(seed)
        (out / "prices.csv").write_text(text)
        truth = [json.loads(s.to_json()) for s in scms]
    elif kind == "stationary":
        text, scm = fixtures.stationary_price_csv(seed, int(sc.get("n", 1000)), bool(sc.get("with_link", True)))
        (out / "prices.csv").write_text(text)
        truth = json.loads(scm.to_json())
    elif kind == "drift":
        d = fixtures.drift_dataset(int(sc.get("n", 2000)), seed, bool(sc.get("stationary", False)))
        d.to_csv(out / "data.csv")
        truth = {"changing_modules": [] if sc.get("stationary") else ["X2"]}
    else:
        noise = NoiseFamily(sc.get("noise", "gaussian"))
        scm = fixtures.one_factor_scm(noise) if kind == "one_factor" else fixtures.nested_latent_scm(noise=noise)
        sample_scm(scm, int(sc.get("n", 100_000)), seed).to_csv(out / "data.csv")
        truth = json.loads(scm.to_json())
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    print(str(out))
    return EXIT_OK


def _cmd_cpd(args) -> int:
    data = ingest_prices(args.input, positive=False)
    series = mean_return_series(data)
    sd = series.std()
    if not sd > 0:
        raise InputError("mean return series is constant")
    rep = bocpd((series - series.mean()) / sd, args.hazard, rule=DeclarationRule(max_run=args.max_run))
    stamps = data.meta["stamps"]
    doc = rep.to_dict()
    doc["change_dates"] = [stamps[c] for c in rep.change_points]
    doc["n"] = int(np.asarray(series).size)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.trace:
        Path(args.trace).mkdir(parents=True, exist_ok=True)
        (Path(args.trace) / "cpd_mode_path.csv").write_text(rep.mode_path_csv())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discover", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="full pipeline on a price CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--output", help="override output_dir from the config")
    r.add_argument("--trace", help="directory for per-stage dumps")
    r.set_defaults(func=_cmd_run)

    rp = sub.add_parser("replay", help="rebuild a report from a trace directory")
    rp.add_argument("--trace", required=True)
    rp.add_argument("--output", required=True)
    rp.set_defaults(func=_cmd_replay)

    s = sub.add_parser("simulate", help="write a synthetic fixture and its ground truth")
    s.add_argument("--scenario", required=True)
    s.add_argument("--output")
    s.set_defaults(func=_cmd_simulate)

    c = sub.add_parser("cpd", help="change points of the mean series of a returns CSV")
    c.add_argument("--input", required=True)
    c.add_argument("--hazard", type=float, default=1 / 250)
    c.add_argument("--max-run", type=int, default=DeclarationRule.max_run)
    c.add_argument("--output")
    c.add_argument("--trace")
    c.set_defaults(func=_cmd_cpd)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as e:
        print(f"stage failure: {e}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as e:  # noqa: BLE001
        print(f"stage failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
