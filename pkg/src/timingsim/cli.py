"""Command line entry point (``python -m timingsim``).

Every subcommand writes its reports under the output directory and prints
a short summary. Failures print one JSON object to stderr and exit
nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness as H
from .adversary import Knowledge, Strategy
from .baselines import BaselineKind, BaselineSpec
from .detectors import DetectorSuite, WindowSpec, load_detector
from .evaluation import DRIFT_TIERS

EXIT_USAGE = 2
EXIT_FAILURE = 1

SUBCOMMANDS = ("bench-baseline", "train-detectors", "train-adversary", "minmax", "sweep", "ooc", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario JSON (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="run one seed instead of the scenario's list")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--strategy", choices=[s.value for s in Strategy])
    common.add_argument("--knowledge", choices=[k.value for k in Knowledge])
    common.add_argument("--workers", type=int, default=1, help="worker processes, one seed each")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="python -m timingsim", description="Timing-attack co-simulation experiments.",
                parents=[common])
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.add_parser("bench-baseline", parents=[common], help="score a non-learning attack against phase-1 detectors") \
        .add_argument("--kind", choices=[k.value for k in BaselineKind], help="overrides the scenario baseline")
    sub.add_parser("train-detectors", parents=[common], help="phase 1: fit and calibrate the detector suite")
    ta = sub.add_parser("train-adversary", parents=[common], help="phase 2: train the attacker against phase-1 detectors")
    ta.add_argument("--single", action="store_true", help="train the single-agent baseline")
    mm = sub.add_parser("minmax", parents=[common], help="adversarial hardening of the detectors")
    mm.add_argument("--adaptive", action="store_true", help="let the attacker keep training between rounds")
    sub.add_parser("sweep", parents=[common], help="alpha/beta sweep ranked by the stealth-impact objective")
    oc = sub.add_parser("ooc", parents=[common], help="phase 3: frozen attackers under drift and fresh detectors")
    oc.add_argument("--drift", choices=sorted(DRIFT_TIERS), help="overrides the scenario drift")
    sub.add_parser("report", parents=[common], help="merge every metrics file under the output directory")
    return p


def _scenario(args) -> H.Scenario:
    sc = H.load_scenario(args.config) if args.config else H.Scenario()
    if args.seed is not None:
        sc = replace(sc, seeds=[args.seed])
    adv = sc.adversary
    if args.strategy or args.knowledge:
        adv = replace(adv, strategy=args.strategy or adv.strategy, knowledge=args.knowledge or adv.knowledge,
                      epsilon=None if args.strategy else adv.epsilon)
        sc = replace(sc, adversary=adv)
    if args.out:
        sc = replace(sc, out_dir=args.out)
    return sc


def _seed_dir(sc: H.Scenario, seed: int) -> Path:
    return sc.output_dir / f"seed_{seed}"


def _load_suite(path: Path) -> DetectorSuite:
    d = json.loads(path.read_text())
    return DetectorSuite(WindowSpec.from_dict(d["spec"]), [load_detector(x) for x in d["detectors"]],
                         np.asarray(d["weights"]))


def _suite(sc: H.Scenario, seed: int) -> DetectorSuite:
    """Phase-1 suite of a seed: reused from disk when present, trained otherwise."""
    p = _seed_dir(sc, seed) / "detectors.json"
    if p.is_file():
        return _load_suite(p)
    return H.phase1_train_detectors(sc, seed, _seed_dir(sc, seed)).suite


def _cmd_train_detectors(sc, args, seed):
    res = H.phase1_train_detectors(sc, seed, _seed_dir(sc, seed))
    return f"seed {seed}\n{res.table()}"


def _cmd_bench(sc, args, seed):
    spec = BaselineSpec(args.kind) if args.kind else (sc.baseline or BaselineSpec(BaselineKind.RANDOM_DELAY))
    suite = _suite(sc, seed)
    rep = H.bench_baseline(sc, suite, spec, seed)
    H.write_reports({spec.kind.value: rep}, _seed_dir(sc, seed), f"baseline_{spec.kind.value}")
    return H.summary_table({spec.kind.value: rep})


def _cmd_train_adversary(sc, args, seed):
    suite = _suite(sc, seed)
    out = _seed_dir(sc, seed)
    p2 = H.phase2_train_adversary(sc, suite, seed, dual=not args.single, out_dir=out)
    rep = H.evaluate_agents(sc, p2.agents, suite, seed)
    key = f"{sc.adversary.strategy.value}/{sc.adversary.knowledge.value}" + ("/single" if args.single else "")
    H.write_reports({key: rep}, out, "phase2_" + key.replace("/", "_"))
    return H.summary_table({key: rep})


def _cmd_minmax(sc, args, seed):
    cfg = replace(sc.minmax, attacker_frozen=not args.adaptive)
    res = H.minmax_train(sc, cfg, seed=seed)
    out = _seed_dir(sc, seed)
    name = "minmax_adaptive" if args.adaptive else "minmax_static"
    H._write(out / f"{name}.json", H.dumps([r.to_dict() for r in res.rounds]))
    H._write(out / f"{name}_detectors.json", H.dumps(res.suite.to_dict()))
    lines = [f"{'round':>5} {'R_attack':>9} {'R_detect':>9} {'L':>8}"]
    lines += [f"{r.round:>5} {r.R_attack:>9.4f} {r.R_detect:>9.4f} {r.L:>8.4f}" for r in res.rounds]
    return "\n".join(lines)


def _cmd_sweep(sc, args, seed):
    rows = H.sweep(sc, _suite(sc, seed), seed=seed)
    out = _seed_dir(sc, seed)
    out.mkdir(parents=True, exist_ok=True)
    H.table_csv([{**vars(r), "objective": r.objective()} for r in rows], out / "sweep.csv")
    best = rows[0]
    return f"best alpha={best.alpha:.2f} beta={best.beta:.2f} stealth={best.stealth:.3f}"


def _cmd_ooc(sc, args, seed):
    drift = DRIFT_TIERS[args.drift] if args.drift else (sc.drift or DRIFT_TIERS["none"])
    suite = _suite(sc, seed)
    out = _seed_dir(sc, seed)
    agents = {}
    for strategy in Strategy:
        for knowledge in Knowledge:
            cfg = replace(sc.adversary, strategy=strategy, knowledge=knowledge, epsilon=None)
            agents[(strategy, knowledge)] = H.phase2_train_adversary(sc, suite, seed, cfg, out_dir=out).agents
    fresh = H.fresh_suite(sc, drift, seed)
    reports = H.phase3_ooc_eval(sc, agents, fresh, drift, seed)
    tier = args.drift or "scenario"
    H.write_reports(reports, out, f"ooc_{tier}")
    return H.summary_table(reports)


def _cmd_report(sc, args, seed):
    reports = H.collect_reports(sc.output_dir)
    text = H.summary_table(reports)
    H._write(sc.output_dir / "summary.txt", text)
    return text


COMMANDS = {
    "train-detectors": _cmd_train_detectors, "bench-baseline": _cmd_bench, "train-adversary": _cmd_train_adversary,
    "minmax": _cmd_minmax, "sweep": _cmd_sweep, "ooc": _cmd_ooc, "report": _cmd_report,
}


def _fail(code: str, message: str, status: int, **details) -> int:
    print(json.dumps({"error": code, "message": message, **details}, sort_keys=True), file=sys.stderr)
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        sc = _scenario(args)
        sc.output_dir.mkdir(parents=True, exist_ok=True)
        H.save_scenario(sc, sc.output_dir / "scenario.json")
        fn = COMMANDS[args.command]
        if args.command == "report":
            print(fn(sc, args, None), end="")
            return 0
        results = H.run_seeds(lambda s: fn(sc, args, s), sc.seeds, 1) if args.workers <= 1 else \
            H.run_seeds(_Job(args.command, sc, args), sc.seeds, args.workers)
        for seed in sorted(results):
            print(results[seed])
        return 0
    except H.HarnessError as exc:
        status = EXIT_USAGE if exc.code == "config_missing" else EXIT_FAILURE
        return _fail(exc.code, str(exc), status, **exc.details)
    except (ValueError, OSError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_FAILURE)


class _Job:
    """Picklable per-seed call for worker processes."""

    def __init__(self, command, scenario, args):
        self.command, self.scenario, self.args = command, scenario, args

    def __call__(self, seed):
        return COMMANDS[self.command](self.scenario, self.args, seed)
