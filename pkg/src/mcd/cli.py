"""``mcd`` command line: calibrate | verify | pretrain | distill | sample | eval | repro.

Exit codes: 0 success, 1 usage or configuration error, 2 a checked invariant failed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

from . import config as config_mod
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2

log = logging.getLogger("mcd")


class UsageError(Exception):
    pass


class InvariantFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# short flags that map onto config keys
ALIASES = {
    "--K": "schedule.K",
    "--seed": "seed",
    "--teacher": "distill.teacher",
    "--checkpoint": "sample.checkpoint",
}

COMMANDS = {
    "calibrate": "tabulate gamma, ratio, alpha, sigma -> calibration.csv",
    "verify": "Monte Carlo duality checks -> duality_report.csv (exit 2 on failure)",
    "pretrain": "train the teacher on the synthetic source -> teacher.mcd",
    "distill": "consistency rounds from a teacher -> student_r*.mcd, metrics.csv",
    "sample": "draw sequences from a checkpoint -> samples.txt",
    "eval": "teacher/student benchmark grid -> benchmark.csv",
    "repro": "pretrain, distill and benchmark -> table2_desk.csv",
}


def build_parser() -> argparse.ArgumentParser:
    epilog = ("config keys (set with --set key=value, --key value, or a --config file):\n"
              + config_mod.help_text())
    parser = _Parser(prog="mcd", description=__doc__, epilog=epilog,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, text in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        for flag, key in ALIASES.items():
            p.add_argument(flag, dest="alias_" + key.replace(".", "_"), metavar="VALUE", help=f"alias for {key}")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args, extra: list[str]) -> dict[str, str]:
    out: dict[str, str] = {}
    for flag, key in ALIASES.items():
        value = getattr(args, "alias_" + key.replace(".", "_"))
        if value is not None:
            out[key] = value
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key, sep, value = tok[2:].partition("=")
        if not sep:
            if i + 1 >= len(extra):
                raise UsageError(f"{tok} needs a value")
            i += 1
            value = extra[i]
        if key not in config_mod.KEYS:
            raise UsageError(f"unknown option or config key {tok!r}")
        out[key] = value
        i += 1
    return out


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    import numpy as np

    from .schedule import CalibratedSchedule, calibration_table, time_of_gamma

    sched = _pipeline().schedule_of(cfg)
    cal = CalibratedSchedule(sched, cfg["schedule.K"], cfg["schedule.cdf_tolerance"])
    ts = list(np.linspace(0.0, 1.0, cfg["schedule.points"]))
    ts += [time_of_gamma(sched, g) for g in cfg["schedule.gammas"]]
    rows = calibration_table(cal, sorted(set(float(t) for t in ts)))
    _write_rows(out / "calibration.csv", ["t", "gamma", "ratio", "alpha", "sigma"],
                [[repr(v) for v in row] for row in rows])
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    from .duality import verify_duality_report, write_reports

    sched = _pipeline().schedule_of(cfg)
    reports = []
    for K in cfg["eval.verify_K"]:
        rep = verify_duality_report(K, sched, cfg["eval.verify_samples"], cfg["eval.verify_grid"], cfg["seed"],
                                    lock_trajectories=cfg["eval.lock_trajectories"],
                                    lock_grid=cfg["eval.lock_grid"],
                                    cdf_tolerance=cfg["schedule.cdf_tolerance"])
        log.info("K=%d %s", K, rep.summary())
        reports.append(rep)
    write_reports(reports, out / "duality_report.csv")
    failed = [r.K for r in reports if not r.passed]
    if failed:
        raise InvariantFailure(f"duality checks failed for K={failed}")
    return EXIT_OK


def _teacher_path(cfg: RunConfig, out: Path) -> Path:
    path = Path(cfg["distill.teacher"]) if cfg["distill.teacher"] else out / "teacher.mcd"
    if not path.is_file():
        raise UsageError(f"teacher checkpoint not found: {path} (set distill.teacher)")
    return path


def cmd_pretrain(cfg: RunConfig, out: Path) -> int:
    path = _pipeline().run_pretrain(cfg, out)
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_distill(cfg: RunConfig, out: Path) -> int:
    _pipeline().run_distill(cfg, _teacher_path(cfg, out), out)
    return EXIT_OK


def cmd_sample(cfg: RunConfig, out: Path) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import write_corpus
    from .sampler import SamplerConfig, generate

    pl = _pipeline()
    if not cfg["sample.checkpoint"]:
        raise UsageError("sample needs sample.checkpoint (or --checkpoint)")
    path = Path(cfg["sample.checkpoint"])
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    model = load_checkpoint(path)
    mcfg = model.cfg
    scfg = SamplerConfig(cfg["sample.steps"], pl.schedule_of(cfg), cfg["seed"], cfg["sample.batch"])
    samples = generate(model, scfg, cfg["sample.count"], mcfg.context, mcfg.mask_id)
    write_corpus(samples, out / "samples.txt")
    if cfg["sample.scores"]:
        lp = pl.source_of(cfg).token_log_probs(samples)
        _write_rows(out / "sample_scores.csv", ["index", "mean_log_prob", "ppl"],
                    [[i, f"{v:.6f}", f"{math.exp(-v):.6f}"]
                     for i, v in enumerate(lp.mean(axis=1))])
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    pl = _pipeline()
    students = pl.student_checkpoints(cfg["eval.students"] or out)
    pl.run_eval(cfg, _teacher_path(cfg, out), students, out / "benchmark.csv")
    return EXIT_OK


def cmd_repro(cfg: RunConfig, out: Path) -> int:
    _pipeline().run_repro(cfg, out)
    return EXIT_OK


HANDLERS = {
    "calibrate": cmd_calibrate,
    "verify": cmd_verify,
    "pretrain": cmd_pretrain,
    "distill": cmd_distill,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "repro": cmd_repro,
}


def _pipeline():
    # torch is only imported by commands that need it
    from . import pipeline

    pipeline.set_threads(1)
    return pipeline


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = config_mod.load(args.config, _overrides(args, extra))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cfg.write(out)
        return HANDLERS[args.command](cfg, out)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except Exception as exc:  # noqa: BLE001
        from .checkpoint import CheckpointError
        from .losses import NonFiniteLossError
        from .sampler import SamplerStateError
        from .trainer import TrainingDiverged

        if isinstance(exc, (CheckpointError, NonFiniteLossError, SamplerStateError, TrainingDiverged)):
            print(f"invariant failure: {exc}", file=sys.stderr)
            return EXIT_INVARIANT
        raise


if __name__ == "__main__":
    sys.exit(main())
