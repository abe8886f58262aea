"""Loss-variant ablation: one distillation round per variant from a shared teacher.

    python scripts/ablation.py --teacher runs/toy/teacher.mcd --out runs/ablation [--rounds 1]

Prints oracle PPL of each variant's student at the benchmark step counts.
"""

import argparse
import csv
from pathlib import Path

from mcd import pipeline as pl
from mcd.checkpoint import load_checkpoint
from mcd.config import RunConfig
from mcd.evaluation import evaluate_model
from mcd.trainer import TrainingDiverged


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--teacher", required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--rounds", type=int, default=1)
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    cfg = RunConfig(dict(item.split("=", 1) for item in args.set))
    pl.set_threads(1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    mcfg, source = pl.model_config_of(cfg), pl.source_of(cfg)
    rows = []
    for variant in ("hybrid", "kl_fwd", "kl_bwd"):
        try:
            last = pl.run_distill(cfg, args.teacher, out / variant, variant=variant, rounds=args.rounds)
        except TrainingDiverged as exc:
            print(f"{variant}: diverged ({exc})")
            rows.append([variant, "", "diverged"])
            continue
        model = load_checkpoint(last, mcfg)
        for steps in cfg["eval.steps"]:
            _, ppl, _, _ = evaluate_model(model, source, steps, cfg["eval.count"], mcfg.context, mcfg.mask_id,
                                          cfg["seed"], pl.schedule_of(cfg), cfg["sample.batch"])
            rows.append([variant, steps, f"{ppl:.6f}"])
            print(f"{variant:<7} steps={steps:<3} ppl={ppl:.3f}", flush=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "steps", "ppl"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
