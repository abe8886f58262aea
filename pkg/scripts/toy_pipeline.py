"""Run the full toy pipeline (pretrain, distill, benchmark) and print the PPL grid.

    python scripts/toy_pipeline.py --out runs/toy [--set key=value ...]
"""

import argparse
import csv
import sys
import time

from mcd import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--set", action="append", default=[])
    args = ap.parse_args()
    t0 = time.perf_counter()
    argv = ["repro", "--out", args.out, "-v"]
    for item in args.set:
        argv += ["--set", item]
    code = cli.main(argv)
    if code:
        sys.exit(code)
    with open(f"{args.out}/table2_desk.csv") as fh:
        rows = list(csv.DictReader(fh))
    steps = sorted({int(r["steps"]) for r in rows})
    print("round " + "".join(f"{s:>10}" for s in steps))
    for rnd in sorted({int(r["round"]) for r in rows}):
        cells = {int(r["steps"]): float(r["ppl"]) for r in rows if int(r["round"]) == rnd}
        label = "teacher" if rnd == 0 else f"r{rnd}"
        print(f"{label:<7}" + "".join(f"{cells[s]:>10.3f}" for s in steps))
    print(f"done in {(time.perf_counter() - t0) / 60:.1f} min")


if __name__ == "__main__":
    main()
