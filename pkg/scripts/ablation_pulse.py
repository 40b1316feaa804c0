#!/usr/bin/env python3
"""Physiological-cue ablation: rerun the pipeline with pulse amplitude 0.

With zero amplitude, real and fake clips are rendered pixel-identically, so
a detector whose signal really is the pulse must fall to chance (AUC ~ 0.5).
Usage: python3 scripts/ablation_pulse.py WORKDIR [--seed N]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from pulsecan.cli import main as cli_main
from pulsecan.containers import read_kv_config


def run(argv):
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    run(["generate", "--out", str(data), "--seed", str(args.seed),
         "--pulse_amplitude", "0.0"])
    run(["pretrain", "--data", str(data), "--out", str(work / "pretrain"),
         "--seed", str(args.seed)])
    run(["finetune", "--data", str(data),
         "--weights", str(work / "pretrain" / "pretrained.dfw"),
         "--out", str(work / "finetune"), "--seed", str(args.seed)])
    run(["evaluate", "--data", str(data),
         "--weights", str(work / "finetune" / "detector.dfw"),
         "--out", str(work / "evaluate")])
    report = read_kv_config(work / "evaluate" / "report.txt")
    auc = float(report["auc"])
    print(f"ablation AUC = {auc:.4f} (chance band: 0.43 .. 0.57)")


if __name__ == "__main__":
    main()
