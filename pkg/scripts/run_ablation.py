#!/usr/bin/env python3
"""Objective ablation over multiple seeds.

Prepares one corpus and one pretrained teacher, then trains student pairs
(all objectives vs. one objective disabled) across seeds and prints the
held-out retrieval gap. The corpus and teacher are shared across seeds; the
seed varies student initialization, masking, and batch order.

Usage:
    python scripts/run_ablation.py --out runs/ablation [--ablate SentA] [--seeds 0 1 2]
"""

import argparse
import shutil
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from xlkd.cli import main as xlkd_main
from run_synthetic_e2e import CONFIG


def run_stage(argv: list[str]) -> None:
    code = xlkd_main(argv)
    if code != 0:
        raise SystemExit(f"stage {argv[0]} failed with exit code {code}")


def mean_p_at_1(report_path: Path) -> float:
    rows = report_path.read_text().splitlines()
    header = rows[0].split("\t")
    values = []
    for line in rows[1:]:
        rec = dict(zip(header, line.split("\t")))
        if rec["model"] != "trained":
            continue
        values.append(float(rec["p_at_1_src2tgt"]))
        values.append(float(rec["p_at_1_tgt2src"]))
    return sum(values) / len(values)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=str, required=True, help="experiment directory")
    parser.add_argument("--ablate", type=str, default="SentA", choices=["TLM", "XWCL", "SentA", "StrucA"])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=120)
    parser.add_argument("--pretrain-steps", type=int, default=3000)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ini = out / "run.ini"
    ini.write_text(
        CONFIG.format(
            seed=args.seeds[0],
            out=out / "run",
            epochs=args.epochs,
            pretrain_steps=args.pretrain_steps,
        )
    )
    run_stage(["prepare", "--config", str(ini)])
    run_stage(["pretrain-teacher", "--config", str(ini)])

    full_scores, ablated_scores = [], []
    for seed in args.seeds:
        for disable, scores in ((None, full_scores), (args.ablate, ablated_scores)):
            train_dir = out / "run" / "train"
            if train_dir.exists():
                shutil.rmtree(train_dir)
            argv = ["train", "--config", str(ini), "--seed", str(seed)]
            if disable:
                argv += ["--disable", disable]
            t0 = time.monotonic()
            run_stage(argv)
            run_stage(["eval", "--config", str(ini)])
            score = mean_p_at_1(out / "run" / "eval_report.tsv")
            scores.append(score)
            tag = f"-{disable}" if disable else "full"
            print(f"seed={seed} {tag}: mean held-out P@1 = {score:.4f} ({time.monotonic() - t0:.0f}s)", flush=True)

    full_mean = sum(full_scores) / len(full_scores)
    ablated_mean = sum(ablated_scores) / len(ablated_scores)
    print(f"\nfull objectives:    {full_mean:.4f}  (seeds {full_scores})")
    print(f"without {args.ablate}: {ablated_mean:.4f}  (seeds {ablated_scores})")
    print(f"drop: {full_mean - ablated_mean:+.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
