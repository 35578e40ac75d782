#!/usr/bin/env python3
"""Ordering check against the Urb3DCD building-change benchmark.

The benchmark's absolute IoU numbers depend on the external dataset, which
is not bundled here; without it this script prints instructions and exits
cleanly. With a prepared dataset it runs, per sub-dataset, a threshold
sweep for balanced and unbalanced OT and verifies the ordering claim:
unbalanced OT beats balanced OT on every sub-dataset.

Expected layout (convert the distributed point clouds to the plain ASCII
formats this toolkit reads; labels on the later epoch use 0=unchanged,
1=new, 2=demolished):

    <data-root>/
        <sub-dataset-name>/
            t0.xyz            earlier epoch, "x y z" per line
            t1.xyz            later epoch,  "x y z label" per line

Exit codes: 0 ordering holds (or dataset absent), 1 ordering violated,
2 data error.
"""

import argparse
import json
import sys
from pathlib import Path

from otcd import (
    ChangeDetectionConfig,
    ChunkingConfig,
    METHOD_BALANCED_OT,
    METHOD_UNBALANCED_OT,
    SolverConfig,
    detect_changes,
    read_xyz,
    sweep_scores,
)


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--data-root", default=None, help="prepared dataset root")
    parser.add_argument("--point-cap", type=int, default=30_000)
    parser.add_argument("--halo", type=float, default=0.0)
    parser.add_argument("--epsilon-rel", type=float, default=0.01)
    parser.add_argument("--rho", type=float, default=1000.0)
    parser.add_argument("--max-iter", type=int, default=5000)
    parser.add_argument(
        "--tau-grid",
        default="0.5:10:0.5",
        help="start:stop:step, matching the empirical threshold selection",
    )
    parser.add_argument("-o", "--output", default=None, help="report JSON path")
    return parser.parse_args(argv)


def tau_grid(spec: str):
    start, stop, step = (float(v) for v in spec.split(":"))
    taus = []
    t = start
    while t <= stop + 1e-9:
        taus.append(round(t, 9))
        t += step
    return taus


def best_miou(pc0, pc1, method, args):
    cfg = ChangeDetectionConfig(
        solver=SolverConfig(
            epsilon_rel=args.epsilon_rel, rho=args.rho, max_iter=args.max_iter
        ),
        chunking=ChunkingConfig(point_cap=args.point_cap, halo_margin=args.halo),
        tau=1.0,
        method=method,
    )
    change_map = detect_changes(pc0, pc1, cfg)
    _, per_tau = sweep_scores(change_map, pc1.labels, tau_grid(args.tau_grid))
    return max(m.mean_change_iou for m in per_tau)


def main(argv=None):
    args = parse_args(argv)
    if args.data_root is None or not Path(args.data_root).is_dir():
        print(__doc__)
        print("no dataset found; nothing to do")
        return 0
    rows = []
    ordering_holds = True
    for sub in sorted(p for p in Path(args.data_root).iterdir() if p.is_dir()):
        t0_path, t1_path = sub / "t0.xyz", sub / "t1.xyz"
        if not (t0_path.exists() and t1_path.exists()):
            print(f"skipping {sub.name}: missing t0.xyz / t1.xyz", file=sys.stderr)
            continue
        pc0 = read_xyz(t0_path)
        pc1 = read_xyz(t1_path, has_label=True)
        ot = best_miou(pc0, pc1, METHOD_BALANCED_OT, args)
        uot = best_miou(pc0, pc1, METHOD_UNBALANCED_OT, args)
        rows.append({"dataset": sub.name, "ot": ot, "uot": uot, "uot_wins": uot > ot})
        ordering_holds &= uot > ot
        print(f"{sub.name:30s} OT {ot:.4f}  UOT {uot:.4f}  "
              f"{'ok' if uot > ot else 'ORDERING VIOLATED'}")
    if not rows:
        print("dataset root contains no usable sub-datasets", file=sys.stderr)
        return 2
    if args.output:
        Path(args.output).write_text(json.dumps(rows, indent=2) + "\n")
    return 0 if ordering_holds else 1


if __name__ == "__main__":
    sys.exit(main())
