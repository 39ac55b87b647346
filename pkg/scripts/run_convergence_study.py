#!/usr/bin/env python3
"""Sweep oversampling widths, eigencounts, and contrasts on one preset.

Writes study.csv (one row per cell) and study.json (rows plus the sweep
parameters) to the output directory, then prints the error table.

Typical invocation:

    python scripts/run_convergence_study.py --preset fem-square-23k \
        --parts 100 --nov 4 --layers 2 3 4 5 --contrast 1e4 \
        --source sin --out results/convergence
"""

import argparse
import sys

from netcem.diagnostics import StudySpec, run_study, write_study


def parse_args(argv=None) -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="fem-square-23k", help="problem preset name")
    ap.add_argument("--parts", type=int, default=100, help="number of subgraphs")
    ap.add_argument("--nov", type=int, nargs="+", default=[4], help="eigenvectors per subgraph")
    ap.add_argument("--layers", type=int, nargs="+", default=[2, 3, 4, 5], help="oversampling widths")
    ap.add_argument("--contrast", type=float, nargs="+", default=[1e4], help="contrast values")
    ap.add_argument("--source", default="sin", help="load preset (ones, normal, sin, point)")
    ap.add_argument("--seed", type=int, default=0, help="partition seed")
    ap.add_argument("--workers", type=int, default=1, help="process pool size")
    ap.add_argument("--out", default="study_out", help="output directory")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    spec = StudySpec(
        preset=args.preset,
        part_count=args.parts,
        nov_list=tuple(args.nov),
        layers_list=tuple(args.layers),
        contrast_list=tuple(args.contrast),
        seed=args.seed,
        source=args.source,
        workers=args.workers,
    )
    rows = run_study(spec)
    path = write_study(rows, spec, args.out)
    header = f"{'contrast':>10} {'Nov':>4} {'l':>3} {'e_L2':>12} {'e_a':>12} {'t_aux_s':>8} {'t_cem_s':>8}  status"
    print(header)
    print("-" * len(header))
    for row in rows:
        e_l2 = "-" if row["e_L2"] is None else f"{row['e_L2']:.4e}"
        e_a = "-" if row["e_a"] is None else f"{row['e_a']:.4e}"
        t_aux = "-" if row["t_aux_s"] is None else f"{row['t_aux_s']:.2f}"
        t_cem = "-" if row["t_cem_s"] is None else f"{row['t_cem_s']:.2f}"
        print(
            f"{row['contrast']:>10.1e} {row['Nov']:>4} {row['l']:>3} "
            f"{e_l2:>12} {e_a:>12} {t_aux:>8} {t_cem:>8}  {row['status']}"
        )
    print(f"\nwrote {path}")
    return 0 if all(row["status"] == "ok" for row in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
