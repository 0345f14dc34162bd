"""Print observed orders for every refinement study, optionally saving JSON.

    python scripts/convergence_table.py --levels 4 --json orders.json
"""
import argparse
import json

from npns import verification


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--json", help="write the raw study data here")
    args = ap.parse_args()

    studies = [fn(args.levels) for fn in verification.STUDIES.values()]
    studies.append(verification.budget_study(args.levels))
    print(f"{'study':<20} {'kind':<6} {'sizes':<26} {'errors':<40} orders")
    for s in studies:
        errs = " ".join(f"{e:.2e}" for e in s.errors)
        orders = " ".join(f"{o:.2f}" for o in s.orders)
        sizes = " ".join(f"{float(x):g}" for x in s.sizes)
        print(f"{s.name:<20} {s.kind:<6} {sizes:<26} {errs:<40} {orders}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([s.to_json() for s in studies], fh, indent=2, default=float)


if __name__ == "__main__":
    main()
