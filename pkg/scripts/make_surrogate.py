"""Write the bundled toy transaction table (and optionally a larger surrogate).

    python3 scripts/make_surrogate.py                      # data/toy_transactions.csv
    python3 scripts/make_surrogate.py --n 20000 --out data/surrogate_20k.csv
"""

import argparse
from pathlib import Path

from shapaudit.dataset import write_table
from shapaudit.surrogate import make_transactions

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3000)
    ap.add_argument("--features", type=int, default=8)
    ap.add_argument("--fraud-rate", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default=str(ROOT / "data" / "toy_transactions.csv"))
    args = ap.parse_args()
    table = make_transactions(n=args.n, n_features=args.features, fraud_rate=args.fraud_rate, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_table(table, out)
    print(f"wrote {len(table)} rows ({int(table.y.sum())} fraud) to {out}")


if __name__ == "__main__":
    main()
