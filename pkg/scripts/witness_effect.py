"""Size of the non-Markov effect in the witness config.

Tabulates the u_ratio gap over a grid of (x1, x2) and the projected power of
the Markov test as a function of the number of paths.
"""

import argparse
from pathlib import Path

import numpy as np

from levybridge import markov_gap, markov_mc_test
from levybridge.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "witness.json"))
    ap.add_argument("--paths", type=int, nargs="+", default=[50_000, 200_000, 1_000_000])
    args = ap.parse_args()
    c = load_config(args.config)
    p = c.params
    xs = np.linspace(-2, 2, 5)
    print("u_ratio gap |U - f_t2(x2)/F(t2)|, rows x1, columns x2:", xs)
    for x1 in xs:
        row = markov_gap(p["t1"], p["t2"], x1, xs, c.model, c.length)
        print(f"  x1={x1:+.1f} " + " ".join(f"{v:9.5f}" for v in np.atleast_1d(row)))
    print("\nn_paths  projected_power  rejections  status")
    for n in args.paths:
        rep = markov_mc_test(c.model, c.length, c.pinning, p["t1"], p["t2"], p["u"], tuple(p["bins"]),
                             n, c.seed, alpha=p["alpha"], power_guard=True, pilot_paths=p["pilot_paths"])
        power = rep.estimates.get("projected_power", {"value": float("nan")})["value"]
        rej = rep.estimates.get("rejections", {"value": float("nan")})["value"]
        print(f"{n:8d}  {power:15.3f}  {rej:10g}  {rep.status}")


if __name__ == "__main__":
    main()
