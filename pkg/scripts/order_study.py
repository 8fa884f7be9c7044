"""Endpoint error of both splittings against the RK4 reference, step count by step count."""

import argparse

import numpy as np

from bilinstab import build_biorthogonal, convergence_order, load_model, shift_to_zero_ground, synthesize_null_control
from bilinstab.stabilization import draw_perturbation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="dirichlet-x2")
    ap.add_argument("--truncation", type=int, default=6)
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--radius", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = load_model(args.model, args.truncation)
    shifted = shift_to_zero_ground(model)
    fam = build_biorthogonal(shifted.eigenvalues, args.T)
    v0 = draw_perturbation(args.truncation, args.radius, args.seed)
    p = synthesize_null_control(shifted, v0, args.T, fam)
    u0 = np.eye(args.truncation)[0] + v0
    steps = (64, 128, 256, 512, 1024, 2048)
    print("steps  " + "  ".join(f"{n:>9d}" for n in steps))
    for split in ("ground", "full"):
        errors, order = convergence_order(model, p, u0, args.T, steps=steps, split=split)
        rates = np.log2(errors[:-1] / errors[1:])
        print(f"{split:<6} " + "  ".join(f"{e:9.2e}" for e in errors) + f"   fitted order {order:.3f}")
        print("rate          " + "  ".join(f"{r:9.3f}" for r in rates))


if __name__ == "__main__":
    main()
