"""Empirical stabilizability radius against the window length T."""

import argparse

import numpy as np

from bilinstab import basin_probe, fit_constants, load_model, run_stabilization
from bilinstab.stabilization import draw_perturbation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="dirichlet-x2")
    ap.add_argument("--truncation", type=int, default=6)
    ap.add_argument("--T", type=float, nargs="+", default=[0.125, 0.25, 0.5, 1.0, 2.0])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    model = load_model(args.model, args.truncation)
    e1 = np.eye(args.truncation)[0]
    print("T       R_hat     K_hat     1/K_hat   Lambda_hat")
    for T in args.T:
        r = basin_probe(model, T, seed=args.seed)
        run = run_stabilization(model, e1 + draw_perturbation(args.truncation, 0.05, args.seed), T, 6)
        fit = fit_constants(run)
        print(f"{T:<7g} {r:<9.4f} {fit.K_hat:<9.4f} {1 / fit.K_hat:<9.4f} {run.lambda_hat:.4f}")


if __name__ == "__main__":
    main()
