"""Show that BRMM with an inactive outer margin reproduces the C-SVM, and R=1 the RFDA."""

import argparse

import numpy as np

from brmm.batch import compute_r_max, fit_brmm, fit_csvm, fit_rfda
from brmm.core import Dataset, HyperParams


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=80)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    y = np.where(rng.random(args.n) < 0.5, 1, -1)
    X = rng.normal(size=(args.n, args.dim)) + 0.8 * y[:, None]
    data = Dataset(X, y)
    hp = HyperParams(C=args.C)
    r_max = compute_r_max(data, hp)
    svm = fit_csvm(data, hp)
    wide = fit_brmm(data, HyperParams(C=args.C, R=r_max + 1.0))
    print(f"R_max = {r_max:.4f}")
    print(f"C-SVM   w = {np.round(svm.w, 6)}, b = {svm.b:.6f}")
    print(f"BRMM    w = {np.round(wide.w, 6)}, b = {wide.b:.6f}  (R = R_max + 1)")
    rfda = fit_rfda(data, hp)
    tight = fit_brmm(data, HyperParams(C=args.C, R=1.0))
    print(f"RFDA    w = {np.round(rfda.w, 6)}, b = {rfda.b:.6f}")
    print(f"BRMM    w = {np.round(tight.w, 6)}, b = {tight.b:.6f}  (R = 1)")
    Z = rng.normal(size=(1000, args.dim)) * 2
    print(f"decision agreement on 1000 points: {np.mean(svm.predict(Z) == wide.predict(Z)):.3f}")


if __name__ == "__main__":
    main()
