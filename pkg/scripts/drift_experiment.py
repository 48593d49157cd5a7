"""Test error of C-SVM (R=inf) against BRMM on the drifting 2-D data, per seed."""

import argparse

import numpy as np

from brmm.batch import fit_brmm
from brmm.core import INF, Dataset, HyperParams
from brmm.dataio import DriftGenConfig, gen_drift


def centre(train, test):
    mu = train.X.mean(axis=0)
    return Dataset(train.X - mu, train.y), Dataset(test.X - mu, test.y)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--C", type=float, default=0.03)
    p.add_argument("--R", type=float, nargs="+", default=[2.0, 5.0])
    args = p.parse_args(argv)
    ranges = [INF, *args.R]
    print("seed " + " ".join(f"R={r:<6g}" for r in ranges))
    errors = np.zeros((args.seeds, len(ranges)))
    for seed in range(args.seeds):
        train, test = centre(*gen_drift(DriftGenConfig(seed=seed)))
        for j, R in enumerate(ranges):
            model = fit_brmm(train, HyperParams(C=args.C, R=R, H=1.0))
            errors[seed, j] = np.mean(model.predict(test.X) != test.y)
        print(f"{seed:4d} " + " ".join(f"{e:8.4f}" for e in errors[seed]))
    print("mean " + " ".join(f"{e:8.4f}" for e in errors.mean(axis=0)))


if __name__ == "__main__":
    main()
