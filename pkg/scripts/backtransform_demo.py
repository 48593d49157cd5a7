"""Map a linear classifier behind a preprocessing chain back to the input sensors."""

import argparse

import numpy as np

from brmm.batch import fit_brmm
from brmm.chains import (ProcessingChain, backtransform_affine_analytic, backtransform_numeric,
                         decimation_node, linear_decision_node, sensor_ranking,
                         standardization_node)
from brmm.core import Dataset, HyperParams


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sensors", type=int, default=4)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--factor", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    t, s, k = args.samples, args.sensors, args.factor
    n = 200
    y = np.where(rng.random(n) < 0.5, 1, -1)
    raw = rng.normal(size=(n, t, s))
    raw[:, :, 1] += 0.7 * y[:, None]  # only sensor 1 carries the class
    X = raw.reshape(n, t * s)
    std = standardization_node(X.mean(axis=0), X.std(axis=0))
    dec = decimation_node(k, t, s)
    feats = np.array([dec(std(x)) for x in X])
    model = fit_brmm(Dataset(feats, y), HyperParams(C=0.1, R=2.0))
    chain = ProcessingChain((std, dec, linear_decision_node(model.w, model.b)),
                            input_shape=(t, s))
    exact = backtransform_affine_analytic(chain)
    num = backtransform_numeric(chain, X[0], "four_point")
    print("weight map (time x sensor):")
    print(np.round(exact.reshaped(), 3))
    print(f"max |numeric - analytic| = {np.max(np.abs(num.weights - exact.weights)):.2e}")
    ranking = sensor_ranking(exact.reshaped())
    print("sensors, least relevant first:", list(ranking.order))


if __name__ == "__main__":
    main()
