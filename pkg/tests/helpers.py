"""Small model builders and oracles shared by the test modules."""

from itertools import combinations
from math import factorial

import numpy as np

from xsecbench.netcore import DenseLayer, Model, init_model, probabilities_batch


def linear_model(w, b=0.0, activation="identity"):
    """Single-output affine model ``w . x + b``."""
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    return Model((DenseLayer(w, np.full(w.shape[0], b, dtype=np.float64), activation),))


def random_net(seed, sizes=(6, 8, 3), hidden="tanh", output="softmax"):
    return init_model(list(sizes), hidden, output, seed)


def brute_force_shapley(model, x, c, b):
    """Shapley values from the permutation-weighted formula over every coalition."""
    d = x.size

    def v(S):
        z = b.copy()
        z[list(S)] = x[list(S)]
        return probabilities_batch(model, z, c)[0]

    phi = np.zeros(d)
    for i in range(d):
        others = [j for j in range(d) if j != i]
        for s in range(d):
            wt = factorial(s) * factorial(d - s - 1) / factorial(d)
            for S in combinations(others, s):
                phi[i] += wt * (v(S + (i,)) - v(S))
    return phi
