"""Small networks and learnable data sets shared by the mask net tests."""

import numpy as np

from kwbeam.features import FeatureConfig, accumulate_stats, splice
from kwbeam.masknet import IbmPair, init_model, loss_and_gradients

from oracles import finite_difference_error

TINY_FEATURES = FeatureConfig(base_dim=4, left_context=1, right_context=1)
TINY_DIMS = (12, 8, 8, 8, 8)


def toy_dataset(seed=0, utterances=10, frames=20):
    # keyword-dominant where the bin exceeds 1: learnable from the centre frame
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(utterances):
        mag = rng.gamma(2.0, 0.5, size=(frames, 5))
        kw = (mag[:, :4] > 1.0).astype(float)
        data.append((mag, IbmPair(kw, 1 - kw)))
    return data


def toy_model(data, seed=2):
    stats = accumulate_stats([splice(m, TINY_FEATURES) for m, _ in data])
    return init_model(TINY_DIMS, seed=seed, norm_stats=stats)


def gradient_error(dims, seed):
    """Worst relative gap between backprop and central differences on a
    random batch (dropout off)."""
    rng = np.random.default_rng(seed)
    model = init_model(dims, seed=seed)
    for b in model.biases:
        b[:] = 0.1 * rng.standard_normal(b.shape)
    x = rng.standard_normal((7, dims[0]))
    y = (rng.random((7, dims[-1])) > 0.5).astype(float)
    _, gw, gb = loss_and_gradients(model, x, y)
    return finite_difference_error(
        lambda: loss_and_gradients(model, x, y)[0],
        model.weights + model.biases, gw + gb)
