import numpy as np


def batch_means(values, weights=None, nbatch=10):
    """Mean of the batch means and its standard error.

    ``values`` is split into ``nbatch`` contiguous batches of (nearly) equal
    length; ``weights`` are per-sample quadrature weights.
    """
    values = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.ones_like(values)
    if values.shape[0] < nbatch:
        raise ValueError(f"need at least {nbatch} samples for {nbatch} batches, got {values.shape[0]}")
    edges = np.linspace(0, values.shape[0], nbatch + 1).round().astype(int)
    means = np.array([np.average(values[a:b], weights=weights[a:b], axis=0) for a, b in zip(edges[:-1], edges[1:])])
    return means.mean(axis=0), means.std(axis=0, ddof=1) / np.sqrt(nbatch)
