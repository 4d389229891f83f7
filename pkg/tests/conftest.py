import os

import pytest
from hypothesis import settings

from isccmarket.scenario import load_fixture

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def tiny():
    return load_fixture("tiny3x4")


def random_graph(rng, n, d_v, p_edge=0.5, role="distributor"):
    from isccmarket.graph_model import EmploymentGraph
    edges = [(i, j, float(rng.uniform(0, 2))) for i in range(n) for j in range(i + 1, n)
             if rng.random() < p_edge]
    return EmploymentGraph(role, list(range(n)), rng.normal(size=(n, d_v)), edges)


def gradient_errors(params, graph, spec, eps=1e-5, floor=1e-6):
    """Per-parameter relative error between backward() and central differences.

    Gradients smaller than ``floor`` are compared on the absolute scale;
    below it finite differences only measure roundoff.
    """
    import numpy as np
    from isccmarket.neural import backward, gnn_forward, loss_value

    _, _, cache = gnn_forward(params, graph)
    analytic = backward(params, graph, cache, spec).vector
    numeric = np.zeros_like(analytic)
    probe = params.copy()
    for k in range(len(probe.vector)):
        old = probe.vector[k]
        probe.vector[k] = old + eps
        up = loss_value(probe, graph, spec)
        probe.vector[k] = old - eps
        down = loss_value(probe, graph, spec)
        probe.vector[k] = old
        numeric[k] = (up - down) / (2 * eps)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale
