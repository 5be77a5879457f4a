"""Shared test networks.

``SHIPPED_NETWORKS`` is the fixture set used by the cross-cutting suites
(oracle equivalences, uniqueness probes, conservation checks); individual
tests also build throwaway instances inline.
"""

import copy

import numpy as np
import pytest

from mnum import parse_network

TWO_LINK_SYMMETRIC = {
    "nodes": ["s", "d"],
    "arcs": [
        {"id": "up", "tail": "s", "head": "d", "model": "mm1", "capacity": 2.0, "lambda0": 1.0},
        {"id": "down", "tail": "s", "head": "d", "model": "mm1", "capacity": 2.0, "lambda0": 1.0},
    ],
    "sources": [
        {"id": "k0", "origin": "s", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0}
    ],
    "choice": "logit",
    "beta": 1.0,
}

# Capacities force both links into use at demand 2.5 (link 1 alone saturates).
TWO_LINK_ASYMMETRIC = {
    "nodes": ["s", "d"],
    "arcs": [
        {"id": "a1", "tail": "s", "head": "d", "model": "mm1", "capacity": 2.0, "lambda0": 1.0},
        {"id": "a2", "tail": "s", "head": "d", "model": "mm1", "capacity": 1.5, "lambda0": 1.3},
    ],
    "sources": [
        {"id": "k0", "origin": "s", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0}
    ],
}

CHAIN3 = {
    "nodes": ["s", "m", "d"],
    "arcs": [
        {"id": "sm", "tail": "s", "head": "m", "model": "mm1", "capacity": 3.0, "lambda0": 1.0},
        {"id": "md", "tail": "m", "head": "d", "model": "mm1", "capacity": 3.0, "lambda0": 2.0},
    ],
    "sources": [
        {"id": "k0", "origin": "s", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0}
    ],
}

BRAESS5 = {
    "nodes": ["s", "a", "b", "d"],
    "arcs": [
        {"id": "sa", "tail": "s", "head": "a", "model": "mm1", "capacity": 3.0, "lambda0": 1.0},
        {"id": "sb", "tail": "s", "head": "b", "model": "mm1", "capacity": 2.5, "lambda0": 2.0},
        {"id": "ad", "tail": "a", "head": "d", "model": "mm1", "capacity": 2.5, "lambda0": 2.0},
        {"id": "bd", "tail": "b", "head": "d", "model": "mm1", "capacity": 3.0, "lambda0": 1.0},
        {"id": "ab", "tail": "a", "head": "b", "model": "mm1", "capacity": 2.0, "lambda0": 0.5},
    ],
    "sources": [
        {"id": "k0", "origin": "s", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0}
    ],
}

# Two single-path sources sharing the bottleneck m->d.
SHARED_CHAIN = {
    "nodes": ["s1", "s2", "m", "d"],
    "arcs": [
        {"id": "a1", "tail": "s1", "head": "m", "model": "mm1", "capacity": 3.0, "lambda0": 1.0},
        {"id": "a2", "tail": "s2", "head": "m", "model": "mm1", "capacity": 3.0, "lambda0": 1.5},
        {"id": "a3", "tail": "m", "head": "d", "model": "mm1", "capacity": 4.0, "lambda0": 2.0},
    ],
    "sources": [
        {"id": "k1", "origin": "s1", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0},
        {"id": "k2", "origin": "s2", "destination": "d", "rate": "vegas", "alpha": 0.8, "D": 1.2},
    ],
}


def layered_dag_data(seed, layers, n_sources=2, skip_prob=0.3):
    """Random layered DAG with forward and skip arcs; origins in layer 0."""
    rng = np.random.default_rng(seed)
    layer_nodes = []
    count = 0
    for width in layers:
        layer_nodes.append([f"n{count + i}" for i in range(width)])
        count += width
    nodes = [n for layer in layer_nodes for n in layer]
    arcs = []

    def add_arc(tail, head):
        arcs.append(
            {
                "id": f"e{len(arcs)}",
                "tail": tail,
                "head": head,
                "model": "mm1",
                "capacity": float(rng.uniform(1.5, 3.0)),
                "lambda0": float(rng.uniform(0.5, 2.0)),
            }
        )

    for li in range(len(layers) - 1):
        here, there = layer_nodes[li], layer_nodes[li + 1]
        for t in here:
            targets = [h for h in there if rng.uniform() < 0.7]
            if not targets:
                targets = [there[rng.integers(len(there))]]
            for h in targets:
                add_arc(t, h)
        for h in there:
            if not any(a["head"] == h for a in arcs):
                add_arc(here[rng.integers(len(here))], h)
    for li in range(len(layers) - 2):
        for t in layer_nodes[li]:
            for h in layer_nodes[li + 2]:
                if rng.uniform() < skip_prob:
                    add_arc(t, h)

    sink = layer_nodes[-1][0]
    sources = []
    for k in range(n_sources):
        origin = layer_nodes[0][k % len(layer_nodes[0])]
        sources.append(
            {
                "id": f"k{k}",
                "origin": origin,
                "destination": sink,
                "rate": "vegas",
                "alpha": float(rng.uniform(0.6, 1.2)),
                "D": float(rng.uniform(0.8, 1.5)),
            }
        )
    return {"nodes": nodes, "arcs": arcs, "sources": sources}


LAYERED8 = layered_dag_data(seed=3, layers=(1, 3, 3, 1), n_sources=1)
LAYERED12 = layered_dag_data(seed=11, layers=(2, 3, 3, 3, 1), n_sources=2)

SHIPPED_NETWORKS = {
    "two_link_symmetric": TWO_LINK_SYMMETRIC,
    "two_link_asymmetric": TWO_LINK_ASYMMETRIC,
    "chain3": CHAIN3,
    "braess5": BRAESS5,
    "shared_chain": SHARED_CHAIN,
    "layered8": LAYERED8,
    "layered12": LAYERED12,
}


def build(data):
    """Fresh Network from a fixture dict (deep-copied: parsing must not mutate)."""
    net, _ = parse_network(copy.deepcopy(data))
    return net


@pytest.fixture
def two_link():
    return build(TWO_LINK_SYMMETRIC)


@pytest.fixture
def two_link_asym():
    return build(TWO_LINK_ASYMMETRIC)


@pytest.fixture
def chain3():
    return build(CHAIN3)


@pytest.fixture
def braess():
    return build(BRAESS5)


@pytest.fixture
def shared_chain():
    return build(SHARED_CHAIN)


@pytest.fixture(params=sorted(SHIPPED_NETWORKS))
def shipped(request):
    return request.param, build(SHIPPED_NETWORKS[request.param])
