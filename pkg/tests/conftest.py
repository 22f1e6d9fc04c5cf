import itertools

import numpy as np
import pytest

from cohdefer.coherence import Contract
from cohdefer.taxonomy import from_parent_indices, parse_taxonomy

FIG1 = {
    "LungOpacity": "ROOT",
    "Edema": "LungOpacity",
    "Infiltration": "LungOpacity",
    "Consolidation": "LungOpacity",
}


def all_tree_shapes(max_nodes):
    """Every parent array with parent[i] < i, i.e. all rooted trees in topological labelling."""
    for n in range(1, max_nodes + 1):
        for tail in itertools.product(*[range(i) for i in range(1, n)]):
            yield from_parent_indices([-1, *tail])


def random_parent_tree(rng, n, forest=False):
    parent = [-1] + [int(rng.integers(i)) for i in range(1, n)]
    if forest:
        parent = [-1 if (i > 0 and rng.random() < 0.2) else p for i, p in enumerate(parent)]
    return from_parent_indices(parent)


def random_simplex(rng, shape, spiky=True):
    x = rng.dirichlet(np.ones(shape[-1]) * (0.5 if spiky else 2.0), size=shape[:-1])
    return x


@pytest.fixture
def fig1():
    return parse_taxonomy(FIG1)


@pytest.fixture
def chain2():
    return parse_taxonomy({"p": "ROOT", "c": "p"})


@pytest.fixture
def chain3():
    return parse_taxonomy({"r": "ROOT", "a": "r", "b": "a"})


@pytest.fixture
def se():
    return Contract.se()


@pytest.fixture
def ssh():
    return Contract.ssh()


CONTRACTS = [Contract.se(), Contract.ssh(), Contract.multi(2), Contract.multi(2, same_expert=True)]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
