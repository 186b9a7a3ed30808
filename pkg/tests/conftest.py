import random
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from tgtn.model import GraphTensors
from tgtn.txgen import FRAUD, LEGIT, Transaction

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_txs(rows, start=1_700_000_000):
    """rows of (gap_seconds, card, merchant, cents, fraud?) -> sorted transactions."""
    out = []
    t = start
    for i, (gap, card, merchant, cents, fraud) in enumerate(rows):
        t += gap
        out.append(Transaction(i, t, f"c{card}", f"m{merchant}", Decimal(cents) / 100,
                               FRAUD if fraud else LEGIT))
    return out


tx_rows = st.lists(st.tuples(st.integers(0, 40_000), st.integers(0, 6), st.integers(0, 4),
                             st.integers(0, 50_000), st.booleans()), max_size=40)


@pytest.fixture
def random_txs():
    def build(n, seed, n_cards=8, n_merchants=5, max_gap=30_000):
        rnd = random.Random(seed)
        return make_txs([(rnd.randrange(max_gap), rnd.randrange(n_cards), rnd.randrange(n_merchants),
                          rnd.randrange(1, 100_000), rnd.random() < 0.2) for _ in range(n)])
    return build


def random_graph_tensors(rng, n=8, d_in=6, n_edges=10):
    X = rng.normal(size=(n, d_in))
    nb = [set() for _ in range(n)]
    for _ in range(n_edges):
        i, j = rng.choice(n, 2, replace=False)
        nb[i].add(int(j))
        nb[j].add(int(i))
    ranks = rng.permutation(n)
    return GraphTensors(X, [sorted(s) for s in nb], ranks), nb


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
