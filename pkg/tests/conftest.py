import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from lossless_fedrec.data import fixture_example
from lossless_fedrec.engine import RngStream, TrainConfig
from lossless_fedrec.graph import build_graph
from lossless_fedrec.reference import GraphOperators, draw_samples, objective, objective_and_gradient

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], print_blob=True
)
settings.load_profile("default")


@pytest.fixture
def fixture_graph():
    return fixture_example()


@pytest.fixture
def fixture_config():
    return TrainConfig(layers=3, dim=8, lr=0.05, epochs=20, seed=7)


@st.composite
def graphs(draw, max_users=8, max_items=10, min_users=1):
    """Random bipartite graphs where every user has at least one item."""
    num_users = draw(st.integers(min_users, max_users))
    num_items = draw(st.integers(1, max_items))
    edges = []
    for u in range(num_users):
        items = draw(st.sets(st.integers(0, num_items - 1), min_size=1, max_size=num_items))
        edges.extend((u, i) for i in items)
    return build_graph(edges, num_users, num_items)


@st.composite
def configs(draw, max_layers=3, max_dim=8, epochs=5):
    return TrainConfig(
        layers=draw(st.integers(0, max_layers)),
        dim=draw(st.integers(1, max_dim)),
        lr=draw(st.sampled_from([0.01, 0.05, 0.1])),
        epochs=epochs,
        seed=draw(st.integers(0, 2**31 - 1)),
        l2=draw(st.sampled_from([0.0, 1e-4, 1e-2])),
    )


def random_graph(rng: np.random.Generator, max_users=8, max_items=10):
    num_users = int(rng.integers(1, max_users + 1))
    num_items = int(rng.integers(1, max_items + 1))
    edges = []
    for u in range(num_users):
        k = int(rng.integers(1, num_items + 1))
        edges.extend((u, int(i)) for i in rng.choice(num_items, size=k, replace=False))
    return build_graph(edges, num_users, num_items)


def max_rel_diff(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b) / (np.abs(b) + 1e-12)))


def write_ratings(path, rows):
    path.write_text("".join(f"{u}\t{i}\t{r}\t{t}\n" for u, i, r, t in rows))


def synthetic_split(directory, users=30, items=40, per_user=8, seed=0):
    """A MovieLens-shaped split: raw ids start at 1, ratings 1..5."""
    rng = np.random.default_rng(seed)
    base, test = [], []
    for u in range(1, users + 1):
        chosen = rng.choice(np.arange(1, items + 1), size=per_user, replace=False)
        for k, i in enumerate(chosen):
            row = (u, int(i), int(rng.integers(1, 6)), 880000000 + k)
            if k == 0:
                row = row[:2] + (5,) + row[3:]  # every user keeps a training positive
            (test if k % 4 == 3 else base).append(row)
    directory.mkdir(parents=True, exist_ok=True)
    write_ratings(directory / "u1.base", base)
    write_ratings(directory / "u1.test", test)
    return base, test


def finite_difference_check(g, cfg, seed):
    rngs = RngStream(cfg.seed)
    ops = GraphOperators(g)
    rng = np.random.default_rng(seed)
    u0 = rng.normal(0, 0.3, size=(g.num_users, cfg.dim))
    i0 = rng.normal(0, 0.3, size=(g.num_items, cfg.dim))
    samples = draw_samples(ops, cfg, rngs, 0)
    _, gu, gi = objective_and_gradient(ops, cfg, u0, i0, samples)
    h = 1e-6
    worst = 0.0
    for table, grad in ((u0, gu), (i0, gi)):
        fd = np.zeros_like(table)
        for idx in np.ndindex(table.shape):
            old = table[idx]
            table[idx] = old + h
            plus = objective(ops, cfg, u0, i0, samples)
            table[idx] = old - h
            minus = objective(ops, cfg, u0, i0, samples)
            table[idx] = old
            fd[idx] = (plus - minus) / (2 * h)
        scale = np.max(np.abs(fd), initial=0.0)
        if scale > 0:
            worst = max(worst, float(np.max(np.abs(grad - fd)) / scale))
    return worst
