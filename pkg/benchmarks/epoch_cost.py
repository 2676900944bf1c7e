"""Time one federated epoch, phase by phase, on a synthetic MovieLens-sized graph.

    python benchmarks/epoch_cost.py [--crypto real|transparent] [--epochs N]

The graph has 943 users and 1682 items with a popularity-skewed degree
distribution and roughly 44k positive edges, close to the thresholded
u1 training split. Also times the centralized reference for comparison.
"""

import argparse
import time

import numpy as np

from lossless_fedrec.engine import TrainConfig
from lossless_fedrec.graph import build_graph
from lossless_fedrec.protocol import FederatedRun
from lossless_fedrec.reference import centralized_train


def synthetic_graph(seed=0, users=943, items=1682, edges=44000):
    rng = np.random.default_rng(seed)
    pop = 1.0 / np.arange(1, items + 1) ** 0.9
    pop /= pop.sum()
    activity = np.clip(rng.lognormal(3.2, 0.9, users), 5, 600)
    activity = (activity / activity.sum() * edges).astype(int) + 1
    out = []
    for u in range(users):
        chosen = rng.choice(items, size=min(activity[u], items - 1), replace=False, p=pop)
        out.extend((u, int(i)) for i in chosen)
    return build_graph(out, users, items)


def timed(label, fn):
    start = time.perf_counter()
    value = fn()
    print(f"{label:<12} {time.perf_counter() - start:8.2f}s", flush=True)
    return value


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--crypto", default="real", choices=("real", "transparent"))
    ap.add_argument("--epochs", type=int, default=1)
    args = ap.parse_args()

    g = timed("graph", synthetic_graph)
    print(f"{g.num_users} users, {g.num_items} items, {g.num_edges} edges")
    cfg = TrainConfig(layers=3, dim=64, lr=0.01, epochs=args.epochs, seed=0)
    timed("centralized", lambda: centralized_train(g, cfg))

    run = FederatedRun(g, cfg, crypto=args.crypto)
    try:
        timed("setup", run.setup)
        for epoch in range(args.epochs):
            run.epoch = epoch
            start = time.perf_counter()
            timed("forward", run.run_forward)
            timed("local loss", lambda: run.run_local_loss(epoch))
            timed("backward", run.run_backward)
            timed("aggregate", lambda: run.run_aggregate(epoch))
            timed("update", run.run_update)
            print(f"epoch {epoch + 1}: {time.perf_counter() - start:.2f}s")
        print(dict(sorted(run.transport.counts.items())))
    finally:
        run.close()


if __name__ == "__main__":
    main()
