"""Centralized full-graph LightGCN trainer, the oracle for the federated run."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .engine import (
    Neighborhood,
    RngStream,
    TrainConfig,
    accumulate_rows,
    backprop_layer,
    bpr_loss_and_grad,
    combine_layers,
    convolve_layer,
    epoch_samples,
    init_item_table,
    init_user_table,
    sgd_step,
    top_n,
)
from .graph import InteractionGraph, sym_norm_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamSnapshot:
    """Layer-0 parameters after ``epoch`` updates (epoch 0 is the initialization)."""

    epoch: int
    users: np.ndarray
    items: np.ndarray


@dataclass
class CentralState:
    graph: InteractionGraph
    config: TrainConfig
    users: np.ndarray
    items: np.ndarray
    snapshots: list[ParamSnapshot] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


class GraphOperators:
    """Normalized user<-item and item<-user propagation for a whole graph."""

    def __init__(self, graph: InteractionGraph):
        self.graph = graph
        rows, cols = zip(*graph.edges())
        rows = np.array(rows, dtype=np.int64)
        cols = np.array(cols, dtype=np.int64)
        udeg = np.array(graph.user_degree, dtype=np.int64)
        ideg = np.array(graph.item_degree, dtype=np.int64)
        w = sym_norm_weights(udeg[rows], ideg[cols])
        ui = sp.csr_matrix((w, (rows, cols)), shape=(graph.num_users, graph.num_items))
        self.to_users = Neighborhood(ui)
        self.to_items = Neighborhood(ui.T.tocsr())
        self.live = np.array(graph.live_items(), dtype=np.int64)

    def forward(self, users0: np.ndarray, items0: np.ndarray, layers: int):
        """Per-layer tables ``([U_0..U_L], [I_0..I_L])``."""
        us, its = [users0], [items0]
        for _ in range(layers):
            u_next = convolve_layer(self.to_users, its[-1])
            i_next = convolve_layer(self.to_items, us[-1])
            us.append(u_next)
            its.append(i_next)
        return us, its

    def backward(self, grad_users_f: np.ndarray, grad_items_f: np.ndarray, layers: int):
        """Layer-0 gradients given the gradients of the combined embeddings."""
        alpha = 1.0 / (layers + 1)
        gu = backprop_layer(self.to_items, None, alpha, grad_users_f)
        gi = backprop_layer(self.to_users, None, alpha, grad_items_f)
        for _ in range(layers):
            gu, gi = (
                backprop_layer(self.to_items, gi, alpha, grad_users_f),
                backprop_layer(self.to_users, gu, alpha, grad_items_f),
            )
        return gu, gi

    def pool(self, user: int) -> np.ndarray:
        """Negative candidates of ``user``: live items it never interacted with."""
        return np.setdiff1d(self.live, self.graph.adjacency[user], assume_unique=True)


def final_embeddings(ops: GraphOperators, users0, items0, layers: int):
    us, its = ops.forward(users0, items0, layers)
    return combine_layers(us), combine_layers(its)


def draw_samples(ops: GraphOperators, config: TrainConfig, rngs: RngStream, epoch: int):
    """All training triples of one epoch as parallel arrays, user-major."""
    users, pos, neg = [], [], []
    for u, items in enumerate(ops.graph.adjacency):
        p, n = epoch_samples(rngs, epoch, u, items, ops.pool(u), config.neg_per_pos)
        if len(p) == 0:
            log.warning("user %d interacted with every item; skipped", u)
            continue
        users.append(np.full(len(p), u, dtype=np.int64))
        pos.append(p)
        neg.append(n)
    if not users:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(users), np.concatenate(pos), np.concatenate(neg)


def objective_and_gradient(
    ops: GraphOperators,
    config: TrainConfig,
    users0: np.ndarray,
    items0: np.ndarray,
    samples: tuple[np.ndarray, np.ndarray, np.ndarray],
):
    """Summed BPR loss over ``samples`` and its layer-0 gradients (no L2)."""
    su, sp_, sn = samples
    uf, itf = final_embeddings(ops, users0, items0, config.layers)
    if len(su) == 0:
        return 0.0, np.zeros_like(users0), np.zeros_like(items0)
    loss, d_u, d_p, d_n = bpr_loss_and_grad(uf[su], itf[sp_], itf[sn])
    gf_users = accumulate_rows(su, d_u, users0.shape[0])
    gf_items = accumulate_rows(np.concatenate([sp_, sn]), np.vstack([d_p, d_n]), items0.shape[0])
    gu, gi = ops.backward(gf_users, gf_items, config.layers)
    return float(np.sum(loss)), gu, gi


def objective(ops, config, users0, items0, samples) -> float:
    su, sp_, sn = samples
    if len(su) == 0:
        return 0.0
    uf, itf = final_embeddings(ops, users0, items0, config.layers)
    loss, *_ = bpr_loss_and_grad(uf[su], itf[sp_], itf[sn])
    return float(np.sum(loss))


def centralized_train(graph: InteractionGraph, config: TrainConfig) -> CentralState:
    """Full-batch training; snapshot after every epoch (plus the initial one)."""
    rngs = RngStream(config.seed)
    ops = GraphOperators(graph)
    state = CentralState(
        graph=graph,
        config=config,
        users=init_user_table(rngs, graph.num_users, config.dim),
        items=init_item_table(rngs, graph.num_items, config.dim),
    )
    state.snapshots.append(ParamSnapshot(0, state.users.copy(), state.items.copy()))
    every_user = np.arange(graph.num_users)
    for epoch in range(config.epochs):
        samples = draw_samples(ops, config, rngs, epoch)
        loss, gu, gi = objective_and_gradient(ops, config, state.users, state.items, samples)
        state.users = sgd_step(state.users, gu, config.lr, config.l2, every_user)
        state.items = sgd_step(state.items, gi, config.lr, config.l2, ops.live)
        state.losses.append(loss)
        state.snapshots.append(ParamSnapshot(epoch + 1, state.users.copy(), state.items.copy()))
    return state


def centralized_predict(state: CentralState, n: int) -> list[list[int]]:
    """Top-``n`` unseen live items per user, by descending score."""
    ops = GraphOperators(state.graph)
    uf, itf = final_embeddings(ops, state.users, state.items, state.config.layers)
    recs = []
    for u in range(state.graph.num_users):
        cands = ops.pool(u)
        recs.append(top_n(uf[u], cands, itf[cands], n))
    return recs
