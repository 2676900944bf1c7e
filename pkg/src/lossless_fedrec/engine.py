"""LightGCN numerics shared by the centralized trainer and the clients.

All kernels here fix their summation order (ascending neighbour id, then
the direct term) so two callers that feed the same values in the same
layout get bit-identical results regardless of how many other rows they
process in the same call.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

INIT_STD = 0.1


class IncompleteLayerState(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    layers: int = 3
    dim: int = 64
    lr: float = 0.01
    epochs: int = 100
    seed: int = 0
    l2: float = 1e-4
    neg_per_pos: int = 1

    def __post_init__(self):
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.neg_per_pos < 1:
            raise ValueError("neg_per_pos must be >= 1")

    @property
    def alpha(self) -> float:
        """Uniform layer-combination weight."""
        return 1.0 / (self.layers + 1)


class RngStream:
    """Deterministic generators keyed by ``(seed, purpose, *ints)``.

    Two calls with the same key return generators producing the same
    stream; distinct purposes are hashed into independent seed sequences.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, purpose: str, *key: int) -> np.random.Generator:
        digest = hashlib.sha256(purpose.encode()).digest()
        label = [int.from_bytes(digest[k : k + 4], "little") for k in range(0, 16, 4)]
        seq = np.random.SeedSequence([self.seed, *label, *(int(k) for k in key)])
        return np.random.Generator(np.random.PCG64(seq))


def init_embeddings(rng: np.random.Generator, num_nodes: int, d: int) -> np.ndarray:
    """Layer-0 table of ``num_nodes`` rows drawn from Normal(0, 0.1).

    Rows are filled in ascending node order, so asking for a prefix of the
    table reproduces the same leading rows.
    """
    return rng.normal(0.0, INIT_STD, size=(num_nodes, d))


def init_user_table(rngs: RngStream, num_users: int, d: int) -> np.ndarray:
    return init_embeddings(rngs.generator("init", 0), num_users, d)


def init_item_table(rngs: RngStream, num_items: int, d: int) -> np.ndarray:
    return init_embeddings(rngs.generator("init", 1), num_items, d)


class Neighborhood:
    """Weighted neighbour lists as a sparse operator.

    Row ``t`` lists the inputs of target ``t`` as column indices into the
    source table, ascending. The transpose is kept for the backward pass.
    """

    def __init__(self, matrix: sp.csr_matrix):
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        matrix.sort_indices()
        self.matrix = matrix
        transpose = matrix.T.tocsr()
        transpose.sort_indices()
        self.transpose = transpose

    @classmethod
    def from_lists(
        cls, rows: Sequence[Sequence[tuple[int, float]]], num_sources: int
    ) -> "Neighborhood":
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in rows:
            for m, w in sorted(row):
                indices.append(m)
                data.append(w)
            indptr.append(len(indices))
        mat = sp.csr_matrix(
            (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), indptr),
            shape=(len(rows), num_sources),
        )
        return cls(mat)

    @property
    def num_targets(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_sources(self) -> int:
        return self.matrix.shape[1]


def convolve_layer(nbhd: Neighborhood, layer: np.ndarray) -> np.ndarray:
    """Next-layer embeddings of every target row of ``nbhd``."""
    if layer.ndim != 2 or layer.shape[0] != nbhd.num_sources:
        raise IncompleteLayerState(
            f"incomplete layer state: need {nbhd.num_sources} rows, got {layer.shape[0]}"
        )
    return np.asarray(nbhd.matrix @ layer)


def combine_layers(layers: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of all layer tables, summed in layer order then scaled."""
    alpha = 1.0 / len(layers)
    acc = np.array(layers[0], dtype=np.float64, copy=True)
    for layer in layers[1:]:
        acc += layer
    return acc * alpha


def rowwise_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row inner product accumulated left to right along the last axis."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = a[:, 0] * b[:, 0]
    for k in range(1, a.shape[1]):
        out = out + a[:, k] * b[:, k]
    return out


def bpr_loss_and_grad(
    u_f: np.ndarray, pos_f: np.ndarray, neg_f: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPR loss ``-ln sigmoid(<u, pos - neg>)`` and its exact gradients.

    Accepts single vectors or stacked rows. Returns ``(loss, d_user,
    d_pos, d_neg)``; ``loss`` has one entry per row. L2 is not included
    here, it is applied by :func:`sgd_step`.
    """
    single = np.ndim(u_f) == 1
    u_f, pos_f, neg_f = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (u_f, pos_f, neg_f))
    diff = pos_f - neg_f
    s = rowwise_dot(u_f, diff)
    loss = -log_expit(s)
    coef = expit(-s)[:, None]
    d_user = -coef * diff
    d_pos = -coef * u_f
    d_neg = coef * u_f
    if single:
        return loss[0], d_user[0], d_pos[0], d_neg[0]
    return loss, d_user, d_pos, d_neg


def accumulate_rows(rows: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """Scatter-add ``values[k]`` into row ``rows[k]``, summing in k order."""
    rows = np.asarray(rows, dtype=np.int64)
    k = len(rows)
    if k == 0:
        return np.zeros((num_rows, values.shape[1] if values.ndim == 2 else 0))
    scatter = sp.csr_matrix(
        (np.ones(k), (rows, np.arange(k))), shape=(num_rows, k), dtype=np.float64
    )
    scatter.sort_indices()
    return np.asarray(scatter @ values)


def backprop_layer(
    nbhd: Neighborhood,
    grad_next: np.ndarray | None,
    alpha: float,
    final_grad: np.ndarray,
) -> np.ndarray:
    """Gradient w.r.t. the source table of one forward convolution.

    ``grad_next`` is the gradient of the targets at the next layer (``None``
    at the top layer). The direct contribution ``alpha * final_grad`` of the
    layer-combination mean is added after the propagated terms.
    """
    if final_grad.shape[0] != nbhd.num_sources:
        raise ValueError("final gradient does not match the source table")
    if grad_next is None:
        return alpha * final_grad
    if grad_next.shape[0] != nbhd.num_targets:
        raise ValueError("upstream gradient does not match the target rows")
    return np.asarray(nbhd.transpose @ grad_next) + alpha * final_grad


def sgd_step(
    theta: np.ndarray,
    grad: np.ndarray,
    lr: float,
    l2: float,
    rows: np.ndarray | None = None,
) -> np.ndarray:
    """``theta - lr * (grad + l2 * theta)`` on ``rows`` (all rows by default)."""
    out = np.array(theta, copy=True)
    if rows is None:
        out -= lr * (grad + l2 * theta)
    else:
        rows = np.asarray(rows, dtype=np.int64)
        out[rows] = theta[rows] - lr * (grad[rows] + l2 * theta[rows])
    return out


def sample_negatives(
    rngs: RngStream,
    epoch: int,
    user: int,
    positives: Sequence[int],
    pool: np.ndarray,
    neg_per_pos: int,
) -> np.ndarray:
    """Negatives for each positive of ``user``, shape ``(len(positives), neg_per_pos)``.

    ``pool`` is the ascending array of candidate items with the user's own
    items removed. Every principal that knows the user's positives and the
    pool draws the same samples.
    """
    if len(pool) == 0:
        return np.empty((len(positives), 0), dtype=np.int64)
    rng = rngs.generator("neg", epoch, user)
    picks = rng.integers(0, len(pool), size=(len(positives), neg_per_pos))
    return np.asarray(pool, dtype=np.int64)[picks]


def epoch_samples(
    rngs: RngStream,
    epoch: int,
    user: int,
    positives: Sequence[int],
    pool: np.ndarray,
    neg_per_pos: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened ``(positive, negative)`` item pairs of one user for one epoch.

    Pairs are ordered by positive (ascending) and then by draw. Empty when
    the pool is empty.
    """
    negs = sample_negatives(rngs, epoch, user, positives, pool, neg_per_pos)
    if negs.shape[1] == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    pos = np.repeat(np.asarray(positives, dtype=np.int64), negs.shape[1])
    return pos, negs.reshape(-1)


def top_n(user_vec: np.ndarray, items: np.ndarray, item_vecs: np.ndarray, n: int) -> list[int]:
    """Best ``n`` of ``items`` by inner product; ties go to the lower item id."""
    items = np.asarray(items, dtype=np.int64)
    if n <= 0 or len(items) == 0:
        return []
    scores = rowwise_dot(np.broadcast_to(user_vec, item_vecs.shape), item_vecs)
    order = np.lexsort((items, -scores))
    return [int(i) for i in items[order[:n]]]
