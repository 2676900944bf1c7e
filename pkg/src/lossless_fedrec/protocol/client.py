"""One user's device: its own interactions, a replica of its items, and the
local slice of every forward and backward pass.

Local node order is always ascending global id, so the sparse kernels here
add up exactly the same terms in exactly the same order as the full-graph
trainer does for the same rows.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from ..crypto import (
    CryptoContext,
    deserialize_matrix,
    serialize_matrix,
    serialize_vec,
)
from ..engine import (
    Neighborhood,
    RngStream,
    TrainConfig,
    accumulate_rows,
    backprop_layer,
    bpr_loss_and_grad,
    combine_layers,
    convolve_layer,
    epoch_samples,
    init_embeddings,
    sgd_step,
    top_n,
)
from ..graph import ExpandedSubgraph, GraphError, sym_norm_weights
from ..sharing import N_LIMBS, ring_add, split_limbs
from .messages import (
    AggregatedGrad,
    EmbeddingSync,
    Envelope,
    ExpansionInfo,
    GradSync,
    ItemEmbedUpload,
    MaskedGradUpload,
    NegEmbedReply,
    NegEmbedRequest,
    NegGradRoute,
    NegItemEmbeds,
    PubKeyBundle,
    PubKeyUpload,
    SharedKeyCipher,
    ShareTransfer,
    TagUpload,
    UploadAssignment,
)
from .transport import ProtocolAbort

log = logging.getLogger(__name__)

Outgoing = list  # [(recipient, body), ...]


def _decode_rows(payloads: list[bytes], dim: int) -> np.ndarray:
    """Stack serialized vectors of length ``dim`` into a matrix."""
    width = 4 + 8 * dim
    blob = b"".join(payloads)
    if len(blob) != width * len(payloads) or any(len(p) != width for p in payloads):
        raise ValueError("malformed vector: unexpected length")
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(len(payloads), width)
    counts = raw[:, :4].copy().view("<u4").reshape(-1)
    if np.any(counts != dim):
        raise ValueError("malformed vector: wrong dimension")
    return raw[:, 4:].copy().view("<f8").astype(np.float64)


def _encode_rows(rows: np.ndarray) -> list[bytes]:
    """Per-row payloads in the same layout as ``serialize_vec``."""
    rows = np.ascontiguousarray(rows, dtype="<f8")
    n, dim = rows.shape
    raw = np.empty((n, 4 + 8 * dim), dtype=np.uint8)
    raw[:, :4] = np.frombuffer(np.uint32(dim).astype("<u4").tobytes(), dtype=np.uint8)
    raw[:, 4:] = rows.view(np.uint8).reshape(n, 8 * dim)
    return [row.tobytes() for row in raw]


class Client:
    def __init__(self, user: int, items, num_items: int, config: TrainConfig, ctx: CryptoContext):
        self.user = int(user)
        self.items = tuple(sorted(int(i) for i in items))
        if not self.items:
            raise GraphError(f"user {user} has no interactions")
        self.num_items = num_items
        self.config = config
        self.ctx = ctx
        self.rngs = RngStream(config.seed)
        self.subgraph: ExpandedSubgraph | None = None
        self.grad_parts = 0  # pieces summed into the last user-gradient layer

    @property
    def principal(self) -> str:
        return self.ctx.principal

    # -- initialize --------------------------------------------------------

    def enroll(self) -> Outgoing:
        self.ctx.keypair = self.ctx.provider.gen_keypair(self.rngs.generator("keypair", self.user))
        return [(None, PubKeyUpload(self.ctx.keypair.public))]

    def distribute_shared_key(self, env: Envelope) -> Outgoing:
        """Chosen client: create the group key and wrap it for everyone else."""
        if not isinstance(env.body, PubKeyBundle):
            raise ProtocolAbort("round desync: expected public keys")
        provider = self.ctx.provider
        self.ctx.shared_key = provider.new_shared_key(self.rngs.generator("group-key", self.user))
        kem = self.rngs.generator("kem", self.user)
        out = []
        for v, public in env.body.keys:
            if v != self.user:
                ct = provider.pk_encrypt(public, self.ctx.shared_key, kem)
                out.append((None, SharedKeyCipher(v, ct)))
        return out

    def receive_shared_key(self, env: Envelope) -> None:
        if not isinstance(env.body, SharedKeyCipher) or env.body.target != self.user:
            raise ProtocolAbort("round desync: expected the shared key")
        self.ctx.shared_key = self.ctx.provider.pk_decrypt(
            self.ctx.keypair, env.body.ciphertext, self.principal
        )

    def init_params(self) -> None:
        """Own rows of the shared-seed tables (prefix draws, ascending id)."""
        d = self.config.dim
        users = init_embeddings(self.rngs.generator("init", 0), self.user + 1, d)
        items = init_embeddings(self.rngs.generator("init", 1), self.items[-1] + 1, d)
        self.user_param = users[self.user].copy()
        self.item_params = items[list(self.items)].copy()

    # -- expand ------------------------------------------------------------

    def upload_tags(self) -> Outgoing:
        self.tag_of = dict(zip(self.items, self.ctx.tags(self.items)))
        return [(None, TagUpload(tuple(sorted(self.tag_of.values()))))]

    def receive_expansion(self, env: Envelope) -> None:
        info = env.body
        if not isinstance(info, ExpansionInfo):
            raise ProtocolAbort("round desync: expected expansion info")
        item_of = {t: i for i, t in self.tag_of.items()}
        try:
            edges = {v: tuple(sorted(item_of[t] for t in tags)) for v, tags in info.neighbor_edges}
            sub = ExpandedSubgraph(
                owner=self.user,
                own_items=self.items,
                exclusive_items=tuple(sorted(item_of[t] for t in info.exclusive)),
                neighbor_users=tuple(info.neighbors),
                neighbor_edges=edges,
                user_degrees=dict(info.user_degrees),
                item_degrees={item_of[t]: deg for t, deg in info.item_degrees},
            )
        except KeyError as exc:
            raise ProtocolAbort("expansion refers to an item this client does not hold") from exc
        sub.validate()
        self.subgraph = sub
        self.item_of_tag = item_of
        # every client can tag the public catalog; the server only says which tags are live
        self.catalog_tag = self.ctx.tags(range(self.num_items))
        catalog_item = {t: i for i, t in enumerate(self.catalog_tag)}
        try:
            live = sorted(catalog_item[t] for t in info.live_tags)
        except KeyError as exc:
            raise ProtocolAbort("live tag outside the item catalog") from exc
        self.pool = np.setdiff1d(np.array(live, dtype=np.int64), self.items, assume_unique=True)
        self.catalog_item = catalog_item
        self._build_operators()

    def _build_operators(self) -> None:
        sub = self.subgraph
        local = sub.local_users()
        uidx = {v: k for k, v in enumerate(local)}
        kidx = {i: k for k, i in enumerate(self.items)}
        self.me = uidx[self.user]
        self.neighbor_rows = np.array([uidx[v] for v in sub.neighbor_users], dtype=np.int64)
        self.item_index = kidx

        rows = [kidx[i] for i in self.items]
        cols = [self.me] * len(self.items)
        users = [self.user] * len(self.items)
        for v, common in sub.neighbor_edges.items():
            for i in common:
                rows.append(kidx[i])
                cols.append(uidx[v])
                users.append(v)
        items = [self.items[r] for r in rows]
        w = sym_norm_weights(
            np.array([sub.user_degrees[v] for v in users]),
            np.array([sub.item_degrees[i] for i in items]),
        )
        n_items, n_users = len(self.items), len(local)
        # items <- local users, and the owner <- items
        self.to_items = Neighborhood(sp.csr_matrix((w, (rows, cols)), shape=(n_items, n_users)))
        own = w[: len(self.items)]
        self.to_user = Neighborhood(
            sp.csr_matrix((own, ([0] * n_items, list(range(n_items)))), shape=(1, n_items))
        )

    # -- forward -----------------------------------------------------------

    def start_forward(self) -> None:
        self.user_layers = [self.user_param]
        self.item_layers = [self.item_params]

    def upload_embedding(self, layer: int) -> Outgoing:
        ct = self.ctx.encrypt(serialize_vec(self.user_layers[layer]))
        return [(None, EmbeddingSync(self.user, layer, ct))]

    def convolve(self, layer: int, mail: list[Envelope]) -> None:
        sub = self.subgraph
        origins = tuple(env.body.origin for env in mail if isinstance(env.body, EmbeddingSync))
        if len(origins) != len(mail) or origins != sub.neighbor_users:
            raise ProtocolAbort(f"round desync: client {self.user} layer {layer} embeddings")
        if any(env.body.layer != layer for env in mail):
            raise ProtocolAbort(f"round desync: client {self.user} got a stale layer")
        received = _decode_rows(self.ctx.decrypt_many([env.body.ciphertext for env in mail]), self.config.dim)
        users = np.empty((len(sub.neighbor_users) + 1, self.config.dim))
        users[self.me] = self.user_layers[layer]
        users[self.neighbor_rows] = received
        self.item_layers.append(convolve_layer(self.to_items, users))
        self.user_layers.append(convolve_layer(self.to_user, self.item_layers[layer])[0])

    def finish_forward(self) -> None:
        self.user_final = combine_layers(self.user_layers)
        self.item_final = combine_layers(self.item_layers)

    # -- local loss ----------------------------------------------------------

    def request_negatives(self, epoch: int) -> Outgoing:
        pos, neg = epoch_samples(
            self.rngs, epoch, self.user, self.items, self.pool, self.config.neg_per_pos
        )
        if len(pos) == 0:
            log.warning("user %d interacted with every item; skipped", self.user)
        self.samples = (pos, neg)
        self.neg_items = np.unique(neg)
        tags = tuple(self.catalog_tag[j] for j in self.neg_items)
        return [(None, NegEmbedRequest(0, tags))]

    def serve_negatives(self, mail: list[Envelope]) -> Outgoing:
        out = []
        for env in mail:
            body = env.body
            if not isinstance(body, NegEmbedRequest):
                raise ProtocolAbort("round desync: expected embedding requests")
            try:
                ks = [self.item_index[self.item_of_tag[t]] for t in body.tags]
            except KeyError as exc:
                raise ProtocolAbort("embedding request for an item this client does not hold") from exc
            ct = self.ctx.encrypt(serialize_matrix(self.item_final[ks]))
            out.append((None, NegEmbedReply(body.route, body.tags, ct)))
        return out

    def local_loss(self, mail: list[Envelope]) -> Outgoing:
        """BPR over own samples; returns gradients for the negatives' owners."""
        d = self.config.dim
        pos, neg = self.samples
        where = {int(j): k for k, j in enumerate(self.neg_items)}
        neg_final = np.empty((len(self.neg_items), d))
        replies = []
        for env in mail:
            body = env.body
            if not isinstance(body, NegEmbedReply):
                raise ProtocolAbort("round desync: expected embedding replies")
            ks = [where[self.catalog_item[t]] for t in body.tags]
            neg_final[ks] = deserialize_matrix(self.ctx.decrypt(body.ciphertext)).reshape(len(ks), d)
            replies.append((body.route, body.tags, ks))
        if sum(len(ks) for _, _, ks in replies) != len(self.neg_items):
            raise ProtocolAbort(f"round desync: client {self.user} missing negative embeddings")

        self.grad_user_final = np.zeros(d)
        self.grad_items_final = np.zeros((len(self.items), d))
        self.loss = 0.0
        if len(pos) == 0:
            return [
                (None, NegGradRoute(route, tags, self.ctx.encrypt(serialize_matrix(np.zeros((len(ks), d))))))
                for route, tags, ks in replies
            ]
        pos_k = np.array([self.item_index[i] for i in pos], dtype=np.int64)
        neg_k = np.array([where[int(j)] for j in neg], dtype=np.int64)
        u_f = np.broadcast_to(self.user_final, (len(pos), d))
        loss, d_user, d_pos, d_neg = bpr_loss_and_grad(u_f, self.item_final[pos_k], neg_final[neg_k])
        self.loss = float(np.sum(loss))
        self.grad_user_final = accumulate_rows(np.zeros(len(pos), dtype=np.int64), d_user, 1)[0]
        self.grad_items_final = accumulate_rows(pos_k, d_pos, len(self.items))
        neg_grad = accumulate_rows(neg_k, d_neg, len(self.neg_items))
        return [
            (None, NegGradRoute(route, tags, self.ctx.encrypt(serialize_matrix(neg_grad[ks]))))
            for route, tags, ks in replies
        ]

    def absorb_negative_gradients(self, mail: list[Envelope]) -> None:
        """Add routed negative-item gradients after the client's own terms."""
        for env in mail:
            body = env.body
            if not isinstance(body, NegGradRoute):
                raise ProtocolAbort("round desync: expected routed gradients")
            ks = [self.item_index[self.item_of_tag[t]] for t in body.tags]
            rows = deserialize_matrix(self.ctx.decrypt(body.ciphertext)).reshape(len(ks), -1)
            self.grad_items_final[ks] += rows

    # -- backward ----------------------------------------------------------

    def start_backward(self) -> None:
        alpha = self.config.alpha
        self.grad_user = alpha * self.grad_user_final
        self.grad_items = backprop_layer(self.to_user, None, alpha, self.grad_items_final)
        self.grad_parts = 1

    def send_gradients(self, layer: int) -> Outgoing:
        """Propagate this replica's item adjoints to every local user.

        The owner's row stays here; each neighbour's row is that neighbour's
        share of its own user gradient at ``layer``.
        """
        final = np.zeros((len(self.subgraph.neighbor_users) + 1, self.config.dim))
        final[self.me] = self.grad_user_final
        self._pending = backprop_layer(self.to_items, self.grad_items, self.config.alpha, final)
        cts = self.ctx.encrypt_many(_encode_rows(self._pending[self.neighbor_rows]))
        me = self.user
        return [(None, GradSync(me, v, layer, ct)) for v, ct in zip(self.subgraph.neighbor_users, cts)]

    def receive_gradients(self, layer: int, mail: list[Envelope]) -> None:
        origins = tuple(env.body.origin for env in mail if isinstance(env.body, GradSync))
        if len(origins) != len(mail) or origins != self.subgraph.neighbor_users:
            raise ProtocolAbort(f"round desync: client {self.user} layer {layer} gradients")
        if any(env.body.layer != layer or env.body.target != self.user for env in mail):
            raise ProtocolAbort(f"round desync: client {self.user} got a misrouted gradient")
        received = _decode_rows(self.ctx.decrypt_many([env.body.ciphertext for env in mail]), self.config.dim)
        # running sum in sender order, own term first
        parts = np.concatenate([self._pending[self.me][None], received])
        grad = np.add.accumulate(parts, axis=0)[-1]
        self.grad_parts = 1 + len(mail)
        # item replicas at this layer use the user gradient one layer up
        self.grad_items = backprop_layer(
            self.to_user, self.grad_user[None], self.config.alpha, self.grad_items_final
        )
        self.grad_user = grad

    # -- aggregate ---------------------------------------------------------

    def shared_positions(self) -> np.ndarray:
        return np.array([self.item_index[i] for i in self.subgraph.shared_items], dtype=np.int64)

    def share_gradients(self, epoch: int) -> Outgoing:
        sub = self.subgraph
        shared = sub.shared_items
        self.aggregated: dict[int, np.ndarray] = {}
        if not shared:
            self._complement = np.empty((0, self.config.dim, N_LIMBS), dtype=np.uint32)
            return []
        mask, self._complement = split_limbs(
            self.rngs.generator("share", epoch, self.user), self.grad_items[self.shared_positions()]
        )
        out = []
        for k, i in enumerate(shared):
            target = next(v for v in sub.item_neighbors(i) if v != self.user)
            ct = self.ctx.encrypt(mask[k].astype("<u4").tobytes())
            out.append((None, ShareTransfer(self.user, target, self.tag_of[i], ct)))
        return out

    def upload_masked(self, mail: list[Envelope]) -> Outgoing:
        shared = self.subgraph.shared_items
        pos = {i: k for k, i in enumerate(shared)}
        comp = self._complement
        for env in mail:
            body = env.body
            if not isinstance(body, ShareTransfer) or body.target != self.user:
                raise ProtocolAbort("round desync: expected share transfers")
            k = pos.get(self.item_of_tag.get(body.tag, -1))
            if k is None:
                raise ProtocolAbort("share recipient not a neighbor")
            share = np.frombuffer(self.ctx.decrypt(body.ciphertext), dtype="<u4")
            comp[k] = ring_add(comp[k], share.astype(np.uint32).reshape(comp[k].shape))
        return [(None, MaskedGradUpload(self.tag_of[i], comp[k])) for k, i in enumerate(shared)]

    def receive_aggregate(self, mail: list[Envelope]) -> None:
        for env in mail:
            if not isinstance(env.body, AggregatedGrad):
                raise ProtocolAbort("round desync: expected aggregated gradients")
            self.aggregated[self.item_of_tag[env.body.tag]] = env.body.grad
        if set(self.aggregated) != set(self.subgraph.shared_items):
            raise ProtocolAbort(f"round desync: client {self.user} missing aggregates")

    def apply_update(self) -> None:
        """SGD on the own user row and on every held item replica."""
        cfg = self.config
        grads = self.grad_items.copy()
        for i, g in self.aggregated.items():
            grads[self.item_index[i]] = g
        self.user_param = sgd_step(self.user_param[None], self.grad_user[None], cfg.lr, cfg.l2)[0]
        self.item_params = sgd_step(self.item_params, grads, cfg.lr, cfg.l2)

    # -- predict -----------------------------------------------------------

    def upload_assigned(self, mail: list[Envelope]) -> Outgoing:
        out = []
        for env in mail:
            if not isinstance(env.body, UploadAssignment):
                raise ProtocolAbort("round desync: expected an upload assignment")
            for tag in env.body.tags:
                k = self.item_index[self.item_of_tag[tag]]
                ct = self.ctx.encrypt(serialize_vec(self.item_final[k]))
                out.append((None, ItemEmbedUpload(tag, ct)))
        return out

    def recommend(self, env: Envelope, n: int) -> list[int]:
        if not isinstance(env.body, NegItemEmbeds):
            raise ProtocolAbort("round desync: expected item embeddings")
        entries = env.body.entries
        items = np.array([self.catalog_item[t] for t, _ in entries], dtype=np.int64)
        rows = _decode_rows(self.ctx.decrypt_many([ct for _, ct in entries]), self.config.dim)
        order = np.argsort(items)
        items, rows = items[order], rows[order]
        if not np.array_equal(items, self.pool):
            raise ProtocolAbort(f"client {self.user} did not get every candidate item")
        return top_n(self.user_final, items, rows, n)
