"""Phase driver: server, clients and transport under round barriers.

Every phase alternates client rounds and server rounds. Client work inside
a round may run on a thread pool; outgoing messages are still posted in
ascending client order, and the transport sorts deliveries, so transcripts
and results do not depend on the thread count.
"""

from __future__ import annotations

import gc
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ..crypto import CryptoContext, make_crypto
from ..engine import RngStream, TrainConfig, combine_layers, init_item_table
from ..graph import InteractionGraph
from ..reference import ParamSnapshot
from .client import Client
from .messages import SERVER
from .transport import ProtocolAbort, Transcript, Transport, make_transport
from .server import Server


@contextmanager
def _gc_paused():
    """Suspend cyclic GC while a phase churns through millions of messages.

    Message objects hold no reference cycles, so reference counting frees
    them anyway; the collector would only rescan the long-lived state.
    """
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


@dataclass
class FederatedResult:
    snapshots: list[ParamSnapshot] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    recommendations: list[list[int]] | None = None


class FederatedRun:
    """A simulated deployment: one client per user plus the server.

    The full graph is only used to hand each client its own interactions
    and for snapshot bookkeeping; no protocol step reads it.
    """

    def __init__(
        self,
        graph: InteractionGraph,
        config: TrainConfig,
        crypto: str = "real",
        transport: str | Transport = "inprocess",
        threads: int = 1,
        transcript: Transcript | None = None,
    ):
        self.graph = graph
        self.config = config
        self.provider = make_crypto(crypto)
        if isinstance(transport, Transport):
            self.transport = transport
            if transcript is not None:
                self.transport.transcript = transcript
        else:
            self.transport = make_transport(transport, transcript)
        self.transcript = self.transport.transcript
        self.server = Server(range(graph.num_users), config.seed)
        self.clients = [
            Client(u, graph.adjacency[u], graph.num_items, config, CryptoContext(self.provider, f"client{u}", u))
            for u in range(graph.num_users)
        ]
        self.threads = threads
        self._pool = ThreadPoolExecutor(threads) if threads > 1 else None
        self.epoch: int | None = None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- plumbing ----------------------------------------------------------

    def _phase(self, name: str) -> None:
        if self.transcript is not None:
            self.transcript.phase = name
            self.transcript.epoch = self.epoch

    def _each(self, fn, clients=None) -> list:
        clients = self.clients if clients is None else clients
        if self._pool is None:
            return [fn(c) for c in clients]
        return list(self._pool.map(fn, clients))

    def _post_from_clients(self, outgoing: list, clients=None) -> None:
        clients = self.clients if clients is None else clients
        for client, messages in zip(clients, outgoing):
            self.transport.post_batch(client.user, ((SERVER, body) for _, body in messages))

    def _client_round(self, fn, clients=None) -> dict:
        self._post_from_clients(self._each(fn, clients), clients)
        return self.transport.barrier()

    # -- phases ------------------------------------------------------------

    def run_initialize(self) -> None:
        self._phase("initialize")
        mail = self._client_round(lambda c: c.enroll())
        self.server.collect_public_keys(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        chooser = self.clients[self.server.chooser]
        (bundle,) = mail[chooser.user]
        mail = self._client_round(lambda c: c.distribute_shared_key(bundle), [chooser])
        self.server.relay_shared_keys(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        others = [c for c in self.clients if c is not chooser]
        self._each(lambda c: c.receive_shared_key(mail[c.user][0]), others)
        self._each(lambda c: c.init_params())

    def run_expand(self) -> None:
        self._phase("expand")
        mail = self._client_round(lambda c: c.upload_tags())
        self.server.match_tags(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        self._each(lambda c: c.receive_expansion(mail[c.user][0]))

    def run_forward(self) -> None:
        self._phase("forward")
        self._each(lambda c: c.start_forward())
        for layer in range(self.config.layers):
            mail = self._client_round(lambda c: c.upload_embedding(layer))
            self.server.fan_out_embeddings(mail.get(SERVER, []), layer, self.transport)
            mail = self.transport.barrier()
            self._each(lambda c: c.convolve(layer, mail.get(c.user, [])))
        self._each(lambda c: c.finish_forward())

    def run_local_loss(self, epoch: int) -> float:
        self._phase("loss")
        mail = self._client_round(lambda c: c.request_negatives(epoch))
        self.server.route_negative_requests(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        mail = self._client_round(lambda c: c.serve_negatives(mail.get(c.user, [])))
        self.server.relay_negative_replies(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        mail = self._client_round(lambda c: c.local_loss(mail.get(c.user, [])))
        self.server.route_negative_gradients(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        self._each(lambda c: c.absorb_negative_gradients(mail.get(c.user, [])))
        # simulation bookkeeping only; clients never send their loss anywhere
        return float(sum(c.loss for c in self.clients))

    def run_backward(self) -> None:
        self._phase("backward")
        self._each(lambda c: c.start_backward())
        for layer in reversed(range(self.config.layers)):
            mail = self._client_round(lambda c: c.send_gradients(layer))
            self.server.relay_gradients(mail.get(SERVER, []), layer, self.transport)
            mail = self.transport.barrier()
            self._each(lambda c: c.receive_gradients(layer, mail.get(c.user, [])))

    def run_aggregate(self, epoch: int) -> dict[bytes, np.ndarray]:
        self._phase("aggregate")
        mail = self._client_round(lambda c: c.share_gradients(epoch))
        self.server.relay_shares(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        mail = self._client_round(lambda c: c.upload_masked(mail.get(c.user, [])))
        totals = self.server.aggregate(mail.get(SERVER, []), self.transport)
        mail = self.transport.barrier()
        self._each(lambda c: c.receive_aggregate(mail.get(c.user, [])))
        return totals

    def run_update(self) -> None:
        self._each(lambda c: c.apply_update())

    def setup(self) -> None:
        with _gc_paused():
            self.run_initialize()
            self.run_expand()

    def train(self, on_epoch=None) -> FederatedResult:
        """Full training loop; ``setup`` must have run."""
        result = FederatedResult()
        result.snapshots.append(self.snapshot(0))
        for epoch in range(self.config.epochs):
            self.epoch = epoch
            with _gc_paused():
                self.run_forward()
                loss = self.run_local_loss(epoch)
                self.run_backward()
                self.run_aggregate(epoch)
                self.run_update()
            result.losses.append(loss)
            result.snapshots.append(self.snapshot(epoch + 1))
            if on_epoch is not None:
                on_epoch(epoch, loss)
        self.epoch = None
        return result

    def run_predict(self, n: int) -> list[list[int]]:
        """Top-``n`` recommendations computed on every client."""
        self.epoch = None
        with _gc_paused():
            self.run_forward()
            self._phase("predict")
            self.server.assign_representatives(self.transport)
            mail = self.transport.barrier()
            mail = self._client_round(lambda c: c.upload_assigned(mail.get(c.user, [])))
            self.server.distribute_item_embeddings(mail.get(SERVER, []), self.transport)
            mail = self.transport.barrier()
            return self._each(lambda c: c.recommend(mail[c.user][0], n))

    # -- inspection --------------------------------------------------------

    def snapshot(self, epoch: int) -> ParamSnapshot:
        """Assemble global layer-0 tables from the clients (simulation view).

        Item rows come from the lowest-id holder; items nobody holds keep
        their shared-seed initialization.
        """
        d = self.config.dim
        users = np.stack([c.user_param for c in self.clients]) if self.clients else np.zeros((0, d))
        items = init_item_table(RngStream(self.config.seed), self.graph.num_items, d)
        for i, holders in enumerate(self.graph.item_users):
            if holders:
                c = self.clients[holders[0]]
                items[i] = c.item_params[c.item_index[i]]
        return ParamSnapshot(epoch, users, items)

    def final_tables(self) -> ParamSnapshot:
        """Combined (all-layer) embeddings from the last forward pass.

        Items nobody holds have only their layer-0 term, as in the
        full-graph computation.
        """
        base = self.snapshot(self.config.epochs)
        zeros = np.zeros_like(base.items)
        items = combine_layers([base.items] + [zeros] * self.config.layers)
        users = np.stack([c.user_final for c in self.clients]) if self.clients else base.users
        for i, holders in enumerate(self.graph.item_users):
            if holders:
                c = self.clients[holders[0]]
                items[i] = c.item_final[c.item_index[i]]
        return ParamSnapshot(base.epoch, users, items)

    def replica_spread(self) -> float:
        """Largest difference between two replicas of the same item."""
        worst = 0.0
        for i, holders in enumerate(self.graph.item_users):
            rows = [self.clients[u].item_params[self.clients[u].item_index[i]] for u in holders]
            for row in rows[1:]:
                worst = max(worst, float(np.max(np.abs(row - rows[0]))))
        return worst


def run_federated(graph, config, crypto="real", transport="inprocess", threads=1, transcript=None, topn=None):
    """Set up, train and optionally predict; returns the result and the run."""
    run = FederatedRun(graph, config, crypto, transport, threads, transcript)
    try:
        run.setup()
        result = run.train()
        if topn is not None:
            result.recommendations = run.run_predict(topn)
    finally:
        run.close()
    return result, run


__all__ = ["FederatedRun", "FederatedResult", "ProtocolAbort", "run_federated"]
