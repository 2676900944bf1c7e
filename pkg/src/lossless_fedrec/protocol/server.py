"""The honest-but-curious server: routing, tag matching and aggregation.

The server never holds the group key. Everything it learns about items
comes as opaque tags; it sees embeddings and gradients only as ciphertexts,
masked ring elements, or the aggregated item gradients it is asked to
broadcast.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from ..engine import RngStream
from ..sharing import decode_limbs, ring_add
from .messages import (
    SERVER,
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
from .transport import ProtocolAbort, Transport


def _only(mail: list[Envelope], kind: type) -> list[Envelope]:
    bad = [env for env in mail if not isinstance(env.body, kind)]
    if bad:
        raise ProtocolAbort(
            f"round desync: expected {kind.__name__}, got {type(bad[0].body).__name__}"
        )
    return mail


class Server:
    def __init__(self, roster, seed: int):
        self.roster = tuple(sorted(roster))
        self.rngs = RngStream(seed)
        self.public_keys: dict[int, bytes] = {}
        self.chooser: int | None = None
        self.user_tags: dict[int, tuple[bytes, ...]] = {}
        self.tag_users: dict[bytes, tuple[int, ...]] = {}
        self.neighbors: dict[int, tuple[int, ...]] = {}
        self._neighbor_sets: dict[int, frozenset[int]] = {}
        self._holders: dict[bytes, frozenset[int]] = {}
        self.routes: dict[int, tuple[int, int]] = {}  # route -> (requester, owner)
        self.representatives: dict[bytes, int] = {}

    # -- initialize --------------------------------------------------------

    def collect_public_keys(self, mail: list[Envelope], transport: Transport) -> None:
        for env in _only(mail, PubKeyUpload):
            self.public_keys[env.sender] = env.body.public
        missing = [u for u in self.roster if u not in self.public_keys]
        if missing:
            raise ProtocolAbort(f"incomplete enrollment: no public key from {missing[:5]}")
        rng = self.rngs.generator("choose", 0)
        self.chooser = self.roster[int(rng.integers(len(self.roster)))]
        keys = tuple((u, self.public_keys[u]) for u in self.roster)
        transport.post(SERVER, self.chooser, PubKeyBundle(keys))

    def relay_shared_keys(self, mail: list[Envelope], transport: Transport) -> None:
        targets = set()
        for env in _only(mail, SharedKeyCipher):
            if env.sender != self.chooser:
                raise ProtocolAbort(f"shared key from unexpected client {env.sender}")
            targets.add(env.body.target)
            transport.post(SERVER, env.body.target, env.body)
        expected = set(self.roster) - {self.chooser}
        if targets != expected:
            raise ProtocolAbort("incomplete enrollment: shared key not sent to every client")

    # -- expand ------------------------------------------------------------

    def match_tags(self, mail: list[Envelope], transport: Transport) -> None:
        by_tag: dict[bytes, list[int]] = defaultdict(list)
        for env in _only(mail, TagUpload):
            tags = env.body.tags
            if len(set(tags)) != len(tags) or not tags:
                raise ProtocolAbort(f"malformed upload from client {env.sender}")
            self.user_tags[env.sender] = tuple(sorted(tags))
            for tag in tags:
                by_tag[tag].append(env.sender)
        missing = [u for u in self.roster if u not in self.user_tags]
        if missing:
            raise ProtocolAbort(f"round desync: no tags from {missing[:5]}")
        self.tag_users = {tag: tuple(sorted(users)) for tag, users in sorted(by_tag.items())}
        self._holders = {tag: frozenset(users) for tag, users in self.tag_users.items()}
        live = tuple(self.tag_users)
        for u in self.roster:
            edges: dict[int, list[bytes]] = defaultdict(list)
            for tag in self.user_tags[u]:
                for v in self.tag_users[tag]:
                    if v != u:
                        edges[v].append(tag)
            neighbors = tuple(sorted(edges))
            self.neighbors[u] = neighbors
            self._neighbor_sets[u] = frozenset(neighbors)
            info = ExpansionInfo(
                neighbors=neighbors,
                exclusive=tuple(t for t in self.user_tags[u] if len(self.tag_users[t]) == 1),
                neighbor_edges=tuple((v, tuple(edges[v])) for v in neighbors),
                user_degrees=tuple((v, len(self.user_tags[v])) for v in sorted((u, *neighbors))),
                item_degrees=tuple((t, len(self.tag_users[t])) for t in self.user_tags[u]),
                live_tags=live,
            )
            transport.post(SERVER, u, info)

    # -- forward / backward relays -----------------------------------------

    def fan_out_embeddings(self, mail: list[Envelope], layer: int, transport: Transport) -> None:
        seen = set()
        for env in _only(mail, EmbeddingSync):
            body = env.body
            if body.origin != env.sender or body.layer != layer or env.sender in seen:
                raise ProtocolAbort(f"round desync: bad embedding upload from {env.sender}")
            seen.add(env.sender)
            transport.post_many(SERVER, self.neighbors[env.sender], body)

    def relay_gradients(self, mail: list[Envelope], layer: int, transport: Transport) -> None:
        out = []
        for env in _only(mail, GradSync):
            body = env.body
            if body.origin != env.sender or body.layer != layer:
                raise ProtocolAbort(f"round desync: bad gradient from {env.sender}")
            if body.target not in self._neighbor_sets[env.sender]:
                raise ProtocolAbort(f"gradient addressed to non-neighbour {body.target}")
            out.append((body.target, body))
        transport.post_batch(SERVER, out)

    # -- negative items ----------------------------------------------------

    def owner_of(self, tag: bytes) -> int:
        """Designated replica of an item: its lowest-id interactor."""
        return self.tag_users[tag][0]

    def route_negative_requests(self, mail: list[Envelope], transport: Transport) -> None:
        self.routes = {}
        outgoing: list[tuple[int, NegEmbedRequest]] = []
        for env in _only(mail, NegEmbedRequest):
            groups: dict[int, list[bytes]] = defaultdict(list)
            for tag in env.body.tags:
                if tag not in self.tag_users:
                    raise ProtocolAbort(f"request for unknown item tag from {env.sender}")
                groups[self.owner_of(tag)].append(tag)
            for owner in sorted(groups):
                route = len(self.routes)
                self.routes[route] = (env.sender, owner)
                outgoing.append((owner, NegEmbedRequest(route, tuple(groups[owner]))))
        for owner, body in outgoing:
            transport.post(SERVER, owner, body)

    def relay_negative_replies(self, mail: list[Envelope], transport: Transport) -> None:
        for env in _only(mail, NegEmbedReply):
            requester, owner = self.routes[env.body.route]
            if env.sender != owner:
                raise ProtocolAbort(f"reply on route {env.body.route} from wrong client")
            transport.post(SERVER, requester, env.body)

    def route_negative_gradients(self, mail: list[Envelope], transport: Transport) -> None:
        for env in _only(mail, NegGradRoute):
            requester, owner = self.routes[env.body.route]
            if env.sender != requester:
                raise ProtocolAbort(f"gradient on route {env.body.route} from wrong client")
            transport.post(SERVER, owner, env.body)

    # -- aggregation -------------------------------------------------------

    def relay_shares(self, mail: list[Envelope], transport: Transport) -> None:
        for env in _only(mail, ShareTransfer):
            body = env.body
            owners = self._holders.get(body.tag, frozenset())
            if body.origin != env.sender or env.sender not in owners or body.target not in owners:
                raise ProtocolAbort("share recipient not a neighbor")
            transport.post(SERVER, body.target, body)

    def aggregate(self, mail: list[Envelope], transport: Transport) -> dict[bytes, np.ndarray]:
        """Sum masked uploads per tag in sender order and broadcast the result."""
        sums: dict[bytes, np.ndarray] = {}
        counts: dict[bytes, int] = defaultdict(int)
        for env in _only(mail, MaskedGradUpload):
            tag = env.body.tag
            if env.sender not in self._holders.get(tag, frozenset()):
                raise ProtocolAbort(f"masked upload for foreign item from {env.sender}")
            counts[tag] += 1
            sums[tag] = env.body.masked if tag not in sums else ring_add(sums[tag], env.body.masked)
        result = {}
        if sums:
            tags = sorted(sums)
            for tag in tags:
                if counts[tag] != len(self.tag_users[tag]):
                    raise ProtocolAbort("round desync: missing masked upload")
            stacked = np.stack([sums[t] for t in tags])
            decoded = decode_limbs(stacked)
            for tag, grad in zip(tags, decoded):
                result[tag] = grad
                transport.post_many(SERVER, self.tag_users[tag], AggregatedGrad(tag, grad))
        return result

    # -- predict -----------------------------------------------------------

    def assign_representatives(self, transport: Transport) -> None:
        rng = self.rngs.generator("choose", 1)
        self.representatives = {}
        assigned: dict[int, list[bytes]] = defaultdict(list)
        for tag, users in self.tag_users.items():
            rep = users[int(rng.integers(len(users)))]
            self.representatives[tag] = rep
            assigned[rep].append(tag)
        for u in sorted(assigned):
            transport.post(SERVER, u, UploadAssignment(tuple(assigned[u])))

    def distribute_item_embeddings(self, mail: list[Envelope], transport: Transport) -> None:
        uploads: dict[bytes, bytes] = {}
        for env in _only(mail, ItemEmbedUpload):
            if self.representatives.get(env.body.tag) != env.sender:
                raise ProtocolAbort(f"unassigned item upload from {env.sender}")
            uploads[env.body.tag] = env.body.ciphertext
        if set(uploads) != set(self.tag_users):
            raise ProtocolAbort("round desync: missing item embedding upload")
        ordered = sorted(uploads.items())
        for u in self.roster:
            own = set(self.user_tags[u])
            entries = tuple((t, ct) for t, ct in ordered if t not in own)
            transport.post(SERVER, u, NegItemEmbeds(entries))
