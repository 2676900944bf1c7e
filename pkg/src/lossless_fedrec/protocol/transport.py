"""Round-barrier message transport and the transcript log.

Senders post envelopes during a round; :meth:`Transport.barrier` closes the
round and hands every recipient its mail sorted by ``(sender, seq)``. The
order in which clients happened to post (for example from worker threads)
therefore never shows in what anyone receives.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
from collections import Counter, defaultdict
from typing import TextIO

from .messages import Envelope, decode_frame, encode_frame, render_envelope


class ProtocolAbort(RuntimeError):
    """A phase cannot continue, e.g. a client's expected messages did not arrive."""


class Transcript:
    """Line-oriented log of every delivered message.

    Rounds are written one line per message while they fit in the remaining
    ``detail_lines`` budget; later rounds get a single summary line with
    per-type counts (``None`` means no limit). Envelopes are also kept in
    memory when ``keep`` is set, for audits.
    """

    def __init__(self, sink: TextIO | None = None, detail_lines: int | None = None, keep: bool = False):
        self.sink = sink
        self.detail_lines = detail_lines
        self.keep = keep
        self.kept: list[tuple[str, Envelope]] = []
        self.lines: list[str] = []
        self.written = 0
        self.phase = "setup"
        self.epoch: int | None = None

    def _write(self, line: str) -> None:
        self.written += 1
        if self.sink is None:
            self.lines.append(line)
        else:
            self.sink.write(line + "\n")

    def record(self, envelopes: list[Envelope]) -> None:
        label = self.phase if self.epoch is None else f"e{self.epoch}/{self.phase}"
        if self.keep:
            self.kept.extend((label, env) for env in envelopes)
        if not envelopes:
            return
        if self.detail_lines is None or self.written + len(envelopes) <= self.detail_lines:
            for env in envelopes:
                self._write(f"{label} {render_envelope(env)}")
        else:
            counts = Counter(type(env.body).__name__ for env in envelopes)
            summary = " ".join(f"{name}={n}" for name, n in sorted(counts.items()))
            self._write(f"{label} {envelopes[0].round} summary {summary}")


class Transport:
    """In-process delivery with per-round barriers."""

    name = "inprocess"

    def __init__(self, transcript: Transcript | None = None):
        self.round = 0
        self.transcript = transcript
        self.counts: Counter[str] = Counter()
        self._outbox: list[Envelope] = []
        self._seq: Counter[int] = Counter()

    def post(self, sender: int, recipient: int, body) -> None:
        seq = self._seq[sender]
        self._seq[sender] = seq + 1
        self._outbox.append(Envelope(self.round, sender, seq, recipient, body))

    def post_many(self, sender: int, recipients, body) -> None:
        """Same body to several recipients, in the given order."""
        seq = self._seq[sender]
        rnd = self.round
        self._outbox.extend(
            Envelope(rnd, sender, seq + k, r, body) for k, r in enumerate(recipients)
        )
        self._seq[sender] = seq + len(recipients)

    def post_batch(self, sender: int, messages) -> None:
        """Post ``(recipient, body)`` pairs in order."""
        seq = self._seq[sender]
        rnd = self.round
        make = Envelope._make
        start = len(self._outbox)
        self._outbox.extend(make((rnd, sender, seq + k, r, b)) for k, (r, b) in enumerate(messages))
        self._seq[sender] = seq + len(self._outbox) - start

    def _carry(self, envelopes: list[Envelope]) -> list[Envelope]:
        return envelopes

    def barrier(self) -> dict[int, list[Envelope]]:
        """Close the round; return each recipient's mail in (sender, seq) order."""
        batch = self._outbox
        self._outbox = []
        self._seq.clear()
        batch.sort()
        batch = self._carry(batch)
        if self.transcript is not None:
            self.transcript.record(batch)
        mail: dict[int, list[Envelope]] = defaultdict(list)
        for env in batch:
            mail[env.recipient].append(env)
        self.counts.update(type(env.body).__name__ for env in batch)
        self.round += 1
        return mail

    def close(self) -> None:
        pass


class SocketTransport(Transport):
    """Pushes every envelope through binary frames over a local socket pair."""

    name = "socket"

    def __init__(self, transcript: Transcript | None = None):
        super().__init__(transcript)
        self._tx, self._rx = socket.socketpair()
        self._frames: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self.bytes_sent = 0

    def _read_loop(self) -> None:
        stream = self._rx.makefile("rb")
        while True:
            head = stream.read(4)
            if len(head) < 4:
                self._frames.put(None)
                return
            (length,) = struct.unpack(">I", head)
            self._frames.put(head + stream.read(length))

    def _carry(self, envelopes: list[Envelope]) -> list[Envelope]:
        out = []
        for env in envelopes:
            frame = encode_frame(env)
            self.bytes_sent += len(frame)
            self._tx.sendall(frame)
            received = self._frames.get()
            if received is None:
                raise ProtocolAbort("transport closed")
            out.append(decode_frame(received))
        return out

    def close(self) -> None:
        self._tx.close()
        self._reader.join(timeout=5)
        self._rx.close()


def make_transport(kind: str, transcript: Transcript | None = None) -> Transport:
    if kind == "inprocess":
        return Transport(transcript)
    if kind == "socket":
        return SocketTransport(transcript)
    raise ValueError(f"unknown transport {kind!r}")
