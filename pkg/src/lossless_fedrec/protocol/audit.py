"""Privacy checks over a finished run's transcript and server state.

Meant for runs with transparent crypto and ``Transcript(keep=True)``:
transparent tags can be mapped back to item ids by the auditor (never by
the server), which lets the checks speak about actual items.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, fields

import numpy as np

from ..crypto import TAG_BYTES
from ..sharing import N_LIMBS
from .messages import (
    ALLOWED_KINDS,
    KIND_AGGREGATE,
    KIND_CIPHERTEXT,
    KIND_COUNT,
    KIND_ID,
    KIND_MASKED,
    KIND_PUBLIC_KEY,
    KIND_TAG,
    SERVER,
    AggregatedGrad,
    EmbeddingSync,
    GradSync,
    MaskedGradUpload,
    ShareTransfer,
)


@dataclass(frozen=True)
class AuditCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class AuditReport:
    checks: tuple[AuditCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "kind": "audit",
            "passed": self.passed,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }

    def to_text(self) -> str:
        lines = ["kind=audit", f"passed={str(self.passed).lower()}"]
        for c in self.checks:
            lines.append(f"{c.name}={'pass' if c.passed else 'fail'}" + (f" ({c.detail})" if c.detail else ""))
        return "\n".join(lines) + "\n"


def _value_ok(value, kind) -> bool:
    if isinstance(kind, tuple):
        return isinstance(value, tuple) and all(
            isinstance(entry, tuple) and len(entry) == len(kind) and all(_value_ok(v, k) for v, k in zip(entry, kind))
            for entry in value
        )
    if isinstance(value, tuple):
        return all(_value_ok(v, kind) for v in value)
    if kind in (KIND_ID, KIND_COUNT):
        return isinstance(value, (int, np.integer)) and not isinstance(value, bool)
    if kind == KIND_TAG:
        return isinstance(value, bytes) and len(value) == TAG_BYTES
    if kind in (KIND_CIPHERTEXT, KIND_PUBLIC_KEY):
        return isinstance(value, bytes)
    if kind == KIND_MASKED:
        return isinstance(value, np.ndarray) and value.dtype == np.uint32 and value.shape[-1:] == (N_LIMBS,)
    if kind == KIND_AGGREGATE:
        return isinstance(value, np.ndarray) and value.dtype == np.float64
    return False


def _flat_kinds(kind):
    return kind if isinstance(kind, tuple) else (kind,)


def check_field_kinds(envelopes) -> AuditCheck:
    """Every field has a declared, allowed kind and carries a value of that kind."""
    for _, env in envelopes:
        body = env.body
        kinds = getattr(type(body), "FIELD_KINDS", None)
        if kinds is None:
            return AuditCheck("field_kinds", False, f"{type(body).__name__} declares no field kinds")
        for f in fields(body):
            kind = kinds.get(f.name)
            if kind is None or not set(_flat_kinds(kind)) <= ALLOWED_KINDS:
                return AuditCheck("field_kinds", False, f"{type(body).__name__}.{f.name} has no allowed kind")
            if not _value_ok(getattr(body, f.name), kind):
                return AuditCheck("field_kinds", False, f"{type(body).__name__}.{f.name} holds a value not of kind {kind}")
    return AuditCheck("field_kinds", True, f"{len(envelopes)} messages")


def _walk(obj, seen=None):
    """Yield every bytes value reachable from ``obj``'s containers and attributes."""
    seen = set() if seen is None else seen
    if id(obj) in seen:
        return
    seen.add(id(obj))
    if isinstance(obj, (bytes, bytearray)):
        yield bytes(obj)
    elif isinstance(obj, np.ndarray):
        yield obj.tobytes()
    elif isinstance(obj, dict):
        for k, v in obj.items():
            yield from _walk(k, seen)
            yield from _walk(v, seen)
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for v in obj:
            yield from _walk(v, seen)
    elif hasattr(obj, "__dict__") or hasattr(type(obj), "__slots__"):
        if hasattr(obj, "__dict__"):
            yield from _walk(vars(obj), seen)
        for name in getattr(type(obj), "__slots__", ()):
            if hasattr(obj, name):
                yield from _walk(getattr(obj, name), seen)


def check_server_holds_no_key(server, secrets: list[bytes]) -> AuditCheck:
    secrets = [s for s in secrets if s]
    for blob in _walk(server):
        for s in secrets:
            if s in blob:
                return AuditCheck("server_holds_no_key", False, "key material found in server state")
    return AuditCheck("server_holds_no_key", True)


def check_access_log(provider) -> AuditCheck:
    """Only client principals ever decrypted or tagged anything."""
    foreign = sorted({p for (p, _op) in provider.access if not p.startswith("client")})
    if foreign:
        return AuditCheck("access_log", False, f"non-client principals used secrets: {foreign}")
    ops: Counter[str] = Counter()
    for (_p, op), n in provider.access.items():
        ops[op] += n
    return AuditCheck("access_log", True, " ".join(f"{k}={v}" for k, v in sorted(ops.items())))


def check_tags_are_prf_outputs(envelopes, provider) -> AuditCheck:
    """Every tag on the wire is a keyed-PRF output, never a raw id encoding."""
    reveal = getattr(provider, "reveal_tag", None)
    if reveal is None:
        return AuditCheck("tags_are_prf_outputs", True, "skipped: tags not revealable with this provider")
    for _, env in envelopes:
        kinds = type(env.body).FIELD_KINDS
        for f in fields(env.body):
            for tag in _tags_in(getattr(env.body, f.name), kinds[f.name]):
                try:
                    reveal(tag)
                except KeyError:
                    return AuditCheck("tags_are_prf_outputs", False, f"unknown tag {tag.hex()} in {type(env.body).__name__}")
    return AuditCheck("tags_are_prf_outputs", True)


def _tags_in(value, kind):
    if isinstance(kind, tuple):
        for entry in value:
            for v, k in zip(entry, kind):
                yield from _tags_in(v, k)
    elif kind == KIND_TAG:
        yield from (value if isinstance(value, tuple) else (value,))


def check_exclusive_items_stay_local(envelopes, server, provider=None) -> AuditCheck:
    """Aggregation traffic only concerns items with two or more holders."""
    for _, env in envelopes:
        if isinstance(env.body, (ShareTransfer, MaskedGradUpload, AggregatedGrad)):
            holders = server.tag_users.get(env.body.tag, ())
            if len(holders) < 2:
                item = _reveal(provider, env.body.tag)
                return AuditCheck("exclusive_items_local", False, f"{type(env.body).__name__} for exclusive item {item}")
            if isinstance(env.body, AggregatedGrad) and env.recipient not in holders:
                return AuditCheck("exclusive_items_local", False, "aggregate sent to a non-holder")
    return AuditCheck("exclusive_items_local", True)


def _reveal(provider, tag):
    try:
        return provider.reveal_tag(tag)
    except (AttributeError, KeyError):
        return tag.hex()


def check_message_complexity(envelopes, server, layers: int) -> AuditCheck:
    """Per forward pass: ``layers * sum_u |N_u|`` embedding deliveries; per epoch the same for gradients."""
    expected = layers * sum(len(n) for n in server.neighbors.values())
    embeds: dict[str, int] = defaultdict(int)
    grads: dict[str, int] = defaultdict(int)
    for label, env in envelopes:
        if env.sender != SERVER:
            continue
        epoch = label.split("/")[0] if "/" in label else label
        if isinstance(env.body, EmbeddingSync):
            embeds[epoch] += 1
        elif isinstance(env.body, GradSync):
            grads[epoch] += 1
    bad = {k: v for k, v in embeds.items() if v != expected}
    bad.update({f"{k}:grad": v for k, v in grads.items() if v != expected})
    if set(grads) - set(embeds):
        bad["orphan_gradients"] = len(set(grads) - set(embeds))
    if bad:
        return AuditCheck("message_complexity", False, f"expected {expected} per pass, got {bad}")
    return AuditCheck("message_complexity", True, f"{expected} per pass over {len(embeds)} passes")


def audit_run(run) -> AuditReport:
    """All checks for a finished :class:`FederatedRun` whose transcript kept envelopes."""
    transcript = run.transcript
    if transcript is None or not transcript.keep:
        raise ValueError("audit needs a transcript created with keep=True")
    envelopes = transcript.kept
    secrets = []
    for c in run.clients:
        secrets.append(c.ctx.shared_key)
        if c.ctx.keypair is not None:
            secrets.append(c.ctx.keypair.private)
    checks = (
        check_field_kinds(envelopes),
        check_access_log(run.provider),
        check_server_holds_no_key(run.server, secrets),
        check_tags_are_prf_outputs(envelopes, run.provider),
        check_exclusive_items_stay_local(envelopes, run.server, run.provider),
        check_message_complexity(envelopes, run.server, run.config.layers),
    )
    return AuditReport(checks)
