"""Window-aware transfer planning and satellite federated rounds.

Timing model
------------
A transfer over a link takes ``payload_bytes / rate + overhead`` seconds
and succeeds only if it starts inside an open window on that link and ends
no later than the window's close.  Links have no contention: concurrent
transfers over one link do not slow each other down.  All ground stations
form one logical ground segment that aggregates whatever arrives.

Modes
-----
sequential
    One transfer at a time on a single clock.  Participants are served in
    id order; each payload goes hop by hop along its relay route to a
    primary and then to that primary's ground station.  A hop that cannot
    complete in its current window drops the payload.
simultaneous
    At the round start every secondary sends toward its nearest primary
    concurrently.  Each primary averages what reached it with its own
    update (sample-weighted) and sends one uplink once the last inbound
    transfer has landed.
asynchronous
    Every payload moves independently; each hop waits for the earliest
    window on its link in which the whole transfer fits.  The ground
    segment stamps the aggregation of a payload at the close of the window
    that delivered it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..fedcore import (
    Client,
    Evaluator,
    GlobalModel,
    ModelUpdate,
    RoundRecord,
    fedavg,
    train_clients,
)
from .graph import IDLE, PRIMARY, RoleAssignment, VisibilityGraph, Window, roles_at
from .security import (
    QBER_ABORT_THRESHOLD,
    AuthenticationError,
    EavesdropDetected,
    Envelope,
    KeyMaterial,
    link_name,
    make_nonce,
    open_envelope,
    qkd_establish,
    seal,
)

logger = logging.getLogger(__name__)

MODES = ("sequential", "simultaneous", "asynchronous")
DEFAULT_SECURITY_OVERHEAD = 0.05
GROUND_SEGMENT = "ground"


@dataclass
class TransferEvent:
    payload: str
    src: str
    dst: str
    start: float
    duration: float = 0.0
    kind: str = "transfer"  # transfer | local_average | aggregate
    hop: int = 0
    members: tuple = ()
    window_close: Optional[float] = None
    failed: bool = False

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class TransferSchedule:
    mode: str
    t0: float
    roles: RoleAssignment
    payload_size: int
    overhead: float
    events: list = field(default_factory=list)

    def transfers(self) -> list[TransferEvent]:
        return [e for e in self.events if e.kind == "transfer"]


def full_route(roles: RoleAssignment, node: str) -> list[str]:
    """Satellite relay path followed by the primary's ground station."""
    path = roles.routes.get(node, [node])
    return path + [roles.uplinks[path[-1]]]


def _find_window(graph: VisibilityGraph, a: str, b: str, t: float, size: int, overhead: float,
                 wait: bool) -> tuple[float, Optional[Window], float, bool]:
    """(start, window, duration, fits) for a transfer that becomes ready at ``t``."""
    if not wait:
        w = graph.window_at(a, b, t)
        if w is None:
            return t, None, 0.0, False
        dur = size / w.rate + overhead
        return t, w, dur, t + dur <= w.close
    for w in graph.windows_between(a, b):
        if w.close <= t:
            continue
        start = max(t, w.open)
        dur = size / w.rate + overhead
        if start + dur <= w.close:
            return start, w, dur, True
    return t, None, 0.0, False


def plan_transfers(graph: VisibilityGraph, mode: str, t0: float, payload_size: int,
                   overhead: float = DEFAULT_SECURITY_OVERHEAD,
                   roles: Optional[RoleAssignment] = None,
                   senders: Optional[set] = None) -> TransferSchedule:
    """Build the event list for one round starting at ``t0``.

    ``senders`` restricts which participants own an update (default: all);
    the others still relay and, as primaries, still average.
    """
    if mode not in MODES:
        raise ValueError(f"unknown transfer mode {mode!r}; expected one of {MODES}")
    if payload_size < 0:
        raise ValueError("payload_size must be non-negative")
    roles = roles_at(graph, t0) if roles is None else roles
    events: list[TransferEvent] = []

    senders = set(roles.participants) if senders is None else set(senders)

    def attempt(payload, a, b, t, hop, wait, members=()):
        start, w, dur, ok = _find_window(graph, a, b, t, payload_size, overhead, wait)
        ev = TransferEvent(payload, a, b, start, dur, "transfer", hop, members,
                           None if w is None else w.close, not ok)
        events.append(ev)
        return ev

    def send_along(node, route, t, wait):
        ev = None
        for hop, (a, b) in enumerate(zip(route, route[1:])):
            ev = attempt(node, a, b, t, hop, wait, (node,))
            if ev.failed:
                return ev, False
            t = ev.end
        return ev, True

    if mode == "sequential":
        clock = t0
        for node in roles.participants:
            if node not in senders:
                continue
            route = full_route(roles, node)
            for hop, (a, b) in enumerate(zip(route, route[1:])):
                ev = attempt(node, a, b, clock, hop, False, (node,))
                if ev.failed:
                    break
                clock = ev.end
        events.append(TransferEvent("*", GROUND_SEGMENT, GROUND_SEGMENT, clock, kind="aggregate"))

    elif mode == "simultaneous":
        inbound: dict[str, list] = {p: [] for p in roles.with_role(PRIMARY)}
        for node in roles.participants:
            if node in inbound or node not in senders:
                continue
            route = roles.routes[node]
            last, ok = send_along(node, route, t0, wait=False)
            if ok:
                inbound[route[-1]].append((node, last.end))
        end = t0
        for p in sorted(inbound):
            ready = max([t0] + [t for _, t in inbound[p]])
            members = ((p,) if p in senders else ()) + tuple(n for n, _ in inbound[p])
            if not members:
                continue
            events.append(TransferEvent(f"avg:{p}", p, p, ready, kind="local_average", members=members))
            ev = attempt(f"avg:{p}", p, roles.uplinks[p], ready, 0, False, members)
            if not ev.failed:
                end = max(end, ev.end)
        events.append(TransferEvent("*", GROUND_SEGMENT, GROUND_SEGMENT, end, kind="aggregate"))

    else:
        for node in roles.participants:
            if node not in senders:
                continue
            last, ok = send_along(node, full_route(roles, node), t0, wait=True)
            if ok:
                events.append(TransferEvent(node, GROUND_SEGMENT, GROUND_SEGMENT, last.window_close,
                                            kind="aggregate", members=(node,)))

    order = sorted(range(len(events)), key=lambda i: (events[i].start, i))
    return TransferSchedule(mode, t0, roles, payload_size, overhead, [events[i] for i in order])


# ---------------------------------------------------------------------------
# secure links

class SecureLinks:
    """Per-link QKD keys plus envelope sealing for every hop.

    ``flip_rates`` maps a link name (see :func:`link_name`) to the
    adversary's bit-flip rate during key agreement.  Links listed in
    ``tamper`` have one ciphertext byte flipped in transit.
    """

    def __init__(self, seed: int, flip_rates: Optional[dict] = None, tamper: Sequence[str] = (),
                 threshold: float = QBER_ABORT_THRESHOLD):
        self.seed = seed
        self.flip_rates = dict(flip_rates or {})
        self.tamper = set(tamper)
        self.threshold = threshold
        self.keys: dict[str, object] = {}
        self.log: list[tuple] = []

    def key_for(self, a: str, b: str, t: float) -> KeyMaterial:
        name = link_name(a, b)
        if name not in self.keys:
            try:
                self.keys[name] = qkd_establish(name, self.flip_rates.get(name, 0.0), self.seed, t,
                                                threshold=self.threshold)
            except EavesdropDetected as exc:
                self.keys[name] = exc
        key = self.keys[name]
        if isinstance(key, EavesdropDetected):
            raise key
        return key

    def transmit(self, a: str, b: str, t: float, payload: bytes, tag) -> bytes:
        key = self.key_for(a, b, t)
        wire = seal(key, payload, make_nonce(self.seed, tag, a, b, t)).to_bytes()
        if link_name(a, b) in self.tamper:
            pos = len(wire) // 2
            wire = wire[:pos] + bytes([wire[pos] ^ 0x01]) + wire[pos + 1:]
        return open_envelope(key, Envelope.from_bytes(wire))


# ---------------------------------------------------------------------------
# execution

@dataclass
class ExecutionResult:
    arrived: dict  # payload id -> (params, n_samples, members) delivered to the ground segment
    link_seconds: dict  # (src, dst) -> seconds of completed transfers
    total_seconds: float
    completed: list
    dropped: list  # (event, reason)
    aggregation_times: dict  # payload id or "*" -> time

    @property
    def arrived_nodes(self) -> list[str]:
        return sorted(m for _, _, members in self.arrived.values() for m in members)


def _serialize(params: np.ndarray) -> bytes:
    return np.asarray(params, dtype="<f8").tobytes()


def _deserialize(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<f8").copy()


def execute_schedule(schedule: TransferSchedule, graph: VisibilityGraph, updates: dict,
                     secure: Optional[SecureLinks] = None) -> ExecutionResult:
    """Replay a schedule event by event with the real payload sizes.

    ``updates`` maps node -> ModelUpdate.  Durations are recomputed from each
    update's byte size; any transfer that does not fit its window, fails key
    agreement or fails authentication drops its payload.
    """
    holder: dict[str, str] = {}
    content: dict[str, tuple] = {}
    alive: dict[str, bool] = {}
    link_seconds: dict[tuple, float] = {}
    completed, dropped = [], []
    agg_times: dict = {}

    for node, u in updates.items():
        holder[node] = node
        content[node] = (u.params, u.n_samples, (node,))
        alive[node] = True

    for ev in schedule.events:
        if ev.kind == "local_average":
            members = [m for m in ev.members if alive.get(m) and holder.get(m) == ev.src]
            if not members:
                alive[ev.payload] = False
                dropped.append((ev, "empty"))
                continue
            group = [ModelUpdate(i, content[m][0], content[m][1]) for i, m in enumerate(members)]
            content[ev.payload] = (fedavg(group), sum(u.n_samples for u in group), tuple(members))
            holder[ev.payload] = ev.src
            alive[ev.payload] = True
            continue
        if ev.kind == "aggregate":
            agg_times[ev.payload] = ev.start
            continue
        if not alive.get(ev.payload) or holder.get(ev.payload) != ev.src:
            dropped.append((ev, "upstream"))
            continue
        params = content[ev.payload][0]
        size = len(params) * 8
        w = graph.window_at(ev.src, ev.dst, ev.start)
        duration = None if w is None else size / w.rate + schedule.overhead
        if w is None or ev.start + duration > w.close:
            alive[ev.payload] = False
            dropped.append((ev, "window"))
            continue
        if secure is not None:
            try:
                received = secure.transmit(ev.src, ev.dst, ev.start, _serialize(params),
                                           (ev.payload, ev.hop))
            except EavesdropDetected as exc:
                logger.warning("%s: %s", ev.payload, exc)
                alive[ev.payload] = False
                dropped.append((ev, "qkd-abort"))
                continue
            except AuthenticationError as exc:
                logger.warning("%s on %s->%s discarded: %s", ev.payload, ev.src, ev.dst, exc)
                alive[ev.payload] = False
                dropped.append((ev, "auth"))
                continue
            p, n, m = content[ev.payload]
            content[ev.payload] = (_deserialize(received), n, m)
        holder[ev.payload] = ev.dst
        key = (ev.src, ev.dst)
        link_seconds[key] = link_seconds.get(key, 0.0) + duration
        completed.append(TransferEvent(ev.payload, ev.src, ev.dst, ev.start, duration, ev.kind,
                                       ev.hop, ev.members, w.close, False))

    arrived = {pid: content[pid] for pid in content
               if alive.get(pid) and graph.is_ground(holder[pid])}
    total = sum(e.duration for e in completed)
    return ExecutionResult(arrived, link_seconds, total, completed, dropped, agg_times)


def ground_aggregate(result: ExecutionResult) -> Optional[np.ndarray]:
    """Sample-weighted mean over everything that reached the ground segment."""
    if not result.arrived:
        return None
    ups = [ModelUpdate(i, p, n) for i, (p, n, _) in enumerate(result.arrived.values())]
    return fedavg(ups)


# ---------------------------------------------------------------------------
# rounds

def run_sat_round(clients: Sequence[Client], placement: dict, global_model: GlobalModel,
                  graph: VisibilityGraph, mode: str, t0: float, seed: int, round_index: int,
                  local_epochs: int = 1, overhead: float = DEFAULT_SECURITY_OVERHEAD,
                  secure: Optional[SecureLinks] = None,
                  evaluate: Optional[Evaluator] = None):
    """One access-aware round: roles at ``t0``, local training, transfers, ground aggregation.

    ``placement`` maps client id -> satellite node.  Returns
    ``(global_model, record, schedule, result)``.
    """
    sats = list(placement.values())
    if len(set(sats)) != len(sats):
        raise ValueError("each satellite hosts at most one client")
    unknown = [s for s in sats if s not in graph.satellites]
    if unknown:
        raise ValueError(f"clients placed on unknown satellites {unknown}")
    roles = roles_at(graph, t0)
    active = [c for c in clients if roles.roles[placement[c.client_id]] != IDLE]
    node_of = {c.client_id: placement[c.client_id] for c in clients}
    client_of = {v: k for k, v in node_of.items()}

    metrics, down = train_clients(active, global_model, local_epochs, seed, round_index)
    updates = {node_of[c.client_id]: c.dense_update(metrics[c.client_id]) for c in active}
    size = global_model.params.size * 8
    schedule = plan_transfers(graph, mode, t0, size, overhead, roles, senders=set(updates))
    result = execute_schedule(schedule, graph, updates, secure)

    merged = ground_aggregate(result)
    if merged is None:
        new = global_model
    else:
        new = GlobalModel(merged, global_model.version + 1)
    arrived = sorted(client_of[n] for n in result.arrived_nodes if n in client_of)
    record = RoundRecord(
        round=round_index,
        participants=[c.client_id for c in active],
        client_metrics=metrics,
        global_metrics=evaluate(new.params) if evaluate else {},
        bytes_up=size * len(result.completed),
        bytes_down=down,
        comm_seconds=result.total_seconds,
        arrived=arrived,
        aggregated=merged is not None,
    )
    return new, record, schedule, result
