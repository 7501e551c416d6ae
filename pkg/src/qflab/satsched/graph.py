"""Time-windowed visibility graph and participation roles."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional

PRIMARY, SECONDARY, IDLE = "primary", "secondary", "non-participant"

TRACE_FIELDS = ("node_a", "node_b", "open_seconds", "close_seconds", "link_rate_bytes_per_sec")


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Window:
    a: str
    b: str
    open: float
    close: float
    rate: float  # bytes per second

    def __post_init__(self):
        if self.a == self.b:
            raise TraceError(f"window joins {self.a!r} to itself")
        if not self.open < self.close:
            raise TraceError(f"window {self.a}-{self.b} must open before it closes")
        if self.rate <= 0:
            raise TraceError(f"window {self.a}-{self.b} needs a positive link rate")

    def contains(self, t: float) -> bool:
        return self.open <= t < self.close


def _pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def _merge(windows: list[Window]) -> list[Window]:
    # overlapping or touching windows of one pair collapse into one; the
    # merged window keeps the slower rate
    out: list[Window] = []
    for w in sorted(windows, key=lambda w: (w.open, w.close)):
        if out and w.open <= out[-1].close:
            last = out[-1]
            out[-1] = Window(last.a, last.b, last.open, max(last.close, w.close), min(last.rate, w.rate))
        else:
            out.append(w)
    return out


class VisibilityGraph:
    """Line-of-sight windows among satellites and ground stations.

    Edges are undirected.  A window ``[open, close)`` is usable at ``t`` when
    ``open <= t < close``.
    """

    def __init__(self, windows: Iterable[Window], ground_stations: Iterable[str],
                 satellites: Optional[Iterable[str]] = None):
        grouped: dict[tuple[str, str], list[Window]] = {}
        for w in windows:
            a, b = _pair(w.a, w.b)
            grouped.setdefault((a, b), []).append(Window(a, b, w.open, w.close, w.rate))
        self.windows = {pair: _merge(ws) for pair, ws in sorted(grouped.items())}
        self.ground = frozenset(ground_stations)
        nodes = {n for pair in self.windows for n in pair} | set(self.ground)
        if satellites is not None:
            nodes |= set(satellites)
        self.nodes = sorted(nodes)
        self.satellites = [n for n in self.nodes if n not in self.ground]
        if not self.ground:
            raise TraceError("visibility graph needs at least one ground station")
        for (a, b) in self.windows:
            if a in self.ground and b in self.ground:
                raise TraceError(f"ground-to-ground window {a}-{b} is not modelled")
        all_w = [w for ws in self.windows.values() for w in ws]
        self.span = (min((w.open for w in all_w), default=0.0), max((w.close for w in all_w), default=0.0))

    @classmethod
    def from_trace(cls, path, ground_stations: Optional[Iterable[str]] = None,
                   satellites: Optional[Iterable[str]] = None) -> "VisibilityGraph":
        """Read a CSV trace with columns ``TRACE_FIELDS``.

        Without an explicit ``ground_stations`` list, node ids starting with
        ``G`` are ground stations.
        """
        windows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TRACE_FIELDS) - set(reader.fieldnames or ())
            if missing:
                raise TraceError(f"{path}: missing columns {sorted(missing)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    windows.append(Window(row["node_a"].strip(), row["node_b"].strip(),
                                          float(row["open_seconds"]), float(row["close_seconds"]),
                                          float(row["link_rate_bytes_per_sec"])))
                except (TypeError, ValueError) as exc:
                    raise TraceError(f"{path}:{lineno}: {exc}") from exc
        if ground_stations is None:
            names = {n for w in windows for n in (w.a, w.b)}
            ground_stations = sorted(n for n in names if n.startswith("G"))
        return cls(windows, ground_stations, satellites)

    def to_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_FIELDS)
            for ws in self.windows.values():
                for w in ws:
                    writer.writerow([w.a, w.b, repr(w.open), repr(w.close), repr(w.rate)])

    def is_ground(self, node: str) -> bool:
        return node in self.ground

    def windows_between(self, a: str, b: str) -> list[Window]:
        return self.windows.get(_pair(a, b), [])

    def window_at(self, a: str, b: str, t: float) -> Optional[Window]:
        for w in self.windows_between(a, b):
            if w.contains(t):
                return w
        return None

    def neighbors(self, node: str, t: float) -> list[str]:
        out = []
        for (a, b), ws in self.windows.items():
            if node in (a, b) and any(w.contains(t) for w in ws):
                out.append(b if a == node else a)
        return sorted(out)

    def check_time(self, t: float) -> None:
        lo, hi = self.span
        if not lo <= t < hi:
            raise ValueError(f"t={t} lies outside the trace span [{lo}, {hi})")


@dataclass
class RoleAssignment:
    t: float
    roles: dict  # satellite -> PRIMARY / SECONDARY / IDLE
    uplinks: dict = field(default_factory=dict)  # primary -> ground station used
    routes: dict = field(default_factory=dict)  # secondary -> [sat, ..., primary]

    def with_role(self, role: str) -> list[str]:
        return sorted(n for n, r in self.roles.items() if r == role)

    @property
    def participants(self) -> list[str]:
        return sorted(n for n, r in self.roles.items() if r != IDLE)


def relay_route(graph: VisibilityGraph, source: str, primaries: set, t: float) -> Optional[list[str]]:
    """Fewest-hop satellite path from ``source`` to any primary at time ``t``.

    Neighbours are expanded in ascending id order, so among equally short
    paths the lexicographically smallest node sequence wins.
    """
    parent = {source: None}
    queue = deque([source])
    while queue:
        node = queue.popleft()
        if node in primaries and node != source:
            path = [node]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        for nb in graph.neighbors(node, t):
            if nb in parent or graph.is_ground(nb):
                continue
            parent[nb] = node
            queue.append(nb)
    return None


def roles_at(graph: VisibilityGraph, t: float) -> RoleAssignment:
    graph.check_time(t)
    roles, uplinks, routes = {}, {}, {}
    for sat in graph.satellites:
        grounds = [n for n in graph.neighbors(sat, t) if graph.is_ground(n)]
        if grounds:
            roles[sat] = PRIMARY
            uplinks[sat] = grounds[0]
    primaries = set(uplinks)
    for sat in graph.satellites:
        if sat in primaries:
            continue
        route = relay_route(graph, sat, primaries, t)
        if route is None:
            roles[sat] = IDLE
        else:
            roles[sat] = SECONDARY
            routes[sat] = route
    return RoleAssignment(t, dict(sorted(roles.items())), uplinks, routes)
