"""Connectivity graph and one-tick message delivery between robots in range."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass(frozen=True)
class ConnectivityGraph:
    n: int
    edges: frozenset  # of (a, b) with a < b
    computed_at: float
    neighbors: tuple  # neighbors[i] -> sorted tuple of ids

    def connected(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def components(self) -> list[set[int]]:
        seen, out = set(), []
        for start in range(self.n):
            if start in seen:
                continue
            comp, stack = set(), [start]
            while stack:
                v = stack.pop()
                if v in comp:
                    continue
                comp.add(v)
                stack.extend(self.neighbors[v])
            seen |= comp
            out.append(comp)
        return out


def graph_from_edges(n: int, edges, computed_at: float = 0.0) -> ConnectivityGraph:
    """Build a graph from explicit pairs (used by scripted scenarios)."""
    norm = frozenset((min(a, b), max(a, b)) for a, b in edges if a != b)
    nbrs = [[] for _ in range(n)]
    for a, b in norm:
        nbrs[a].append(b)
        nbrs[b].append(a)
    return ConnectivityGraph(n, norm, computed_at, tuple(tuple(sorted(v)) for v in nbrs))


def complete_graph(n: int, computed_at: float = 0.0) -> ConnectivityGraph:
    return graph_from_edges(n, ((a, b) for a in range(n) for b in range(a + 1, n)), computed_at)


def adjacency(positions: np.ndarray, comm_range: float) -> np.ndarray:
    """Boolean (n, n) in-range matrix with a False diagonal."""
    pos = np.asarray(positions, dtype=np.float64)
    delta = pos[:, None, :] - pos[None, :, :]
    close = np.hypot(delta[..., 0], delta[..., 1]) <= comm_range
    np.fill_diagonal(close, False)
    return close


def graph_from_adjacency(close: np.ndarray, computed_at: float = 0.0) -> ConnectivityGraph:
    n = len(close)
    a, b = np.nonzero(np.triu(close, k=1))
    rows, cols = np.nonzero(close)
    split = np.searchsorted(rows, np.arange(1, n))
    nbrs = tuple(tuple(part.tolist()) for part in np.split(cols, split))
    return ConnectivityGraph(n, frozenset(zip(a.tolist(), b.tolist())), computed_at, nbrs)


def build_graph(positions: np.ndarray, comm_range: float, computed_at: float = 0.0) -> ConnectivityGraph:
    """Undirected graph with an edge for every pair at distance <= comm_range."""
    return graph_from_adjacency(adjacency(positions, comm_range), computed_at)


@dataclass
class Envelope:
    sender: int
    payload: Any
    enqueued_at: float = 0.0


@dataclass
class DeliveryLog:
    """Delivery audit trail: one row per (envelope, receiver)."""

    rows: list = field(default_factory=list)

    def add(self, tick: int, sender: int, receiver: int, kind: str, nbytes: int):
        self.rows.append((tick, sender, receiver, kind, nbytes))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tick", "sender", "receiver", "message_type", "bytes"])
            w.writerows(self.rows)

    def to_jsonl(self, path):
        keys = ("tick", "sender", "receiver", "message_type", "bytes")
        with open(path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(dict(zip(keys, row))) + "\n")


def exchange(
    graph: ConnectivityGraph,
    outboxes: dict[int, list[Envelope]],
    log: DeliveryLog | None = None,
    tick: int = 0,
) -> dict[int, list[Envelope]]:
    """Deliver every envelope to every current neighbour of its sender.

    Inboxes are ordered by sender id, then by enqueue order. Envelopes from
    isolated senders are dropped.
    """
    inboxes: dict[int, list[Envelope]] = {i: [] for i in range(graph.n)}
    for sender in sorted(outboxes):
        queue = outboxes[sender]
        if not queue:
            continue
        nbrs = graph.neighbors[sender]
        for env in queue:
            for r in nbrs:
                inboxes[r].append(env)
                if log is not None:
                    p = env.payload
                    log.add(tick, sender, r, getattr(p, "kind", type(p).__name__), getattr(p, "nbytes", 0))
    return inboxes


def audit_deliveries(rows, graphs_by_tick) -> list:
    """Return the delivery rows whose (sender, receiver) was not an edge."""
    bad = []
    for row in rows:
        tick, s, r = row[0], row[1], row[2]
        if not graphs_by_tick[tick].connected(s, r):
            bad.append(row)
    return bad
