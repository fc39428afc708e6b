"""Comparison strategies: greedy, shortest-path, and co-travel motif.

All three build under the same range/degree/bandwidth caps as the
hierarchical scheme, so measured differences reflect strategy rather than
feasibility.  All are deterministic for fixed inputs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

from .mobility import NetworkSnapshot
from .netgraph import (
    CandidateLinks,
    CommPairSet,
    LinkStrategy,
    NetworkParams,
    StrategyBuilder,
    v2v_edge,
)


class BaselineKind(str, Enum):
    GREEDY = "greedy"
    SHORTEST_PATH = "shortest_path"
    MOTIF = "motif"


def greedy_build(
    snapshot: NetworkSnapshot, candidates: CandidateLinks, net: NetworkParams
) -> LinkStrategy:
    """Locally optimal construction: shortest links first, caps enforced,
    no connectivity awareness.

    Sort key is ascending distance, ties broken by adaptability descending
    (V2I links count as perfectly adaptable) and then edge id.
    """
    ranked = [(c.distance, -c.score, 0, c.edge, "v2v") for c in candidates.v2v]
    ranked += [(c.distance, -1.0, 1, c.edge, "v2i") for c in candidates.v2i]
    ranked.sort()
    builder = StrategyBuilder(snapshot, net)
    for _, _, _, edge, kind in ranked:
        if kind == "v2v":
            builder.add_v2v(edge)
        else:
            builder.add_v2i(edge)
    return builder.finalize()


def shortest_path_build(
    snapshot: NetworkSnapshot,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    net: NetworkParams,
) -> LinkStrategy:
    """Activate the union of hop-shortest routes for the key pairs.

    Each route is planned by Dijkstra over the full candidate graph (hop
    count primary, total distance breaks ties, node ids settle the rest)
    with no awareness of degree or slot budgets; caps bind only at
    activation, where edges that no longer fit are skipped.  Pairs are
    processed in sorted order and already-activated edges cost nothing,
    so overlapping routes pile onto the same hub nodes until their caps
    run out.
    """
    builder = StrategyBuilder(snapshot, net)
    vehicles = {v.id for v in snapshot.vehicles}
    adj = _full_graph(snapshot, candidates)
    by_src: dict[str, list[str]] = {}
    for src, dst in pairs.endpoints():
        by_src.setdefault(src, []).append(dst)
    for src in sorted(by_src):
        parents = _dijkstra_tree(adj, src)
        for dst in sorted(by_src[src]):
            if dst not in parents:
                continue
            route = [dst]
            while route[-1] != src:
                route.append(parents[route[-1]])
            route.reverse()
            for u, v in zip(route, route[1:]):
                if builder.has_edge(u, v):
                    continue
                if u in vehicles and v in vehicles:
                    builder.add_v2v(v2v_edge(u, v))
                else:
                    vid, rid = (u, v) if u in vehicles else (v, u)
                    builder.add_v2i((vid, rid))
    return builder.finalize()


def _full_graph(snapshot, candidates) -> dict[str, list[tuple[str, float]]]:
    adj: dict[str, list[tuple[str, float]]] = {v.id: [] for v in snapshot.vehicles}
    for r in snapshot.rsus:
        adj[r.id] = []
    for c in candidates.v2v:
        adj[c.edge[0]].append((c.edge[1], c.distance))
        adj[c.edge[1]].append((c.edge[0], c.distance))
    for c in candidates.v2i:
        adj[c.edge[0]].append((c.edge[1], c.distance))
        adj[c.edge[1]].append((c.edge[0], c.distance))
    for lst in adj.values():
        lst.sort()
    return adj


def _dijkstra_tree(adj, src) -> dict[str, str]:
    """(hops, distance)-lexicographic shortest-path tree, as a parent map."""
    import heapq

    best: dict[str, tuple[int, float]] = {src: (0, 0.0)}
    parent: dict[str, str] = {src: src}
    heap = [(0, 0.0, src)]
    while heap:
        hops, dist, node = heapq.heappop(heap)
        if (hops, dist) > best[node]:
            continue
        for nxt, d in adj[node]:
            cand = (hops + 1, dist + d)
            if cand < best.get(nxt, (math.inf, math.inf)):
                best[nxt] = cand
                parent[nxt] = node
                heapq.heappush(heap, (cand[0], cand[1], nxt))
    return parent


@dataclass
class MotifTracker:
    """Rolling co-travel counts: pairs repeatedly in range with near-equal
    headings accumulate evidence of a stable movement pattern."""

    window: int = 50
    heading_tol: float = math.pi / 6.0

    def __post_init__(self) -> None:
        self._history: deque = deque(maxlen=self.window)

    def observe(self, snapshot: NetworkSnapshot, candidates: CandidateLinks) -> None:
        vehicles = snapshot.vehicle_by_id()
        co_travel = set()
        for c in candidates.v2v:
            a, b = c.edge
            diff = abs(vehicles[a].heading - vehicles[b].heading) % (2.0 * math.pi)
            if diff > math.pi:
                diff = 2.0 * math.pi - diff
            if diff < self.heading_tol:
                co_travel.add(c.edge)
        self._history.append(co_travel)

    def counts(self) -> dict[tuple[str, str], int]:
        out: dict[tuple[str, str], int] = {}
        for step_pairs in self._history:
            for edge in step_pairs:
                out[edge] = out.get(edge, 0) + 1
        return out


def motif_build(
    tracker: MotifTracker,
    snapshot: NetworkSnapshot,
    candidates: CandidateLinks,
    net: NetworkParams,
) -> LinkStrategy:
    """Pattern-first construction from the co-travel history.

    V2V candidates are ranked by co-travel count (descending), cold-start
    pairs fall back to greedy distance order; V2I links (no motion pattern
    to mine) follow in distance order.  Caps enforced throughout.
    """
    counts = tracker.counts()
    ranked = sorted(
        candidates.v2v, key=lambda c: (-counts.get(c.edge, 0), c.distance, c.edge)
    )
    builder = StrategyBuilder(snapshot, net)
    for c in ranked:
        builder.add_v2v(c.edge)
    for c in sorted(candidates.v2i, key=lambda c: (c.distance, c.edge)):
        builder.add_v2i(c.edge)
    return builder.finalize()
