"""Dynamic communication graph over a snapshot.

Candidate link generation with the motion-similarity score, demand matrix,
key communication pairs, strategy overlays with hard constraint checking,
and the graph queries (BFS paths, diameter, connectivity, disjoint paths)
used by the metrics and optimizer layers.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .mobility import NetworkSnapshot, RsuNode, VehicleState

# Below this speed a vehicle counts as parked for the speed-ratio term.
SPEED_FLOOR = 0.1

V2VEdge = tuple[str, str]        # sorted (vehicle_id, vehicle_id)
V2IEdge = tuple[str, str]        # (vehicle_id, rsu_id)


class ConstraintViolation(ValueError):
    """A strategy breaks one of the hard topology constraints.

    ``constraint`` names the violated rule: v2v_range, v2i_range,
    v2v_degree, v2i_degree, bandwidth, or structure.
    """

    def __init__(self, constraint: str, detail: str):
        super().__init__(f"{constraint}: {detail}")
        self.constraint = constraint
        self.detail = detail


@dataclass(frozen=True)
class NetworkParams:
    """Radio ranges, degree caps, and demand-model knobs shared across modules."""

    r_v2v: float = 300.0
    r_v2i: float = 500.0
    delta_v2v: int = 5
    delta_v2i: int = 10
    alpha: float = 0.7
    r_th: float = 0.7
    d0: float = 300.0
    demand_th: float = 0.3

    def __post_init__(self) -> None:
        if self.r_v2v <= 0 or self.r_v2i <= 0:
            raise ValueError("communication ranges must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.d0 <= 0:
            raise ValueError("d0 must be > 0")


def v2v_edge(a: str, b: str) -> V2VEdge:
    """Canonical (sorted) form of an undirected vehicle pair."""
    return (a, b) if a <= b else (b, a)


def link_adaptability(a: VehicleState, b: VehicleState, alpha: float) -> float:
    """Motion-compatibility score in [-(1-alpha), 1].

    Combines the speed ratio min/max with the cosine of the heading
    difference (wrapped to [0, pi]).  Two near-stationary vehicles get a
    full speed-ratio term; a moving/parked pair gets none.
    """
    sa, sb = a.speed, b.speed
    if sa < SPEED_FLOOR and sb < SPEED_FLOOR:
        ratio = 1.0
    elif sa < SPEED_FLOOR or sb < SPEED_FLOOR:
        ratio = 0.0
    else:
        ratio = min(sa, sb) / max(sa, sb)
    diff = abs(a.heading - b.heading) % (2.0 * math.pi)
    if diff > math.pi:
        diff = 2.0 * math.pi - diff
    return alpha * ratio + (1.0 - alpha) * math.cos(diff)


@dataclass(frozen=True)
class V2VCandidate:
    edge: V2VEdge
    distance: float
    score: float
    preferred: bool


@dataclass(frozen=True)
class V2ICandidate:
    edge: V2IEdge
    distance: float


@dataclass(frozen=True)
class CandidateLinks:
    """All range-feasible links for one snapshot, with annotations."""

    v2v: tuple[V2VCandidate, ...]
    v2i: tuple[V2ICandidate, ...]

    def v2v_by_edge(self) -> dict[V2VEdge, V2VCandidate]:
        return {c.edge: c for c in self.v2v}

    def v2i_by_edge(self) -> dict[V2IEdge, V2ICandidate]:
        return {c.edge: c for c in self.v2i}


def _position_arrays(vehicles: Sequence[VehicleState]):
    xs = np.array([v.pos_x for v in vehicles], dtype=float)
    ys = np.array([v.pos_y for v in vehicles], dtype=float)
    return xs, ys


def pairwise_vehicle_distances(vehicles: Sequence[VehicleState]) -> np.ndarray:
    xs, ys = _position_arrays(vehicles)
    return np.hypot(xs[:, None] - xs[None, :], ys[:, None] - ys[None, :])


def candidate_links(snapshot: NetworkSnapshot, params: NetworkParams) -> CandidateLinks:
    """Enumerate every link allowed by the distance thresholds.

    V2V candidates carry the adaptability score and a ``preferred`` flag
    (score >= r_th); V2I candidates carry only the distance.  The flag is
    advice to the optimizers, not a filter.
    """
    vehicles = snapshot.vehicles
    n = len(vehicles)
    v2v: list[V2VCandidate] = []
    if n >= 2:
        dist = pairwise_vehicle_distances(vehicles)
        ii, jj = np.nonzero(np.triu(dist <= params.r_v2v, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            score = link_adaptability(vehicles[i], vehicles[j], params.alpha)
            v2v.append(
                V2VCandidate(
                    edge=v2v_edge(vehicles[i].id, vehicles[j].id),
                    distance=float(dist[i, j]),
                    score=score,
                    preferred=score >= params.r_th,
                )
            )
    v2i: list[V2ICandidate] = []
    for rsu in snapshot.rsus:
        for v in vehicles:
            d = math.hypot(v.pos_x - rsu.pos_x, v.pos_y - rsu.pos_y)
            if d <= params.r_v2i:
                v2i.append(V2ICandidate(edge=(v.id, rsu.id), distance=d))
    v2v.sort(key=lambda c: c.edge)
    v2i.sort(key=lambda c: c.edge)
    return CandidateLinks(v2v=tuple(v2v), v2i=tuple(v2i))


# ---------------------------------------------------------------------------
# Demand matrix and key pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DemandMatrix:
    """Symmetric inter-vehicle demand intensities in [0, 1], zero diagonal."""

    ids: tuple[str, ...]
    values: np.ndarray  # shape (N, N)

    def index_of(self, vehicle_id: str) -> int:
        return self.ids.index(vehicle_id)


def demand_matrix(snapshot: NetworkSnapshot, params: NetworkParams) -> DemandMatrix:
    """Demand falls off exponentially with distance and rises with motion similarity.

    D_ij = exp(-d_ij / d0) * (1 + score_ij) / 2 off-diagonal, 0 on the diagonal.
    """
    vehicles = snapshot.vehicles
    n = len(vehicles)
    if n == 0:
        return DemandMatrix(ids=(), values=np.zeros((0, 0)))
    dist = pairwise_vehicle_distances(vehicles)
    scores = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = link_adaptability(vehicles[i], vehicles[j], params.alpha)
            scores[i, j] = scores[j, i] = s
    values = np.exp(-dist / params.d0) * (1.0 + scores) / 2.0
    np.fill_diagonal(values, 0.0)
    return DemandMatrix(ids=tuple(v.id for v in vehicles), values=values)


@dataclass(frozen=True)
class CommPairSet:
    """Deduplicated unordered vehicle pairs that need multi-hop cooperation."""

    pairs: tuple[tuple[str, str, float], ...]  # (src, dst, demand), src < dst

    def __len__(self) -> int:
        return len(self.pairs)

    def endpoints(self) -> list[tuple[str, str]]:
        return [(s, d) for s, d, _ in self.pairs]


def key_pairs(snapshot: NetworkSnapshot, demand: DemandMatrix, params: NetworkParams) -> CommPairSet:
    """Pairs beyond direct V2V range whose demand clears the threshold."""
    vehicles = snapshot.vehicles
    n = len(vehicles)
    if n < 2:
        return CommPairSet(pairs=())
    dist = pairwise_vehicle_distances(vehicles)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] > params.r_v2v and demand.values[i, j] >= params.demand_th:
                a, b = vehicles[i].id, vehicles[j].id
                s, d = (a, b) if a <= b else (b, a)
                out.append((s, d, float(demand.values[i, j])))
    out.sort()
    return CommPairSet(pairs=tuple(out))


# ---------------------------------------------------------------------------
# Strategy and topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkStrategy:
    """Activation decisions: V2V pairs, V2I pairs, and per-V2I bandwidth (Mbps)."""

    v2v_active: frozenset[V2VEdge] = frozenset()
    v2i_active: frozenset[V2IEdge] = frozenset()
    v2i_bandwidth: Mapping[V2IEdge, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for a, b in self.v2v_active:
            if a == b:
                raise ConstraintViolation("structure", f"self pair ({a}, {b})")
        for edge in self.v2i_bandwidth:
            if edge not in self.v2i_active:
                raise ConstraintViolation(
                    "structure", f"bandwidth allocated to inactive link {edge}"
                )
        for edge, mbps in self.v2i_bandwidth.items():
            if mbps <= 0.0:
                raise ConstraintViolation("structure", f"non-positive bandwidth on {edge}")

    @staticmethod
    def empty() -> "LinkStrategy":
        return LinkStrategy()

    @property
    def n_links(self) -> int:
        return len(self.v2v_active) + len(self.v2i_active)

    def canonical_edges(self) -> tuple[tuple, tuple]:
        return (tuple(sorted(self.v2v_active)), tuple(sorted(self.v2i_active)))


def equal_share_bandwidth(
    v2i_active: Iterable[V2IEdge], rsus: Sequence[RsuNode]
) -> dict[V2IEdge, float]:
    """Split each RSU's capacity equally across its chosen vehicles."""
    capacity = {r.id: r.bandwidth_capacity for r in rsus}
    per_rsu: dict[str, list[V2IEdge]] = {}
    for edge in v2i_active:
        per_rsu.setdefault(edge[1], []).append(edge)
    alloc: dict[V2IEdge, float] = {}
    for rsu_id, edges in per_rsu.items():
        share = capacity[rsu_id] / len(edges)
        for edge in edges:
            alloc[edge] = share
    return alloc


class Topology:
    """A snapshot plus a validated strategy; rejects constraint breakers.

    Construction checks every hard rule: link ranges, per-vehicle V2V
    degree, per-RSU V2I degree, and per-RSU bandwidth budget.  Queries are
    read-only; adjacency lists are kept sorted so traversal order (and
    therefore every tie-break) is deterministic.
    """

    def __init__(self, snapshot: NetworkSnapshot, strategy: LinkStrategy, params: NetworkParams):
        self.snapshot = snapshot
        self.strategy = strategy
        self.params = params
        vehicles = snapshot.vehicle_by_id()
        rsus = {r.id: r for r in snapshot.rsus}

        v2v_deg: dict[str, int] = {vid: 0 for vid in vehicles}
        v2i_deg_rsu: dict[str, int] = {rid: 0 for rid in rsus}
        rsu_load: dict[str, float] = {rid: 0.0 for rid in rsus}
        adjacency: dict[str, list[str]] = {nid: [] for nid in (*vehicles, *rsus)}

        for a, b in sorted(strategy.v2v_active):
            if a not in vehicles or b not in vehicles:
                raise ConstraintViolation("structure", f"unknown vehicle in v2v edge ({a}, {b})")
            va, vb = vehicles[a], vehicles[b]
            d = math.hypot(va.pos_x - vb.pos_x, va.pos_y - vb.pos_y)
            if d > params.r_v2v:
                raise ConstraintViolation(
                    "v2v_range", f"({a}, {b}) at {d:.1f} m exceeds {params.r_v2v} m"
                )
            v2v_deg[a] += 1
            v2v_deg[b] += 1
            adjacency[a].append(b)
            adjacency[b].append(a)

        for vid, deg in v2v_deg.items():
            if deg > params.delta_v2v:
                raise ConstraintViolation(
                    "v2v_degree", f"vehicle {vid} has {deg} V2V links (cap {params.delta_v2v})"
                )

        for vid, rid in sorted(strategy.v2i_active):
            if vid not in vehicles or rid not in rsus:
                raise ConstraintViolation("structure", f"unknown node in v2i edge ({vid}, {rid})")
            v = vehicles[vid]
            r = rsus[rid]
            d = math.hypot(v.pos_x - r.pos_x, v.pos_y - r.pos_y)
            if d > params.r_v2i:
                raise ConstraintViolation(
                    "v2i_range", f"({vid}, {rid}) at {d:.1f} m exceeds {params.r_v2i} m"
                )
            v2i_deg_rsu[rid] += 1
            rsu_load[rid] += strategy.v2i_bandwidth.get((vid, rid), 0.0)
            adjacency[vid].append(rid)
            adjacency[rid].append(vid)

        for rid, deg in v2i_deg_rsu.items():
            if deg > params.delta_v2i:
                raise ConstraintViolation(
                    "v2i_degree", f"rsu {rid} has {deg} V2I links (cap {params.delta_v2i})"
                )
        for rid, load in rsu_load.items():
            if load > rsus[rid].bandwidth_capacity + 1e-9:
                raise ConstraintViolation(
                    "bandwidth",
                    f"rsu {rid} allocated {load:.3f} Mbps (capacity {rsus[rid].bandwidth_capacity})",
                )

        for nid in adjacency:
            adjacency[nid].sort()
        self.adjacency = adjacency
        self.v2v_degree = v2v_deg
        self.v2i_degree_rsu = v2i_deg_rsu
        self._vehicles = vehicles
        self._rsus = rsus

    @property
    def vehicle_ids(self) -> list[str]:
        return [v.id for v in self.snapshot.vehicles]

    @property
    def rsu_ids(self) -> list[str]:
        return [r.id for r in self.snapshot.rsus]

    def is_vehicle(self, node_id: str) -> bool:
        return node_id in self._vehicles

    def degree(self, node_id: str) -> int:
        """Active incident links (undirected, V2V and V2I together)."""
        return len(self.adjacency[node_id])

    def has_node(self, node_id: str) -> bool:
        return node_id in self.adjacency


def shortest_hop_path(topology: Topology, src: str, dst: str) -> Optional[list[str]]:
    """BFS hop-shortest path; ties resolved toward smaller node ids.

    Returns the node sequence (``[src]`` when src == dst) or None when
    unreachable.  Raises LookupError for unknown endpoints.
    """
    adj = topology.adjacency
    if src not in adj or dst not in adj:
        raise LookupError(f"unknown node id: {src if src not in adj else dst}")
    if src == dst:
        return [src]
    parent: dict[str, str] = {src: src}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:  # sorted: smallest id discovered first
            if nxt in parent:
                continue
            parent[nxt] = node
            if nxt == dst:
                path = [dst]
                while path[-1] != src:
                    path.append(parent[path[-1]])
                path.reverse()
                return path
            queue.append(nxt)
    return None


def bfs_hops_from(topology: Topology, src: str) -> dict[str, int]:
    """Hop counts from ``src`` to every reachable node."""
    adj = topology.adjacency
    hops = {src: 0}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        h = hops[node] + 1
        for nxt in adj[node]:
            if nxt not in hops:
                hops[nxt] = h
                queue.append(nxt)
    return hops


@dataclass(frozen=True)
class GraphStats:
    diameter: int
    connectivity_rate: float
    link_density: float
    degrees: Mapping[str, int]


def _components(topology: Topology) -> list[set[str]]:
    seen: set[str] = set()
    comps = []
    for nid in topology.adjacency:
        if nid in seen:
            continue
        comp = {nid}
        queue = deque([nid])
        seen.add(nid)
        while queue:
            node = queue.popleft()
            for nxt in topology.adjacency[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    comp.add(nxt)
                    queue.append(nxt)
        comps.append(comp)
    return comps


def connectivity_rate(topology: Topology) -> float:
    """Fraction of vehicle pairs joined by some active path."""
    n = len(topology.vehicle_ids)
    if n < 2:
        return 0.0
    connected = 0
    for comp in _components(topology):
        k = sum(1 for nid in comp if topology.is_vehicle(nid))
        connected += k * (k - 1) // 2
    return connected / (n * (n - 1) // 2)


def graph_stats(topology: Topology) -> GraphStats:
    """Diameter, vehicle-pair connectivity, link density, and degrees."""
    n = len(topology.vehicle_ids)
    m = len(topology.rsu_ids)
    diameter = 0
    for nid in topology.adjacency:
        hops = bfs_hops_from(topology, nid)
        if hops:
            local = max(hops.values())
            if local > diameter:
                diameter = local
    possible = n * (n - 1) // 2 + n * m
    density = topology.strategy.n_links / max(1, possible)
    degrees = {nid: len(adj) for nid, adj in topology.adjacency.items()}
    return GraphStats(
        diameter=diameter,
        connectivity_rate=connectivity_rate(topology),
        link_density=density,
        degrees=degrees,
    )


def k_path_count(topology: Topology, pair: tuple[str, str], k_min: int) -> bool:
    """True iff at least ``k_min`` edge-disjoint paths join the pair.

    Unit-capacity max-flow (BFS augmentation); an undirected link becomes
    a pair of opposing unit arcs.  Stops as soon as ``k_min`` augmenting
    paths are found.
    """
    src, dst = pair
    if not topology.has_node(src) or not topology.has_node(dst):
        raise LookupError(f"unknown node id in pair {pair}")
    if k_min <= 0 or src == dst:
        return True
    residual: dict[str, dict[str, int]] = {nid: {} for nid in topology.adjacency}
    for nid, nbrs in topology.adjacency.items():
        for nxt in nbrs:
            residual[nid][nxt] = 1
    flow = 0
    while flow < k_min:
        parent = {src: src}
        queue = deque([src])
        found = False
        while queue and not found:
            node = queue.popleft()
            for nxt, cap in residual[node].items():
                if cap > 0 and nxt not in parent:
                    parent[nxt] = node
                    if nxt == dst:
                        found = True
                        break
                    queue.append(nxt)
        if not found:
            return False
        node = dst
        while node != src:
            prev = parent[node]
            residual[prev][node] -= 1
            residual[node][prev] = residual[node].get(prev, 0) + 1
            node = prev
        flow += 1
    return True


# ---------------------------------------------------------------------------
# Cap-aware incremental strategy construction (shared by optimizers/baselines)
# ---------------------------------------------------------------------------


class StrategyBuilder:
    """Accumulates links while enforcing degree and RSU-slot caps.

    And nothing else: range feasibility is the caller's concern (feed it
    candidates only).  ``finalize`` fills in equal-share bandwidth.
    """

    def __init__(self, snapshot: NetworkSnapshot, params: NetworkParams):
        self.snapshot = snapshot
        self.params = params
        self.v2v: set[V2VEdge] = set()
        self.v2i: set[V2IEdge] = set()
        self.v2v_deg: dict[str, int] = {v.id: 0 for v in snapshot.vehicles}
        self.rsu_deg: dict[str, int] = {r.id: 0 for r in snapshot.rsus}

    def can_add_v2v(self, edge: V2VEdge) -> bool:
        a, b = edge
        if edge in self.v2v:
            return False
        return (
            self.v2v_deg[a] < self.params.delta_v2v
            and self.v2v_deg[b] < self.params.delta_v2v
        )

    def add_v2v(self, edge: V2VEdge) -> bool:
        if not self.can_add_v2v(edge):
            return False
        self.v2v.add(edge)
        self.v2v_deg[edge[0]] += 1
        self.v2v_deg[edge[1]] += 1
        return True

    def can_add_v2i(self, edge: V2IEdge) -> bool:
        if edge in self.v2i:
            return False
        return self.rsu_deg[edge[1]] < self.params.delta_v2i

    def add_v2i(self, edge: V2IEdge) -> bool:
        if not self.can_add_v2i(edge):
            return False
        self.v2i.add(edge)
        self.rsu_deg[edge[1]] += 1
        return True

    def has_edge(self, u: str, v: str) -> bool:
        if v2v_edge(u, v) in self.v2v:
            return True
        return (u, v) in self.v2i or (v, u) in self.v2i

    def finalize(self) -> LinkStrategy:
        return LinkStrategy(
            v2v_active=frozenset(self.v2v),
            v2i_active=frozenset(self.v2i),
            v2i_bandwidth=equal_share_bandwidth(self.v2i, self.snapshot.rsus),
        )
