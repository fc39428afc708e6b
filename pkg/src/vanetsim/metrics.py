"""Topology evaluation: per-path delay, average path length, throughput.

All functions are pure over an immutable :class:`~vanetsim.netgraph.Topology`;
repeated evaluation is bit-identical.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence

from .netgraph import CommPairSet, Topology, v2v_edge


@dataclass(frozen=True)
class DelayParams:
    """Queuing/transmission constants: scheduling coefficients, per-packet
    processing times (s), and the fixed packet size in bits."""

    k_v: float = 1.0
    k_i: float = 1.0
    tau_v_s: float = 0.0005
    tau_i_s: float = 0.0001
    packet_bits: float = 8000.0

    def __post_init__(self) -> None:
        for name in ("k_v", "k_i", "tau_v_s", "tau_i_s", "packet_bits"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ThroughputParams:
    eta_v: float = 0.8
    eta_i: float = 0.9
    p_loss_per_hop: float = 0.03

    def __post_init__(self) -> None:
        if not 0.0 < self.eta_v <= 1.0 or not 0.0 < self.eta_i <= 1.0:
            raise ValueError("utilization coefficients must lie in (0, 1]")
        if not 0.0 <= self.p_loss_per_hop < 1.0:
            raise ValueError("p_loss_per_hop must lie in [0, 1)")


@dataclass(frozen=True)
class BandwidthModel:
    """Link bandwidth rule: V2V links share a base rate that shrinks with the
    busier endpoint's V2V degree; V2I links use their allocated share."""

    v2v_base_mbps: float = 20.0

    def v2v_mbps(self, topology: Topology, a: str, b: str) -> float:
        deg = max(topology.v2v_degree.get(a, 0), topology.v2v_degree.get(b, 0), 1)
        return self.v2v_base_mbps / deg

    def link_mbps(self, topology: Topology, u: str, v: str) -> float:
        """Bandwidth of the active link between adjacent nodes u, v."""
        if topology.is_vehicle(u) and topology.is_vehicle(v):
            return self.v2v_mbps(topology, u, v)
        vid, rid = (u, v) if topology.is_vehicle(u) else (v, u)
        return topology.strategy.v2i_bandwidth[(vid, rid)]


@dataclass(frozen=True)
class MetricsRecord:
    """One experiment output row."""

    step: int
    l_avg: float
    mean_delay_s: float
    throughput_mbps: float
    connectivity_rate: float
    pair_count: int


def path_delay(
    topology: Topology,
    path: Sequence[str],
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> float:
    """End-to-end delay (s) along an explicit path.

    Sums queuing delay at every non-destination vehicle (source included)
    and every RSU, plus per-link transmission time; propagation is
    neglected.  Queuing scales with the node's count of active incident
    links.
    """
    if len(path) <= 1:
        return 0.0
    total = 0.0
    dst = path[-1]
    for i, node in enumerate(path):
        if topology.is_vehicle(node):
            if node != dst:
                total += delay.k_v * topology.degree(node) * delay.tau_v_s
        else:
            total += delay.k_i * topology.degree(node) * delay.tau_i_s
        if i + 1 < len(path):
            nxt = path[i + 1]
            if nxt not in topology.adjacency[node]:
                raise ValueError(f"path uses inactive edge ({node}, {nxt})")
            mbps = bandwidth.link_mbps(topology, node, nxt)
            total += delay.packet_bits / (mbps * 1e6)
    return total


def _paths_from_source(topology: Topology, src: str, targets: set[str]) -> dict[str, list[str]]:
    """One BFS serving every key pair rooted at ``src`` (same tie-break as
    shortest_hop_path: sorted adjacency, first discovery wins)."""
    adj = topology.adjacency
    parent: dict[str, str] = {src: src}
    queue = deque([src])
    remaining = set(targets)
    remaining.discard(src)
    found: dict[str, list[str]] = {}
    if src in targets:
        found[src] = [src]
    while queue and remaining:
        node = queue.popleft()
        for nxt in adj[node]:
            if nxt in parent:
                continue
            parent[nxt] = node
            if nxt in remaining:
                remaining.discard(nxt)
                path = [nxt]
                while path[-1] != src:
                    path.append(parent[path[-1]])
                path.reverse()
                found[nxt] = path
            queue.append(nxt)
    return found


@dataclass(frozen=True)
class PairEvaluation:
    """Shortest-hop routing of every key pair on one topology."""

    hops: dict[tuple[str, str], int]
    delays: dict[tuple[str, str], float]
    unreachable: tuple[tuple[str, str], ...]

    @property
    def l_avg(self) -> float:
        return sum(self.hops.values()) / len(self.hops) if self.hops else 0.0

    @property
    def mean_delay_s(self) -> float:
        return sum(self.delays.values()) / len(self.delays) if self.delays else 0.0

    @property
    def l_max(self) -> int:
        return max(self.hops.values()) if self.hops else 0

    @property
    def connected_count(self) -> int:
        return len(self.hops)


def evaluate_pairs(
    topology: Topology,
    pairs: CommPairSet,
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> PairEvaluation:
    """Route every key pair (BFS grouped by source) and price each path."""
    by_src: dict[str, set[str]] = {}
    for src, dst in pairs.endpoints():
        by_src.setdefault(src, set()).add(dst)
    hops: dict[tuple[str, str], int] = {}
    delays: dict[tuple[str, str], float] = {}
    unreachable: list[tuple[str, str]] = []
    for src in sorted(by_src):
        found = _paths_from_source(topology, src, by_src[src])
        for dst in sorted(by_src[src]):
            path = found.get(dst)
            if path is None:
                unreachable.append((src, dst))
                continue
            hops[(src, dst)] = len(path) - 1
            delays[(src, dst)] = path_delay(topology, path, delay, bandwidth)
    return PairEvaluation(hops=hops, delays=delays, unreachable=tuple(unreachable))


def average_path_length(
    topology: Topology,
    pairs: CommPairSet,
    delay: Optional[DelayParams] = None,
    bandwidth: Optional[BandwidthModel] = None,
) -> float:
    """Mean shortest-hop count over the connected key pairs (0 if none)."""
    ev = evaluate_pairs(topology, pairs, delay or DelayParams(), bandwidth or BandwidthModel())
    return ev.l_avg


def mean_delay(
    topology: Topology,
    pairs: CommPairSet,
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> float:
    """Mean end-to-end delay over the connected key pairs (0 if none)."""
    return evaluate_pairs(topology, pairs, delay, bandwidth).mean_delay_s


def throughput(
    topology: Topology,
    params: ThroughputParams,
    bandwidth: BandwidthModel,
    l_avg: float,
) -> float:
    """Aggregate deliverable rate (Mbps) with a linear per-hop loss discount.

    Each undirected link is counted once.  The loss fraction p * L_avg is
    clamped just below 1 so the multiplier stays positive.
    """
    # sorted iteration keeps float accumulation byte-identical across processes
    w_v = 0.0
    for a, b in sorted(topology.strategy.v2v_active):
        w_v += bandwidth.v2v_mbps(topology, a, b) * params.eta_v
    w_i = 0.0
    for edge in sorted(topology.strategy.v2i_active):
        w_i += topology.strategy.v2i_bandwidth[edge] * params.eta_i
    rho_loss = min(max(params.p_loss_per_hop * l_avg, 0.0), 1.0 - 1e-9)
    return (w_v + w_i) * (1.0 - rho_loss)
