"""Global layer: dual-mode strategy solving, validity checks, gated updates.

Small instances are solved exactly (exhaustive constrained search over
candidate-link subsets); larger ones fall back to a deterministic greedy
heuristic with connectivity repair.  Every candidate passes a three-step
validity check (constraints, predicted link lifetime, freeze-and-supplement
repair) and is applied only when the joint improvement rate clears the
anti-oscillation threshold.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .fusion import FeatureMatrix
from .metrics import BandwidthModel, DelayParams, PairEvaluation, evaluate_pairs
from .mobility import NetworkSnapshot, RsuNode, VehicleState
from .netgraph import (
    CandidateLinks,
    CommPairSet,
    LinkStrategy,
    NetworkParams,
    StrategyBuilder,
    Topology,
    equal_share_bandwidth,
    k_path_count,
    v2v_edge,
)
from .regulation import RegulationState, composite_objective, improvement_rate

INFINITE_LIFETIME = math.inf


@dataclass(frozen=True)
class SolverParams:
    """Mode-switch, gating, and search-budget knobs."""

    xi: float = 0.01
    zeta: float = 1.0
    q0: float = 1.0
    delta0: float = 0.01
    k_min: int = 1
    exact_max_nodes: int = 12
    exact_max_links: int = 12
    exact_max_leaves: int = 200_000
    lifetime_min_cycles: float = 2.0
    lifetime_horizon_cycles: float = 100.0
    utility_w_adapt: float = 0.5
    utility_w_demand: float = 0.3
    utility_w_dist: float = 0.2

    def __post_init__(self) -> None:
        if self.xi < 0 or self.zeta < 0:
            raise ValueError("complexity weights must be >= 0")
        if self.k_min < 1:
            raise ValueError("k_min must be >= 1")


def complexity(n_vehicles: int, link_density: float, params: SolverParams) -> float:
    """Scalar problem-scale indicator driving the solver mode switch."""
    return params.xi * n_vehicles + params.zeta * link_density


def select_mode(q: float, n_vehicles: int, n_candidates: int, params: SolverParams) -> str:
    """Exact mode only when the complexity score is low AND the instance is
    small enough to enumerate within budget."""
    if (
        q < params.q0
        and n_vehicles <= params.exact_max_nodes
        and n_candidates <= params.exact_max_links
    ):
        return "exact"
    return "heuristic"


def predict_link_lifetime(
    a: VehicleState,
    b: VehicleState | RsuNode,
    range_m: float,
    step_s: float,
    horizon_cycles: float = 100.0,
) -> float:
    """Control cycles until the pair drifts out of range, assuming straight
    constant-velocity motion.

    Returns 0 when already out of range and ``inf`` when the relative
    speed is ~0 or separation stays inside the range past the horizon.
    """
    px = b.pos_x - a.pos_x
    py = b.pos_y - a.pos_y
    vax, vay = a.velocity()
    if isinstance(b, VehicleState):
        vbx, vby = b.velocity()
    else:
        vbx, vby = 0.0, 0.0
    vx, vy = vbx - vax, vby - vay
    d2 = px * px + py * py
    r2 = range_m * range_m
    if d2 > r2:
        return 0.0
    v2 = vx * vx + vy * vy
    if v2 < 1e-18:
        return INFINITE_LIFETIME
    pv = px * vx + py * vy
    disc = pv * pv - v2 * (d2 - r2)
    t_exit = (-pv + math.sqrt(disc)) / v2
    cycles = math.floor(t_exit / step_s)
    if cycles > horizon_cycles:
        return INFINITE_LIFETIME
    return float(cycles)


# ---------------------------------------------------------------------------
# Candidate utility and the shared route-repair machinery
# ---------------------------------------------------------------------------


def _normalized_demand(features: FeatureMatrix) -> dict[str, float]:
    dem = features.demand_of()
    peak = max(dem.values(), default=0.0)
    if peak <= 0.0:
        return {nid: 0.0 for nid in dem}
    return {nid: val / peak for nid, val in dem.items()}


def _ranked_candidates(
    features: FeatureMatrix,
    candidates: CandidateLinks,
    params: SolverParams,
    net: NetworkParams,
) -> list[tuple[float, int, tuple, str]]:
    """Candidates ranked by descending utility (stable, fully deterministic)."""
    dn = _normalized_demand(features)
    ranked = []
    for c in candidates.v2v:
        a, b = c.edge
        u = (
            params.utility_w_adapt * c.score
            + params.utility_w_demand * 0.5 * (dn.get(a, 0.0) + dn.get(b, 0.0))
            + params.utility_w_dist * (1.0 - c.distance / net.r_v2v)
        )
        ranked.append((-u, 0, c.edge, "v2v"))
    for c in candidates.v2i:
        vid, rid = c.edge
        # static infrastructure counts as maximally motion-compatible
        u = (
            params.utility_w_adapt * 1.0
            + params.utility_w_demand * 0.5 * (dn.get(vid, 0.0) + dn.get(rid, 0.0))
            + params.utility_w_dist * (1.0 - c.distance / net.r_v2i)
        )
        ranked.append((-u, 1, c.edge, "v2i"))
    ranked.sort()
    return ranked


def _route_over(
    builder: StrategyBuilder,
    pool_v2v: dict[tuple[str, str], None] | set,
    pool_v2i: set,
    src: str,
    dst: str,
    blocked: set,
) -> Optional[list[str]]:
    """Hop-shortest route over active edges plus cap-addable pool edges.

    ``blocked`` edges (canonical form) are never traversed.  Deterministic:
    neighbors expanded in sorted order.
    """
    adj: dict[str, list[str]] = {v.id: [] for v in builder.snapshot.vehicles}
    for r in builder.snapshot.rsus:
        adj[r.id] = []
    for a, b in builder.v2v:
        if (a, b) in blocked:
            continue
        adj[a].append(b)
        adj[b].append(a)
    for vid, rid in builder.v2i:
        if (vid, rid) in blocked:
            continue
        adj[vid].append(rid)
        adj[rid].append(vid)
    for edge in pool_v2v:
        if edge in builder.v2v or edge in blocked:
            continue
        if builder.can_add_v2v(edge):
            adj[edge[0]].append(edge[1])
            adj[edge[1]].append(edge[0])
    for edge in pool_v2i:
        if edge in builder.v2i or edge in blocked:
            continue
        if builder.can_add_v2i(edge):
            adj[edge[0]].append(edge[1])
            adj[edge[1]].append(edge[0])
    for lst in adj.values():
        lst.sort()

    if src not in adj or dst not in adj:
        return None
    parent = {src: src}
    queue = deque([src])
    while queue:
        node = queue.popleft()
        for nxt in adj[node]:
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


def _activate_route(builder: StrategyBuilder, path: Sequence[str], vehicles: set) -> bool:
    """Activate the inactive edges along a route; roll back on any cap clash."""
    added_v2v = []
    added_v2i = []
    ok = True
    for u, v in zip(path, path[1:]):
        if builder.has_edge(u, v):
            continue
        if u in vehicles and v in vehicles:
            if builder.add_v2v(v2v_edge(u, v)):
                added_v2v.append(v2v_edge(u, v))
            else:
                ok = False
                break
        else:
            vid, rid = (u, v) if u in vehicles else (v, u)
            if builder.add_v2i((vid, rid)):
                added_v2i.append((vid, rid))
            else:
                ok = False
                break
    if not ok:
        for edge in added_v2v:
            builder.v2v.discard(edge)
            builder.v2v_deg[edge[0]] -= 1
            builder.v2v_deg[edge[1]] -= 1
        for edge in added_v2i:
            builder.v2i.discard(edge)
            builder.rsu_deg[edge[1]] -= 1
    return ok


def repair_connectivity(
    builder: StrategyBuilder,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    k_min: int,
    net: NetworkParams,
    frozen: Optional[set] = None,
) -> list[tuple[str, str]]:
    """Supplement links so every key pair reaches ``k_min`` disjoint paths.

    Best effort: routes come from the distance-feasible pool minus frozen
    edges, activated only while caps allow.  Returns the pairs left short.
    """
    frozen = frozen or set()
    pool_v2v = {c.edge for c in candidates.v2v}
    pool_v2i = {c.edge for c in candidates.v2i}
    vehicles = {v.id for v in builder.snapshot.vehicles}
    unsatisfied = []
    for src, dst in pairs.endpoints():
        used_edges: set = set()
        satisfied = False
        for _ in range(k_min):
            topo = Topology(builder.snapshot, builder.finalize(), net)
            if k_path_count(topo, (src, dst), k_min):
                satisfied = True
                break
            path = _route_over(builder, pool_v2v, pool_v2i, src, dst, frozen | used_edges)
            if path is None or not _activate_route(builder, path, vehicles):
                break
            for u, v in zip(path, path[1:]):
                used_edges.add(v2v_edge(u, v) if u in vehicles and v in vehicles else
                               ((u, v) if u in vehicles else (v, u)))
        if not satisfied:
            topo = Topology(builder.snapshot, builder.finalize(), net)
            if not k_path_count(topo, (src, dst), k_min):
                unsatisfied.append((src, dst))
    return unsatisfied


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolveResult:
    strategy: LinkStrategy
    unsatisfied_pairs: tuple[tuple[str, str], ...]
    leaves_evaluated: int = 0


def lifetime_filtered_candidates(
    snapshot: NetworkSnapshot,
    candidates: CandidateLinks,
    params: SolverParams,
    net: NetworkParams,
) -> CandidateLinks:
    """Candidates expected to survive the minimum number of control cycles.

    Solving over this pool keeps planned routes intact through the
    lifetime step of verification instead of having them pruned and
    patched afterwards.
    """
    vehicles = snapshot.vehicle_by_id()
    rsus = {r.id: r for r in snapshot.rsus}
    step_s = snapshot.step_duration_s
    v2v = tuple(
        c
        for c in candidates.v2v
        if predict_link_lifetime(
            vehicles[c.edge[0]], vehicles[c.edge[1]], net.r_v2v, step_s,
            params.lifetime_horizon_cycles,
        )
        >= params.lifetime_min_cycles
    )
    v2i = tuple(
        c
        for c in candidates.v2i
        if predict_link_lifetime(
            vehicles[c.edge[0]], rsus[c.edge[1]], net.r_v2i, step_s,
            params.lifetime_horizon_cycles,
        )
        >= params.lifetime_min_cycles
    )
    return CandidateLinks(v2v=v2v, v2i=v2i)


class ExactBudgetExceeded(RuntimeError):
    """The exact search outgrew its leaf budget; caller should fall back."""


def solve_heuristic(
    snapshot: NetworkSnapshot,
    features: FeatureMatrix,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    state: RegulationState,
    params: SolverParams,
    net: NetworkParams,
) -> SolveResult:
    """Deterministic routes-first construction.

    Phase 1 routes every key pair (highest demand first) over the full
    candidate graph while caps last, preferring hop-short routes that
    lean on infrastructure relays (RSU slots are plentiful and do not
    consume vehicle degree budget).  Phase 2 spends the remaining cap
    budget on utility-ranked links (motion compatibility, fused endpoint
    demand, closeness) for capacity and robustness.  Always returns a
    cap-feasible strategy; pairs left short of ``k_min`` disjoint paths
    are reported.
    """
    builder = StrategyBuilder(snapshot, net)
    vehicles = {v.id for v in snapshot.vehicles}
    pool = _CandidatePool(snapshot, candidates)

    ordered_pairs = sorted(pairs.pairs, key=lambda p: (-p[2], p[0], p[1]))
    unsatisfied: list[tuple[str, str]] = []
    for src, dst, _ in ordered_pairs:
        used: set = set()
        routed = 0
        for _ in range(params.k_min):
            path = pool.best_route(builder, src, dst, used)
            if path is None or not _activate_route(builder, path, vehicles):
                break
            routed += 1
            for u, v in zip(path, path[1:]):
                used.add(v2v_edge(u, v) if u in vehicles and v in vehicles else
                         ((u, v) if u in vehicles else (v, u)))
        if routed < params.k_min:
            unsatisfied.append((src, dst))

    for _, _, edge, kind in _ranked_candidates(features, candidates, params, net):
        if kind == "v2v":
            builder.add_v2v(edge)
        else:
            builder.add_v2i(edge)

    if unsatisfied:
        topo = Topology(snapshot, builder.finalize(), net)
        unsatisfied = [
            pair for pair in unsatisfied if not k_path_count(topo, pair, params.k_min)
        ]
    return SolveResult(strategy=builder.finalize(), unsatisfied_pairs=tuple(unsatisfied))


class _CandidatePool:
    """Static candidate adjacency with cap-aware route search.

    Built once per solve; edge usability (already active, or still addable
    under the builder's current caps) is checked at expansion time, so no
    per-pair graph rebuilds are needed.
    """

    def __init__(self, snapshot: NetworkSnapshot, candidates: CandidateLinks):
        adj: dict[str, list[tuple[str, bool, tuple, float]]] = {
            v.id: [] for v in snapshot.vehicles
        }
        for r in snapshot.rsus:
            adj[r.id] = []
        for c in candidates.v2v:
            a, b = c.edge
            adj[a].append((b, True, c.edge, c.distance))
            adj[b].append((a, True, c.edge, c.distance))
        for c in candidates.v2i:
            vid, rid = c.edge
            adj[vid].append((rid, False, c.edge, c.distance))
            adj[rid].append((vid, False, c.edge, c.distance))
        for lst in adj.values():
            lst.sort()
        self.adj = adj

    def best_route(self, builder: StrategyBuilder, src: str, dst: str, blocked: set):
        """Dijkstra on (hops, vehicle-cap edges used, distance): hop-shortest
        first, then routes that spare V2V degree budget, then shorter ones."""
        import heapq

        adj = self.adj
        if src not in adj or dst not in adj:
            return None
        inf3 = (math.inf, math.inf, math.inf)
        best: dict[str, tuple] = {src: (0, 0, 0.0)}
        parent: dict[str, str] = {}
        heap = [(0, 0, 0.0, src)]
        while heap:
            hops, v2v_used, dist, node = heapq.heappop(heap)
            if (hops, v2v_used, dist) > best.get(node, inf3):
                continue
            if node == dst:
                path = [dst]
                while path[-1] != src:
                    path.append(parent[path[-1]])
                path.reverse()
                return path
            for nxt, is_v2v, edge, d in adj[node]:
                if edge in blocked:
                    continue
                if is_v2v:
                    if edge not in builder.v2v and not builder.can_add_v2v(edge):
                        continue
                    cand = (hops + 1, v2v_used + 1, dist + d)
                else:
                    if edge not in builder.v2i and not builder.can_add_v2i(edge):
                        continue
                    cand = (hops + 1, v2v_used, dist + d)
                if cand < best.get(nxt, inf3):
                    best[nxt] = cand
                    parent[nxt] = node
                    heapq.heappush(heap, (*cand, nxt))
        return None


def _strategy_key(
    snapshot: NetworkSnapshot,
    strategy: LinkStrategy,
    pairs: CommPairSet,
    state: RegulationState,
    params: SolverParams,
    net: NetworkParams,
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> tuple:
    """Total order used by the exact search: more satisfied pairs first,
    then lower objective, fewer links, lexicographic edges."""
    topo = Topology(snapshot, strategy, net)
    ev = evaluate_pairs(topo, pairs, delay, bandwidth)
    if params.k_min == 1:
        satisfied = ev.connected_count
    else:
        satisfied = sum(
            1 for pair in pairs.endpoints() if k_path_count(topo, pair, params.k_min)
        )
    objective = composite_objective(state, ev.l_avg, ev.mean_delay_s)
    return (-satisfied, objective, strategy.n_links, strategy.canonical_edges())


def solve_exact(
    snapshot: NetworkSnapshot,
    features: FeatureMatrix,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    state: RegulationState,
    params: SolverParams,
    net: NetworkParams,
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> SolveResult:
    """Exhaustive constrained search over candidate-link subsets.

    Depth-first include/exclude with degree/slot propagation; every
    cap-feasible leaf is priced and the best kept under a total order
    (satisfied pairs desc, objective asc, fewer links, lexicographic
    edges), so the optimum is unique and reproducible.  The objective is
    not monotone in the edge set (dropping a link can disconnect a costly
    pair and shrink the mean), so no bounding is applied; the instance
    size is held down by the mode selector instead.
    """
    decisions: list[tuple[str, tuple]] = [("v2v", c.edge) for c in candidates.v2v]
    decisions += [("v2i", c.edge) for c in candidates.v2i]
    if len(decisions) > params.exact_max_links:
        raise ExactBudgetExceeded(
            f"{len(decisions)} candidate links exceed exact budget {params.exact_max_links}"
        )

    builder = StrategyBuilder(snapshot, net)
    best: dict = {"key": None, "strategy": None, "leaves": 0}

    def leaf() -> None:
        best["leaves"] += 1
        if best["leaves"] > params.exact_max_leaves:
            raise ExactBudgetExceeded(f"leaf budget {params.exact_max_leaves} exhausted")
        strategy = builder.finalize()
        key = _strategy_key(snapshot, strategy, pairs, state, params, net, delay, bandwidth)
        if best["key"] is None or key < best["key"]:
            best["key"] = key
            best["strategy"] = strategy

    def dfs(i: int) -> None:
        if i == len(decisions):
            leaf()
            return
        kind, edge = decisions[i]
        # include branch (only when caps permit; feasibility is prefix-monotone)
        if kind == "v2v":
            if builder.add_v2v(edge):
                dfs(i + 1)
                builder.v2v.discard(edge)
                builder.v2v_deg[edge[0]] -= 1
                builder.v2v_deg[edge[1]] -= 1
        else:
            if builder.add_v2i(edge):
                dfs(i + 1)
                builder.v2i.discard(edge)
                builder.rsu_deg[edge[1]] -= 1
        dfs(i + 1)  # exclude branch

    dfs(0)
    strategy = best["strategy"] if best["strategy"] is not None else LinkStrategy.empty()
    satisfied = -best["key"][0] if best["key"] is not None else 0
    unsatisfied: list[tuple[str, str]] = []
    if satisfied < len(pairs):
        topo = Topology(snapshot, strategy, net)
        for pair in pairs.endpoints():
            if not k_path_count(topo, pair, params.k_min):
                unsatisfied.append(pair)
    return SolveResult(
        strategy=strategy,
        unsatisfied_pairs=tuple(unsatisfied),
        leaves_evaluated=best["leaves"],
    )


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VerifyResult:
    passed: bool
    reason: Optional[str]
    strategy: LinkStrategy
    removed: tuple = ()
    unsatisfied_pairs: tuple[tuple[str, str], ...] = ()


def _link_distance(snapshot: NetworkSnapshot, u: str, v: str) -> float:
    nodes: dict[str, object] = {x.id: x for x in snapshot.vehicles}
    nodes.update({r.id: r for r in snapshot.rsus})
    a, b = nodes[u], nodes[v]
    return math.hypot(a.pos_x - b.pos_x, a.pos_y - b.pos_y)  # type: ignore[union-attr]


def verify(
    strategy: LinkStrategy,
    snapshot: NetworkSnapshot,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    params: SolverParams,
    net: NetworkParams,
) -> VerifyResult:
    """Three-step validity check with in-place repair.

    1. Hard constraints: an over-allocated RSU bandwidth budget has no
       defined reallocation here and fails outright; range and degree
       violations freeze the offending links instead.
    2. Links predicted to outlive fewer than ``lifetime_min_cycles``
       control cycles are frozen.
    3. Key pairs broken by the removals are re-connected from the
       distance-feasible candidate pool (frozen links excluded, caps
       respected); leftover shortfalls are reported, not fatal.
    """
    vehicles = snapshot.vehicle_by_id()
    rsus = {r.id: r for r in snapshot.rsus}

    # step 1a: bandwidth budget (unrepairable without a new allocation)
    load: dict[str, float] = {rid: 0.0 for rid in rsus}
    for (vid, rid), mbps in strategy.v2i_bandwidth.items():
        load[rid] = load.get(rid, 0.0) + mbps
    for rid, total in load.items():
        if total > rsus[rid].bandwidth_capacity + 1e-9:
            return VerifyResult(passed=False, reason="bandwidth", strategy=strategy)

    frozen: set = set()
    step_s = snapshot.step_duration_s

    # step 1b: range and structural validity; step 2: lifetime
    keep_v2v = []
    for edge in sorted(strategy.v2v_active):
        a, b = edge
        if a not in vehicles or b not in vehicles:
            frozen.add(edge)
            continue
        if _link_distance(snapshot, a, b) > net.r_v2v:
            frozen.add(edge)
            continue
        life = predict_link_lifetime(
            vehicles[a], vehicles[b], net.r_v2v, step_s, params.lifetime_horizon_cycles
        )
        if life < params.lifetime_min_cycles:
            frozen.add(edge)
            continue
        keep_v2v.append(edge)
    keep_v2i = []
    for edge in sorted(strategy.v2i_active):
        vid, rid = edge
        if vid not in vehicles or rid not in rsus:
            frozen.add(edge)
            continue
        if _link_distance(snapshot, vid, rid) > net.r_v2i:
            frozen.add(edge)
            continue
        life = predict_link_lifetime(
            vehicles[vid], rsus[rid], net.r_v2i, step_s, params.lifetime_horizon_cycles
        )
        if life < params.lifetime_min_cycles:
            frozen.add(edge)
            continue
        keep_v2i.append(edge)

    # step 1c: degree caps -- shed the longest links at each overloaded node
    builder = StrategyBuilder(snapshot, net)
    by_len_v2v = sorted(keep_v2v, key=lambda e: (_link_distance(snapshot, *e), e))
    for edge in by_len_v2v:
        if not builder.add_v2v(edge):
            frozen.add(edge)
    by_len_v2i = sorted(keep_v2i, key=lambda e: (_link_distance(snapshot, *e), e))
    for edge in by_len_v2i:
        if not builder.add_v2i(edge):
            frozen.add(edge)

    # lifetime gate also applies to the supplement pool
    pool_v2v = []
    for c in candidates.v2v:
        if c.edge in frozen:
            continue
        a, b = c.edge
        life = predict_link_lifetime(
            vehicles[a], vehicles[b], net.r_v2v, step_s, params.lifetime_horizon_cycles
        )
        if life >= params.lifetime_min_cycles:
            pool_v2v.append(c)
    pool_v2i = []
    for c in candidates.v2i:
        if c.edge in frozen:
            continue
        vid, rid = c.edge
        life = predict_link_lifetime(
            vehicles[vid], rsus[rid], net.r_v2i, step_s, params.lifetime_horizon_cycles
        )
        if life >= params.lifetime_min_cycles:
            pool_v2i.append(c)
    pool = CandidateLinks(v2v=tuple(pool_v2v), v2i=tuple(pool_v2i))

    # step 3: supplement connectivity without re-solving
    unsatisfied = repair_connectivity(builder, pool, pairs, params.k_min, net, frozen=frozen)

    corrected = builder.finalize()
    # untouched RSUs keep their original allocation; changed ones re-share
    orig_per_rsu: dict[str, set] = {}
    for edge in strategy.v2i_active:
        orig_per_rsu.setdefault(edge[1], set()).add(edge)
    new_per_rsu: dict[str, set] = {}
    for edge in corrected.v2i_active:
        new_per_rsu.setdefault(edge[1], set()).add(edge)
    bandwidth = dict(corrected.v2i_bandwidth)
    for rid, edges in new_per_rsu.items():
        if orig_per_rsu.get(rid) is not None and edges <= orig_per_rsu[rid]:
            for edge in edges:
                if edge in strategy.v2i_bandwidth:
                    bandwidth[edge] = strategy.v2i_bandwidth[edge]
    corrected = LinkStrategy(
        v2v_active=corrected.v2v_active,
        v2i_active=corrected.v2i_active,
        v2i_bandwidth=bandwidth,
    )
    return VerifyResult(
        passed=True,
        reason=None,
        strategy=corrected,
        removed=tuple(sorted(frozen & (set(strategy.v2v_active) | set(strategy.v2i_active)))),
        unsatisfied_pairs=tuple(unsatisfied),
    )


def local_correction(strategy: LinkStrategy, snapshot: NetworkSnapshot) -> LinkStrategy:
    """One repair pass for the hard verification failure: reallocate every
    RSU's bandwidth to equal shares over its active links."""
    return LinkStrategy(
        v2v_active=strategy.v2v_active,
        v2i_active=strategy.v2i_active,
        v2i_bandwidth=equal_share_bandwidth(strategy.v2i_active, snapshot.rsus),
    )


# ---------------------------------------------------------------------------
# Per-step adjustment
# ---------------------------------------------------------------------------


def prune_strategy(
    strategy: LinkStrategy, snapshot: NetworkSnapshot, net: NetworkParams
) -> LinkStrategy:
    """Carry a strategy onto a new snapshot: drop links whose endpoints left
    the network or drifted out of range (their bandwidth entries go too)."""
    vehicles = snapshot.vehicle_by_id()
    rsus = {r.id: r for r in snapshot.rsus}
    v2v = set()
    for a, b in strategy.v2v_active:
        if a in vehicles and b in vehicles and _link_distance(snapshot, a, b) <= net.r_v2v:
            v2v.add((a, b))
    v2i = set()
    for vid, rid in strategy.v2i_active:
        if vid in vehicles and rid in rsus and _link_distance(snapshot, vid, rid) <= net.r_v2i:
            v2i.add((vid, rid))
    bandwidth = {e: m for e, m in strategy.v2i_bandwidth.items() if e in v2i}
    return LinkStrategy(
        v2v_active=frozenset(v2v), v2i_active=frozenset(v2i), v2i_bandwidth=bandwidth
    )


@dataclass(frozen=True)
class CandidateOutcome:
    """Everything the control loop and decision log need about one step."""

    strategy: LinkStrategy               # topology to carry forward
    mode: str
    q: float
    delta: float
    verification_passed: bool
    verification_reason: Optional[str]
    applied: bool
    degenerate_baseline: bool
    predicted_l_avg: float
    predicted_delay_s: float
    current_eval: PairEvaluation
    candidate_eval: Optional[PairEvaluation]
    unsatisfied_pairs: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.applied:
            assert self.verification_passed and self.delta > 0.0


def adjust(
    current: LinkStrategy,
    snapshot: NetworkSnapshot,
    features: FeatureMatrix,
    candidates: CandidateLinks,
    pairs: CommPairSet,
    state: RegulationState,
    params: SolverParams,
    net: NetworkParams,
    delay: DelayParams,
    bandwidth: BandwidthModel,
) -> CandidateOutcome:
    """One control-loop decision: build, verify, and gate a candidate.

    The candidate replaces the current topology only when verification
    passes and the joint improvement rate exceeds the threshold.  One
    exception: a candidate that connects strictly more key pairs than the
    current topology restores connectivity constraints that the aging
    topology has lost, and constraint restoration outranks the scalar
    objective (the improvement rate is blind to it because unreachable
    pairs drop out of both means).  Such candidates carry delta = +inf so
    the applied-implies-improvement invariant still holds; this also
    covers bootstrap from the empty initial topology.
    """
    current_topo = Topology(snapshot, current, net)
    current_eval = evaluate_pairs(current_topo, pairs, delay, bandwidth)

    n = snapshot.n_vehicles
    m = len(snapshot.rsus)
    possible = n * (n - 1) // 2 + n * m
    density = current.n_links / max(1, possible)
    q = complexity(n, density, params)
    n_candidates = len(candidates.v2v) + len(candidates.v2i)
    mode = select_mode(q, n, n_candidates, params)

    durable = lifetime_filtered_candidates(snapshot, candidates, params, net)
    if mode == "exact":
        try:
            solved = solve_exact(
                snapshot, features, durable, pairs, state, params, net, delay, bandwidth
            )
        except ExactBudgetExceeded:
            mode = "heuristic"
            solved = solve_heuristic(snapshot, features, durable, pairs, state, params, net)
    else:
        solved = solve_heuristic(snapshot, features, durable, pairs, state, params, net)

    result = verify(solved.strategy, snapshot, candidates, pairs, params, net)
    if not result.passed:
        corrected = local_correction(solved.strategy, snapshot)
        result = verify(corrected, snapshot, candidates, pairs, params, net)
    if not result.passed:
        return CandidateOutcome(
            strategy=current,
            mode=mode,
            q=q,
            delta=0.0,
            verification_passed=False,
            verification_reason=result.reason,
            applied=False,
            degenerate_baseline=False,
            predicted_l_avg=0.0,
            predicted_delay_s=0.0,
            current_eval=current_eval,
            candidate_eval=None,
            unsatisfied_pairs=solved.unsatisfied_pairs,
        )

    candidate_topo = Topology(snapshot, result.strategy, net)
    candidate_eval = evaluate_pairs(candidate_topo, pairs, delay, bandwidth)
    delta, degenerate = improvement_rate(
        state,
        current_eval.l_avg,
        current_eval.mean_delay_s,
        candidate_eval.l_avg,
        candidate_eval.mean_delay_s,
    )
    if candidate_eval.connected_count > current_eval.connected_count:
        delta = math.inf
    applied = delta > params.delta0
    return CandidateOutcome(
        strategy=result.strategy if applied else current,
        mode=mode,
        q=q,
        delta=delta,
        verification_passed=True,
        verification_reason=None,
        applied=applied,
        degenerate_baseline=degenerate,
        predicted_l_avg=candidate_eval.l_avg,
        predicted_delay_s=candidate_eval.mean_delay_s,
        current_eval=current_eval,
        candidate_eval=candidate_eval,
        unsatisfied_pairs=result.unsatisfied_pairs,
    )
