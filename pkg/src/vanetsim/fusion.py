"""Local layer: per-node feature extraction and neighborhood fusion.

Every node carries a fixed 5-vector [x, y, speed, heading, demand].  Fusion
runs synchronous rounds: each node replaces its vector by a convex blend of
itself and the distance-weighted average of its in-range neighbors, until
the largest per-node change drops below a threshold or a round cap is hit.
Headings are blended on the unit circle (cos/sin) so the 0/2pi wrap cannot
corrupt the average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mobility import NetworkSnapshot, normalize_heading
from .netgraph import CandidateLinks, DemandMatrix, NetworkParams

FEATURE_DIM = 5


@dataclass(frozen=True)
class FusionParams:
    decay_lambda: float = 0.01          # 1/m; weight ratio e at 100 m separation
    self_weight_vehicle: float = 0.7
    self_weight_rsu: float = 0.3
    max_rounds: int = 15
    epsilon: float = 1e-3

    def __post_init__(self) -> None:
        if self.decay_lambda <= 0.0:
            raise ValueError("decay_lambda must be > 0")
        for w in (self.self_weight_vehicle, self.self_weight_rsu):
            if not 0.0 <= w <= 1.0:
                raise ValueError("self weights must lie in [0, 1]")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class FeatureMatrix:
    """Rows of [x, y, speed, heading, demand]; vehicles first, then RSUs."""

    ids: tuple[str, ...]
    values: np.ndarray            # shape (N + M, 5)
    n_vehicles: int

    def row(self, node_id: str) -> np.ndarray:
        return self.values[self.ids.index(node_id)]

    def demand_of(self) -> dict[str, float]:
        return {nid: float(self.values[i, 4]) for i, nid in enumerate(self.ids)}


def extract_features(
    snapshot: NetworkSnapshot, demand: DemandMatrix, params: NetworkParams
) -> FeatureMatrix:
    """Build the raw feature matrix for one snapshot.

    Vehicle demand is the column mean of the demand matrix (inbound
    aggregation over all N vehicles, zero diagonal included).  An RSU row
    uses zero speed/heading and the mean demand of the vehicles inside its
    coverage radius (0 if it covers none).
    """
    vehicles = snapshot.vehicles
    n = len(vehicles)
    if demand.values.shape != (n, n):
        raise ValueError(
            f"demand matrix shape {demand.values.shape} does not match {n} vehicles"
        )
    m = len(snapshot.rsus)
    values = np.zeros((n + m, FEATURE_DIM))
    col_mean = demand.values.mean(axis=0) if n else np.zeros(0)
    for i, v in enumerate(vehicles):
        values[i] = (v.pos_x, v.pos_y, v.speed, v.heading, col_mean[i])
    for j, r in enumerate(snapshot.rsus):
        covered = [
            col_mean[i]
            for i, v in enumerate(vehicles)
            if math.hypot(v.pos_x - r.pos_x, v.pos_y - r.pos_y) <= params.r_v2i
        ]
        d_r = float(np.mean(covered)) if covered else 0.0
        values[n + j] = (r.pos_x, r.pos_y, 0.0, 0.0, d_r)
    ids = tuple(v.id for v in vehicles) + tuple(r.id for r in snapshot.rsus)
    return FeatureMatrix(ids=ids, values=values, n_vehicles=n)


def neighbor_weights(distances: Sequence[float], decay_lambda: float) -> np.ndarray:
    """Softmax of -decay_lambda * distance; empty input gives empty weights."""
    if len(distances) == 0:
        return np.zeros(0)
    logits = -decay_lambda * np.asarray(distances, dtype=float)
    logits -= logits.max()  # shift for numerical stability; softmax unchanged
    w = np.exp(logits)
    return w / w.sum()


def neighborhoods(snapshot: NetworkSnapshot, candidates: CandidateLinks) -> dict[str, list[tuple[str, float]]]:
    """Per-node neighbor lists with distances, from the range-feasible links.

    Fusion sees every in-range node, not just strategy-activated ones: the
    fused features inform the optimizer that picks the strategy.
    """
    nbrs: dict[str, list[tuple[str, float]]] = {v.id: [] for v in snapshot.vehicles}
    for r in snapshot.rsus:
        nbrs[r.id] = []
    for cand in candidates.v2v:
        a, b = cand.edge
        nbrs[a].append((b, cand.distance))
        nbrs[b].append((a, cand.distance))
    for cand in candidates.v2i:
        vid, rid = cand.edge
        nbrs[vid].append((rid, cand.distance))
        nbrs[rid].append((vid, cand.distance))
    for lst in nbrs.values():
        lst.sort()
    return nbrs


def _embed(values: np.ndarray) -> np.ndarray:
    """5-dim rows -> 6-dim rows with heading as (cos, sin)."""
    out = np.empty((values.shape[0], FEATURE_DIM + 1))
    out[:, 0:3] = values[:, 0:3]
    out[:, 3] = np.cos(values[:, 3])
    out[:, 4] = np.sin(values[:, 3])
    out[:, 5] = values[:, 4]
    return out


def _unembed(embedded: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_embed`; a cancelled-out heading keeps its old value."""
    out = np.empty((embedded.shape[0], FEATURE_DIM))
    out[:, 0:3] = embedded[:, 0:3]
    out[:, 4] = embedded[:, 5]
    for i in range(embedded.shape[0]):
        c, s = embedded[i, 3], embedded[i, 4]
        if math.hypot(c, s) < 1e-12:
            out[i, 3] = previous[i, 3]
        else:
            out[i, 3] = normalize_heading(math.atan2(s, c))
    return out


def fuse_step(
    features: FeatureMatrix,
    nbrs: Mapping[str, Sequence[tuple[str, float]]],
    params: FusionParams,
) -> FeatureMatrix:
    """One synchronous fusion round over previous-round features.

    Isolated nodes keep their vector unchanged; everyone else moves toward
    the distance-weighted neighborhood average with its type's self weight.
    """
    index = {nid: i for i, nid in enumerate(features.ids)}
    emb = _embed(features.values)
    new_emb = emb.copy()
    for i, nid in enumerate(features.ids):
        neighbor_list = nbrs.get(nid, ())
        if not neighbor_list:
            continue
        idxs = [index[other] for other, _ in neighbor_list]
        w = neighbor_weights([d for _, d in neighbor_list], params.decay_lambda)
        aggregated = w @ emb[idxs]
        w_self = (
            params.self_weight_vehicle if i < features.n_vehicles else params.self_weight_rsu
        )
        new_emb[i] = w_self * emb[i] + (1.0 - w_self) * aggregated
    return FeatureMatrix(
        ids=features.ids,
        values=_unembed(new_emb, features.values),
        n_vehicles=features.n_vehicles,
    )


@dataclass(frozen=True)
class FusionResult:
    features: FeatureMatrix
    rounds_used: int
    converged: bool


def run_fusion(
    features: FeatureMatrix,
    nbrs: Mapping[str, Sequence[tuple[str, float]]],
    params: FusionParams,
) -> FusionResult:
    """Iterate fusion rounds until the max per-node change (Euclidean norm
    over the raw 5-vector, RSU rows included) drops below epsilon or the
    round cap is reached."""
    current = features
    rounds = 0
    converged = False
    while rounds < params.max_rounds:
        nxt = fuse_step(current, nbrs, params)
        rounds += 1
        if current.values.size:
            delta_max = float(
                np.max(np.linalg.norm(nxt.values - current.values, axis=1))
            )
        else:
            delta_max = 0.0
        current = nxt
        if delta_max < params.epsilon:
            converged = True
            break
    return FusionResult(features=current, rounds_used=rounds, converged=converged)
