"""Controller memory: normalization constants, objective weights, gating.

Keeps the per-run state that makes delay and hop counts commensurable in
the composite objective, updated once per control step: a 3-sigma-filtered
delay history feeding an exponentially weighted max (T_norm), a
diameter-guarded hop ceiling (L_norm), and stepwise-adapted weights that
always sum to one.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence


@dataclass
class RegulationState:
    """Mutable controller state; exactly one writer per step."""

    t_norm: float = 0.05
    l_norm: float = 10.0
    lambda1: float = 0.5
    lambda2: float = 0.5
    beta: float = 0.5
    sigma_ref: float = 0.01
    gamma: float = 1.2
    delta_lambda: float = 0.05
    q_urgent_th: float = 0.5
    lambda_min: float = 0.1
    lambda_max: float = 0.9
    history_capacity: int = 200
    delay_history: deque = field(default_factory=lambda: deque(maxlen=200))

    def __post_init__(self) -> None:
        if self.delay_history.maxlen != self.history_capacity:
            self.delay_history = deque(self.delay_history, maxlen=self.history_capacity)
        self._check()

    def _check(self) -> None:
        assert abs(self.lambda1 + self.lambda2 - 1.0) < 1e-12, "weights must sum to 1"
        assert self.t_norm > 0.0 and self.l_norm >= 1.0


def filter_3sigma(samples: Sequence[float]) -> list[float]:
    """Drop samples outside mean +- 3 population-stddev.

    Fewer than 3 samples pass through unchanged (the spread is undefined
    or degenerate).
    """
    vals = list(samples)
    if len(vals) < 3:
        return vals
    mean = sum(vals) / len(vals)
    var = sum((v - mean) ** 2 for v in vals) / len(vals)
    sigma = math.sqrt(var)
    lo, hi = mean - 3.0 * sigma, mean + 3.0 * sigma
    return [v for v in vals if lo <= v <= hi]


def ewma_norm(t_max_real: float, t_norm_prev: float, beta: float) -> float:
    """Exponentially weighted blend of the current valid max and history."""
    return beta * t_max_real + (1.0 - beta) * t_norm_prev


def update_t_norm(state: RegulationState, new_samples: Iterable[float]) -> RegulationState:
    """Fold fresh delay samples into the normalization constant.

    The blend weight follows the volatility of the filtered window:
    beta = clamp(sigma / sigma_ref, 0.2, 0.8), so turbulent periods trust
    the recent maximum more.
    """
    state.delay_history.extend(new_samples)
    filtered = filter_3sigma(list(state.delay_history))
    if not filtered:
        return state
    t_max_real = max(filtered)
    mean = sum(filtered) / len(filtered)
    sigma = math.sqrt(sum((v - mean) ** 2 for v in filtered) / len(filtered))
    state.beta = min(max(sigma / state.sigma_ref, 0.2), 0.8)
    state.t_norm = ewma_norm(t_max_real, state.t_norm, state.beta)
    state._check()
    return state


def update_l_norm(state: RegulationState, l_max_real: float, diameter: float) -> RegulationState:
    """Hop-count ceiling: max of the observed worst path and the safety-scaled
    diameter, floored at 1."""
    if l_max_real < 0 or diameter < 0:
        raise ValueError("l_max_real and diameter must be >= 0")
    state.l_norm = max(l_max_real, state.gamma * diameter, 1.0)
    state._check()
    return state


def update_weights(state: RegulationState, q_urgent: float) -> RegulationState:
    """Stepwise weight shift toward delay when urgent traffic dominates."""
    sign = 0.0
    if q_urgent > state.q_urgent_th:
        sign = 1.0
    elif q_urgent < state.q_urgent_th:
        sign = -1.0
    state.lambda1 = min(
        max(state.lambda1 + state.delta_lambda * sign, state.lambda_min), state.lambda_max
    )
    state.lambda2 = 1.0 - state.lambda1
    state._check()
    return state


def composite_objective(state: RegulationState, l_avg: float, mean_delay_s: float) -> float:
    """Weighted normalized score (lower is better)."""
    return state.lambda1 * (l_avg / state.l_norm) + state.lambda2 * (mean_delay_s / state.t_norm)


def improvement_rate(
    state: RegulationState,
    before_l_avg: float,
    before_delay: float,
    after_l_avg: float,
    after_delay: float,
) -> tuple[float, bool]:
    """Joint relative gain of a candidate over the current topology.

    Returns (delta, degenerate): a zero baseline on an axis drops that
    term (no improvement measurable there) and sets the degenerate flag.
    """
    delta = 0.0
    degenerate = False
    if before_l_avg > 0.0:
        delta += state.lambda1 * (before_l_avg - after_l_avg) / (before_l_avg * state.l_norm)
    else:
        degenerate = True
    if before_delay > 0.0:
        delta += state.lambda2 * (before_delay - after_delay) / (before_delay * state.t_norm)
    else:
        degenerate = True
    return delta, degenerate


# ---------------------------------------------------------------------------
# Checkpointing (key = value text, one field per line)
# ---------------------------------------------------------------------------

_SCALAR_FIELDS = (
    "t_norm",
    "l_norm",
    "lambda1",
    "lambda2",
    "beta",
    "sigma_ref",
    "gamma",
    "delta_lambda",
    "q_urgent_th",
    "lambda_min",
    "lambda_max",
)


def save_state(state: RegulationState, sink: IO[str]) -> None:
    for name in _SCALAR_FIELDS:
        sink.write(f"{name} = {getattr(state, name)!r}\n")
    sink.write(f"history_capacity = {state.history_capacity}\n")
    joined = ",".join(repr(v) for v in state.delay_history)
    sink.write(f"delay_history = {joined}\n")


def load_state(source: IO[str]) -> RegulationState:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"checkpoint line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    kwargs = {name: float(fields[name]) for name in _SCALAR_FIELDS}
    capacity = int(fields["history_capacity"])
    history = fields.get("delay_history", "")
    samples = [float(v) for v in history.split(",") if v]
    return RegulationState(
        history_capacity=capacity,
        delay_history=deque(samples, maxlen=capacity),
        **kwargs,
    )
