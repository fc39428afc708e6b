"""Experiment orchestration: config files, the per-step control loop, and
summary statistics.

The per-step loop for the hierarchical scheme is: snapshot -> candidate
links/demand -> feature extraction -> fusion -> gated topology adjustment ->
metrics -> controller updates.  Baselines rebuild their strategy every step
and skip fusion and adjustment.  All randomness flows from the single run
seed; outputs are append-only CSV so a crashed run keeps its rows.
"""

from __future__ import annotations

import configparser
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines, fusion, metrics, mobility, netgraph, optimizer, regulation

ALGORITHMS = ("hierarchical", "greedy", "shortest_path", "motif")

CSV_HEADER = (
    "step,algorithm,L_avg,mean_delay_s,throughput_mbps,connectivity_rate,"
    "pair_count,mode,Q,delta,applied"
)


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, bad value, missing file)."""


class RunError(RuntimeError):
    """Failure while executing an experiment."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_SCHEMA: dict[str, dict[str, type]] = {
    "scenario": {"source": str, "trace_path": str, "trace_format": str, "trace_geo": bool},
    "synthetic": {
        "grid_rows": int,
        "grid_cols": int,
        "spacing_m": float,
        "speed_limit_mps": float,
        "accel_max_mps2": float,
        "spawn_rate": float,
        "target_start": float,
        "target_end": float,
        "turn_straight": float,
        "turn_left": float,
        "turn_right": float,
        "step_duration_s": float,
    },
    "rsu": {"strategy": str, "count": int, "capacity_mbps": float, "manual_coords": str},
    "network": {
        "r_v2v": float,
        "r_v2i": float,
        "delta_v2v": int,
        "delta_v2i": int,
        "alpha": float,
        "r_th": float,
        "d0": float,
        "demand_th": float,
    },
    "delay": {"k_v": float, "k_i": float, "tau_v_s": float, "tau_i_s": float, "packet_bits": float},
    "bandwidth": {"v2v_base_mbps": float},
    "throughput": {"eta_v": float, "eta_i": float, "p_loss_per_hop": float},
    "fusion": {
        "decay_lambda": float,
        "self_weight_vehicle": float,
        "self_weight_rsu": float,
        "max_rounds": int,
        "epsilon": float,
    },
    "regulation": {
        "t_norm_init": float,
        "l_norm_init": float,
        "lambda1_init": float,
        "sigma_ref": float,
        "gamma": float,
        "delta_lambda": float,
        "q_urgent_th": float,
        "q_urgent": float,
        "lambda_min": float,
        "lambda_max": float,
        "history_capacity": int,
    },
    "solver": {
        "xi": float,
        "zeta": float,
        "q0": float,
        "delta0": float,
        "k_min": int,
        "exact_max_nodes": int,
        "exact_max_links": int,
        "lifetime_min_cycles": float,
        "motif_window": int,
    },
    "run": {"algorithm": str, "seed": int, "steps": int, "warmup": int},
}


@dataclass
class ExperimentConfig:
    """Fully validated experiment description."""

    source: str = "synthetic"
    trace_path: str = ""
    trace_format: str = "csv"
    trace_geo: bool = False
    synthetic: mobility.SyntheticMobilityConfig = field(
        default_factory=mobility.SyntheticMobilityConfig
    )
    rsu_strategy: str = "grid"
    rsu_count: int = 4
    rsu_capacity_mbps: float = 100.0
    rsu_manual: tuple[tuple[float, float], ...] = ()
    net: netgraph.NetworkParams = field(default_factory=netgraph.NetworkParams)
    delay: metrics.DelayParams = field(default_factory=metrics.DelayParams)
    bandwidth: metrics.BandwidthModel = field(default_factory=metrics.BandwidthModel)
    throughput: metrics.ThroughputParams = field(default_factory=metrics.ThroughputParams)
    fusion: fusion.FusionParams = field(default_factory=fusion.FusionParams)
    solver: optimizer.SolverParams = field(default_factory=optimizer.SolverParams)
    motif_window: int = 50
    t_norm_init: float = 0.05
    l_norm_init: float = 10.0
    lambda1_init: float = 0.5
    sigma_ref: float = 0.01
    gamma: float = 1.2
    delta_lambda: float = 0.05
    q_urgent_th: float = 0.5
    q_urgent: float = 0.5
    lambda_min: float = 0.1
    lambda_max: float = 0.9
    history_capacity: int = 200
    algorithm: str = "hierarchical"
    seed: int = 42
    steps: int = 500
    warmup: int = 50

    def make_regulation_state(self) -> regulation.RegulationState:
        return regulation.RegulationState(
            t_norm=self.t_norm_init,
            l_norm=self.l_norm_init,
            lambda1=self.lambda1_init,
            lambda2=1.0 - self.lambda1_init,
            sigma_ref=self.sigma_ref,
            gamma=self.gamma,
            delta_lambda=self.delta_lambda,
            q_urgent_th=self.q_urgent_th,
            lambda_min=self.lambda_min,
            lambda_max=self.lambda_max,
            history_capacity=self.history_capacity,
        )


def _coerce(raw: str, typ: type, section: str, key: str):
    try:
        if typ is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from exc


def _parse_manual_coords(raw: str) -> tuple[tuple[float, float], ...]:
    coords = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ConfigError(f"[rsu] manual_coords: bad coordinate {chunk!r}")
        coords.append((float(parts[0]), float(parts[1])))
    return tuple(coords)


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate the sectioned key-value config file.

    Unknown sections or keys are rejected so typos cannot silently fall
    back to defaults.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.RawConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            values[section][key] = _coerce(raw, _SCHEMA[section][key], section, key)

    cfg = ExperimentConfig()

    def pick(section: str, key: str, default):
        return values.get(section, {}).get(key, default)

    cfg.source = str(pick("scenario", "source", cfg.source))
    if cfg.source not in ("synthetic", "trace"):
        raise ConfigError(f"[scenario] source must be 'synthetic' or 'trace', got {cfg.source!r}")
    cfg.trace_path = str(pick("scenario", "trace_path", cfg.trace_path))
    cfg.trace_format = str(pick("scenario", "trace_format", cfg.trace_format))
    if cfg.trace_format not in ("csv", "fcd-xml"):
        raise ConfigError(f"[scenario] trace_format must be 'csv' or 'fcd-xml'")
    cfg.trace_geo = bool(pick("scenario", "trace_geo", cfg.trace_geo))

    cfg.algorithm = str(pick("run", "algorithm", cfg.algorithm))
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"[run] algorithm must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    cfg.seed = int(pick("run", "seed", cfg.seed))
    cfg.steps = int(pick("run", "steps", cfg.steps))
    if cfg.steps < 0:
        raise ConfigError("[run] steps must be >= 0")
    cfg.warmup = int(pick("run", "warmup", cfg.warmup))

    syn = values.get("synthetic", {})
    try:
        cfg.synthetic = mobility.SyntheticMobilityConfig(
            steps=cfg.steps, **{k: v for k, v in syn.items()}
        )
        cfg.net = netgraph.NetworkParams(**values.get("network", {}))
        cfg.delay = metrics.DelayParams(**values.get("delay", {}))
        cfg.bandwidth = metrics.BandwidthModel(**values.get("bandwidth", {}))
        cfg.throughput = metrics.ThroughputParams(**values.get("throughput", {}))
        cfg.fusion = fusion.FusionParams(**values.get("fusion", {}))
        solver_map = dict(values.get("solver", {}))
        cfg.motif_window = int(solver_map.pop("motif_window", cfg.motif_window))
        cfg.solver = optimizer.SolverParams(**solver_map)
    except (ValueError, mobility.ConfigError) as exc:
        raise ConfigError(str(exc)) from exc

    reg = values.get("regulation", {})
    for key, val in reg.items():
        setattr(cfg, key if not key.endswith("_init") else key, val)
    for key in ("t_norm_init", "l_norm_init", "lambda1_init", "sigma_ref", "gamma",
                "delta_lambda", "q_urgent_th", "q_urgent", "lambda_min", "lambda_max"):
        if key in reg:
            setattr(cfg, key, float(reg[key]))
    if "history_capacity" in reg:
        cfg.history_capacity = int(reg["history_capacity"])

    rsu = values.get("rsu", {})
    cfg.rsu_strategy = str(rsu.get("strategy", cfg.rsu_strategy))
    cfg.rsu_count = int(rsu.get("count", cfg.rsu_count))
    cfg.rsu_capacity_mbps = float(rsu.get("capacity_mbps", cfg.rsu_capacity_mbps))
    if "manual_coords" in rsu:
        cfg.rsu_manual = _parse_manual_coords(str(rsu["manual_coords"]))
    return cfg


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------


def build_snapshots(cfg: ExperimentConfig) -> list[mobility.NetworkSnapshot]:
    """Materialize the snapshot stream (synthetic or trace) with RSUs attached."""
    if cfg.source == "synthetic":
        snaps = mobility.generate_synthetic(cfg.synthetic, cfg.seed)
        extent = cfg.synthetic.extent
        bounds = (0.0, 0.0, extent[0], extent[1])
    else:
        trace = Path(cfg.trace_path)
        if not trace.is_file():
            raise ConfigError(f"trace file not found: {trace}")
        if cfg.trace_format == "fcd-xml":
            with open(trace, "rb") as fh:
                snaps = mobility.parse_fcd_xml(fh, geo=cfg.trace_geo)
        else:
            with open(trace, "r", encoding="utf-8") as fh:
                snaps = mobility.parse_csv_trace(fh)
        snaps = snaps[: cfg.steps] if cfg.steps else snaps
        xs = [v.pos_x for s in snaps for v in s.vehicles]
        ys = [v.pos_y for s in snaps for v in s.vehicles]
        if xs:
            bounds = (min(xs), min(ys), max(xs), max(ys))
        else:
            bounds = (0.0, 0.0, 1.0, 1.0)
    rsus = mobility.place_rsus(
        bounds,
        cfg.rsu_count,
        strategy=cfg.rsu_strategy,
        manual=cfg.rsu_manual or None,
        bandwidth_capacity=cfg.rsu_capacity_mbps,
    )
    return mobility.attach_rsus(snaps, rsus)


# ---------------------------------------------------------------------------
# Per-step loop
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(x, ".10g")


@dataclass(frozen=True)
class StepDecision:
    """Per-step optimizer decision entry (hierarchical runs only)."""

    step: int
    mode: str
    q: float
    delta: float
    verification_passed: bool
    verification_reason: Optional[str]
    applied: bool
    unsatisfied_pairs: tuple[tuple[str, str], ...]


@dataclass
class ExperimentResult:
    algorithm: str
    records: list[metrics.MetricsRecord]
    summary: "SummaryStats"
    decisions: list[StepDecision]
    csv_path: Optional[Path] = None


def _csv_row(rec: metrics.MetricsRecord, algorithm: str,
             outcome: Optional[optimizer.CandidateOutcome]) -> str:
    if outcome is None:
        tail = ",,,"
    else:
        tail = (
            f"{outcome.mode},{_fmt(outcome.q)},{_fmt(outcome.delta)},"
            f"{1 if outcome.applied else 0}"
        )
    return (
        f"{rec.step},{algorithm},{_fmt(rec.l_avg)},{_fmt(rec.mean_delay_s)},"
        f"{_fmt(rec.throughput_mbps)},{_fmt(rec.connectivity_rate)},{rec.pair_count},{tail}"
    )


def run_experiment(
    cfg: ExperimentConfig,
    algorithm: Optional[str] = None,
    out_dir: Optional[str | Path] = None,
    snapshots: Optional[Sequence[mobility.NetworkSnapshot]] = None,
) -> ExperimentResult:
    """Run one algorithm over the configured scenario.

    ``snapshots`` lets callers (e.g. ``compare``) generate the mobility
    stream once and reuse it.  When ``out_dir`` is given a per-step CSV is
    written incrementally (header first, one flushed row per step).
    """
    algorithm = algorithm or cfg.algorithm
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    if snapshots is None:
        snapshots = build_snapshots(cfg)

    sink = None
    csv_path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{algorithm}.csv"
        sink = open(csv_path, "w", encoding="utf-8", newline="\n")
        sink.write(CSV_HEADER + "\n")
        sink.flush()

    records: list[metrics.MetricsRecord] = []
    decisions: list[StepDecision] = []
    try:
        if algorithm == "hierarchical":
            _run_hierarchical(cfg, snapshots, records, decisions, sink)
        else:
            _run_baseline(cfg, algorithm, snapshots, records, sink)
    finally:
        if sink is not None:
            sink.close()
    summary = summarize(records, warmup=cfg.warmup)
    return ExperimentResult(
        algorithm=algorithm,
        records=records,
        summary=summary,
        decisions=decisions,
        csv_path=csv_path,
    )


def _run_hierarchical(cfg, snapshots, records, decisions, sink) -> None:
    state = cfg.make_regulation_state()
    current = netgraph.LinkStrategy.empty()
    for snap in snapshots:
        current = optimizer.prune_strategy(current, snap, cfg.net)
        candidates = netgraph.candidate_links(snap, cfg.net)
        demand = netgraph.demand_matrix(snap, cfg.net)
        pairs = netgraph.key_pairs(snap, demand, cfg.net)
        feats = fusion.extract_features(snap, demand, cfg.net)
        nbrs = fusion.neighborhoods(snap, candidates)
        fused = fusion.run_fusion(feats, nbrs, cfg.fusion).features

        outcome = optimizer.adjust(
            current, snap, fused, candidates, pairs, state,
            cfg.solver, cfg.net, cfg.delay, cfg.bandwidth,
        )
        current = outcome.strategy
        topo = netgraph.Topology(snap, current, cfg.net)
        ev = outcome.candidate_eval if outcome.applied else outcome.current_eval
        stats = netgraph.graph_stats(topo)
        w = metrics.throughput(topo, cfg.throughput, cfg.bandwidth, ev.l_avg)
        rec = metrics.MetricsRecord(
            step=snap.step,
            l_avg=ev.l_avg,
            mean_delay_s=ev.mean_delay_s,
            throughput_mbps=w,
            connectivity_rate=stats.connectivity_rate,
            pair_count=len(pairs),
        )
        records.append(rec)
        decisions.append(
            StepDecision(
                step=snap.step,
                mode=outcome.mode,
                q=outcome.q,
                delta=outcome.delta,
                verification_passed=outcome.verification_passed,
                verification_reason=outcome.verification_reason,
                applied=outcome.applied,
                unsatisfied_pairs=outcome.unsatisfied_pairs,
            )
        )
        # controller updates come after the metrics read
        samples = [ev.delays[k] for k in sorted(ev.delays)]
        regulation.update_t_norm(state, samples)
        regulation.update_l_norm(state, float(ev.l_max), float(stats.diameter))
        regulation.update_weights(state, cfg.q_urgent)
        if abs(state.lambda1 + state.lambda2 - 1.0) > 1e-12:
            raise RunError(f"weight invariant broken at step {snap.step}")
        if sink is not None:
            sink.write(_csv_row(rec, "hierarchical", outcome) + "\n")
            sink.flush()


def _run_baseline(cfg, algorithm, snapshots, records, sink) -> None:
    tracker = baselines.MotifTracker(window=cfg.motif_window) if algorithm == "motif" else None
    for snap in snapshots:
        candidates = netgraph.candidate_links(snap, cfg.net)
        demand = netgraph.demand_matrix(snap, cfg.net)
        pairs = netgraph.key_pairs(snap, demand, cfg.net)
        if algorithm == "greedy":
            strategy = baselines.greedy_build(snap, candidates, cfg.net)
        elif algorithm == "shortest_path":
            strategy = baselines.shortest_path_build(snap, candidates, pairs, cfg.net)
        else:
            tracker.observe(snap, candidates)
            strategy = baselines.motif_build(tracker, snap, candidates, cfg.net)
        topo = netgraph.Topology(snap, strategy, cfg.net)
        ev = metrics.evaluate_pairs(topo, pairs, cfg.delay, cfg.bandwidth)
        w = metrics.throughput(topo, cfg.throughput, cfg.bandwidth, ev.l_avg)
        rec = metrics.MetricsRecord(
            step=snap.step,
            l_avg=ev.l_avg,
            mean_delay_s=ev.mean_delay_s,
            throughput_mbps=w,
            connectivity_rate=netgraph.connectivity_rate(topo),
            pair_count=len(pairs),
        )
        records.append(rec)
        if sink is not None:
            sink.write(_csv_row(rec, algorithm, None) + "\n")
            sink.flush()


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSummary:
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    mean: float
    stddev: float


@dataclass(frozen=True)
class TrendFit:
    slope: float
    intercept: float
    slope_stderr: float


def linear_trend(xs: Sequence[float], ys: Sequence[float]) -> Optional[TrendFit]:
    """Least-squares line with the standard error of the slope.

    Returns None when fewer than 2 points or zero x-variance.
    """
    n = len(xs)
    if n < 2:
        return None
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    sxx = float(((x - x.mean()) ** 2).sum())
    if sxx == 0.0:
        return None
    slope = float(((x - x.mean()) * (y - y.mean())).sum() / sxx)
    intercept = float(y.mean() - slope * x.mean())
    if n > 2:
        resid = y - (slope * x + intercept)
        s2 = float((resid**2).sum()) / (n - 2)
        stderr = math.sqrt(s2 / sxx)
    else:
        stderr = 0.0
    return TrendFit(slope=slope, intercept=intercept, slope_stderr=stderr)


@dataclass(frozen=True)
class SummaryStats:
    """Distribution summaries plus the path-length/connectivity relationship.

    Quartiles use linear interpolation; stddev is the population form.
    ``flags`` names any statistic that was undefined for the input
    (too few records, or degenerate variance for the correlation).
    """

    n_records: int
    per_metric: dict[str, MetricSummary]
    pearson_r: Optional[float]
    slope: Optional[float]
    intercept: Optional[float]
    flags: tuple[str, ...]


_SUMMARY_METRICS = ("l_avg", "mean_delay_s", "throughput_mbps", "connectivity_rate")


def summarize(records: Sequence[metrics.MetricsRecord], warmup: int = 0) -> SummaryStats:
    """Post-warmup distribution stats and the connectivity/path-length fit."""
    used = [r for r in records if r.step >= warmup]
    flags: list[str] = []
    per_metric: dict[str, MetricSummary] = {}
    if not used:
        return SummaryStats(
            n_records=0,
            per_metric={},
            pearson_r=None,
            slope=None,
            intercept=None,
            flags=("no_records",),
        )
    for name in _SUMMARY_METRICS:
        vals = np.array([getattr(r, name) for r in used], dtype=float)
        q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
        per_metric[name] = MetricSummary(
            minimum=float(vals.min()),
            q1=float(q1),
            median=float(med),
            q3=float(q3),
            maximum=float(vals.max()),
            mean=float(vals.mean()),
            stddev=float(vals.std()),
        )
    pearson = slope = intercept = None
    if len(used) >= 2:
        xs = np.array([r.connectivity_rate for r in used])
        ys = np.array([r.l_avg for r in used])
        if xs.std() > 0.0 and ys.std() > 0.0:
            pearson = float(np.corrcoef(xs, ys)[0, 1])
            fit = linear_trend(xs.tolist(), ys.tolist())
            slope, intercept = fit.slope, fit.intercept
        else:
            flags.append("correlation_undefined")
    else:
        flags.append("correlation_needs_2_records")
    return SummaryStats(
        n_records=len(used),
        per_metric=per_metric,
        pearson_r=pearson,
        slope=slope,
        intercept=intercept,
        flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# Multi-algorithm comparison
# ---------------------------------------------------------------------------


def thread_cap() -> int:
    """Worker cap from VANET_SIM_THREADS (0 or unset means auto)."""
    raw = os.environ.get("VANET_SIM_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = min(4, os.cpu_count() or 1)
    return cap


def compare(cfg: ExperimentConfig, out_dir: str | Path) -> dict[str, ExperimentResult]:
    """Run all four algorithms on the identical snapshot stream.

    Writes one per-step CSV per algorithm plus ``comparison.txt`` with the
    post-warmup headline numbers.  Byte-identical for identical
    (config, seed).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snapshots = build_snapshots(cfg)

    def one(algorithm: str) -> tuple[str, ExperimentResult]:
        return algorithm, run_experiment(cfg, algorithm=algorithm, out_dir=out, snapshots=snapshots)

    workers = thread_cap()
    results: dict[str, ExperimentResult] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(ALGORITHMS))) as pool:
            for algorithm, result in pool.map(one, ALGORITHMS):
                results[algorithm] = result
    else:
        for algorithm in ALGORITHMS:
            results[algorithm] = one(algorithm)[1]

    table_path = out / "comparison.txt"
    with open(table_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# post-warmup summary (quartiles: linear interpolation; "
                 f"warmup = {cfg.warmup} steps)\n")
        fh.write("algorithm,L_avg_median,mean_delay_s_median,throughput_mbps_mean\n")
        for algorithm in ALGORITHMS:
            s = results[algorithm].summary
            if s.n_records == 0:
                fh.write(f"{algorithm},,,\n")
                continue
            fh.write(
                f"{algorithm},{_fmt(s.per_metric['l_avg'].median)},"
                f"{_fmt(s.per_metric['mean_delay_s'].median)},"
                f"{_fmt(s.per_metric['throughput_mbps'].mean)}\n"
            )
    return results
