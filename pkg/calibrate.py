"""Throwaway calibration scan for the bundled scenario (not shipped)."""
import sys
import time

import numpy as np

from vanetsim import harness, metrics, mobility, netgraph


def make_cfg(spacing, d0, th, t_start, t_end, steps, q_urgent=0.5):
    cfg = harness.ExperimentConfig()
    cfg.synthetic = mobility.SyntheticMobilityConfig(
        grid_rows=4, grid_cols=4, spacing_m=spacing,
        target_start=t_start, target_end=t_end, steps=steps,
    )
    cfg.net = netgraph.NetworkParams(d0=d0, demand_th=th)
    cfg.steps = steps
    cfg.warmup = 50
    cfg.seed = 42
    return cfg


def run(cfg, algs=("hierarchical", "greedy", "shortest_path", "motif")):
    snaps = harness.build_snapshots(cfg)
    res = {}
    for alg in algs:
        t0 = time.time()
        res[alg] = harness.run_experiment(cfg, algorithm=alg, snapshots=snaps)
        print(f"  {alg}: {time.time()-t0:.1f}s", flush=True)
    return res


def report(cfg, res):
    post = lambda recs: [r for r in recs if r.step >= cfg.warmup]
    hier = post(res["hierarchical"].records)
    print(f"  pair_count: mean {np.mean([r.pair_count for r in hier]):.1f} "
          f"min {min(r.pair_count for r in hier)} max {max(r.pair_count for r in hier)}")
    for alg in res:
        recs = post(res[alg].records)
        l = [r.l_avg for r in recs]
        d = [r.mean_delay_s for r in recs]
        w = [r.throughput_mbps for r in recs]
        c = [r.connectivity_rate for r in recs]
        fit = harness.linear_trend(list(range(len(d))), d)
        s = res[alg].summary
        print(f"  {alg:14s} L med {np.median(l):5.2f}  delay med {np.median(d)*1e3:7.3f}ms "
              f"slope {fit.slope*1e6:8.3f}us/step (se {fit.slope_stderr*1e6:6.3f})  "
              f"W mean {np.mean(w):7.1f}  conn {np.mean(c):.3f}  r {s.pearson_r}")
    hl = [r.l_avg for r in hier]
    for alg in ("greedy", "shortest_path", "motif"):
        bl = [r.l_avg for r in post(res[alg].records)]
        frac = np.mean([1.0 if h < b else 0.0 for h, b in zip(hl, bl)])
        print(f"  hier < {alg}: {frac*100:.0f}% of steps")


if __name__ == "__main__":
    spacing, d0, th = float(sys.argv[1]), float(sys.argv[2]), float(sys.argv[3])
    t_start, t_end = float(sys.argv[4]), float(sys.argv[5])
    steps = int(sys.argv[6]) if len(sys.argv) > 6 else 200
    cfg = make_cfg(spacing, d0, th, t_start, t_end, steps)
    print(f"spacing={spacing} d0={d0} th={th} target {t_start}->{t_end} steps={steps}")
    report(cfg, run(cfg))
