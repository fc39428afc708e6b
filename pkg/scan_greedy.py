"""Batch scenario scan on the cheap algorithms (not shipped)."""
import itertools
import sys

import numpy as np

from vanetsim import harness, mobility, netgraph
import calibrate


def probe(spacing, n0, n1, d0, th, a0, a1, delay_steps, frac, mode="column"):
    cfg = calibrate.make_cfg(spacing, d0, th, n0, n1, 500)
    cfg.synthetic = mobility.SyntheticMobilityConfig(
        grid_rows=4, grid_cols=4, spacing_m=spacing,
        target_start=n0, target_end=n1, steps=500,
        attract_start=a0, attract_end=a1, attract_delay_steps=delay_steps,
        attract_mode=mode, attract_fraction=frac,
    )
    snaps = harness.build_snapshots(cfg)
    out = {}
    for alg in ("greedy", "motif"):
        res = harness.run_experiment(cfg, algorithm=alg, snapshots=snaps)
        rec = res.records
        s = harness.summarize(rec, warmup=50)
        fit = harness.linear_trend(list(range(450)), [r.mean_delay_s for r in rec[50:]])
        out[alg] = (s.pearson_r, fit.slope * 1e6, fit.slope_stderr * 1e6,
                    s.per_metric["l_avg"].median,
                    np.mean([r.pair_count for r in rec[50:]]),
                    np.mean([r.connectivity_rate for r in rec[50:]]))
    return out


if __name__ == "__main__":
    cases = [
        # spacing n0  n1  d0   th   a0   a1   delay frac
        (380, 64, 64, 900, 0.50, 0.0, 1.0, 150, 0.7),
        (470, 64, 64, 900, 0.40, 0.0, 1.0, 150, 0.7),
        (470, 56, 56, 900, 0.35, 0.0, 1.0, 150, 0.7),
        (470, 72, 48, 900, 0.40, 0.0, 1.0, 150, 0.8),
        (470, 64, 64, 900, 0.40, 0.0, 1.0, 250, 0.85),
        (470, 80, 48, 900, 0.45, 0.2, 0.9, 100, 1.0),
        (380, 72, 44, 900, 0.45, 0.0, 1.0, 150, 0.8),
        (470, 64, 40, 900, 0.40, 0.0, 0.0, 0, 1.0),   # pure thinning, no attractor
        (470, 90, 42, 900, 0.45, 0.0, 0.0, 0, 1.0),   # strong thinning
    ]
    for case in cases:
        try:
            out = probe(*case)
        except Exception as exc:
            print(case, "FAILED:", exc)
            continue
        g = out["greedy"]
        m = out["motif"]
        print(f"sp={case[0]} N={case[1]}->{case[2]} th={case[4]} a={case[5]}->{case[6]}@{case[7]} f={case[8]}: "
              f"greedy r={g[0]:+.2f} slope={g[1]:+.1f}({g[2]:.1f}) L={g[3]:.2f} |C|={g[4]:.0f} conn={g[5]:.2f} | "
              f"motif r={m[0]:+.2f} slope={m[1]:+.1f}({m[2]:.1f}) L={m[3]:.2f}", flush=True)
