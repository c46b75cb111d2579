"""Exactly-corrected merging at period 1 IS joint multi-head training.

Workers that keep their parameters across merges, subtract their stale
product (s/N) V in the forward pass, and merge (s/N) sum (B A - V) every step
follow the joint multi-head trajectory bit-for-bit (up to rounding): same
batches, same gradients, same optimizer states, so the effective weights
coincide to machine precision over hundreds of steps.
"""

import numpy as np

from ltelab import (
    ArchSpec,
    DatasetSpec,
    InitScheme,
    MergePolicy,
    OptimConfig,
    RunConfig,
    run_lte,
    run_mhlora,
    trajectory_deviation,
)


def config(mode, policy=None, optimizer="adamw"):
    return RunConfig(
        mode=mode,
        dataset=DatasetSpec(m=16, n=16, rank=16),
        arch=ArchSpec(dims=(16, 16)),
        n_heads=4,
        rank=4,
        alpha=8.0,
        optimizer=optimizer,
        optim=OptimConfig(eta=1e-3 if optimizer == "adamw" else 0.05),
        policy=policy or MergePolicy(period=1),
        batch_size=32,
        total_steps=200,
        snapshot_interval=1,
        seed=7,
        init=InitScheme("semi_orthogonal"),
        record_params=True,
    )


exact = MergePolicy(period=1, reset_B=False, reset_A=False, exact_correction=True)
lte = run_lte(config("lte", policy=exact))
mh = run_mhlora(config("mhlora"))

trace = trajectory_deviation(lte, mh)
print("effective-weight deviation vs step (AdamW, N=4, r=4):")
for idx in (1, 50, 100, 200):
    print(f"  step {idx:>3}: {trace.total[idx]:.3e}")

worst_param = 0.0
for snap_l, snap_m in zip(lte.snapshots, mh.snapshots):
    for heads_l, heads_m in zip(snap_l.params, snap_m.params):
        for (a_l, b_l), (a_m, b_m) in zip(heads_l, heads_m):
            worst_param = max(worst_param, np.abs(a_l - a_m).max(), np.abs(b_l - b_m).max())
print(f"\nworst parameter-level |difference| over all heads and steps: {worst_param:.3e}")

# Contrast: the reset-based averaged merge is NOT the same trajectory.
averaged = run_lte(config("lte", policy=MergePolicy(period=1, reset_B=True)))
trace_avg = trajectory_deviation(averaged, mh)
print(f"\nsame comparison with reset-based averaged merging: {trace_avg.total[-1]:.3e}"
      "\n(resets change the optimizer state story, so the paths differ)")
