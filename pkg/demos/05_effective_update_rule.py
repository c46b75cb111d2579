"""What one SGD step on the factors does to the effective weight.

Descending on B and A with the layer at W + s B A moves the effective weight
by -eta * g_hat where, writing g for the plain weight gradient,

    g_hat = s^2 (B B^T g + g A^T A) - s^3 eta (g A^T B^T g).

The verifier takes one real coupled step and compares: with only the
first-order term the residual shrinks ~100x per eta decade; with both terms
the single-step expansion is exact to rounding. The quadratic term rewards
aligning B with A, which is why the scale s is not just a learning rate --
as the Adam contrast below makes concrete.
"""

import numpy as np

from ltelab import (
    AdamState,
    OptimConfig,
    RandomSource,
    adamw_step,
    gen_least_squares,
    sample_batch,
    sgd_step,
    verify_effective_update,
)

rng = RandomSource(42)
W = rng.child("w").standard_normal((8, 6))
A = rng.child("a").standard_normal((3, 6)) * 0.4
B = rng.child("b").standard_normal((8, 3)) * 0.4
task = gen_least_squares(8, 6, 6, rng.child("task"))
batch = sample_batch(task, 32, rng.child("batch"))

report = verify_effective_update(W, A, B, batch, s=2.0, etas=(1e-2, 1e-3, 1e-4))
print("confirmed sign convention:", report.confirmed_convention)
print(f"{'eta':>8} {'|update|':>12} {'first-order residual':>22} {'both terms':>12}")
for eta, upd, r1, r2 in zip(report.etas, report.update_norms,
                            report.residual_first, report.residual_both):
    print(f"{eta:>8.0e} {upd:>12.4e} {r1:>22.4e} {r2:>12.4e}")
print("decade ratios of the first-order residual:",
      [f"{r:.1f}" for r in report.first_order_ratios], "(~100 = quadratic in eta)")
print("\nfirst-order residual at eta = 1e-4 under each sign convention:")
for name, value in sorted(report.first_order_by_convention.items()):
    print(f"  {name:>16}: {value:.3e}")

# The scale s is not a learning-rate knob: Adam normalizes it away entirely
# (at eps = 0), while SGD is exactly linear in it.
print("\nscaling every gradient by s = 64:")
cfg = OptimConfig(eta=0.01, eps=0.0)
grads = [rng.child("g", i).standard_normal((4, 4)) for i in range(50)]
p1 = np.ones((4, 4)); p2 = np.ones((4, 4))
s1 = AdamState.zeros((4, 4)); s2 = AdamState.zeros((4, 4))
for g in grads:
    p1, s1 = adamw_step(p1, g, s1, cfg)
    p2, s2 = adamw_step(p2, 64.0 * g, s2, cfg)
print(f"  AdamW (eps=0): trajectories differ by {np.abs(p1 - p2).max():.1e}"
      "  -> invariant")
p = np.ones((4, 4))
g = grads[0]
print(f"  SGD: update grows by exactly {np.linalg.norm(p - sgd_step(p, 64 * g, 0.01)) / np.linalg.norm(p - sgd_step(p, g, 0.01)):.0f}x")
