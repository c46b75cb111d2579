"""Acceptance suite: one test per shipping criterion, each printing a
pass/fail line (run with `pytest tests/test_acceptance.py -v -s` to see them).

Every tolerance below is fixed here, not tuned at runtime; the least-squares
runs use the merge recipe the synthetic task needs (B zeroed and A freshly
drawn at each merge, uniform fan-scaled), with learning rates recorded in the
config builders.
"""

import json
import math
import statistics
import time

import numpy as np
from conftest import exact_policy, ls_config

from ltelab.analysis import (
    effective_rank,
    grassman_distance,
    trajectory_deviation,
    update_rank_trace,
    verify_effective_update,
)
from ltelab.cli import main as cli_main
from ltelab.costmodel import CostInputs, cost_report
from ltelab.data import gen_least_squares, sample_batch
from ltelab.layers import LoraHead, LoraLinear
from ltelab.lte import KeyedOptimizer, MergePolicy, WorkerState, merge, run_lte, run_mhlora
from ltelab.network import Batch, Mode, Network, fd_check, forward
from ltelab.numerics import RandomSource
from ltelab.optim import AdamState, OptimConfig, adamw_step, sgd_step


def report(number: int, name: str, ok: bool) -> None:
    print(f"[acceptance {number:02d}] {name}: {'PASS' if ok else 'FAIL'}")


def recovery_config(mode, period, seed, eta=0.1, total_steps=20000, stop=None, n_heads=1,
                    batch_size=32):
    policy = MergePolicy(period=period, reset_B=True, reset_A=True)
    return ls_config(
        mode=mode, dim=32, n_heads=n_heads, rank=4, alpha=4.0, optimizer="sgd",
        eta=eta, policy=policy, batch_size=batch_size, total_steps=total_steps,
        snapshot_interval=total_steps, seed=seed, init_kind="xavier", stop_mse=stop,
    )


def test_01_least_squares_rank_recovery():
    """Full-rank 32x32 target, rank-4 head, SGD: merging recovers the
    solution, no merging plateaus, and more frequent merging recovers faster."""
    t0 = time.monotonic()

    no_merge = run_mhlora(ls_config(
        mode="lora", dim=32, n_heads=1, rank=4, alpha=4.0, optimizer="sgd", eta=0.1,
        batch_size=32, total_steps=3000, snapshot_interval=3000, seed=0,
        init_kind="xavier",
    ))
    merged = run_lte(recovery_config("lte", period=10, seed=0, stop=1e-6))

    medians = {}
    for period in (1, 10, 100):
        hits = []
        for seed in (0, 1, 2):
            res = run_lte(recovery_config("lte", period=period, seed=seed, stop=1e-4))
            hits.append(res.steps_to_mse(1e-4) or math.inf)
        medians[period] = statistics.median(hits)

    elapsed = time.monotonic() - t0
    reached = merged.steps_to_mse(1e-6)
    ok = (
        no_merge.final_mse() >= 10.0 * merged.final_mse()
        and reached is not None
        and reached <= 20000
        and medians[1] <= medians[10] <= medians[100] < math.inf
        and elapsed <= 60.0
    )
    report(1, "least-squares rank recovery", ok)
    assert no_merge.final_mse() >= 10.0 * merged.final_mse()
    assert reached is not None and reached <= 20000
    assert medians[1] <= medians[10] <= medians[100] < math.inf
    assert elapsed <= 60.0, f"runtime budget exceeded: {elapsed:.1f}s"


def test_02_mhlora_lte_equivalence():
    """Period-1 exactly-corrected parallel training reproduces joint
    multi-head training to 1e-10 over 200 steps, for every (N, r, optimizer)."""
    t0 = time.monotonic()
    worst = 0.0
    for optimizer in ("sgd", "adamw"):
        eta = 0.05 if optimizer == "sgd" else 1e-3
        for n_heads in (2, 4):
            for rank in (2, 4):
                common = dict(dim=16, n_heads=n_heads, rank=rank, alpha=2.0 * rank,
                              optimizer=optimizer, eta=eta, batch_size=32,
                              total_steps=200, snapshot_interval=1, seed=11)
                lte = run_lte(ls_config(mode="lte", policy=exact_policy(), **common))
                mh = run_mhlora(ls_config(mode="mhlora", **common))
                for snap_l, snap_m in zip(lte.snapshots, mh.snapshots):
                    for w_l, w_m in zip(snap_l.weights, snap_m.weights):
                        worst = max(worst, float(np.abs(w_l - w_m).max()))
    elapsed = time.monotonic() - t0
    ok = worst <= 1e-10 and elapsed <= 10.0
    report(2, f"MHLoRA equivalence (max deviation {worst:.2e})", ok)
    assert worst <= 1e-10
    assert elapsed <= 10.0, f"runtime budget exceeded: {elapsed:.1f}s"


def test_03_merge_function_preservation():
    """Merging with B reset never changes the multi-head function: 100 random
    layer configurations, 16 probe inputs each, 1e-12 elementwise."""
    rng = RandomSource(2024)
    worst = 0.0
    for trial in range(100):
        tr = rng.child("trial", trial)
        m = int(tr.child("m").integers(2, 17))
        n = int(tr.child("n").integers(2, 17))
        r = int(tr.child("r").integers(1, min(m, n) + 1))
        n_heads = int(tr.child("N").integers(1, 5))
        alpha = float(tr.child("alpha").uniform(0.5, 8.0, ()))
        heads = []
        for i in range(n_heads):
            heads.append(LoraHead(
                A=tr.child("A", i).standard_normal((r, n)),
                B=tr.child("B", i).standard_normal((m, r)),
            ))
        layer = LoraLinear(W=tr.child("W").standard_normal((m, n)), alpha=alpha, heads=heads)
        net = Network([layer])
        workers = [
            WorkerState(head_index=i, stream=None,
                        opt=KeyedOptimizer("sgd", OptimConfig(eta=0.1)),
                        corrections=[np.zeros((m, n))], use_correction=False)
            for i in range(n_heads)
        ]
        x = tr.child("probe").standard_normal((n, 16))
        before, _ = forward(net, x, Mode.multi())
        merge(net, workers, MergePolicy(period=1, reset_B=True))
        after, _ = forward(net, x, Mode.full())
        worst = max(worst, float(np.abs(before - after).max()))
    ok = worst <= 1e-12
    report(3, f"merge function preservation (max diff {worst:.2e})", ok)
    assert worst <= 1e-12


def test_04_staleness_monotonicity():
    """Deviation from the jointly-trained oracle at step 200 grows with the
    merge period (3-seed mean, 32x32 task)."""
    periods = (1, 5, 10, 25)
    devs = {p: [] for p in periods}
    for seed in (0, 1, 2):
        common = dict(dim=32, n_heads=4, rank=4, optimizer="sgd", eta=0.05,
                      batch_size=32, total_steps=200, snapshot_interval=200, seed=seed)
        mh = run_mhlora(ls_config(mode="mhlora", **common))
        for p in periods:
            lte = run_lte(ls_config(mode="lte", policy=exact_policy(period=p), **common))
            devs[p].append(float(trajectory_deviation(lte, mh).total[-1]))
    means = [float(np.mean(devs[p])) for p in periods]
    ok = all(a <= b + 1e-12 for a, b in zip(means, means[1:]))
    report(4, f"staleness monotonicity (means {['%.3g' % v for v in means]})", ok)
    assert ok


def test_05_effective_update_formula():
    """The closed-form effective gradient matches one real coupled SGD step:
    first-order-only residual decays one eta-order per decade (ratio in
    [50, 200]); with the second-order term the scalar case is exact."""
    rng = RandomSource(31)
    W = rng.child("W").standard_normal((6, 5))
    A = rng.child("A").standard_normal((2, 5)) * 0.5
    B = rng.child("B").standard_normal((6, 2)) * 0.5
    task = gen_least_squares(6, 5, 5, rng.child("task"))
    batch = sample_batch(task, 16, rng.child("batch"))
    rep = verify_effective_update(W, A, B, batch, s=2.0, etas=(1e-2, 1e-3, 1e-4))

    srng = RandomSource(32)
    s_task = gen_least_squares(1, 1, 1, srng.child("task"))
    s_rep = verify_effective_update(
        srng.child("W").standard_normal((1, 1)),
        srng.child("A").standard_normal((1, 1)),
        srng.child("B").standard_normal((1, 1)),
        sample_batch(s_task, 8, srng.child("batch")),
        s=4.0,
    )
    ratios_ok = all(50.0 <= r <= 200.0 for r in rep.first_order_ratios)
    scalar_ok = max(s_rep.residual_both) <= 1e-12
    ok = ratios_ok and scalar_ok
    report(
        5,
        f"effective-update formula (confirmed sign convention: "
        f"{rep.confirmed_convention}; decade ratios {['%.0f' % r for r in rep.first_order_ratios]})",
        ok,
    )
    print(f"    first-order-only residuals by convention at eta=1e-4: "
          f"{ {k: '%.2e' % v for k, v in rep.first_order_by_convention.items()} }")
    assert rep.confirmed_convention == "expansion"
    assert ratios_ok
    assert scalar_ok


def test_06_adam_scale_invariance():
    """Pre-scaling gradients by s = 64 leaves AdamW trajectories unchanged at
    eps = 0, measurably changes them at eps = 1e-8, and scales SGD exactly."""
    cfg0 = OptimConfig(eta=0.01, eps=0.0)
    rng = np.random.default_rng(5)
    grads = [rng.standard_normal((4, 3)) for _ in range(50)]
    p_a = np.ones((4, 3)); p_b = np.ones((4, 3))
    st_a = AdamState.zeros((4, 3)); st_b = AdamState.zeros((4, 3))
    for g in grads:
        p_a, st_a = adamw_step(p_a, g, st_a, cfg0)
        p_b, st_b = adamw_step(p_b, 64.0 * g, st_b, cfg0)
    invariant_diff = float(np.abs(p_a - p_b).max())

    cfg_eps = OptimConfig(eta=0.01, eps=1e-8)
    q_a = np.ones((2, 2)); q_b = np.ones((2, 2))
    su_a = AdamState.zeros((2, 2)); su_b = AdamState.zeros((2, 2))
    tiny = np.full((2, 2), 1e-6)
    for _ in range(50):
        q_a, su_a = adamw_step(q_a, tiny, su_a, cfg_eps)
        q_b, su_b = adamw_step(q_b, 64.0 * tiny, su_b, cfg_eps)
    eps_diff = float(np.abs(q_a - q_b).max())

    p = rng.standard_normal((4, 4))
    g = rng.standard_normal((4, 4))
    sgd_exact = np.array_equal(sgd_step(p, 64.0 * g, 0.1), p - 64.0 * (0.1 * g))

    ok = invariant_diff <= 1e-12 and eps_diff > 1e-6 and sgd_exact
    report(6, f"Adam scale invariance (eps=0 diff {invariant_diff:.1e}, "
              f"eps>0 diff {eps_diff:.1e})", ok)
    assert invariant_diff <= 1e-12
    assert eps_diff > 1e-6
    assert sgd_exact


def test_07_gradient_correctness():
    """200 randomized instances across all forward modes and both losses:
    analytic gradients match central differences at relative error 1e-6."""
    rng = RandomSource(77)
    modes = [Mode.full(), Mode.single(0), Mode.multi(), Mode.worker(0)]
    worst = 0.0
    for trial in range(200):
        tr = rng.child("t", trial)
        loss = ("mse", "softmax_ce")[trial % 2]
        mode = modes[(trial // 2) % 4]
        use_relu = trial % 3 == 0
        depth = 1 + trial % 2
        for attempt in range(20):
            at = tr.child("try", attempt)
            dims = [int(at.child("d", i).integers(2, 7)) for i in range(depth + 1)]
            n_heads = int(at.child("N").integers(1, 4))
            r = int(at.child("r").integers(1, min(dims) + 1))
            layers = []
            for li in range(depth):
                n_in, n_out = dims[li], dims[li + 1]
                # fan-in scaling keeps logits O(1); saturated softmax would
                # push true gradients below what finite differences resolve
                w_scale = 1.0 / math.sqrt(n_in)
                heads = [
                    LoraHead(A=at.child("A", li, i).standard_normal((r, n_in)) * 0.5 * w_scale,
                             B=at.child("B", li, i).standard_normal((n_out, r)) * 0.5)
                    for i in range(n_heads)
                ]
                layers.append(LoraLinear(
                    W=at.child("W", li).standard_normal((n_out, n_in)) * w_scale,
                    alpha=float(r) * 1.5, heads=heads,
                ))
            acts = ["relu" if use_relu else "identity"] * (depth - 1) + ["identity"]
            net = Network(layers, activations=acts, loss=loss)
            b = int(at.child("b").integers(1, 5))
            x = at.child("x").standard_normal((dims[0], b))
            if loss == "mse":
                out, cache = forward(net, x, mode)
                targets = out + 0.5 * at.child("y").standard_normal(out.shape)
            else:
                _, cache = forward(net, x, mode)
                targets = np.asarray(at.child("y").integers(0, dims[-1], size=b))
            margin = min(np.abs(c["z"]).min() for c in cache[:-1]) if depth > 1 else 1.0
            if not use_relu or margin > 1e-3:
                break
        # probe step near the central-difference optimum for O(1) third
        # derivatives; smaller steps let rounding noise dominate the tiniest
        # gradient coordinates
        err = fd_check(net, Batch(inputs=x, targets=targets), mode, step=1e-5,
                       num_params=32, rng=tr.child("probe"))
        worst = max(worst, err)
    ok = worst <= 1e-6
    report(7, f"gradient correctness (worst relative error {worst:.2e})", ok)
    assert worst <= 1e-6


def test_08_metric_units():
    """Spot values that pin the metric definitions and scales."""
    rank_i4 = effective_rank(np.eye(4))
    rank_211 = effective_rank(np.diag([2.0, 1.0, 1.0]))
    lines = grassman_distance(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]), 1)
    rng = np.random.default_rng(6)
    scale_ok = True
    for _ in range(20):
        m = rng.standard_normal((5, 7))
        c = float(rng.uniform(0.01, 50.0))
        scale_ok &= abs(effective_rank(c * m) - effective_rank(m)) <= 1e-12
    ok = (
        abs(rank_i4 - 4.0) <= 1e-12
        and abs(rank_211 - 2.0 * math.sqrt(2.0)) <= 1e-9
        and abs(lines - math.pi / 2) <= 1e-9
        and scale_ok
    )
    report(8, "metric units", ok)
    assert ok


def test_09_update_rank_growth():
    """Parallel heads with merging accumulate a high-rank weight change;
    a single head without merging cannot exceed its own rank."""
    lte = run_lte(ls_config(
        mode="lte", dim=32, n_heads=8, rank=4, alpha=4.0, optimizer="sgd", eta=0.1,
        policy=MergePolicy(period=10, reset_B=True, reset_A=True),
        batch_size=64, total_steps=4000, snapshot_interval=4000, seed=0,
        init_kind="xavier", stop_mse=1e-6,
    ))
    lte_rank = update_rank_trace(lte).cumulative_rank[-1, 0]

    single = run_mhlora(ls_config(
        mode="lora", dim=32, n_heads=1, rank=4, alpha=4.0, optimizer="sgd", eta=0.1,
        batch_size=64, total_steps=2000, snapshot_interval=2000, seed=0,
        init_kind="xavier",
    ))
    single_rank = update_rank_trace(single).cumulative_rank[-1, 0]

    converged = lte.final_mse() <= 1e-5
    ok = converged and lte_rank > 16.0 and single_rank <= 4.1
    report(9, f"update-rank growth (merged {lte_rank:.1f}, single-head {single_rank:.2f})", ok)
    assert converged
    assert lte_rank > 16.0
    assert single_rank <= 4.1


def test_10_cost_model():
    """Hand-evaluated cost formulas for the reference configuration, exact in
    integer arithmetic, including both readings of the all-reduce term."""
    from fractions import Fraction

    rep = cost_report(CostInputs(m=22.9e6, m_lte=1e6, n_ddp=8, n_lte=8, period=10, q=0.25))
    M, M_lte, q = Fraction(22_900_000), Fraction(1_000_000), Fraction(1, 4)
    checks = {
        "comm_allreduce_ddp": 8 * 7 * M,
        "comm_allreduce_lte_full_model": Fraction(8 * 7 * M, 10),
        "comm_allreduce_lte_adapters": Fraction(8 * 7 * M_lte, 10),
        "comm_ps_ddp": 2 * 7 * M,
        "comm_ps_lte": (7 * M_lte + 7 * q * M) / 10,
        "mem_ddp_per_device": 3 * M,
        "mem_lte_per_device": q * M + 3 * M_lte,
        "param_ratio": Fraction(M, M_lte),
    }
    ok = all(getattr(rep, field) == float(expected) for field, expected in checks.items())
    report(10, "cost model exactness", ok)
    for field, expected in checks.items():
        assert getattr(rep, field) == float(expected), field


def test_11_determinism(tmp_path):
    """Identical config and seed reproduce metrics.csv byte for byte."""
    cfg = {
        "mode": "lte",
        "dataset": {"m": 8, "n": 8, "rank": 8},
        "arch": {"dims": [8, 8]},
        "N": 2, "r": 2, "T": 5,
        "optim": {"eta": 0.05},
        "batch_size": 16,
        "total_steps": 40,
        "seed": 123,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli_main(["train", "--config", str(path), "--out", str(out_a)]) == 0
    assert cli_main(["train", "--config", str(path), "--out", str(out_b)]) == 0
    same = (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()
    report(11, "byte-identical rerun", same)
    assert same
