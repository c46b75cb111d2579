"""Measurement toolkit: effective rank, subspace alignment, trajectory
deviation, and the effective-update-rule verifier.

The functions here are read-only; they can be applied to live layers during a
run or to recorded snapshots afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import LoraLinear
from .network import Batch
from .numerics import Matrix, as_matrix, singular_values, svd

# Sign conventions for the first-order part of the effective-update formula.
# "expansion" is the one confirmed by verify_effective_update: expanding one
# simultaneous SGD step on (B, A) gives s^2 (B B^T g + g A^T A) exactly, both
# terms positive. The other two are historical variants that place a relative
# minus sign between the sandwich terms; they are kept selectable so the
# verifier can demonstrate that they fail.
UPDATE_CONVENTIONS = {
    "expansion": (1.0, 1.0),
    "bbg_minus_gaa": (1.0, -1.0),
    "gaa_minus_bbg": (-1.0, 1.0),
}


def effective_rank(m: Matrix) -> float:
    """exp of the Shannon entropy of the normalized singular values.

    A soft rank: equal to k for a matrix with k equal nonzero singular values,
    and scale-invariant. Undefined (error) for the zero matrix.
    """
    sv = singular_values(m)
    total = sv.sum()
    if total <= 0.0:
        raise ValueError("effective_rank is undefined for the zero matrix")
    p = sv / total
    p = p[p > 0.0]
    return float(np.exp(-np.sum(p * np.log(p))))


def orthonormal_basis(m: Matrix, k: int) -> Matrix:
    """First k left singular vectors; errors if the numerical rank is below k."""
    u, sv, _ = svd(m)
    rank = int(np.sum(sv > 1e-10 * sv[0])) if sv[0] > 0 else 0
    if k > rank:
        raise ValueError(f"k={k} exceeds the numerical rank {rank}")
    return u[:, :k]


def grassman_distance(p: Matrix, q: Matrix, k: int) -> float:
    """Root-sum-square of the k principal angles between the column spaces.

    Bases come from the left singular vectors truncated to k; singular values
    of U^T V are clamped into [0, 1] before arccos since rounding can push
    them marginally outside.
    """
    p = as_matrix(p, "grassman p")
    q = as_matrix(q, "grassman q")
    if p.shape[0] != q.shape[0]:
        raise ValueError(f"row dimensions differ: {p.shape[0]} vs {q.shape[0]}")
    u = orthonormal_basis(p, k)
    v = orthonormal_basis(q, k)
    sig = np.linalg.svd(u.T @ v, compute_uv=False)
    theta = np.arccos(np.clip(sig, 0.0, 1.0))
    return float(np.sqrt(np.sum(theta * theta)))


@dataclass
class AlignmentReport:
    """Pairwise similarity of head products B_i A_i.

    cosine is an N x N symmetric matrix with unit diagonal (vectorized
    products). grassman holds pairwise subspace distances at k = rank, with
    NaN where a head was excluded. Two means are reported for the Grassman
    statistic: the conventional mean over unordered pairs, and the same sum
    divided by 2N (a normalization that equals the pair count only for N = 3,
    kept for comparability).
    """

    cosine: Matrix
    mean_cosine: float
    grassman: Matrix
    mean_grassman_pairs: float
    mean_grassman_scaled: float
    rank: int
    excluded_heads: tuple[int, ...] = field(default=())


def head_alignment(layer: LoraLinear, rank_tol: float = 1e-10) -> AlignmentReport:
    """Alignment of a layer's heads; needs N >= 2.

    Heads whose product is zero (or numerically rank-deficient below the
    nominal rank) cannot span the k-dimensional subspace the distance is
    defined on; they are excluded from both statistics and flagged.
    """
    n_heads = layer.num_heads
    if n_heads < 2:
        raise ValueError(f"head_alignment needs at least 2 heads, got {n_heads}")
    r = layer.rank
    products = [h.product() for h in layer.heads]
    vecs = [p.ravel() for p in products]
    norms = [float(np.linalg.norm(v)) for v in vecs]

    excluded = []
    bases = []
    for i, p in enumerate(products):
        if norms[i] == 0.0:
            excluded.append(i)
            bases.append(None)
            continue
        sv = singular_values(p)
        if int(np.sum(sv > rank_tol * sv[0])) < r:
            excluded.append(i)
            bases.append(None)
        else:
            u, _, _ = svd(p)
            bases.append(u[:, :r])

    cosine = np.eye(n_heads)
    grassman = np.full((n_heads, n_heads), np.nan)
    np.fill_diagonal(grassman, 0.0)
    cos_vals = []
    gr_vals = []
    for i in range(n_heads):
        for j in range(i + 1, n_heads):
            if norms[i] > 0.0 and norms[j] > 0.0:
                c = float(np.dot(vecs[i], vecs[j]) / (norms[i] * norms[j]))
                c = min(1.0, max(-1.0, c))
                cosine[i, j] = cosine[j, i] = c
                cos_vals.append(c)
            else:
                cosine[i, j] = cosine[j, i] = 0.0
            if bases[i] is not None and bases[j] is not None:
                sig = np.linalg.svd(bases[i].T @ bases[j], compute_uv=False)
                theta = np.arccos(np.clip(sig, 0.0, 1.0))
                d = float(np.sqrt(np.sum(theta * theta)))
                grassman[i, j] = grassman[j, i] = d
                gr_vals.append(d)

    mean_cos = float(np.mean(cos_vals)) if cos_vals else float("nan")
    mean_gr_pairs = float(np.mean(gr_vals)) if gr_vals else float("nan")
    mean_gr_scaled = float(2.0 * np.sum(gr_vals) / (2.0 * n_heads)) if gr_vals else float("nan")
    return AlignmentReport(
        cosine=cosine,
        mean_cosine=mean_cos,
        grassman=grassman,
        mean_grassman_pairs=mean_gr_pairs,
        mean_grassman_scaled=mean_gr_scaled,
        rank=r,
        excluded_heads=tuple(excluded),
    )


@dataclass
class DeviationTrace:
    """Frobenius deviation between two runs' effective weights, per recorded
    snapshot: per layer and summed over layers."""

    steps: np.ndarray
    per_layer: np.ndarray  # (snapshots, layers)
    total: np.ndarray  # (snapshots,)


def trajectory_deviation(run_a, run_b) -> DeviationTrace:
    """Compare two runs' effective-weight trajectories snapshot by snapshot.

    Both runs must share the architecture and the snapshot schedule.
    """
    steps_a = [s.step for s in run_a.snapshots]
    steps_b = [s.step for s in run_b.snapshots]
    if steps_a != steps_b:
        raise ValueError(f"snapshot schedules differ: {steps_a[:5]}... vs {steps_b[:5]}...")
    if not steps_a:
        raise ValueError("runs have no snapshots to compare")
    shapes_a = [w.shape for w in run_a.snapshots[0].weights]
    shapes_b = [w.shape for w in run_b.snapshots[0].weights]
    if shapes_a != shapes_b:
        raise ValueError(f"architectures differ: {shapes_a} vs {shapes_b}")
    per_layer = np.zeros((len(steps_a), len(shapes_a)))
    for si, (sa, sb) in enumerate(zip(run_a.snapshots, run_b.snapshots)):
        for li, (wa, wb) in enumerate(zip(sa.weights, sb.weights)):
            per_layer[si, li] = np.linalg.norm(wa - wb)
    return DeviationTrace(
        steps=np.asarray(steps_a), per_layer=per_layer, total=per_layer.sum(axis=1)
    )


def effective_gradient(
    W: Matrix,
    A: Matrix,
    B: Matrix,
    g: Matrix,
    s: float,
    eta: float,
    convention: str = "expansion",
    include_second_order: bool = True,
) -> Matrix:
    """Effective gradient of the factored weight W + s B A under one SGD step.

    With g the gradient with respect to the effective weight, the first-order
    term is s^2 (c1 * B B^T g + c2 * g A^T A) and the second-order term is
    s^3 * eta * g A^T B^T g, subtracted when included. The (c1, c2) signs are
    selected by `convention`; "expansion" (+, +) is the variant the
    verifier confirms against the actual coupled step.
    """
    W = as_matrix(W, "W")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    g = as_matrix(g, "g")
    if g.shape != W.shape:
        raise ValueError(f"g shape {g.shape} does not match W shape {W.shape}")
    if B.shape[0] != W.shape[0] or A.shape[1] != W.shape[1] or B.shape[1] != A.shape[0]:
        raise ValueError(f"factor shapes {B.shape} x {A.shape} do not match W {W.shape}")
    if convention not in UPDATE_CONVENTIONS:
        raise ValueError(f"convention must be one of {sorted(UPDATE_CONVENTIONS)}")
    c1, c2 = UPDATE_CONVENTIONS[convention]
    out = (s * s) * (c1 * (B @ (B.T @ g)) + c2 * ((g @ A.T) @ A))
    if include_second_order:
        out = out - (s**3) * eta * ((g @ A.T) @ (B.T @ g))
    return out


@dataclass
class EffectiveUpdateReport:
    """Residuals between the actual coupled SGD step on (B, A) and the
    closed-form effective gradient, across a grid of learning rates.

    residual_first uses the first-order term only at the confirmed sign
    convention: it should shrink quadratically in eta (decade ratio near
    100). residual_both includes the second-order term, which reproduces the
    single step exactly up to rounding. first_order_by_convention records,
    at the smallest eta, how each sign convention fares; the confirmed
    convention is its argmin.
    """

    etas: tuple[float, ...]
    update_norms: tuple[float, ...]
    residual_first: tuple[float, ...]
    residual_both: tuple[float, ...]
    first_order_ratios: tuple[float, ...]
    confirmed_convention: str
    first_order_by_convention: dict[str, float]


def verify_effective_update(
    W: Matrix,
    A: Matrix,
    B: Matrix,
    batch: Batch,
    s: float,
    etas: tuple[float, ...] = (1e-2, 1e-3, 1e-4),
) -> EffectiveUpdateReport:
    """Take one real SGD step on (B, A) of a least-squares layer and compare
    the resulting effective-weight change against the closed-form formula.

    For each eta: g is the mean-squared-error gradient with respect to the
    effective weight, the factors take gradient steps B' = B - eta s g A^T,
    A' = A - eta s B^T g, and the realized change s (B'A' - BA) is compared
    to -eta * g_hat. Residuals are Frobenius norms.
    """
    W = as_matrix(W, "W")
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    x = as_matrix(batch.inputs, "batch inputs")
    y = as_matrix(batch.targets, "batch targets")
    b = x.shape[1]
    eff = W + s * (B @ A)
    g = ((eff @ x) - y) @ x.T / b

    update_norms = []
    residual_first = []
    residual_both = []
    by_convention: dict[str, list[float]] = {name: [] for name in UPDATE_CONVENTIONS}
    for eta in etas:
        B2 = B - eta * (s * (g @ A.T))
        A2 = A - eta * (s * (B.T @ g))
        d_actual = s * (B2 @ A2 - B @ A)
        update_norms.append(float(np.linalg.norm(d_actual)))
        for name in UPDATE_CONVENTIONS:
            first = effective_gradient(
                W, A, B, g, s, eta, convention=name, include_second_order=False
            )
            by_convention[name].append(float(np.linalg.norm(d_actual + eta * first)))
        both = effective_gradient(W, A, B, g, s, eta, convention="expansion")
        residual_both.append(float(np.linalg.norm(d_actual + eta * both)))

    confirmed = min(UPDATE_CONVENTIONS, key=lambda name: by_convention[name][-1])
    residual_first = by_convention[confirmed]
    ratios = []
    for lo, hi in zip(residual_first[1:], residual_first[:-1]):
        ratios.append(hi / lo if lo > 0.0 else float("inf"))
    return EffectiveUpdateReport(
        etas=tuple(etas),
        update_norms=tuple(update_norms),
        residual_first=tuple(residual_first),
        residual_both=tuple(residual_both),
        first_order_ratios=tuple(ratios),
        confirmed_convention=confirmed,
        first_order_by_convention={k: v[-1] for k, v in by_convention.items()},
    )


@dataclass
class RankTrace:
    """Effective ranks along a run: of each merge increment, of the base
    weight at each snapshot, and of the cumulative effective-weight change
    since the start. NaN marks skipped (zero) matrices."""

    merge_steps: np.ndarray
    delta_rank: np.ndarray  # (merges, layers)
    snapshot_steps: np.ndarray
    weight_rank: np.ndarray  # (snapshots, layers)
    cumulative_rank: np.ndarray  # (snapshots, layers)
    skipped: tuple[tuple[int, int], ...]  # (merge_id, layer) of zero increments


def update_rank_trace(run) -> RankTrace:
    """Rank trajectory of a recorded run (any mode; merges may be empty)."""
    if not run.snapshots:
        raise ValueError("run has no snapshots")
    n_layers = len(run.snapshots[0].weights)
    base = run.snapshots[0].weights

    merge_steps = np.asarray([rec.step for rec in run.merges])
    delta_rank = np.full((len(run.merges), n_layers), np.nan)
    skipped = []
    for mi, rec in enumerate(run.merges):
        for li, d in enumerate(rec.delta):
            if np.any(d != 0.0):
                delta_rank[mi, li] = effective_rank(d)
            else:
                skipped.append((rec.merge_id, li))

    snapshot_steps = np.asarray([s.step for s in run.snapshots])
    weight_rank = np.full((len(run.snapshots), n_layers), np.nan)
    cumulative_rank = np.full((len(run.snapshots), n_layers), np.nan)
    for si, snap in enumerate(run.snapshots):
        for li, w in enumerate(snap.weights):
            if np.any(w != 0.0):
                weight_rank[si, li] = effective_rank(w)
            change = w - base[li]
            if np.any(change != 0.0):
                cumulative_rank[si, li] = effective_rank(change)
    return RankTrace(
        merge_steps=merge_steps,
        delta_rank=delta_rank,
        snapshot_steps=snapshot_steps,
        weight_rank=weight_rank,
        cumulative_rank=cumulative_rank,
        skipped=tuple(skipped),
    )
