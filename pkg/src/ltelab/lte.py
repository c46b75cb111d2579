"""Bi-level training: parallel workers on private data streams, T local steps
on their own heads, then a synchronized merge into the base weights.

Two merge flavors exist. Averaged merging adds (s/N) * sum_n B_n A_n to W and
(by default) zeroes every B so the post-merge multi-head function is
preserved. Exact-corrected merging keeps the head parameters and instead
tracks each worker's product at the last merge in a correction matrix V_n:
workers subtract their stale share (s/N) V_n in the forward pass, the merge
adds (s/N) * sum_n (B_n A_n - V_n), and V_n is refreshed. With T = 1 the
corrected scheme reproduces joint multi-head training exactly.

Also here: the joint multi-head runner (the T = 1 oracle) and the full-weight
baseline, all driven by one seeded, deterministic configuration. Workers may
conceptually run in parallel: between merges W is read-only, each head is
owned by exactly one worker, and merge reduction sums heads in index order,
so results never depend on worker execution order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__ as _code_version
from .analysis import AlignmentReport, effective_rank, head_alignment
from .data import LeastSquaresTask, gen_least_squares, sample_batch
from .layers import LoraHead, LoraLinear
from .network import ACTIVATIONS, LOSSES, Batch, Mode, Network, loss_and_grad
from .numerics import INIT_KINDS, InitScheme, Matrix, RandomSource, init_matrix
from .optim import AdamState, OptimConfig, adamw_step, sgd_step

RUN_MODES = ("full", "lora", "mhlora", "lte")
OPTIMIZERS = ("sgd", "adamw")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass(frozen=True)
class MergePolicy:
    """When and how heads fold back into the base weights.

    period is the number of local steps between merges. reset_B keeps the
    merge function-preserving; reset_A re-initializes A (off by default, it
    wastes re-learning); reset_opt clears worker optimizer state (also off by
    default). exact_correction switches to the corrected no-reset scheme and
    is incompatible with parameter resets, which it exists to avoid.
    """

    period: int = 1
    reset_B: bool = True
    reset_A: bool = False
    reset_opt: bool = False
    exact_correction: bool = False

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError(f"policy.period: must be >= 1, got {self.period}")
        if self.exact_correction and (self.reset_B or self.reset_A):
            raise ConfigError(
                "policy.exact_correction: incompatible with reset_B/reset_A "
                "(the corrected scheme reuses the same parameters)"
            )


@dataclass(frozen=True)
class DatasetSpec:
    """Synthetic least-squares dataset. pool switches from i.i.d. per-worker
    streams to a fixed pre-generated sample pool sharded across workers."""

    m: int
    n: int
    rank: int
    kind: str = "least_squares"
    pool: int | None = None


@dataclass(frozen=True)
class ArchSpec:
    """Layer chain: dims = (d0, d1, ..., dL) builds L layers, layer i mapping
    d_i -> d_{i+1}. `activation` fills every gap except the last (identity)."""

    dims: tuple[int, ...]
    activation: str = "identity"
    loss: str = "mse"
    w_init: str = "zeros"
    w_gain: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    mode: str
    dataset: DatasetSpec
    arch: ArchSpec
    n_heads: int = 1
    rank: int = 4
    alpha: float | None = None  # None means alpha = rank, i.e. s = 1
    optimizer: str = "sgd"
    optim: OptimConfig = field(default_factory=lambda: OptimConfig(eta=0.05))
    policy: MergePolicy = field(default_factory=MergePolicy)
    batch_size: int = 32
    total_steps: int = 100
    snapshot_interval: int | None = None
    seed: int = 0
    init: InitScheme = field(default_factory=lambda: InitScheme("semi_orthogonal"))
    record_params: bool = False
    stop_mse: float | None = None
    out_dir: str | None = None

    @property
    def effective_alpha(self) -> float:
        return float(self.rank) if self.alpha is None else float(self.alpha)

    @property
    def merge_period(self) -> int:
        return self.policy.period

    def validate(self) -> None:
        """Check every cross-field constraint; raises ConfigError naming the
        field path of the first violation."""
        if self.mode not in RUN_MODES:
            raise ConfigError(f"mode: must be one of {RUN_MODES}, got {self.mode!r}")
        ds, arch = self.dataset, self.arch
        if ds.kind != "least_squares":
            raise ConfigError(f"dataset.kind: unknown kind {ds.kind!r}")
        if ds.m < 1 or ds.n < 1:
            raise ConfigError(f"dataset.m/n: must be >= 1, got {ds.m}x{ds.n}")
        if not 1 <= ds.rank <= min(ds.m, ds.n):
            raise ConfigError(f"dataset.rank: must be in 1..{min(ds.m, ds.n)}, got {ds.rank}")
        if ds.pool is not None and ds.pool < self.n_heads:
            raise ConfigError(f"dataset.pool: must cover all {self.n_heads} workers, got {ds.pool}")
        if len(arch.dims) < 2 or any(d < 1 for d in arch.dims):
            raise ConfigError(f"arch.dims: need a chain of positive dims, got {arch.dims}")
        if arch.dims[0] != ds.n:
            raise ConfigError(f"arch.dims[0]: must equal dataset.n={ds.n}, got {arch.dims[0]}")
        if arch.dims[-1] != ds.m:
            raise ConfigError(f"arch.dims[-1]: must equal dataset.m={ds.m}, got {arch.dims[-1]}")
        if arch.activation not in ACTIVATIONS:
            raise ConfigError(f"arch.activation: must be one of {ACTIVATIONS}")
        if arch.loss not in LOSSES:
            raise ConfigError(f"arch.loss: must be one of {LOSSES}")
        if arch.w_init != "zeros" and arch.w_init not in INIT_KINDS:
            raise ConfigError(f"arch.w_init: must be 'zeros' or one of {INIT_KINDS}")
        if self.n_heads < 1:
            raise ConfigError(f"N: must be >= 1, got {self.n_heads}")
        if self.mode == "lora" and self.n_heads != 1:
            raise ConfigError(f"N: mode 'lora' is single-head, got N={self.n_heads}")
        min_dim = min(min(a, b) for a, b in zip(arch.dims, arch.dims[1:]))
        if not 1 <= self.rank <= min_dim:
            raise ConfigError(
                f"r: rank {self.rank} must be in 1..{min_dim} for layer dims {arch.dims}"
            )
        if self.effective_alpha <= 0:
            raise ConfigError(f"alpha: must be > 0, got {self.alpha}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer: must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.mode in ("mhlora", "lte") and self.batch_size // self.n_heads < 1:
            raise ConfigError(
                f"batch_size: cumulative batch {self.batch_size} leaves no samples "
                f"per worker at N={self.n_heads}"
            )
        if self.total_steps < 1:
            raise ConfigError(f"total_steps: must be >= 1, got {self.total_steps}")
        if self.snapshot_interval is not None and self.snapshot_interval < 1:
            raise ConfigError(f"snapshot_interval: must be >= 1, got {self.snapshot_interval}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed: must be an unsigned 64-bit integer, got {self.seed}")
        if self.stop_mse is not None and self.stop_mse <= 0:
            raise ConfigError(f"stop_mse: must be > 0, got {self.stop_mse}")


_CONFIG_ALIASES = {"N": "n_heads", "r": "rank"}
_CONFIG_KEYS = {
    "mode", "dataset", "arch", "n_heads", "rank", "alpha", "optimizer",
    "optim", "policy", "batch_size", "total_steps", "snapshot_interval", "seed", "init",
    "record_params", "stop_mse", "out_dir",
}


def config_from_dict(raw: dict) -> RunConfig:
    """Build a RunConfig from a flat JSON-style dict.

    Accepts the short axis names N, r, T as aliases (T names the merge
    period and lands in the policy). Unknown keys are rejected so typos
    fail fast instead of silently using defaults.
    """
    if not isinstance(raw, dict):
        raise ConfigError(f"config: expected an object, got {type(raw).__name__}")
    data = {}
    policy_extra = {}
    for key, value in raw.items():
        if key in ("T", "merge_period"):
            policy_extra["period"] = value
            continue
        key = _CONFIG_ALIASES.get(key, key)
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{key}: unknown config field")
        data[key] = value
    if policy_extra:
        merged = dict(data.get("policy", {}))
        merged.update(policy_extra)
        data["policy"] = merged
    for required in ("mode", "dataset", "arch"):
        if required not in data:
            raise ConfigError(f"{required}: missing required field")
    try:
        data["dataset"] = DatasetSpec(**data["dataset"])
    except TypeError as exc:
        raise ConfigError(f"dataset: {exc}") from exc
    try:
        arch = dict(data["arch"])
        arch["dims"] = tuple(arch.get("dims", ()))
        data["arch"] = ArchSpec(**arch)
    except TypeError as exc:
        raise ConfigError(f"arch: {exc}") from exc
    try:
        data["optim"] = OptimConfig(**data.get("optim", {"eta": 0.05}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optim: {exc}") from exc
    try:
        data["policy"] = MergePolicy(**data.get("policy", {}))
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"policy: {exc}") from exc
    try:
        data["init"] = InitScheme(**data.get("init", {"kind": "semi_orthogonal"}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"init: {exc}") from exc
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"config: {exc}") from exc
    cfg.validate()
    return cfg


class KeyedOptimizer:
    """SGD or AdamW over a keyed family of parameters, one state per key."""

    def __init__(self, kind: str, cfg: OptimConfig):
        if kind not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.states: dict = {}

    def step(self, key, param: Matrix, grad: Matrix) -> Matrix:
        if self.kind == "sgd":
            return sgd_step(param, grad, self.cfg.eta)
        state = self.states.get(key)
        if state is None:
            state = AdamState.zeros(param.shape)
        new, self.states[key] = adamw_step(param, grad, state, self.cfg)
        return new

    def reset_states(self) -> None:
        self.states.clear()


class IidStream:
    """Private i.i.d. mini-batch stream over a least-squares task."""

    def __init__(self, task: LeastSquaresTask, rng: RandomSource):
        self.task = task
        self.rng = rng

    def next(self, batch_size: int) -> Batch:
        return sample_batch(self.task, batch_size, self.rng)


class PooledStream:
    """Fixed-pool stream: one worker's column shard, cycled in order."""

    def __init__(self, x: Matrix, y: Matrix, worker: int, n_workers: int):
        self.x = x[:, worker::n_workers].copy()
        self.y = y[:, worker::n_workers].copy()
        if self.x.shape[1] == 0:
            raise ValueError(f"pool leaves worker {worker} without samples")
        self.cursor = 0

    def next(self, batch_size: int) -> Batch:
        ncols = self.x.shape[1]
        idx = (self.cursor + np.arange(batch_size)) % ncols
        self.cursor = int((self.cursor + batch_size) % ncols)
        return Batch(inputs=self.x[:, idx], targets=self.y[:, idx])


@dataclass
class WorkerState:
    """One worker: its head index, private stream, optimizer, and per-layer
    correction matrices V (all-zero unless exact correction is active)."""

    head_index: int
    stream: object
    opt: KeyedOptimizer
    corrections: list[Matrix]
    use_correction: bool
    steps_since_merge: int = 0
    total_steps: int = 0


@dataclass
class UpdateRecord:
    """What one merge added to the base weights: delta[layer] is the applied
    increment, worker_deltas[worker][layer] the per-worker contribution
    s * (B_n A_n - V_n); delta is their mean in head-index order."""

    merge_id: int
    step: int
    delta: list[Matrix]
    worker_deltas: list[list[Matrix]]


@dataclass
class Snapshot:
    step: int
    merge_id: int
    weights: list[Matrix]
    alignment: list[AlignmentReport] | None
    weight_rank: list[float]
    update_rank: list[float]
    params: list[list[tuple[Matrix, Matrix]]] | None = None


@dataclass
class RunResult:
    config: RunConfig
    task: LeastSquaresTask
    network: Network
    losses: np.ndarray  # (steps_run, workers)
    eval_mse: np.ndarray | None  # (steps_run,), population MSE where defined
    merges: list[UpdateRecord]
    snapshots: list[Snapshot]
    manifest: dict
    stopped_at: int | None = None

    @property
    def steps_run(self) -> int:
        return self.losses.shape[0]

    def steps_to_mse(self, threshold: float) -> int | None:
        """First step whose population MSE is <= threshold, or None."""
        if self.eval_mse is None:
            return None
        hits = np.nonzero(self.eval_mse <= threshold)[0]
        return int(hits[0]) + 1 if hits.size else None

    def final_mse(self) -> float | None:
        if self.eval_mse is None or self.eval_mse.size == 0:
            return None
        return float(self.eval_mse[-1])


def local_step(worker: WorkerState, net: Network, batch: Batch) -> float:
    """One optimizer step on the worker's own head through its local view.

    Base weights and other heads are untouched; in exact-correction mode the
    stale products V are subtracted inside the forward pass.
    """
    corr = worker.corrections if worker.use_correction else None
    loss, grads = loss_and_grad(net, batch, Mode.worker(worker.head_index), corrections=corr)
    for li, layer in enumerate(net.layers):
        head = layer.heads[worker.head_index]
        head.A = worker.opt.step((li, "A"), head.A, grads[li].dA[worker.head_index])
        head.B = worker.opt.step((li, "B"), head.B, grads[li].dB[worker.head_index])
    worker.steps_since_merge += 1
    worker.total_steps += 1
    return loss


def merge(
    net: Network,
    workers: list[WorkerState],
    policy: MergePolicy,
    merge_id: int = 1,
    step: int = 0,
    init: InitScheme | None = None,
    rng: RandomSource | None = None,
) -> UpdateRecord:
    """Fold every worker's head into the base weights, then apply resets.

    All workers must have taken the same number of local steps. Heads are
    summed in index order so the result is independent of worker scheduling.
    """
    counts = {w.steps_since_merge for w in workers}
    if len(counts) != 1:
        raise ValueError(f"workers disagree on local step counts: {sorted(counts)}")
    if [w.head_index for w in workers] != list(range(len(workers))):
        raise ValueError("workers must be ordered by head index and cover every head")
    if policy.reset_A and (init is None or rng is None):
        raise ValueError("reset_A needs an init scheme and a random source")

    n = len(workers)
    deltas: list[Matrix] = []
    worker_deltas: list[list[Matrix]] = [[] for _ in workers]
    for li, layer in enumerate(net.layers):
        total = np.zeros_like(layer.W)
        for w in workers:
            head = layer.heads[w.head_index]
            prod = head.B @ head.A
            if policy.exact_correction:
                contrib = layer.s * (prod - w.corrections[li])
                w.corrections[li] = prod
            else:
                contrib = layer.s * prod
            worker_deltas[w.head_index].append(contrib)
            total = total + contrib
        delta = total / n
        deltas.append(delta)
        layer.W = layer.W + delta

    for li, layer in enumerate(net.layers):
        for w in workers:
            head = layer.heads[w.head_index]
            if policy.reset_B:
                head.B = np.zeros_like(head.B)
            if policy.reset_A:
                head.A = init_matrix(
                    head.A.shape[0], head.A.shape[1], init,
                    rng.child(merge_id, li, w.head_index),
                )
    if policy.reset_opt:
        for w in workers:
            w.opt.reset_states()
    for w in workers:
        w.steps_since_merge = 0
    return UpdateRecord(merge_id=merge_id, step=step, delta=deltas, worker_deltas=worker_deltas)


def _build_network(cfg: RunConfig, root: RandomSource, n_heads: int) -> Network:
    layers = []
    for li, (fan_in, fan_out) in enumerate(zip(cfg.arch.dims, cfg.arch.dims[1:])):
        if cfg.arch.w_init == "zeros":
            w = np.zeros((fan_out, fan_in))
        else:
            w = init_matrix(
                fan_out, fan_in, InitScheme(cfg.arch.w_init, cfg.arch.w_gain),
                root.child("w_init", li),
            )
        heads = [
            LoraHead.fresh(fan_out, fan_in, cfg.rank, cfg.init, root.child("head_init", li, i))
            for i in range(n_heads)
        ]
        layers.append(LoraLinear(W=w, alpha=cfg.effective_alpha, heads=heads))
    acts = [cfg.arch.activation] * (len(layers) - 1) + ["identity"]
    return Network(layers, activations=acts, loss=cfg.arch.loss)


def _make_streams(cfg: RunConfig, task: LeastSquaresTask, root: RandomSource, n_workers: int):
    if cfg.dataset.pool is None:
        return [IidStream(task, root.child("worker", i)) for i in range(n_workers)]
    pool_rng = root.child("pool")
    x = pool_rng.standard_normal((task.n, cfg.dataset.pool))
    y = task.W_star @ x
    return [PooledStream(x, y, i, n_workers) for i in range(n_workers)]


def _global_weights(net: Network, workers: list[WorkerState] | None) -> list[Matrix]:
    """Per-layer effective weight of the current global model: base plus the
    scaled head sum, with stale products subtracted in exact mode."""
    out = []
    for li, layer in enumerate(net.layers):
        if not layer.heads:
            out.append(layer.W.copy())
            continue
        acc = np.zeros_like(layer.W)
        for h in layer.heads:
            acc += h.B @ h.A
        if workers is not None:
            for w in workers:
                if w.use_correction:
                    acc -= w.corrections[li]
        out.append(layer.W + (layer.s / layer.num_heads) * acc)
    return out


def _chain(weights: list[Matrix]) -> Matrix:
    prod = weights[0]
    for w in weights[1:]:
        prod = w @ prod
    return prod


def _population_mse(weights: list[Matrix], task: LeastSquaresTask) -> float:
    # E over x ~ N(0, I) of the batch-mean half squared error
    diff = _chain(weights) - task.W_star
    return 0.5 * float(np.sum(diff * diff))


def _eval_enabled(cfg: RunConfig) -> bool:
    return (
        cfg.dataset.kind == "least_squares"
        and cfg.arch.loss == "mse"
        and cfg.arch.activation == "identity"
    )


def _snapshot(
    step: int,
    merge_id: int,
    net: Network,
    workers: list[WorkerState] | None,
    base_weights: list[Matrix],
    alignment: list[AlignmentReport] | None,
    record_params: bool,
) -> Snapshot:
    weights = _global_weights(net, workers)
    weight_rank = []
    update_rank = []
    for w, w0 in zip(weights, base_weights):
        weight_rank.append(effective_rank(w) if np.any(w != 0.0) else float("nan"))
        change = w - w0
        update_rank.append(effective_rank(change) if np.any(change != 0.0) else float("nan"))
    params = None
    if record_params:
        params = [[(h.A.copy(), h.B.copy()) for h in layer.heads] for layer in net.layers]
    return Snapshot(
        step=step,
        merge_id=merge_id,
        weights=weights,
        alignment=alignment,
        weight_rank=weight_rank,
        update_rank=update_rank,
        params=params,
    )


def _alignment(net: Network) -> list[AlignmentReport] | None:
    if not net.layers[0].heads or net.layers[0].num_heads < 2:
        return None
    return [head_alignment(layer) for layer in net.layers]


def _manifest(cfg: RunConfig, n_workers: int, worker_batch: int) -> dict:
    return {
        "config": asdict(cfg),
        "code_version": _code_version,
        "n_workers": n_workers,
        "worker_batch": worker_batch,
        "dropped_samples_per_step": cfg.batch_size - worker_batch * n_workers,
    }


def run_lte(cfg: RunConfig) -> RunResult:
    """Parallel local training with periodic merging (the bi-level loop)."""
    cfg.validate()
    if cfg.mode != "lte":
        raise ConfigError(f"mode: run_lte needs mode 'lte', got {cfg.mode!r}")
    root = RandomSource(cfg.seed)
    task = gen_least_squares(cfg.dataset.m, cfg.dataset.n, cfg.dataset.rank, root.child("task"))
    n_workers = cfg.n_heads
    net = _build_network(cfg, root, n_workers)
    streams = _make_streams(cfg, task, root, n_workers)
    workers = [
        WorkerState(
            head_index=i,
            stream=streams[i],
            opt=KeyedOptimizer(cfg.optimizer, cfg.optim),
            corrections=[np.zeros_like(layer.W) for layer in net.layers],
            use_correction=cfg.policy.exact_correction,
        )
        for i in range(n_workers)
    ]
    worker_batch = cfg.batch_size // n_workers
    period = cfg.merge_period
    interval = cfg.snapshot_interval or period
    merge_rng = root.child("merge")
    do_eval = _eval_enabled(cfg)

    base_weights = _global_weights(net, workers)
    snapshots = [_snapshot(0, 0, net, workers, base_weights, None, cfg.record_params)]
    merges: list[UpdateRecord] = []
    losses = []
    eval_mse = []
    stopped_at = None
    for step in range(1, cfg.total_steps + 1):
        row = [local_step(w, net, w.stream.next(worker_batch)) for w in workers]
        losses.append(row)
        snap_due = step % interval == 0
        align = _alignment(net) if snap_due else None
        if step % period == 0:
            merges.append(
                merge(net, workers, cfg.policy, merge_id=len(merges) + 1, step=step,
                      init=cfg.init, rng=merge_rng)
            )
        if snap_due:
            snapshots.append(
                _snapshot(step, len(merges), net, workers, base_weights, align, cfg.record_params)
            )
        if do_eval:
            mse = _population_mse(_global_weights(net, workers), task)
            eval_mse.append(mse)
            if cfg.stop_mse is not None and mse <= cfg.stop_mse:
                stopped_at = step
                break
    if snapshots[-1].step != len(losses):
        snapshots.append(
            _snapshot(len(losses), len(merges), net, workers, base_weights,
                      _alignment(net), cfg.record_params)
        )
    return RunResult(
        config=cfg,
        task=task,
        network=net,
        losses=np.asarray(losses),
        eval_mse=np.asarray(eval_mse) if do_eval else None,
        merges=merges,
        snapshots=snapshots,
        manifest=_manifest(cfg, n_workers, worker_batch),
        stopped_at=stopped_at,
    )


def run_mhlora(cfg: RunConfig) -> RunResult:
    """Joint multi-head training: every step, each head takes its gradient
    from its own shard through the shared multi-head forward, and all heads
    update simultaneously. Serves as the T = 1 oracle for the bi-level loop;
    with N = 1 this is plain single-adapter training.
    """
    cfg.validate()
    if cfg.mode not in ("lora", "mhlora"):
        raise ConfigError(f"mode: run_mhlora needs mode 'lora' or 'mhlora', got {cfg.mode!r}")
    root = RandomSource(cfg.seed)
    task = gen_least_squares(cfg.dataset.m, cfg.dataset.n, cfg.dataset.rank, root.child("task"))
    n_heads = cfg.n_heads
    net = _build_network(cfg, root, n_heads)
    streams = _make_streams(cfg, task, root, n_heads)
    opts = [KeyedOptimizer(cfg.optimizer, cfg.optim) for _ in range(n_heads)]
    worker_batch = cfg.batch_size // n_heads
    interval = cfg.snapshot_interval or cfg.merge_period
    do_eval = _eval_enabled(cfg)

    base_weights = _global_weights(net, None)
    snapshots = [_snapshot(0, 0, net, None, base_weights, None, cfg.record_params)]
    losses = []
    eval_mse = []
    stopped_at = None
    for step in range(1, cfg.total_steps + 1):
        batches = [streams[i].next(worker_batch) for i in range(n_heads)]
        row = []
        head_grads = []
        for i in range(n_heads):
            loss, grads = loss_and_grad(net, batches[i], Mode.multi(), heads=(i,))
            row.append(loss)
            head_grads.append(grads)
        for i in range(n_heads):
            for li, layer in enumerate(net.layers):
                head = layer.heads[i]
                head.A = opts[i].step((li, "A"), head.A, head_grads[i][li].dA[i])
                head.B = opts[i].step((li, "B"), head.B, head_grads[i][li].dB[i])
        losses.append(row)
        if step % interval == 0:
            snapshots.append(
                _snapshot(step, 0, net, None, base_weights, _alignment(net), cfg.record_params)
            )
        if do_eval:
            mse = _population_mse(_global_weights(net, None), task)
            eval_mse.append(mse)
            if cfg.stop_mse is not None and mse <= cfg.stop_mse:
                stopped_at = step
                break
    if snapshots[-1].step != len(losses):
        snapshots.append(
            _snapshot(len(losses), 0, net, None, base_weights, _alignment(net), cfg.record_params)
        )
    return RunResult(
        config=cfg,
        task=task,
        network=net,
        losses=np.asarray(losses),
        eval_mse=np.asarray(eval_mse) if do_eval else None,
        merges=[],
        snapshots=snapshots,
        manifest=_manifest(cfg, n_heads, worker_batch),
        stopped_at=stopped_at,
    )


def run_full(cfg: RunConfig) -> RunResult:
    """Standard training of the base weights themselves (no heads)."""
    cfg.validate()
    if cfg.mode != "full":
        raise ConfigError(f"mode: run_full needs mode 'full', got {cfg.mode!r}")
    root = RandomSource(cfg.seed)
    task = gen_least_squares(cfg.dataset.m, cfg.dataset.n, cfg.dataset.rank, root.child("task"))
    net = _build_network(cfg, root, n_heads=0)
    stream = _make_streams(cfg, task, root, 1)[0]
    opt = KeyedOptimizer(cfg.optimizer, cfg.optim)
    interval = cfg.snapshot_interval or cfg.merge_period
    do_eval = _eval_enabled(cfg)

    base_weights = _global_weights(net, None)
    snapshots = [_snapshot(0, 0, net, None, base_weights, None, False)]
    losses = []
    eval_mse = []
    stopped_at = None
    for step in range(1, cfg.total_steps + 1):
        batch = stream.next(cfg.batch_size)
        loss, grads = loss_and_grad(net, batch, Mode.full())
        for li, layer in enumerate(net.layers):
            layer.W = opt.step((li, "W"), layer.W, grads[li].dW)
        losses.append([loss])
        if step % interval == 0:
            snapshots.append(_snapshot(step, 0, net, None, base_weights, None, False))
        if do_eval:
            mse = _population_mse([layer.W for layer in net.layers], task)
            eval_mse.append(mse)
            if cfg.stop_mse is not None and mse <= cfg.stop_mse:
                stopped_at = step
                break
    if snapshots[-1].step != len(losses):
        snapshots.append(_snapshot(len(losses), 0, net, None, base_weights, None, False))
    return RunResult(
        config=cfg,
        task=task,
        network=net,
        losses=np.asarray(losses),
        eval_mse=np.asarray(eval_mse) if do_eval else None,
        merges=[],
        snapshots=snapshots,
        manifest=_manifest(cfg, 1, cfg.batch_size),
        stopped_at=stopped_at,
    )


def run(cfg: RunConfig) -> RunResult:
    """Dispatch on cfg.mode."""
    cfg.validate()
    if cfg.mode == "full":
        return run_full(cfg)
    if cfg.mode in ("lora", "mhlora"):
        return run_mhlora(cfg)
    return run_lte(cfg)
