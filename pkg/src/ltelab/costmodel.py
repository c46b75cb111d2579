"""Closed-form communication and memory accounting for synchronous
data-parallel training versus periodically-merged low-rank-adapter training.

Units are parameter counts: per synchronization round for communication
fields, per device for memory fields. Multiply by bytes-per-parameter
externally if byte figures are wanted (the two schemes typically store at
different precisions, so no single multiplier is baked in).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class CostInputs:
    """m: base model parameters; m_lte: per-device trainable adapter
    parameters; n_ddp / n_lte: device counts; period: steps between adapter
    merges; q: stored-size fraction of the frozen base (0.25 for 4-bit
    against a 16-bit reference)."""

    m: float
    m_lte: float
    n_ddp: int
    n_lte: int
    period: int
    q: float = 1.0

    def __post_init__(self):
        if self.m <= 0 or self.m_lte <= 0:
            raise ValueError(f"parameter counts must be positive, got m={self.m}, m_lte={self.m_lte}")
        if self.m_lte > self.m:
            raise ValueError(f"m_lte={self.m_lte} cannot exceed m={self.m}")
        if self.n_ddp < 1 or self.n_lte < 1:
            raise ValueError(f"device counts must be >= 1, got {self.n_ddp}, {self.n_lte}")
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must be in (0, 1], got {self.q}")


@dataclass(frozen=True)
class CostReport:
    """Evaluated cost formulas.

    The all-reduce adapter-training term is reported under both readings of
    the communicated size: the full-model count M (comm_allreduce_lte_full_model)
    and the adapter count M_lte (comm_allreduce_lte_adapters), since only
    adapter parameters actually cross the wire.
    """

    comm_allreduce_ddp: float
    comm_allreduce_lte_full_model: float
    comm_allreduce_lte_adapters: float
    comm_ps_ddp: float
    comm_ps_lte: float
    mem_ddp_per_device: float
    mem_lte_per_device: float
    param_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)

    def format_text(self) -> str:
        rows = [
            ("all-reduce comm, DDP", self.comm_allreduce_ddp),
            ("all-reduce comm, LTE (full-model reading)", self.comm_allreduce_lte_full_model),
            ("all-reduce comm, LTE (adapters-only reading)", self.comm_allreduce_lte_adapters),
            ("parameter-server comm, DDP", self.comm_ps_ddp),
            ("parameter-server comm, LTE", self.comm_ps_lte),
            ("memory per device, DDP", self.mem_ddp_per_device),
            ("memory per device, LTE", self.mem_lte_per_device),
            ("parameter ratio M / M_lte", self.param_ratio),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label:<{width}}  {value:,.6g}" for label, value in rows)


def cost_report(inputs: CostInputs) -> CostReport:
    """Evaluate the cost formulas.

    All-reduce: DDP exchanges gradients every step for N(N-1)M; adapter
    training communicates every `period` steps, giving N(N-1)/period times
    the communicated size (both M and M_lte readings reported). Parameter
    server: DDP costs 2(N-1)M; adapter training uploads (N-1)M_lte adapter
    parameters and broadcasts (N-1)qM quantized base weights per merge.
    Memory: DDP holds weights plus two optimizer moments (3M); adapter
    training holds the quantized base plus adapters and their moments
    (qM + 3 M_lte).
    """
    m, m_lte = inputs.m, inputs.m_lte
    n_ddp, n_lte = inputs.n_ddp, inputs.n_lte
    period, q = inputs.period, inputs.q
    return CostReport(
        comm_allreduce_ddp=n_ddp * (n_ddp - 1) * m,
        comm_allreduce_lte_full_model=n_lte * (n_lte - 1) * m / period,
        comm_allreduce_lte_adapters=n_lte * (n_lte - 1) * m_lte / period,
        comm_ps_ddp=2 * (n_ddp - 1) * m,
        comm_ps_lte=((n_lte - 1) * m_lte + (n_lte - 1) * q * m) / period,
        mem_ddp_per_device=3 * m,
        mem_lte_per_device=q * m + 3 * m_lte,
        param_ratio=m / m_lte,
    )
