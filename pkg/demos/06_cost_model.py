"""Communication and memory accounting: synchronous data parallelism vs
periodically-merged adapter training.

Costs are in parameter counts (per synchronization round for communication,
per device for memory). The adapter scheme communicates only every T steps
and only adapter-sized tensors, and each device holds a quantized base model
plus adapter optimizer state instead of three full-precision model copies.
"""

from ltelab import CostInputs, cost_report

# A small vision transformer's worth of parameters: 22.9M base, 1M trainable
# adapter parameters per device, 8 devices, merge every 10 steps, 4-bit base.
inputs = CostInputs(m=22.9e6, m_lte=1.0e6, n_ddp=8, n_lte=8, period=10, q=0.25)
report = cost_report(inputs)
print(report.format_text())

print()
ddp_mem = report.mem_ddp_per_device
lte_mem = report.mem_lte_per_device
print(f"memory per device shrinks {ddp_mem / lte_mem:.1f}x "
      f"({ddp_mem / 1e6:.1f}M -> {lte_mem / 1e6:.3f}M parameters)")
ps_ratio = report.comm_ps_ddp / report.comm_ps_lte
print(f"parameter-server traffic shrinks {ps_ratio:.0f}x at merge period {inputs.period}")

print("\nall-reduce adapter traffic vs merge period (adapters-only reading):")
for period in (1, 5, 10, 50, 100):
    rep = cost_report(CostInputs(m=22.9e6, m_lte=1.0e6, n_ddp=8, n_lte=8,
                                 period=period, q=0.25))
    print(f"  T = {period:>3}: {rep.comm_allreduce_lte_adapters / 1e6:>8.2f}M "
          f"(DDP baseline {rep.comm_allreduce_ddp / 1e6:.0f}M every step)")
