"""Reproduce the closed-form communication totals of the reference runs and
show the FLOPs model for one local epoch.

Run: python demos/04_cost_accounting.py
"""

from spafl import accounting as acc
from spafl import nn

# communication: rounds x 2 directions x K clients x tau_num scalars x 32 bit
print("threshold-exchange totals (K=10 sampled clients per round):")
for name, tau_num, rounds in (
    ("fmnist-lenet", 580, 500),
    ("cifar10-cnn7", 1418, 500),
    ("cifar100-resnet18", 4800, 1500),
):
    bits = acc.spafl_comm_bits(10, tau_num, rounds)
    print(f"  {name:18s} tau_num={tau_num:5d} T={rounds:5d} -> {bits / acc.GBIT:.4f} Gbit")

lenet = nn.build_lenet()
d = 430_500  # published weight count of the Lenet variant
print(f"\nfull-parameter exchange for the same schedule, d={d}:")
print(f"  {acc.dense_comm_bits(10, d, 500) / acc.GBIT:.2f} Gbit (vs 0.1856 for thresholds)")
print(f"  engine threshold count for Lenet: {acc.threshold_count(lenet)} (20+50+500+10)")

# flops: 3x forward per sample (forward + double-cost backward), plus the
# importance update's 1.5 flops per parameter once per round
fc1 = nn.LayerSpec(kind="dense", n_out=500, n_in=800)
print("\nLenet fc1 forward cost, one sample, dense:", acc.layer_flops_forward(fc1, 1.0, 1))
print("importance-update charge at d=1000:", acc.importance_update_flops(1000))

net = nn.Network((800,), [nn.dense(500)])
print(
    "one epoch, 10 samples, density 0.5 (with importance charge):",
    acc.epoch_flops(net, [0.5], 10),
)
