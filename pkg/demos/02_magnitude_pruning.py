"""One-shot magnitude pruning: exact counts, deterministic ties, and the
nesting of masks across sparsity levels."""

import tempfile
from pathlib import Path

import numpy as np

import sparsekit as sk

workdir = Path(tempfile.mkdtemp(prefix="sparsekit-demo-"))
container = sk.synth_container(
    workdir / "model.safetensors",
    {"blk.0.weight": (128, 64), "blk.1.weight": (128, 64), "head.weight": (32, 64)},
    seed=11,
)
total = container.total_elements
print(f"checkpoint with {total:,} prunable weights")

print("\n-- global one-shot magnitude masks --")
for target in (0.1, 0.3, 0.5):
    spec = sk.PruneSpec(target_sparsity=target, prunable_filter=sk.ALL_TENSORS)
    threshold = sk.select_global_threshold(container, spec)
    mask = sk.omp_global(container, spec)
    print(f"target {target:.0%}: cut at |w| = {threshold.threshold:.5f}, "
          f"pruned {mask.total_elements - mask.total_nnz:,} "
          f"(exactly round({target} * {total}) = {round(target * total):,})")

print("\n-- masks from one checkpoint nest --")
spec10 = sk.PruneSpec(target_sparsity=0.1, prunable_filter=sk.ALL_TENSORS)
spec30 = sk.PruneSpec(target_sparsity=0.3, prunable_filter=sk.ALL_TENSORS)
mask10 = sk.omp_global(container, spec10)
mask30 = sk.omp_global(container, spec30)
print(f"30% mask nested in 10% mask: {sk.is_nested(mask30, mask10)}")
print(f"10% mask nested in 30% mask: {sk.is_nested(mask10, mask30)}")

print("\n-- global vs per-tensor scope --")
per_tensor = sk.omp_per_tensor(container, spec30)
for name in mask30.names():
    g = mask30.masks[name]
    p = per_tensor.masks[name]
    print(f"  {name:15s} global keeps {g.nnz:5d}, per-tensor keeps {p.nnz:5d}")
print(f"both hit overall sparsity {sk.sparsity(mask30):.3f} / {sk.sparsity(per_tensor):.3f}")

print("\n-- iterative ladder reaching the same territory --")
ladder = sk.imp_schedule(rounds=5, per_round_fraction=0.2)
print("cumulative sparsity per prune-and-rewind round:",
      [f"{s:.3f}" for s in ladder])
