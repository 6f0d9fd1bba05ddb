"""Hardware-friendly N:M masks: in every group of M consecutive weights
along the last axis, only the N largest magnitudes survive."""

import tempfile
from pathlib import Path

import numpy as np

import sparsekit as sk

workdir = Path(tempfile.mkdtemp(prefix="sparsekit-demo-"))
container = sk.synth_container(
    workdir / "model.safetensors", {"w.weight": (6, 16)}, seed=3
)
values = container.read_array("w.weight")

print("first row of weights:")
print(np.array2string(values[0], precision=2))

for n, m in [(2, 4), (1, 4), (4, 8)]:
    spec = sk.PruneSpec(nm=(n, m), prunable_filter=sk.ALL_TENSORS)
    mask_set = sk.nm_prune(container, spec)
    keep = mask_set.masks["w.weight"].bools().reshape(values.shape)
    print(f"\n{n}:{m} pattern  (sparsity {sk.sparsity(mask_set):.2f}, "
          f"expected {(m - n) / m:.2f})")
    print("first row keep bits:", keep[0].astype(int))
    print("kept per group:     ", keep[0].reshape(-1, m).sum(axis=1))

print("\na trailing partial group keeps min(N, leftover):")
odd = sk.synth_container(workdir / "odd.safetensors", {"w.weight": (1, 10)}, seed=4)
spec24 = sk.PruneSpec(nm=(2, 4), prunable_filter=sk.ALL_TENSORS)
keep = sk.nm_prune(odd, spec24).masks["w.weight"].bools().astype(int)
print("width 10 with 2:4 ->", keep, " (groups 4+4+2, last keeps 2)")

print("\nmasked checkpoint (2:4), first row:")
pruned = sk.apply_mask(sk.nm_prune(container, spec24), container)
print(np.array2string(pruned.read_array("w.weight")[0], precision=2))
