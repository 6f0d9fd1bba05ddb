"""Mask analytics: cosine similarity between mask sets, the closed form
for nested magnitude masks, and similarity matrices."""

import math
import tempfile
from pathlib import Path

import numpy as np

import sparsekit as sk

workdir = Path(tempfile.mkdtemp(prefix="sparsekit-demo-"))
container = sk.synth_container(
    workdir / "model.safetensors",
    {"a.weight": (100, 50), "b.weight": (80, 50)},
    seed=17,
)

targets = [0.1, 0.2, 0.3, 0.4]
masks = [
    sk.omp_global(container, sk.PruneSpec(target_sparsity=t, prunable_filter=sk.ALL_TENSORS))
    for t in targets
]

print("magnitude masks from ONE checkpoint are nested, so their cosine")
print("similarity has a closed form sqrt(nnz_high / nnz_low):\n")
for i, low in enumerate(targets):
    for high in targets[i + 1:]:
        a, b = masks[targets.index(high)], masks[targets.index(low)]
        got = sk.cosine_similarity(a, b)
        closed = math.sqrt(a.total_nnz / b.total_nnz)
        print(f"  cos(mask {high:.0%}, mask {low:.0%}) = {got:.6f}"
              f"   sqrt(ratio) = {closed:.6f}")

print("\nfull similarity matrix over the four masks:")
matrix = sk.similarity_matrix(masks)
for t, row in zip(targets, matrix):
    print(f"  {t:.0%} " + " ".join(f"{v:.4f}" for v in row))

print("\nindependent random masks sit near sqrt(p1*p2) instead:")
rng = np.random.default_rng(0)
rand_sets = [
    sk.MaskSet(
        {"w": sk.TensorMask.from_bools(rng.random(10_000) < 0.5)},
        sk.Provenance("random", 0.5, "", {}),
    )
    for _ in range(2)
]
print(f"  cos(random 50%, random 50%) = "
      f"{sk.cosine_similarity(rand_sets[0], rand_sets[1]):.4f} (expected ~0.5)")

print("\nper-tensor breakdown of cos(mask 40%, mask 10%):")
for name, value in sk.cosine_similarity_per_tensor(masks[3], masks[0]).items():
    print(f"  {name:10s} {value:.6f}")
