"""Turning-point detection on sparsity-performance curves: how far can a
checkpoint be pruned before fine-tuning quality leaves the dense band."""

import tempfile
from pathlib import Path

import numpy as np

import sparsekit as sk

dense = 0.902
grid = np.round(np.arange(0.05, 0.95, 0.05), 2)
# plateau up to ~60% sparsity, then a sharp drop
drops = 0.02 / (1 + np.exp(-(grid - 0.62) / 0.03))
curve = sk.SparsityCurve(tuple(zip(grid, dense - drops)), dense)

print("sparsity vs metric (dense = %.3f):" % dense)
for s, m in curve.points:
    bar = "#" * int((m - 0.87) * 400)
    print(f"  {s:4.2f}  {m:.4f}  {bar}")

result = sk.detect_essential(curve, eps=0.01)
print(f"\nwith eps = 0.01 the tolerance band floor is {result.threshold:.4f}")
print(f"turning point (first-crossing): {result.essential_sparsity}")

print("\nperformance drop relative to dense:")
for s, d in sk.drop_curve(curve)[-6:]:
    print(f"  {s:4.2f}  {d:+.4f}")

# a noisy curve that recovers: the two modes disagree
noisy = sk.SparsityCurve(
    ((0.1, 0.90), (0.2, 0.90), (0.3, 0.885), (0.4, 0.90), (0.5, 0.895),
     (0.6, 0.87), (0.7, 0.84)),
    0.90,
)
first = sk.detect_essential(noisy, 0.01, "first-crossing")
sustained = sk.detect_essential(noisy, 0.01, "sustained")
print("\nnoisy curve, dip at 0.3 then recovery, final drop at 0.6:")
print(f"  first-crossing -> {first.essential_sparsity}")
print(f"  sustained      -> {sustained.essential_sparsity}")

# round trip through the CSV interchange format
path = Path(tempfile.mkdtemp(prefix="sparsekit-demo-")) / "curve.csv"
sk.write_curve(curve, path)
print(f"\ncurve written to {path}; first lines:")
print("\n".join(path.read_text().splitlines()[:4]))
print("re-read equals original:", sk.read_curve(path) == curve)
