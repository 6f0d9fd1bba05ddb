"""Plot-ready reports: layer-wise weight histograms and the per-component
share of pruned weights in a transformer-shaped checkpoint."""

import tempfile
from pathlib import Path

import sparsekit as sk

workdir = Path(tempfile.mkdtemp(prefix="sparsekit-demo-"))

# BERT-like naming at toy scale: attention projections are HxH, the
# feed-forward pair is Hx4H / 4HxH, so it dominates the parameter count
H, F = 48, 192
layers = {}
for i in range(2):
    base = f"encoder.layer.{i}"
    layers[f"{base}.attention.self.query.weight"] = (H, H)
    layers[f"{base}.attention.self.key.weight"] = (H, H)
    layers[f"{base}.attention.self.value.weight"] = (H, H)
    layers[f"{base}.attention.output.dense.weight"] = (H, H)
    layers[f"{base}.intermediate.dense.weight"] = (F, H)
    layers[f"{base}.output.dense.weight"] = (H, F)

container = sk.synth_container(workdir / "bertish.safetensors", layers, seed=5)

print("-- standardized weight histogram (one layer) --")
hist = sk.weight_histogram(container, bins=9, normalization="standardize")
edges, counts = hist.per_tensor["encoder.layer.0.intermediate.dense.weight"]
peak = counts.max()
for lo, hi, count in zip(edges[:-1], edges[1:], counts):
    print(f"  [{lo:+.2f}, {hi:+.2f})  {'#' * int(40 * count / peak)}")

print("\n-- component breakdown of a 21.5% one-shot mask --")
mask = sk.omp_global(container, sk.PruneSpec(target_sparsity=0.215))
report = sk.component_report(mask)  # packaged transformer rules
print(f"{'component':20s} {'elements':>9s} {'pruned':>8s} {'sparsity':>9s}")
for label, _ in report.rules:
    row = report.rows[label]
    if row.elements:
        print(f"{label:20s} {row.elements:9d} {row.pruned:8d} {row.sparsity:9.3f}")
print(f"{'overall':20s} {report.overall.elements:9d} "
      f"{report.overall.pruned:8d} {report.overall.sparsity:9.3f}")

ff = report.rows["intermediate-dense"].pruned + report.rows["output-dense"].pruned
print(f"\nfeed-forward share of pruned weights: {ff / report.overall.pruned:.1%}")
