"""Zero-weight dynamics across a checkpoint series: census each snapshot
and find the iteration where sparsity jumps abruptly."""

import json
import tempfile
from pathlib import Path

import sparsekit as sk

workdir = Path(tempfile.mkdtemp(prefix="sparsekit-demo-"))

# fake a pre-training run snapshotted every 1000 iterations whose zero
# population explodes at iteration 5000
schedule = [
    (1000, 0.01), (2000, 0.012), (3000, 0.013), (4000, 0.015),
    (5000, 0.31), (6000, 0.33), (7000, 0.35),
]
entries = []
for seed, (iteration, zero_p) in enumerate(schedule):
    path = workdir / f"step-{iteration}.safetensors"
    sk.synth_container(
        path, {"w.weight": (200, 100)},
        distribution="spike-at-zero", spike_p=zero_p, seed=seed,
    ).close()
    entries.append({"iteration": iteration, "path": path.name})

manifest = workdir / "series.json"
manifest.write_text(json.dumps({"entries": entries}, indent=2))

series = sk.read_series_manifest(manifest)
rows = sk.census_series(series, tolerance=0.0)

print("iteration  zero fraction")
for iteration, fraction in rows:
    bar = "#" * int(fraction * 80)
    print(f"  {iteration:6d}   {fraction:.4f}  {bar}")

jump_at = sk.detect_abrupt(rows, min_jump=0.05)
print(f"\nabrupt sparsification detected at iteration {jump_at}")

# tolerance sweep on the final checkpoint: exact zeros vs near-zeros
final = sk.open_container(workdir / "step-7000.safetensors")
print("\ntolerance sweep on the last snapshot:")
for tol in (0.0, 1e-3, 1e-2, 1e-1):
    census = sk.zero_census(final, tolerance=tol)
    print(f"  |w| <= {tol:<6g} -> {census.zero_fraction:.4f}")
final.close()
