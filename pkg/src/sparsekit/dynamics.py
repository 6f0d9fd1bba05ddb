"""Near-zero weight counting across checkpoint series and detection of the
iteration where the zero population jumps abruptly."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._threads import map_ordered
from .container import TensorContainer, open_container
from .errors import DynamicsError, SparsekitError
from .filters import ALL_TENSORS, TensorFilter


@dataclass(frozen=True)
class CheckpointSeries:
    """Ordered (iteration, container path) pairs from one training run."""

    entries: tuple[tuple[int, str], ...]

    def __post_init__(self):
        entries = tuple((int(it), os.fspath(p)) for it, p in self.entries)
        object.__setattr__(self, "entries", entries)
        last = -1
        for it, _ in entries:
            if it < 0:
                raise DynamicsError(f"negative iteration {it}")
            if it <= last:
                raise DynamicsError("iterations must be strictly increasing")
            last = it


@dataclass(frozen=True)
class ZeroCensus:
    """Counts of weights with |w| <= tolerance over the filtered tensors."""

    tolerance: float
    per_tensor: dict[str, int]
    total: int
    prunable_total: int

    @property
    def zero_fraction(self) -> float:
        return self.total / self.prunable_total


def zero_census(
    container: TensorContainer,
    filter: TensorFilter = ALL_TENSORS,
    tolerance: float = 0.0,
    *,
    threads: int = 1,
) -> ZeroCensus:
    """Exact count of |w| <= tolerance per filtered tensor.

    At tolerance 0 both signed zeros are counted; NaN weights are
    rejected by the container layer.
    """
    if tolerance < 0.0:
        raise ValueError("tolerance must be non-negative")
    metas = filter.select(container.metas)
    if not metas:
        raise DynamicsError("no tensor passes the census filter")

    def census_one(meta):
        values = container.read_values(meta.name)
        return int(np.count_nonzero(np.abs(values) <= tolerance))

    counts = map_ordered(census_one, metas, threads)
    per_tensor = {meta.name: c for meta, c in zip(metas, counts)}
    return ZeroCensus(
        tolerance=float(tolerance),
        per_tensor=per_tensor,
        total=sum(counts),
        prunable_total=sum(m.numel for m in metas),
    )


def census_series(
    series: CheckpointSeries,
    filter: TensorFilter = ALL_TENSORS,
    tolerance: float = 0.0,
    *,
    threads: int = 1,
) -> list[tuple[int, float]]:
    """One zero fraction per checkpoint, in iteration order."""
    if not series.entries:
        raise DynamicsError("empty checkpoint series")

    def census_one(entry):
        iteration, path = entry
        try:
            with open_container(path) as container:
                return iteration, zero_census(container, filter, tolerance).zero_fraction
        except (SparsekitError, OSError) as exc:
            raise DynamicsError(
                f"checkpoint at iteration {iteration} ({path}): {exc}"
            ) from exc

    return map_ordered(census_one, series.entries, threads)


def detect_abrupt(
    fractions: Sequence[tuple[int, float]], min_jump: float = 0.05
) -> int | None:
    """Iteration at the largest single-step increase of the zero fraction.

    Returns None when no step reaches ``min_jump``; equal maximal jumps
    resolve to the earliest iteration.  Only the ordering of iterations
    matters, not their spacing.
    """
    if len(fractions) < 2:
        raise DynamicsError("need at least 2 census entries")
    iterations = [it for it, _ in fractions]
    values = [f for _, f in fractions]
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    best = int(np.argmax(diffs))
    if diffs[best] < min_jump:
        return None
    return iterations[best + 1]


def read_series_manifest(path) -> CheckpointSeries:
    """Parse {"entries": [{"iteration": int, "path": str}, ...]}.

    Relative checkpoint paths are resolved against the manifest location.
    """
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        entries = [
            (int(e["iteration"]), os.path.join(base, str(e["path"])))
            for e in obj["entries"]
        ]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DynamicsError(f"invalid series manifest: {exc}") from None
    return CheckpointSeries(tuple(entries))


def write_census_csv(rows: Sequence[tuple[int, float]], fh) -> None:
    """Emit "iteration,zero_fraction" CSV to an open text stream."""
    fh.write("iteration,zero_fraction\n")
    for iteration, fraction in rows:
        fh.write(f"{iteration},{fraction!r}\n")
