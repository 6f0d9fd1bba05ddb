"""Magnitude-based mask construction: global/per-tensor one-shot pruning,
N:M structured masks, and iterative-pruning sparsity ladders.

Global threshold selection never sorts the full weight population.  It
runs two bounded-memory passes: pass 1 histograms |w| by the top 16 bits
of the float64 bit pattern (for non-negative finite floats, bit order
equals numeric order), pass 2 ranks exactly within the single boundary
bucket.  The result matches a full sort bit-for-bit, including ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._threads import map_ordered
from .container import TensorContainer, container_digest
from .errors import ContainerError, MaskError
from .filters import DEFAULT_PRUNABLE, TensorFilter
from .masks import MaskSet, Provenance, TensorMask

_BUCKETS = 1 << 16


@dataclass(frozen=True)
class PruneSpec:
    """What to prune and how much.

    target_sparsity is the exact fraction of prunable weights to remove
    (count rounded half-to-even).  Threshold-magnitude ties are broken by
    (tensor name ascending, flat index ascending): the earliest ties are
    pruned, which makes runs deterministic and masks from one checkpoint
    nested across sparsity levels.
    """

    target_sparsity: float = 0.0
    scope: str = "global"
    prunable_filter: TensorFilter = field(default_factory=lambda: DEFAULT_PRUNABLE)
    tie_break: str = "by-name-then-index"
    nm: tuple[int, int] | None = None
    nm_axis: int = -1

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity <= 1.0:
            raise ValueError(f"target_sparsity {self.target_sparsity} not in [0, 1]")
        if self.scope not in ("global", "per-tensor"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if self.tie_break != "by-name-then-index":
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        if self.nm is not None:
            n, m = self.nm
            if m == 0:
                raise ValueError("N:M group size M must be positive")
            if n <= 0 or n > m:
                raise ValueError(f"invalid N:M pattern {n}:{m} (need 0 < N <= M)")


@dataclass(frozen=True)
class ThresholdResult:
    """Exact global cut realizing "prune the k smallest magnitudes".

    threshold is the smallest surviving magnitude (or the largest overall
    when everything is pruned); below_count weights fall strictly under
    it, and ties_pruned of the at_count threshold-magnitude weights must
    additionally be pruned to hit the exact target count.
    """

    threshold: float
    below_count: int
    at_count: int
    ties_pruned: int

    @property
    def pruned_count(self) -> int:
        return self.below_count + self.ties_pruned


def _round_half_even(x: float) -> int:
    return int(round(x))


def _prunable_names(container: TensorContainer, spec: PruneSpec) -> list[str]:
    names = spec.prunable_filter.select_names(container.metas)
    if not names:
        raise MaskError("empty prunable set: no tensor passes the prunable filter")
    return names


def _magnitudes(container: TensorContainer, name: str) -> np.ndarray:
    values = container.read_values(name)
    if not np.isfinite(values).all():
        raise ContainerError(f"non-finite weight in tensor {name!r}")
    return np.abs(values)


def _bucket_of(mags: np.ndarray) -> np.ndarray:
    return (mags.view(np.uint64) >> 48).astype(np.int64)


def _select(container, names, target, threads):
    """Two-pass selection; also returns the boundary-bucket magnitudes
    per tensor so mask emission can allocate tie budgets without a rescan."""
    def histogram_one(name):
        mags = _magnitudes(container, name)
        return len(mags), np.bincount(_bucket_of(mags), minlength=_BUCKETS)

    partials = map_ordered(histogram_one, names, threads)
    total = sum(count for count, _ in partials)
    hist = np.zeros(_BUCKETS, dtype=np.int64)
    for _, h in partials:
        hist += h

    k = _round_half_even(target * total)
    cum = np.cumsum(hist)
    # Rank of the magnitude that defines the cut: the (k+1)-th smallest
    # survives when anything survives, otherwise the maximum.
    rank = k + 1 if k < total else total
    bucket = int(np.searchsorted(cum, rank, side="left"))
    below_bucket = int(cum[bucket - 1]) if bucket > 0 else 0

    def collect_one(name):
        mags = _magnitudes(container, name)
        return mags[_bucket_of(mags) == bucket]

    per_tensor = map_ordered(collect_one, names, threads)
    merged = np.sort(np.concatenate(per_tensor))
    threshold = float(merged[rank - below_bucket - 1])

    below_in_bucket = int(np.searchsorted(merged, threshold, side="left"))
    at_lo = below_in_bucket
    at_hi = int(np.searchsorted(merged, threshold, side="right"))
    below_count = below_bucket + below_in_bucket
    result = ThresholdResult(
        threshold=threshold,
        below_count=below_count,
        at_count=at_hi - at_lo,
        ties_pruned=k - below_count,
    )
    bucket_mags = dict(zip(names, per_tensor))
    return result, bucket_mags, total


def select_global_threshold(
    container: TensorContainer, spec: PruneSpec, *, threads: int = 1
) -> ThresholdResult:
    """Exact global magnitude cut for ``spec.target_sparsity``.

    Matches a full-sort oracle over all prunable magnitudes, in two
    bounded-memory passes (see module doc).
    """
    names = _prunable_names(container, spec)
    result, _, _ = _select(container, names, spec.target_sparsity, threads)
    return result


def _provenance(container, spec, method, target) -> Provenance:
    return Provenance(
        method=method,
        target_sparsity=target,
        source_digest=container_digest(container),
        prunable_filter=spec.prunable_filter.to_json(),
    )


def omp_global(container: TensorContainer, spec: PruneSpec, *, threads: int = 1) -> MaskSet:
    """One-shot global magnitude mask: clear exactly round(target * count)
    bits, always the smallest magnitudes, earliest ties first."""
    names = _prunable_names(container, spec)
    result, bucket_mags, _ = _select(container, names, spec.target_sparsity, threads)
    t = result.threshold

    # Ties are consumed in (name, flat index) order; budgets are fixed
    # before fan-out so the masks are identical for any thread count.
    budgets = {}
    remaining = result.ties_pruned
    for name in names:
        ties_here = int(np.count_nonzero(bucket_mags[name] == t))
        take = min(remaining, ties_here)
        budgets[name] = take
        remaining -= take

    def mask_one(name):
        mags = _magnitudes(container, name)
        pruned = mags < t
        if budgets[name]:
            tie_idx = np.flatnonzero(mags == t)[: budgets[name]]
            pruned[tie_idx] = True
        return TensorMask.from_bools(~pruned, container.metas[name].shape)

    masks = dict(zip(names, map_ordered(mask_one, names, threads)))
    return MaskSet(masks, _provenance(container, spec, "omp-global", spec.target_sparsity))


def omp_per_tensor(container: TensorContainer, spec: PruneSpec, *, threads: int = 1) -> MaskSet:
    """Uniform variant: each prunable tensor independently loses exactly
    round(target * numel) of its smallest-magnitude weights."""
    names = _prunable_names(container, spec)

    def mask_one(name):
        mags = _magnitudes(container, name)
        k = _round_half_even(spec.target_sparsity * len(mags))
        keep = np.ones(len(mags), dtype=bool)
        if k:
            order = np.argsort(mags, kind="stable")
            keep[order[:k]] = False
        return TensorMask.from_bools(keep, container.metas[name].shape)

    masks = dict(zip(names, map_ordered(mask_one, names, threads)))
    return MaskSet(masks, _provenance(container, spec, "omp-per-tensor", spec.target_sparsity))


def _nm_keep(arr: np.ndarray, n: int, m: int, axis: int) -> np.ndarray:
    """Keep the N largest magnitudes in each group of M along ``axis``."""
    mags = np.abs(arr)
    moved = np.moveaxis(mags, axis, -1)
    width = moved.shape[-1]
    rows = moved.reshape(-1, width)
    keep = np.zeros_like(rows, dtype=bool)

    def keep_largest(groups: np.ndarray, count: int) -> np.ndarray:
        # Stable sort of the negated magnitudes keeps the lower flat index
        # first among ties.
        order = np.argsort(-groups, axis=1, kind="stable")
        out = np.zeros_like(groups, dtype=bool)
        np.put_along_axis(out, order[:, :count], True, axis=1)
        return out

    full = (width // m) * m
    if full:
        grouped = rows[:, :full].reshape(-1, m)
        keep[:, :full] = keep_largest(grouped, n).reshape(-1, full)
    if width > full:
        tail = rows[:, full:]
        keep[:, full:] = keep_largest(tail, min(n, width - full))
    return np.moveaxis(keep.reshape(moved.shape), -1, axis)


def nm_prune(container: TensorContainer, spec: PruneSpec, *, threads: int = 1) -> MaskSet:
    """Structured N:M mask: at most N kept weights per group of M
    consecutive weights along ``spec.nm_axis``; full groups keep exactly N."""
    if spec.nm is None:
        raise ValueError("nm_prune requires spec.nm = (N, M)")
    n, m = spec.nm
    names = _prunable_names(container, spec)
    for name in names:
        ndim = container.metas[name].ndim
        if ndim == 0:
            raise MaskError(f"cannot group scalar tensor {name!r} into {n}:{m} pattern")
        if not -ndim <= spec.nm_axis < ndim:
            raise MaskError(
                f"nm_axis {spec.nm_axis} out of range for tensor {name!r} "
                f"with {ndim} dimensions"
            )

    def mask_one(name):
        arr = container.read_array(name)
        if not np.isfinite(arr).all():
            raise ContainerError(f"non-finite weight in tensor {name!r}")
        return TensorMask.from_bools(_nm_keep(arr, n, m, spec.nm_axis))

    masks = dict(zip(names, map_ordered(mask_one, names, threads)))
    return MaskSet(masks, _provenance(container, spec, f"nm-{n}:{m}", (m - n) / m))


def imp_schedule(rounds: int, per_round_fraction: float) -> list[float]:
    """Cumulative sparsities of repeated prune-fraction-per-round ladders.

    Round k (1-based) reaches 1 - (1 - f)^k: each round removes the same
    fraction of the weights still alive.
    """
    if rounds < 1:
        raise ValueError("rounds must be a positive integer")
    if not 0.0 < per_round_fraction < 1.0:
        raise ValueError("per_round_fraction must lie strictly in (0, 1)")
    return [1.0 - (1.0 - per_round_fraction) ** k for k in range(1, rounds + 1)]
