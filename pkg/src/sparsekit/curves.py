"""Turning-point detection on sampled sparsity-performance curves.

A curve holds (sparsity, metric) samples plus the dense-model metric.
The turning point is the largest sampled sparsity still within ``eps`` of
the dense metric such that the next grid step falls below it; the grid
spacing plays the role of the "small extra portion" in that reading.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from .errors import CurveError

MODES = ("first-crossing", "sustained")


@dataclass(frozen=True)
class SparsityCurve:
    """Sampled (sparsity, metric) points, higher metric is better."""

    points: tuple[tuple[float, float], ...]
    dense_metric: float

    def __post_init__(self):
        pts = tuple((float(s), float(m)) for s, m in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "dense_metric", float(self.dense_metric))
        if not pts:
            raise CurveError("curve has no points")
        if not math.isfinite(self.dense_metric):
            raise CurveError("dense metric must be finite")
        last = -math.inf
        for s, m in pts:
            if not 0.0 <= s <= 1.0:
                raise CurveError(f"sparsity {s} outside [0, 1]")
            if s <= last:
                raise CurveError("sparsities must be strictly increasing")
            if not math.isfinite(m):
                raise CurveError(f"non-finite metric at sparsity {s}")
            last = s

    @property
    def sparsities(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.points)

    @property
    def metrics(self) -> tuple[float, ...]:
        return tuple(m for _, m in self.points)


@dataclass(frozen=True)
class EssentialSparsityResult:
    """Detected turning point, or the reason none exists.

    no_crossing: no sampled point ever fell below the tolerance band.
    dense_below_threshold: already the first sampled point is below it.
    """

    essential_sparsity: float | None
    threshold: float
    mode: str
    no_crossing: bool = False
    dense_below_threshold: bool = False


def detect_essential(
    curve: SparsityCurve, eps: float = 0.01, mode: str = "first-crossing"
) -> EssentialSparsityResult:
    """Largest sampled sparsity whose metric stays >= dense - eps before
    the next sample drops below it.

    first-crossing takes the first such drop scanning ascending; sustained
    additionally requires every later sample to stay below the band, which
    is the conservative choice on noisy curves that recover.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if len(curve.points) < 2:
        raise CurveError("need at least 2 sampled points")

    threshold = curve.dense_metric - eps
    metrics = curve.metrics

    def absent(**flags):
        return EssentialSparsityResult(None, threshold, mode, **flags)

    if all(m >= threshold for m in metrics):
        return absent(no_crossing=True)
    if metrics[0] < threshold:
        return absent(dense_below_threshold=True)

    if mode == "first-crossing":
        for i in range(len(metrics) - 1):
            if metrics[i] >= threshold and metrics[i + 1] < threshold:
                return EssentialSparsityResult(
                    curve.points[i][0], threshold, mode
                )
        raise AssertionError("unreachable: a crossing must exist")

    last_ok = max(i for i, m in enumerate(metrics) if m >= threshold)
    if last_ok == len(metrics) - 1:
        # The curve recovered above the band at the end; no sustained drop.
        return absent(no_crossing=True)
    return EssentialSparsityResult(curve.points[last_ok][0], threshold, mode)


def drop_curve(curve: SparsityCurve) -> list[tuple[float, float]]:
    """Per-point performance drop relative to dense (<= 0 when degraded)."""
    return [(s, m - curve.dense_metric) for s, m in curve.points]


def read_curve(path) -> SparsityCurve:
    """Load a curve from CSV ("# dense=<v>" comment plus sparsity,metric
    header) or from JSON {"dense": v, "points": [[s, m], ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(text)
            return SparsityCurve(
                tuple((s, m) for s, m in obj["points"]), obj["dense"]
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CurveError(f"invalid curve JSON: {exc}") from None

    dense = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("dense="):
                dense = float(body[len("dense="):])
            continue
        rows.append(line)
    if dense is None:
        raise CurveError('curve CSV is missing the required "# dense=<value>" line')
    if not rows or [c.strip() for c in rows[0].split(",")] != ["sparsity", "metric"]:
        raise CurveError('curve CSV must start with a "sparsity,metric" header')
    points = []
    for row in csv.reader(rows[1:]):
        if not row:
            continue
        if len(row) != 2:
            raise CurveError(f"curve CSV row {row!r} does not have 2 columns")
        try:
            points.append((float(row[0]), float(row[1])))
        except ValueError as exc:
            raise CurveError(f"curve CSV row {row!r}: {exc}") from None
    return SparsityCurve(tuple(points), dense)


def write_curve(curve: SparsityCurve, path) -> None:
    """Write the CSV form accepted by :func:`read_curve`."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# dense={curve.dense_metric!r}\n")
        fh.write("sparsity,metric\n")
        for s, m in curve.points:
            fh.write(f"{s!r},{m!r}\n")
