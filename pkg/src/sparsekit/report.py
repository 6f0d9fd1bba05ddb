"""Plot-ready summaries: per-tensor weight histograms and per-component
sparsity breakdowns of a mask over a checkpoint."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np

from ._threads import map_ordered
from .container import TensorContainer
from .errors import ReportError
from .filters import ALL_TENSORS, TensorFilter
from .masks import MaskSet, sparsity

NORMALIZATIONS = ("none", "standardize")

# First matching rule wins; the trailing catch-all is mandatory so every
# masked tensor lands in exactly one component.
DEFAULT_COMPONENT_RULES: tuple[tuple[str, str], ...] = (
    ("query", "*query*"),
    ("key", "*key*"),
    ("value", "*value*"),
    ("attention-output", "*attention*output*"),
    ("intermediate-dense", "*intermediate*"),
    ("output-dense", "*output*dense*"),
    ("other", "*"),
)


@dataclass(frozen=True)
class HistogramReport:
    """Uniform-width bin edges and counts per tensor."""

    per_tensor: dict[str, tuple[np.ndarray, np.ndarray]]
    normalization: str

    def to_json_dict(self) -> dict:
        return {
            "normalization": self.normalization,
            "tensors": {
                name: {"edges": edges.tolist(), "counts": counts.tolist()}
                for name, (edges, counts) in sorted(self.per_tensor.items())
            },
        }

    def write_csv(self, fh) -> None:
        fh.write("tensor,bin_lo,bin_hi,count\n")
        for name in sorted(self.per_tensor):
            edges, counts = self.per_tensor[name]
            for lo, hi, count in zip(edges[:-1], edges[1:], counts):
                fh.write(f"{name},{lo!r},{hi!r},{int(count)}\n")


@dataclass(frozen=True)
class ComponentRow:
    elements: int
    pruned: int
    sparsity: float


@dataclass(frozen=True)
class ComponentReport:
    """Pruned-weight accounting per component label, plus the overall row."""

    rules: tuple[tuple[str, str], ...]
    rows: dict[str, ComponentRow]
    overall: ComponentRow

    def to_json_dict(self) -> dict:
        return {
            "components": [
                {
                    "component": label,
                    "elements": self.rows[label].elements,
                    "pruned": self.rows[label].pruned,
                    "sparsity": self.rows[label].sparsity,
                }
                for label, _ in self.rules
            ],
            "overall": {
                "elements": self.overall.elements,
                "pruned": self.overall.pruned,
                "sparsity": self.overall.sparsity,
            },
        }

    def write_csv(self, fh) -> None:
        fh.write("component,elements,pruned,sparsity\n")
        for label, _ in self.rules:
            row = self.rows[label]
            fh.write(f"{label},{row.elements},{row.pruned},{row.sparsity!r}\n")
        fh.write(
            f"overall,{self.overall.elements},{self.overall.pruned},"
            f"{self.overall.sparsity!r}\n"
        )


def weight_histogram(
    container: TensorContainer,
    filter: TensorFilter = ALL_TENSORS,
    bins: int = 50,
    normalization: str = "none",
    *,
    threads: int = 1,
) -> HistogramReport:
    """Per-tensor histograms over [min, max] with the max in the last bin.

    "standardize" shifts and scales each tensor to zero mean and unit
    standard deviation before binning, so differently scaled checkpoints
    become comparable; constant tensors cannot be standardized.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {normalization!r}")
    metas = filter.select(container.metas)
    if not metas:
        raise ReportError("no tensor passes the histogram filter")

    def histogram_one(meta):
        values = container.read_values(meta.name)
        if normalization == "standardize":
            std = values.std()
            if std == 0.0:
                raise ReportError(
                    f"zero-variance tensor {meta.name!r} cannot be standardized"
                )
            values = (values - values.mean()) / std
        counts, edges = np.histogram(values, bins=bins)
        return edges, counts

    results = map_ordered(histogram_one, metas, threads)
    return HistogramReport(
        per_tensor={meta.name: hist for meta, hist in zip(metas, results)},
        normalization=normalization,
    )


def component_report(
    mask_set: MaskSet, rules: Sequence[tuple[str, str]] = DEFAULT_COMPONENT_RULES
) -> ComponentReport:
    """Partition the masked tensors into components and account sparsity.

    Every masked tensor must match some rule (ship a catch-all); the
    overall row always equals the whole-set sparsity.
    """
    from fnmatch import fnmatchcase

    rules = tuple((str(label), str(pattern)) for label, pattern in rules)
    if not rules:
        raise ReportError("component rules are empty")
    elements = {label: 0 for label, _ in rules}
    pruned = {label: 0 for label, _ in rules}
    for name in sorted(mask_set.masks):
        mask = mask_set.masks[name]
        for label, pattern in rules:
            if fnmatchcase(name, pattern):
                elements[label] += mask.numel
                pruned[label] += mask.numel - mask.nnz
                break
        else:
            raise ReportError(
                f"tensor {name!r} matches no component rule; add a catch-all"
            )
    rows = {
        label: ComponentRow(
            elements[label],
            pruned[label],
            pruned[label] / elements[label] if elements[label] else 0.0,
        )
        for label, _ in rules
    }
    overall = ComponentRow(
        mask_set.total_elements,
        mask_set.total_elements - mask_set.total_nnz,
        sparsity(mask_set),
    )
    return ComponentReport(rules=rules, rows=rows, overall=overall)


def load_component_rules(path) -> tuple[tuple[str, str], ...]:
    """Load ordered [{"component": label, "pattern": glob}, ...] rules."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        rules = tuple((str(r["component"]), str(r["pattern"])) for r in obj)
    except (KeyError, TypeError) as exc:
        raise ReportError(f"invalid component rule file: {exc}") from None
    if not rules:
        raise ReportError("component rule file is empty")
    return rules


def packaged_component_rules() -> tuple[tuple[str, str], ...]:
    """The editable transformer rule file shipped with the package."""
    text = (
        resources.files("sparsekit").joinpath("data/transformer_components.json").read_text()
    )
    obj = json.loads(text)
    return tuple((str(r["component"]), str(r["pattern"])) for r in obj)
