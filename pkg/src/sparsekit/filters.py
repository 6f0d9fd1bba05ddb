"""Glob-based tensor selection shared by pruning, census, and reports."""

from __future__ import annotations

from dataclasses import dataclass
from fnmatch import fnmatchcase
from typing import Mapping

from .container import TensorMeta


def _check_patterns(patterns, label: str) -> tuple[str, ...]:
    out = tuple(patterns)
    for p in out:
        if not isinstance(p, str) or not p:
            raise ValueError(f"invalid {label} pattern {p!r}")
    return out


@dataclass(frozen=True)
class TensorFilter:
    """Selects tensors whose name matches any include and no exclude glob.

    ``min_ndim`` additionally drops low-rank tensors (vectors, scalars)
    when selecting from metas; name-only matching ignores it.
    """

    include: tuple[str, ...] = ("*",)
    exclude: tuple[str, ...] = ()
    min_ndim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "include", _check_patterns(self.include, "include"))
        object.__setattr__(self, "exclude", _check_patterns(self.exclude, "exclude"))
        if self.min_ndim < 0:
            raise ValueError("min_ndim must be >= 0")

    def matches_name(self, name: str) -> bool:
        if not any(fnmatchcase(name, p) for p in self.include):
            return False
        return not any(fnmatchcase(name, p) for p in self.exclude)

    def matches(self, meta: TensorMeta) -> bool:
        return meta.ndim >= self.min_ndim and self.matches_name(meta.name)

    def select(self, metas: Mapping[str, TensorMeta]) -> list[TensorMeta]:
        return [metas[n] for n in sorted(metas) if self.matches(metas[n])]

    def select_names(self, metas: Mapping[str, TensorMeta]) -> list[str]:
        return [m.name for m in self.select(metas)]

    def to_json(self) -> dict:
        return {
            "include": list(self.include),
            "exclude": list(self.exclude),
            "min_ndim": self.min_ndim,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TensorFilter":
        return cls(
            include=tuple(obj.get("include", ("*",))),
            exclude=tuple(obj.get("exclude", ())),
            min_ndim=int(obj.get("min_ndim", 0)),
        )


# Matrix-shaped "*weight*" tensors, skipping embeddings, norms, and biases.
# Which tensors count as prunable is a convention, not a constant; callers
# reproduce other accounting conventions by passing their own filter.
DEFAULT_PRUNABLE = TensorFilter(
    include=("*weight*",),
    exclude=("*embed*", "*norm*", "*bias*"),
    min_ndim=2,
)

ALL_TENSORS = TensorFilter()
