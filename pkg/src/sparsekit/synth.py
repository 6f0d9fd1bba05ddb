"""Deterministic synthetic checkpoint fixtures.

Lets the test suite and demos run without real model weights: seeded
containers with known distributions, including a spike-at-zero mixture
whose exact-zero fraction is controlled.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .container import DType, TensorContainer, open_container, write_container

DISTRIBUTIONS = ("normal", "uniform", "spike-at-zero")


def synth_values(rng: np.random.Generator, n: int, distribution: str, spike_p) -> np.ndarray:
    if distribution == "normal":
        return rng.standard_normal(n)
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, n)
    if distribution == "spike-at-zero":
        values = rng.standard_normal(n)
        values[rng.random(n) < spike_p] = 0.0
        return values
    raise ValueError(f"unknown distribution {distribution!r}")


def synth_container(
    path,
    tensors: Mapping[str, Sequence[int]],
    *,
    distribution: str = "normal",
    spike_p: float | None = None,
    seed: int = 0,
    dtype: DType = DType.F32,
    metadata: Mapping[str, str] | None = None,
) -> TensorContainer:
    """Write a seeded pseudo-random container and return it opened.

    ``tensors`` maps names to shapes.  The same arguments always produce a
    byte-identical file: values are drawn in lexicographic tensor-name
    order from one PCG64 stream.
    """
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    if distribution == "spike-at-zero":
        if spike_p is None or not 0.0 <= spike_p <= 1.0:
            raise ValueError("spike-at-zero needs spike_p in [0, 1]")
    elif spike_p is not None:
        raise ValueError(f"spike_p is only meaningful for spike-at-zero")

    rng = np.random.default_rng(seed)
    payload = {}
    for name in sorted(tensors):
        shape = tuple(int(d) for d in tensors[name])
        numel = 1
        for d in shape:
            numel *= d
        payload[name] = (synth_values(rng, numel, distribution, spike_p), dtype, shape)
    write_container(path, payload, metadata)
    return open_container(path)
