"""Synthetic depth sequences for tests and demos.

Two generators: piecewise-constant scenes with moving sharp-edged objects
(the statistics of real depth maps) and exact low-rank sequences built as
sums of separable terms (controllable CP rank).
"""

from __future__ import annotations

import numpy as np

from .pipeline import DepthSequence


def moving_shapes_sequence(
    height: int = 64,
    width: int = 64,
    frames: int = 16,
    n_objects: int = 2,
    bit_depth: int = 16,
    seed: int = 0,
) -> DepthSequence:
    """Constant background with rectangles of distinct depth drifting across it."""
    rng = np.random.default_rng(seed)
    peak = (1 << bit_depth) - 1
    background = int(0.35 * peak)
    stack = np.full((frames, height, width), background, dtype=np.float64)
    for _ in range(n_objects):
        depth = rng.uniform(0.05, 0.95) * peak
        h = int(rng.integers(height // 8, height // 2))
        w = int(rng.integers(width // 8, width // 2))
        y0 = float(rng.integers(0, height - h))
        x0 = float(rng.integers(0, width - w))
        vy = float(rng.uniform(-2.0, 2.0))
        vx = float(rng.uniform(-2.0, 2.0))
        for f in range(frames):
            y = int(round(y0 + vy * f)) % (height - h + 1)
            x = int(round(x0 + vx * f)) % (width - w + 1)
            stack[f, y : y + h, x : x + w] = depth
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return DepthSequence(frames=stack.astype(dtype), bit_depth=bit_depth)


def _piecewise_vector(rng, length, segments):
    edges = np.sort(rng.choice(np.arange(1, length), size=segments - 1, replace=False))
    values = rng.uniform(0.1, 1.0, size=segments)
    out = np.empty(length)
    start = 0
    for edge, val in zip(list(edges) + [length], values):
        out[start:edge] = val
        start = edge
    return out


def separable_sequence(
    rank: int,
    height: int = 64,
    width: int = 64,
    frames: int = 16,
    bit_depth: int = 16,
    seed: int = 0,
) -> DepthSequence:
    """Sum of ``rank`` separable piecewise-constant terms, CP rank <= rank."""
    rng = np.random.default_rng(seed)
    peak = (1 << bit_depth) - 1
    tensor = np.zeros((height, width, frames))
    for _ in range(rank):
        a = _piecewise_vector(rng, height, int(rng.integers(2, 5)))
        b = _piecewise_vector(rng, width, int(rng.integers(2, 5)))
        c = rng.uniform(0.3, 1.0, size=frames)
        tensor += np.einsum("i,j,k->ijk", a, b, c)
    tensor *= 0.9 * peak / tensor.max()
    stack = np.moveaxis(tensor, 2, 0)
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return DepthSequence(frames=np.round(stack).astype(dtype), bit_depth=bit_depth)


def depth_corpus(
    height: int = 64, width: int = 64, frames: int = 16, seed: int = 0
) -> list[tuple[str, DepthSequence]]:
    """Five reference items mixing moving-edge scenes and low-rank content."""
    return [
        ("shapes-a", moving_shapes_sequence(height, width, frames, 2, seed=seed + 1)),
        ("shapes-b", moving_shapes_sequence(height, width, frames, 3, seed=seed + 2)),
        ("shapes-c", moving_shapes_sequence(height, width, frames, 1, seed=seed + 3)),
        ("lowrank-12", separable_sequence(12, height, width, frames, seed=seed + 4)),
        ("shapes-d", moving_shapes_sequence(height, width, frames, 4, seed=seed + 5)),
    ]
