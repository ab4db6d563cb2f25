"""Dense tensor kernels: matricization, Khatri-Rao, MTTKRP, Kruskal models.

Index convention, used consistently everywhere: the first index varies
fastest. A tensor's flat layout is Fortran order, mode-n matricization
keeps mode n as rows and linearizes the remaining modes with the smallest
remaining mode varying fastest, and Khatri-Rao rows follow the same order
(first listed matrix fastest). Under this convention

    mttkrp(t, factors, n) == matricize(t, n) @ khatri_rao(factors, skip=n)

holds verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

# einsum subscripts: one letter per mode plus 'z' for the rank axis
_MAX_ORDER = 24


def validate_tensor(t) -> np.ndarray:
    """Coerce to a float64 ndarray and check the dense-tensor invariants."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < 2:
        raise DomainError(f"tensor order must be >= 2, got {arr.ndim}")
    if arr.ndim > _MAX_ORDER:
        raise DomainError(f"tensor order {arr.ndim} exceeds supported maximum {_MAX_ORDER}")
    if any(a < 1 for a in arr.shape):
        raise DomainError(f"every extent must be >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor contains non-finite values")
    return arr


def _validate_factor(f, name="factor") -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"{name} must be a 2-D matrix with positive dims, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


@dataclass
class KruskalModel:
    """Rank-R model: factor matrices (one per mode) plus column weights.

    ``factors[n]`` has shape (extent of mode n, R); column r of every factor
    and ``weights[r]`` together define the r-th rank-1 term.
    """

    factors: list[np.ndarray]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.factors:
            raise DomainError("model needs at least one factor matrix")
        self.factors = [_validate_factor(f, f"factor {n}") for n, f in enumerate(self.factors)]
        cols = {f.shape[1] for f in self.factors}
        if len(cols) != 1:
            raise DomainError(f"factor matrices disagree on rank: {sorted(cols)}")
        if self.weights is None:
            self.weights = np.ones(self.rank)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.rank,):
            raise DomainError(
                f"weights must have length {self.rank}, got shape {self.weights.shape}"
            )
        if not np.all(np.isfinite(self.weights)):
            raise DomainError("weights contain non-finite values")

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    def copy(self) -> "KruskalModel":
        return KruskalModel([f.copy() for f in self.factors], self.weights.copy())


def _check_mode(order: int, mode: int):
    if not 0 <= mode < order:
        raise DomainError(f"mode {mode} out of range for order-{order} tensor")


def matricize(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-n unfolding: rows are mode-n fibers, columns linearize the rest.

    Column order puts the smallest remaining mode fastest, matching the
    Fortran flat layout of the tensor itself.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize`: rebuild the tensor of ``shape``."""
    m = np.asarray(m)
    shape = tuple(int(a) for a in shape)
    _check_mode(len(shape), mode)
    rest = [a for i, a in enumerate(shape) if i != mode]
    if m.shape != (shape[mode], int(np.prod(rest))):
        raise DomainError(
            f"matrix shape {m.shape} inconsistent with tensor shape {shape} at mode {mode}"
        )
    t = m.reshape([shape[mode]] + rest, order="F")
    return np.moveaxis(t, 0, mode)


def khatri_rao(mats: Sequence[np.ndarray], skip: int | None = None) -> np.ndarray:
    """Column-wise Kronecker product of the listed matrices.

    Output rows linearize the retained row indices with the first listed
    matrix varying fastest. ``skip`` drops the matrix at that position,
    which is how the mode-n product of a factor list is formed.
    """
    kept = [m for i, m in enumerate(mats) if i != skip]
    if not kept:
        raise DomainError("khatri_rao needs at least one matrix after skip")
    kept = [_validate_factor(m) for m in kept]
    rank = kept[0].shape[1]
    if any(m.shape[1] != rank for m in kept):
        raise DomainError("khatri_rao inputs must share the column count")
    out = kept[0]
    for m in kept[1:]:
        # new index is slower than everything accumulated so far
        out = (m[:, None, :] * out[None, :, :]).reshape(-1, rank)
    return out


def compute_grams(factors: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gram matrices F.T @ F for every factor."""
    return [f.T @ f for f in factors]


def gram_hadamard(grams: Sequence[np.ndarray], skip: int) -> np.ndarray:
    """Elementwise product of all Gram matrices except ``skip``."""
    _check_mode(len(grams), skip)
    out = None
    for i, g in enumerate(grams):
        if i == skip:
            continue
        out = g.copy() if out is None else out * g
    if out is None:
        raise DomainError("gram_hadamard needs at least two modes")
    return out


def _rank_of(factors: Sequence[np.ndarray]) -> int:
    rank = factors[0].shape[1]
    if any(f.shape[1] != rank for f in factors):
        raise DomainError("factor matrices disagree on rank")
    return rank


def _check_factors_match(t: np.ndarray, factors: Sequence[np.ndarray]):
    if len(factors) != t.ndim:
        raise DomainError(f"expected {t.ndim} factors, got {len(factors)}")
    for n, f in enumerate(factors):
        if f.shape[0] != t.shape[n]:
            raise DomainError(
                f"factor {n} has {f.shape[0]} rows but mode {n} extent is {t.shape[n]}"
            )


def mttkrp(t: np.ndarray, factors: Sequence[np.ndarray], mode: int) -> np.ndarray:
    """Matricized tensor times Khatri-Rao product for one mode.

    Evaluated as a chain of single-mode contractions, big extents first, so
    the Khatri-Rao matrix is never materialized.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, mode)
    _check_factors_match(t, factors)
    _rank_of(factors)
    # contract remaining modes in decreasing-extent order (ties: lower mode first)
    others = sorted(
        (i for i in range(t.ndim) if i != mode),
        key=lambda i: (-t.shape[i], i),
    )
    cur = t
    cur_modes = list(range(t.ndim))
    has_rank = False
    for j in others:
        letters = [chr(ord("a") + m) for m in cur_modes]
        in_sub = "".join(letters) + ("z" if has_rank else "")
        fac_sub = chr(ord("a") + j) + "z"
        out_modes = [m for m in cur_modes if m != j]
        out_sub = "".join(chr(ord("a") + m) for m in out_modes) + "z"
        cur = np.einsum(f"{in_sub},{fac_sub}->{out_sub}", cur, factors[j])
        cur_modes = out_modes
        has_rank = True
    return cur


def reconstruct(model: KruskalModel) -> np.ndarray:
    """Dense tensor of the model: sum of weighted rank-1 outer products."""
    letters = [chr(ord("a") + n) for n in range(model.order)]
    in_subs = ["z"] + [f"{c}z" for c in letters]
    expr = ",".join(in_subs) + "->" + "".join(letters)
    return np.einsum(expr, model.weights, *model.factors)


def fit_error(t: np.ndarray, model: KruskalModel) -> float:
    """Relative Frobenius error of the model against ``t``.

    Falls back to the absolute residual norm when ``t`` is identically zero.
    """
    t = np.asarray(t, dtype=np.float64)
    if model.shape != t.shape:
        raise DomainError(f"model shape {model.shape} does not match tensor shape {t.shape}")
    resid = np.linalg.norm(t - reconstruct(model))
    norm_t = np.linalg.norm(t)
    return float(resid / norm_t) if norm_t > 0 else float(resid)
