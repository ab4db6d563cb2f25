"""CP decomposition by alternating least squares with pairwise perturbation.

Each sweep solves the normal equations S Gamma = M per mode, where M is the
MTTKRP of the tensor with the other factors. Near convergence the exact
MTTKRPs are replaced by first-order perturbative corrections around a set
of paused factors; the correction operators are built once per pause via a
memoized dimension-tree contraction schedule and reused for every mode.

Scale handling: all modes except the last keep unit-norm columns, the last
mode carries the magnitude. Weights are extracted only when the final model
is assembled, so the sweep algebra and the perturbation deltas stay free of
per-sweep scale jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DomainError, ResourceError
from .tensor_ops import (
    KruskalModel,
    compute_grams,
    fit_error,
    gram_hadamard,
    mttkrp,
    validate_tensor,
)

# fit changes below this for STALL_SWEEPS consecutive sweeps end the run
STALL_TOL = 1e-12
STALL_SWEEPS = 10

# second-order operators above this size abort instead of thrashing
PP_MEMORY_LIMIT_BYTES = 4 << 30


@dataclass
class AlsConfig:
    """Knobs for one decomposition run."""

    rank: int
    max_sweeps: int = 200
    grad_tol: float = 1e-6
    seed: int = 0
    pp_enabled: bool = True
    pp_threshold: float = 0.1
    pp_recompute_after: int = 10
    ridge: float = 1e-12

    def __post_init__(self):
        if self.rank < 1:
            raise DomainError(f"rank must be >= 1, got {self.rank}")
        if self.max_sweeps < 1:
            raise DomainError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        for name in ("grad_tol", "pp_threshold", "ridge"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.pp_recompute_after < 1:
            raise DomainError("pp_recompute_after must be >= 1")


@dataclass
class AlsReport:
    """Instrumentation of a finished run."""

    sweeps_run: int
    final_grad_norm: float
    final_fit_error: float
    exact_mttkrp_count: int
    pp_mttkrp_count: int
    per_sweep_fit: list[float]
    converged: bool
    stalled: bool


@dataclass
class PPState:
    """Perturbation operators paused at a factor snapshot.

    ``first_order[n]`` is the exact MTTKRP at the paused factors.
    ``pair_terms[(i, j)]`` (i < j) holds the tensor contracted with every
    paused factor except modes i and j, axes (a_i, a_j, R); each unordered
    pair is stored once and addressed from both sides.
    """

    paused_factors: list[np.ndarray]
    first_order: list[np.ndarray]
    pair_terms: dict[tuple[int, int], np.ndarray]
    stale: bool = False


def init_factors(shape, config: AlsConfig) -> KruskalModel:
    """Seeded uniform [0, 1) factors with unit weights."""
    rng = np.random.default_rng(config.seed)
    factors = [rng.random((int(a), config.rank)) for a in shape]
    return KruskalModel(factors)


def _solve_normal_equations(gamma: np.ndarray, rhs: np.ndarray, ridge: float) -> np.ndarray:
    """Solve X gamma = rhs for X with a relative ridge on the diagonal."""
    rank = gamma.shape[0]
    trace = float(np.trace(gamma))
    lam = ridge * trace / rank if trace > 0 else ridge
    system = gamma + lam * np.eye(rank)
    try:
        chol = scipy.linalg.cho_factor(system, lower=True)
        return scipy.linalg.cho_solve(chol, rhs.T).T
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(
            f"normal equations singular beyond ridge rescue "
            f"(trace={trace:.3e}, ridge={lam:.3e}): {exc}"
        ) from exc


def als_update_mode(t, model: KruskalModel, grams, mode: int, config: AlsConfig) -> np.ndarray:
    """One exact normal-equation update for ``mode``.

    The caller is responsible for refreshing ``grams[mode]`` and
    renormalizing columns afterwards.
    """
    t = np.asarray(t)
    gamma = gram_hadamard(grams, mode)
    rhs = mttkrp(t, model.factors, mode)
    return _solve_normal_equations(gamma, rhs, config.ridge)


def _folded_factors(model: KruskalModel) -> list[np.ndarray]:
    """Factors with the weights folded into the last mode."""
    factors = list(model.factors)
    factors[-1] = factors[-1] * model.weights[None, :]
    return factors


def gradient_norm(t, model: KruskalModel, grams=None) -> float:
    """Relative Frobenius norm of the stacked objective gradient.

    Component n is S^(n) Gamma^(n) - M^(n), evaluated with the model weights
    folded into the last mode; the result is divided by ||t||_F (absolute
    when the tensor is zero).
    """
    t = np.asarray(t, dtype=np.float64)
    factors = _folded_factors(model)
    if grams is None:
        grams = compute_grams(factors)
    total = 0.0
    for n in range(len(factors)):
        gamma = gram_hadamard(grams, n)
        rhs = mttkrp(t, factors, n)
        total += float(np.linalg.norm(factors[n] @ gamma - rhs) ** 2)
    norm_t = float(np.linalg.norm(t))
    return math.sqrt(total) / norm_t if norm_t > 0 else math.sqrt(total)


def _contract_mode(cur, cur_modes, has_rank, factor, mode):
    """Contract one tensor mode against a factor, tying the rank axis.

    ``cur`` carries axes for ``cur_modes`` in ascending order plus a trailing
    rank axis once at least one factor has been absorbed.
    """
    letters = [chr(ord("a") + m) for m in cur_modes]
    in_sub = "".join(letters) + ("z" if has_rank else "")
    fac_sub = chr(ord("a") + mode) + "z"
    out_modes = [m for m in cur_modes if m != mode]
    out_sub = "".join(chr(ord("a") + m) for m in out_modes) + "z"
    return np.einsum(f"{in_sub},{fac_sub}->{out_sub}", cur, factor), out_modes


def build_pp_state(t, model: KruskalModel, memory_limit_bytes: int | None = None) -> PPState:
    """Build the perturbation operators at the model's current factors.

    Partial contractions of the tensor with factor subsets are memoized, so
    each distinct subset is contracted exactly once; the first-order
    operators reuse the pair operators' parents.
    """
    t = np.asarray(t, dtype=np.float64)
    factors = [f.copy() for f in model.factors]
    order = t.ndim
    if len(factors) != order:
        raise DomainError(f"expected {order} factors, got {len(factors)}")
    rank = factors[0].shape[1]

    limit = PP_MEMORY_LIMIT_BYTES if memory_limit_bytes is None else memory_limit_bytes
    pair_bytes = sum(
        t.shape[i] * t.shape[j] * rank * 8
        for i in range(order)
        for j in range(i + 1, order)
    )
    if pair_bytes > limit:
        raise ResourceError(
            f"second-order operators need {pair_bytes} bytes (limit {limit}); "
            "re-encode with a smaller frame group size"
        )

    # memo key: frozenset of contracted modes -> (array, remaining modes, has_rank)
    memo: dict[frozenset, tuple[np.ndarray, list[int], bool]] = {
        frozenset(): (t, list(range(order)), False)
    }

    def node(contracted: frozenset):
        if contracted in memo:
            return memo[contracted]
        # contract the smallest extent last so big modes disappear early
        j = min(contracted, key=lambda m: (t.shape[m], -m))
        parent, parent_modes, parent_rank = node(contracted - {j})
        cur, out_modes = _contract_mode(parent, parent_modes, parent_rank, factors[j], j)
        memo[contracted] = (cur, out_modes, True)
        return memo[contracted]

    all_modes = frozenset(range(order))
    pair_terms = {}
    for i in range(order):
        for j in range(i + 1, order):
            arr, modes, _ = node(all_modes - {i, j})
            assert modes == [i, j]
            pair_terms[(i, j)] = arr
    first_order = []
    for n in range(order):
        arr, modes, _ = node(all_modes - {n})
        assert modes == [n]
        first_order.append(arr)
    return PPState(factors, first_order, pair_terms)


def pp_mttkrp(state: PPState, model: KruskalModel, mode: int) -> np.ndarray:
    """First-order perturbative MTTKRP around the paused factors."""
    if state.stale:
        raise DomainError("pairwise-perturbation state is stale; rebuild before use")
    factors = model.factors
    order = len(state.paused_factors)
    if len(factors) != order:
        raise DomainError(f"expected {order} factors, got {len(factors)}")
    if not 0 <= mode < order:
        raise DomainError(f"mode {mode} out of range")
    out = state.first_order[mode].copy()
    for i in range(order):
        if i == mode:
            continue
        if factors[i].shape != state.paused_factors[i].shape:
            raise DomainError(f"factor {i} shape changed since the state was built")
        delta = factors[i] - state.paused_factors[i]
        if not np.any(delta):
            continue
        if i < mode:
            pair = state.pair_terms[(i, mode)]
            out += np.einsum("xyz,xz->yz", pair, delta)
        else:
            pair = state.pair_terms[(mode, i)]
            out += np.einsum("yxz,xz->yz", pair, delta)
    return out


def canonicalize_signs(model: KruskalModel) -> KruskalModel:
    """Flip column signs so each non-final factor column has a positive peak.

    Compensating flips land in the last mode, leaving the model unchanged.
    """
    factors = [f.copy() for f in model.factors]
    for n in range(len(factors) - 1):
        peaks = np.abs(factors[n]).argmax(axis=0)
        signs = np.sign(factors[n][peaks, np.arange(factors[n].shape[1])])
        signs[signs == 0] = 1.0
        factors[n] *= signs[None, :]
        factors[-1] *= signs[None, :]
    return KruskalModel(factors, model.weights.copy())


def _max_relative_delta(factors, reference) -> float:
    worst = 0.0
    for f, ref in zip(factors, reference):
        ref_norm = float(np.linalg.norm(ref))
        delta = float(np.linalg.norm(f - ref))
        if ref_norm == 0.0:
            worst = max(worst, 0.0 if delta == 0.0 else math.inf)
        else:
            worst = max(worst, delta / ref_norm)
    return worst


def _normalize_columns(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=0)
    norms = np.where(norms == 0, 1.0, norms)
    return f / norms[None, :]


def _sweep_fit(norm_t_sq, gamma_last, rhs_last, new_last) -> float:
    """Relative fit from the last mode's normal-equation pieces.

    ||t - model||^2 = ||t||^2 - 2 <M, S> + <S^T S, Gamma>, all of which are
    already in hand after the final mode update of a sweep.
    """
    model_sq = float(np.sum((new_last.T @ new_last) * gamma_last))
    inner = float(np.sum(rhs_last * new_last))
    resid_sq = max(norm_t_sq - 2.0 * inner + model_sq, 0.0)
    return math.sqrt(resid_sq) / math.sqrt(norm_t_sq) if norm_t_sq > 0 else math.sqrt(resid_sq)


def cp_als(t, config: AlsConfig) -> tuple[KruskalModel, AlsReport]:
    """Run CP-ALS on a dense tensor.

    Ends when the relative gradient norm drops below ``grad_tol`` (verified
    with exact MTTKRPs before stopping), when the fit stalls, or when the
    sweep budget runs out; the last case flags non-convergence in the report
    instead of raising.
    """
    t = validate_tensor(t)
    order = t.ndim
    model = init_factors(t.shape, config)
    factors = model.factors
    grams = compute_grams(factors)
    norm_t = float(np.linalg.norm(t))
    norm_t_sq = norm_t * norm_t

    state: PPState | None = None
    pp_sweeps = 0
    exact_count = 0
    pp_count = 0
    per_sweep_fit: list[float] = []
    stall_run = 0
    converged = False
    stalled = False
    last_exact_delta = math.inf

    for _ in range(config.max_sweeps):
        use_pp = False
        if config.pp_enabled:
            if state is not None:
                drift = _max_relative_delta(factors, state.paused_factors)
                if drift >= config.pp_threshold or pp_sweeps >= config.pp_recompute_after:
                    state.stale = True
                    state = build_pp_state(t, model)
                    exact_count += order
                    pp_sweeps = 0
                use_pp = True
            elif last_exact_delta < config.pp_threshold:
                state = build_pp_state(t, model)
                exact_count += order
                pp_sweeps = 0
                use_pp = True

        start_factors = None if use_pp else [f.copy() for f in factors]
        grad_sq = 0.0
        gamma = rhs = new = None
        for n in range(order):
            gamma = gram_hadamard(grams, n)
            if use_pp:
                rhs = pp_mttkrp(state, model, n)
                pp_count += 1
            else:
                rhs = mttkrp(t, factors, n)
                exact_count += 1
            grad_sq += float(np.linalg.norm(factors[n] @ gamma - rhs) ** 2)
            new = _solve_normal_equations(gamma, rhs, config.ridge)
            if n < order - 1:
                new = _normalize_columns(new)
            factors[n] = new
            grams[n] = new.T @ new
        if use_pp:
            pp_sweeps += 1
        else:
            last_exact_delta = _max_relative_delta(factors, start_factors)

        fit = _sweep_fit(norm_t_sq, gamma, rhs, new)
        if fit < 1e-3:
            # the normal-equation identity cancels catastrophically down here
            fit = fit_error(t, model)
        per_sweep_fit.append(fit)

        grad_est = math.sqrt(grad_sq) / norm_t if norm_t > 0 else math.sqrt(grad_sq)
        if grad_est < config.grad_tol:
            exact_grad = gradient_norm(t, model)
            exact_count += order
            if exact_grad < config.grad_tol:
                converged = True
                break

        if len(per_sweep_fit) >= 2 and abs(per_sweep_fit[-2] - fit) < STALL_TOL:
            stall_run += 1
            if stall_run >= STALL_SWEEPS:
                converged = True
                stalled = True
                break
        else:
            stall_run = 0

    model = canonicalize_signs(model)
    weights = np.linalg.norm(model.factors[-1], axis=0)
    weights = np.where(weights == 0, 1.0, weights)
    model.factors[-1] = model.factors[-1] / weights[None, :]
    model = KruskalModel(model.factors, weights)

    final_grad = gradient_norm(t, model)
    exact_count += order
    report = AlsReport(
        sweeps_run=len(per_sweep_fit),
        final_grad_norm=final_grad,
        final_fit_error=fit_error(t, model),
        exact_mttkrp_count=exact_count,
        pp_mttkrp_count=pp_count,
        per_sweep_fit=per_sweep_fit,
        converged=converged,
        stalled=stalled,
    )
    return model, report
