"""Interconnection conditionings and the conditioned vector field.

Every conditioning is an invertible matrix M multiplying the stacked state
derivative, ``M xdot = f(x)``. The conditioned field M^{-1} f is never
formed by dense inversion; the unit-lower-triangular structure is exploited
by forward substitution through the blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import EvaluationError
from .model import Array, SystemStack, as_flat
from .sensitivity import solve_checked, total_derivative_table


@dataclass(frozen=True)
class Plain:
    """No conditioning: xdot = f(x)."""


@dataclass(frozen=True)
class SingularPerturbation:
    """Diagonal time-scale conditioning: xdot_i = f_i / eps_i.

    One epsilon per subsystem, the slowest pinned to 1 and the rest
    positive and nonincreasing toward the fast end.
    """

    epsilons: tuple[float, ...]

    def __init__(self, epsilons: Sequence[float]):
        eps = tuple(float(e) for e in epsilons)
        if not eps or eps[0] != 1.0:
            raise ValueError(f"epsilons must start at 1, got {eps}")
        if any(e <= 0 for e in eps):
            raise ValueError(f"epsilons must be positive, got {eps}")
        if any(b > a for a, b in zip(eps, eps[1:])):
            raise ValueError(f"epsilons must be nonincreasing, got {eps}")
        object.__setattr__(self, "epsilons", eps)


@dataclass(frozen=True)
class PredictiveSensitivity:
    """Feed slow-state motion forward through the steady-state sensitivities."""


@dataclass(frozen=True)
class Preconditioned:
    """Predictive-sensitivity with per-level gains H_i.

    Each gain is a nonzero scalar or an invertible (n_i, n_i) matrix;
    level i integrates xdot_i = H_i f_i + sum_{j<i} S[i][j] xdot_j.
    """

    gains: tuple

    def __init__(self, gains: Sequence):
        object.__setattr__(self, "gains", tuple(gains))


SensProvider = Callable[[SystemStack, Array], Sequence[Sequence[Array | None]]]


@dataclass(frozen=True)
class ApproximateSensitivity:
    """Predictive-sensitivity driven by an approximate sensitivity provider.

    ``provider(stack, x)`` returns blocks ``s[i][j]`` for j < i (entries for
    j >= i are ignored), letting experiments script frozen or perturbed
    sensitivities.
    """

    provider: SensProvider


Scheme = Union[Plain, SingularPerturbation, PredictiveSensitivity,
               Preconditioned, ApproximateSensitivity]


def _check_epsilons(scheme: SingularPerturbation, n: int) -> None:
    if len(scheme.epsilons) != n:
        raise ValueError(
            f"scheme has {len(scheme.epsilons)} epsilons for {n} subsystems")


def _gain_matrices(scheme: Preconditioned, dims: Sequence[int]) -> list[Array]:
    if len(scheme.gains) != len(dims):
        raise ValueError(f"scheme has {len(scheme.gains)} gains for {len(dims)} subsystems")
    mats = []
    for i, (g, d) in enumerate(zip(scheme.gains, dims)):
        arr = np.asarray(g, dtype=float)
        if arr.ndim == 0:
            if arr == 0.0:
                raise ValueError(f"gain {i} must be invertible, got 0")
            mats.append(float(arr) * np.eye(d))
        else:
            if arr.shape != (d, d):
                raise ValueError(f"gain {i} has shape {arr.shape}, expected ({d},{d})")
            solve_checked(arr, np.eye(d), level=i)  # invertibility guard
            mats.append(arr)
    return mats


def _sens_blocks(stack: SystemStack, scheme: Scheme, x: Array) -> Sequence[Sequence[Array | None]]:
    if isinstance(scheme, ApproximateSensitivity):
        return scheme.provider(stack, x)
    return total_derivative_table(stack, x).sens


def _forward_substitute(stack: SystemStack, sens, gains: list[Array] | None,
                        f_blocks: list[Array]) -> list[Array]:
    xdot: list[Array] = []
    for i in range(len(stack)):
        v = f_blocks[i] if gains is None else gains[i] @ f_blocks[i]
        for j in range(i):
            s = sens[i][j]
            if s is not None:
                v = v + np.atleast_2d(np.asarray(s, dtype=float)) @ xdot[j]
        xdot.append(v)
    return xdot


def conditioned_field(stack: SystemStack, scheme: Scheme, point) -> Array:
    """Evaluate the conditioned derivative M^{-1} f at a point."""
    x = as_flat(stack, point)
    f_blocks = [stack.field_block(i, x) for i in range(len(stack))]
    if isinstance(scheme, Plain):
        out = np.concatenate(f_blocks)
    elif isinstance(scheme, SingularPerturbation):
        _check_epsilons(scheme, len(stack))
        out = np.concatenate([f / e for f, e in zip(f_blocks, scheme.epsilons)])
    elif isinstance(scheme, (PredictiveSensitivity, ApproximateSensitivity)):
        sens = _sens_blocks(stack, scheme, x)
        out = np.concatenate(_forward_substitute(stack, sens, None, f_blocks))
    elif isinstance(scheme, Preconditioned):
        gains = _gain_matrices(scheme, stack.dims)
        sens = total_derivative_table(stack, x).sens
        out = np.concatenate(_forward_substitute(stack, sens, gains, f_blocks))
    else:
        raise TypeError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(out)):
        raise EvaluationError(f"conditioned field is non-finite at {x!r}")
    return out


def make_conditioned_field(stack: SystemStack, scheme: Scheme) -> Callable[[Array], Array]:
    """Closure over (stack, scheme) for tight integration loops."""
    return lambda x: conditioned_field(stack, scheme, x)


def conditioning_matrix(stack: SystemStack, scheme: Scheme, point):
    """Dense conditioning matrix M at a point, plus its inverse action.

    Returns ``(M, apply_inverse)`` where ``apply_inverse(v)`` computes
    M^{-1} v by forward substitution, so that
    ``apply_inverse(stack.field(x)) == conditioned_field(stack, scheme, x)``.
    """
    x = as_flat(stack, point)
    n = len(stack)
    dims = stack.dims
    off = stack.offsets
    m = np.eye(stack.total_dim)

    if isinstance(scheme, Plain):
        return m, lambda v: np.asarray(v, dtype=float).copy()

    if isinstance(scheme, SingularPerturbation):
        _check_epsilons(scheme, n)
        for i in range(n):
            m[off[i]:off[i + 1], off[i]:off[i + 1]] *= scheme.epsilons[i]
        eps = scheme.epsilons

        def apply_inverse(v: Array) -> Array:
            v = np.asarray(v, dtype=float)
            return np.concatenate([v[off[i]:off[i + 1]] / eps[i] for i in range(n)])

        return m, apply_inverse

    if isinstance(scheme, (PredictiveSensitivity, ApproximateSensitivity)):
        sens = _sens_blocks(stack, scheme, x)
        gains = None
    elif isinstance(scheme, Preconditioned):
        sens = total_derivative_table(stack, x).sens
        gains = _gain_matrices(scheme, dims)
    else:
        raise TypeError(f"unknown scheme {scheme!r}")

    # M = diag(H_i^{-1}) @ L with L unit lower triangular carrying -S blocks.
    for i in range(n):
        for j in range(i):
            s = sens[i][j]
            if s is not None:
                m[off[i]:off[i + 1], off[j]:off[j + 1]] = -np.atleast_2d(np.asarray(s, dtype=float))
    if gains is not None:
        for i in range(n):
            hinv = solve_checked(gains[i], np.eye(dims[i]), level=i)
            m[off[i]:off[i + 1], :] = hinv @ m[off[i]:off[i + 1], :]

    def apply_inverse(v: Array) -> Array:
        v = np.asarray(v, dtype=float)
        blocks = [v[off[i]:off[i + 1]] for i in range(n)]
        return np.concatenate(_forward_substitute(stack, sens, gains, blocks))

    return m, apply_inverse


def discrete_step(stack: SystemStack, scheme: Scheme, point) -> Array:
    """One conditioned update x + M^{-1} f(x).

    Any step-size scaling is expected to be folded into the stack's fields
    (see SystemStack.scaled); equilibria of f are fixed points.
    """
    x = as_flat(stack, point)
    return x + conditioned_field(stack, scheme, x)


def frozen_sensitivity_provider(stack: SystemStack, at_point) -> SensProvider:
    """Provider returning the exact sensitivities frozen at a reference point."""
    frozen = total_derivative_table(stack, as_flat(stack, at_point)).sens
    return lambda _stack, _x: frozen


def noisy_sensitivity_provider(sigma: float, seed: int = 0) -> SensProvider:
    """Provider adding zero-mean Gaussian noise (scale ``sigma``) to the exact
    sensitivities; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)

    def provider(stack: SystemStack, x: Array):
        sens = total_derivative_table(stack, x).sens
        out: list[list[Array | None]] = []
        for i, row in enumerate(sens):
            out.append([None if blk is None else blk + rng.normal(0.0, sigma, blk.shape)
                        for blk in row])
        return out

    return provider
