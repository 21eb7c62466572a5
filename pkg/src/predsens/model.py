"""Core representations of stacked subsystems ordered slow to fast.

A :class:`SystemStack` holds N subsystems. Subsystem ``i`` owns a state
block of dimension ``dims[i]`` and a vector field ``f_i`` evaluated on the
full stacked state. All matrices produced elsewhere in the package use the
same block ordering, with index 0 the slowest subsystem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, StackDefinitionError

Array = np.ndarray
FieldFn = Callable[[Array], Array]
JacobianFn = Callable[[Array], Sequence[Array]]

#: Default central-difference step, scaled per coordinate by (1 + |x_k|).
DEFAULT_FD_STEP = 1e-6


def _frozen(values) -> Array:
    out = np.array(values, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Subsystem:
    """One level of the stack.

    ``field`` maps the full stacked state (1-D array of length total_dim)
    to this subsystem's derivative block of length ``dim``. ``jacobian``,
    when given, maps the full stacked state to the list of partial blocks
    of ``field`` with respect to every state block, in stack order. When
    absent, central finite differences are used.
    """

    dim: int
    field: FieldFn
    jacobian: JacobianFn | None = None

    def __post_init__(self):
        if self.dim <= 0:
            raise StackDefinitionError(f"subsystem dimension must be positive, got {self.dim}")


class SystemStack:
    """Ordered subsystems, index 0 slowest through index N-1 fastest."""

    def __init__(self, subsystems: Sequence[Subsystem]):
        if not subsystems:
            raise StackDefinitionError("a stack needs at least one subsystem")
        self.subsystems = tuple(subsystems)
        self.dims = tuple(s.dim for s in self.subsystems)
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)]))
        self.total_dim = self.offsets[-1]

    def __len__(self) -> int:
        return len(self.subsystems)

    def block(self, i: int, x: Array) -> Array:
        return x[self.offsets[i]:self.offsets[i + 1]]

    def split(self, x: Array) -> list[Array]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.total_dim,):
            raise StackDefinitionError(
                f"state has shape {x.shape}, expected ({self.total_dim},)")
        return [x[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self))]

    def field_block(self, i: int, x: Array) -> Array:
        out = np.asarray(self.subsystems[i].field(x), dtype=float).reshape(-1)
        if out.shape != (self.dims[i],):
            raise StackDefinitionError(
                f"field of subsystem {i} returned length {out.size}, expected {self.dims[i]}",
                index=i)
        return out

    def field(self, x: Array) -> Array:
        return np.concatenate([self.field_block(i, x) for i in range(len(self))])

    def scaled(self, factor: float) -> "SystemStack":
        """New stack whose fields (and Jacobians) are multiplied by ``factor``.

        Used to fold a discrete-time step size into the fields.
        """
        factor = float(factor)

        def make(sub: Subsystem) -> Subsystem:
            jac = None
            if sub.jacobian is not None:
                jac = lambda x, _j=sub.jacobian: [factor * np.asarray(b, dtype=float)
                                                  for b in _j(x)]
            return Subsystem(sub.dim, lambda x, _f=sub.field: factor * np.asarray(_f(x), dtype=float),
                             jac)

        return SystemStack([make(s) for s in self.subsystems])


@dataclass(frozen=True)
class StatePoint:
    """Immutable stacked state, stored as one read-only block per subsystem."""

    blocks: tuple[Array, ...]

    @classmethod
    def from_flat(cls, dims: Sequence[int], x) -> "StatePoint":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != int(np.sum(dims)):
            raise StackDefinitionError(
                f"state has {x.size} entries, expected {int(np.sum(dims))}")
        offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        return cls(tuple(_frozen(x[offsets[i]:offsets[i + 1]]) for i in range(len(dims))))

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "StatePoint":
        return cls(tuple(_frozen(b) for b in blocks))

    def flatten(self) -> Array:
        return np.concatenate(self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.size for b in self.blocks)


def as_flat(stack: SystemStack, point) -> Array:
    """Accept a StatePoint, block list, or flat array; return the flat state."""
    if isinstance(point, StatePoint):
        x = point.flatten()
    else:
        arr = np.asarray(point, dtype=float)
        if arr.ndim == 1:
            x = arr
        else:
            x = np.concatenate([np.asarray(b, dtype=float).reshape(-1) for b in point])
    if x.shape != (stack.total_dim,):
        raise StackDefinitionError(
            f"state has shape {x.shape}, expected ({stack.total_dim},)")
    return x


def finite_difference_jacobian(field: FieldFn, point, step: float = DEFAULT_FD_STEP) -> Array:
    """Central-difference Jacobian of ``field`` at ``point``.

    The step for coordinate k is ``step * (1 + |x_k|)``, balancing truncation
    against rounding for double precision.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = point.flatten() if isinstance(point, StatePoint) else np.asarray(point, dtype=float).reshape(-1)
    base = np.asarray(field(x), dtype=float).reshape(-1)
    if not np.all(np.isfinite(base)):
        raise EvaluationError(f"field returned non-finite values at {x!r}")
    jac = np.empty((base.size, x.size))
    for k in range(x.size):
        h = step * (1.0 + abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp = np.asarray(field(xp), dtype=float).reshape(-1)
        fm = np.asarray(field(xm), dtype=float).reshape(-1)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"field returned non-finite values near {x!r}")
        jac[:, k] = (fp - fm) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class StackReport:
    """Outcome of :func:`validate_stack`."""

    total_dim: int
    dims: tuple[int, ...]
    analytic_jacobian: tuple[bool, ...]
    ok: bool = True


def validate_stack(stack: SystemStack, probe) -> StackReport:
    """Check field output lengths and Jacobian block shapes at ``probe``.

    Raises :class:`StackDefinitionError` naming the offending subsystem on
    any mismatch; otherwise reports which subsystems carry analytic
    Jacobians.
    """
    x = as_flat(stack, probe)
    analytic = []
    for i, sub in enumerate(stack.subsystems):
        out = np.asarray(sub.field(x), dtype=float).reshape(-1)
        if out.shape != (sub.dim,):
            raise StackDefinitionError(
                f"field of subsystem {i} returned length {out.size}, expected {sub.dim}",
                index=i)
        if sub.jacobian is not None:
            blocks = list(sub.jacobian(x))
            if len(blocks) != len(stack):
                raise StackDefinitionError(
                    f"jacobian of subsystem {i} returned {len(blocks)} blocks, "
                    f"expected {len(stack)}", index=i)
            for j, blk in enumerate(blocks):
                blk = np.asarray(blk, dtype=float)
                if blk.shape != (sub.dim, stack.dims[j]):
                    raise StackDefinitionError(
                        f"jacobian block ({i},{j}) has shape {blk.shape}, expected "
                        f"({sub.dim},{stack.dims[j]})", index=i)
        analytic.append(sub.jacobian is not None)
    return StackReport(stack.total_dim, stack.dims, tuple(analytic))


def linear_stack(dims: Sequence[int], blocks, offsets=None) -> SystemStack:
    """Build an affine stack  f_i(x) = sum_j A[i][j] x_j + c[i].

    ``blocks[i][j]`` is the (dims[i], dims[j]) matrix A[i][j]; ``offsets``
    gives the constant terms c[i] (default zero). Analytic Jacobians are the
    given blocks.
    """
    dims = [int(d) for d in dims]
    n = len(dims)
    if any(d <= 0 for d in dims):
        raise StackDefinitionError(f"dims must be positive, got {dims}")
    if len(blocks) != n:
        raise StackDefinitionError(f"expected {n} block rows, got {len(blocks)}")
    mats: list[list[Array]] = []
    for i in range(n):
        if len(blocks[i]) != n:
            raise StackDefinitionError(
                f"block row {i} has {len(blocks[i])} entries, expected {n}", index=i)
        row = []
        for j in range(n):
            m = np.atleast_2d(np.asarray(blocks[i][j], dtype=float))
            if m.shape != (dims[i], dims[j]):
                raise StackDefinitionError(
                    f"block ({i},{j}) has shape {m.shape}, expected ({dims[i]},{dims[j]})",
                    index=i)
            row.append(_frozen(m))
        mats.append(row)
    consts = []
    for i in range(n):
        c = np.zeros(dims[i]) if offsets is None else np.asarray(offsets[i], dtype=float).reshape(-1)
        if c.shape != (dims[i],):
            raise StackDefinitionError(
                f"offset {i} has length {c.size}, expected {dims[i]}", index=i)
        consts.append(_frozen(c))

    cuts = np.concatenate([[0], np.cumsum(dims)]).astype(int)

    def make(i: int) -> Subsystem:
        row = mats[i]
        c = consts[i]

        def f(x: Array, _row=row, _c=c) -> Array:
            out = _c.copy()
            for j in range(n):
                out += _row[j] @ x[cuts[j]:cuts[j + 1]]
            return out

        return Subsystem(dims[i], f, lambda x, _row=row: list(_row))

    return SystemStack([make(i) for i in range(n)])
