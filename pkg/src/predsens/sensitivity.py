"""Total derivatives, steady-state sensitivities, and steady-state solves.

The central object is the table of total derivatives ``D[i][j]`` and
sensitivities ``S[i][j]`` (j < i), built by eliminating levels from the
fastest subsystem down to the slowest:

    D[i][N-1] = partial of f_i w.r.t. the fastest block
    D[i][j]   = partial[i][j] + sum_{k > max(i, j)} D[i][k] @ S[k][j]
    S[i][j]   = -inverse(D[i][i]) @ D[i][j]          for j < i

``S[i][j]`` equals the derivative of the steady-state map of level i with
respect to block j whenever all levels faster than i sit at their steady
states, but the table itself is defined (and computed here) at arbitrary
points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, SingularMatrixError
from .model import Array, SystemStack, as_flat, finite_difference_jacobian, DEFAULT_FD_STEP

#: Diagonal blocks with a 2-norm condition estimate beyond this are treated
#: as singular (Assumption-style invertibility violation).
CONDITION_LIMIT = 1e12

NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-12


def solve_checked(a: Array, b: Array, level: int | None = None) -> Array:
    """LU solve with a singularity guard based on the condition estimate."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    sv = np.linalg.svd(a, compute_uv=False)
    cond = np.inf if sv[-1] == 0.0 else float(sv[0] / sv[-1])
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        where = "" if level is None else f" at subsystem {level}"
        raise SingularMatrixError(
            f"matrix{where} is numerically singular (condition estimate {cond:.3e})",
            level=level, cond=cond)
    return np.linalg.solve(a, b)


def jacobian_row(stack: SystemStack, i: int, x: Array, fd_step: float = DEFAULT_FD_STEP) -> list[Array]:
    """Partial blocks of f_i with respect to every state block."""
    sub = stack.subsystems[i]
    if sub.jacobian is not None:
        return [np.atleast_2d(np.asarray(b, dtype=float)) for b in sub.jacobian(x)]
    full = finite_difference_jacobian(lambda y: stack.field_block(i, y), x, fd_step)
    return [full[:, stack.offsets[j]:stack.offsets[j + 1]] for j in range(len(stack))]


def jacobian_grid(stack: SystemStack, point, fd_step: float = DEFAULT_FD_STEP) -> list[list[Array]]:
    """All partial blocks ``grid[i][j]`` at a point, analytic where available."""
    x = as_flat(stack, point)
    return [jacobian_row(stack, i, x, fd_step) for i in range(len(stack))]


@dataclass
class SensitivityTable:
    """Partial, total, and sensitivity blocks evaluated at one point.

    ``total[i][j]`` is D[i][j]; ``sens[i][j]`` is S[i][j] for j < i and
    None otherwise.
    """

    point: Array
    dims: tuple[int, ...]
    partial: list[list[Array]]
    total: list[list[Array]]
    sens: list[list[Array | None]]

    def sens_block(self, i: int, j: int) -> Array:
        blk = self.sens[i][j]
        if blk is None:
            raise IndexError(f"sensitivity requires j < i, got ({i},{j})")
        return blk


def total_derivative_table(stack: SystemStack, point, grid: list[list[Array]] | None = None,
                           fd_step: float = DEFAULT_FD_STEP) -> SensitivityTable:
    """Run the fast-to-slow elimination recursion at ``point``.

    Requires every diagonal total-derivative block D[i][i] for i >= 1 to be
    invertible; a violation raises :class:`SingularMatrixError` naming the
    level.
    """
    x = as_flat(stack, point)
    if grid is None:
        grid = jacobian_grid(stack, x, fd_step)
    n = len(stack)
    total: list[list[Array | None]] = [[None] * n for _ in range(n)]
    sens: list[list[Array | None]] = [[None] * n for _ in range(n)]
    for i in range(n - 1, -1, -1):
        for j in range(n - 1, -1, -1):
            d = np.array(grid[i][j], dtype=float)
            for k in range(max(i, j) + 1, n):
                d += total[i][k] @ sens[k][j]
            total[i][j] = d
        if i > 0:
            for j in range(i):
                sens[i][j] = solve_checked(total[i][i], -total[i][j], level=i)
    return SensitivityTable(point=x, dims=stack.dims, partial=grid,
                            total=total, sens=sens)  # type: ignore[arg-type]


def _newton(residual, jacobian, y0: Array, tol: float, max_iter: int,
            what: str) -> Array:
    """Damped Newton iteration with step halving on residual increase."""
    y = np.array(y0, dtype=float)
    r = residual(y)
    rn = float(np.linalg.norm(r))
    for it in range(max_iter):
        if rn <= tol:
            return y
        step = solve_checked(jacobian(y), -r)
        alpha = 1.0
        for _ in range(40):
            cand = y + alpha * step
            rc = residual(cand)
            rcn = float(np.linalg.norm(rc))
            if np.isfinite(rcn) and rcn < rn:
                break
            alpha *= 0.5
        else:
            raise ConvergenceError(
                f"{what}: damping stalled at residual {rn:.3e}",
                residual=rn, iterations=it)
        y, r, rn = cand, rc, rcn
    if rn <= tol:
        return y
    raise ConvergenceError(
        f"{what}: no convergence within {max_iter} iterations "
        f"(last residual {rn:.3e})", residual=rn, iterations=max_iter)


def steady_state_solve(stack: SystemStack, level: int, upstream, guess,
                       tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER,
                       fd_step: float = DEFAULT_FD_STEP) -> list[Array]:
    """Solve f_j = 0 jointly for all levels j >= ``level``.

    ``upstream`` holds the fixed blocks x_0 .. x_{level-1}; ``guess`` the
    starting blocks (or flat values) for the solved levels. Returns the
    solved blocks in level order. The joint root coincides with the nested
    steady-state maps of the individual levels.
    """
    n = len(stack)
    if not 0 <= level < n:
        raise IndexError(f"level {level} out of range for {n} subsystems")
    up = [np.asarray(b, dtype=float).reshape(-1) for b in upstream]
    if len(up) != level:
        raise ValueError(f"expected {level} upstream blocks, got {len(up)}")
    for j, b in enumerate(up):
        if b.size != stack.dims[j]:
            raise ValueError(f"upstream block {j} has length {b.size}, "
                             f"expected {stack.dims[j]}")
    head = np.concatenate(up) if up else np.zeros(0)
    tail_dims = stack.dims[level:]
    tail_size = int(np.sum(tail_dims))
    g = np.asarray(guess, dtype=float)
    g = g.reshape(-1) if g.ndim == 1 else np.concatenate([np.ravel(b) for b in g])
    if g.size != tail_size:
        raise ValueError(f"guess has {g.size} entries, expected {tail_size}")

    def compose(y: Array) -> Array:
        return np.concatenate([head, y])

    def residual(y: Array) -> Array:
        x = compose(y)
        return np.concatenate([stack.field_block(j, x) for j in range(level, n)])

    def jac(y: Array) -> Array:
        x = compose(y)
        rows = []
        for j in range(level, n):
            row = jacobian_row(stack, j, x, fd_step)
            rows.append(np.hstack(row[level:]))
        return np.vstack(rows)

    y = _newton(residual, jac, g, tol, max_iter, what=f"steady state from level {level}")
    cuts = np.concatenate([[0], np.cumsum(tail_dims)]).astype(int)
    return [y[cuts[k]:cuts[k + 1]] for k in range(len(tail_dims))]


def reduced_field(stack: SystemStack, level: int, partial_point, guess,
                  tol: float = NEWTON_TOL, max_iter: int = NEWTON_MAX_ITER) -> Array:
    """f_level evaluated with all faster blocks at their steady states.

    ``partial_point`` holds blocks x_0 .. x_level.
    """
    n = len(stack)
    blocks = [np.asarray(b, dtype=float).reshape(-1) for b in partial_point]
    if len(blocks) != level + 1:
        raise ValueError(f"expected {level + 1} blocks, got {len(blocks)}")
    if level == n - 1:
        return stack.field_block(level, np.concatenate(blocks))
    solved = steady_state_solve(stack, level + 1, blocks, guess, tol=tol, max_iter=max_iter)
    x = np.concatenate(blocks + solved)
    return stack.field_block(level, x)
