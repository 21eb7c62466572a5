"""Jacobians, eigenvalue classification, and contraction certificates.

Local verdicts follow the linearization test: strictly negative spectral
abscissa means exponential stability, strictly positive means instability,
and a band of width 1e-9 around zero is reported as Marginal so verdicts do
not flap at analytic stability boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .conditioning import (Preconditioned, PredictiveSensitivity, Scheme,
                           _gain_matrices, conditioned_field, conditioning_matrix)
from .errors import ConvergenceError, NotSteadyStateError
from .model import Array, SystemStack, as_flat, finite_difference_jacobian
from .sensitivity import (SensitivityTable, jacobian_grid, steady_state_solve,
                          reduced_field, total_derivative_table)

#: Verdicts stay Marginal while |max Re lambda| <= this.
STABILITY_TOL = 1e-9


class Verdict(str, Enum):
    EXPONENTIALLY_STABLE = "ExponentiallyStable"
    UNSTABLE = "Unstable"
    MARGINAL = "Marginal"


def eigenvalues(matrix) -> Array:
    """All eigenvalues of a square real matrix (LAPACK Hessenberg + QR)."""
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    try:
        return np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - QR failures are rare
        raise ConvergenceError(f"eigenvalue iteration failed: {exc}") from exc


def match_eigenvalues(a, b) -> float:
    """Greedy multiset matching distance between two eigenvalue lists."""
    a = list(np.asarray(a, dtype=complex))
    b = list(np.asarray(b, dtype=complex))
    if len(a) != len(b):
        return np.inf
    worst = 0.0
    for lam in a:
        k = int(np.argmin([abs(lam - mu) for mu in b]))
        worst = max(worst, abs(lam - b.pop(k)))
    return worst


def _dense_jacobian(grid: list[list[Array]]) -> Array:
    return np.block([[np.atleast_2d(blk) for blk in row] for row in grid])


def jacobian_at(stack: SystemStack, scheme: Scheme, point, method: str = "fd",
                fd_step: float = 1e-6) -> Array:
    """Jacobian of the conditioned field at ``point``.

    ``method="fd"`` differentiates the conditioned field directly and is
    valid anywhere. ``method="assembled"`` forms M^{-1} grad f from the
    conditioning matrix; the two agree at steady states (and everywhere for
    conditionings with state-independent M).
    """
    x = as_flat(stack, point)
    if method == "fd":
        return finite_difference_jacobian(
            lambda y: conditioned_field(stack, scheme, y), x, fd_step)
    if method == "assembled":
        grad = _dense_jacobian(jacobian_grid(stack, x))
        _, apply_inverse = conditioning_matrix(stack, scheme, x)
        cols = [apply_inverse(grad[:, k]) for k in range(grad.shape[1])]
        return np.column_stack(cols)
    raise ValueError(f"method must be 'fd' or 'assembled', got {method!r}")


@dataclass
class BlockTriangularForm:
    """Upper-block-triangular similarity image of the conditioned Jacobian.

    ``matrix`` carries the total-derivative diagonal blocks; ``transforms``
    is the sequence of unit-lower-triangular similarity factors (fastest
    level first) whose product is the inverse conditioning matrix.
    """

    matrix: Array
    transforms: list[Array]
    diagonal_blocks: list[Array]
    table: SensitivityTable
    similarity_gap: float


def block_triangular_form(stack: SystemStack, point, tol: float = 1e-8) -> BlockTriangularForm:
    """Triangularize the conditioned Jacobian at a steady state.

    Requires ``norm(f(point)) <= tol``. The returned matrix has the blocks
    D[i][i] on its diagonal, which at a steady state equal the Jacobians of
    the reduced-order fields.
    """
    x = as_flat(stack, point)
    fnorm = float(np.linalg.norm(stack.field(x)))
    if fnorm > tol:
        raise NotSteadyStateError(
            f"point is not a steady state (residual {fnorm:.3e} > {tol:.1e})")
    table = total_derivative_table(stack, x)
    n = len(stack)
    off = stack.offsets
    transforms = []
    minv = np.eye(stack.total_dim)
    for i in range(n - 1, 0, -1):
        t = np.eye(stack.total_dim)
        for j in range(i):
            t[off[i]:off[i + 1], off[j]:off[j + 1]] = table.sens[i][j]
        transforms.append(t)
        minv = minv @ t
    grad = _dense_jacobian(table.partial)
    a_tilde = grad @ minv
    diag = [table.total[i][i] for i in range(n)]
    gap = match_eigenvalues(eigenvalues(a_tilde),
                            eigenvalues(minv @ grad))
    return BlockTriangularForm(matrix=a_tilde, transforms=transforms,
                               diagonal_blocks=diag, table=table,
                               similarity_gap=gap)


@dataclass
class StabilityReport:
    eigenvalues: Array
    block_eigenvalues: list[Array] | None
    verdict: Verdict
    spectral_abscissa: float
    block_spectrum_gap: float | None = None

    def to_json_dict(self) -> dict:
        pairs = [[float(z.real), float(z.imag)] for z in self.eigenvalues]
        blocks = None
        if self.block_eigenvalues is not None:
            blocks = [[[float(z.real), float(z.imag)] for z in lams]
                      for lams in self.block_eigenvalues]
        return {"verdict": self.verdict.value,
                "spectral_abscissa": self.spectral_abscissa,
                "eigenvalues": pairs,
                "block_eigenvalues": blocks}


def _sorted_eigs(a: Array) -> Array:
    lams = eigenvalues(a)
    order = np.lexsort((lams.imag, lams.real))
    return lams[order]


def classify_local_stability(stack: SystemStack, scheme: Scheme, steady_point,
                             tol: float = 1e-8) -> StabilityReport:
    """Eigenvalue verdict for the conditioned system at an equilibrium.

    For the sensitivity-based conditionings the report also carries the
    per-level reduced-block eigenvalues, which must agree with the full
    spectrum as a multiset (checked to 1e-6).
    """
    x = as_flat(stack, steady_point)
    fnorm = float(np.linalg.norm(stack.field(x)))
    if fnorm > tol:
        raise NotSteadyStateError(
            f"point is not a steady state (residual {fnorm:.3e} > {tol:.1e})")
    jac = jacobian_at(stack, scheme, x, method="assembled")
    lams = _sorted_eigs(jac)
    abscissa = float(np.max(lams.real))
    if abscissa < -STABILITY_TOL:
        verdict = Verdict.EXPONENTIALLY_STABLE
    elif abscissa > STABILITY_TOL:
        verdict = Verdict.UNSTABLE
    else:
        verdict = Verdict.MARGINAL

    block_lams = None
    gap = None
    if isinstance(scheme, (PredictiveSensitivity, Preconditioned)):
        table = total_derivative_table(stack, x)
        gains = None
        if isinstance(scheme, Preconditioned):
            gains = _gain_matrices(scheme, stack.dims)
        block_lams = []
        for i in range(len(stack)):
            blk = table.total[i][i]
            if gains is not None:
                blk = gains[i] @ blk
            block_lams.append(_sorted_eigs(blk))
        union = np.concatenate(block_lams)
        gap = match_eigenvalues(lams, union)
        # Repeated eigenvalues can be defective; QR then locates them only to
        # roughly eps**(1/m) for a cluster of size m, so the cross-check
        # loosens when the block spectrum itself is clustered.
        scale = 1.0 + float(np.max(np.abs(union)))
        sep = np.inf
        for a in range(union.size):
            for b in range(a + 1, union.size):
                sep = min(sep, abs(union[a] - union[b]))
        limit = 1e-6 * scale
        if sep <= 100.0 * limit:
            limit = max(limit, 50.0 * float(np.finfo(float).eps) ** 0.25 * scale)
        if gap > limit:
            raise ConvergenceError(
                f"block spectrum disagrees with full spectrum (gap {gap:.3e})")
    return StabilityReport(eigenvalues=lams, block_eigenvalues=block_lams,
                           verdict=verdict, spectral_abscissa=abscissa,
                           block_spectrum_gap=gap)


@dataclass
class ContractionCertificate:
    """Sampled contraction check with the induced inverse bounds.

    ``holds`` is True when P_i D[i][i] + D[i][i]^T P_i + Q_i stayed negative
    semidefinite (max eigenvalue <= residual tolerance) at every sample
    point, D[i][i] being the total-derivative diagonal blocks. The bound
    2 norm(P_i) / lambda_min(Q_i) then caps norm(inverse(D[i][i])); its
    sampled verification is recorded in ``bounds_verified``.
    """

    p: list[Array]
    q: list[Array]
    sample_points: list[Array]
    holds: bool
    inverse_bound: list[float]
    max_residual_eig: list[float]
    max_inverse_norm: list[float]
    bounds_verified: bool


def _check_spd(name: str, mats: list[Array], dims) -> list[Array]:
    out = []
    for i, m in enumerate(mats):
        a = np.asarray(m, dtype=float)
        if a.ndim == 0:
            a = float(a) * np.eye(dims[i])
        if a.shape != (dims[i], dims[i]):
            raise ValueError(f"{name}[{i}] has shape {a.shape}, expected ({dims[i]},{dims[i]})")
        if not np.allclose(a, a.T, atol=1e-12):
            raise ValueError(f"{name}[{i}] must be symmetric")
        if np.min(np.linalg.eigvalsh(a)) <= 0:
            raise ValueError(f"{name}[{i}] must be positive definite")
        out.append(a)
    return out


def contraction_check(stack: SystemStack, p, q, sample_points,
                      residual_tol: float = 1e-10) -> ContractionCertificate:
    """Check the per-level contraction inequalities at the sample points."""
    n = len(stack)
    p_mats = _check_spd("P", list(p), stack.dims)
    q_mats = _check_spd("Q", list(q), stack.dims)
    if len(p_mats) != n or len(q_mats) != n:
        raise ValueError(f"need one P and one Q per subsystem ({n})")
    pts = [as_flat(stack, pt) for pt in sample_points]
    bound = [2.0 * float(np.linalg.norm(p_mats[i], 2)) / float(np.min(np.linalg.eigvalsh(q_mats[i])))
             for i in range(n)]
    max_res = [-np.inf] * n
    max_inv = [0.0] * n
    holds = True
    for x in pts:
        table = total_derivative_table(stack, x)
        for i in range(n):
            d = table.total[i][i]
            resid = p_mats[i] @ d + d.T @ p_mats[i] + q_mats[i]
            lam = float(np.max(np.linalg.eigvalsh(0.5 * (resid + resid.T))))
            max_res[i] = max(max_res[i], lam)
            if lam > residual_tol:
                holds = False
            sv = np.linalg.svd(d, compute_uv=False)
            inv_norm = np.inf if sv[-1] == 0 else float(1.0 / sv[-1])
            max_inv[i] = max(max_inv[i], inv_norm)
    bounds_verified = holds and all(
        max_inv[i] <= bound[i] * (1.0 + 1e-12) + 1e-12 for i in range(n))
    return ContractionCertificate(p=p_mats, q=q_mats, sample_points=pts,
                                  holds=holds, inverse_bound=bound,
                                  max_residual_eig=max_res,
                                  max_inverse_norm=max_inv,
                                  bounds_verified=bounds_verified)


def distance_bound_margins(stack: SystemStack, certificate: ContractionCertificate,
                           points, tol: float = 1e-12) -> Array:
    """Check norm(x_i - x_i^s) <= bound_i * norm(reduced field at level i).

    Returns the matrix of margins bound_i * norm(f_i^r) - norm(x_i - x_i^s),
    one row per point; nonnegative rows mean the distance bound holds.
    """
    n = len(stack)
    pts = [as_flat(stack, pt) for pt in points]
    margins = np.empty((len(pts), n))
    for r, x in enumerate(pts):
        blocks = stack.split(x)
        for i in range(n):
            solved = steady_state_solve(stack, i, blocks[:i],
                                        np.concatenate(blocks[i:]), tol=tol)
            dist = float(np.linalg.norm(blocks[i] - solved[0]))
            if i + 1 < n:
                fr = reduced_field(stack, i, blocks[:i + 1],
                                   np.concatenate(blocks[i + 1:]), tol=tol)
            else:
                fr = stack.field_block(i, x)
            margins[r, i] = certificate.inverse_bound[i] * float(np.linalg.norm(fr)) - dist
    return margins
