"""Fixed-step integration of conditioned fields and tracking diagnostics.

Explicit Euler and the classic fourth-order Runge-Kutta scheme only; both
are deterministic, since instability and tracking claims are asserted as
crisp boolean test outcomes rather than tuned through a step controller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conditioning import Scheme, make_conditioned_field
from .errors import ConvergenceError, SingularMatrixError
from .model import Array, StatePoint, SystemStack, as_flat
from .sensitivity import steady_state_solve

DEFAULT_DIVERGENCE_THRESHOLD = 1e6


@dataclass(frozen=True)
class IntegrationSettings:
    method: str = "rk4"  # "euler" or "rk4"
    dt: float = 1e-3
    t_end: float = 1.0
    divergence_threshold: float = DEFAULT_DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"method must be 'euler' or 'rk4', got {self.method!r}")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.dt > self.t_end:
            raise ValueError(f"dt={self.dt} exceeds t_end={self.t_end}")
        if self.divergence_threshold <= 0:
            raise ValueError("divergence_threshold must be positive")


@dataclass
class Trajectory:
    """Sampled states on a constant time grid.

    ``states`` has one row per sample; ``diverged`` is set when the max-norm
    passed the threshold or a state went non-finite, with ``diverged_at``
    the detection time.
    """

    times: Array
    states: Array
    dims: tuple[int, ...]
    diverged: bool = False
    diverged_at: float | None = None

    def point_at(self, k: int) -> StatePoint:
        return StatePoint.from_flat(self.dims, self.states[k])

    def blocks_at(self, k: int) -> list[Array]:
        cuts = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        return [self.states[k, cuts[i]:cuts[i + 1]] for i in range(len(self.dims))]

    @property
    def final_state(self) -> Array:
        return self.states[-1]


def _euler_step(f, x: Array, dt: float) -> Array:
    return x + dt * f(x)


def _rk4_step(f, x: Array, dt: float) -> Array:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_ode(stack: SystemStack, scheme: Scheme, x0,
                  settings: IntegrationSettings) -> Trajectory:
    """Integrate the conditioned field from ``x0`` on a fixed grid.

    Stops early (diverged=True) once any state exceeds the divergence
    threshold in max-norm or turns non-finite. Scheme evaluation failures
    propagate with the failing time attached as ``exc.time``.
    """
    x = as_flat(stack, x0)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    f = make_conditioned_field(stack, scheme)
    step = _rk4_step if settings.method == "rk4" else _euler_step
    n_steps = int(round(settings.t_end / settings.dt))
    dt = settings.dt

    states = [x.copy()]
    times = [0.0]
    diverged = False
    diverged_at = None
    for k in range(n_steps):
        t_next = (k + 1) * dt
        try:
            x = step(f, x, dt)
        except (SingularMatrixError, ConvergenceError) as exc:
            exc.time = t_next  # type: ignore[attr-defined]
            raise
        if not np.all(np.isfinite(x)):
            diverged, diverged_at = True, t_next
            break
        times.append(t_next)
        states.append(x.copy())
        if np.max(np.abs(x)) > settings.divergence_threshold:
            diverged, diverged_at = True, t_next
            break
    return Trajectory(times=np.asarray(times), states=np.asarray(states),
                      dims=stack.dims, diverged=diverged, diverged_at=diverged_at)


def manifold_error(stack: SystemStack, trajectory: Trajectory, level: int,
                   tol: float = 1e-12) -> Array:
    """Distance of each level >= ``level`` from its steady-state map.

    Returns an array of shape (samples, N - level); column c holds
    ``norm(x_i(t) - x_i^s(x_0(t), ..., x_{i-1}(t)))`` for i = level + c.
    Steady-state solves are warm-started from the previous sample; failed
    solves leave NaN in that entry.
    """
    n = len(stack)
    if not 0 <= level < n:
        raise IndexError(f"level {level} out of range for {n} subsystems")
    samples = trajectory.states.shape[0]
    out = np.full((samples, n - level), np.nan)
    warm: list[Array | None] = [None] * (n - level)
    for k in range(samples):
        blocks = trajectory.blocks_at(k)
        for c, i in enumerate(range(level, n)):
            guess = warm[c] if warm[c] is not None else np.concatenate(blocks[i:])
            try:
                solved = steady_state_solve(stack, i, blocks[:i], guess, tol=tol)
            except (SingularMatrixError, ConvergenceError):
                warm[c] = None
                continue
            warm[c] = np.concatenate(solved)
            out[k, c] = float(np.linalg.norm(blocks[i] - solved[0]))
    return out
