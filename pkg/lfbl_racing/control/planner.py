"""Planning and tracking in the linearized coordinates.

The linearized vehicle is two decoupled double integrators. ``plan`` solves the
finite-horizon LQR problem with a terminal equality and an input box as a
condensed QP; ``tracker_gain``/``track`` close the loop around the plan with the
infinite-horizon continuous LQR gain.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
from numpy.typing import NDArray

from lfbl_racing._exceptions import InfeasibleError, MaxIterationsError
from lfbl_racing.control import numerics
from lfbl_racing.control.linearize import LinearState, VirtualInput

logger = logging.getLogger(__name__)

Mat = NDArray[np.float64]

A_PRIME: Mat = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0],
    ]
)
B_PRIME: Mat = np.array(
    [
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 0.0],
        [0.0, 1.0],
    ]
)
C_PRIME: Mat = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
)

for _m in (A_PRIME, B_PRIME, C_PRIME):
    _m.setflags(write=False)


def discretize(dt: float) -> tuple[Mat, Mat]:
    """Exact zero-order-hold discretization of the normal form."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    block_a = np.array([[1.0, dt], [0.0, 1.0]])
    block_b = np.array([[0.5 * dt * dt], [dt]])
    eye = np.eye(2)
    return np.kron(eye, block_a), np.kron(eye, block_b)


@dataclass(frozen=True)
class LinearModel:
    abar: Mat
    bbar: Mat
    dt: float
    a_prime: Mat = field(default_factory=lambda: A_PRIME.copy())
    b_prime: Mat = field(default_factory=lambda: B_PRIME.copy())
    c_prime: Mat = field(default_factory=lambda: C_PRIME.copy())

    @classmethod
    def for_dt(cls, dt: float) -> LinearModel:
        abar, bbar = discretize(dt)
        return cls(abar=abar, bbar=bbar, dt=dt)

    def step(self, xi: NDArray[np.float64], v: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.abar @ xi + self.bbar @ v


@dataclass(frozen=True)
class Waypoint:
    """Position the plan must pass through at state index ``step``."""

    step: int
    x: float
    y: float


@dataclass(frozen=True)
class PlanResult:
    states: list[LinearState]
    inputs: list[VirtualInput]
    objective: float
    dt: float

    @property
    def n_steps(self) -> int:
        return len(self.states)

    def state_array(self) -> Mat:
        return np.array([s.to_array() for s in self.states])

    def input_array(self) -> Mat:
        return np.array([v.to_array() for v in self.inputs]).reshape(-1, 2)


@dataclass(frozen=True)
class PlannerWeights:
    """Everything ``plan`` needs besides the boundary states and horizon."""

    q: Mat
    r: Mat
    qf: Mat
    v_bnds: float
    waypoints: tuple[Waypoint, ...] = ()


def _prediction_matrices(abar: Mat, bbar: Mat, n: int) -> tuple[Mat, Mat]:
    """``states = phi @ x0 + gamma @ z`` for ``n`` states and ``n - 1`` stacked inputs."""
    nx, nu = bbar.shape
    m = n - 1
    phi = np.zeros((n * nx, nx))
    gamma = np.zeros((n * nx, m * nu))
    power = np.eye(nx)
    # column of powers Abar^j Bbar, reused along each block diagonal
    reach = [bbar]
    for _ in range(1, m):
        reach.append(abar @ reach[-1])
    for k in range(n):
        phi[k * nx : (k + 1) * nx] = power
        power = abar @ power
        for j in range(k):
            gamma[k * nx : (k + 1) * nx, j * nu : (j + 1) * nu] = reach[k - 1 - j]
    return phi, gamma


def _min_inf_norm(aeq: Mat, beq: Mat) -> float:
    """Smallest ``max|z|`` with ``aeq @ z = beq``, by linear programming."""
    m, n = aeq.shape
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    eye = np.eye(n)
    ones = np.ones((n, 1))
    a_ub = np.block([[eye, -ones], [-eye, -ones]])
    b_ub = np.zeros(2 * n)
    a_eq = np.hstack([aeq, np.zeros((m, 1))])
    bounds = [(None, None)] * n + [(0.0, None)]
    result = scipy.optimize.linprog(
        cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=beq, bounds=bounds, method="highs"
    )
    if result.status == 2:
        raise InfeasibleError("Boundary conditions cannot be met by any input sequence")
    if result.status != 0:
        raise InfeasibleError(f"Reachability check failed: {result.message}")
    return float(result.x[-1])


def plan(
    x0: LinearState,
    xf: LinearState,
    n: int,
    q: Mat,
    r: Mat,
    qf: Mat,
    v_bnds: float,
    *,
    dt: float = 0.02,
    waypoints: Sequence[Waypoint] = (),
    tol: float = numerics.DEFAULT_QP_TOL,
    max_iter: int = numerics.DEFAULT_QP_MAX_ITER,
    pivot_tol: float = numerics.DEFAULT_PIVOT_TOL,
) -> PlanResult:
    """Minimum-cost input sequence steering ``x0`` to ``xf`` in ``n`` states.

    The cost is ``sum_k x_k'Q x_k`` over all ``n`` states, plus ``v_k'R v_k`` over
    the ``n - 1`` inputs, plus ``x_{n-1}'Qf x_{n-1}``. Inputs are bounded by
    ``|v|_inf <= v_bnds``; optional waypoints pin the position at interior steps.

    Raises:
        InfeasibleError: If ``xf`` (and the waypoints) cannot be reached within
            the input bound.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if v_bnds <= 0:
        raise ValueError("v_bnds must be > 0")
    q, r, qf = (numerics.as_matrix(w, name=name) for w, name in ((q, "Q"), (r, "R"), (qf, "Qf")))
    model = LinearModel.for_dt(dt)
    nx, nu = model.bbar.shape
    m = n - 1

    x0_arr, xf_arr = x0.to_array(), xf.to_array()
    phi, gamma = _prediction_matrices(model.abar, model.bbar, n)
    free = phi @ x0_arr

    q_big = np.kron(np.eye(n), q)
    q_big[-nx:, -nx:] += qf
    r_big = np.kron(np.eye(m), r)
    h = 2.0 * (gamma.T @ q_big @ gamma + r_big)
    h = 0.5 * (h + h.T)
    f = 2.0 * gamma.T @ q_big @ free
    const = float(free @ q_big @ free)

    rows = [gamma[-nx:]]
    rhs = [xf_arr - free[-nx:]]
    for wp in waypoints:
        if not 0 < wp.step < n - 1:
            raise ValueError(f"Waypoint step {wp.step} must be strictly inside (0, {n - 1})")
        block = slice(wp.step * nx, (wp.step + 1) * nx)
        rows.append(C_PRIME @ gamma[block])
        rhs.append(np.array([wp.x, wp.y]) - C_PRIME @ free[block])
    aeq, beq = np.vstack(rows), np.concatenate(rhs)

    needed = _min_inf_norm(aeq, beq)
    if needed > v_bnds * (1.0 + 1e-9):
        raise InfeasibleError(
            f"Target unreachable in {n} states: needs |v|_inf >= {needed:.4g}, "
            f"bound is {v_bnds:.4g}"
        )

    bound = np.full(m * nu, float(v_bnds))
    problem = numerics.QpProblem(h=h, f=f, aeq=aeq, beq=beq, lb=-bound, ub=bound)
    solution = numerics.solve_qp(problem, tol=tol, max_iter=max_iter, pivot_tol=pivot_tol)
    z = np.clip(solution.z, -v_bnds, v_bnds)
    inputs = z.reshape(m, nu)

    states = np.empty((n, nx))
    states[0] = x0_arr
    for k in range(m):
        states[k + 1] = model.step(states[k], inputs[k])
    terminal_gap = float(np.max(np.abs(states[-1] - xf_arr)))
    if terminal_gap > numerics.EQ_RESIDUAL_TOL * (1.0 + float(np.max(np.abs(xf_arr)))):
        raise MaxIterationsError(f"Plan misses the terminal state by {terminal_gap:.3e}")
    states[-1] = xf_arr

    objective = (
        float(np.einsum("ki,ij,kj->", states, q, states))
        + float(np.einsum("ki,ij,kj->", inputs, r, inputs))
        + float(states[-1] @ qf @ states[-1])
    )
    logger.debug(
        "Planned %d states: objective %.6g (condensed %.6g), %d QP iterations",
        n,
        objective,
        problem.objective(solution.z) + const,
        solution.iterations,
    )
    return PlanResult(
        states=[LinearState.from_array(s) for s in states],
        inputs=[VirtualInput.from_array(v) for v in inputs],
        objective=objective,
        dt=dt,
    )


def plan_with(
    x0: LinearState,
    xf: LinearState,
    n: int,
    weights: PlannerWeights,
    *,
    dt: float,
    qp_options: dict[str, float] | None = None,
) -> PlanResult:
    return plan(
        x0,
        xf,
        n,
        weights.q,
        weights.r,
        weights.qf,
        weights.v_bnds,
        dt=dt,
        waypoints=weights.waypoints,
        **(qp_options or {}),
    )


def shift_waypoints(waypoints: Sequence[Waypoint], offset: int, n: int) -> tuple[Waypoint, ...]:
    """Waypoints still ahead after ``offset`` steps, re-indexed for an ``n``-state plan."""
    return tuple(
        Waypoint(step=wp.step - offset, x=wp.x, y=wp.y)
        for wp in waypoints
        if 0 < wp.step - offset < n - 1
    )


def tracker_gain(
    q: Mat,
    r: Mat,
    *,
    tol: float = numerics.DEFAULT_CARE_TOL,
    max_iter: int = numerics.DEFAULT_CARE_MAX_ITER,
) -> Mat:
    """LQR gain ``F = R^-1 B'P`` for the continuous normal form."""
    return numerics.lqr_gain(A_PRIME, B_PRIME, q, r, tol=tol, max_iter=max_iter)


def track(
    xi: LinearState, xi_ref: LinearState, v_ref: VirtualInput, gain: Mat
) -> VirtualInput:
    """``v = v_ref - F (xi - xi_ref)``."""
    error = xi.to_array() - xi_ref.to_array()
    return VirtualInput.from_array(v_ref.to_array() - gain @ error)
