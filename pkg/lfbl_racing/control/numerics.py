"""Dense linear-algebra backbone for the planner and tracker.

Everything here is a pure function of its inputs. Matrices are plain
``numpy`` float64 arrays; nothing is mutated in place once returned.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from lfbl_racing._exceptions import (
    InfeasibleError,
    MaxIterationsError,
    NoStabilizingSolutionError,
    SingularMatrixError,
)

logger = logging.getLogger(__name__)

Mat = NDArray[np.float64]
Vec = NDArray[np.float64]

DEFAULT_PIVOT_TOL = 1e-12
DEFAULT_CARE_TOL = 1e-10
DEFAULT_CARE_MAX_ITER = 60
CARE_ACCEPT_TOL = 1e-8
DEFAULT_QP_TOL = 1e-8
DEFAULT_QP_MAX_ITER = 50_000
EQ_RESIDUAL_TOL = 1e-9


def as_matrix(values: object, *, name: str = "matrix") -> Mat:
    """Coerce to a finite 2-D float64 array."""
    mat = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if mat.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} has non-finite entries")
    return mat


def solve_linear(a: Mat, b: Vec, *, pivot_tol: float = DEFAULT_PIVOT_TOL) -> Vec:
    """Solve ``a @ x = b`` by LU with partial pivoting.

    Args:
        a: Square coefficient matrix.
        b: Right-hand side (vector or matrix of stacked columns).
        pivot_tol: Smallest acceptable pivot magnitude.

    Returns:
        The solution with the same trailing shape as ``b``.

    Raises:
        SingularMatrixError: If any pivot magnitude is at or below ``pivot_tol``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"solve_linear needs a square matrix, got shape {a.shape}")

    lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.size and float(pivots.min()) <= pivot_tol:
        raise SingularMatrixError(
            f"Pivot {pivots.min():.3e} at or below threshold {pivot_tol:.1e}"
        )
    return scipy.linalg.lu_solve((lu, piv), np.asarray(b, dtype=np.float64))


def zoh_discretize(a: Mat, b: Mat, dt: float) -> tuple[Mat, Mat]:
    """Zero-order-hold discretization via the Van Loan block exponential."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n, m = a.shape[0], b.shape[1]
    block = np.zeros((n + m, n + m))
    block[:n, :n] = a
    block[:n, n:] = b
    expo = scipy.linalg.expm(block * dt)
    return expo[:n, :n], expo[:n, n:]


def is_hurwitz(a: Mat, *, margin: float = 0.0) -> bool:
    """Return True if every eigenvalue has real part below ``-margin``."""
    return bool(np.all(np.linalg.eigvals(a).real < -margin))


def spectral_abscissa(a: Mat) -> float:
    return float(np.max(np.linalg.eigvals(a).real))


def max_eigenvalue(h: Mat, *, max_iter: int = 1000, tol: float = 1e-10) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = h.shape[0]
    if n == 0:
        return 0.0
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = h @ x
        norm = float(np.linalg.norm(y))
        if norm == 0.0:
            return 0.0
        x = y / norm
        lam_next = float(x @ (h @ x))
        if abs(lam_next - lam) <= tol * max(1.0, abs(lam_next)):
            return lam_next
        lam = lam_next
    return lam


def riccati_residual(a: Mat, b: Mat, q: Mat, r: Mat, p: Mat) -> Mat:
    """Left-hand side of the CARE evaluated at ``p``."""
    return a.T @ p + p @ a - p @ b @ np.linalg.solve(r, b.T @ p) + q


def _initial_gain(a: Mat, b: Mat) -> Mat:
    """Stabilizing starting gain from a shifted Lyapunov equation.

    With sigma above the row-sum bound on the spectrum of ``a``, the gain
    ``b.T @ inv(Z)`` places every closed-loop eigenvalue at real part -sigma,
    where ``(a + sigma I) Z + Z (a + sigma I).T = 2 b b.T``.
    """
    n, m = b.shape
    if is_hurwitz(a):
        return np.zeros((m, n))

    sigma = 1.0 + float(np.max(np.sum(np.abs(a), axis=1)))
    shifted = a + sigma * np.eye(n)
    z = scipy.linalg.solve_continuous_lyapunov(-shifted, -2.0 * b @ b.T)
    z = 0.5 * (z + z.T)
    try:
        return scipy.linalg.solve(z, b, assume_a="pos").T
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoStabilizingSolutionError(
            "Shifted Lyapunov solution is singular; (A, B) is not controllable"
        ) from exc


def solve_care(
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    *,
    tol: float = DEFAULT_CARE_TOL,
    max_iter: int = DEFAULT_CARE_MAX_ITER,
) -> Mat:
    """Stabilizing solution of ``A'P + PA - PBR^-1B'P + Q = 0`` (Newton–Kleinman).

    Args:
        a: State matrix (n x n).
        b: Input matrix (n x m).
        q: Symmetric PSD state weight.
        r: Symmetric PD input weight.
        tol: Residual tolerance, relative to ``1 + ||Q||_F``.
        max_iter: Newton iteration cap.

    Returns:
        Symmetric ``P`` whose closed loop ``A - B R^-1 B' P`` is Hurwitz.

    Raises:
        NoStabilizingSolutionError: If the iteration does not converge or the
            result does not stabilize the closed loop.
    """
    a, b, q, r = (as_matrix(m, name=name) for m, name in ((a, "A"), (b, "B"), (q, "Q"), (r, "R")))
    target = tol * (1.0 + float(np.linalg.norm(q, "fro")))

    gain = _initial_gain(a, b)
    if not is_hurwitz(a - b @ gain):
        raise NoStabilizingSolutionError("Could not find a stabilizing initial gain")

    # round-off floor: accept a stalled iterate once it is inside this bound
    floor = CARE_ACCEPT_TOL * (1.0 + float(np.linalg.norm(q, "fro")))
    best_p, best_residual = None, np.inf
    for iteration in range(1, max_iter + 1):
        closed = a - b @ gain
        rhs = -(q + gain.T @ r @ gain)
        try:
            p = scipy.linalg.solve_continuous_lyapunov(closed.T, rhs)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NoStabilizingSolutionError(f"Lyapunov solve failed: {exc}") from exc
        p = 0.5 * (p + p.T)
        gain = np.linalg.solve(r, b.T @ p)

        residual = float(np.linalg.norm(riccati_residual(a, b, q, r, p), "fro"))
        logger.debug("Newton-Kleinman iteration %d: residual %.3e", iteration, residual)
        if not np.isfinite(residual):
            break
        stalled = residual >= best_residual
        if residual < best_residual:
            best_p, best_residual = p, residual
        if residual <= target or (stalled and best_residual <= floor):
            return _checked_stabilizing(a, b, r, best_p)

    if best_p is not None and best_residual <= floor:
        return _checked_stabilizing(a, b, r, best_p)
    raise NoStabilizingSolutionError(
        f"Riccati iteration did not reach tolerance {target:.1e} in {max_iter} iterations"
    )


def _checked_stabilizing(a: Mat, b: Mat, r: Mat, p: Mat) -> Mat:
    if not is_hurwitz(a - b @ np.linalg.solve(r, b.T @ p)):
        raise NoStabilizingSolutionError("Converged solution is not stabilizing")
    return p


def lqr_gain(
    a: Mat,
    b: Mat,
    q: Mat,
    r: Mat,
    *,
    tol: float = DEFAULT_CARE_TOL,
    max_iter: int = DEFAULT_CARE_MAX_ITER,
) -> Mat:
    """Optimal feedback gain ``F = R^-1 B' P``."""
    p = solve_care(a, b, q, r, tol=tol, max_iter=max_iter)
    return np.linalg.solve(np.asarray(r, dtype=np.float64), np.asarray(b).T @ p)


@dataclass(frozen=True)
class QpProblem:
    """``min 0.5 z'Hz + f'z`` s.t. ``Aeq z = beq``, ``lb <= z <= ub``."""

    h: Mat
    f: Vec
    aeq: Mat = field(default_factory=lambda: np.zeros((0, 0)))
    beq: Vec = field(default_factory=lambda: np.zeros(0))
    lb: Vec | None = None
    ub: Vec | None = None

    def __post_init__(self) -> None:
        n = self.h.shape[0]
        if self.h.shape != (n, n):
            raise ValueError(f"H must be square, got {self.h.shape}")
        if self.f.shape != (n,):
            raise ValueError(f"f must have shape ({n},), got {self.f.shape}")
        if not np.allclose(self.h, self.h.T, atol=1e-9 * (1.0 + np.abs(self.h).max())):
            raise ValueError("H must be symmetric")

        aeq = self.aeq if self.aeq.size else np.zeros((0, n))
        object.__setattr__(self, "aeq", aeq)
        if aeq.shape[1] != n or self.beq.shape != (aeq.shape[0],):
            raise ValueError("Aeq/beq shapes are inconsistent with H")
        if aeq.shape[0] > n:
            raise ValueError("More equality rows than variables")

        lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=np.float64)
        ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=np.float64)
        if np.any(lb > ub):
            raise ValueError("lb must be <= ub elementwise")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)

    @property
    def n(self) -> int:
        return self.h.shape[0]

    def objective(self, z: Vec) -> float:
        return float(0.5 * z @ self.h @ z + self.f @ z)


@dataclass(frozen=True)
class QpSolution:
    z: Vec
    eq_residual: float
    kkt_residual: float
    iterations: int


def _independent_rows(aeq: Mat, beq: Vec) -> tuple[Mat, Vec]:
    """Drop redundant equality rows; raise if the system is inconsistent."""
    m = aeq.shape[0]
    if m == 0:
        return aeq, beq
    rank = int(np.linalg.matrix_rank(aeq))
    if rank == m:
        return aeq, beq

    z_ls, *_ = np.linalg.lstsq(aeq, beq, rcond=None)
    mismatch = float(np.max(np.abs(aeq @ z_ls - beq)))
    if mismatch > EQ_RESIDUAL_TOL * (1.0 + float(np.max(np.abs(beq)))):
        raise InfeasibleError(
            f"Equality constraints are inconsistent (rank {rank} < {m}, residual {mismatch:.2e})"
        )
    _, _, piv = scipy.linalg.qr(aeq.T, pivoting=True, mode="economic")
    keep = np.sort(piv[:rank])
    return aeq[keep], beq[keep]


def _kkt_solve(h: Mat, f: Vec, aeq: Mat, beq: Vec, pivot_tol: float) -> tuple[Vec, Vec]:
    n, m = h.shape[0], aeq.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = aeq.T
    kkt[n:, :n] = aeq
    rhs = np.concatenate([-f, beq])
    sol = solve_linear(kkt, rhs, pivot_tol=pivot_tol)
    return sol[:n], sol[n:]


def _stationarity(p: QpProblem, z: Vec, grad: Vec) -> float:
    projected = np.clip(z - grad, p.lb, p.ub)
    return float(np.max(np.abs(z - projected))) if z.size else 0.0


def _equality_multipliers(aeq: Mat, grad: Vec, free: NDArray[np.bool_]) -> Vec:
    """Least-squares multipliers on the coordinates strictly inside the box."""
    if aeq.shape[0] == 0:
        return np.zeros(0)
    lam, *_ = np.linalg.lstsq(aeq[:, free].T, -grad[free], rcond=None)
    return lam


def solve_qp(
    p: QpProblem,
    tol: float = DEFAULT_QP_TOL,
    max_iter: int = DEFAULT_QP_MAX_ITER,
    *,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
) -> QpSolution:
    """Solve an equality- and box-constrained convex QP.

    Equalities are eliminated with a KKT solve. If that point already lies in
    the box it is returned as is. Otherwise the box is enforced by projected
    gradient steps of fixed length ``1 / lambda_max`` (Nesterov-accelerated),
    with any equalities carried by an augmented-Lagrangian outer loop.

    Raises:
        InfeasibleError: If the equality rows are inconsistent.
        MaxIterationsError: If stationarity or equality tolerances are not met.
    """
    aeq, beq = _independent_rows(p.aeq, p.beq)
    z_kkt, lam_kkt = _kkt_solve(p.h, p.f, aeq, beq, pivot_tol)

    inside = bool(np.all(z_kkt >= p.lb) and np.all(z_kkt <= p.ub))
    if inside:
        grad = p.h @ z_kkt + p.f + aeq.T @ lam_kkt
        eq_res = float(np.max(np.abs(aeq @ z_kkt - beq))) if aeq.shape[0] else 0.0
        return QpSolution(
            z=z_kkt,
            eq_residual=eq_res,
            kkt_residual=_stationarity(p, z_kkt, grad),
            iterations=0,
        )

    has_eq = aeq.shape[0] > 0
    aeq_orig, beq_orig = aeq, beq
    eq_tol = 0.1 * EQ_RESIDUAL_TOL * (1.0 + float(np.max(np.abs(beq)))) if has_eq else 0.0
    lam_h = max_eigenvalue(p.h)
    rho = 0.0
    if has_eq:
        row_norms = np.linalg.norm(aeq, axis=1)
        aeq, beq = aeq / row_norms[:, None], beq / row_norms
        lam_kkt = lam_kkt * row_norms
        lam_a = max_eigenvalue(aeq.T @ aeq)
        rho = 10.0 * max(lam_h, 1.0) / max(lam_a, 1e-12)
    h_aug = p.h + rho * aeq.T @ aeq if has_eq else p.h
    lipschitz = max_eigenvalue(h_aug)
    if lipschitz <= 0.0:
        raise MaxIterationsError("Projected gradient needs a nonzero curvature bound")
    step = 1.0 / lipschitz

    z = np.clip(z_kkt, p.lb, p.ub)
    lam = lam_kkt.copy() if has_eq else np.zeros(0)
    iterations = 0
    eq_res = float(np.max(np.abs(aeq_orig @ z - beq_orig))) if has_eq else 0.0
    kkt_res = np.inf

    while iterations < max_iter:
        # inner: accelerated projected gradient on the augmented Lagrangian
        f_aug = p.f + (aeq.T @ (lam - rho * beq) if has_eq else 0.0)
        y, z_prev, t = z.copy(), z.copy(), 1.0
        inner_tol = max(0.1 * tol * step, 1e-16)
        while iterations < max_iter:
            iterations += 1
            z_next = np.clip(y - step * (h_aug @ y + f_aug), p.lb, p.ub)
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z_next + ((t - 1.0) / t_next) * (z_next - z_prev)
            moved = float(np.max(np.abs(z_next - z_prev)))
            z_prev, t = z_next, t_next
            if moved <= inner_tol:
                break
        z = z_prev

        if has_eq:
            residual_vec = aeq @ z - beq
            eq_res = float(np.max(np.abs(aeq_orig @ z - beq_orig)))
            lam = lam + rho * residual_vec

        grad = p.h @ z + p.f
        if has_eq:
            free = (z > p.lb) & (z < p.ub)
            grad = grad + aeq.T @ _equality_multipliers(aeq, grad, free)
        kkt_res = _stationarity(p, z, grad)
        if eq_res <= eq_tol and kkt_res <= tol:
            logger.debug("QP converged in %d iterations (kkt %.2e)", iterations, kkt_res)
            return QpSolution(z=z, eq_residual=eq_res, kkt_residual=kkt_res, iterations=iterations)

    raise MaxIterationsError(
        f"QP not converged after {iterations} iterations "
        f"(eq residual {eq_res:.2e}, kkt residual {kkt_res:.2e})"
    )
