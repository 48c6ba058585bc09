"""Dense active-set solver for bounded-variable least squares.

Solves ``min ||A x - b||^2`` subject to ``lb <= x <= ub`` (bounds may be
infinite). Used directly by the IK step and, through a generator
parametrization of the friction cones, by the contact-force QP.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QPError(RuntimeError):
    """Raised when the active-set iteration fails to converge."""

    def __init__(self, message: str, **dump):
        super().__init__(message)
        self.dump = dump


@dataclass
class BVLSResult:
    x: np.ndarray
    cost: float
    iterations: int
    kkt_residual: float


def kkt_residual(A: np.ndarray, b: np.ndarray, x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                 atol: float = 1e-12) -> float:
    """Largest violation of the first-order optimality conditions.

    ``g`` is the gradient of ``0.5 ||Ax - b||^2``; a variable at its lower bound
    may have ``g >= 0``, at its upper bound ``g <= 0``, free ones ``g == 0``.
    """
    g = A.T @ (A @ x - b)
    at_lb = x <= lb + atol
    at_ub = x >= ub - atol
    viol = np.abs(g)
    viol[at_lb] = np.maximum(-g[at_lb], 0.0)
    viol[at_ub & ~at_lb] = np.maximum(g[at_ub & ~at_lb], 0.0)
    both = at_lb & at_ub
    viol[both] = 0.0
    return float(viol.max()) if viol.size else 0.0


def bvls(A, b, lb=None, ub=None, x0=None, tol: float = 1e-12, max_iter: int | None = None) -> BVLSResult:
    """Bounded-variable least squares by a Lawson-Hanson style active set.

    Variables start at ``x0`` (clipped) or at the point of the box nearest to
    zero. Variables strictly inside their bounds form the free set; the
    unconstrained least-squares solution on the free set is taken with a
    minimum-norm ``lstsq`` so zero or dependent columns are harmless.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, n = A.shape
    lb = np.full(n, -np.inf) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub):
        raise QPError("infeasible bounds", lb=lb, ub=ub)
    if max_iter is None:
        max_iter = 10 * n + 50

    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lb, ub)
    free = (x > lb) & (x < ub)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)) * max(1.0, float(np.abs(b).max(initial=0.0))))
    gtol = tol * scale
    blocked = -1

    def solve_free():
        idx = np.flatnonzero(free)
        rhs = b - A[:, ~free] @ x[~free]
        z, *_ = np.linalg.lstsq(A[:, idx], rhs, rcond=None)
        return idx, z

    it = 0
    first = True
    while True:
        if not first:
            g = A.T @ (b - A @ x)  # descent direction
            cand = np.zeros(n)
            at_lb = (~free) & (x <= lb) & (lb < ub)
            at_ub = (~free) & (x >= ub) & (lb < ub)
            cand[at_lb] = np.maximum(g[at_lb], 0.0)
            cand[at_ub] = np.maximum(-g[at_ub], 0.0)
            if blocked >= 0:
                cand[blocked] = 0.0
            j = int(np.argmax(cand)) if n else 0
            if n == 0 or cand[j] <= gtol:
                break
            free[j] = True
            entering = j
        else:
            entering = -1
        first = False

        while True:
            it += 1
            if it > max_iter:
                raise QPError("bvls did not converge", A=A, b=b, lb=lb, ub=ub, x=x)
            if not free.any():
                break
            idx, z = solve_free()
            lo, hi = lb[idx], ub[idx]
            if np.all((z > lo) & (z < hi)):
                x[idx] = z
                blocked = -1
                break
            xf = x[idx]
            d = z - xf
            alpha = 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                a_lo = np.where(d < 0, (lo - xf) / d, np.inf)
                a_hi = np.where(d > 0, (hi - xf) / d, np.inf)
            steps = np.minimum(a_lo, a_hi)
            alpha = float(np.clip(steps.min(), 0.0, 1.0))
            x[idx] = xf + alpha * d
            hit_lo = (d < 0) & (a_lo <= alpha + 1e-15)
            hit_hi = (d > 0) & (a_hi <= alpha + 1e-15)
            x[idx[hit_lo]] = lo[hit_lo]
            x[idx[hit_hi]] = hi[hit_hi]
            newly = idx[hit_lo | hit_hi]
            free[newly] = False
            if alpha == 0.0 and entering >= 0 and entering in newly:
                # the entering variable cannot move; exclude it from the next pick
                blocked = entering
                break
            entering = -1
    r = A @ x - b
    return BVLSResult(x=x, cost=float(r @ r), iterations=it, kkt_residual=kkt_residual(A, b, x, lb, ub))


def nnls(A, b, tol: float = 1e-12) -> BVLSResult:
    """Non-negative least squares (``x >= 0``)."""
    n = np.asarray(A).shape[1]
    return bvls(A, b, lb=np.zeros(n), ub=np.full(n, np.inf), tol=tol)
