"""Dense active-set solver for small strictly convex QPs.

    min 1/2 x^T H x + g^T x
    s.t. A_eq x = b_eq,  A_in x >= b_in

Equalities are eliminated through a nullspace basis; a slack phase-1
handles starts that violate inequalities.  Problem sizes here stay in
the tens of variables, so dense KKT solves are the right tool.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"


@dataclass
class QpResult:
    x: np.ndarray
    status: str
    lam_in: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nu_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    active: tuple = ()
    iterations: int = 0
    kkt_residual: float = np.inf


def _active_set(h, g, a, b, y0, tol, max_iter):
    """Primal active-set iteration from a feasible start."""
    n = y0.shape[0]
    m = a.shape[0]
    y = y0.copy()
    active = [i for i in range(m) if a[i] @ y - b[i] <= tol]
    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        rows = a[active] if active else np.zeros((0, n))
        k = len(active)
        # stationarity block is -rows.T so lam comes out with the usual
        # sign (H x + g = A_W^T lam, lam >= 0 at the optimum)
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = h
        if k:
            kkt[:n, n:] = -rows.T
            kkt[n:, :n] = rows
        rhs = np.concatenate([-(h @ y + g), np.zeros(k)])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        p = sol[:n]
        lam = sol[n:]
        if np.linalg.norm(p, np.inf) <= tol:
            if k == 0 or lam.min() >= -tol:
                return y, active, lam, it, OPTIMAL
            active.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        blocker = -1
        for i in range(m):
            if i in active:
                continue
            descent = a[i] @ p
            if descent < -tol:
                step = (a[i] @ y - b[i]) / (-descent)
                if step < alpha:
                    alpha = step
                    blocker = i
        y = y + alpha * p
        if blocker >= 0:
            active.append(blocker)
    return y, active, lam, max_iter, MAX_ITER


def solve_qp(h, g, a_eq=None, b_eq=None, a_in=None, b_in=None,
             tol: float = 1e-9, feas_tol: float = 1e-8,
             max_iter: int = 200) -> QpResult:
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = g.shape[0]
    if a_in is None or len(a_in) == 0:
        a_in = np.zeros((0, n))
        b_in = np.zeros(0)
    else:
        a_in = np.asarray(a_in, dtype=float).reshape(-1, n)
        b_in = np.asarray(b_in, dtype=float).reshape(-1)

    # eliminate equality constraints through their nullspace
    if a_eq is not None and len(a_eq):
        a_eq = np.asarray(a_eq, dtype=float).reshape(-1, n)
        b_eq = np.asarray(b_eq, dtype=float).reshape(-1)
        x_p, *_ = np.linalg.lstsq(a_eq, b_eq, rcond=None)
        if np.linalg.norm(a_eq @ x_p - b_eq, np.inf) > 1e-8 * max(1.0, np.linalg.norm(b_eq, np.inf)):
            return QpResult(x_p, INFEASIBLE)
        _, sv, vt = np.linalg.svd(a_eq)
        rank = int(np.sum(sv > max(a_eq.shape) * np.finfo(float).eps * (sv[0] if len(sv) else 1.0)))
        z = vt[rank:].T
    else:
        a_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
        x_p = np.zeros(n)
        z = np.eye(n)

    if z.shape[1] == 0:
        x = x_p
        lam = np.zeros(a_in.shape[0])
        return _finish(h, g, a_eq, a_in, b_in, x, lam, [], 0, OPTIMAL, tol)

    hr = z.T @ h @ z
    gr = z.T @ (h @ x_p + g)
    ar = a_in @ z
    br = b_in - a_in @ x_p

    # common case: the unconstrained optimum already satisfies everything
    y_newton = np.linalg.solve(hr, -gr)
    if ar.shape[0] == 0 or float(np.min(ar @ y_newton - br)) >= 0.0:
        x = x_p + z @ y_newton
        return _finish(h, g, a_eq, a_in, b_in, x, np.zeros(a_in.shape[0]),
                       [], 1, OPTIMAL, tol)

    y0 = np.zeros(z.shape[1])
    worst = float(np.max(br - ar @ y0)) if ar.shape[0] else 0.0
    if worst > feas_tol:
        # a genuine violation of the start point, not numerical dust
        y0 = _restore_feasible(ar, br, max_iter=30)
        if y0 is None:
            y0 = _phase1(hr, gr, ar, br, worst, tol, max_iter)
        if y0 is None:
            return QpResult(x_p, INFEASIBLE)
    elif worst > 0.0:
        # sub-tolerance violations count as active rows of a feasible start
        br = br - worst

    y, active, lam_active, iters, status = _active_set(hr, gr, ar, br, y0, tol, max_iter)
    lam = np.zeros(a_in.shape[0])
    for idx, i in enumerate(active):
        lam[i] = lam_active[idx] if idx < len(lam_active) else 0.0
    x = x_p + z @ y
    return _finish(h, g, a_eq, a_in, b_in, x, lam, active, iters, status, tol)


def _restore_feasible(ar, br, max_iter: int = 30, margin: float = 1e-12):
    """Clear violated rows with minimum-norm least-squares corrections.

    Fast and well-conditioned for the shallow violations that arise from
    re-linearization between ticks; returns None when the violations do
    not clear (the caller falls back to the slack phase-1).
    """
    y = np.zeros(ar.shape[1])
    for _ in range(max_iter):
        slack = ar @ y - br
        viol = slack < 0.0
        if not np.any(viol):
            return y
        rows = ar[viol]
        resid = (br[viol] + margin) - ar[viol] @ y
        step, *_ = np.linalg.lstsq(rows, resid, rcond=None)
        if not np.all(np.isfinite(step)):
            return None
        y = y + step
    slack = ar @ y - br
    return y if float(slack.min()) >= -1e-10 else None


def _phase1(hr, gr, ar, br, worst, tol, max_iter):
    """Minimize a heavily weighted slack to reach the feasible set."""
    nr = gr.shape[0]
    big = 1e6 * max(1.0, float(np.abs(gr).max()) if nr else 1.0)
    h1 = np.zeros((nr + 1, nr + 1))
    h1[:nr, :nr] = hr
    h1[nr, nr] = 1.0
    g1 = np.concatenate([gr, [big]])
    a1 = np.zeros((ar.shape[0] + 1, nr + 1))
    a1[:-1, :nr] = ar
    a1[:-1, nr] = 1.0
    a1[-1, nr] = 1.0
    b1 = np.concatenate([br, [0.0]])
    y0 = np.concatenate([np.zeros(nr), [worst * (1.0 + 1e-9) + 1e-12]])
    y, _, _, _, status = _active_set(h1, g1, a1, b1, y0, tol, max_iter)
    if status == MAX_ITER or y[nr] > 1e-7:
        return None
    return y[:nr]


def _finish(h, g, a_eq, a_in, b_in, x, lam, active, iters, status, tol):
    if status == MAX_ITER:
        status = MAX_ITER
    slack = a_in @ x - b_in if a_in.shape[0] else np.zeros(0)
    if slack.shape[0] and slack.min() < -1e-6:
        status = INFEASIBLE
    stat = h @ x + g - (a_in.T @ lam if lam.shape[0] else 0.0)
    if a_eq.shape[0]:
        nu, *_ = np.linalg.lstsq(a_eq.T, stat, rcond=None)
        stat = stat - a_eq.T @ nu
    else:
        nu = np.zeros(0)
    comp = float(np.abs(lam * slack).max()) if lam.shape[0] else 0.0
    primal = float(max(0.0, -slack.min())) if slack.shape[0] else 0.0
    kkt = float(np.linalg.norm(stat, np.inf)) + comp + primal
    return QpResult(x, status, lam, nu, tuple(active), iters, kkt)
