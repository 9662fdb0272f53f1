"""Dense primal-dual interior-point solver for convex QPs.

    minimize    1/2 x'Px + q'x
    subject to  Aeq x  = beq
                Gineq x <= hineq

Mehrotra predictor-corrector on the slack form ``G x + s = h``, ``s, z >= 0``.
The Newton system is reduced to ``[P + G'WG, A'; A, 0]`` with ``W = diag(z/s)``,
factorised densely with a small static regularisation and cleaned up by
iterative refinement.  Converged solutions are optionally polished by solving
the equality-constrained KKT system on the guessed active set, which recovers
vertex solutions of LPs to near machine precision.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"
NUMERICAL = "numerical"

POLISH_FROM = 1e-8  # residual level at which polishing is attempted
POLISH_ROUNDS = 6
MIN_STEP = 1e-2  # combined steps shorter than this are replaced by centring
WEIGHT_SPREAD = 1e8  # max(z/s) / min(z/s) above which the augmented system is used


@dataclass(frozen=True)
class QuadraticProgram:
    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    Gineq: np.ndarray
    hineq: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        nv = q.size
        P = np.zeros((nv, nv)) if self.P is None else np.asarray(self.P, dtype=float)
        if P.shape != (nv, nv):
            raise ValueError(f"P must be {nv} x {nv}")
        if not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.abs(P).max(initial=0.0)), rtol=0):
            raise ValueError("P must be symmetric")

        def mat(M, name):
            M = np.zeros((0, nv)) if M is None else np.asarray(M, dtype=float)
            M = M.reshape(-1, nv) if M.size else np.zeros((0, nv))
            return M

        Aeq, Gineq = mat(self.Aeq, "Aeq"), mat(self.Gineq, "Gineq")
        beq = np.zeros(0) if self.beq is None else np.asarray(self.beq, dtype=float).reshape(-1)
        hineq = np.zeros(0) if self.hineq is None else np.asarray(self.hineq, dtype=float).reshape(-1)
        if Aeq.shape[0] != beq.size or Gineq.shape[0] != hineq.size:
            raise ValueError("constraint matrices and right-hand sides disagree")
        for name, val in (("P", P), ("q", q), ("Aeq", Aeq), ("beq", beq),
                          ("Gineq", Gineq), ("hineq", hineq)):
            object.__setattr__(self, name, val)

    @property
    def nv(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass
class QpConfig:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    reg: float = 1e-9
    refactor_retries: int = 3
    polish: bool = True
    debug: bool = False


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray  # inequality multipliers
    status: str
    residuals: tuple  # (primal, dual, gap)
    iterations: int = 0
    slack: Optional[np.ndarray] = None
    objective: float = float("nan")
    polished: bool = False
    merit_history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _KKT:
    """Factorised reduced KKT matrix with iterative refinement."""

    def __init__(self, H, A, reg, retries, n_primal=None):
        self.H, self.A = H, A
        n, p = H.shape[0], A.shape[0]
        self.n, self.p = n, p
        self.exact = np.block([[H, A.T], [A, np.zeros((p, p))]])
        # regularisation signs: + on primal columns, - on every dual block, so the
        # shifted matrix is quasi-definite
        sign = -np.ones(n + p)
        sign[: n if n_primal is None else n_primal] = 1.0
        delta = reg
        for attempt in range(retries + 1):
            if attempt:
                # late IPM iterations put weights near 1e12 into H, where an
                # absolute shift is lost to rounding; retries scale with |H|
                delta = reg * max(1.0, _inf(H)) * 10.0 ** (attempt - 1)
            M = self.exact.copy()
            M[np.diag_indices(n + p)] += delta * sign
            try:
                with np.errstate(all="raise"), warnings.catch_warnings():
                    # an exactly singular pivot is handled by the retry below
                    warnings.simplefilter("ignore", sla.LinAlgWarning)
                    self.lu = sla.lu_factor(M, check_finite=True)
                if np.all(np.isfinite(self.lu[0])) and np.abs(np.diag(self.lu[0])).min() > 0:
                    return
            except (sla.LinAlgError, ValueError, FloatingPointError):
                pass
        raise np.linalg.LinAlgError("KKT factorisation failed after regularisation retries")

    def solve(self, rx, ry, refine=10):
        """Returns the two solution blocks and the relative residual reached."""
        rhs = np.concatenate([rx, ry])
        sol = sla.lu_solve(self.lu, rhs)
        scale = 1.0 + _inf(rhs)
        for _ in range(refine):
            res = _inf(rhs - self.exact @ sol) / scale
            if res <= 1e-14:
                break
            sol = sol + sla.lu_solve(self.lu, rhs - self.exact @ sol)
        else:
            res = _inf(rhs - self.exact @ sol) / scale
        return sol[: self.n], sol[self.n:], res


def _augmented(P, A, G, s, z, reg, retries):
    """Full system in (x, y, z); its conditioning does not degrade with z/s."""
    p, mi = A.shape[0], G.shape[0]
    H = np.block([[P, G.T], [G, -np.diag(s / z)]])
    # equalities and inequality duals both sit in the trailing block of _KKT; the
    # ordering below keeps A in the constraint slot
    return _KKT(H, np.hstack([A, np.zeros((p, mi))]), reg, retries, n_primal=P.shape[0])


def _max_step(v, dv):
    neg = dv < 0
    if not neg.any():
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _inf(v):
    return float(np.abs(v).max(initial=0.0))


def _equality_only(qp: QuadraticProgram, cfg: QpConfig) -> QpSolution:
    nv, p = qp.nv, qp.Aeq.shape[0]
    K = np.block([[qp.P, qp.Aeq.T], [qp.Aeq, np.zeros((p, p))]])
    rhs = np.concatenate([-qp.q, qp.beq])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    x, y = sol[:nv], sol[nv:]
    rp = _inf(qp.Aeq @ x - qp.beq)
    rd = _inf(qp.P @ x + qp.q + qp.Aeq.T @ y)
    status = OPTIMAL
    if rp > cfg.feas_tol * (1 + _inf(qp.beq)):
        status = INFEASIBLE
    elif rd > cfg.feas_tol * (1 + _inf(qp.q)):
        status = UNBOUNDED
    return QpSolution(x, y, np.zeros(0), status, (rp, rd, 0.0), 1, np.zeros(0),
                      qp.objective(x))


def qp_solve(qp: QuadraticProgram, config: Optional[QpConfig] = None,
             warm_start: Optional[np.ndarray] = None, _phase1: bool = False) -> QpSolution:
    """Solve ``qp``; the returned status is one of optimal, infeasible, unbounded,
    max_iter, numerical.  ``warm_start`` (primal x) replaces the least-squares
    primal start; slacks are shifted to strict positivity as for a cold start."""
    cfg = config or QpConfig()
    P, q, A, b, G, h = qp.P, qp.q, qp.Aeq, qp.beq, qp.Gineq, qp.hineq
    nv, p, mi = qp.nv, A.shape[0], G.shape[0]
    if mi == 0:
        return _equality_only(qp, cfg)

    nb, nh, nq = _inf(b), _inf(h), _inf(q)
    tol_p = cfg.feas_tol * (1 + max(nb, nh))
    tol_d = cfg.feas_tol * (1 + nq)

    try:
        kkt0 = _KKT(P + G.T @ G, A, cfg.reg, cfg.refactor_retries)
    except np.linalg.LinAlgError:
        return QpSolution(np.zeros(nv), np.zeros(p), np.zeros(mi), NUMERICAL,
                          (np.inf, np.inf, np.inf))
    x, y, _ = kkt0.solve(-q + G.T @ h, b)
    if warm_start is not None and np.shape(warm_start) == (nv,) and np.all(np.isfinite(warm_start)):
        x = np.array(warm_start, dtype=float)
    s = h - G @ x
    z = -s.copy()
    shift = -s.min()
    if shift >= 0:
        s += 1.0 + shift
    shift = -z.min()
    if shift >= 0:
        z += 1.0 + shift

    # iterates accurate to the standard tolerances are handed to the polish step
    # early; a polished point is exact, so tighter settings need not be reached
    # by the interior iteration itself
    ok_p = max(cfg.feas_tol, POLISH_FROM) * (1 + max(nb, nh))
    ok_d = max(cfg.feas_tol, POLISH_FROM) * (1 + nq)
    ok_gap = max(cfg.gap_tol, POLISH_FROM)

    status = MAX_ITER
    merit_hist = []
    dx = np.zeros(nv)
    it = 0
    polished = None
    for it in range(cfg.max_iter + 1):
        rd = P @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        rg = G @ x + s - h
        gap = float(s @ z)
        mu = gap / mi
        pobj = qp.objective(x)
        pres = max(_inf(rp), _inf(rg))
        dres = _inf(rd)
        merit = max(pres, dres, gap)
        merit_hist.append(merit)
        if pres <= tol_p and dres <= tol_d and (
                gap <= cfg.gap_tol or gap <= cfg.gap_tol * abs(pobj)):
            status = OPTIMAL
            break
        if cfg.polish and pres <= ok_p and dres <= ok_d and (
                gap <= ok_gap or gap <= ok_gap * abs(pobj)):
            polished = _polish(qp, x, y, z, s, pobj, gap, cfg)
            if polished is not None:
                status = OPTIMAL
                break
        cert = _certificate(qp, x, y, z, dx, strict=True)
        if cert:
            status = cert
            break
        if it == cfg.max_iter or _stalled(merit_hist):
            # a stalled iterate often still identifies the active set; the
            # polished point is accepted only if it passes the KKT checks
            if cfg.polish:
                polished = _polish(qp, x, y, z, s, pobj, gap, cfg)
                if polished is not None:
                    status = OPTIMAL
            break

        w = z / s
        # dz = W G dx + ... multiplies any error in dx by w, so once the weights
        # spread widely (near a degenerate vertex) the augmented system is used
        use_aug = w.max() > WEIGHT_SPREAD * w.min()
        try:
            if use_aug:
                kkt = _augmented(P, A, G, s, z, cfg.reg, cfg.refactor_retries)
            else:
                kkt = _KKT(P + (G.T * w) @ G, A, cfg.reg, cfg.refactor_retries)
        except np.linalg.LinAlgError:
            status = NUMERICAL
            break

        def newton(rc):
            tmp = (z * rg - rc) / s
            if use_aug:
                v, dy_, _ = kkt.solve(np.concatenate([-rd, -tmp / w]), -rp)
                dx_, dz_ = v[:nv], v[nv:]
            else:
                dx_, dy_, _ = kkt.solve(-rd - G.T @ tmp, -rp)
                dz_ = w * (G @ dx_) + tmp
            # from the complementarity row: stays on the scale of s even when s
            # is far below the primal residual
            ds_ = -(rc + s * dz_) / z
            return dx_, dy_, ds_, dz_

        dxa, dya, dsa, dza = newton(s * z)
        a_aff = min(1.0, _max_step(s, dsa), _max_step(z, dza))
        mu_aff = float((s + a_aff * dsa) @ (z + a_aff * dza)) / mi
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds, dz = newton(s * z + dsa * dza - sigma * mu)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
            status = NUMERICAL
            break
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        if alpha < MIN_STEP:
            # an iterate pinned to the boundary: take a pure centring step instead
            dx, dy, ds, dz = newton(s * z - mu)
            if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dz))):
                status = NUMERICAL
                break
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))

        if cfg.debug:
            # accept only steps that do not increase the residual merit; the affine
            # direction lowers every term of the merit to first order, so it is the
            # fallback when the centred one does not
            def merit_at(a, dx_, dy_, ds_, dz_):
                s_t, z_t, x_t = s + a * ds_, z + a * dz_, x + a * dx_
                return max(_inf(A @ x_t - b), _inf(G @ x_t + s_t - h),
                           _inf(P @ x_t + q + A.T @ (y + a * dy_) + G.T @ z_t),
                           float(s_t @ z_t))

            a_affine = min(1.0, 0.99 * min(_max_step(s, dsa), _max_step(z, dza)))
            for step, a in (((dx, dy, ds, dz), alpha), ((dxa, dya, dsa, dza), a_affine)):
                for _ in range(30):
                    if merit_at(a, *step) <= merit * (1 + 1e-12):
                        break
                    a *= 0.5
                else:
                    continue
                (dx, dy, ds, dz), alpha = step, a
                break
            else:
                raise AssertionError("IPM merit increased on every trial step")

        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz

    if status not in (OPTIMAL, INFEASIBLE, UNBOUNDED):
        cert = _certificate(qp, x, y, z, dx, strict=False)
        if cert:
            status = cert
        elif (not _phase1 and max(_inf(A @ x - b), _inf(np.maximum(G @ x - h, 0))) > tol_p
              and _infeasible(qp, cfg)):
            status = INFEASIBLE

    if polished is None and status == OPTIMAL and cfg.polish:
        polished = _polish(qp, x, y, z, s, qp.objective(x), float(s @ z), cfg)
    if polished is not None:
        x, y, z, s = polished
    sol = QpSolution(x, y, z, status, (max(_inf(A @ x - b), _inf(np.maximum(G @ x - h, 0))),
                                       _inf(P @ x + q + A.T @ y + G.T @ z), float(s @ z)),
                     it, s, qp.objective(x), polished is not None, merit_hist)
    return sol


def _infeasible(qp: QuadraticProgram, cfg: QpConfig) -> bool:
    """Phase-1 check: min t s.t. |Ax - b| <= t, Gx - h <= t, t >= 0.

    The phase-1 LP is always feasible and bounded, so its optimum settles
    feasibility when the main iteration stalled without a certificate.
    """
    A, b, G, h = qp.Aeq, qp.beq, qp.Gineq, qp.hineq
    nv, p, mi = qp.nv, A.shape[0], G.shape[0]
    col = lambda k: -np.ones((k, 1))
    rows = np.vstack([np.hstack([G, col(mi)]), np.hstack([A, col(p)]), np.hstack([-A, col(p)]),
                      np.hstack([np.zeros((1, nv)), -np.ones((1, 1))])])
    rhs = np.concatenate([h, b, -b, [0.0]])
    c = np.zeros(nv + 1)
    c[-1] = 1.0
    sol = qp_solve(QuadraticProgram(None, c, None, None, rows, rhs), cfg, _phase1=True)
    return sol.ok and sol.x[-1] > 1e3 * cfg.feas_tol * (1 + max(_inf(b), _inf(h)))


def _stalled(merit_hist, window=15):
    # no halving of the residual merit over the last ``window`` iterations
    if len(merit_hist) <= window:
        return False
    return min(merit_hist[-window:]) > 0.5 * merit_hist[-window - 1]


def _certificate(qp, x, y, z, dx, strict):
    """Farkas-type certificates of primal or dual infeasibility, or None."""
    tol = 1e-9 if strict else 1e-6
    A, b, G, h, P, q = qp.Aeq, qp.beq, qp.Gineq, qp.hineq, qp.P, qp.q
    scale = max(_inf(y), _inf(z))
    if scale > 1e3:
        yb, zb = y / scale, np.maximum(z, 0) / scale
        val = float(b @ yb + h @ zb)
        ray = _inf(A.T @ yb + G.T @ zb)
        if val < -tol * 10 and ray <= tol * (1 + _inf(A) + _inf(G)) * max(1.0, -val):
            return INFEASIBLE
    nd = _inf(dx)
    if nd > 0 and (_inf(x) > 1e3 or not strict):
        d = dx / nd
        slope = float(q @ d)
        if (slope < -tol * 10 * (1 + _inf(q)) and _inf(P @ d) <= tol * (1 + _inf(P))
                and _inf(A @ d) <= tol * (1 + _inf(A))
                and float(np.max(G @ d, initial=-np.inf)) <= tol * (1 + _inf(G))):
            return UNBOUNDED
    return None


def _polish(qp: QuadraticProgram, x0, y0, z0, s0, obj0, gap0, cfg: QpConfig):
    """Solve the KKT system on a guessed active set, refining the guess.

    Rows with ``z > slack`` start active; rows violated by the candidate are added
    and rows with negative multipliers dropped, for a few rounds.  Returns
    ``(x, y, z, slack)`` or None when no acceptable point is found.
    """
    P, q, A, b, G, h = qp.P, qp.q, qp.Aeq, qp.beq, qp.Gineq, qp.hineq
    nv, p = qp.nv, A.shape[0]
    tol_p = 1e-9 * (1 + max(_inf(b), _inf(h)))
    tol_d = cfg.feas_tol * (1 + _inf(q))
    delta = 1e-10 * max(1.0, _inf(P))
    active = z0 > s0
    for _ in range(POLISH_ROUNDS):
        Ga = G[active]
        na = Ga.shape[0]
        M = np.block([[P, A.T, Ga.T],
                      [A, np.zeros((p, p)), np.zeros((p, na))],
                      [Ga, np.zeros((na, p)), np.zeros((na, na))]])
        R = M.copy()
        R[:nv, :nv] += delta * np.eye(nv)
        R[nv:, nv:] -= delta * np.eye(p + na)
        rhs = np.concatenate([-q, b, h[active]])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(R)
            v = sla.lu_solve(lu, rhs)
            for _ in range(25):
                res = rhs - M @ v
                if _inf(res) <= 1e-15 * (1 + _inf(rhs)):
                    break
                v = v + sla.lu_solve(lu, res)
        except (sla.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(v)):
            return None
        x, y, za = v[:nv], v[nv:nv + p], v[nv + p:]
        viol = (G @ x - h > tol_p) & ~active
        neg = np.zeros_like(active)
        neg[np.flatnonzero(active)[za < -1e-8 * (1 + _inf(za))]] = True
        if not viol.any() and not neg.any():
            break
        active = (active | viol) & ~neg
    else:
        return None
    z = np.zeros(G.shape[0])
    z[active] = np.maximum(za, 0.0)
    pres = max(_inf(A @ x - b), _inf(np.maximum(G @ x - h, 0)))
    dres = _inf(P @ x + q + A.T @ y + G.T @ z)
    if pres > tol_p or dres > tol_d:
        return None
    if qp.objective(x) > obj0 + abs(gap0) + 1e-9 * (1 + abs(obj0)):
        return None
    return x, y, z, np.maximum(h - G @ x, 0.0)


def lp_solve(q, Aeq=None, beq=None, Gineq=None, hineq=None,
             config: Optional[QpConfig] = None) -> QpSolution:
    qp = QuadraticProgram(None, q, Aeq, beq, Gineq, hineq)
    return qp_solve(qp, config)


def dump_qp(qp: QuadraticProgram, path) -> None:
    """Write the QP data as JSON (debug aid for cross-checking with other solvers)."""
    doc = {"nv": qp.nv, "P": qp.P.tolist(), "q": qp.q.tolist(),
           "Aeq": qp.Aeq.tolist(), "beq": qp.beq.tolist(),
           "Gineq": qp.Gineq.tolist(), "hineq": qp.hineq.tolist()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_qp(path) -> QuadraticProgram:
    with open(path) as fh:
        doc = json.load(fh)
    return QuadraticProgram(doc["P"], doc["q"], doc["Aeq"], doc["beq"],
                            doc["Gineq"], doc["hineq"])
