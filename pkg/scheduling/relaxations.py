"""
Convex relaxations of the scheduling problem

- the convex program (CP) over per-job simplices, built from a linear term
  c^T x and a quadratic term x^T D x
- the lift-and-project semidefinite relaxation (SDP): one moment matrix per
  machine indexed by {empty} + jobs, PSD, entrywise nonnegative, with the
  diagonal tied to the first row
- an operator-splitting solver for the SDP and, for the CP, bisection over
  the weight of its two branches with accelerated projected gradient inside
- PSD certification by cyclic Jacobi rotations
- the lower bounds LB(S) that the PSD constraint implies for every prefix of
  a machine's Smith order

Moment matrices are stored at full size (jobs + 1); rows and columns of
forbidden pairs are identically zero, which is the same as dropping them.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import InvalidSolutionError, NonSymmetricMatrixError
from .instances import check_schedule, schedule_cost, smith_order

logger = logging.getLogger(__name__)

TAU_FEAS = 1e-8
TAU_PSD = 1e-6

RHO_BOUNDS = (1e-6, 1e6)


class SolverConfig(BaseModel):
    """Settings for the SDP splitting solver"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    max_iters: int = Field(default=20000, ge=1)
    rho: float = Field(default=1.0, gt=0)
    tol: float = Field(default=1e-6, gt=0)
    threads: int = Field(default=1, ge=1)

    @classmethod
    def from_settings(cls, **overrides):
        values = {
            'max_iters': settings.SDP_MAX_ITERS,
            'rho': settings.SDP_RHO,
            'tol': settings.SDP_TOL,
            'threads': settings.NEGCORR_SCHED_THREADS,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


class CpConfig(BaseModel):
    """Settings for the CP solver"""
    model_config = ConfigDict(frozen=True, extra='forbid')

    max_iters: int = Field(default=50000, ge=1)
    tol: float = Field(default=1e-7, gt=0)
    bisection_steps: int = Field(default=60, ge=1)

    @classmethod
    def from_settings(cls, **overrides):
        values = {'max_iters': settings.CP_MAX_ITERS}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class FractionalAssignment:
    """x[i, j] = fraction of job j on machine i; columns sum to one"""
    x: np.ndarray

    @classmethod
    def from_matrix(cls, inst, x, tol=TAU_FEAS):
        """
        Validate and clamp a raw (machines, jobs) matrix

        Raises:
            InvalidSolutionError: wrong shape, mass on a forbidden pair,
                entries below -tol, or a column sum off by more than tol
        """
        x = np.array(x, dtype=float)
        if x.shape != (inst.machines, inst.jobs):
            raise InvalidSolutionError(
                f"Assignment has shape {x.shape}, expected {(inst.machines, inst.jobs)}"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidSolutionError("Assignment contains non-finite values")
        forbidden_mass = np.abs(x[~inst.allowed])
        if forbidden_mass.size and forbidden_mass.max() > tol:
            raise InvalidSolutionError("Assignment puts mass on a forbidden pair")
        if x.min() < -tol:
            raise InvalidSolutionError(f"Assignment has entry {x.min():.3g} below zero")
        sums = x.sum(axis=0)
        worst = int(np.argmax(np.abs(sums - 1.0)))
        if abs(sums[worst] - 1.0) > tol:
            raise InvalidSolutionError(f"Job {worst} has total assignment {sums[worst]:.12g}, expected 1")
        x = np.where(inst.allowed, np.maximum(x, 0.0), 0.0)
        x.setflags(write=False)
        return cls(x=x)


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    machine: int
    entries: np.ndarray


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    primal_residual: float
    dual_residual: float
    rho: float
    converged: bool
    min_eigenvalue: float


@dataclass(frozen=True, eq=False)
class SdpSolution:
    x: FractionalAssignment
    moments: tuple
    objective: float
    stats: SolverStats

    @property
    def converged(self):
        return self.stats.converged


@dataclass(frozen=True)
class CpStats:
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class CpSolution:
    value: float
    x: FractionalAssignment
    stats: CpStats

    @property
    def converged(self):
        return self.stats.converged


@dataclass(frozen=True)
class LowerBounds:
    """The three named lower bounds on one machine prefix, with their ingredients"""
    lb_empty: float
    lb_full: float
    lb_grouped: float
    q: float
    l: float
    q_bar: float
    l_bar: float

    @property
    def best(self):
        return max(self.lb_empty, self.lb_full, self.lb_grouped)


def assignment_matrix(sol):
    """Raw x matrix of an SdpSolution, CpSolution, FractionalAssignment or array"""
    if isinstance(sol, np.ndarray):
        return sol
    if isinstance(sol, (list, tuple)):
        return np.asarray(sol, dtype=float)
    if isinstance(sol, FractionalAssignment):
        return sol.x
    return sol.x.x


# --- Objective evaluation


def cost_matrix(inst, i):
    """
    Symmetric C with <C, X> = machine i's SDP objective contribution

    Diagonal entry j carries w_j p_ij; the pair (j, j') with j' before j in
    Smith order carries w_j p_ij' split over both triangles.
    """
    n = inst.jobs
    C = np.zeros((n + 1, n + 1))
    order = smith_order(inst, i).order
    for pos, j in enumerate(order):
        C[j + 1, j + 1] = inst.w[j] * inst.p[i, j]
        for earlier in order[:pos]:
            half = inst.w[j] * inst.p[i, earlier] / 2
            C[j + 1, earlier + 1] += half
            C[earlier + 1, j + 1] += half
    return C


def machine_objective(inst, i, X):
    """sum_j w_j sum_{j' up to j in Smith order} p_ij' X[j, j'], evaluated directly"""
    order = smith_order(inst, i).order
    total = 0.0
    for pos, j in enumerate(order):
        inner = sum(inst.p[i, k] * X[j + 1, k + 1] for k in order[:pos + 1])
        total += inst.w[j] * inner
    return float(total)


def prefix_objectives(inst, i, X, order=None):
    """
    SDP prefix expressions of machine i for every prefix length

    Entry r is sum_{j <= r} p_j (p_1 X[j,1] + ... + p_j X[j,j]) over the first
    r + 1 jobs of the Smith order.
    """
    order = np.array(smith_order(inst, i).order if order is None else order, dtype=int)
    if not order.size:
        return np.zeros(0)
    p = inst.p[i, order]
    sub = np.tril(X[np.ix_(order + 1, order + 1)])
    rows = p * (sub @ p)
    return np.cumsum(rows)


def machine_prefix_objective(inst, i, X, n_prefix):
    """SDP prefix expression over the first n_prefix jobs of machine i"""
    if n_prefix == 0:
        return 0.0
    _prefix(inst, i, n_prefix)
    return float(prefix_objectives(inst, i, X)[n_prefix - 1])


def machine_objective_telescoped(inst, i, X):
    """
    Machine i's objective through the telescoped prefix form

    sum_r (beta_r - beta_{r+1}) * prefix_r with beta_{n+1} = 0, over the jobs
    with positive ptime (zero-ptime jobs add nothing to either form).
    """
    order = [j for j in smith_order(inst, i).order if inst.p[i, j] > 0]
    if not order:
        return 0.0
    beta = np.array([inst.w[j] / inst.p[i, j] for j in order] + [0.0])
    prefixes = prefix_objectives(inst, i, X, order=order)
    return float(np.sum((beta[:-1] - beta[1:]) * prefixes))


def sdp_objective(inst, sol):
    """SDP objective of a solution under the tie-broken Smith orders"""
    return float(sum(machine_objective(inst, mm.machine, mm.entries) for mm in sol.moments))


def moment_from_integral(inst, s):
    """
    SDP point of an integral schedule: X^(i) = z z^T with z = (1, x_i1, ..., x_in)

    Its objective equals the schedule's cost.
    """
    check_schedule(inst, s)
    x = np.zeros((inst.machines, inst.jobs))
    x[list(s.assignment), list(range(inst.jobs))] = 1.0
    moments = []
    for i in range(inst.machines):
        z = np.concatenate(([1.0], x[i]))
        moments.append(MomentMatrix(machine=i, entries=np.outer(z, z)))
    stats = SolverStats(
        iterations=0, primal_residual=0.0, dual_residual=0.0, rho=0.0,
        converged=True, min_eigenvalue=0.0,
    )
    return SdpSolution(
        x=FractionalAssignment.from_matrix(inst, x),
        moments=tuple(moments),
        objective=schedule_cost(inst, s),
        stats=stats,
    )


def claim_point(inst):
    """Every job spread uniformly over its permitted machines"""
    allowed = inst.allowed.astype(float)
    return FractionalAssignment.from_matrix(inst, allowed / allowed.sum(axis=0))


def independent_moments(inst, x):
    """
    Moments of independent rounding of x: X[j, j'] = x_j x_j', X[j, j] = x_j

    zz^T plus a nonnegative diagonal, so PSD and feasible for the SDP.
    """
    x = assignment_matrix(x)
    blocks = np.zeros((inst.machines, inst.jobs + 1, inst.jobs + 1))
    for i in range(inst.machines):
        z = np.concatenate(([1.0], x[i]))
        block = np.outer(z, z)
        block[np.arange(1, inst.jobs + 1), np.arange(1, inst.jobs + 1)] = x[i]
        blocks[i] = block
    return blocks


# --- PSD certification


def jacobi_eigenvalues(mat, max_sweeps=100):
    """
    Eigenvalues of a symmetric matrix by cyclic Jacobi rotations

    Sweeps stop once the off-diagonal Frobenius norm drops below 1e-12 times
    the matrix norm.
    """
    A = np.array(mat, dtype=float, copy=True)
    n = A.shape[0]
    norm = np.linalg.norm(A)
    if n < 2 or norm == 0.0:
        return np.diag(A).copy()
    threshold = 1e-12 * norm

    for sweep in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(A, 1) ** 2)))
        if off < threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.hypot(t, 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
    else:
        logger.warning(f"Jacobi stopped after {max_sweeps} sweeps without meeting the off-diagonal tolerance")

    return np.diag(A).copy()


def check_psd(mat, tol=TAU_PSD):
    """
    Certify positive semidefiniteness

    Returns:
        (is_psd, min_eigenvalue) with is_psd true iff min_eigenvalue >= -tol

    Raises:
        NonSymmetricMatrixError: if the input is not square and symmetric within 1e-12
    """
    A = np.asarray(mat, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NonSymmetricMatrixError(f"Expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max())) if A.size else 1.0
    if A.size and float(np.abs(A - A.T).max()) > 1e-12 * scale:
        raise NonSymmetricMatrixError("Matrix is not symmetric")
    eigenvalues = jacobi_eigenvalues(A)
    min_eig = float(eigenvalues.min()) if eigenvalues.size else 0.0
    return min_eig >= -tol, min_eig


# --- SDP solver


def _moment_mask(inst):
    """(machines, n+1, n+1) mask of entries that may be nonzero"""
    index_ok = np.concatenate([np.ones((inst.machines, 1), dtype=bool), inst.allowed], axis=1)
    return index_ok[:, :, None] & index_ok[:, None, :]


def _project_affine(M, inst, mask, clamp=False):
    """
    Frobenius projection onto the affine constraints

    x_empty = 1, first row equal to the diagonal, unit assignment sums, zero
    rows for forbidden pairs. For each job the first-row entry counts twice
    (both triangles) and the diagonal once, so the unconstrained target is
    (2a + d) / 3, shifted equally over the permitted machines to sum to one.
    With clamp the linked values are clipped at zero and renormalized, and
    all other entries clipped at zero.
    """
    S = 0.5 * (M + M.transpose(0, 2, 1))
    n = inst.jobs
    allowed = inst.allowed
    a0 = S[:, 0, 1:]
    d0 = np.diagonal(S, axis1=1, axis2=2)[:, 1:]
    t = np.where(allowed, (2.0 * a0 + d0) / 3.0, 0.0)
    shift = (1.0 - t.sum(axis=0)) / allowed.sum(axis=0)
    t = np.where(allowed, t + shift, 0.0)
    S = S * mask
    if clamp:
        t = np.maximum(t, 0.0)
        t = t / t.sum(axis=0)
        S = np.maximum(S, 0.0)
    idx = np.arange(1, n + 1)
    S[:, 0, 0] = 1.0
    S[:, 0, 1:] = t
    S[:, 1:, 0] = t
    S[:, idx, idx] = t
    return S


def _project_psd(Y, pool=None, threads=1):
    """Clip negative eigenvalues of every block; blocks are split over `threads` when a pool is given"""
    Y = 0.5 * (Y + Y.transpose(0, 2, 1))
    if pool is None or threads == 1 or Y.shape[0] == 1:
        vals, vecs = np.linalg.eigh(Y)
    else:
        parts = list(pool.map(np.linalg.eigh, np.array_split(Y, min(threads, Y.shape[0]))))
        vals = np.concatenate([part[0] for part in parts])
        vecs = np.concatenate([part[1] for part in parts])
    vals = np.maximum(vals, 0.0)
    P = (vecs * vals[:, None, :]) @ vecs.transpose(0, 2, 1)
    return 0.5 * (P + P.transpose(0, 2, 1))


def _min_eigenvalue(blocks):
    return float(np.linalg.eigvalsh(blocks).min())


def _package(inst, blocks, stats):
    x = FractionalAssignment.from_matrix(inst, blocks[:, 0, 1:].copy())
    moments = tuple(MomentMatrix(machine=i, entries=blocks[i]) for i in range(inst.machines))
    sol = SdpSolution(x=x, moments=moments, objective=0.0, stats=stats)
    return SdpSolution(x=x, moments=moments, objective=sdp_objective(inst, sol), stats=stats)


def solve_sdp(inst, cfg=None):
    """
    Solve the SDP relaxation by operator splitting

    Three copies of the moment blocks are kept: X in the affine set (with the
    linear objective folded into its update), Z in the PSD cone (eigenvalue
    clipping per block) and W in the nonnegative orthant, tied together by
    scaled dual variables. The penalty rho is rebalanced when the primal and
    dual residuals differ by more than 10x. The returned point is the PSD
    block projected back onto the affine set, so linking and assignment
    constraints hold to rounding error.

    Returns:
        SdpSolution; stats.converged is False when max_iters ran out, in which
        case the best iterate seen is returned
    """
    cfg = cfg or SolverConfig.from_settings()
    mask = _moment_mask(inst)
    C = np.stack([cost_matrix(inst, i) for i in range(inst.machines)])
    c_scale = float(np.abs(C).max())
    if c_scale > 0:
        C = C / c_scale

    X = independent_moments(inst, claim_point(inst))
    Z = X.copy()
    W = X.copy()
    U = np.zeros_like(X)
    V = np.zeros_like(X)
    rho = cfg.rho
    best = None
    converged = False
    candidate = None
    r = s = math.inf

    logger.info(f"Solving SDP for {inst.machines} machines x {inst.jobs} jobs (tol={cfg.tol}, max_iters={cfg.max_iters})")

    executor = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else nullcontext()
    with executor as pool:
        for iteration in range(1, cfg.max_iters + 1):
            X = _project_affine(0.5 * ((Z - U) + (W - V)) - C / (2.0 * rho), inst, mask)
            Z_old, W_old = Z, W
            Z = _project_psd(X + U, pool, cfg.threads)
            W = np.maximum(X + V, 0.0) * mask
            U += X - Z
            V += X - W

            r = math.sqrt(np.sum((X - Z) ** 2) + np.sum((X - W) ** 2))
            s = rho * math.sqrt(np.sum((Z - Z_old) ** 2) + np.sum((W - W_old) ** 2))
            eps_pri = cfg.tol * (1.0 + max(np.linalg.norm(X), np.linalg.norm(Z), np.linalg.norm(W)))
            eps_dual = cfg.tol * (1.0 + rho * math.sqrt(np.sum(U ** 2) + np.sum(V ** 2)))

            score = max(r / eps_pri, s / eps_dual)
            if best is None or score < best[0]:
                best = (score, Z.copy(), iteration, r, s, rho)

            if r <= eps_pri and s <= eps_dual:
                candidate = _project_affine(Z, inst, mask, clamp=True)
                if _min_eigenvalue(candidate) >= -TAU_PSD / 10:
                    converged = True
                    break

            if iteration % 10 == 0:
                if r > 10.0 * s and rho < RHO_BOUNDS[1]:
                    rho *= 2.0
                    U /= 2.0
                    V /= 2.0
                elif s > 10.0 * r and rho > RHO_BOUNDS[0]:
                    rho /= 2.0
                    U *= 2.0
                    V *= 2.0

            if iteration % 1000 == 0:
                logger.debug(f"SDP iteration {iteration}: primal {r:.3e}, dual {s:.3e}, rho {rho:g}")

    if converged:
        stats_values = (iteration, r, s, rho)
    else:
        _, best_Z, best_iteration, best_r, best_s, best_rho = best
        candidate = _project_affine(best_Z, inst, mask, clamp=True)
        stats_values = (best_iteration, best_r, best_s, best_rho)
        logger.warning(
            f"SDP solver did not converge in {cfg.max_iters} iterations; "
            f"returning iterate {best_iteration} (primal {best_r:.3e}, dual {best_s:.3e})"
        )

    stats = SolverStats(
        iterations=stats_values[0],
        primal_residual=float(stats_values[1]),
        dual_residual=float(stats_values[2]),
        rho=float(stats_values[3]),
        converged=converged,
        min_eigenvalue=_min_eigenvalue(candidate),
    )
    sol = _package(inst, candidate, stats)
    logger.info(f"SDP objective {sol.objective:.9g} after {stats.iterations} iterations (converged={converged})")
    return sol


def audit_sdp_solution(inst, sol, tol_feas=TAU_FEAS, tol_psd=TAU_PSD):
    """
    Feasibility audit of an SDP point

    Returns:
        List of human-readable problems; empty when the point is feasible
        within tolerance
    """
    problems = []
    x = assignment_matrix(sol)
    sums = x.sum(axis=0)
    for j in np.flatnonzero(np.abs(sums - 1.0) > tol_feas):
        problems.append(f"job {j}: assignment sum {sums[j]:.12g}")
    for mm in sol.moments:
        i = mm.machine
        X = mm.entries
        if abs(X[0, 0] - 1.0) > tol_feas:
            problems.append(f"machine {i}: x_empty = {X[0, 0]:.12g}")
        link = np.max(np.abs(X[0, 1:] - x[i])) if inst.jobs else 0.0
        diag = np.max(np.abs(np.diag(X)[1:] - x[i])) if inst.jobs else 0.0
        if max(link, diag) > tol_feas:
            problems.append(f"machine {i}: linking constraint off by {max(link, diag):.3e}")
        if X.min() < -tol_feas:
            problems.append(f"machine {i}: entry {X.min():.3e} below zero")
        forbidden = ~inst.allowed[i]
        if np.any(np.abs(X[1:][forbidden]) > tol_feas):
            problems.append(f"machine {i}: nonzero row for a forbidden job")
        ok, min_eig = check_psd(X, tol=tol_psd)
        if not ok:
            problems.append(f"machine {i}: minimum eigenvalue {min_eig:.3e}")
    return problems


# --- CP relaxation


def cp_terms(inst, x):
    """(c^T x, x^T D x) of the convex program"""
    x = assignment_matrix(x)
    linear = float(np.sum(inst.w[None, :] * inst.p * x))
    quadratic = 0.0
    for i in range(inst.machines):
        order = np.array(smith_order(inst, i).order, dtype=int)
        if not order.size:
            continue
        px = inst.p[i, order] * x[i, order]
        before = np.cumsum(px) - px
        quadratic += float(np.sum(inst.w[order] * x[i, order] * (2.0 * before + px)))
    return linear, quadratic


def cp_objective(inst, x):
    """max(c^T x, (c^T x + x^T D x) / 2)"""
    linear, quadratic = cp_terms(inst, x)
    return max(linear, 0.5 * linear + 0.5 * quadratic)


def cp_hessians(inst):
    """
    (machines, jobs, jobs) stack H with x^T D x = sum_i x_i^T H_i x_i / 2

    H_i[j, k] = 2 w_j p_ik when k is not after j in machine i's Smith order;
    rows and columns of forbidden jobs are zero.
    """
    hessians = np.zeros((inst.machines, inst.jobs, inst.jobs))
    for i in range(inst.machines):
        order = np.array(smith_order(inst, i).order, dtype=int)
        if not order.size:
            continue
        rank = np.zeros(inst.jobs, dtype=int)
        rank[order] = np.arange(order.size)
        p = inst.p[i]
        later_first = rank[:, None] >= rank[None, :]
        H = 2.0 * np.where(later_first, inst.w[:, None] * p[None, :], inst.w[None, :] * p[:, None])
        mask = np.outer(inst.allowed[i], inst.allowed[i])
        hessians[i] = np.where(mask, H, 0.0)
    return hessians


def _project_columns(x, allowed):
    """Euclidean projection of every column onto the simplex over its allowed rows"""
    values = np.where(allowed, x, -np.inf)
    u = -np.sort(-values, axis=0)
    count = allowed.sum(axis=0)
    k = np.arange(1, x.shape[0] + 1)[:, None]
    css = np.cumsum(np.where(np.isfinite(u), u, 0.0), axis=0) - 1.0
    feasible = (u - css / k > 0) & (k <= count[None, :])
    rho = feasible.sum(axis=0)
    theta = css[rho - 1, np.arange(x.shape[1])] / rho
    return np.where(allowed, np.maximum(x - theta[None, :], 0.0), 0.0)


def _best_vertex(grad, allowed):
    """Per-job argmin of the gradient over its allowed rows, as a 0/1 matrix"""
    rows = np.argmin(np.where(allowed, grad, np.inf), axis=0)
    vertex = np.zeros_like(grad)
    vertex[rows, np.arange(grad.shape[1])] = 1.0
    return vertex


class _CpBranches:
    """The smooth pieces a(x) = c^T x and b(x) = (c^T x + x^T D x) / 2 of the CP"""

    def __init__(self, inst):
        self.allowed = inst.allowed
        self.c = inst.w[None, :] * inst.p * inst.allowed
        self.hessians = cp_hessians(inst)
        self.curvature = max(float(np.linalg.eigvalsh(H)[-1]) for H in self.hessians)

    def values(self, x):
        linear = float(np.sum(self.c * x))
        quadratic = 0.5 * float(np.einsum('ij,ijk,ik->', x, self.hessians, x))
        return linear, 0.5 * (linear + quadratic)

    def objective(self, x):
        return max(self.values(x))

    def weighted(self, lam, x):
        """g(x) = lam a(x) + (1 - lam) b(x) and its gradient"""
        a, b = self.values(x)
        grad = 0.5 * (1.0 + lam) * self.c + 0.5 * (1.0 - lam) * np.einsum('ijk,ik->ij', self.hessians, x)
        return lam * a + (1.0 - lam) * b, grad

    def minimize(self, lam, x, budget, gap_tol):
        """
        Accelerated projected gradient on the lam-weighted objective,
        restarted whenever momentum points uphill

        Returns:
            (x, value, Frank-Wolfe gap, iterations used)
        """
        lipschitz = 0.5 * (1.0 - lam) * self.curvature
        value, grad = self.weighted(lam, x)
        if lipschitz <= 0.0:
            x = _best_vertex(grad, self.allowed)
            value, _ = self.weighted(lam, x)
            return x, value, 0.0, 1
        gap = float(np.sum(grad * (x - _best_vertex(grad, self.allowed))))
        y, momentum, used = x.copy(), 1.0, 0
        while gap > gap_tol and used < budget:
            used += 1
            _, grad_y = self.weighted(lam, y)
            x_next = _project_columns(y - grad_y / lipschitz, self.allowed)
            if np.sum((y - x_next) * (x_next - x)) > 0.0:
                momentum = 1.0
            following = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * momentum ** 2))
            y = x_next + ((momentum - 1.0) / following) * (x_next - x)
            x, momentum = x_next, following
            value, grad = self.weighted(lam, x)
            gap = float(np.sum(grad * (x - _best_vertex(grad, self.allowed))))
        return x, value, gap, used

    def segment_minimum(self, u, v, steps=100):
        """Golden-section minimum of the CP objective on the segment from u to v"""
        ratio = 0.5 * (math.sqrt(5.0) - 1.0)
        lo, hi = 0.0, 1.0
        for _ in range(steps):
            left = hi - ratio * (hi - lo)
            right = lo + ratio * (hi - lo)
            if self.objective(u + left * (v - u)) <= self.objective(u + right * (v - u)):
                hi = right
            else:
                lo = left
        point = u + 0.5 * (lo + hi) * (v - u)
        return point, self.objective(point)


def solve_cp(inst, cfg=None):
    """
    Minimize max(a(x), b(x)) over the per-job simplices

    The optimum equals the maximum over lam in [0, 1] of
    min_x lam a(x) + (1 - lam) b(x), whose slope in lam is a(x_lam) - b(x_lam).
    Each inner problem is smooth and solved by accelerated projected gradient
    with per-job simplex projection; lam is found by bisection on the sign of
    the slope, and the two bracketing points are blended along their segment.

    Every inner point gives a certified lower bound g(x) - (Frank-Wolfe gap),
    and the solver stops once the best objective is within tol (relative) of
    the best lower bound.

    Returns:
        CpSolution(value, x, stats); stats.converged is False when max_iters
        or bisection_steps ran out first
    """
    cfg = cfg or CpConfig.from_settings()
    branches = _CpBranches(inst)
    start = claim_point(inst).x.copy()
    best_x, best_value = start, branches.objective(start)
    lower = -math.inf
    used = 0

    def gap_tol():
        return 0.25 * cfg.tol * max(1.0, abs(best_value))

    def certified():
        return best_value - lower <= cfg.tol * max(1.0, abs(best_value))

    def evaluate(lam, x):
        nonlocal best_x, best_value, lower, used
        x, value, gap, spent = branches.minimize(lam, x, cfg.max_iters - used, gap_tol())
        used += spent
        lower = max(lower, value - gap)
        objective = branches.objective(x)
        if objective < best_value:
            best_x, best_value = x, objective
        a, b = branches.values(x)
        return x, a - b

    x_high, slope_high = evaluate(1.0, start)
    x_low, slope_low = evaluate(0.0, start)
    lo, hi = 0.0, 1.0
    steps = 0
    if slope_low > 0.0 and slope_high < 0.0:
        x = 0.5 * (x_low + x_high)
        while not certified() and steps < cfg.bisection_steps and used < cfg.max_iters:
            steps += 1
            mid = 0.5 * (lo + hi)
            x, slope = evaluate(mid, x)
            if slope >= 0.0:
                lo, x_low = mid, x
            else:
                hi, x_high = mid, x
            point, value = branches.segment_minimum(x_low, x_high)
            if value < best_value:
                best_x, best_value = point, value

    converged = certified()
    if not converged:
        logger.warning(
            f"CP solver stopped after {used} iterations and {steps} bisection steps; "
            f"best value {best_value:.9g}, lower bound {lower:.9g}"
        )
    logger.info(f"CP value {best_value:.9g} after {used} iterations (lam in [{lo:.6g}, {hi:.6g}])")
    x = FractionalAssignment.from_matrix(inst, best_x)
    return CpSolution(
        value=float(cp_objective(inst, x)),
        x=x,
        stats=CpStats(iterations=used, converged=converged),
    )


# --- Lower bounds from the PSD constraint


def _prefix(inst, i, n_prefix):
    order = smith_order(inst, i).order
    if not 0 <= n_prefix <= len(order):
        raise ValueError(f"Prefix length {n_prefix} is outside 0..{len(order)} for machine {i}")
    return order[:n_prefix]


def lower_bound_lb(inst, sol, i, n_prefix, S):
    """
    LB(S) = sum_{j not in S} x_j p_j^2 + (sum_{j in S} x_j p_j^2 + (sum_{j in S} x_j p_j)^2) / 2

    over the first n_prefix jobs of machine i's Smith order. Every S gives a
    lower bound on the machine's SDP prefix expression.

    Raises:
        ValueError: if S is not contained in the prefix
    """
    prefix = _prefix(inst, i, n_prefix)
    S = set(S)
    if not S <= set(prefix):
        raise ValueError(f"Jobs {sorted(S - set(prefix))} are not in the first {n_prefix} jobs of machine {i}")
    x = assignment_matrix(sol)[i]
    p = inst.p[i]
    outside = sum(x[j] * p[j] ** 2 for j in prefix if j not in S)
    inside_q = sum(x[j] * p[j] ** 2 for j in S)
    inside_l = sum(x[j] * p[j] for j in S)
    return float(outside + 0.5 * (inside_q + inside_l ** 2))


def named_lower_bounds(inst, sol, i, n_prefix, grouped):
    """
    LB(empty) = Q, LB(J) = (Q + L^2) / 2 and LB(G) = (Q_bar + Q + (L - L_bar)^2) / 2

    Q and L are the quadratic and linear sums over the prefix; the barred
    versions run over the prefix jobs outside `grouped` (the jobs whose group
    lies entirely inside the prefix).
    """
    prefix = _prefix(inst, i, n_prefix)
    grouped = set(grouped)
    x = assignment_matrix(sol)[i]
    p = inst.p[i]
    q = float(sum(x[j] * p[j] ** 2 for j in prefix))
    l = float(sum(x[j] * p[j] for j in prefix))
    q_bar = float(sum(x[j] * p[j] ** 2 for j in prefix if j not in grouped))
    l_bar = float(sum(x[j] * p[j] for j in prefix if j not in grouped))
    return LowerBounds(
        lb_empty=q,
        lb_full=0.5 * (q + l ** 2),
        lb_grouped=0.5 * (q_bar + q + (l - l_bar) ** 2),
        q=q,
        l=l,
        q_bar=q_bar,
        l_bar=l_bar,
    )
