"""Sparse Levenberg-Marquardt for the calibration problem.

The normal equations inherit the problem structure: per-timestep blocks
(angular acceleration + biases) couple only to their walk neighbours and
to the small global block (extrinsics, misalignments).  The damped system

    [T   B] [dx_t]   [-grad_t]
    [B^T C] [dx_g] = [-grad_g]

is solved by eliminating the block-tridiagonal T first (block Thomas
sweep) and solving the dense Schur complement on the globals, i.e. the
per-timestep blocks are eliminated before the global extrinsic block.
Damping is Marquardt-style (lambda * diag H), so structurally zero
curvature directions are not masked: their factorization failure is the
rank-deficiency signal.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .problem import ParameterVector, ProblemInstance, apply_step
from .so3 import Array

# damping at (or above) which a failed factorization is reported as
# numerical failure instead of retried
FACTORIZATION_DAMPING_LIMIT = 1e8
# damping beyond which step rejection is treated as a stall
STALL_DAMPING = 1e15
# lower bound keeps exact gauge directions from amplifying rounding noise
DAMPING_FLOOR = 1e-10

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERATIONS = "max_iterations"
STATUS_NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 100
    cost_tolerance: float = 1e-10      # relative decrease per accepted step
    gradient_tolerance: float = 1e-12  # max-norm of J^T r
    step_tolerance: float = 1e-12      # norm of an accepted step
    initial_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 0.1


@dataclass
class SolveReport:
    status: str
    iterations: int
    initial_cost: float
    final_cost: float
    gradient_inf: float
    wall_time: float
    message: str = ""
    log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "initial_cost": self.initial_cost,
            "final_cost": self.final_cost,
            "gradient_inf": self.gradient_inf,
            "wall_time": self.wall_time,
            "message": self.message,
            "log": self.log,
        }


def evaluate_cost(problem: ProblemInstance, pv: ParameterVector) -> float:
    """Sum of squared whitened residuals."""
    r = problem.residual_vector(pv)
    return float(r @ r)


@dataclass
class NormalEquations:
    """Structured Gauss-Newton system.

    A       (K, m, m)  per-timestep diagonal blocks of J^T J
    u_diag  (m,)       the (diagonal) coupling block between consecutive
                       timesteps, identical for every pair (bias walks)
    B       (K, m, g)  timestep-to-global coupling
    C       (g, g)     global block
    grad_t  (K, m), grad_g (g,)   J^T r
    cost    float      sum of squared whitened residuals
    """

    A: Array
    u_diag: Array
    B: Array
    C: Array
    grad_t: Array
    grad_g: Array
    cost: float

    @property
    def gradient_inf(self) -> float:
        g_t = np.abs(self.grad_t).max() if self.grad_t.size else 0.0
        g_g = np.abs(self.grad_g).max() if self.grad_g.size else 0.0
        return float(max(g_t, g_g))


def assemble_normal_equations(problem: ProblemInstance, pv: ParameterVector) -> NormalEquations:
    """Accumulate J^T J and J^T r from the batched jacobian blocks."""
    lay = problem.layout
    k_num = lay.num_samples
    m = lay.time_block
    g = lay.global_dim
    A = np.zeros((k_num, m, m))
    u_diag = np.zeros(m)
    B = np.zeros((k_num, m, g))
    C = np.zeros((g, g))
    grad_t = np.zeros((k_num, m))
    grad_g = np.zeros(g)
    cost = 0.0

    pieces = problem.jacobian_pieces(pv)
    residuals = problem._residual_arrays(pv)

    time_slots = {
        "alpha": lay.slot_alpha(),
        "ba0": lay.slot_ba(0),
        "bg0": lay.slot_bg(0),
    }
    for kind, weight_arr in (("accel", problem.w_accel), ("gyro", problem.w_gyro)):
        for n in range(1, lay.num_imus):
            jac = pieces[(kind, n)]
            res = weight_arr[n] * residuals[(kind, n)]  # whitened (K, 3)
            cost += float(np.sum(res * res))
            time_names, glob_names = [], []
            for name in jac:
                if name in ("alpha", "ba0", "bg0") or name in ("ban", "bgn"):
                    time_names.append(name)
                else:
                    glob_names.append(name)
            slot_of = dict(time_slots)
            slot_of["ban"] = lay.slot_ba(n)
            slot_of["bgn"] = lay.slot_bg(n)
            idx_t = np.concatenate([np.arange(slot_of[nm], slot_of[nm] + 3) for nm in time_names])
            glob_col = {"p": lay.col_p(n), "dq": lay.col_dq(n)}
            if lay.estimate_misalignment:
                glob_col["mis0"] = lay.col_mis(0)
                glob_col["mis_n"] = lay.col_mis(n)
            idx_g = np.concatenate(
                [np.arange(glob_col[nm], glob_col[nm] + 3) for nm in glob_names]
            ) - lay.global_offset
            jt = np.concatenate([jac[nm] for nm in time_names], axis=2)  # (K, 3, 3T)
            jg = np.concatenate([jac[nm] for nm in glob_names], axis=2)  # (K, 3, 3G)
            A[:, idx_t[:, None], idx_t[None, :]] += np.einsum("kri,krj->kij", jt, jt, optimize=True)
            B[:, idx_t[:, None], idx_g[None, :]] += np.einsum("kri,krj->kij", jt, jg, optimize=True)
            C[np.ix_(idx_g, idx_g)] += np.einsum("kri,krj->ij", jg, jg, optimize=True)
            grad_t[:, idx_t] += np.einsum("kri,kr->ki", jt, res, optimize=True)
            grad_g[idx_g] += np.einsum("kri,kr->i", jg, res, optimize=True)

    if k_num > 1:
        for kind, weights, slot_fn, arr in (
            ("walk_accel", problem.w_walk_accel, lay.slot_ba, pv.ba),
            ("walk_gyro", problem.w_walk_gyro, lay.slot_bg, pv.bg),
        ):
            for n in range(lay.num_imus):
                w = weights[n]
                slot = slot_fn(n)
                diff = arr[1:, n] - arr[:-1, n]  # (K-1, 3)
                cost += float(w * w * np.sum(diff * diff))
                sl = slice(slot, slot + 3)
                diag_idx = np.arange(slot, slot + 3)
                A[:-1, diag_idx, diag_idx] += w * w
                A[1:, diag_idx, diag_idx] += w * w
                u_diag[sl] += -w * w
                grad_t[:-1, sl] += -w * w * diff
                grad_t[1:, sl] += w * w * diff

    if problem.options.bias_priors:
        w2 = problem.w_prior ** 2
        for slot_fn, arr in ((lay.slot_ba, pv.ba), (lay.slot_bg, pv.bg)):
            for n in range(lay.num_imus):
                slot = slot_fn(n)
                b0 = arr[0, n]
                cost += w2 * float(b0 @ b0)
                diag_idx = np.arange(slot, slot + 3)
                A[0, diag_idx, diag_idx] += w2
                grad_t[0, slot:slot + 3] += w2 * b0

    return NormalEquations(A, u_diag, B, C, grad_t, grad_g, cost)


def solve_damped(ne: NormalEquations, damping: float) -> Array:
    """Solve (H + damping * diag H) dx = -grad via block Thomas + global Schur.

    Returns the full tangent step (K*m + g,).  Raises numpy.linalg.LinAlgError
    when a Cholesky factorization fails (structural rank deficiency).
    """
    k_num, m, g = ne.B.shape
    scale = 1.0 + damping
    diag_idx = np.arange(m)
    chols = np.empty((k_num, m, m))
    z_hat = np.empty((k_num, m, 1 + g))
    z_full = np.concatenate([ne.grad_t[:, :, None], ne.B], axis=2)
    u_mat = np.diag(ne.u_diag)
    rhs = np.empty((m, m + 1 + g))

    for k in range(k_num):
        a_k = ne.A[k].copy()
        a_k[diag_idx, diag_idx] *= scale
        if k == 0:
            s_k = a_k
            z_k = z_full[0]
        else:
            rhs[:, :m] = u_mat
            rhs[:, m:] = z_hat[k - 1]
            solved = scipy.linalg.cho_solve((chols[k - 1], True), rhs, check_finite=False)
            s_k = a_k - ne.u_diag[:, None] * solved[:, :m]
            z_k = z_full[k] - ne.u_diag[:, None] * solved[:, m:]
        chols[k] = np.linalg.cholesky(s_k)
        z_hat[k] = z_k

    x = np.empty((k_num, m, 1 + g))
    x[k_num - 1] = scipy.linalg.cho_solve((chols[k_num - 1], True), z_hat[k_num - 1], check_finite=False)
    for k in range(k_num - 2, -1, -1):
        x[k] = scipy.linalg.cho_solve(
            (chols[k], True), z_hat[k] - ne.u_diag[:, None] * x[k + 1], check_finite=False
        )
    xs = x[:, :, 0]       # T^-1 grad_t
    xb = x[:, :, 1:]      # T^-1 B

    c_damped = ne.C.copy()
    gd = np.arange(g)
    c_damped[gd, gd] *= scale
    schur = c_damped - np.einsum("kmi,kmj->ij", ne.B, xb, optimize=True)
    schur = 0.5 * (schur + schur.T)
    rhs_g = np.einsum("kmi,km->i", ne.B, xs, optimize=True) - ne.grad_g
    chol_s = np.linalg.cholesky(schur)
    delta_g = scipy.linalg.cho_solve((chol_s, True), rhs_g, check_finite=False)
    delta_t = -xs - xb @ delta_g
    return np.concatenate([delta_t.ravel(), delta_g])


def dense_normal_matrix(ne: NormalEquations) -> tuple[Array, Array]:
    """Densified (H, grad) of the structured system, for reference solves."""
    k_num, m, g = ne.B.shape
    dim = k_num * m + g
    h = np.zeros((dim, dim))
    for k in range(k_num):
        h[k * m:(k + 1) * m, k * m:(k + 1) * m] = ne.A[k]
        h[k * m:(k + 1) * m, k_num * m:] = ne.B[k]
        h[k_num * m:, k * m:(k + 1) * m] = ne.B[k].T
    for k in range(k_num - 1):
        idx = np.arange(m)
        h[k * m + idx, (k + 1) * m + idx] = ne.u_diag
        h[(k + 1) * m + idx, k * m + idx] = ne.u_diag
    h[k_num * m:, k_num * m:] = ne.C
    grad = np.concatenate([ne.grad_t.ravel(), ne.grad_g])
    return h, grad


def solve(
    problem: ProblemInstance,
    initial: ParameterVector,
    options: SolverOptions | None = None,
) -> tuple[ParameterVector, SolveReport]:
    """Levenberg-Marquardt with monotone accepted cost."""
    options = options or SolverOptions()
    t_start = time.perf_counter()
    pv = initial.copy()
    ne = assemble_normal_equations(problem, pv)
    if not np.isfinite(ne.cost):
        raise ValueError("initial cost is not finite")
    initial_cost = ne.cost
    cost = ne.cost
    lam = options.initial_damping
    status = STATUS_MAX_ITERATIONS
    message = "iteration budget exhausted"
    log: list = []
    iterations = 0

    if ne.gradient_inf <= options.gradient_tolerance:
        status = STATUS_CONVERGED
        message = "gradient below tolerance at the initial point"
    else:
        while iterations < options.max_iterations:
            iterations += 1
            try:
                delta = solve_damped(ne, lam)
            except np.linalg.LinAlgError:
                if lam >= FACTORIZATION_DAMPING_LIMIT:
                    status = STATUS_NUMERICAL_FAILURE
                    message = (
                        f"normal-equation factorization failed at damping {lam:.2e}; "
                        "the problem is rank deficient (see the observability check)"
                    )
                    break
                lam *= options.damping_increase
                continue
            candidate = apply_step(pv, delta, problem.layout)
            new_cost = evaluate_cost(problem, candidate)
            accepted = bool(np.isfinite(new_cost) and new_cost < cost)
            log.append(
                {
                    "iteration": iterations,
                    "cost": cost,
                    "candidate_cost": new_cost,
                    "damping": lam,
                    "accepted": accepted,
                    "step_norm": float(np.linalg.norm(delta)),
                }
            )
            if accepted:
                decrease = cost - new_cost
                pv = candidate
                cost = new_cost
                ne = assemble_normal_equations(problem, pv)
                if decrease <= options.cost_tolerance * max(cost, 1e-300):
                    status = STATUS_CONVERGED
                    message = "relative cost decrease below tolerance"
                    break
                if ne.gradient_inf <= options.gradient_tolerance:
                    status = STATUS_CONVERGED
                    message = "gradient below tolerance"
                    break
                # zero-residual problems descend geometrically forever; the
                # step shrinking to nothing is the usable convergence signal
                if float(np.linalg.norm(delta)) <= options.step_tolerance:
                    status = STATUS_CONVERGED
                    message = "step below tolerance"
                    break
                lam = max(lam * options.damping_decrease, DAMPING_FLOOR)
            else:
                lam *= options.damping_increase
                if lam > STALL_DAMPING:
                    status = STATUS_MAX_ITERATIONS
                    message = "no acceptable step below the damping stall limit"
                    break

    report = SolveReport(
        status=status,
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        gradient_inf=ne.gradient_inf,
        wall_time=time.perf_counter() - t_start,
        message=message,
        log=log,
    )
    return pv, report
