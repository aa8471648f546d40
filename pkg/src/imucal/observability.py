"""Rank and degeneracy analysis of the calibration problem.

Two deficiency notions are kept apart deliberately:

* ``rank_deficient`` counts *all* numerically null directions of the
  whitened Jacobian.  The problem always carries a few of these that do
  not touch the extrinsics (e.g. a common-mode shift of all
  accelerometer biases consistent with the mounting rotations), so a
  nonzero count here does not by itself make calibration impossible.
* ``deficient`` is True only when some near-null direction has support
  on the extrinsic (or misalignment) columns, i.e. the quantities the
  calibration exists to estimate are not determined by the data.  This
  is the signal degenerate motion produces and the one callers should
  gate on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .problem import ParameterVector, ProblemInstance
from .so3 import Array
from .solver import assemble_normal_equations

# fraction of the squared norm of a null vector that must fall on
# extrinsic/misalignment columns before it counts as extrinsic-affecting
EXTRINSIC_SUPPORT_TOL = 1e-6


@dataclass
class RankReport:
    dim: int
    rank: int
    rank_deficient: int          # dim - rank, all null directions
    deficient: bool              # some null direction affects the extrinsics
    aux_null_dim: int            # null directions confined to auxiliary states
    threshold: float
    sigma_max: float
    singular_values: Array       # descending; full spectrum on the dense path
    null_space: Array            # (dim, rank_deficient) orthonormal columns
    null_support: list = field(default_factory=list)  # dominant labels per null vector
    truncated: bool = False      # sparse path probed only the smallest directions

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "rank": self.rank,
            "rank_deficient": self.rank_deficient,
            "deficient": self.deficient,
            "aux_null_dim": self.aux_null_dim,
            "threshold": self.threshold,
            "sigma_max": self.sigma_max,
            "singular_values": np.asarray(self.singular_values).tolist(),
            "null_support": self.null_support,
            "truncated": self.truncated,
        }


def _classify_null_space(problem: ProblemInstance, null_space: Array) -> tuple[bool, int, list]:
    lay = problem.layout
    ext_cols = lay.extrinsic_columns()
    deficient = False
    aux_null = 0
    support = []
    for j in range(null_space.shape[1]):
        v = null_space[:, j]
        norm2 = float(v @ v)
        if norm2 == 0.0:
            continue
        ext_mass = float(v[ext_cols] @ v[ext_cols]) / norm2
        if ext_mass > EXTRINSIC_SUPPORT_TOL:
            deficient = True
        else:
            aux_null += 1
        top = np.argsort(np.abs(v))[::-1][:4]
        support.append(
            {
                "extrinsic_mass": ext_mass,
                "components": [lay.describe_col(int(c)) for c in top],
            }
        )
    return deficient, aux_null, support


def check_rank(
    problem: ProblemInstance,
    pv: ParameterVector,
    threshold_ratio: float = 1e-8,
    max_null_probe: int = 12,
    dense_limit_entries: int = 12_000_000,
) -> RankReport:
    """Numerical rank of the whitened Jacobian at ``pv``.

    Small problems get a full dense SVD; larger ones probe the smallest
    eigenpairs of J^T J with shift-inverted Lanczos, which bounds the rank
    from above (``truncated`` is set when every probed direction was null).
    """
    jac = problem.build_jacobian(pv)
    rows, dim = jac.shape
    if rows * dim <= dense_limit_entries:
        dense = jac.toarray()
        # rows < dim needs the full V to expose every null direction
        s, vt = np.linalg.svd(dense, full_matrices=rows < dim)[1:]
        sigma_max = float(s[0]) if s.size else 0.0
        threshold = threshold_ratio * sigma_max
        rank = int(np.sum(s > threshold))
        null_space = vt[rank:].T
        singular_values = s
        truncated = False
    else:
        h = (jac.T @ jac).tocsc()
        lam_max = float(
            scipy.sparse.linalg.eigsh(h, k=1, which="LM", return_eigenvectors=False)[0]
        )
        sigma_max = float(np.sqrt(max(lam_max, 0.0)))
        threshold = threshold_ratio * sigma_max
        k = min(max_null_probe, dim - 1)
        shift = -max(lam_max, 1.0) * 1e-10
        vals, vecs = scipy.sparse.linalg.eigsh(h, k=k, sigma=shift, which="LM")
        order = np.argsort(vals)
        vals = vals[order]
        vecs = vecs[:, order]
        small_sigma = np.sqrt(np.clip(vals, 0.0, None))
        is_null = small_sigma <= threshold
        null_space = vecs[:, is_null]
        rank = dim - int(is_null.sum())
        singular_values = small_sigma[::-1]
        truncated = bool(is_null.all() and k < dim)

    deficient, aux_null, support = _classify_null_space(problem, null_space)
    return RankReport(
        dim=dim,
        rank=rank,
        rank_deficient=dim - rank,
        deficient=deficient,
        aux_null_dim=aux_null,
        threshold=float(threshold),
        sigma_max=sigma_max,
        singular_values=singular_values,
        null_space=null_space,
        null_support=support,
        truncated=truncated,
    )


def _marginal_schur(ne, eps: float) -> Array:
    """Schur complement onto the global columns at regularization eps."""
    k_num, m, _ = ne.B.shape
    eye = np.eye(m)
    schur = ne.C.copy()
    u_mat = np.diag(ne.u_diag)
    prev_chol = None
    prev_b = None
    for k in range(k_num):
        a_k = ne.A[k] + eps * eye
        b_k = ne.B[k]
        if prev_chol is not None:
            solved = scipy.linalg.cho_solve((prev_chol, True), np.hstack([u_mat, prev_b]), check_finite=False)
            a_k = a_k - ne.u_diag[:, None] * solved[:, :m]
            b_k = b_k - ne.u_diag[:, None] * solved[:, m:]
        chol = np.linalg.cholesky(0.5 * (a_k + a_k.T))
        half = scipy.linalg.solve_triangular(chol, b_k, lower=True, check_finite=False)
        schur -= half.T @ half
        prev_chol = chol
        prev_b = b_k
    return 0.5 * (schur + schur.T)


def extrinsic_information(problem: ProblemInstance, pv: ParameterVector) -> dict:
    """Information on the global (extrinsic + misalignment) block alone.

    Marginalizes every per-timestep block out of the Gauss-Newton system
    and returns the eigenvalues of the Schur complement.  Directions the
    data does not constrain show up as eigenvalues collapsing toward
    zero; auxiliary-only null directions do not affect this block at all.

    The elimination runs unregularized first: any absolute shift of the
    auxiliary blocks, however small, leaks into the weakest eigenvalues
    and flattens exactly the near-degeneracies this function exists to
    expose.  Regularization is escalated only if a time block is not
    positive definite (possible with bias priors disabled, where the
    auxiliary gauge freedom makes blocks exactly singular).
    """
    ne = assemble_normal_equations(problem, pv)
    eps_scale = max(float(ne.A.diagonal(axis1=1, axis2=2).max()), 1.0)
    schur = None
    for eps in (0.0, 1e-12 * eps_scale, 1e-9 * eps_scale):
        try:
            schur = _marginal_schur(ne, eps)
            break
        except np.linalg.LinAlgError:
            continue
    if schur is None:
        raise np.linalg.LinAlgError("time-block elimination failed at all regularization levels")
    eigvals = np.linalg.eigvalsh(schur)
    labels = [problem.layout.describe_col(int(c)) for c in problem.layout.extrinsic_columns()]
    return {
        "eigenvalues": eigvals,
        "labels": labels,
        "min_eigenvalue": float(eigvals[0]),
        "max_eigenvalue": float(eigvals[-1]),
    }


def is_extrinsic_deficient(eigenvalues: Array, threshold_ratio: float = 1e-8) -> bool:
    """Ratio test on the marginal information spectrum.

    The comparison runs on sqrt-eigenvalues so the threshold matches the
    singular-value ratio used by :func:`check_rank`.
    """
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.size == 0:
        return True
    top = float(np.sqrt(max(eigenvalues.max(), 0.0)))
    if top == 0.0:
        return True
    bottom = float(np.sqrt(max(eigenvalues.min(), 0.0)))
    return bottom <= threshold_ratio * top


def jacobian_block_dims(k: int, num_samples: int, n: int, misalign_enabled: bool = True) -> tuple:
    """(rows, cols) of the per-timestep, per-IMU Jacobian submatrix.

    Rows stack the two measurement residuals at (k, n) plus the two bias-walk
    residuals linking k to k+1; the final timestep has no walk rows.  Columns
    count the parameter blocks the submatrix touches: the base IMU (n=0)
    contributes misalignment + both biases + angular acceleration, every
    other IMU contributes lever arm + orientation + misalignment + both
    biases.  Disabling misalignment estimation drops those 3 columns.
    """
    if not (1 <= k <= num_samples):
        raise ValueError("timestep index out of range")
    if n < 0:
        raise ValueError("IMU index must be non-negative")
    rows = 12 if k < num_samples else 6
    mis = 3 if misalign_enabled else 0
    cols = (mis + 9) if n == 0 else (mis + 12)
    return rows, cols
