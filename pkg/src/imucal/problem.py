"""Nonlinear least-squares calibration problem.

Parameters (local/tangent layout, one column triplet each):

  per timestep k (block of size m = 3 + 6(N+1)):
      alpha_k                       base angular acceleration [rad/s^2]
      ba_{n,k}, bg_{n,k}, n=0..N    accel/gyro biases
  globals (after all K timestep blocks):
      p_n, dtheta_n, n=1..N         extrinsic pose of IMU n (base frame)
      dtheta_mis_n, n=0..N          gyro misalignment (only when estimated)

The base IMU pose is the gauge and is never a parameter.  Orientation
increments are applied on the right: q <- q * exp_map(dtheta).

Residuals (whitened by the inverse square root of their isotropic
covariances):

  r_a(n,k) = (a~_n - ba_n) - C(q_n)^T [ (a~_0 - ba_0) + [w^]x[w^]x p_n + [alpha]x p_n ]
  r_g(n,k) = C(q_n) C(mis_n)^T (w~_n - bg_n) - C(mis_0)^T (w~_0 - bg_0)
  r_ba(n,k) = ba_{n,k+1} - ba_{n,k},   r_bg likewise
  with w^ = C(mis_0)^T (w~_0 - bg_0).

  Var(r_a) = sigma_a_n^2/dt + sigma_a_0^2/dt + (sigma_g_0^2/dt)^2
  Var(r_g) = sigma_g_n^2/dt + sigma_g_0^2/dt
  Var(r_ba) = sigma_ba_n^2 dt,   Var(r_bg) = sigma_bg_n^2 dt
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from .imu_model import ImuNoiseSpec
from .simulator import ExtrinsicSet, MeasurementSeries
from .so3 import Array, exp_map, quat_multiply, quat_normalize, rot_from_quat, skew


@dataclass(frozen=True)
class CovarianceWeights:
    """Per-kind isotropic residual variances (scalars of sigma^2 I)."""

    accel_var: float
    gyro_var: float
    walk_accel_var: float
    walk_gyro_var: float

    def __post_init__(self) -> None:
        for name in ("accel_var", "gyro_var", "walk_accel_var", "walk_gyro_var"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive, got {v}")

    # multiplicative whitening factors 1/sigma
    @property
    def accel_weight(self) -> float:
        return 1.0 / math.sqrt(self.accel_var)

    @property
    def gyro_weight(self) -> float:
        return 1.0 / math.sqrt(self.gyro_var)

    @property
    def walk_accel_weight(self) -> float:
        return 1.0 / math.sqrt(self.walk_accel_var)

    @property
    def walk_gyro_weight(self) -> float:
        return 1.0 / math.sqrt(self.walk_gyro_var)


def covariance_weights(
    spec: ImuNoiseSpec,
    base_spec: ImuNoiseSpec | None = None,
    sigma_a_alt: bool = False,
) -> CovarianceWeights:
    """Residual covariances of IMU n paired with the base IMU.

    With identical specs the accel variance is 2 sigma_a^2/dt + (sigma_g^2/dt)^2
    and the gyro variance 2 sigma_g^2/dt.  The squared-variance term is kept
    verbatim; sigma_a_alt=True drops it (plain first-order propagation).
    """
    base = base_spec if base_spec is not None else spec
    if abs(spec.dt - base.dt) > 1e-12:
        raise ValueError("paired noise specs must share dt")
    dt = spec.dt
    accel_var = spec.sigma_a**2 / dt + base.sigma_a**2 / dt
    if not sigma_a_alt:
        accel_var += (base.sigma_g**2 / dt) ** 2
    gyro_var = spec.sigma_g**2 / dt + base.sigma_g**2 / dt
    return CovarianceWeights(
        accel_var=accel_var,
        gyro_var=gyro_var,
        walk_accel_var=spec.sigma_ba**2 * dt,
        walk_gyro_var=spec.sigma_bg**2 * dt,
    )


# Initial sensor biases are bounded (each component within +/- 0.05 in SI
# units); the matching zero-mean prior pins the constant offsets that the
# measurements themselves cannot separate: a common shift of all
# accelerometer biases, and a constant angular-acceleration offset absorbed
# into them.  Without these two prior rows per IMU the problem has an exact
# 6-dimensional flat family and the auxiliary states drift arbitrarily.
PRIOR_BIAS_BOUND = 0.05
PRIOR_BIAS_STD = PRIOR_BIAS_BOUND / math.sqrt(3.0)  # std of U[-bound, bound]


@dataclass(frozen=True)
class ProblemOptions:
    estimate_misalignment: bool = True
    sigma_a_alt: bool = False
    # zero-mean priors on the initial biases (gauge fixing, see above)
    bias_priors: bool = True
    # overrides the noise carried by the measurement series when given
    noise: tuple | None = None


@dataclass
class ParameterVector:
    """Current estimate of every parameter (quaternions stored, not tangents).

    Misalignment quaternions are always carried; when estimation is
    disabled they simply stay frozen (no columns in the tangent space).
    """

    p: Array      # (N, 3)
    q: Array      # (N, 4)
    mis: Array    # (N+1, 4)
    ba: Array     # (K, N+1, 3)
    bg: Array     # (K, N+1, 3)
    alpha: Array  # (K, 3)

    def copy(self) -> "ParameterVector":
        return ParameterVector(
            self.p.copy(), self.q.copy(), self.mis.copy(),
            self.ba.copy(), self.bg.copy(), self.alpha.copy(),
        )

    @property
    def num_imus(self) -> int:
        return self.ba.shape[1]

    @property
    def num_samples(self) -> int:
        return self.ba.shape[0]

    @classmethod
    def from_extrinsics(cls, extrinsics: ExtrinsicSet, num_samples: int) -> "ParameterVector":
        n_imus = extrinsics.num_imus
        return cls(
            p=extrinsics.p.copy(),
            q=extrinsics.q.copy(),
            mis=extrinsics.mis.copy(),
            ba=np.zeros((num_samples, n_imus, 3)),
            bg=np.zeros((num_samples, n_imus, 3)),
            alpha=np.zeros((num_samples, 3)),
        )

    def extrinsics(self) -> ExtrinsicSet:
        return ExtrinsicSet(self.p.copy(), self.q.copy(), self.mis.copy())


class ParameterLayout:
    """Column bookkeeping of the tangent space."""

    def __init__(self, num_imus: int, num_samples: int, estimate_misalignment: bool):
        if num_imus < 2:
            raise ValueError("need at least two IMUs")
        if num_samples < 1:
            raise ValueError("need at least one sample")
        self.num_imus = num_imus
        self.num_samples = num_samples
        self.estimate_misalignment = estimate_misalignment
        self.time_block = 3 + 6 * num_imus
        self.global_offset = num_samples * self.time_block
        self.global_dim = 6 * (num_imus - 1) + (3 * num_imus if estimate_misalignment else 0)
        self.dim = self.global_offset + self.global_dim

    def col_alpha(self, k: int) -> int:
        return k * self.time_block

    def col_ba(self, k: int, n: int) -> int:
        return k * self.time_block + 3 + 6 * n

    def col_bg(self, k: int, n: int) -> int:
        return k * self.time_block + 6 + 6 * n

    def col_p(self, n: int) -> int:
        # n in 1..N
        return self.global_offset + 6 * (n - 1)

    def col_dq(self, n: int) -> int:
        return self.global_offset + 6 * (n - 1) + 3

    def col_mis(self, n: int) -> int:
        if not self.estimate_misalignment:
            raise ValueError("misalignment is not estimated")
        return self.global_offset + 6 * (self.num_imus - 1) + 3 * n

    # offsets inside one timestep block
    def slot_alpha(self) -> int:
        return 0

    def slot_ba(self, n: int) -> int:
        return 3 + 6 * n

    def slot_bg(self, n: int) -> int:
        return 6 + 6 * n

    def describe_col(self, j: int) -> str:
        axis = "xyz"[j % 3]
        if j < self.global_offset:
            k, rem = divmod(j, self.time_block)
            if rem < 3:
                return f"alpha[k={k}].{axis}"
            n, rem2 = divmod(rem - 3, 6)
            kind = "ba" if rem2 < 3 else "bg"
            return f"{kind}[k={k},n={n}].{axis}"
        rem = j - self.global_offset
        ext = 6 * (self.num_imus - 1)
        if rem < ext:
            n = rem // 6 + 1
            return (f"p[n={n}].{axis}" if rem % 6 < 3 else f"dq[n={n}].{axis}")
        n = (rem - ext) // 3
        return f"mis[n={n}].{axis}"

    def extrinsic_columns(self) -> Array:
        """Indices of all extrinsic + misalignment columns."""
        return np.arange(self.global_offset, self.dim)


@dataclass
class ResidualBlock:
    """One 3-row residual block and the tangent column slices it touches."""

    kind: str  # accel | gyro | walk_accel | walk_gyro
    k: int
    n: int
    weight: float
    columns: dict

    @property
    def touched_slices(self) -> list:
        return [slice(c, c + 3) for c in sorted(self.columns.values())]


# ---------------------------------------------------------------------------
# residual functions (unwhitened, broadcasting over leading dimensions)
# ---------------------------------------------------------------------------

def base_angular_rate(gyro_0: Array, bg_0: Array, mis_0: Array) -> Array:
    """w^ = C(mis_0)^T (w~_0 - bg_0), the bias/misalignment-corrected base rate."""
    m0 = rot_from_quat(mis_0)
    return (np.asarray(gyro_0, float) - np.asarray(bg_0, float)) @ m0


def residual_accel(accel_n, ba_n, accel_0, ba_0, gyro_0, bg_0, p_n, q_n, mis_0, alpha) -> Array:
    """r_a: measured specific force of IMU n minus the one predicted from IMU 0."""
    w_hat = base_angular_rate(gyro_0, bg_0, mis_0)
    a0_hat = np.asarray(accel_0, float) - np.asarray(ba_0, float)
    p_n = np.asarray(p_n, float)
    lever = np.cross(w_hat, np.cross(w_hat, p_n)) + np.cross(np.asarray(alpha, float), p_n)
    rn = rot_from_quat(q_n)
    predicted = (a0_hat + lever) @ rn  # C(q_n)^T (.) in row form
    return (np.asarray(accel_n, float) - np.asarray(ba_n, float)) - predicted


def residual_gyro(gyro_n, bg_n, gyro_0, bg_0, q_n, mis_n, mis_0) -> Array:
    """r_g: angular rates of IMU n and IMU 0 compared in base-frame coordinates."""
    rn = rot_from_quat(q_n)
    mn = rot_from_quat(mis_n)
    u_n = np.asarray(gyro_n, float) - np.asarray(bg_n, float)
    own = (u_n @ mn) @ rn.T  # C(q_n) C(mis_n)^T u_n
    return own - base_angular_rate(gyro_0, bg_0, mis_0)


def residual_bias_walk(b_next: Array, b_prev: Array) -> Array:
    return np.asarray(b_next, float) - np.asarray(b_prev, float)


# ---------------------------------------------------------------------------
# problem instance
# ---------------------------------------------------------------------------

@dataclass
class ProblemInstance:
    accel: Array  # (K, N+1, 3)
    gyro: Array   # (K, N+1, 3)
    dt: float
    noise: list
    options: ProblemOptions
    layout: ParameterLayout
    # per-IMU whitening weights; accel/gyro entries are for the pairing with
    # the base IMU and entry 0 is unused
    w_accel: Array
    w_gyro: Array
    w_walk_accel: Array
    w_walk_gyro: Array

    @property
    def num_imus(self) -> int:
        return self.accel.shape[1]

    @property
    def num_samples(self) -> int:
        return self.accel.shape[0]

    @property
    def w_prior(self) -> float:
        return 1.0 / PRIOR_BIAS_STD

    @property
    def num_blocks(self) -> int:
        n = self.num_imus - 1
        k = self.num_samples
        count = 2 * n * k + 2 * (n + 1) * (k - 1)
        if self.options.bias_priors:
            count += 2 * (n + 1)
        return count

    @property
    def num_rows(self) -> int:
        return 3 * self.num_blocks

    # row offsets of the canonical residual ordering: all accel blocks
    # (n-major, k-minor), all gyro blocks, accel walks, gyro walks,
    # then the initial-bias priors
    def _row_base(self, kind: str, n: int) -> int:
        num_n = self.num_imus - 1
        k = self.num_samples
        if kind == "accel":
            return 3 * k * (n - 1)
        if kind == "gyro":
            return 3 * k * num_n + 3 * k * (n - 1)
        if kind == "walk_accel":
            return 6 * k * num_n + 3 * (k - 1) * n
        if kind == "walk_gyro":
            return 6 * k * num_n + 3 * (k - 1) * (self.num_imus + n)
        prior_base = 6 * k * num_n + 6 * (k - 1) * self.num_imus
        if kind == "prior_ba":
            return prior_base + 3 * n
        if kind == "prior_bg":
            return prior_base + 3 * (self.num_imus + n)
        raise ValueError(kind)

    def blocks(self) -> list[ResidualBlock]:
        lay = self.layout
        out: list[ResidualBlock] = []
        k_num = self.num_samples
        mis = lay.estimate_misalignment
        for n in range(1, self.num_imus):
            for k in range(k_num):
                cols = {
                    "alpha": lay.col_alpha(k),
                    "ba0": lay.col_ba(k, 0),
                    "bg0": lay.col_bg(k, 0),
                    "ban": lay.col_ba(k, n),
                    "p": lay.col_p(n),
                    "dq": lay.col_dq(n),
                }
                if mis:
                    cols["mis0"] = lay.col_mis(0)
                out.append(ResidualBlock("accel", k, n, float(self.w_accel[n]), cols))
        for n in range(1, self.num_imus):
            for k in range(k_num):
                cols = {"bg0": lay.col_bg(k, 0), "bgn": lay.col_bg(k, n), "dq": lay.col_dq(n)}
                if mis:
                    cols["mis_n"] = lay.col_mis(n)
                    cols["mis0"] = lay.col_mis(0)
                out.append(ResidualBlock("gyro", k, n, float(self.w_gyro[n]), cols))
        for n in range(self.num_imus):
            for k in range(k_num - 1):
                cols = {"b_prev": lay.col_ba(k, n), "b_next": lay.col_ba(k + 1, n)}
                out.append(ResidualBlock("walk_accel", k, n, float(self.w_walk_accel[n]), cols))
        for n in range(self.num_imus):
            for k in range(k_num - 1):
                cols = {"b_prev": lay.col_bg(k, n), "b_next": lay.col_bg(k + 1, n)}
                out.append(ResidualBlock("walk_gyro", k, n, float(self.w_walk_gyro[n]), cols))
        if self.options.bias_priors:
            for n in range(self.num_imus):
                out.append(ResidualBlock("prior_ba", 0, n, self.w_prior, {"b": lay.col_ba(0, n)}))
            for n in range(self.num_imus):
                out.append(ResidualBlock("prior_bg", 0, n, self.w_prior, {"b": lay.col_bg(0, n)}))
        return out

    # -- residual evaluation ------------------------------------------------

    def _residual_arrays(self, pv: ParameterVector) -> dict:
        out = {}
        for n in range(1, self.num_imus):
            out[("accel", n)] = residual_accel(
                self.accel[:, n], pv.ba[:, n], self.accel[:, 0], pv.ba[:, 0],
                self.gyro[:, 0], pv.bg[:, 0], pv.p[n - 1], pv.q[n - 1], pv.mis[0], pv.alpha,
            )
            out[("gyro", n)] = residual_gyro(
                self.gyro[:, n], pv.bg[:, n], self.gyro[:, 0], pv.bg[:, 0],
                pv.q[n - 1], pv.mis[n], pv.mis[0],
            )
        for n in range(self.num_imus):
            out[("walk_accel", n)] = residual_bias_walk(pv.ba[1:, n], pv.ba[:-1, n])
            out[("walk_gyro", n)] = residual_bias_walk(pv.bg[1:, n], pv.bg[:-1, n])
        if self.options.bias_priors:
            for n in range(self.num_imus):
                out[("prior_ba", n)] = pv.ba[0, n]
                out[("prior_bg", n)] = pv.bg[0, n]
        return out

    def residual_vector(self, pv: ParameterVector) -> Array:
        """Whitened residuals in the canonical row ordering."""
        arrays = self._residual_arrays(pv)
        r = np.empty(self.num_rows)
        for n in range(1, self.num_imus):
            base = self._row_base("accel", n)
            r[base:base + 3 * self.num_samples] = (self.w_accel[n] * arrays[("accel", n)]).ravel()
            base = self._row_base("gyro", n)
            r[base:base + 3 * self.num_samples] = (self.w_gyro[n] * arrays[("gyro", n)]).ravel()
        for n in range(self.num_imus):
            base = self._row_base("walk_accel", n)
            r[base:base + 3 * (self.num_samples - 1)] = (self.w_walk_accel[n] * arrays[("walk_accel", n)]).ravel()
            base = self._row_base("walk_gyro", n)
            r[base:base + 3 * (self.num_samples - 1)] = (self.w_walk_gyro[n] * arrays[("walk_gyro", n)]).ravel()
        if self.options.bias_priors:
            for kind in ("prior_ba", "prior_bg"):
                for n in range(self.num_imus):
                    base = self._row_base(kind, n)
                    r[base:base + 3] = self.w_prior * arrays[(kind, n)]
        return r

    # -- jacobians ------------------------------------------------------------

    def jacobian_pieces(self, pv: ParameterVector) -> dict:
        """Whitened 3x3 jacobian blocks, batched over k.

        Returns {('accel'|'gyro', n): {column name: (K, 3, 3)}} where the
        column names match ResidualBlock.columns (walk blocks are +/- w I and
        are handled inline by consumers).
        """
        k_num = self.num_samples
        mis = self.layout.estimate_misalignment
        m0 = rot_from_quat(pv.mis[0])
        u0 = self.gyro[:, 0] - pv.bg[:, 0]
        w_hat = u0 @ m0                      # (K, 3)
        a0_hat = self.accel[:, 0] - pv.ba[:, 0]
        sk_w = skew(w_hat)                   # (K, 3, 3)
        sk_alpha = skew(pv.alpha)
        eye = np.eye(3)
        pieces: dict = {}
        for n in range(1, self.num_imus):
            p_n = pv.p[n - 1]
            rn = rot_from_quat(pv.q[n - 1])
            mn = rot_from_quat(pv.mis[n])
            w_a = self.w_accel[n]
            w_g = self.w_gyro[n]
            sk_p = skew(p_n)
            lever = np.cross(w_hat, np.cross(w_hat, p_n)) + np.cross(pv.alpha, p_n)
            s = a0_hat + lever
            # d(w^ x (w^ x p))/dw^ = -[w^ x p]x - [w^]x [p]x
            d_omega = -skew(np.cross(w_hat, p_n)) - sk_w @ sk_p
            acc = {
                "alpha": np.broadcast_to(w_a * (rn.T @ sk_p), (k_num, 3, 3)),
                "ba0": np.broadcast_to(w_a * rn.T, (k_num, 3, 3)),
                "bg0": w_a * np.einsum("ij,kjl,ml->kim", rn.T, d_omega, m0, optimize=True),
                "ban": np.broadcast_to(-w_a * eye, (k_num, 3, 3)),
                "p": -w_a * np.einsum("ij,kjl->kil", rn.T, sk_w @ sk_w + sk_alpha),
                "dq": -w_a * skew(s @ rn),
            }
            if mis:
                acc["mis0"] = -w_a * np.einsum("ij,kjl,klm->kim", rn.T, d_omega, sk_w, optimize=True)
            pieces[("accel", n)] = acc
            un_g = (self.gyro[:, n] - pv.bg[:, n]) @ mn  # C(mis_n)^T u_n
            gyr = {
                "bg0": np.broadcast_to(w_g * m0.T, (k_num, 3, 3)),
                "bgn": np.broadcast_to(-w_g * (rn @ mn.T), (k_num, 3, 3)),
                "dq": -w_g * np.einsum("ij,kjl->kil", rn, skew(un_g)),
            }
            if mis:
                gyr["mis_n"] = w_g * np.einsum("ij,kjl->kil", rn, skew(un_g))
                gyr["mis0"] = -w_g * sk_w
            pieces[("gyro", n)] = gyr
        return pieces

    def _column_starts(self, kind: str, n: int, k: Array) -> dict:
        """Column start index arrays (per k) for each named block column."""
        lay = self.layout
        tb = lay.time_block
        cols = {}
        if kind == "accel":
            cols["alpha"] = k * tb + lay.slot_alpha()
            cols["ba0"] = k * tb + lay.slot_ba(0)
            cols["bg0"] = k * tb + lay.slot_bg(0)
            cols["ban"] = k * tb + lay.slot_ba(n)
            cols["p"] = np.full_like(k, lay.col_p(n))
            cols["dq"] = np.full_like(k, lay.col_dq(n))
            if lay.estimate_misalignment:
                cols["mis0"] = np.full_like(k, lay.col_mis(0))
        elif kind == "gyro":
            cols["bg0"] = k * tb + lay.slot_bg(0)
            cols["bgn"] = k * tb + lay.slot_bg(n)
            cols["dq"] = np.full_like(k, lay.col_dq(n))
            if lay.estimate_misalignment:
                cols["mis_n"] = np.full_like(k, lay.col_mis(n))
                cols["mis0"] = np.full_like(k, lay.col_mis(0))
        else:
            raise ValueError(kind)
        return cols

    def build_jacobian(self, pv: ParameterVector) -> scipy.sparse.csr_matrix:
        """Whitened jacobian as a sparse matrix (rows in canonical order)."""
        pieces = self.jacobian_pieces(pv)
        k_num = self.num_samples
        ks = np.arange(k_num)
        rows_list, cols_list, data_list = [], [], []

        def scatter(row_base: Array, col_base: Array, blocks: Array):
            # row_base/col_base: (K,) starts; blocks: (K, 3, 3)
            r = (row_base[:, None, None] + np.arange(3)[None, :, None] + np.zeros((1, 1, 3), int)).ravel()
            c = (col_base[:, None, None] + np.zeros((1, 3, 1), int) + np.arange(3)[None, None, :]).ravel()
            rows_list.append(r)
            cols_list.append(c)
            data_list.append(np.ascontiguousarray(blocks).ravel())

        for kind in ("accel", "gyro"):
            for n in range(1, self.num_imus):
                row_base = self._row_base(kind, n) + 3 * ks
                col_starts = self._column_starts(kind, n, ks)
                for name, jac in pieces[(kind, n)].items():
                    scatter(row_base, col_starts[name], jac)

        eye = np.eye(3)
        ks_w = np.arange(k_num - 1)
        tb = self.layout.time_block
        for kind, weights, slot in (
            ("walk_accel", self.w_walk_accel, self.layout.slot_ba),
            ("walk_gyro", self.w_walk_gyro, self.layout.slot_bg),
        ):
            for n in range(self.num_imus):
                w = weights[n]
                row_base = self._row_base(kind, n) + 3 * ks_w
                scatter(row_base, ks_w * tb + slot(n), np.broadcast_to(-w * eye, (k_num - 1, 3, 3)))
                scatter(row_base, (ks_w + 1) * tb + slot(n), np.broadcast_to(w * eye, (k_num - 1, 3, 3)))

        if self.options.bias_priors:
            one = np.zeros(1, int)
            for kind, slot in (("prior_ba", self.layout.slot_ba), ("prior_bg", self.layout.slot_bg)):
                for n in range(self.num_imus):
                    scatter(
                        one + self._row_base(kind, n),
                        one + slot(n),
                        np.broadcast_to(self.w_prior * eye, (1, 3, 3)),
                    )

        rows = np.concatenate(rows_list)
        cols = np.concatenate(cols_list)
        data = np.concatenate(data_list)
        mat = scipy.sparse.coo_matrix((data, (rows, cols)), shape=(self.num_rows, self.layout.dim))
        return mat.tocsr()

    def block_jacobian(self, block: ResidualBlock, pv: ParameterVector) -> Array:
        """Dense (3, dim) whitened rows of a single residual block."""
        out = np.zeros((3, self.layout.dim))
        if block.kind in ("accel", "gyro"):
            pieces = self.jacobian_pieces(pv)[(block.kind, block.n)]
            starts = self._column_starts(block.kind, block.n, np.array([block.k]))
            for name, jac in pieces.items():
                c = int(starts[name][0])
                out[:, c:c + 3] = jac[block.k]
        elif block.kind in ("prior_ba", "prior_bg"):
            c = block.columns["b"]
            out[:, c:c + 3] = block.weight * np.eye(3)
        else:
            w = block.weight
            out[:, block.columns["b_prev"]:block.columns["b_prev"] + 3] = -w * np.eye(3)
            out[:, block.columns["b_next"]:block.columns["b_next"] + 3] = w * np.eye(3)
        return out


def assemble(series: MeasurementSeries, options: ProblemOptions | None = None) -> ProblemInstance:
    """Build a ProblemInstance from measurements; validates shapes and noise."""
    options = options or ProblemOptions()
    accel = np.asarray(series.accel, float)
    gyro = np.asarray(series.gyro, float)
    if accel.ndim != 3 or accel.shape[2] != 3 or gyro.shape != accel.shape:
        raise ValueError("accel/gyro must both be (K, N+1, 3)")
    k_num, num_imus, _ = accel.shape
    if num_imus < 2:
        raise ValueError("need at least two IMUs")
    if k_num < 1:
        raise ValueError("empty measurement set")
    if not (np.all(np.isfinite(accel)) and np.all(np.isfinite(gyro))):
        raise ValueError("measurements contain non-finite values")
    noise = list(options.noise) if options.noise is not None else list(series.noise)
    if len(noise) == 1:
        noise = noise * num_imus
    if len(noise) != num_imus:
        raise ValueError(f"need {num_imus} noise specs, got {len(noise)}")
    for spec in noise:
        if abs(spec.dt - series.dt) > 1e-12:
            raise ValueError("noise spec dt differs from series dt")

    w_accel = np.zeros(num_imus)
    w_gyro = np.zeros(num_imus)
    w_walk_accel = np.zeros(num_imus)
    w_walk_gyro = np.zeros(num_imus)
    for n in range(num_imus):
        weights = covariance_weights(noise[n], noise[0], sigma_a_alt=options.sigma_a_alt)
        w_walk_accel[n] = weights.walk_accel_weight
        w_walk_gyro[n] = weights.walk_gyro_weight
        if n >= 1:
            w_accel[n] = weights.accel_weight
            w_gyro[n] = weights.gyro_weight

    layout = ParameterLayout(num_imus, k_num, options.estimate_misalignment)
    return ProblemInstance(
        accel=accel, gyro=gyro, dt=series.dt, noise=noise, options=options, layout=layout,
        w_accel=w_accel, w_gyro=w_gyro, w_walk_accel=w_walk_accel, w_walk_gyro=w_walk_gyro,
    )


def initial_guess(
    series: MeasurementSeries,
    extrinsic_guess: ExtrinsicSet,
    options: ProblemOptions | None = None,
) -> ParameterVector:
    """Initial parameter values: forward-difference angular acceleration from
    the base gyro (repeated at the last sample), zero biases, caller extrinsics."""
    k_num = series.num_samples
    if k_num < 3:
        raise ValueError("need at least 3 samples to difference the base gyro")
    gyro0 = np.asarray(series.gyro, float)[:, 0]
    dt = series.dt
    alpha = np.empty((k_num, 3))
    alpha[:-1] = (gyro0[1:] - gyro0[:-1]) / dt
    alpha[-1] = alpha[-2]
    pv = ParameterVector.from_extrinsics(extrinsic_guess, k_num)
    pv.alpha = alpha
    return pv


def apply_step(pv: ParameterVector, delta: Array, layout: ParameterLayout) -> ParameterVector:
    """Retract a tangent-space step onto the parameters (right quaternion update)."""
    delta = np.asarray(delta, float)
    if delta.shape != (layout.dim,):
        raise ValueError(f"step must have shape ({layout.dim},)")
    out = pv.copy()
    k_num = layout.num_samples
    time_part = delta[: layout.global_offset].reshape(k_num, layout.time_block)
    out.alpha += time_part[:, :3]
    for n in range(layout.num_imus):
        out.ba[:, n] += time_part[:, layout.slot_ba(n):layout.slot_ba(n) + 3]
        out.bg[:, n] += time_part[:, layout.slot_bg(n):layout.slot_bg(n) + 3]
    for n in range(1, layout.num_imus):
        out.p[n - 1] += delta[layout.col_p(n):layout.col_p(n) + 3]
        dq = delta[layout.col_dq(n):layout.col_dq(n) + 3]
        out.q[n - 1] = quat_normalize(quat_multiply(out.q[n - 1], exp_map(dq)))
    if layout.estimate_misalignment:
        for n in range(layout.num_imus):
            dm = delta[layout.col_mis(n):layout.col_mis(n) + 3]
            out.mis[n] = quat_normalize(quat_multiply(out.mis[n], exp_map(dm)))
    return out
