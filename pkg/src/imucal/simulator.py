"""Rigid-body trajectory generation and multi-IMU measurement simulation.

A rig of N+1 IMUs is rigidly attached to a body whose motion is described
in the base IMU frame (IMU 0): linear acceleration a(t), angular rate
w(t), angular acceleration alpha(t) and the gravity direction obtained by
integrating the attitude.  Every other IMU sees the same motion through
the rigid-body relation

    f_n = C(q_n)^T (f_0 + [w]x[w]x p_n + [alpha]x p_n),   w_n = C(q_n)^T w_0,

where f denotes specific force (gravity already subtracted) and (p_n, q_n)
is the pose of IMU n in the base frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imu_model import ImuNoiseSpec, accel_measure, gyro_measure, sample_bias_path
from .so3 import (
    Array,
    QUAT_IDENTITY,
    exp_map,
    quat_multiply,
    quat_normalize,
    rot_from_quat,
)

GRAVITY = 9.81  # [m/s^2], world frame points -z

# bounds of the uniform distribution the first bias sample is drawn from,
# per axis, in native units (m/s^2 for accel, rad/s for gyro)
INITIAL_BIAS_BOUND = 0.05


@dataclass
class Trajectory:
    """Base-IMU motion sampled at a fixed rate (struct of arrays).

    t             (K,)    sample times [s]
    accel_body    (K, 3)  linear acceleration of IMU0 in its own frame [m/s^2]
    omega_body    (K, 3)  angular rate in the IMU0 frame [rad/s]
    alpha_body    (K, 3)  angular acceleration in the IMU0 frame [rad/s^2]
    gravity_body  (K, 3)  gravity vector in the IMU0 frame [m/s^2]
    rot_world_body(K,3,3) attitude, body coords -> world coords
    """

    t: Array
    accel_body: Array
    omega_body: Array
    alpha_body: Array
    gravity_body: Array
    rot_world_body: Array
    dt: float

    @property
    def num_samples(self) -> int:
        return self.t.shape[0]


@dataclass(frozen=True)
class ExcitationProfile:
    """Multi-axis incommensurate sinusoid profile.

    omega_i(t) = omega_amplitude_i * sin(omega_frequency_i * t + omega_phase_i)
    and likewise for the body-frame linear acceleration.
    """

    omega_amplitude: tuple = (3.2, 2.7, 2.4)    # [rad/s]
    omega_frequency: tuple = (1.3, 2.1, 3.4)    # [rad/s]
    omega_phase: tuple = (0.0, 0.8, 1.9)        # [rad]
    accel_amplitude: tuple = (2.5, 2.0, 1.6)    # [m/s^2]
    accel_frequency: tuple = (1.9, 2.9, 4.1)    # [rad/s]
    accel_phase: tuple = (0.4, 1.2, 2.3)        # [rad]


def _num_samples(duration: float, dt: float) -> int:
    if not (math.isfinite(duration) and duration > 0.0):
        raise ValueError(f"duration must be > 0, got {duration}")
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be > 0, got {dt}")
    num = int(round(duration / dt))
    if num < 1:
        raise ValueError("duration shorter than one sample period")
    return num


def _integrate_attitude(omega_of_t, num: int, dt: float, gravity: float) -> tuple[Array, Array]:
    """Integrate q_{k+1} = q_k * exp(w(t_k + dt/2) dt); return gravity in body and R_WB."""
    g_world = np.array([0.0, 0.0, -gravity])
    quats = np.empty((num, 4))
    quats[0] = QUAT_IDENTITY
    for k in range(num - 1):
        step = omega_of_t((k + 0.5) * dt) * dt
        quats[k + 1] = quat_multiply(quats[k], exp_map(step))
    quats = quat_normalize(quats)
    rot = rot_from_quat(quats)  # body -> world
    gravity_body = np.einsum("kji,j->ki", rot, g_world)  # R^T g
    return gravity_body, rot


def make_excitation_trajectory(
    duration: float,
    dt: float,
    profile: ExcitationProfile | None = None,
    gravity: float = GRAVITY,
) -> Trajectory:
    """Sinusoidal excitation trajectory; rejects zero angular amplitude."""
    profile = profile or ExcitationProfile()
    amp = np.asarray(profile.omega_amplitude, float)
    freq = np.asarray(profile.omega_frequency, float)
    phase = np.asarray(profile.omega_phase, float)
    if np.linalg.norm(amp) == 0.0:
        raise ValueError("excitation profile has zero angular amplitude (degenerate motion)")
    a_amp = np.asarray(profile.accel_amplitude, float)
    a_freq = np.asarray(profile.accel_frequency, float)
    a_phase = np.asarray(profile.accel_phase, float)

    num = _num_samples(duration, dt)
    t = np.arange(num) * dt
    omega = amp * np.sin(np.outer(t, freq) + phase)
    alpha = amp * freq * np.cos(np.outer(t, freq) + phase)
    accel = a_amp * np.sin(np.outer(t, a_freq) + a_phase)

    omega_of_t = lambda tk: amp * np.sin(freq * tk + phase)
    gravity_body, rot = _integrate_attitude(omega_of_t, num, dt, gravity)
    return Trajectory(t, accel, omega, alpha, gravity_body, rot, dt)


def make_constant_acceleration_trajectory(
    duration: float,
    dt: float,
    accel: Array = (0.4, -0.2, 0.3),
    gravity: float = GRAVITY,
) -> Trajectory:
    """Pure translation with constant acceleration: a known-degenerate motion."""
    num = _num_samples(duration, dt)
    t = np.arange(num) * dt
    zeros = np.zeros((num, 3))
    accel_body = np.tile(np.asarray(accel, float), (num, 1))
    gravity_body = np.tile([0.0, 0.0, -gravity], (num, 1))
    rot = np.tile(np.eye(3), (num, 1, 1))
    return Trajectory(t, accel_body, zeros, zeros.copy(), gravity_body, rot, dt)


def make_single_axis_rotation_trajectory(
    duration: float,
    dt: float,
    rate: float = 0.8,
    gravity: float = GRAVITY,
) -> Trajectory:
    """Constant-rate rotation about the gravity axis: a known-degenerate motion."""
    num = _num_samples(duration, dt)
    t = np.arange(num) * dt
    omega = np.tile([0.0, 0.0, rate], (num, 1))
    alpha = np.zeros((num, 3))
    accel = np.zeros((num, 3))
    omega_of_t = lambda tk: np.array([0.0, 0.0, rate])
    gravity_body, rot = _integrate_attitude(omega_of_t, num, dt, gravity)
    return Trajectory(t, accel, omega, alpha, gravity_body, rot, dt)


def propagate_rigid_body(traj: Trajectory, p_n: Array, q_n: Array) -> tuple[Array, Array]:
    """True specific force and angular rate seen by an IMU at pose (p_n, q_n).

    Gravity is folded into the base specific force before mapping, so the
    returned (K, 3) acceleration is directly what an ideal accelerometer
    measures.  Colocated sensors (p=0, q=identity) reproduce the base
    kinematics exactly.
    """
    p_n = np.asarray(p_n, float).reshape(3)
    rot = rot_from_quat(q_n)  # frame n -> base coords
    f0 = traj.accel_body - traj.gravity_body
    lever = np.cross(traj.omega_body, np.cross(traj.omega_body, p_n)) + np.cross(traj.alpha_body, p_n)
    f_n = (f0 + lever) @ rot  # row-vector form of C(q_n)^T (...)
    omega_n = traj.omega_body @ rot
    return f_n, omega_n


@dataclass
class ExtrinsicSet:
    """Poses of IMUs 1..N in the base IMU frame plus per-gyro misalignments.

    p    (N, 3)   positions [m]
    q    (N, 4)   orientation quaternions, frame n -> base coords
    mis  (N+1, 4) gyro misalignment quaternions (IMU frame -> gyro frame),
                  index 0 is the base IMU
    """

    p: Array
    q: Array
    mis: Array

    def __post_init__(self) -> None:
        self.p = np.atleast_2d(np.asarray(self.p, float))
        self.q = np.atleast_2d(np.asarray(self.q, float))
        self.mis = np.atleast_2d(np.asarray(self.mis, float))
        n = self.p.shape[0]
        if self.q.shape != (n, 4) or self.p.shape != (n, 3) or self.mis.shape != (n + 1, 4):
            raise ValueError("inconsistent extrinsic array shapes")

    @property
    def num_imus(self) -> int:
        return self.p.shape[0] + 1

    @classmethod
    def identity(cls, num_imus: int) -> "ExtrinsicSet":
        n = num_imus - 1
        if n < 1:
            raise ValueError("need at least two IMUs")
        return cls(
            p=np.zeros((n, 3)),
            q=np.tile(QUAT_IDENTITY, (n, 1)),
            mis=np.tile(QUAT_IDENTITY, (n + 1, 1)),
        )

    def copy(self) -> "ExtrinsicSet":
        return ExtrinsicSet(self.p.copy(), self.q.copy(), self.mis.copy())


def random_unit_vector(rng: np.random.Generator) -> Array:
    """Direction uniform on the sphere."""
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def perturb_extrinsics(
    extrinsics: ExtrinsicSet,
    rng: np.random.Generator,
    position_std_m: float = 0.0,
    orientation_std_rad: float = 0.0,
    fixed_magnitude: bool = False,
    reset_misalignment: bool = True,
) -> ExtrinsicSet:
    """Perturbed copy used to build initial guesses.

    Gaussian style (default): per-axis N(0, position_std_m) position offsets
    and random-axis rotations with angle ~ N(0, orientation_std_rad).
    Fixed style: position offset of exact norm position_std_m along a random
    direction and rotation by exactly orientation_std_rad about a random axis.
    The misalignment guess is reset to identity unless told otherwise.
    """
    out = extrinsics.copy()
    n = out.p.shape[0]
    for i in range(n):
        if fixed_magnitude:
            out.p[i] += position_std_m * random_unit_vector(rng)
            angle = orientation_std_rad
        else:
            out.p[i] += rng.normal(0.0, position_std_m, 3) if position_std_m > 0 else 0.0
            angle = rng.normal(0.0, orientation_std_rad) if orientation_std_rad > 0 else 0.0
        if angle != 0.0:
            axis = random_unit_vector(rng)
            out.q[i] = quat_multiply(out.q[i], exp_map(axis * angle))
    if reset_misalignment:
        out.mis = np.tile(QUAT_IDENTITY, (n + 1, 1))
    return out


def sample_misalignments(num_imus: int, std_rad: float, rng: np.random.Generator) -> Array:
    """Random-axis rotations with angle ~ N(0, std_rad), one per IMU."""
    mis = np.empty((num_imus, 4))
    for i in range(num_imus):
        angle = rng.normal(0.0, std_rad)
        mis[i] = exp_map(random_unit_vector(rng) * angle)
    return mis


@dataclass
class RigScenario:
    """Everything needed to simulate one rig run.

    noise=None selects the noiseless path: no white noise, no bias walk,
    and zero biases unless initial biases are given explicitly.
    When misalignment_sample_std_rad is set, the ground-truth misalignment
    quaternions are drawn per run (random axis, angle ~ N(0, std)) and
    override extrinsics.mis.
    initial_accel_bias / initial_gyro_bias: (N+1, 3) arrays, or None to
    sample each component from U[-0.05, 0.05] (noisy path only).
    """

    extrinsics: ExtrinsicSet
    noise: list[ImuNoiseSpec] | None
    duration: float
    dt: float
    seed: int
    gravity: float = GRAVITY
    initial_accel_bias: Array | None = None
    initial_gyro_bias: Array | None = None
    misalignment_sample_std_rad: float | None = None

    def noise_list(self) -> list[ImuNoiseSpec] | None:
        if self.noise is None:
            return None
        if isinstance(self.noise, ImuNoiseSpec):
            return [self.noise] * self.extrinsics.num_imus
        noise = list(self.noise)
        if len(noise) == 1:
            noise = noise * self.extrinsics.num_imus
        if len(noise) != self.extrinsics.num_imus:
            raise ValueError("need one noise spec per IMU")
        return noise


@dataclass
class MeasurementSeries:
    """Synchronized measurements of all IMUs.

    accel, gyro: (K, N+1, 3); noise: per-IMU specs (used for whitening).
    """

    t: Array
    accel: Array
    gyro: Array
    dt: float
    noise: list[ImuNoiseSpec]

    @property
    def num_samples(self) -> int:
        return self.accel.shape[0]

    @property
    def num_imus(self) -> int:
        return self.accel.shape[1]


@dataclass
class GroundTruthLog:
    """True states recorded during simulation (for metrics only)."""

    extrinsics: ExtrinsicSet
    accel_bias: Array  # (K, N+1, 3)
    gyro_bias: Array   # (K, N+1, 3)
    alpha: Array       # (K, 3)
    seed: int


def simulate(scenario: RigScenario, trajectory: Trajectory | None = None) -> tuple[MeasurementSeries, GroundTruthLog]:
    """Simulate all IMU measurements of a rig along a trajectory.

    The draw order from the single seeded generator is fixed (misalignments,
    initial accel biases, initial gyro biases, per-IMU walk paths, per-IMU
    white noise), so a given seed always produces bit-identical output.
    """
    if trajectory is None:
        trajectory = make_excitation_trajectory(scenario.duration, scenario.dt, gravity=scenario.gravity)
    num = trajectory.num_samples
    num_imus = scenario.extrinsics.num_imus
    noise = scenario.noise_list()
    if noise is not None:
        for spec in noise:
            if abs(spec.dt - trajectory.dt) > 1e-12:
                raise ValueError("noise spec dt differs from trajectory dt")
    rng = np.random.default_rng(scenario.seed)

    truth_ext = scenario.extrinsics.copy()
    if scenario.misalignment_sample_std_rad is not None:
        truth_ext.mis = sample_misalignments(num_imus, scenario.misalignment_sample_std_rad, rng)

    if scenario.initial_accel_bias is not None:
        ba0 = np.asarray(scenario.initial_accel_bias, float).reshape(num_imus, 3)
    elif noise is not None:
        ba0 = rng.uniform(-INITIAL_BIAS_BOUND, INITIAL_BIAS_BOUND, (num_imus, 3))
    else:
        ba0 = np.zeros((num_imus, 3))
    if scenario.initial_gyro_bias is not None:
        bg0 = np.asarray(scenario.initial_gyro_bias, float).reshape(num_imus, 3)
    elif noise is not None:
        bg0 = rng.uniform(-INITIAL_BIAS_BOUND, INITIAL_BIAS_BOUND, (num_imus, 3))
    else:
        bg0 = np.zeros((num_imus, 3))

    accel_bias = np.empty((num, num_imus, 3))
    gyro_bias = np.empty((num, num_imus, 3))
    for n in range(num_imus):
        if noise is None:
            accel_bias[:, n] = ba0[n]
            gyro_bias[:, n] = bg0[n]
        else:
            accel_bias[:, n] = sample_bias_path(noise[n], ba0[n], num, rng, "accel")
            gyro_bias[:, n] = sample_bias_path(noise[n], bg0[n], num, rng, "gyro")

    accel = np.empty((num, num_imus, 3))
    gyro = np.empty((num, num_imus, 3))
    zero3 = np.zeros(3)
    for n in range(num_imus):
        if n == 0:
            f_n = trajectory.accel_body - trajectory.gravity_body
            omega_n = trajectory.omega_body
        else:
            f_n, omega_n = propagate_rigid_body(trajectory, truth_ext.p[n - 1], truth_ext.q[n - 1])
        if noise is None:
            n_a = n_g = zero3
        else:
            n_a = rng.normal(0.0, noise[n].accel_noise_std, (num, 3))
            n_g = rng.normal(0.0, noise[n].gyro_noise_std, (num, 3))
        # gravity is already folded into the specific force, hence g_in_I = 0 here
        accel[:, n] = accel_measure(f_n, zero3, accel_bias[:, n], n_a)
        gyro[:, n] = gyro_measure(omega_n, truth_ext.mis[n], gyro_bias[:, n], n_g)

    series_noise = noise if noise is not None else []
    series = MeasurementSeries(trajectory.t.copy(), accel, gyro, trajectory.dt, series_noise)
    truth = GroundTruthLog(truth_ext, accel_bias, gyro_bias, trajectory.alpha_body.copy(), scenario.seed)
    return series, truth


def reference_noise_spec(dt: float = 0.01) -> ImuNoiseSpec:
    """Consumer-grade MEMS noise densities used throughout the studies."""
    return ImuNoiseSpec(
        sigma_a=2.0e-3,        # [m/s^2/sqrt(Hz)]
        sigma_g=1.6968e-4,     # [rad/s/sqrt(Hz)]
        sigma_ba=3.0e-3,       # [m/s^3/sqrt(Hz)]
        sigma_bg=1.9393e-5,    # [rad/s^2/sqrt(Hz)]
        dt=dt,
    )


def reference_extrinsics(num_imus: int = 4) -> ExtrinsicSet:
    """Reference rig: up to three IMUs at 200 mm along each body axis,
    each flipped half a turn about that same axis."""
    if not 2 <= num_imus <= 4:
        raise ValueError("the reference rig defines between 2 and 4 IMUs")
    n = num_imus - 1
    p = 0.2 * np.eye(3)[:n]
    q = np.zeros((n, 4))
    for i in range(n):
        q[i, i] = 1.0  # half turn about axis i
    mis = np.tile(QUAT_IDENTITY, (num_imus, 1))
    return ExtrinsicSet(p=p, q=q.copy(), mis=mis)
