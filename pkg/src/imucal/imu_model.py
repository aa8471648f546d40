"""Inertial sensor measurement models.

An accelerometer reports specific force (kinematic acceleration minus
gravity, both in the sensor frame) plus a slowly walking bias and white
noise.  A gyroscope reports the body angular rate rotated into its own,
possibly misaligned, sensing frame plus bias and white noise.

Continuous-time noise densities are converted to discrete samples at
period dt: white noise scales with 1/sqrt(dt), the bias random walk
increment with sqrt(dt).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .so3 import Array, rot_from_quat


@dataclass(frozen=True)
class ImuNoiseSpec:
    """Continuous-time noise densities of one IMU, sampled at period dt.

    sigma_a   accelerometer white noise density   [m/s^2/sqrt(Hz)]
    sigma_g   gyroscope white noise density       [rad/s/sqrt(Hz)]
    sigma_ba  accelerometer bias random walk      [m/s^2*sqrt(Hz)]
    sigma_bg  gyroscope bias random walk          [rad/s*sqrt(Hz)]
    dt        sample period                       [s]
    """

    sigma_a: float
    sigma_g: float
    sigma_ba: float
    sigma_bg: float
    dt: float

    def __post_init__(self) -> None:
        # zero densities are allowed (exact noiseless/walk-free sensors);
        # whitening rejects them where a positive variance is required
        for name in ("sigma_a", "sigma_g", "sigma_ba", "sigma_bg"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"ImuNoiseSpec.{name} must be finite and >= 0, got {value}")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"ImuNoiseSpec.dt must be finite and > 0, got {self.dt}")

    # discrete-time standard deviations
    @property
    def accel_noise_std(self) -> float:
        return self.sigma_a / math.sqrt(self.dt)

    @property
    def gyro_noise_std(self) -> float:
        return self.sigma_g / math.sqrt(self.dt)

    @property
    def accel_walk_std(self) -> float:
        return self.sigma_ba * math.sqrt(self.dt)

    @property
    def gyro_walk_std(self) -> float:
        return self.sigma_bg * math.sqrt(self.dt)

    def to_dict(self) -> dict:
        return {
            "sigma_a": self.sigma_a,
            "sigma_g": self.sigma_g,
            "sigma_ba": self.sigma_ba,
            "sigma_bg": self.sigma_bg,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImuNoiseSpec":
        return cls(**{k: float(d[k]) for k in ("sigma_a", "sigma_g", "sigma_ba", "sigma_bg", "dt")})


def accel_measure(a_WI: Array, g_in_I: Array, bias: Array, noise: Array) -> Array:
    """Accelerometer reading: a_WI - g_in_I + bias + noise.

    All inputs are (..., 3) in the IMU frame; g_in_I is the gravity vector
    expressed in that frame (a resting IMU with z up reads [0, 0, +9.81]).
    """
    return np.asarray(a_WI, float) - np.asarray(g_in_I, float) + np.asarray(bias, float) + np.asarray(noise, float)


def gyro_measure(omega_WI: Array, misalign_q: Array, bias: Array, noise: Array) -> Array:
    """Gyroscope reading: C(misalign_q) @ omega_WI + bias + noise.

    misalign_q maps IMU-frame coordinates into the gyro sensing frame;
    omega_WI is (..., 3) in the IMU frame.
    """
    rot = rot_from_quat(misalign_q)
    rotated = np.asarray(omega_WI, float) @ rot.T
    return rotated + np.asarray(bias, float) + np.asarray(noise, float)


def sample_noise(spec: ImuNoiseSpec, rng: np.random.Generator, size=None) -> tuple[Array, Array]:
    """Draw (accel, gyro) white-noise samples with std sigma/sqrt(dt).

    size=None gives a pair of (3,) vectors; otherwise arrays of shape size + (3,).
    """
    shape = (3,) if size is None else tuple(np.atleast_1d(size)) + (3,)
    n_a = rng.normal(0.0, spec.accel_noise_std, shape)
    n_g = rng.normal(0.0, spec.gyro_noise_std, shape)
    return n_a, n_g


def step_bias(spec: ImuNoiseSpec, bias: Array, rng: np.random.Generator, which: str) -> Array:
    """One random-walk step b_{k+1} = b_k + sigma_b * sqrt(dt) * N(0, 1)."""
    if which == "accel":
        std = spec.accel_walk_std
    elif which == "gyro":
        std = spec.gyro_walk_std
    else:
        raise ValueError(f"which must be 'accel' or 'gyro', got {which!r}")
    bias = np.asarray(bias, dtype=float)
    return bias + rng.normal(0.0, std, bias.shape)


def sample_bias_path(spec: ImuNoiseSpec, initial: Array, num_samples: int, rng: np.random.Generator, which: str) -> Array:
    """Full random-walk path (num_samples, 3) starting at `initial`."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if which == "accel":
        std = spec.accel_walk_std
    elif which == "gyro":
        std = spec.gyro_walk_std
    else:
        raise ValueError(f"which must be 'accel' or 'gyro', got {which!r}")
    initial = np.asarray(initial, dtype=float)
    steps = rng.normal(0.0, std, (num_samples - 1,) + initial.shape)
    path = np.empty((num_samples,) + initial.shape)
    path[0] = initial
    path[1:] = initial + np.cumsum(steps, axis=0)
    return path
